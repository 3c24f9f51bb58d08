#include "ulns/cli.hpp"

int main(int argc, char** argv) { return ulns::cli::run(argc, argv); }
