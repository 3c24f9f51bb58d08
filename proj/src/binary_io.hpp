#pragma once

// Little-endian field readers/writers shared by the dataset and checkpoint
// formats. Values are serialized byte by byte so the files are identical on
// any host.

#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>

#include "ulns/error.hpp"

namespace ulns::detail {

class LeWriter {
public:
    explicit LeWriter(const std::filesystem::path& path)
        : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
        if (!out_) throw Error(ErrorKind::IoError, "cannot open " + path.string() + " for writing");
    }

    void magic(std::string_view tag) { out_.write(tag.data(), static_cast<std::streamsize>(tag.size())); }

    void u32(std::uint32_t v) { put(v, 4); }
    void u64(std::uint64_t v) { put(v, 8); }
    void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }

    void finish() {
        out_.flush();
        if (!out_) throw Error(ErrorKind::IoError, "write failed for " + path_.string());
    }

private:
    void put(std::uint64_t v, int bytes) {
        std::array<char, 8> buf{};
        for (int i = 0; i < bytes; ++i) buf[static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xFF);
        out_.write(buf.data(), bytes);
    }

    std::filesystem::path path_;
    std::ofstream out_;
};

class LeReader {
public:
    explicit LeReader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
        if (!in_) throw Error(ErrorKind::IoError, "cannot open " + path.string());
    }

    void expect_magic(std::string_view tag) {
        std::string got(tag.size(), '\0');
        in_.read(got.data(), static_cast<std::streamsize>(got.size()));
        if (!in_ || got != tag)
            throw Error(ErrorKind::IoError, path_.string() + ": bad magic, expected " + std::string(tag));
    }

    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
    std::uint64_t u64() { return get(8); }
    double f64() { return std::bit_cast<double>(get(8)); }

    /// True once every byte has been consumed.
    bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

    const std::filesystem::path& path() const noexcept { return path_; }

private:
    std::uint64_t get(int bytes) {
        std::array<unsigned char, 8> buf{};
        in_.read(reinterpret_cast<char*>(buf.data()), bytes);
        if (!in_) throw Error(ErrorKind::IoError, path_.string() + ": truncated file");
        std::uint64_t v = 0;
        for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(buf[static_cast<std::size_t>(i)]) << (8 * i);
        return v;
    }

    std::filesystem::path path_;
    std::ifstream in_;
};

}  // namespace ulns::detail
