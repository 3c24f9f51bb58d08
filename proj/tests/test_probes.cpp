#include <doctest.h>

#include <cmath>
#include <fstream>

#include "support.hpp"
#include "ulns/error.hpp"
#include "ulns/probes.hpp"
#include "ulns/synthdata.hpp"

using namespace ulns;

namespace {

// Batch perceptron: returns true once every sample is classified with a
// positive margin, which certifies linear separability of the fixture.
bool perceptron_separates(const FeatureSet& fs, int k) {
    const std::size_t d = fs.features.cols();
    Matrix w(static_cast<std::size_t>(k), d + 1);
    for (int epoch = 0; epoch < 1000; ++epoch) {
        bool clean = true;
        for (std::size_t i = 0; i < fs.size(); ++i) {
            std::vector<double> x(fs.features.row(i).begin(), fs.features.row(i).end());
            x.push_back(1.0);
            const auto y = static_cast<std::size_t>(fs.labels[i]);
            std::size_t best = y;
            double best_s = -1e300;
            for (std::size_t c = 0; c < static_cast<std::size_t>(k); ++c) {
                if (c == y) continue;
                double s = dot(w.row(c), x);
                if (s > best_s) {
                    best_s = s;
                    best = c;
                }
            }
            if (dot(w.row(y), x) <= best_s) {
                clean = false;
                for (std::size_t j = 0; j <= d; ++j) {
                    w(y, j) += x[j];
                    w(best, j) -= x[j];
                }
            }
        }
        if (clean) return true;
    }
    return false;
}

FeatureSet blobs(std::size_t per_class, int k, double scale, std::uint64_t seed) {
    GaussianMixtureParams p{k, per_class, 6, scale, 1.0, seed};
    Dataset ds = make_gaussian_mixture(p).train;
    return {ds.inputs, ds.labels};
}

}  // namespace

TEST_CASE("probe separates separable features") {
    FeatureSet fs = blobs(40, 4, 12.0, 1);
    REQUIRE(perceptron_separates(fs, 4));
    LinearHead h = train_linear_probe(fs, 4);
    CHECK(output_accuracy(head_logits(h, fs.features), fs.labels) == 100.0);
}

TEST_CASE("probe on zero features predicts the plurality class") {
    FeatureSet fs{Matrix(10, 3), {2, 2, 2, 2, 0, 0, 1, 1, 1, 0}};
    LinearHead h = train_linear_probe(fs, 3);
    auto pred = argmax_rows(head_logits(h, fs.features));
    for (int p : pred) CHECK(p == 2);
    CHECK(output_accuracy(head_logits(h, fs.features), fs.labels) == 40.0);
}

TEST_CASE("probe is deterministic and converges") {
    FeatureSet fs = blobs(30, 3, 2.0, 2);
    LinearHead a = train_linear_probe(fs, 3);
    LinearHead b = train_linear_probe(fs, 3);
    CHECK(a == b);
    // stationarity of the regularised objective
    ProbeConfig cfg;
    Matrix z = head_logits(a, fs.features);
    Matrix dz;
    cross_entropy(z, fs.labels, &dz);
    Matrix gw = matmul_at(dz, fs.features);
    double g2 = 0.0;
    for (std::size_t i = 0; i < gw.size(); ++i) {
        const double g = gw.flat()[i] + cfg.l2 * a.weight.flat()[i];
        g2 += g * g;
    }
    for (std::size_t c = 0; c < 3; ++c) {
        double gb = 0.0;
        for (std::size_t i = 0; i < dz.rows(); ++i) gb += dz(i, c);
        g2 += gb * gb;
    }
    CHECK(std::sqrt(g2) <= 1e-6);
}

TEST_CASE("probe requires every class") {
    FeatureSet fs{Matrix(3, 2), {0, 0, 2}};
    CHECK_THROWS_AS(train_linear_probe(fs, 3), Error);
}

TEST_CASE("evaluate with a zeroed head") {
    GaussianMixtureParams p{3, 40, 6, 6.0, 1.0, 3};
    auto data = make_gaussian_mixture(p);
    TrainConfig cfg;
    cfg.epochs = 10;
    MlpModel m = train(make_default_mlp(6, 3, 3), data.train, cfg).model;
    SplitSpec spec = make_split_spec(3, std::vector<int>{0});
    EvalReport full = evaluate_with_probe(m, data.train, data.test, spec);

    MlpModel zeroed = m;
    zeroed.head.weight = Matrix(3, 32);
    zeroed.head.bias.assign(3, 0.0);
    EvalReport z = evaluate_with_probe(zeroed, data.train, data.test, spec);
    // every logit ties, so class 0 is predicted everywhere
    CHECK(z.output_forget == 100.0);
    CHECK(z.output_retain == 0.0);
    CHECK(z.probe_retain == full.probe_retain);
    CHECK(z.probe_forget == full.probe_forget);
    CHECK(z.ncc_retain == full.ncc_retain);
    CHECK(z.ncc_forget == full.ncc_forget);
    CHECK(std::isnan(z.nc3_forget_mean));

    // NCC through evaluate equals the geometry call
    ClassMeans cm = class_means(extract_features(m, data.train), 3);
    FeatureSet test_fs = extract_features(m, data.test);
    CHECK(full.ncc_retain == ncc_accuracy(test_fs, cm, spec.retain_classes));
    CHECK(full.ncc_forget == ncc_accuracy(test_fs, cm, spec.forget_classes));
    for (double v : {full.output_retain, full.output_forget, full.probe_retain, full.probe_forget, full.ncc_retain,
                     full.ncc_forget}) {
        CHECK(v >= 0.0);
        CHECK(v <= 100.0);
    }
    CHECK(full.nc3_forget_mean >= 0.0);
    CHECK(full.nc3_forget_mean <= 2.0);

    CHECK_THROWS_AS(evaluate(m, data.train, data.test, make_split_spec(4, std::vector<int>{0}),
                             train_linear_probe(extract_features(m, data.train), 3)),
                    Error);
}

TEST_CASE("report JSON round trip") {
    auto dir = test::scratch_dir("report");
    EvalReport r;
    r.output_retain = 98.123456789;
    r.output_forget = 0.25;
    r.probe_retain = 97.0;
    r.probe_forget = 96.5;
    r.ncc_retain = 95.0;
    r.ncc_forget = 94.0;
    r.nc3_forget_mean = 1.234;
    r.nc3_retain_mean = 0.3;
    r.nc1 = 0.01;
    r.method_name = "random_label";
    r.scope = "classifier_only";
    r.cmf_flag = true;
    r.seed = 123456789012345ULL;
    write_report(r, dir / "r.json");
    CHECK(read_report(dir / "r.json") == r);

    auto j = nlohmann::json::parse(std::ifstream(dir / "r.json"));
    for (const char* key : {"output_retain", "output_forget", "probe_retain", "probe_forget", "ncc_retain",
                            "ncc_forget", "nc3_forget_mean", "nc3_retain_mean", "nc1", "method_name", "scope",
                            "cmf_flag", "seed"})
        CHECK(j.contains(key));
    CHECK(j.size() == 13);

    r.nc1 = std::nan("");
    write_report(r, dir / "nan.json");
    CHECK(nlohmann::json::parse(std::ifstream(dir / "nan.json"))["nc1"].is_null());
    CHECK(std::isnan(read_report(dir / "nan.json").nc1));
}

TEST_CASE("feature export round trip") {
    auto dir = test::scratch_dir("features");
    MlpModel m = make_default_mlp(4, 3, 5);
    Dataset ds = test::cyclic_dataset(17, 4, 3, 6);
    export_features(m, ds, dir / "f.csv");
    FeatureSet back = read_features_csv(dir / "f.csv");
    FeatureSet ref = extract_features(m, ds);
    REQUIRE(back.size() == 17);
    CHECK(back.labels == ref.labels);
    for (std::size_t i = 0; i < ref.features.size(); ++i)
        CHECK(std::abs(back.features.flat()[i] - ref.features.flat()[i]) <= 1e-9);
    std::ifstream in(dir / "f.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header.rfind("f0,f1,", 0) == 0);
    CHECK(header.substr(header.size() - 6) == ",label");
    CHECK_THROWS_AS(export_features(m, ds, dir / "no" / "such" / "dir" / "f.csv"), Error);
}
