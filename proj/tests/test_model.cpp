#include <doctest.h>

#include <cmath>
#include <fstream>

#include "support.hpp"
#include "ulns/error.hpp"
#include "ulns/synthdata.hpp"

using namespace ulns;

namespace {

// Straight-line forward pass used as an oracle.
Matrix naive_logits(const MlpModel& m, const Matrix& x, Matrix* feats = nullptr) {
    Matrix out(x.rows(), m.class_count());
    Matrix f;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        std::vector<double> a(x.row(i).begin(), x.row(i).end());
        for (const auto& layer : m.hidden) {
            std::vector<double> z(layer.weight.rows());
            for (std::size_t o = 0; o < z.size(); ++o) {
                double s = layer.bias[o];
                for (std::size_t j = 0; j < a.size(); ++j) s += layer.weight(o, j) * a[j];
                z[o] = s > 0.0 ? s : 0.0;
            }
            a = z;
        }
        if (feats) {
            if (f.empty()) f = Matrix(x.rows(), a.size());
            for (std::size_t j = 0; j < a.size(); ++j) f(i, j) = a[j];
        }
        for (std::size_t c = 0; c < m.class_count(); ++c) {
            double s = m.head.bias[c];
            for (std::size_t j = 0; j < a.size(); ++j) s += m.head.weight(c, j) * a[j];
            out(i, c) = s;
        }
    }
    if (feats) *feats = f;
    return out;
}

MlpModel random_model(std::uint64_t seed, std::size_t d_in = 5, int k = 4) {
    std::vector<std::size_t> hidden{7, 6};
    MlpModel m = make_mlp(d_in, hidden, static_cast<std::size_t>(k), seed);
    Rng rng(seed + 1);
    for (auto& v : parameter_views(m))
        for (double& x : v.values) x += 0.1 * rng.normal();  // non-zero biases too
    return m;
}

}  // namespace

TEST_CASE("default architecture") {
    MlpModel m = make_default_mlp(32, 10, 0);
    REQUIRE(m.hidden.size() == 2);
    CHECK(m.hidden[0].weight.rows() == 64);
    CHECK(m.hidden[1].weight.rows() == 32);
    CHECK(m.feature_dim() == 32);
    CHECK(m.class_count() == 10);
    CHECK(parameter_count(m) == 32 * 64 + 64 + 64 * 32 + 32 + 32 * 10 + 10);
    CHECK(make_default_mlp(32, 10, 0) == m);
}

TEST_CASE("zero model gives zero logits") {
    MlpModel m = zeros_like(make_default_mlp(4, 3, 1));
    Rng rng(2);
    auto fr = forward(m, test::random_matrix(5, 4, rng));
    for (double v : fr.logits.flat()) CHECK(v == 0.0);
}

TEST_CASE("identity layer with relu passes nonnegative input through") {
    MlpModel m;
    m.hidden.push_back({Matrix::from_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}), {0, 0, 0}});
    m.head = {Matrix(2, 3), {0, 0}};
    Matrix x = Matrix::from_rows({{0.5, 2, 0}, {3, 0.25, 7}});
    CHECK(forward(m, x).features == x);
}

TEST_CASE("forward matches a straight-line oracle") {
    MlpModel m = random_model(21);
    Rng rng(22);
    Matrix x = test::random_matrix(9, 5, rng);
    Matrix feats;
    Matrix ref = naive_logits(m, x, &feats);
    auto fr = forward(m, x);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(fr.logits.flat()[i] - ref.flat()[i]) <= 1e-12);
    for (std::size_t i = 0; i < feats.size(); ++i) CHECK(std::abs(fr.features.flat()[i] - feats.flat()[i]) <= 1e-12);
    CHECK_THROWS_AS(forward(m, test::random_matrix(2, 4, rng)), Error);
}

TEST_CASE("cross-entropy values") {
    Matrix uniform(3, 5);
    std::vector<int> y{0, 2, 4};
    CHECK(cross_entropy(uniform, y, nullptr) == doctest::Approx(std::log(5.0)).epsilon(1e-15));
    Matrix sure = Matrix::from_rows({{50, 0, 0}});
    CHECK(cross_entropy(sure, std::vector<int>{0}, nullptr) < 1e-20);
    CHECK_THROWS_AS(cross_entropy(uniform, std::vector<int>{0, 1, 5}, nullptr), Error);
    CHECK_THROWS_AS(cross_entropy(uniform, std::vector<int>{0, 1, -1}, nullptr), Error);
    CHECK_THROWS_AS(cross_entropy(uniform, std::vector<int>{0, 1}, nullptr), Error);
}

TEST_CASE("uniform logits plus weight decay") {
    MlpModel m = zeros_like(make_default_mlp(3, 4, 0));
    m.head.bias = {1, 1, 1, 1};  // logits uniform, decay sees the biases
    Rng rng(1);
    Matrix x = test::random_matrix(6, 3, rng);
    auto lg = ce_loss_and_grads(m, x, std::vector<int>{0, 1, 2, 3, 0, 1}, 0.1);
    CHECK(lg.loss == doctest::Approx(std::log(4.0) + 0.05 * 4).epsilon(1e-14));
}

TEST_CASE("cross-entropy gradients match finite differences for every parameter") {
    MlpModel m = random_model(31);
    Rng rng(32);
    Matrix x = test::random_matrix(8, 5, rng);
    auto y = test::random_labels(8, 4, rng);
    for (double wd : {0.0, 0.05}) {
        auto lg = ce_loss_and_grads(m, x, y, wd);
        double err = test::model_grad_error(m, [&](const MlpModel& p) { return ce_loss_and_grads(p, x, y, wd).loss; },
                                            lg.grads);
        CHECK(err <= 1e-5);
    }
}

TEST_CASE("input gradient of backward") {
    MlpModel m = random_model(41);
    Rng rng(42);
    Matrix x = test::random_matrix(4, 5, rng);
    auto y = test::random_labels(4, 4, rng);
    auto cache = forward_cached(m, x);
    Matrix dlogits, dx;
    cross_entropy(cache.logits, y, &dlogits);
    backward(m, cache, dlogits, &dx);
    auto f = [&](const Matrix& xi) { return cross_entropy(forward(m, xi).logits, y, nullptr); };
    CHECK(grad_check(f, x, dx, 1e-5) <= 1e-5);
}

TEST_CASE("training on separable blobs") {
    GaussianMixtureParams p{3, 100, 8, 6.0, 1.0, 4};
    auto data = make_gaussian_mixture(p);
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.seed = 4;
    auto res = train(make_default_mlp(8, 3, 4), data.train, cfg);
    auto logits = forward(res.model, data.train.inputs).logits;
    CHECK(output_accuracy(logits, data.train.labels) >= 99.0);
    CHECK(res.history.size() == 50);
    CHECK(res.epochs_run == 50);

    auto again = train(make_default_mlp(8, 3, 4), data.train, cfg);
    CHECK(again.model == res.model);
}

TEST_CASE("zero learning rate leaves parameters bit-identical") {
    auto ds = test::cyclic_dataset(40, 5, 3, 7);
    MlpModel m = random_model(8, 5, 3);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.learning_rate = 0.0;
    CHECK(train(m, ds, cfg).model == m);
}

TEST_CASE("classifier-only scope never touches hidden layers") {
    auto ds = test::cyclic_dataset(40, 5, 3, 9);
    MlpModel m = random_model(10, 5, 3);
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.learning_rate = 0.1;
    TrainOptions opt;
    opt.scope = TrainScope::classifier_only;
    auto res = train(m, ds, cfg, opt);
    CHECK(res.model.hidden == m.hidden);
    CHECK_FALSE(res.model.head == m.head);
}

TEST_CASE("full-batch descent is monotone at a small step") {
    auto ds = test::cyclic_dataset(30, 5, 3, 11);
    MlpModel m = random_model(12, 5, 3);
    SgdOptimizer opt(m, {1e-3, 0.0, std::nullopt, TrainScope::full});
    double prev = ce_loss_and_grads(m, ds.inputs, ds.labels).loss;
    for (int step = 0; step < 100; ++step) {
        auto lg = ce_loss_and_grads(m, ds.inputs, ds.labels);
        opt.step(m, lg.grads);
        double cur = ce_loss_and_grads(m, ds.inputs, ds.labels).loss;
        CHECK(cur <= prev);
        prev = cur;
    }
}

TEST_CASE("divergence is reported with the epoch") {
    auto ds = test::cyclic_dataset(30, 5, 3, 13);
    for (double& v : ds.inputs.flat()) v *= 1e3;
    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.learning_rate = 1e6;
    cfg.momentum = 0.0;
    try {
        train(random_model(14, 5, 3), ds, cfg);
        FAIL("expected TrainingDiverged");
    } catch (const IndexedError& e) {
        CHECK(e.kind() == ErrorKind::TrainingDiverged);
        CHECK(e.index() >= 1);
    }
}

TEST_CASE("train config validation") {
    TrainConfig cfg;
    cfg.epochs = 0;
    CHECK_THROWS_AS(cfg.check(), Error);
    cfg = {};
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.check(), Error);
    cfg = {};
    cfg.learning_rate = -1;
    CHECK_THROWS_AS(cfg.check(), Error);
    cfg = {};
    cfg.weight_decay = -1;
    CHECK_THROWS_AS(cfg.check(), Error);
}

TEST_CASE("early stopping halts on a stalled validation loss") {
    GaussianMixtureParams p{3, 60, 6, 3.0, 1.0, 15};
    auto data = make_gaussian_mixture(p);
    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.learning_rate = 0.05;
    cfg.early_stop_patience = 2;
    TrainOptions opt;
    opt.validation = &data.test;
    auto res = train(make_default_mlp(6, 3, 15), data.train, cfg, opt);
    CHECK(res.epochs_run < 200);
    CHECK(res.history.size() == static_cast<std::size_t>(res.epochs_run));
}

TEST_CASE("extract_features agrees with forward and is deterministic") {
    MlpModel m = random_model(16);
    auto ds = test::cyclic_dataset(10, 5, 4, 17);
    auto fs = extract_features(m, ds);
    CHECK(fs.features == forward(m, ds.inputs).features);
    CHECK(fs.labels == ds.labels);
    CHECK(extract_features(m, ds).features == fs.features);
}

TEST_CASE("argmax ties go to the lowest index") {
    Matrix s = Matrix::from_rows({{1, 3, 3}, {2, 2, 2}, {0, -1, 5}});
    CHECK(argmax_rows(s) == std::vector<int>{1, 0, 2});
    CHECK(output_accuracy(s, std::vector<int>{1, 0, 0}) == doctest::Approx(200.0 / 3));
    CHECK(output_accuracy(s, std::vector<int>{1, 0, 0}, [](int y) { return y == 0; }) == 50.0);
}

TEST_CASE("gradient clipping and masking") {
    MlpModel g = zeros_like(make_default_mlp(2, 2, 0));
    g.head.weight(0, 0) = 3.0;
    g.hidden[0].weight(0, 0) = 4.0;
    CHECK(clip_global_norm(g, 1.0, TrainScope::full) == doctest::Approx(5.0));
    CHECK(g.head.weight(0, 0) == doctest::Approx(0.6));
    CHECK(g.hidden[0].weight(0, 0) == doctest::Approx(0.8));

    MlpModel m = make_default_mlp(2, 2, 1);
    MlpModel before = m;
    SgdOptimizer opt(m, {0.5, 0.0, std::nullopt, TrainScope::full});
    ParameterMask mask;
    for (const auto& v : parameter_views(m)) mask.tensors.emplace_back(v.values.size(), 0);
    mask.tensors.back()[1] = 1;  // second head bias only
    opt.set_mask(mask);
    MlpModel grads = zeros_like(m);
    for (auto& v : parameter_views(grads))
        for (double& x : v.values) x = 1.0;
    opt.step(m, grads);
    CHECK(m.hidden == before.hidden);
    CHECK(m.head.weight == before.head.weight);
    CHECK(m.head.bias[0] == before.head.bias[0]);
    CHECK(m.head.bias[1] == before.head.bias[1] - 0.5);
}

TEST_CASE("checkpoint round trip") {
    auto dir = test::scratch_dir("ckpt");
    MlpModel m = random_model(18);
    write_checkpoint(m, dir / "m.bin");
    CHECK(read_checkpoint(dir / "m.bin") == m);
    std::ifstream in(dir / "m.bin", std::ios::binary);
    char magic[4];
    in.read(magic, 4);
    CHECK(std::string(magic, 4) == "ULNM");
    std::ofstream(dir / "bad.bin") << "ULNMxxxx";
    CHECK_THROWS_AS(read_checkpoint(dir / "bad.bin"), Error);
}
