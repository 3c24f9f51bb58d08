#include <doctest.h>

#include <cmath>
#include <limits>

#include "support.hpp"
#include "ulns/error.hpp"
#include "ulns/geometry.hpp"

using namespace ulns;

namespace {

FeatureSet random_features(std::size_t n, std::size_t d, int k, std::uint64_t seed) {
    Rng rng(seed);
    FeatureSet fs;
    fs.features = test::random_matrix(n, d, rng);
    fs.labels = test::random_labels(n, k, rng);
    for (int c = 0; c < k; ++c) fs.labels[static_cast<std::size_t>(c)] = c;  // every class present
    return fs;
}

void check_etf(const EtfFrame& etf) {
    const std::size_t k = etf.classes();
    for (std::size_t i = 0; i < k; ++i) {
        CHECK(std::abs(norm(etf.directions.row(i)) - 1.0) <= 1e-12);
        for (std::size_t j = 0; j < k; ++j)
            if (i != j)
                CHECK(std::abs(dot(etf.directions.row(i), etf.directions.row(j)) + 1.0 / static_cast<double>(k - 1)) <=
                      1e-10);
    }
    for (std::size_t c = 0; c < etf.dim(); ++c) {
        double s = 0.0;
        for (std::size_t i = 0; i < k; ++i) s += etf.directions(i, c);
        CHECK(std::abs(s) <= 1e-10);
    }
}

// Orthogonal d x d matrix from a seeded Gaussian.
Matrix random_rotation(std::size_t d, std::uint64_t seed) {
    Rng rng(seed);
    return orthonormal_columns(test::random_matrix(d, d, rng));
}

}  // namespace

TEST_CASE("class means against a double-loop oracle") {
    FeatureSet fs = random_features(57, 6, 5, 1);
    ClassMeans cm = class_means(fs, 5);
    for (int c = 0; c < 5; ++c) {
        std::vector<double> acc(6, 0.0);
        std::size_t n = 0;
        for (std::size_t i = 0; i < fs.size(); ++i)
            if (fs.labels[i] == c) {
                ++n;
                for (std::size_t j = 0; j < 6; ++j) acc[j] += fs.features(i, j);
            }
        CHECK(cm.counts[static_cast<std::size_t>(c)] == n);
        for (std::size_t j = 0; j < 6; ++j) CHECK(std::abs(cm.mu(static_cast<std::size_t>(c), j) - acc[j] / n) <= 1e-12);
    }
    for (std::size_t j = 0; j < 6; ++j) {
        double g = 0.0;
        for (std::size_t c = 0; c < 5; ++c) g += cm.mu(c, j);
        CHECK(std::abs(cm.mu_global[j] - g / 5.0) <= 1e-12);
    }
    // centred means sum to zero
    for (std::size_t j = 0; j < 6; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < 5; ++c) s += cm.mu(c, j) - cm.mu_global[j];
        CHECK(std::abs(s) <= 1e-12 * 5 * (1.0 + frobenius_norm(cm.mu)));
    }
}

TEST_CASE("class means small fixtures") {
    FeatureSet sym{Matrix::from_rows({{1, 2}, {-1, -2}, {3, 0}, {-3, 0}}), {0, 0, 1, 1}};
    ClassMeans a = class_means(sym, 2);
    for (double v : a.mu.flat()) CHECK(v == 0.0);
    CHECK(a.mu_global == std::vector<double>{0.0, 0.0});

    FeatureSet single{Matrix::from_rows({{1, 2}, {5, 7}}), {1, 0}};
    ClassMeans b = class_means(single, 2);
    CHECK(b.mu == Matrix::from_rows({{5, 7}, {1, 2}}));

    FeatureSet missing{Matrix::from_rows({{1, 2}, {5, 7}}), {0, 0}};
    try {
        class_means(missing, 2);
        FAIL("expected MissingClass");
    } catch (const IndexedError& e) {
        CHECK(e.kind() == ErrorKind::MissingClass);
        CHECK(e.index() == 1);
    }
}

TEST_CASE("class means are unweighted across classes") {
    FeatureSet fs{Matrix::from_rows({{0.0}, {0.0}, {0.0}, {4.0}}), {0, 0, 0, 1}};
    CHECK(class_means(fs, 2).mu_global[0] == 2.0);
}

TEST_CASE("simplex ETF Gram invariant") {
    SUBCASE("K=2") {
        EtfFrame e = simplex_etf(2, 1);
        check_etf(e);
        CHECK(cosine(e.directions.row(0), e.directions.row(1)) == doctest::Approx(-1.0).epsilon(1e-15));
    }
    SUBCASE("K=4 minimal dim") { check_etf(simplex_etf(4, 3)); }
    SUBCASE("K=10, d=32") { check_etf(simplex_etf(10, 32)); }
    SUBCASE("K=3 up to d=32 for several seeds") {
        for (std::uint64_t s = 0; s < 5; ++s) check_etf(simplex_etf(3, 2 + 6 * s, s));
    }
    CHECK_THROWS_AS(simplex_etf(5, 3), Error);
    CHECK_THROWS_AS(simplex_etf(1, 3), Error);
    CHECK(simplex_etf(6, 9, 4).directions == simplex_etf(6, 9, 4).directions);
}

TEST_CASE("NC1 ratio") {
    SUBCASE("collapsed features") {
        FeatureSet fs{Matrix::from_rows({{1, 1}, {1, 1}, {-1, 0}, {-1, 0}}), {0, 0, 1, 1}};
        CHECK(nc1_ratio(fs, class_means(fs, 2)) == 0.0);
    }
    SUBCASE("within scatter equals between scatter") {
        // class 0 at {-2, 0} (mean -1), class 1 at {0, 2} (mean 1)
        FeatureSet fs{Matrix::from_rows({{-2, 0}, {0, 0}, {0, 0}, {2, 0}}), {0, 0, 1, 1}};
        CHECK(nc1_ratio(fs, class_means(fs, 2)) == doctest::Approx(1.0).epsilon(1e-15));
    }
    SUBCASE("coincident means") {
        FeatureSet fs{Matrix::from_rows({{1, 0}, {-1, 0}, {1, 0}, {-1, 0}}), {0, 0, 1, 1}};
        CHECK_THROWS_AS(nc1_ratio(fs, class_means(fs, 2)), Error);
    }
}

TEST_CASE("NC3 golden cases") {
    // centred means of this fixture are (0,1) and (0,-1)
    FeatureSet fs{Matrix::from_rows({{0, 2}, {0, 0}}), {0, 1}};
    ClassMeans cm = class_means(fs, 2);
    LinearHead aligned{Matrix::from_rows({{0, 3}, {0, -0.5}}), {0, 0}};
    LinearHead flipped{Matrix::from_rows({{0, -3}, {0, 0.5}}), {0, 0}};
    LinearHead orthogonal{Matrix::from_rows({{1, 0}, {0, -1}}), {0, 0}};
    auto a = nc3_per_class(aligned, cm);
    auto f = nc3_per_class(flipped, cm);
    auto o = nc3_per_class(orthogonal, cm);
    CHECK(a[0] == 0.0);
    CHECK(a[1] == 0.0);
    CHECK(f[0] == 2.0);
    CHECK(f[1] == 2.0);
    CHECK(o[0] == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
    CHECK(o[1] == 0.0);

    LinearHead zero{Matrix::from_rows({{0, 1}, {0, 0}}), {0, 0}};
    try {
        nc3_per_class(zero, cm);
        FAIL("expected DegenerateGeometry");
    } catch (const IndexedError& e) {
        CHECK(e.kind() == ErrorKind::DegenerateGeometry);
        CHECK(e.index() == 1);
    }
}

TEST_CASE("NC3 range and positive-scale invariance") {
    FeatureSet fs = random_features(40, 5, 4, 2);
    ClassMeans cm = class_means(fs, 4);
    Rng rng(3);
    for (int t = 0; t < 20; ++t) {
        LinearHead h{test::random_matrix(4, 5, rng), {0, 0, 0, 0}};
        auto base = nc3_per_class(h, cm);
        LinearHead scaled = h;
        for (std::size_t c = 0; c < 4; ++c) {
            const double s = std::exp(3.0 * rng.normal());
            for (double& v : scaled.weight.row(c)) v *= s;
        }
        auto sc = nc3_per_class(scaled, cm);
        for (std::size_t c = 0; c < 4; ++c) {
            CHECK(base[c] >= 0.0);
            CHECK(base[c] <= 2.0);
            CHECK(std::abs(base[c] - sc[c]) <= 1e-12);
        }
    }
}

TEST_CASE("NCC tie-break and exact hits") {
    FeatureSet fs{Matrix::from_rows({{-3, 0}, {3, 0}, {0, 9}}), {0, 1, 2}};
    ClassMeans cm = class_means(fs, 3);
    // (0,0) is equidistant to classes 0 and 1; (0,4) is at distance 5 from all three
    Matrix h = Matrix::from_rows({{0, 0}, {3, 0}, {0, 9}, {0, 4}, {2, 0}});
    CHECK(ncc_predict(h, cm) == std::vector<int>{0, 1, 2, 0, 1});
}

TEST_CASE("NCC accuracy matches a brute-force oracle and restricts by class") {
    FeatureSet train = random_features(60, 4, 3, 5);
    for (std::size_t i = 0; i < train.size(); ++i) train.features(i, static_cast<std::size_t>(train.labels[i])) += 6.0;
    FeatureSet test = random_features(90, 4, 3, 6);
    for (std::size_t i = 0; i < test.size(); ++i) test.features(i, static_cast<std::size_t>(test.labels[i])) += 6.0;
    ClassMeans cm = class_means(train, 3);

    std::vector<int> on{1, 2};
    std::size_t hit = 0, seen = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        if (test.labels[i] == 0) continue;
        int best = 0;
        double bd = std::numeric_limits<double>::infinity();
        for (int c = 0; c < 3; ++c) {
            double d = 0.0;
            for (std::size_t j = 0; j < 4; ++j) {
                double e = test.features(i, j) - cm.mu(static_cast<std::size_t>(c), j);
                d += e * e;
            }
            if (d < bd) {
                bd = d;
                best = c;
            }
        }
        ++seen;
        hit += best == test.labels[i];
    }
    const double acc = ncc_accuracy(test, cm, on);
    CHECK(acc == 100.0 * static_cast<double>(hit) / static_cast<double>(seen));
    CHECK(acc >= 99.0);
    CHECK_THROWS_AS(ncc_accuracy(test, cm, std::vector<int>{}), Error);
    FeatureSet only0{Matrix::from_rows({{0, 0, 0, 0}}), {0}};
    CHECK_THROWS_AS(ncc_accuracy(only0, cm, std::vector<int>{1}), Error);
}

TEST_CASE("NCC is invariant under a joint rotation") {
    FeatureSet fs = random_features(50, 5, 4, 7);
    ClassMeans cm = class_means(fs, 4);
    Matrix q = random_rotation(5, 8);
    FeatureSet rot{matmul(fs.features, q), fs.labels};
    ClassMeans rcm = class_means(rot, 4);
    CHECK(ncc_predict(fs.features, cm) == ncc_predict(rot.features, rcm));
}

TEST_CASE("cosine") {
    std::vector<double> a{1, 0}, b{0, 2}, z{0, 0};
    CHECK(cosine(a, b) == 0.0);
    CHECK(cosine(a, z) == 0.0);
    CHECK(cosine(a, std::vector<double>{-3, 0}) == -1.0);
}
