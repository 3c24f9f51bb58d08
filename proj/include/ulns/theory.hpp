#pragma once

// Last-layer analysis of class unlearning: with class means frozen on a
// simplex ETF, minimise the ridge-regularised NegGrad objective over the
// classifier W and check the structure of its stationary point.

#include <cstddef>
#include <vector>

#include <nlohmann/json.hpp>

#include "ulns/geometry.hpp"
#include "ulns/numerics.hpp"

namespace ulns {

struct TheoryInstance {
    std::size_t classes = 3;
    std::size_t dim = 2;
    EtfFrame means;
    std::size_t forget_class = 0;
    double lambda_w = 1e-2;
};

/// Throws InvalidConfig on forget_class >= K, lambda_w <= 0 or d < K-1.
TheoryInstance make_theory_instance(std::size_t classes, std::size_t dim, std::size_t forget_class,
                                    double lambda_w, std::uint64_t seed = kDefaultEtfSeed);

struct ObjectiveValue {
    double loss = 0.0;
    Matrix grad;
};

/// L(W) = 1/(K-1) * sum_{i != k} [lse_j(w_j.mu_i) - w_i.mu_i]
///        + w_k.mu_k - lse_j(w_j.mu_k) + (lambda/2)||W||_F^2
ObjectiveValue neggrad_objective(const Matrix& weights, const TheoryInstance& inst);

struct LastLayerOptimizerConfig {
    double grad_tolerance = 1e-8;
    long max_iterations = 2'000'000;
    double initial_step = 1.0;
};

struct LastLayerSolution {
    Matrix weights;
    long iterations = 0;
    double grad_norm = 0.0;
    double initial_loss = 0.0;
    double final_loss = 0.0;
};

/// Gradient descent with Armijo backtracking from `init` (the aligned ETF
/// head, W = M, when omitted). Throws NoConvergence when the budget runs out.
LastLayerSolution optimize_last_layer(const TheoryInstance& inst,
                                      const LastLayerOptimizerConfig& config = {},
                                      const Matrix* init = nullptr);

struct FlipCertificate {
    // lambda * w_k = -(1 - gamma) mu_k ; lambda * w_i = alpha mu_i + beta mu_k
    double gamma = 0.0;
    double alpha = 0.0;
    double beta = 0.0;
    double alpha_spread = 0.0;
    double beta_spread = 0.0;
    double forget_cosine = 0.0;
    double min_retain_cosine_to_forget_mean = 0.0;  // min_{c != k} cos(w_c, mu_k), strictly above -1
    std::vector<double> retain_span_residuals;  // ||w_i - fit|| / ||w_i||
    double stationarity_gradnorm = 0.0;
    double forget_accuracy = 0.0;  // percent, cosine-argmax on mu_k
    double tolerance = 0.0;
    bool cosine_ok = false;
    bool gamma_ok = false;
    bool span_ok = false;
    bool coefficients_ok = false;
    bool forget_accuracy_ok = false;
    bool pass = false;
};

/// Throws NotStationary when ||grad L(W)|| > stationarity_limit.
FlipCertificate certify_flip_structure(const Matrix& weights, const TheoryInstance& inst, double tol = 1e-3,
                               double stationarity_limit = 1e-6);

struct LogitFamilies {
    std::vector<double> a;        // w_j.mu_j,          j != k
    std::vector<double> b;        // w_j.mu_l,          j != k, l != j,k
    std::vector<double> b_prime;  // w_j.mu_k,          j != k
    std::vector<double> c;        // w_k.mu_j,          j != k
    double spread_a = 0.0;
    double spread_b = 0.0;
    double spread_b_prime = 0.0;
    double spread_c = 0.0;
    bool pass = false;
};

/// Logit-equality structure at a stationary point. Empty families pass.
LogitFamilies certify_logit_families(const Matrix& weights, const TheoryInstance& inst, double tol = 1e-4,
                             double stationarity_limit = 1e-6);

void to_json(nlohmann::json& j, const FlipCertificate& c);
void to_json(nlohmann::json& j, const LogitFamilies& f);

}  // namespace ulns
