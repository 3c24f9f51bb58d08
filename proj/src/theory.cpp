#include "ulns/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ulns/error.hpp"

namespace ulns {

TheoryInstance make_theory_instance(std::size_t classes, std::size_t dim, std::size_t forget_class,
                                    double lambda_w, std::uint64_t seed) {
    if (classes < 2) throw Error(ErrorKind::InvalidConfig, "theory instance needs K >= 2");
    if (dim + 1 < classes) throw Error(ErrorKind::InvalidConfig, "theory instance needs d >= K-1");
    if (forget_class >= classes) throw Error(ErrorKind::InvalidConfig, "forget class outside [0, K)");
    if (!(lambda_w > 0.0) || !std::isfinite(lambda_w)) throw Error(ErrorKind::InvalidConfig, "lambda_w must be > 0");
    return {classes, dim, simplex_etf(classes, dim, seed), forget_class, lambda_w};
}

namespace {

void check_shape(const Matrix& w, const TheoryInstance& inst) {
    if (w.rows() != inst.classes || w.cols() != inst.dim ||
        inst.means.classes() != inst.classes || inst.means.dim() != inst.dim)
        throw Error(ErrorKind::ShapeError, "weights must be K x d and match the instance means");
}

double spread(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    return *hi - *lo;
}

double mean(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double gradient_norm(const Matrix& w, const TheoryInstance& inst) {
    return frobenius_norm(neggrad_objective(w, inst).grad);
}

void require_stationary(double gradnorm, double limit) {
    if (!(gradnorm <= limit))
        throw Error(ErrorKind::NotStationary, "gradient norm " + std::to_string(gradnorm) + " exceeds " +
                                                  std::to_string(limit));
}

}  // namespace

ObjectiveValue neggrad_objective(const Matrix& weights, const TheoryInstance& inst) {
    check_shape(weights, inst);
    const std::size_t k = inst.classes;
    const Matrix& mu = inst.means.directions;
    const double retain_scale = 1.0 / static_cast<double>(k - 1);

    // z(j, c) = w_c . mu_j
    Matrix z = matmul_bt(mu, weights);
    Matrix dz(k, k);
    double loss = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
        auto row = z.row(j);
        const double lse = log_sum_exp(row);
        const bool forget = j == inst.forget_class;
        const double sign = forget ? -1.0 : retain_scale;
        loss += sign * (lse - row[j]);
        for (std::size_t c = 0; c < k; ++c)
            dz(j, c) = sign * (std::exp(row[c] - lse) - (c == j ? 1.0 : 0.0));
    }
    loss += 0.5 * inst.lambda_w * squared_norm(weights.flat());

    Matrix grad = matmul_at(dz, mu);
    for (std::size_t i = 0; i < grad.size(); ++i) grad.flat()[i] += inst.lambda_w * weights.flat()[i];
    return {loss, std::move(grad)};
}

LastLayerSolution optimize_last_layer(const TheoryInstance& inst, const LastLayerOptimizerConfig& config,
                                      const Matrix* init) {
    if (!(inst.lambda_w > 0.0)) throw Error(ErrorKind::InvalidConfig, "lambda_w must be > 0");
    LastLayerSolution sol;
    sol.weights = init ? *init : inst.means.directions;
    check_shape(sol.weights, inst);

    ObjectiveValue cur = neggrad_objective(sol.weights, inst);
    sol.initial_loss = cur.loss;
    double step = config.initial_step;
    constexpr double kArmijo = 1e-4;
    Matrix trial(sol.weights.rows(), sol.weights.cols());
    Matrix prev_weights, prev_grad;

    for (;;) {
        const double gsq = squared_norm(cur.grad.flat());
        sol.grad_norm = std::sqrt(gsq);
        if (sol.grad_norm <= config.grad_tolerance) break;
        if (sol.iterations >= config.max_iterations)
            throw Error(ErrorKind::NoConvergence,
                        "gradient norm " + std::to_string(sol.grad_norm) + " after " +
                            std::to_string(sol.iterations) + " iterations");

        // Barzilai-Borwein trial step, then backtracking.
        step = std::min(step * 2.0, 1e6);
        if (sol.iterations > 0) {
            double ss = 0.0, sy = 0.0;
            for (std::size_t i = 0; i < trial.size(); ++i) {
                const double sd = sol.weights.flat()[i] - prev_weights.flat()[i];
                ss += sd * sd;
                sy += sd * (cur.grad.flat()[i] - prev_grad.flat()[i]);
            }
            if (sy > 0.0) step = std::clamp(ss / sy, 1e-12, 1e6);
        }
        // Near the optimum the loss stops resolving the Armijo decrease; a
        // step that keeps the loss within rounding and shrinks the gradient
        // is accepted as well.
        const double loss_slack = 1e-12 * std::max(1.0, std::abs(cur.loss));
        ObjectiveValue next;
        for (;;) {
            for (std::size_t i = 0; i < trial.size(); ++i)
                trial.flat()[i] = sol.weights.flat()[i] - step * cur.grad.flat()[i];
            next = neggrad_objective(trial, inst);
            if (next.loss <= cur.loss - kArmijo * step * gsq) break;
            if (next.loss <= cur.loss + loss_slack && squared_norm(next.grad.flat()) < gsq) break;
            step *= 0.5;
            if (step < 1e-300)
                throw Error(ErrorKind::NoConvergence, "line search failed at gradient norm " +
                                                          std::to_string(sol.grad_norm));
        }
        prev_weights = sol.weights;
        prev_grad = std::move(cur.grad);
        std::swap(sol.weights, trial);
        cur = std::move(next);
        ++sol.iterations;
    }
    sol.final_loss = cur.loss;
    return sol;
}

FlipCertificate certify_flip_structure(const Matrix& weights, const TheoryInstance& inst, double tol,
                               double stationarity_limit) {
    check_shape(weights, inst);
    FlipCertificate cert;
    cert.tolerance = tol;
    cert.stationarity_gradnorm = gradient_norm(weights, inst);
    require_stationary(cert.stationarity_gradnorm, stationarity_limit);

    const std::size_t k = inst.forget_class;
    const double lambda = inst.lambda_w;
    const Matrix& mu = inst.means.directions;
    auto mu_k = mu.row(k);
    auto w_k = weights.row(k);

    cert.forget_cosine = cosine(w_k, mu_k);
    cert.cosine_ok = std::abs(cert.forget_cosine + 1.0) <= tol;
    cert.gamma = 1.0 - lambda * norm(w_k) / norm(mu_k);
    cert.gamma_ok = cert.gamma > 0.0 && cert.gamma < 1.0;

    // lambda * w_i = alpha * mu_i + beta * mu_k, fitted per retain class.
    std::vector<double> alphas, betas;
    cert.span_ok = true;
    cert.min_retain_cosine_to_forget_mean = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < inst.classes; ++i) {
        if (i == k) continue;
        auto w_i = weights.row(i);
        auto mu_i = mu.row(i);
        const double g11 = dot(mu_i, mu_i), g12 = dot(mu_i, mu_k), g22 = dot(mu_k, mu_k);
        const double r1 = dot(mu_i, w_i), r2 = dot(mu_k, w_i);
        const double det = g11 * g22 - g12 * g12;
        if (!(std::abs(det) > 0.0)) throw IndexedError(ErrorKind::DegenerateGeometry, static_cast<long>(i), "collinear means");
        const double a = (r1 * g22 - r2 * g12) / det;
        const double b = (g11 * r2 - g12 * r1) / det;
        double res = 0.0;
        for (std::size_t j = 0; j < w_i.size(); ++j) {
            const double e = w_i[j] - a * mu_i[j] - b * mu_k[j];
            res += e * e;
        }
        const double wn = norm(w_i);
        const double rel = wn > 0.0 ? std::sqrt(res) / wn : std::sqrt(res);
        cert.retain_span_residuals.push_back(rel);
        if (!(rel <= tol)) cert.span_ok = false;
        alphas.push_back(lambda * a);
        betas.push_back(lambda * b);
        cert.min_retain_cosine_to_forget_mean = std::min(cert.min_retain_cosine_to_forget_mean, cosine(w_i, mu_k));
    }
    cert.alpha = mean(alphas);
    cert.beta = mean(betas);
    cert.alpha_spread = spread(alphas);
    cert.beta_spread = spread(betas);
    auto in_unit = [](double v) { return v > 0.0 && v < 1.0; };
    cert.coefficients_ok = in_unit(cert.alpha) && in_unit(cert.beta) && cert.alpha_spread <= tol &&
                           cert.beta_spread <= tol &&
                           std::all_of(alphas.begin(), alphas.end(), in_unit) &&
                           std::all_of(betas.begin(), betas.end(), in_unit);

    // Cosine-argmax on the forget mean feature; lowest index wins ties.
    std::size_t pred = 0;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < inst.classes; ++c) {
        const double cs = cosine(weights.row(c), mu_k);
        if (cs > best) {
            best = cs;
            pred = c;
        }
    }
    cert.forget_accuracy = pred == k ? 100.0 : 0.0;
    cert.forget_accuracy_ok = cert.forget_accuracy == 0.0;

    cert.pass = cert.cosine_ok && cert.gamma_ok && cert.span_ok && cert.coefficients_ok && cert.forget_accuracy_ok;
    return cert;
}

LogitFamilies certify_logit_families(const Matrix& weights, const TheoryInstance& inst, double tol,
                             double stationarity_limit) {
    check_shape(weights, inst);
    require_stationary(gradient_norm(weights, inst), stationarity_limit);
    const std::size_t k = inst.forget_class;
    Matrix z = matmul_bt(weights, inst.means.directions);  // z(j, l) = w_j . mu_l

    LogitFamilies f;
    for (std::size_t j = 0; j < inst.classes; ++j) {
        if (j == k) continue;
        f.a.push_back(z(j, j));
        f.b_prime.push_back(z(j, k));
        f.c.push_back(z(k, j));
        for (std::size_t l = 0; l < inst.classes; ++l)
            if (l != j && l != k) f.b.push_back(z(j, l));
    }
    f.spread_a = spread(f.a);
    f.spread_b = spread(f.b);
    f.spread_b_prime = spread(f.b_prime);
    f.spread_c = spread(f.c);
    f.pass = f.spread_a <= tol && f.spread_b <= tol && f.spread_b_prime <= tol && f.spread_c <= tol;
    return f;
}

void to_json(nlohmann::json& j, const FlipCertificate& c) {
    j = nlohmann::json{
        {"gamma", c.gamma},
        {"alpha", c.alpha},
        {"beta", c.beta},
        {"alpha_spread", c.alpha_spread},
        {"beta_spread", c.beta_spread},
        {"forget_cosine", c.forget_cosine},
        {"min_retain_cosine_to_forget_mean", c.min_retain_cosine_to_forget_mean},
        {"retain_span_residuals", c.retain_span_residuals},
        {"stationarity_gradnorm", c.stationarity_gradnorm},
        {"forget_accuracy", c.forget_accuracy},
        {"tolerance", c.tolerance},
        {"cosine_ok", c.cosine_ok},
        {"gamma_ok", c.gamma_ok},
        {"span_ok", c.span_ok},
        {"coefficients_ok", c.coefficients_ok},
        {"forget_accuracy_ok", c.forget_accuracy_ok},
        {"pass", c.pass},
    };
}

void to_json(nlohmann::json& j, const LogitFamilies& f) {
    j = nlohmann::json{
        {"a", f.a},
        {"b", f.b},
        {"b_prime", f.b_prime},
        {"c", f.c},
        {"spread_a", f.spread_a},
        {"spread_b", f.spread_b},
        {"spread_b_prime", f.spread_b_prime},
        {"spread_c", f.spread_c},
        {"pass", f.pass},
    };
}

}  // namespace ulns
