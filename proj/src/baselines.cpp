#include "rebandit/baselines.hpp"

#include <cmath>

namespace rebandit {

namespace {

struct Conjugate {
    Eigen::LLT<MatrixXd> prior_llt;
    Eigen::LLT<MatrixXd> post_llt;
    VectorXd rhs;
};

Conjugate conjugate(const PriorSpec& prior, const UserStats& pooled, double noise_var) {
    Conjugate c;
    const int p = prior.dim();
    const double y = 1.0 / noise_var;
    c.prior_llt = checked_llt(prior.cov, "prior covariance");
    const MatrixXd x = symmetrize(c.prior_llt.solve(MatrixXd::Identity(p, p)));
    c.post_llt = checked_llt(x + y * pooled.gram, "BLR posterior precision");
    c.rhs = c.prior_llt.solve(prior.mean) + y * pooled.cross;
    return c;
}

double logdet(const Eigen::LLT<MatrixXd>& llt) { return 2.0 * llt.matrixLLT().diagonal().array().log().sum(); }

}  // namespace

BLRState BLRState::initial(const PriorSpec& prior, double noise_var) {
    BLRState s;
    s.mean = prior.mean;
    s.cov = prior.cov;
    s.noise_var = noise_var;
    s.pooled = UserStats(prior.dim());
    return s;
}

BLRState blr_posterior_update(const PriorSpec& prior, const BLRState& state) {
    BLRState out = state;
    if (state.pooled.count == 0) {
        out.mean = prior.mean;
        out.cov = prior.cov;
        return out;
    }
    const auto c = conjugate(prior, state.pooled, state.noise_var);
    const int p = prior.dim();
    out.cov = symmetrize(c.post_llt.solve(MatrixXd::Identity(p, p)));
    out.mean = c.post_llt.solve(c.rhs);
    return out;
}

double blr_marginal_log_likelihood(const PriorSpec& prior, const UserStats& pooled, double noise_var) {
    const auto c = conjugate(prior, pooled, noise_var);
    const double y = 1.0 / noise_var;
    const VectorXd x_mu = c.prior_llt.solve(prior.mean);
    return -logdet(c.prior_llt) - logdet(c.post_llt) + static_cast<double>(pooled.count) * std::log(y) -
           y * pooled.sum_sq - prior.mean.dot(x_mu) + c.rhs.dot(c.post_llt.solve(c.rhs));
}

NoiseUpdateResult blr_update_noise_variance(const PriorSpec& prior, const BLRState& state,
                                            const OptimizerConfig& cfg) {
    cfg.validate();
    NoiseUpdateResult out;
    out.noise_var = state.noise_var;
    if (state.pooled.count == 0) return out;

    const UserStats& pooled = state.pooled;
    const int p = prior.dim();
    AscentProblem prob;
    prob.objective = [&](const VectorXd& c) -> std::optional<double> {
        try {
            const double v = blr_marginal_log_likelihood(prior, pooled, std::exp(c(0)));
            if (!std::isfinite(v)) return std::nullopt;
            return v;
        } catch (const NumericalError&) {
            return std::nullopt;
        }
    };
    prob.gradient = [&](const VectorXd& c) {
        const double s2 = std::exp(c(0));
        const auto cj = conjugate(prior, pooled, s2);
        const VectorXd mean = cj.post_llt.solve(cj.rhs);
        const MatrixXd cov = cj.post_llt.solve(MatrixXd::Identity(p, p));
        const double resid = pooled.sum_sq - 2.0 * pooled.cross.dot(mean) + mean.dot(pooled.gram * mean) +
                             pooled.gram.cwiseProduct(cov).sum();
        VectorXd g(1);
        g(0) = (-static_cast<double>(pooled.count) / s2 + resid / (s2 * s2)) * s2;
        return g;
    };
    const double log_floor = std::log(cfg.sigma_floor);
    prob.project = [log_floor](const VectorXd& c) {
        VectorXd o = c;
        o(0) = std::max(o(0), log_floor);
        return o;
    };
    prob.preconditioner = VectorXd::Constant(1, 1.0 / static_cast<double>(pooled.count));

    out.initial_objective = blr_marginal_log_likelihood(prior, pooled, state.noise_var);
    const AscentResult res = projected_ascent(prob, VectorXd::Constant(1, std::log(state.noise_var)), cfg);
    out.noise_var = std::max(std::exp(res.x(0)), cfg.sigma_floor);
    out.final_objective = res.value;
    out.iterations = res.iterations;
    out.warning = res.warning;
    out.trace = res.trace;
    if (out.final_objective < out.initial_objective && state.noise_var >= cfg.sigma_floor) {
        out.noise_var = state.noise_var;
        out.final_objective = out.initial_objective;
    }
    return out;
}

}  // namespace rebandit
