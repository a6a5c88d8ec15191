#include "rebandit/empirical_bayes.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>

namespace rebandit {

namespace {

double llt_logdet(const Eigen::LLT<MatrixXd>& llt) {
    return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

double lu_logabsdet(const Eigen::PartialPivLU<MatrixXd>& lu) {
    return lu.matrixLU().diagonal().array().abs().log().sum();
}

}  // namespace

void OptimizerConfig::validate() const {
    if (!(step_size > 0.0) || max_iters <= 0 || !(grad_tol > 0.0) || !(eig_floor > 0.0) ||
        !(sigma_floor > 0.0) || max_backtracks <= 0 || !(max_step > 0.0) || !(max_coord_change > 0.0))
        throw std::invalid_argument("optimizer settings must be positive");
}

MarginalObjectiveInputs MarginalObjectiveInputs::build(const PriorSpec& prior, const HyperParams& hp,
                                                       const SufficientStats& stats) {
    const int m = stats.num_users();
    const int n = prior.dim() * m;
    const auto llt = checked_llt(build_sigma_theta_tilde(prior, hp, m), "Sigma_theta_tilde");
    MarginalObjectiveInputs in;
    in.x = symmetrize(llt.solve(MatrixXd::Identity(n, n)));
    in.y = 1.0 / hp.noise_var;
    in.a = stats.block_gram();
    in.b = stats.stacked_cross();
    in.mu_theta = stack_prior_mean(prior, m);
    in.sum_sq = stats.total_sum_sq();
    in.mt = stats.total_count();
    return in;
}

double marginal_log_likelihood(const MarginalObjectiveInputs& in) {
    const auto x_llt = checked_llt(in.x, "X");
    const auto post_llt = checked_llt(in.x + in.y * in.a, "X + yA");
    const VectorXd x_mu = in.x * in.mu_theta;
    const VectorXd rhs = x_mu + in.y * in.b;
    return llt_logdet(x_llt) - llt_logdet(post_llt) + static_cast<double>(in.mt) * std::log(in.y) -
           in.y * in.sum_sq - in.mu_theta.dot(x_mu) + rhs.dot(post_llt.solve(rhs));
}

namespace {

double structured_value(const StructuredFactor& f, const PriorSpec& prior, const HyperParams& hp,
                        const SufficientStats& stats) {
    const int p = f.dim;
    const double s2 = hp.noise_var;
    const double y = 1.0 / s2;
    const double log_s2 = std::log(s2);

    double value = -llt_logdet(f.prior_llt) - llt_logdet(f.precision_llt);
    for (int i = 0; i < f.num_users; ++i) {
        const auto& u = stats.users[i];
        value -= lu_logabsdet(f.m_lu[i]) - p * log_s2;
        value += y * u.cross.dot(f.g[i] * u.cross);
    }
    const VectorXd prior_prec_mu = f.prior_llt.solve(prior.mean);
    value += static_cast<double>(stats.total_count()) * std::log(y) - y * stats.total_sum_sq() -
             prior.mean.dot(prior_prec_mu) + f.eta.dot(f.pop_mean);
    return value;
}

}  // namespace

double marginal_log_likelihood(const PriorSpec& prior, const HyperParams& hp, const SufficientStats& stats) {
    return structured_value(StructuredFactor::compute(prior, hp, stats), prior, hp, stats);
}

int coordinate_count(int dim, Parameterization param) {
    return param == Parameterization::diagonal_log ? dim + 1 : dim * (dim + 1) / 2 + 1;
}

VectorXd to_coordinates(const HyperParams& hp, Parameterization param) {
    const int p = hp.dim();
    VectorXd c(coordinate_count(p, param));
    if (param == Parameterization::diagonal_log) {
        c.head(p) = hp.random_effects_cov.diagonal().array().log();
    } else {
        const MatrixXd l = checked_llt(hp.random_effects_cov, "Sigma_u").matrixL();
        int k = 0;
        for (int r = 0; r < p; ++r)
            for (int col = 0; col <= r; ++col) c(k++) = r == col ? std::log(l(r, col)) : l(r, col);
    }
    c(c.size() - 1) = std::log(hp.noise_var);
    return c;
}

HyperParams from_coordinates(const VectorXd& coords, int dim, Parameterization param) {
    if (coords.size() != coordinate_count(dim, param)) throw std::invalid_argument("coordinate vector has wrong length");
    HyperParams hp;
    if (param == Parameterization::diagonal_log) {
        hp.random_effects_cov = coords.head(dim).array().exp().matrix().asDiagonal();
    } else {
        MatrixXd l = MatrixXd::Zero(dim, dim);
        int k = 0;
        for (int r = 0; r < dim; ++r)
            for (int col = 0; col <= r; ++col, ++k) l(r, col) = r == col ? std::exp(coords(k)) : coords(k);
        hp.random_effects_cov = symmetrize(l * l.transpose());
    }
    hp.noise_var = std::exp(coords(coords.size() - 1));
    return hp;
}

ObjectiveGradient marginal_ll_gradient(const PriorSpec& prior, const HyperParams& hp, const SufficientStats& stats,
                                       Parameterization param) {
    const auto f = StructuredFactor::compute(prior, hp, stats);
    const int p = f.dim;
    const double s2 = hp.noise_var;

    // By the Fisher identity, dl/dSigma_u = Sigma_u^{-1} (sum_i E[u_i u_i^T] - m Sigma_u) Sigma_u^{-1}.
    // Using Sigma_u^{-1} G_i = M_i^{-1} this becomes
    //   sum_i r_i r_i^T + info_i Lambda^{-1} info_i - info_i,  r_i = M_i^{-1}(B_i - A_i lambda).
    MatrixXd grad_su = MatrixXd::Zero(p, p);
    double resid = 0.0;  // E || R - Phi theta ||^2 under the posterior
    for (int i = 0; i < f.num_users; ++i) {
        const auto& u = stats.users[i];
        const VectorXd r = f.m_lu[i].solve(u.cross - u.gram * f.pop_mean);
        grad_su += r * r.transpose() + f.info[i] * f.pop_cov * f.info[i] - f.info[i];

        const VectorXd mean = f.user_mean(i, stats);
        const MatrixXd cov = f.user_cov(i, stats);
        resid += u.sum_sq - 2.0 * u.cross.dot(mean) + mean.dot(u.gram * mean) + (u.gram.cwiseProduct(cov)).sum();
    }
    grad_su = symmetrize(grad_su);
    const double n = static_cast<double>(stats.total_count());
    const double grad_s2 = -n / s2 + resid / (s2 * s2);

    ObjectiveGradient out;
    out.value = structured_value(f, prior, hp, stats);
    out.gradient.resize(coordinate_count(p, param));
    if (param == Parameterization::diagonal_log) {
        out.gradient.head(p) = grad_su.diagonal().cwiseProduct(hp.random_effects_cov.diagonal());
    } else {
        const MatrixXd l = checked_llt(hp.random_effects_cov, "Sigma_u").matrixL();
        const MatrixXd dl = 2.0 * grad_su * l;
        int k = 0;
        for (int r = 0; r < p; ++r)
            for (int col = 0; col <= r; ++col) out.gradient(k++) = r == col ? dl(r, col) * l(r, col) : dl(r, col);
    }
    out.gradient(out.gradient.size() - 1) = grad_s2 * s2;
    return out;
}

MatrixXd project_psd(const MatrixXd& m, double floor) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(symmetrize(m));
    if (es.eigenvalues().minCoeff() >= floor) return symmetrize(m);
    // Land slightly above the floor so the reconstruction keeps min eig >= floor.
    const VectorXd clamped = es.eigenvalues().cwiseMax(floor * (1.0 + 1e-8));
    return symmetrize(es.eigenvectors() * clamped.asDiagonal() * es.eigenvectors().transpose());
}

AscentResult projected_ascent(const AscentProblem& problem, const VectorXd& x0, const OptimizerConfig& cfg) {
    AscentResult res;
    res.x = problem.project(x0);
    const auto start = problem.objective(res.x);
    if (!start) throw NumericalError("objective undefined at the starting point", 0.0, 0.0);
    res.value = *start;
    res.trace.push_back(res.value);

    // Preconditioned gradient with the components that push into an active bound
    // removed. The preconditioner makes this a per-user / per-observation scale.
    const auto projected_norm = [&](const VectorXd& x, const VectorXd& g) {
        const VectorXd pg = problem.preconditioner.cwiseProduct(g);
        const double delta = 1e-7 / std::max(1.0, pg.cwiseAbs().maxCoeff());
        return ((problem.project(x + delta * pg) - x) / delta).norm();
    };

    // Per-coordinate rates grow while a coordinate's gradient keeps its sign and
    // shrink when it flips, so weakly identified variances reach their scale quickly.
    VectorXd rate = VectorXd::Ones(res.x.size());
    double step = cfg.step_size;
    int flat_steps = 0;
    VectorXd g = problem.gradient(res.x);
    for (; res.iterations < cfg.max_iters; ++res.iterations) {
        res.grad_norm = projected_norm(res.x, g);
        if (!std::isfinite(res.grad_norm)) break;
        if (res.grad_norm <= cfg.grad_tol) {
            res.converged = true;
            break;
        }
        const VectorXd dir = rate.cwiseProduct(problem.preconditioner).cwiseProduct(g);

        bool accepted = false;
        for (int k = 0; k < cfg.max_backtracks; ++k) {
            VectorXd dx = step * dir;
            const double biggest = dx.cwiseAbs().maxCoeff();
            if (biggest > cfg.max_coord_change) dx *= cfg.max_coord_change / biggest;
            const VectorXd cand = problem.project(res.x + dx);
            const auto val = problem.objective(cand);
            if (val && std::isfinite(*val) && *val >= res.value) {
                const bool flat = *val - res.value <= 1e-15 * std::max(1.0, std::abs(res.value));
                flat_steps = flat ? flat_steps + 1 : 0;
                res.x = cand;
                res.value = *val;
                res.trace.push_back(res.value);
                step = std::min(2.0 * step, cfg.max_step);
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted || flat_steps >= 3) {
            // No representable ascent remains along the gradient.
            ++res.iterations;
            res.grad_norm = projected_norm(res.x, problem.gradient(res.x));
            res.converged = res.grad_norm <= cfg.grad_tol;
            res.warning = !res.converged;
            return res;
        }
        const VectorXd g_new = problem.gradient(res.x);
        for (int j = 0; j < rate.size(); ++j) {
            const double s = g(j) * g_new(j);
            if (s > 0.0)
                rate(j) = std::min(rate(j) * 1.5, 1e3);
            else if (s < 0.0)
                rate(j) = std::max(rate(j) * 0.5, 1e-3);
        }
        g = g_new;
    }
    if (res.iterations >= cfg.max_iters && !res.converged) {
        res.grad_norm = projected_norm(res.x, g);
        res.converged = res.grad_norm <= cfg.grad_tol;
    }
    res.warning = !res.converged;
    return res;
}

HyperUpdateResult update_hyperparams(const PriorSpec& prior, const SufficientStats& stats, const HyperParams& hp_init,
                                     const OptimizerConfig& cfg) {
    cfg.validate();
    hp_init.validate(0.0, 0.0);
    const int p = prior.dim();
    if (hp_init.dim() != p) throw std::invalid_argument("hyperparameter dimension does not match prior");

    HyperUpdateResult out;
    out.hp = hp_init;
    if (stats.empty()) {
        out.message = "no observations; hyperparameters unchanged";
        return out;
    }

    const auto param = cfg.parameterization;
    const double log_eig_floor = std::log(cfg.eig_floor);
    const double log_sigma_floor = std::log(cfg.sigma_floor);

    AscentProblem prob;
    prob.objective = [&](const VectorXd& c) -> std::optional<double> {
        try {
            const double v = marginal_log_likelihood(prior, from_coordinates(c, p, param), stats);
            if (!std::isfinite(v)) return std::nullopt;
            return v;
        } catch (const NumericalError&) {
            return std::nullopt;
        }
    };
    prob.gradient = [&](const VectorXd& c) {
        return marginal_ll_gradient(prior, from_coordinates(c, p, param), stats, param).gradient;
    };
    prob.project = [&](const VectorXd& c) -> VectorXd {
        VectorXd out_c = c;
        const int last = static_cast<int>(c.size()) - 1;
        out_c(last) = std::max(c(last), log_sigma_floor);
        if (param == Parameterization::diagonal_log) {
            out_c.head(p) = c.head(p).cwiseMax(log_eig_floor);
        } else {
            HyperParams hp = from_coordinates(c, p, param);
            hp.random_effects_cov = project_psd(hp.random_effects_cov, cfg.eig_floor);
            const VectorXd re = to_coordinates(hp, param);
            out_c.head(last) = re.head(last);
        }
        return out_c;
    };
    const double users = static_cast<double>(stats.num_users());
    const double obs = std::max<double>(1.0, static_cast<double>(stats.total_count()));
    prob.preconditioner = VectorXd::Constant(coordinate_count(p, param), 1.0 / users);
    prob.preconditioner(prob.preconditioner.size() - 1) = 1.0 / obs;

    HyperParams start = hp_init;
    if (param == Parameterization::diagonal_log)
        start.random_effects_cov = MatrixXd(hp_init.random_effects_cov.diagonal().asDiagonal());
    else
        start.random_effects_cov = project_psd(hp_init.random_effects_cov, cfg.eig_floor);

    out.initial_objective = marginal_log_likelihood(prior, hp_init, stats);
    const AscentResult res = projected_ascent(prob, to_coordinates(start, param), cfg);

    HyperParams hp = from_coordinates(res.x, p, param);
    hp.noise_var = std::max(hp.noise_var, cfg.sigma_floor);
    if (param == Parameterization::diagonal_log)
        hp.random_effects_cov.diagonal() = hp.random_effects_cov.diagonal().cwiseMax(cfg.eig_floor);

    out.hp = hp;
    out.final_objective = res.value;
    out.iterations = res.iterations;
    out.converged = res.converged;
    out.warning = res.warning;
    out.trace = res.trace;
    out.message = res.converged ? "converged" : "stopped before reaching the gradient tolerance";

    const bool init_feasible = hp_init.noise_var >= cfg.sigma_floor &&
                               Eigen::SelfAdjointEigenSolver<MatrixXd>(hp_init.random_effects_cov, Eigen::EigenvaluesOnly)
                                       .eigenvalues()
                                       .minCoeff() >= cfg.eig_floor;
    if (out.final_objective < out.initial_objective && init_feasible) {
        out.hp = hp_init;
        out.final_objective = out.initial_objective;
        out.message += "; kept the initial estimate";
    }
    return out;
}

}  // namespace rebandit
