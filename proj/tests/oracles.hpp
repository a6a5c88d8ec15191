#pragma once

// Independent reference implementations for the tests. Nothing here calls into
// the library's solvers: inverses and determinants are hand-rolled Gauss-Jordan.

#include "rebandit/linear_model.hpp"
#include "rebandit/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <utility>
#include <vector>

namespace oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Gauss-Jordan inverse with partial pivoting, plus log|det|.
inline std::pair<MatrixXd, double> naive_inverse_logdet(const MatrixXd& a) {
    const int n = static_cast<int>(a.rows());
    MatrixXd w = a;
    MatrixXd inv = MatrixXd::Identity(n, n);
    double logdet = 0.0;
    for (int c = 0; c < n; ++c) {
        int piv = c;
        for (int r = c + 1; r < n; ++r)
            if (std::abs(w(r, c)) > std::abs(w(piv, c))) piv = r;
        if (w(piv, c) == 0.0) throw std::runtime_error("singular matrix in oracle");
        if (piv != c) {
            for (int k = 0; k < n; ++k) {
                std::swap(w(piv, k), w(c, k));
                std::swap(inv(piv, k), inv(c, k));
            }
        }
        const double d = w(c, c);
        logdet += std::log(std::abs(d));
        for (int k = 0; k < n; ++k) {
            w(c, k) /= d;
            inv(c, k) /= d;
        }
        for (int r = 0; r < n; ++r) {
            if (r == c) continue;
            const double f = w(r, c);
            if (f == 0.0) continue;
            for (int k = 0; k < n; ++k) {
                w(r, k) -= f * w(c, k);
                inv(r, k) -= f * inv(c, k);
            }
        }
    }
    return {inv, logdet};
}

inline MatrixXd naive_inverse(const MatrixXd& a) { return naive_inverse_logdet(a).first; }

/// Multivariate normal log-density.
inline double gaussian_logpdf(const VectorXd& x, const VectorXd& mean, const MatrixXd& cov) {
    const auto [inv, logdet] = naive_inverse_logdet(cov);
    const VectorXd d = x - mean;
    const double n = static_cast<double>(x.size());
    return -0.5 * (n * std::log(2.0 * std::numbers::pi) + logdet + d.dot(inv * d));
}

/// Raw observations of one small synthetic instance.
struct Instance {
    rebandit::PriorSpec prior;
    rebandit::HyperParams hp;
    std::vector<std::vector<VectorXd>> phi;  // [user][obs]
    std::vector<std::vector<double>> reward;
    rebandit::SufficientStats stats;

    int m() const { return static_cast<int>(phi.size()); }
    int p() const { return prior.dim(); }
};

inline MatrixXd random_spd(rebandit::StreamRng& rng, int p, double scale, double floor) {
    MatrixXd g(p, p);
    for (int i = 0; i < p; ++i)
        for (int j = 0; j < p; ++j) g(i, j) = rng.normal();
    return scale * (g * g.transpose() / p) + floor * MatrixXd::Identity(p, p);
}

inline MatrixXd random_diag(rebandit::StreamRng& rng, int p, double lo, double hi) {
    VectorXd d(p);
    for (int i = 0; i < p; ++i) d(i) = lo + (hi - lo) * rng.uniform();
    return d.asDiagonal();
}

/// m users, each with 0..t_max observations (at least one user has data when require_data).
inline Instance random_instance(rebandit::StreamRng& rng, int m, int t_max, int p, bool full_su = true,
                                bool require_data = true) {
    Instance in;
    in.prior.mean = VectorXd(p);
    for (int k = 0; k < p; ++k) in.prior.mean(k) = rng.normal();
    in.prior.cov = random_spd(rng, p, 1.0, 0.2);
    in.hp.noise_var = 0.3 + 1.5 * rng.uniform();
    in.hp.random_effects_cov = full_su ? random_spd(rng, p, 0.5, 0.1) : random_diag(rng, p, 0.1, 1.0);
    in.stats = rebandit::SufficientStats(p, m);
    in.phi.resize(m);
    in.reward.resize(m);
    for (int i = 0; i < m; ++i) {
        int t = static_cast<int>(rng.below(static_cast<std::size_t>(t_max) + 1));
        if (require_data && i == 0 && t == 0) t = 1;
        for (int s = 0; s < t; ++s) {
            VectorXd phi(p);
            for (int k = 0; k < p; ++k) phi(k) = rng.normal();
            const double r = rng.normal(0.5, 1.5);
            in.phi[i].push_back(phi);
            in.reward[i].push_back(r);
            in.stats.users[i].add(phi, r);
        }
    }
    return in;
}

/// Stacked design Phi (n x pm) and reward vector.
inline std::pair<MatrixXd, VectorXd> stacked_design(const Instance& in) {
    const int p = in.p(), m = in.m();
    int n = 0;
    for (const auto& u : in.phi) n += static_cast<int>(u.size());
    MatrixXd big = MatrixXd::Zero(n, p * m);
    VectorXd r(n);
    int row = 0;
    for (int i = 0; i < m; ++i) {
        for (std::size_t s = 0; s < in.phi[i].size(); ++s, ++row) {
            big.block(row, i * p, 1, p) = in.phi[i][s].transpose();
            r(row) = in.reward[i][s];
        }
    }
    return {big, r};
}

inline MatrixXd kron_prior(const Instance& in) {
    const int p = in.p(), m = in.m();
    MatrixXd s(p * m, p * m);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j)
            s.block(i * p, j * p, p, p) = in.prior.cov + (i == j ? in.hp.random_effects_cov : MatrixXd::Zero(p, p));
    return s;
}

inline VectorXd stacked_prior_mean(const Instance& in) {
    VectorXd v(in.p() * in.m());
    for (int i = 0; i < in.m(); ++i) v.segment(i * in.p(), in.p()) = in.prior.mean;
    return v;
}

struct DensePosterior {
    VectorXd mean;
    MatrixXd cov;
};

/// Posterior mean/covariance straight from the stacked conjugate formulas.
inline DensePosterior dense_posterior(const Instance& in) {
    const auto [phi, r] = stacked_design(in);
    const MatrixXd tilde_inv = naive_inverse(kron_prior(in));
    const double y = 1.0 / in.hp.noise_var;
    const MatrixXd prec = tilde_inv + y * phi.transpose() * phi;
    DensePosterior out;
    out.cov = naive_inverse(prec);
    out.mean = out.cov * (tilde_inv * stacked_prior_mean(in) + y * phi.transpose() * r);
    return out;
}

/// Twice the Gaussian log marginal of the rewards, plus n log(2 pi).
inline double marginal_oracle(const Instance& in) {
    const auto [phi, r] = stacked_design(in);
    const int n = static_cast<int>(r.size());
    if (n == 0) return 0.0;
    const MatrixXd cov = phi * kron_prior(in) * phi.transpose() + in.hp.noise_var * MatrixXd::Identity(n, n);
    return 2.0 * gaussian_logpdf(r, phi * stacked_prior_mean(in), cov) + n * std::log(2.0 * std::numbers::pi);
}

inline double max_abs(const MatrixXd& a) { return a.size() == 0 ? 0.0 : a.cwiseAbs().maxCoeff(); }

}  // namespace oracle
