#include "rebandit/linear_model.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <sstream>

namespace rebandit {

namespace {

bool is_bit(int v) { return v == 0 || v == 1; }

void require_dims(const PriorSpec& prior, const HyperParams& hp, const SufficientStats& stats) {
    const int p = prior.dim();
    if (hp.dim() != p) throw std::invalid_argument("hyperparameter dimension does not match prior");
    if (stats.num_users() < 1) throw std::invalid_argument("at least one user is required");
    if (stats.dim() != p) throw std::invalid_argument("sufficient statistics dimension does not match prior");
}

}  // namespace

void validate_state(const StateTriple& s) {
    if (!is_bit(s.engagement) || !is_bit(s.evening) || !is_bit(s.no_use))
        throw std::invalid_argument("state entries must be 0 or 1");
}

Features build_features(const StateTriple& s) {
    validate_state(s);
    const double s1 = s.engagement, s2 = s.evening, s3 = s.no_use;
    Features f;
    f << 1.0, s1, s2, s3, s1 * s2, s2 * s3, s1 * s3, s1 * s2 * s3;
    return f;
}

VectorXd build_design(const StateTriple& s, int action, double pi) {
    if (!(pi >= 0.0 && pi <= 1.0)) throw std::invalid_argument("pi must lie in [0, 1]");
    if (action != 0 && action != 1) throw std::invalid_argument("action must be 0 or 1");
    const Features f = build_features(s);
    VectorXd phi(kParamDim);
    phi.segment<kFeatureDim>(0) = f;
    phi.segment<kFeatureDim>(kFeatureDim) = (action - pi) * f;
    phi.segment<kFeatureDim>(2 * kFeatureDim) = pi * f;
    return phi;
}

NumericalError::NumericalError(const std::string& what, double min_eig, double max_eig)
    : std::runtime_error(what), min_eig_(min_eig), max_eig_(max_eig) {}

MatrixXd symmetrize(const MatrixXd& m) { return 0.5 * (m + m.transpose()); }

Eigen::LLT<MatrixXd> checked_llt(const MatrixXd& m, const char* what) {
    Eigen::LLT<MatrixXd> llt(m);
    if (llt.info() != Eigen::Success) {
        Eigen::SelfAdjointEigenSolver<MatrixXd> es(symmetrize(m), Eigen::EigenvaluesOnly);
        const double lo = es.eigenvalues().minCoeff();
        const double hi = es.eigenvalues().maxCoeff();
        std::ostringstream msg;
        msg << what << " is not positive definite (eigenvalues in [" << lo << ", " << hi << "])";
        throw NumericalError(msg.str(), lo, hi);
    }
    return llt;
}

void PriorSpec::validate() const {
    if (mean.size() == 0 || cov.rows() != mean.size() || cov.cols() != mean.size())
        throw std::invalid_argument("prior mean and covariance dimensions disagree");
    if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-12)
        throw std::invalid_argument("prior covariance must be symmetric");
    checked_llt(cov, "prior covariance");
}

PriorSpec PriorSpec::standard() {
    Features alpha_mean, alpha_sd, beta_sd;
    alpha_mean << 2.12, 0.0, 0.0, -0.69, 0.0, 0.0, 0.0, 0.0;
    // Feature order is [1, S1, S2, S3, S1S2, S2S3, S1S3, S1S2S3].
    alpha_sd << 0.78, 0.38, 0.62, 0.98, 0.16, 0.16, 0.1, 0.1;
    beta_sd << 0.27, 0.33, 0.3, 0.32, 0.1, 0.1, 0.1, 0.1;

    PriorSpec p;
    p.mean = VectorXd::Zero(kParamDim);
    p.mean.head<kFeatureDim>() = alpha_mean;
    VectorXd var(kParamDim);
    var << alpha_sd.array().square(), beta_sd.array().square(), beta_sd.array().square();
    p.cov = var.asDiagonal();
    return p;
}

void HyperParams::validate(double noise_floor, double eig_floor) const {
    if (!(noise_var >= noise_floor) || !std::isfinite(noise_var))
        throw std::invalid_argument("noise variance below floor");
    if (random_effects_cov.rows() == 0 || random_effects_cov.rows() != random_effects_cov.cols())
        throw std::invalid_argument("random-effects covariance must be square");
    if ((random_effects_cov - random_effects_cov.transpose()).cwiseAbs().maxCoeff() > 1e-12)
        throw std::invalid_argument("random-effects covariance must be symmetric");
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(random_effects_cov, Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues().minCoeff();
    if (!(lo > 0.0) || lo < eig_floor) throw std::invalid_argument("random-effects covariance not positive definite");
}

HyperParams HyperParams::initial(int dim) {
    HyperParams hp;
    hp.noise_var = 0.85;
    hp.random_effects_cov = 0.01 * MatrixXd::Identity(dim, dim);
    return hp;
}

UserStats::UserStats(int dim) : gram(MatrixXd::Zero(dim, dim)), cross(VectorXd::Zero(dim)) {}

void UserStats::add(const VectorXd& phi, double reward) {
    if (phi.size() != cross.size()) throw std::invalid_argument("design vector has wrong length");
    gram.selfadjointView<Eigen::Lower>().rankUpdate(phi);
    gram.triangularView<Eigen::StrictlyUpper>() = gram.transpose();
    cross += reward * phi;
    ++count;
    sum_sq += reward * reward;
}

SufficientStats::SufficientStats(int dim, int num_users) : users(num_users, UserStats(dim)) {}

long SufficientStats::total_count() const {
    long n = 0;
    for (const auto& u : users) n += u.count;
    return n;
}

double SufficientStats::total_sum_sq() const {
    double s = 0.0;
    for (const auto& u : users) s += u.sum_sq;
    return s;
}

MatrixXd SufficientStats::block_gram() const {
    const int p = dim(), m = num_users();
    MatrixXd a = MatrixXd::Zero(p * m, p * m);
    for (int i = 0; i < m; ++i) a.block(i * p, i * p, p, p) = users[i].gram;
    return a;
}

VectorXd SufficientStats::stacked_cross() const {
    const int p = dim(), m = num_users();
    VectorXd b(p * m);
    for (int i = 0; i < m; ++i) b.segment(i * p, p) = users[i].cross;
    return b;
}

VectorXd PosteriorState::stacked_mean() const {
    const int p = dim(), m = num_users();
    VectorXd v(p * m);
    for (int i = 0; i < m; ++i) v.segment(i * p, p) = user_mean[i];
    return v;
}

PosteriorState prior_posterior(const PriorSpec& prior, const HyperParams& hp, int num_users) {
    PosteriorState out;
    const MatrixXd cov = prior.cov + hp.random_effects_cov;
    out.user_mean.assign(num_users, prior.mean);
    out.user_cov.assign(num_users, cov);
    return out;
}

MatrixXd build_sigma_theta_tilde(const PriorSpec& prior, const HyperParams& hp, int m) {
    if (m < 1) throw std::invalid_argument("m must be at least 1");
    const int p = prior.dim();
    if (hp.dim() != p) throw std::invalid_argument("hyperparameter dimension does not match prior");
    MatrixXd s(p * m, p * m);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) {
            if (i == j)
                s.block(i * p, j * p, p, p) = prior.cov + hp.random_effects_cov;
            else
                s.block(i * p, j * p, p, p) = prior.cov;
        }
    }
    return s;
}

VectorXd stack_prior_mean(const PriorSpec& prior, int m) {
    const int p = prior.dim();
    VectorXd v(p * m);
    for (int i = 0; i < m; ++i) v.segment(i * p, p) = prior.mean;
    return v;
}

StructuredFactor StructuredFactor::compute(const PriorSpec& prior, const HyperParams& hp,
                                           const SufficientStats& stats) {
    require_dims(prior, hp, stats);
    StructuredFactor f;
    f.dim = prior.dim();
    f.num_users = stats.num_users();
    f.noise_var = hp.noise_var;
    const int p = f.dim;
    const MatrixXd& su = hp.random_effects_cov;
    const MatrixXd eye = MatrixXd::Identity(p, p);

    f.prior_llt = checked_llt(prior.cov, "prior covariance");
    f.precision = f.prior_llt.solve(eye);
    f.eta = f.prior_llt.solve(prior.mean);

    f.m_lu.reserve(f.num_users);
    f.info.reserve(f.num_users);
    f.h.reserve(f.num_users);
    f.g.reserve(f.num_users);
    for (const auto& u : stats.users) {
        const MatrixXd mi = hp.noise_var * eye + u.gram * su;
        Eigen::PartialPivLU<MatrixXd> lu(mi);
        MatrixXd info = symmetrize(lu.solve(u.gram));
        VectorXd h = lu.solve(u.cross);
        // G_i = Sigma_u M_i^{-1} equals (sigma^2 Sigma_u^{-1} + A_i)^{-1}, hence symmetric.
        MatrixXd g = symmetrize(su * lu.inverse());
        f.precision += info;
        f.eta += h;
        f.m_lu.push_back(std::move(lu));
        f.info.push_back(std::move(info));
        f.h.push_back(std::move(h));
        f.g.push_back(std::move(g));
    }
    f.precision = symmetrize(f.precision);
    f.precision_llt = checked_llt(f.precision, "population precision");
    f.pop_cov = symmetrize(f.precision_llt.solve(eye));
    f.pop_mean = f.precision_llt.solve(f.eta);
    return f;
}

MatrixXd StructuredFactor::gain_complement(int i, const SufficientStats& stats) const {
    return MatrixXd::Identity(dim, dim) - g[i] * stats.users[i].gram;
}

VectorXd StructuredFactor::user_mean(int i, const SufficientStats& stats) const {
    const auto& u = stats.users[i];
    return pop_mean + g[i] * (u.cross - u.gram * pop_mean);
}

MatrixXd StructuredFactor::user_cov(int i, const SufficientStats& stats) const {
    const MatrixXd k = gain_complement(i, stats);
    return symmetrize(k * pop_cov * k.transpose() + noise_var * g[i]);
}

namespace {

PosteriorState dense_update(const PriorSpec& prior, const HyperParams& hp, const SufficientStats& stats) {
    const int p = prior.dim(), m = stats.num_users(), n = p * m;
    const MatrixXd tilde = build_sigma_theta_tilde(prior, hp, m);
    const auto tilde_llt = checked_llt(tilde, "Sigma_theta_tilde");
    const MatrixXd x = symmetrize(tilde_llt.solve(MatrixXd::Identity(n, n)));
    const double y = 1.0 / hp.noise_var;
    const MatrixXd precision = x + y * stats.block_gram();
    const auto post_llt = checked_llt(precision, "posterior precision");
    const VectorXd rhs = x * stack_prior_mean(prior, m) + y * stats.stacked_cross();

    PosteriorState out;
    const VectorXd mean = post_llt.solve(rhs);
    MatrixXd cov = symmetrize(post_llt.solve(MatrixXd::Identity(n, n)));
    for (int i = 0; i < m; ++i) {
        out.user_mean.push_back(mean.segment(i * p, p));
        out.user_cov.push_back(cov.block(i * p, i * p, p, p));
    }
    out.full_cov = std::move(cov);
    return out;
}

PosteriorState structured_update(const PriorSpec& prior, const HyperParams& hp, const SufficientStats& stats,
                                 bool full_covariance) {
    const auto f = StructuredFactor::compute(prior, hp, stats);
    const int p = f.dim, m = f.num_users;
    PosteriorState out;
    out.user_mean.reserve(m);
    out.user_cov.reserve(m);
    for (int i = 0; i < m; ++i) {
        out.user_mean.push_back(f.user_mean(i, stats));
        out.user_cov.push_back(f.user_cov(i, stats));
    }
    if (full_covariance) {
        std::vector<MatrixXd> k;
        k.reserve(m);
        for (int i = 0; i < m; ++i) k.push_back(f.gain_complement(i, stats));
        MatrixXd cov(p * m, p * m);
        for (int i = 0; i < m; ++i) {
            cov.block(i * p, i * p, p, p) = out.user_cov[i];
            const MatrixXd left = k[i] * f.pop_cov;
            for (int j = i + 1; j < m; ++j) {
                const MatrixXd c = left * k[j].transpose();
                cov.block(i * p, j * p, p, p) = c;
                cov.block(j * p, i * p, p, p) = c.transpose();
            }
        }
        out.full_cov = std::move(cov);
    }
    return out;
}

}  // namespace

PosteriorState posterior_update(const PriorSpec& prior, const HyperParams& hp, const SufficientStats& stats,
                                const PosteriorOptions& opts) {
    require_dims(prior, hp, stats);
    if (!(hp.noise_var > 0.0)) throw std::invalid_argument("noise variance must be positive");
    const int m = stats.num_users();

    if (stats.empty()) {
        // No data: the prior itself, returned exactly rather than through a solve.
        PosteriorState out = prior_posterior(prior, hp, m);
        if (opts.full_covariance || opts.method == SolveMethod::dense)
            out.full_cov = build_sigma_theta_tilde(prior, hp, m);
        return out;
    }
    if (opts.method == SolveMethod::dense) return dense_update(prior, hp, stats);
    return structured_update(prior, hp, stats, opts.full_covariance);
}

UserPosterior extract_user_posterior(const PosteriorState& p, int i) {
    if (i < 0 || i >= p.num_users()) throw std::out_of_range("user index out of range");
    return {p.user_mean[i], p.user_cov[i]};
}

}  // namespace rebandit
