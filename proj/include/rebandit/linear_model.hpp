#pragma once

#include <Eigen/Dense>

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace rebandit {

inline constexpr int kFeatureDim = 8;
inline constexpr int kParamDim = 3 * kFeatureDim;
inline constexpr int kBetaOffset = kFeatureDim;

using Eigen::MatrixXd;
using Eigen::VectorXd;
using Features = Eigen::Matrix<double, kFeatureDim, 1>;

/// Context bits: s1 recent engagement, s2 evening, s3 no recent cannabis use.
struct StateTriple {
    int engagement = 0;
    int evening = 0;
    int no_use = 1;

    bool operator==(const StateTriple&) const = default;
};

void validate_state(const StateTriple& s);

/// [1, S1, S2, S3, S1S2, S2S3, S1S3, S1S2S3]; serves as both g(S) and f(S).
Features build_features(const StateTriple& s);

/// [g(S) | (a - pi) f(S) | pi f(S)].
VectorXd build_design(const StateTriple& s, int action, double pi);

/// Raised when a solve fails; carries the eigenvalue range of the offending matrix.
class NumericalError : public std::runtime_error {
public:
    NumericalError(const std::string& what, double min_eig, double max_eig);
    double min_eigenvalue() const noexcept { return min_eig_; }
    double max_eigenvalue() const noexcept { return max_eig_; }

private:
    double min_eig_;
    double max_eig_;
};

struct PriorSpec {
    VectorXd mean;
    MatrixXd cov;

    int dim() const { return static_cast<int>(mean.size()); }
    void validate() const;

    /// Population prior with the gamma block copying the beta block.
    static PriorSpec standard();
};

struct HyperParams {
    double noise_var = 0.85;
    MatrixXd random_effects_cov;

    int dim() const { return static_cast<int>(random_effects_cov.rows()); }
    void validate(double noise_floor = 1e-6, double eig_floor = 0.0) const;

    /// sigma^2 = 0.85, Sigma_u = 0.01 I.
    static HyperParams initial(int dim = kParamDim);
};

struct UserStats {
    MatrixXd gram;   // sum phi phi^T
    VectorXd cross;  // sum phi r
    long count = 0;
    double sum_sq = 0.0;

    UserStats() = default;
    explicit UserStats(int dim);

    void add(const VectorXd& phi, double reward);
    int dim() const { return static_cast<int>(cross.size()); }
};

struct SufficientStats {
    std::vector<UserStats> users;

    SufficientStats() = default;
    SufficientStats(int dim, int num_users);

    int dim() const { return users.empty() ? 0 : users.front().dim(); }
    int num_users() const { return static_cast<int>(users.size()); }
    long total_count() const;
    double total_sum_sq() const;
    bool empty() const { return total_count() == 0; }

    MatrixXd block_gram() const;   // blockdiag(A_i)
    VectorXd stacked_cross() const;
};

/// Posterior over the stacked per-user parameters.
struct PosteriorState {
    std::vector<VectorXd> user_mean;
    std::vector<MatrixXd> user_cov;
    std::optional<MatrixXd> full_cov;  // filled on the dense path or when requested

    int num_users() const { return static_cast<int>(user_mean.size()); }
    int dim() const { return user_mean.empty() ? 0 : static_cast<int>(user_mean.front().size()); }
    VectorXd stacked_mean() const;
};

/// The per-user marginal of the prior, used before any update has run.
PosteriorState prior_posterior(const PriorSpec& prior, const HyperParams& hp, int num_users);

enum class SolveMethod { dense, structured };

struct PosteriorOptions {
    SolveMethod method = SolveMethod::structured;
    bool full_covariance = false;
};

/// I_m (x) Sigma_u + J_m (x) Sigma_prior.
MatrixXd build_sigma_theta_tilde(const PriorSpec& prior, const HyperParams& hp, int m);

VectorXd stack_prior_mean(const PriorSpec& prior, int m);

PosteriorState posterior_update(const PriorSpec& prior, const HyperParams& hp,
                                const SufficientStats& stats, const PosteriorOptions& opts = {});

struct UserPosterior {
    VectorXd mean;
    MatrixXd cov;
};

UserPosterior extract_user_posterior(const PosteriorState& p, int i);

/**
 * Factorization that integrates out the random effects one user at a time.
 * With M_i = sigma^2 I + A_i Sigma_u:
 *   info_i = M_i^{-1} A_i, h_i = M_i^{-1} B_i, G_i = Sigma_u M_i^{-1},
 *   Lambda = Sigma_p^{-1} + sum info_i, eta = Sigma_p^{-1} mu_p + sum h_i,
 * and the population mean is lambda = Lambda^{-1} eta. Never inverts Sigma_u.
 */
struct StructuredFactor {
    int dim = 0;
    int num_users = 0;
    double noise_var = 0.0;
    std::vector<Eigen::PartialPivLU<MatrixXd>> m_lu;
    std::vector<MatrixXd> info;
    std::vector<VectorXd> h;
    std::vector<MatrixXd> g;
    Eigen::LLT<MatrixXd> prior_llt;
    MatrixXd precision;  // Lambda
    Eigen::LLT<MatrixXd> precision_llt;
    VectorXd eta;
    VectorXd pop_mean;  // lambda
    MatrixXd pop_cov;   // Lambda^{-1}

    static StructuredFactor compute(const PriorSpec& prior, const HyperParams& hp,
                                    const SufficientStats& stats);

    VectorXd user_mean(int i, const SufficientStats& stats) const;
    MatrixXd user_cov(int i, const SufficientStats& stats) const;
    /// I - G_i A_i
    MatrixXd gain_complement(int i, const SufficientStats& stats) const;
};

MatrixXd symmetrize(const MatrixXd& m);

/// Cholesky that throws NumericalError with eigen diagnostics on failure.
Eigen::LLT<MatrixXd> checked_llt(const MatrixXd& m, const char* what);

}  // namespace rebandit
