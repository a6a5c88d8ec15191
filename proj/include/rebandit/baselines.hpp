#pragma once

#include "rebandit/empirical_bayes.hpp"
#include "rebandit/linear_model.hpp"

#include <vector>

namespace rebandit {

/// Full-pooling Bayesian linear regression: one parameter vector shared by all users.
struct BLRState {
    VectorXd mean;
    MatrixXd cov;
    double noise_var = 0.85;
    UserStats pooled;

    static BLRState initial(const PriorSpec& prior, double noise_var = 0.85);
};

/// Recomputes the posterior from the pooled statistics and the current noise variance.
BLRState blr_posterior_update(const PriorSpec& prior, const BLRState& state);

/// Marginal objective in the same form as the mixed model, with X = Sigma_prior^{-1}.
double blr_marginal_log_likelihood(const PriorSpec& prior, const UserStats& pooled, double noise_var);

struct NoiseUpdateResult {
    double noise_var = 0.85;
    double initial_objective = 0.0;
    double final_objective = 0.0;
    int iterations = 0;
    bool warning = false;
    std::vector<double> trace;
};

/// Maximizes the marginal objective over sigma^2 >= sigma_floor, warm-started from state.noise_var.
NoiseUpdateResult blr_update_noise_variance(const PriorSpec& prior, const BLRState& state,
                                            const OptimizerConfig& cfg = {});

inline double random_policy() { return 0.5; }

}  // namespace rebandit
