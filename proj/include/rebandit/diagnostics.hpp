#pragma once

#include "rebandit/linear_model.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace rebandit {

/**
 * Population averages through which every user's posterior depends on the rest
 * of the cohort. With Psi_i = sigma^2 Sigma_u^{-1} + A_i:
 *   T1 = mean B_i, T2 = mean A_i Psi_i^{-1} B_i, T3 = mean A_i, T4 = mean A_i Psi_i^{-1} A_i,
 *   E = Sigma_p^{-1}/m + (T3 - T4)/sigma^2,
 *   lambda = E^{-1} (Sigma_p^{-1} mu_p / m + (T1 - T2)/sigma^2).
 */
struct PopulationStatistics {
    int num_users = 0;
    double noise_var = 0.0;
    VectorXd t1, t2;
    MatrixXd t3, t4;
    MatrixXd e;
    VectorXd lambda;
    std::vector<MatrixXd> psi;
};

/// Throws NumericalError when Sigma_u or some Psi_i is not positive definite.
PopulationStatistics population_statistics(const PriorSpec& prior, const HyperParams& hp, const SufficientStats& stats);

/// Joint Gaussian posterior of (theta_pop, u_i) for one user.
struct JointPosterior {
    VectorXd pop_mean;   // lambda
    VectorXd user_mean;  // Psi_i^{-1} (B_i - A_i lambda)
    MatrixXd v1, v2, v3, v4;

    /// Moments of theta_i = theta_pop + u_i.
    VectorXd theta_mean() const { return pop_mean + user_mean; }
    MatrixXd theta_cov() const { return v1 + v2 + v3 + v4; }
};

JointPosterior joint_posterior(const PopulationStatistics& ps, const SufficientStats& stats, int user);
std::vector<JointPosterior> joint_posterior(const PriorSpec& prior, const HyperParams& hp, const SufficientStats& stats);

/// Replays a reBandit trial log and writes one CSV row of population statistics per update.
void diagnose_trial_log(const std::string& path, std::ostream& csv);

}  // namespace rebandit
