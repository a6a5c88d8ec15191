#pragma once

#include "rebandit/linear_model.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace rebandit {

enum class Parameterization { diagonal_log, cholesky_full };

struct OptimizerConfig {
    double step_size = 0.05;
    int max_iters = 200;
    double grad_tol = 1e-5;
    double eig_floor = 1e-6;
    double sigma_floor = 1e-4;
    Parameterization parameterization = Parameterization::diagonal_log;
    int max_backtracks = 20;
    double max_step = 16.0;        // cap for the adaptive step multiplier
    double max_coord_change = 2.0;  // per-iteration trust region in coordinate space

    void validate() const;
};

/// Dense inputs of the marginal likelihood, in the literal X = Sigma_tilde^{-1}, y = 1/sigma^2 form.
struct MarginalObjectiveInputs {
    MatrixXd x;
    double y = 1.0;
    MatrixXd a;
    VectorXd b;
    VectorXd mu_theta;
    double sum_sq = 0.0;
    long mt = 0;

    static MarginalObjectiveInputs build(const PriorSpec& prior, const HyperParams& hp,
                                         const SufficientStats& stats);
};

/**
 * Twice the log marginal density of the rewards plus mt log(2 pi):
 *   log det X - log det(X + yA) + mt log y - y sum_sq - mu^T X mu
 *   + (X mu + yB)^T (X + yA)^{-1} (X mu + yB).
 */
double marginal_log_likelihood(const MarginalObjectiveInputs& in);

/// Same quantity computed user by user without forming the stacked matrices.
double marginal_log_likelihood(const PriorSpec& prior, const HyperParams& hp, const SufficientStats& stats);

/// Coordinates: diagonal_log = [log diag Sigma_u, log sigma^2];
/// cholesky_full = [row-major lower triangle of L with log diagonal, log sigma^2].
VectorXd to_coordinates(const HyperParams& hp, Parameterization param);
HyperParams from_coordinates(const VectorXd& coords, int dim, Parameterization param);
int coordinate_count(int dim, Parameterization param);

struct ObjectiveGradient {
    double value = 0.0;
    VectorXd gradient;
};

/// Objective value and its gradient with respect to the chosen coordinates.
ObjectiveGradient marginal_ll_gradient(const PriorSpec& prior, const HyperParams& hp,
                                       const SufficientStats& stats, Parameterization param);

struct AscentResult {
    VectorXd x;
    double value = 0.0;
    double grad_norm = 0.0;
    int iterations = 0;
    bool converged = false;
    bool warning = false;
    std::vector<double> trace;
};

struct AscentProblem {
    /// nullopt marks an infeasible or numerically failed point.
    std::function<std::optional<double>(const VectorXd&)> objective;
    std::function<VectorXd(const VectorXd&)> gradient;
    std::function<VectorXd(const VectorXd&)> project;
    VectorXd preconditioner;
};

/// Monotone projected gradient ascent with backtracking and step growth.
AscentResult projected_ascent(const AscentProblem& problem, const VectorXd& x0, const OptimizerConfig& cfg);

struct HyperUpdateResult {
    HyperParams hp;
    double initial_objective = 0.0;
    double final_objective = 0.0;
    int iterations = 0;
    bool converged = true;
    bool warning = false;
    std::string message;
    std::vector<double> trace;
};

HyperUpdateResult update_hyperparams(const PriorSpec& prior, const SufficientStats& stats,
                                     const HyperParams& hp_init, const OptimizerConfig& cfg = {});

/// Eigenvalue clamp of a symmetric matrix.
MatrixXd project_psd(const MatrixXd& m, double floor);

}  // namespace rebandit
