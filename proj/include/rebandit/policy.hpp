#pragma once

#include "rebandit/linear_model.hpp"
#include "rebandit/rng.hpp"

#include <vector>

namespace rebandit {

struct SmoothingParams {
    double l_min = 0.2;
    double l_max = 0.8;
    double c = 5.0;
    double b = 21.053;

    void validate() const;
};

/// Generalized logistic l_min + (l_max - l_min) / (1 + c exp(-b x)).
double rho(double x, const SmoothingParams& sp = {});

/**
 * Composite Gauss-Legendre rule for E[g(Z)], Z ~ N(m, s^2), in the standardized
 * variable over [-half_width, half_width]. Panels break at the integers and,
 * more densely, around the point where rho changes fastest.
 */
struct QuadratureConfig {
    int nodes_per_panel = 16;  // one of 8, 16, 32, 64
    double half_width = 9.0;
};

enum class SamplingMode {
    smooth,
    indicator,  // P(f^T beta > 0); test mode only
};

/// E[rho(Z)] for Z ~ N(mean, var).
double expected_rho(double mean, double var, const SmoothingParams& sp = {}, const QuadratureConfig& qc = {});

/// Probability of sending given the advantage block of a user's posterior.
double action_probability(const VectorXd& mu_beta, const MatrixXd& sigma_beta, const Features& f,
                          const SmoothingParams& sp = {}, const QuadratureConfig& qc = {},
                          SamplingMode mode = SamplingMode::smooth);

/// Convenience: takes the full 24-dim user posterior and slices the advantage block.
double action_probability(const UserPosterior& post, const StateTriple& s, const SmoothingParams& sp = {},
                          const QuadratureConfig& qc = {}, SamplingMode mode = SamplingMode::smooth);

struct ActionDraw {
    int action = 0;
    double draw = 0.0;
};

/// action = 1 iff draw < pi.
ActionDraw action_from_draw(double pi, double draw);
ActionDraw sample_action(double pi, StreamRng& rng);

/// Welford running moments of a user's raw rewards.
struct RunningMoments {
    long count = 0;
    double mean = 0.0;
    double m2 = 0.0;

    void add(double x);
    /// Sample standard deviation; 0 with fewer than two observations.
    double stddev() const;
};

/// raw - action * lambda * sigma_obs.
double engineer_reward(double raw, int action, double lambda, double sigma_obs);

class RewardEngineer {
public:
    RewardEngineer() = default;
    RewardEngineer(double lambda, int num_users);

    double lambda() const { return lambda_; }
    double sigma_obs(int user) const { return moments_.at(user).stddev(); }
    const RunningMoments& moments(int user) const { return moments_.at(user); }
    RunningMoments& moments(int user) { return moments_.at(user); }
    int num_users() const { return static_cast<int>(moments_.size()); }
    int add_user();

    /// Engineers with the history before this reward, then records the raw reward.
    double engineer_and_record(int user, double raw, int action);

private:
    double lambda_ = 0.2;
    std::vector<RunningMoments> moments_;
};

struct DecisionRecord {
    int user = 0;
    int t = 0;
    StateTriple state;
    double pi = 0.0;
    int action = 0;
    double raw_reward = 0.0;
    double engineered_reward = 0.0;
    double rng_draw = 0.0;
};

}  // namespace rebandit
