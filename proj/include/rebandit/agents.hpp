#pragma once

#include "rebandit/baselines.hpp"
#include "rebandit/empirical_bayes.hpp"
#include "rebandit/linear_model.hpp"
#include "rebandit/policy.hpp"

#include <memory>
#include <string>
#include <vector>

namespace rebandit {

enum class Algorithm { rebandit, blr, random };

std::string to_string(Algorithm a);
Algorithm parse_algorithm(const std::string& s);

struct AgentConfig {
    SmoothingParams smoothing;
    QuadratureConfig quadrature;
    SamplingMode sampling = SamplingMode::smooth;
    double lambda = 0.2;
    OptimizerConfig optimizer;
    SolveMethod solve_method = SolveMethod::structured;
    PriorSpec prior = PriorSpec::standard();
    HyperParams initial_hp = HyperParams::initial();

    void validate() const;
};

/// Summary of one batch update, written to trial logs and service reports.
struct UpdateReport {
    std::string kind;  // "nightly" or "weekly"
    double noise_var = 0.0;
    std::vector<double> re_cov_diag;  // empty for BLR and random
    double initial_objective = 0.0;
    double final_objective = 0.0;
    int iterations = 0;
    bool warning = false;
    std::string message;

    static UpdateReport named(std::string kind, double noise_var = 0.0) {
        UpdateReport r;
        r.kind = std::move(kind);
        r.noise_var = noise_var;
        return r;
    }
};

class Agent {
public:
    virtual ~Agent() = default;

    virtual Algorithm algorithm() const = 0;
    virtual std::unique_ptr<Agent> clone() const = 0;
    int num_users() const { return engineer_.num_users(); }
    const AgentConfig& config() const { return cfg_; }

    /// Send probability for `user` in state `s` under the latest completed posterior.
    virtual double probability(int user, const StateTriple& s) const = 0;

    /// Records one decision outcome and returns the engineered reward the model is fed.
    double observe(int user, const StateTriple& s, int action, double pi, double raw_reward);

    /// Nightly: recompute the posterior from everything observed so far.
    virtual UpdateReport update_posterior() = 0;
    /// Weekly: hyperparameter step, then a posterior recompute under the new values.
    virtual UpdateReport update_hyperparams() = 0;

    virtual double noise_var() const { return 0.0; }
    const RewardEngineer& engineer() const { return engineer_; }

protected:
    Agent(const AgentConfig& cfg, int num_users);
    virtual void record(int user, const VectorXd& phi, double engineered) = 0;

    AgentConfig cfg_;
    RewardEngineer engineer_;
};

class ReBanditAgent final : public Agent {
public:
    ReBanditAgent(const AgentConfig& cfg, int num_users);

    Algorithm algorithm() const override { return Algorithm::rebandit; }
    std::unique_ptr<Agent> clone() const override { return std::make_unique<ReBanditAgent>(*this); }
    double probability(int user, const StateTriple& s) const override;
    UpdateReport update_posterior() override;
    UpdateReport update_hyperparams() override;
    double noise_var() const override { return hp_.noise_var; }

    const HyperParams& hyperparams() const { return hp_; }
    const SufficientStats& stats() const { return stats_; }
    const PosteriorState& posterior() const { return post_; }

private:
    void record(int user, const VectorXd& phi, double engineered) override;
    UpdateReport report(const char* kind) const;

    HyperParams hp_;
    SufficientStats stats_;
    PosteriorState post_;
};

class BLRAgent final : public Agent {
public:
    BLRAgent(const AgentConfig& cfg, int num_users);

    Algorithm algorithm() const override { return Algorithm::blr; }
    std::unique_ptr<Agent> clone() const override { return std::make_unique<BLRAgent>(*this); }
    double probability(int user, const StateTriple& s) const override;
    UpdateReport update_posterior() override;
    UpdateReport update_hyperparams() override;
    double noise_var() const override { return state_.noise_var; }

    const BLRState& state() const { return state_; }

private:
    void record(int user, const VectorXd& phi, double engineered) override;

    BLRState state_;
    UserPosterior shared_;
};

class RandomAgent final : public Agent {
public:
    RandomAgent(const AgentConfig& cfg, int num_users) : Agent(cfg, num_users) {}

    Algorithm algorithm() const override { return Algorithm::random; }
    std::unique_ptr<Agent> clone() const override { return std::make_unique<RandomAgent>(*this); }
    double probability(int, const StateTriple&) const override { return random_policy(); }
    UpdateReport update_posterior() override { return UpdateReport::named("nightly"); }
    UpdateReport update_hyperparams() override { return UpdateReport::named("weekly"); }

private:
    void record(int, const VectorXd&, double) override {}
};

std::unique_ptr<Agent> make_agent(Algorithm algorithm, const AgentConfig& cfg, int num_users);

}  // namespace rebandit
