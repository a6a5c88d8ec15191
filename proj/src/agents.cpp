#include "rebandit/agents.hpp"

#include <stdexcept>

namespace rebandit {

std::string to_string(Algorithm a) {
    switch (a) {
        case Algorithm::rebandit: return "rebandit";
        case Algorithm::blr: return "blr";
        case Algorithm::random: return "random";
    }
    return "rebandit";
}

Algorithm parse_algorithm(const std::string& s) {
    if (s == "rebandit") return Algorithm::rebandit;
    if (s == "blr") return Algorithm::blr;
    if (s == "random") return Algorithm::random;
    throw std::invalid_argument("unknown algorithm: " + s);
}

void AgentConfig::validate() const {
    smoothing.validate();
    optimizer.validate();
    prior.validate();
    initial_hp.validate();
    if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be non-negative");
    if (initial_hp.dim() != prior.dim()) throw std::invalid_argument("hyperparameter and prior dimensions differ");
    const int n = quadrature.nodes_per_panel;
    if (n != 8 && n != 16 && n != 32 && n != 64) throw std::invalid_argument("nodes_per_panel must be 8, 16, 32 or 64");
    if (!(quadrature.half_width > 0.0)) throw std::invalid_argument("quadrature half_width must be positive");
}

Agent::Agent(const AgentConfig& cfg, int num_users) : cfg_(cfg), engineer_(cfg.lambda, num_users) {
    cfg_.validate();
    if (num_users < 1) throw std::invalid_argument("num_users must be at least 1");
}

double Agent::observe(int user, const StateTriple& s, int action, double pi, double raw_reward) {
    const double engineered = engineer_.engineer_and_record(user, raw_reward, action);
    record(user, build_design(s, action, pi), engineered);
    return engineered;
}

ReBanditAgent::ReBanditAgent(const AgentConfig& cfg, int num_users)
    : Agent(cfg, num_users),
      hp_(cfg.initial_hp),
      stats_(cfg.prior.dim(), num_users),
      post_(prior_posterior(cfg.prior, cfg.initial_hp, num_users)) {}

double ReBanditAgent::probability(int user, const StateTriple& s) const {
    return action_probability(extract_user_posterior(post_, user), s, cfg_.smoothing, cfg_.quadrature, cfg_.sampling);
}

void ReBanditAgent::record(int user, const VectorXd& phi, double engineered) { stats_.users.at(user).add(phi, engineered); }

UpdateReport ReBanditAgent::report(const char* kind) const {
    UpdateReport r;
    r.kind = kind;
    r.noise_var = hp_.noise_var;
    const VectorXd d = hp_.random_effects_cov.diagonal();
    r.re_cov_diag.assign(d.data(), d.data() + d.size());
    return r;
}

UpdateReport ReBanditAgent::update_posterior() {
    UpdateReport r = report("nightly");
    try {
        post_ = posterior_update(cfg_.prior, hp_, stats_, {cfg_.solve_method, false});
    } catch (const NumericalError& e) {
        r.warning = true;
        r.message = std::string("posterior update kept previous snapshot: ") + e.what();
    }
    return r;
}

UpdateReport ReBanditAgent::update_hyperparams() {
    HyperUpdateResult res;
    std::string failure;
    try {
        res = rebandit::update_hyperparams(cfg_.prior, stats_, hp_, cfg_.optimizer);
    } catch (const NumericalError& e) {
        failure = e.what();
    }
    if (failure.empty()) hp_ = res.hp;
    UpdateReport post = update_posterior();
    UpdateReport r = report("weekly");
    r.initial_objective = res.initial_objective;
    r.final_objective = res.final_objective;
    r.iterations = res.iterations;
    r.warning = res.warning || post.warning || !failure.empty();
    r.message = !failure.empty() ? "hyperparameter update failed, kept previous values: " + failure : res.message;
    if (post.warning) r.message += (r.message.empty() ? "" : "; ") + post.message;
    return r;
}

BLRAgent::BLRAgent(const AgentConfig& cfg, int num_users)
    : Agent(cfg, num_users), state_(BLRState::initial(cfg.prior, cfg.initial_hp.noise_var)) {
    shared_ = {state_.mean, state_.cov};
}

double BLRAgent::probability(int, const StateTriple& s) const {
    return action_probability(shared_, s, cfg_.smoothing, cfg_.quadrature, cfg_.sampling);
}

void BLRAgent::record(int, const VectorXd& phi, double engineered) { state_.pooled.add(phi, engineered); }

UpdateReport BLRAgent::update_posterior() {
    UpdateReport r = UpdateReport::named("nightly", state_.noise_var);
    try {
        state_ = blr_posterior_update(cfg_.prior, state_);
        shared_ = {state_.mean, state_.cov};
    } catch (const NumericalError& e) {
        r.warning = true;
        r.message = std::string("posterior update kept previous snapshot: ") + e.what();
    }
    return r;
}

UpdateReport BLRAgent::update_hyperparams() {
    UpdateReport r = UpdateReport::named("weekly");
    try {
        const NoiseUpdateResult res = blr_update_noise_variance(cfg_.prior, state_, cfg_.optimizer);
        state_.noise_var = res.noise_var;
        r.initial_objective = res.initial_objective;
        r.final_objective = res.final_objective;
        r.iterations = res.iterations;
        r.warning = res.warning;
        if (res.warning) r.message = "noise-variance ascent stopped before convergence";
    } catch (const NumericalError& e) {
        r.warning = true;
        r.message = std::string("noise-variance update failed, kept previous value: ") + e.what();
    }
    const UpdateReport post = update_posterior();
    r.noise_var = state_.noise_var;
    if (post.warning) {
        r.warning = true;
        r.message += (r.message.empty() ? "" : "; ") + post.message;
    }
    return r;
}

std::unique_ptr<Agent> make_agent(Algorithm algorithm, const AgentConfig& cfg, int num_users) {
    switch (algorithm) {
        case Algorithm::rebandit: return std::make_unique<ReBanditAgent>(cfg, num_users);
        case Algorithm::blr: return std::make_unique<BLRAgent>(cfg, num_users);
        case Algorithm::random: return std::make_unique<RandomAgent>(cfg, num_users);
    }
    throw std::invalid_argument("unknown algorithm");
}

}  // namespace rebandit
