#pragma once

#include "rebandit/agents.hpp"
#include "rebandit/rng.hpp"

#include "json.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace rebandit {

struct ServiceConfig {
    Algorithm algorithm = Algorithm::rebandit;
    AgentConfig agent;
    int max_users = 120;
    std::uint64_t seed = 1;
    int snapshot_every = 1;  // write a snapshot file after every n-th update

    void validate() const;
};

nlohmann::json to_json(const ServiceConfig& cfg);
ServiceConfig service_config_from_json(const nlohmann::json& j);
ServiceConfig load_service_config(const std::string& path);

/// Carries the HTTP status the error maps to.
class ServiceError : public std::runtime_error {
public:
    ServiceError(int status, const std::string& what) : std::runtime_error(what), status_(status) {}
    int status() const noexcept { return status_; }

private:
    int status_;
};

struct ServiceRequest {
    std::string method;
    std::string path;
    std::string body;
    std::string admin_token;  // as presented by the client
};

struct ServiceResponse {
    int status = 200;
    nlohmann::json body;
};

/**
 * Study state behind the HTTP endpoints. Every state change is appended to
 * state_dir/events.jsonl and fsync'd before the call returns; opening an
 * existing directory replays that log and checks each re-derived decision and
 * update against what was recorded.
 *
 * Decisions read an immutable snapshot of the policy, so they proceed while an
 * update is computing. Rewards, registrations and updates go through a single
 * writer lock.
 */
class StudyService {
public:
    /// Creates or recovers the study in `state_dir`. An existing log must have been written with the same config.
    StudyService(const std::string& state_dir, const ServiceConfig& cfg, std::string admin_token = {});
    ~StudyService();

    StudyService(const StudyService&) = delete;
    StudyService& operator=(const StudyService&) = delete;

    ServiceResponse handle(const ServiceRequest& req);

    nlohmann::json register_user(const nlohmann::json& payload);
    nlohmann::json decide(const nlohmann::json& payload);
    nlohmann::json reward(const nlohmann::json& payload);
    nlohmann::json update(const nlohmann::json& payload, const std::string& admin_token);
    nlohmann::json status() const;

    /// Hyperparameters, per-user posterior means, RNG counters and decision tallies; equal digests mean equal state.
    nlohmann::json digest() const;

    const ServiceConfig& config() const { return cfg_; }
    long replayed_events() const { return replayed_; }

private:
    struct Decision {
        int user = 0;
        StateTriple state;
        double pi = 0.0;
        int action = 0;
        bool rewarded = false;
    };
    struct UserState {
        std::string external_key;
        int decisions = 0;
        std::uint64_t rng_counter = 0;
        std::vector<int> rewards;  // raw, in arrival order
    };

    void replay();
    void append(const nlohmann::json& event);
    void write_snapshot();
    void check_snapshot() const;
    std::shared_ptr<const Agent> current() const;

    nlohmann::json do_register(const std::string& key);
    nlohmann::json do_decide(int user, const nlohmann::json& report);
    nlohmann::json do_reward(long id, int raw);
    nlohmann::json do_update(const std::string& kind);

    ServiceConfig cfg_;
    std::string dir_;
    std::string admin_token_;
    int fd_ = -1;
    bool replaying_ = false;
    long replayed_ = 0;

    std::unique_ptr<Agent> live_;  // writer-side model; touched under writer_mu_
    std::shared_ptr<const Agent> snapshot_;
    mutable std::mutex snap_mu_;

    mutable std::mutex writer_mu_;
    mutable std::mutex state_mu_;  // log handle, users, decisions
    StreamRng policy_root_;
    std::vector<UserState> users_;
    std::map<std::string, int> by_key_;
    std::vector<Decision> decisions_;
    int updates_ = 0;
};

}  // namespace rebandit
