#pragma once

#include "rebandit/agents.hpp"
#include "rebandit/sim_env.hpp"

#include "json.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace rebandit {

enum class LogMode { none, first, all };

struct TrialConfig {
    Algorithm algorithm = Algorithm::rebandit;
    int variant = 1;  // 1..15, or 0 when the env section is given explicitly
    EnvConfig env = EnvConfig::variant(1);
    int n_trials = 500;
    std::uint64_t seed = 1;
    int posterior_cadence = 2;    // decision points between posterior updates
    int hyperparam_cadence = 14;  // 0 disables hyperparameter updates
    AgentConfig agent;
    int threads = 0;  // 0: hardware concurrency
    double time_budget_s = 300.0;
    LogMode logs = LogMode::all;

    int decision_points() const { return env.decision_points(); }
    void validate() const;
};

/// Sets treatment, habituation and proportion from one of the 15 numbered variants.
void apply_variant(TrialConfig& cfg, int id);

nlohmann::json to_json(const AgentConfig& cfg);
AgentConfig agent_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const TrialConfig& cfg);
/// Fields missing from `j` keep their defaults; unknown keys are rejected.
TrialConfig trial_config_from_json(const nlohmann::json& j);
TrialConfig load_trial_config(const std::string& path);

std::uint64_t trial_seed(std::uint64_t root_seed, int trial_index);
std::uint64_t environment_key(std::uint64_t trial_seed);
std::uint64_t policy_key(std::uint64_t trial_seed);

struct TrialResult {
    int trial = 0;
    std::uint64_t seed = 0;
    std::vector<double> user_totals;  // sum of raw rewards per participant
    double mean_total = 0.0;
    double send_rate = 0.0;
    double min_pi = 1.0;
    double max_pi = 0.0;
    int update_warnings = 0;
    double seconds = 0.0;
    bool over_budget = false;
};

/// Runs one trial. When `log` is given, writes the JSON-lines TrialLog to it.
TrialResult run_trial(const TrialConfig& cfg, int trial_index, std::ostream* log = nullptr);

struct ConfidenceInterval {
    double mean = 0.0;
    double half_width = 0.0;
    double low() const { return mean - half_width; }
    double high() const { return mean + half_width; }
};

/// mean +- 1.96 standard errors.
ConfidenceInterval normal_ci(const std::vector<double>& xs);
bool overlaps(const ConfidenceInterval& a, const ConfidenceInterval& b);

struct Summary {
    ConfidenceInterval pooled;      // over all trial x participant totals
    ConfidenceInterval trial_mean;  // over per-trial means
    double send_rate = 0.0;
    int update_warnings = 0;
    int trials = 0;
    int users = 0;
};

Summary aggregate(const std::vector<TrialResult>& results);

/// Trials where a's per-trial mean strictly exceeds b's.
int pairwise_win_count(const std::vector<double>& a, const std::vector<double>& b);

struct Comparison {
    int wins_a = 0;
    int wins_b = 0;
    int ties = 0;
    bool ci_overlap = false;
    std::string label;  // green, yellow, blue, or worse
};

/// Classification of a against b: green when a's CI lies above b's, otherwise
/// yellow when a wins more than half of the seed-matched trials, otherwise blue.
Comparison compare(const ConfidenceInterval& a_ci, const std::vector<double>& a_means,
                   const ConfidenceInterval& b_ci, const std::vector<double>& b_means);

struct ExperimentOutput {
    std::vector<TrialResult> results;
    Summary summary;
};

/// Runs cfg.n_trials trials on a worker pool. With an output directory, writes
/// summary.csv, per_trial.csv, manifest.json and logs/trial_NNNN.jsonl.
ExperimentOutput run_experiment(const TrialConfig& cfg, const std::optional<std::string>& out_dir = std::nullopt);

struct ReplayReport {
    long decisions = 0;
    long pi_mismatches = 0;
    long action_mismatches = 0;
    long draw_mismatches = 0;
    int updates = 0;
    int update_mismatches = 0;
    double max_pi_diff = 0.0;
    bool ok() const { return pi_mismatches == 0 && action_mismatches == 0 && draw_mismatches == 0 && update_mismatches == 0; }
};

/// Rebuilds the agent from the log header and re-derives every probability and
/// action from the logged states and rewards; the environment is never consulted.
ReplayReport replay_trial_log(const std::string& path);

struct DirectoryComparison {
    std::string a_name, b_name;
    Summary a, b;
    Comparison result;
};

DirectoryComparison compare_directories(const std::string& a_dir, const std::string& b_dir);

}  // namespace rebandit
