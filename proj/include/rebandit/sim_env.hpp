#pragma once

#include "rebandit/linear_model.hpp"
#include "rebandit/rng.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace rebandit {

inline constexpr int kRewardClasses = 4;
inline constexpr int kBaseWeights = 6;
inline constexpr int kEnvWeights = 2 * kBaseWeights + 1;  // baseline, advantage, dosage
inline constexpr int kAdvIntercept = kBaseWeights;
inline constexpr int kDosageCol = 2 * kBaseWeights;
inline constexpr int kDosageWindow = 6;

using ClassWeights = Eigen::Matrix<double, kRewardClasses, kEnvWeights>;
using BaseWeights = Eigen::Matrix<double, kRewardClasses, 2 * kBaseWeights>;
using RewardProbs = Eigen::Matrix<double, kRewardClasses, 1>;

enum class TreatmentEffect { minimal, low, high };
enum class Habituation { none, low, high };

double treatment_multiplier(TreatmentEffect te);
double habituation_eta(Habituation hb);  // 0 for none
std::string to_string(TreatmentEffect te);
std::string to_string(Habituation hb);
TreatmentEffect parse_treatment_effect(const std::string& s);
Habituation parse_habituation(const std::string& s);

/// Four-class multinomial-logistic participant. Columns: [intercept, survey, app,
/// cannabis, weekend, day] for the baseline, the same six times the action, then dosage.
struct UserModelMLR {
    ClassWeights weights = ClassWeights::Zero();
    bool has_habituation = false;
    std::string source;
};

/// Covariates entering the participant model at one decision point.
struct EnvFeatures {
    double survey = 0.0;
    double app = 0.0;
    double cannabis = 0.0;
    double weekend = 0.0;
    double day = 0.0;
    double dosage = 0.0;
};

Eigen::Matrix<double, kEnvWeights, 1> model_inputs(const EnvFeatures& x, int action);
RewardProbs reward_probabilities(const UserModelMLR& model, const EnvFeatures& x, int action);
int reward_from_uniform(const RewardProbs& probs, double u);
int sample_reward(const UserModelMLR& model, const EnvFeatures& x, int action, StreamRng& rng);

UserModelMLR apply_treatment_effect(const UserModelMLR& model, TreatmentEffect level);
UserModelMLR apply_habituation(const UserModelMLR& model, double eta);

/// Exponentially weighted share of the last six decision points with a message.
struct DosageState {
    double kappa = 5.0 / 6.0;
    std::array<int, kDosageWindow> history{};  // most recent first

    double d_kappa() const;
    double value() const;
    void push(int action);
};

/// history[0] is the most recent action.
double compute_dosage(const std::array<int, kDosageWindow>& history, double kappa = 5.0 / 6.0);

struct Observables {
    int survey_completion = 0;
    int app_usage = 0;
    int activity = 0;
};

Observables synthesize_observables(int prev_reward);
StateTriple initial_state();

/// s1 from the trailing rewards: mean of the last three (or fewer, if that is all there is) >= 2.
int engagement_from_rewards(const std::vector<int>& rewards);

/// s3: 0 when the report is missing or reports use.
int no_use_from_report(std::optional<int> reported_use);

struct PopulationConfig {
    int pool_size = 42;
    double heterogeneity = 1.0;  // scales per-model dispersion around the mean weights
    BaseWeights mean = default_mean();
    BaseWeights scale = default_scale();
    std::optional<std::string> weight_file;

    // Exogenous per-participant processes.
    double survey_beta_a = 4.0, survey_beta_b = 2.0;
    double app_beta_a = 2.0, app_beta_b = 2.0;
    double app_noise_sd = 0.25;
    double use_beta_a = 3.0, use_beta_b = 2.0;

    static BaseWeights default_mean();
    static BaseWeights default_scale();
};

struct EnvConfig {
    TreatmentEffect treatment = TreatmentEffect::minimal;
    Habituation habituation = Habituation::none;
    double habituation_proportion = 0.0;
    int num_users = 120;
    int days = 30;
    PopulationConfig population;
    std::optional<int> constant_reward;  // test hook: every reward equals this value

    int decision_points() const { return 2 * days; }
    void validate() const;

    /// The 15 combinations of treatment effect and habituation, numbered 1..15.
    static EnvConfig variant(int id);
    static constexpr int kVariantCount = 15;
};

/// Base models either from the weight file or synthesized from the population stream.
std::vector<UserModelMLR> generate_base_pool(const PopulationConfig& cfg, StreamRng& rng);

std::vector<UserModelMLR> load_weight_file(const std::string& path);
void save_weight_file(const std::string& path, const std::vector<UserModelMLR>& models);

struct PopulationDraw {
    std::vector<UserModelMLR> models;  // one per participant, variants applied
    std::vector<int> base_index;
};

/// m participants drawn with replacement from the pool, then variant transforms applied.
PopulationDraw generate_user_population(const EnvConfig& cfg, StreamRng& rng);

struct ParticipantTraits {
    double survey_rate = 0.0;
    double app_level = 0.0;
    double use_rate = 0.0;
};

struct EnvStep {
    int reward = 0;
    EnvFeatures features;
    int cannabis_use = 0;
    StateTriple next_state;
};

/**
 * One simulated cohort. Draws for (participant, t) come from their own stream,
 * in a fixed order that does not depend on the action, so two algorithms run on
 * the same trial key see identical covariates and reward uniforms.
 */
class Environment {
public:
    Environment(const EnvConfig& cfg, std::uint64_t trial_key);

    int num_users() const { return static_cast<int>(users_.size()); }
    int decision_points() const { return cfg_.decision_points(); }
    const EnvConfig& config() const { return cfg_; }

    StateTriple state(int user) const { return users_.at(user).state; }
    const UserModelMLR& model(int user) const { return users_.at(user).model; }
    const ParticipantTraits& traits(int user) const { return users_.at(user).traits; }
    int base_index(int user) const { return users_.at(user).base_index; }

    /// Advances participant `user` through decision point t (0-based, strictly in order).
    EnvStep step(int user, int t, int action);

private:
    struct Participant {
        UserModelMLR model;
        int base_index = 0;
        ParticipantTraits traits;
        DosageState dosage;
        std::vector<int> rewards;
        StateTriple state = initial_state();
        int next_t = 0;
    };

    EnvConfig cfg_;
    std::uint64_t env_key_ = 0;
    std::vector<Participant> users_;
};

/// Covariates used by the participant model for day d (1-based) of D.
double normalized_day(int day, int days);
bool is_weekend(int day);
double normalized_grams(double grams);

}  // namespace rebandit
