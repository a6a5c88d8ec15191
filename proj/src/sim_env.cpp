#include "rebandit/sim_env.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace rebandit {

namespace {

constexpr std::array<double, 6> kGramsGrid{0.25, 0.5, 1.0, 1.5, 2.0, 2.5};
constexpr double kMaxGrams = 2.5;
constexpr const char* kWeightSchema = "rebandit-user-models";
constexpr int kWeightSchemaVersion = 1;

}  // namespace

double treatment_multiplier(TreatmentEffect te) {
    switch (te) {
        case TreatmentEffect::minimal: return 1.0;
        case TreatmentEffect::low: return 0.7;
        case TreatmentEffect::high: return 2.5;
    }
    return 1.0;
}

double habituation_eta(Habituation hb) {
    switch (hb) {
        case Habituation::none: return 0.0;
        case Habituation::low: return 6.0;
        case Habituation::high: return 1.0;
    }
    return 0.0;
}

std::string to_string(TreatmentEffect te) {
    switch (te) {
        case TreatmentEffect::minimal: return "minimal";
        case TreatmentEffect::low: return "low";
        case TreatmentEffect::high: return "high";
    }
    return "minimal";
}

std::string to_string(Habituation hb) {
    switch (hb) {
        case Habituation::none: return "none";
        case Habituation::low: return "low";
        case Habituation::high: return "high";
    }
    return "none";
}

TreatmentEffect parse_treatment_effect(const std::string& s) {
    if (s == "minimal") return TreatmentEffect::minimal;
    if (s == "low") return TreatmentEffect::low;
    if (s == "high") return TreatmentEffect::high;
    throw std::invalid_argument("unknown treatment effect: " + s);
}

Habituation parse_habituation(const std::string& s) {
    if (s == "none") return Habituation::none;
    if (s == "low") return Habituation::low;
    if (s == "high") return Habituation::high;
    throw std::invalid_argument("unknown habituation level: " + s);
}

Eigen::Matrix<double, kEnvWeights, 1> model_inputs(const EnvFeatures& x, int action) {
    Eigen::Matrix<double, kBaseWeights, 1> base;
    base << 1.0, x.survey, x.app, x.cannabis, x.weekend, x.day;
    Eigen::Matrix<double, kEnvWeights, 1> v;
    v << base, action * base, x.dosage;
    return v;
}

RewardProbs reward_probabilities(const UserModelMLR& model, const EnvFeatures& x, int action) {
    const RewardProbs logits = model.weights * model_inputs(x, action);
    const RewardProbs e = (logits.array() - logits.maxCoeff()).exp();
    return e / e.sum();
}

int reward_from_uniform(const RewardProbs& probs, double u) {
    return static_cast<int>(StreamRng::categorical_from_uniform({probs.data(), kRewardClasses}, u));
}

int sample_reward(const UserModelMLR& model, const EnvFeatures& x, int action, StreamRng& rng) {
    return reward_from_uniform(reward_probabilities(model, x, action), rng.uniform());
}

UserModelMLR apply_treatment_effect(const UserModelMLR& model, TreatmentEffect level) {
    if (level == TreatmentEffect::minimal) return model;
    UserModelMLR out = model;
    auto col = out.weights.col(kAdvIntercept);
    Eigen::Index lowest = 0;
    col.minCoeff(&lowest);
    if (lowest != 0) std::swap(col(0), col(lowest));
    // Classes 2 and 3 share their (post-swap) average.
    const double avg = 0.5 * (col(2) + col(3));
    col(2) = avg;
    col(3) = avg;
    col *= treatment_multiplier(level);
    return out;
}

UserModelMLR apply_habituation(const UserModelMLR& model, double eta) {
    if (!(eta > 0.0)) throw std::invalid_argument("eta must be positive");
    UserModelMLR out = model;
    const auto sums = model.weights.leftCols<kBaseWeights>().rowwise().sum();
    const double sign = sums(0) >= 0.0 ? 1.0 : -1.0;
    out.weights.col(kDosageCol) = sign * sums / eta;
    out.has_habituation = true;
    return out;
}

double DosageState::d_kappa() const { return (1.0 - kappa) / (1.0 - std::pow(kappa, kDosageWindow)); }

double DosageState::value() const { return compute_dosage(history, kappa); }

void DosageState::push(int action) {
    std::rotate(history.rbegin(), history.rbegin() + 1, history.rend());
    history[0] = action;
}

double compute_dosage(const std::array<int, kDosageWindow>& history, double kappa) {
    const double d = (1.0 - kappa) / (1.0 - std::pow(kappa, kDosageWindow));
    double q = 0.0, w = 1.0;
    for (int j = 0; j < kDosageWindow; ++j, w *= kappa) q += w * history[j];
    return d * q;
}

Observables synthesize_observables(int prev_reward) {
    if (prev_reward < 0 || prev_reward > 3) throw std::invalid_argument("reward must be in {0,1,2,3}");
    return {prev_reward >= 2 ? 1 : 0, prev_reward >= 1 ? 1 : 0, prev_reward == 3 ? 1 : 0};
}

StateTriple initial_state() { return {0, 0, 1}; }

int engagement_from_rewards(const std::vector<int>& rewards) {
    if (rewards.empty()) return 0;
    const std::size_t k = std::min<std::size_t>(3, rewards.size());
    const int sum = std::accumulate(rewards.end() - static_cast<std::ptrdiff_t>(k), rewards.end(), 0);
    return static_cast<double>(sum) / static_cast<double>(k) >= 2.0 ? 1 : 0;
}

int no_use_from_report(std::optional<int> reported_use) {
    if (!reported_use) return 0;
    return *reported_use ? 0 : 1;
}

BaseWeights PopulationConfig::default_mean() {
    // Rows are reward classes 0..3; columns sum to zero across classes.
    BaseWeights w;
    //     int    survey app    cann   wknd  day  | a*int  a*surv a*app a*cann a*wknd a*day
    w << -0.6, -1.2, -1.0, 0.1, 0.0, 0.1, -0.05, 0.0, 0.0, 0.0, 0.0, 0.0,
          0.3, -0.2, 0.4, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
          0.2, 0.7, 0.3, -0.05, 0.0, -0.05, 0.03, 0.0, 0.0, 0.0, 0.0, 0.0,
          0.1, 0.7, 0.3, -0.05, 0.0, -0.05, 0.02, 0.0, 0.0, 0.0, 0.0, 0.0;
    return w;
}

BaseWeights PopulationConfig::default_scale() {
    BaseWeights s;
    Eigen::Matrix<double, 1, 2 * kBaseWeights> row;
    row << 0.5, 0.4, 0.4, 0.2, 0.2, 0.2, 1.0, 0.2, 0.2, 0.2, 0.2, 0.2;
    s.rowwise() = row;
    return s;
}

void EnvConfig::validate() const {
    if (num_users < 1) throw std::invalid_argument("num_users must be at least 1");
    if (days < 1) throw std::invalid_argument("days must be at least 1");
    if (!(habituation_proportion >= 0.0 && habituation_proportion <= 1.0))
        throw std::invalid_argument("habituation_proportion must lie in [0, 1]");
    if (!(population.heterogeneity >= 0.0 && population.heterogeneity <= 1.0))
        throw std::invalid_argument("heterogeneity must lie in [0, 1]");
    if (population.pool_size < 1) throw std::invalid_argument("pool_size must be at least 1");
    if (constant_reward && (*constant_reward < 0 || *constant_reward > 3))
        throw std::invalid_argument("constant_reward must be in {0,1,2,3}");
}

EnvConfig EnvConfig::variant(int id) {
    if (id < 1 || id > kVariantCount) throw std::invalid_argument("variant id must be in 1..15");
    EnvConfig cfg;
    const int group = (id - 1) / 5, k = (id - 1) % 5;
    cfg.treatment = group == 0 ? TreatmentEffect::minimal : group == 1 ? TreatmentEffect::low : TreatmentEffect::high;
    if (k == 0) {
        cfg.habituation = Habituation::none;
        cfg.habituation_proportion = 0.0;
    } else {
        cfg.habituation = k <= 2 ? Habituation::low : Habituation::high;
        cfg.habituation_proportion = (k % 2 == 1) ? 0.5 : 1.0;
    }
    return cfg;
}

std::vector<UserModelMLR> generate_base_pool(const PopulationConfig& cfg, StreamRng& rng) {
    if (cfg.weight_file) return load_weight_file(*cfg.weight_file);
    std::vector<UserModelMLR> pool;
    pool.reserve(cfg.pool_size);
    for (int k = 0; k < cfg.pool_size; ++k) {
        StreamRng r = rng.substream(static_cast<std::uint64_t>(k));
        BaseWeights z;
        for (int c = 0; c < kRewardClasses; ++c)
            for (int j = 0; j < 2 * kBaseWeights; ++j) z(c, j) = r.normal();
        BaseWeights w = cfg.mean + cfg.heterogeneity * cfg.scale.cwiseProduct(z);
        w.rowwise() -= w.colwise().mean();
        UserModelMLR m;
        m.weights.leftCols<2 * kBaseWeights>() = w;
        m.weights.col(kDosageCol).setZero();
        m.source = "synthetic:" + std::to_string(k);
        pool.push_back(std::move(m));
    }
    return pool;
}

std::vector<UserModelMLR> load_weight_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open weight file: " + path);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("malformed weight file " + path + ": " + e.what());
    }
    const auto fail = [&](const std::string& why) { throw std::runtime_error("malformed weight file " + path + ": " + why); };
    if (!doc.is_object() || doc.value("schema", "") != kWeightSchema) fail("missing or wrong schema tag");
    if (doc.value("version", 0) != kWeightSchemaVersion) fail("unsupported version");
    if (!doc.contains("models") || !doc["models"].is_array() || doc["models"].empty()) fail("no models");

    std::vector<UserModelMLR> out;
    for (std::size_t k = 0; k < doc["models"].size(); ++k) {
        const auto& jm = doc["models"][k];
        if (!jm.contains("weights") || !jm["weights"].is_array() || jm["weights"].size() != kRewardClasses)
            fail("model " + std::to_string(k) + " needs 4 weight rows");
        UserModelMLR m;
        for (int c = 0; c < kRewardClasses; ++c) {
            const auto& row = jm["weights"][c];
            if (!row.is_array() || (row.size() != 2 * kBaseWeights && row.size() != kEnvWeights))
                fail("model " + std::to_string(k) + " rows need 12 or 13 numbers");
            for (std::size_t j = 0; j < row.size(); ++j) {
                if (!row[j].is_number()) fail("non-numeric weight");
                m.weights(c, static_cast<int>(j)) = row[j].get<double>();
            }
        }
        m.has_habituation = jm.value("has_habituation", false);
        if (!m.has_habituation && !m.weights.col(kDosageCol).isZero())
            fail("model " + std::to_string(k) + " has dosage weights without habituation");
        m.source = "file:" + jm.value("id", std::to_string(k));
        out.push_back(std::move(m));
    }
    return out;
}

void save_weight_file(const std::string& path, const std::vector<UserModelMLR>& models) {
    nlohmann::json doc;
    doc["schema"] = kWeightSchema;
    doc["version"] = kWeightSchemaVersion;
    doc["models"] = nlohmann::json::array();
    for (std::size_t k = 0; k < models.size(); ++k) {
        nlohmann::json jm;
        jm["id"] = std::to_string(k);
        jm["has_habituation"] = models[k].has_habituation;
        jm["weights"] = nlohmann::json::array();
        for (int c = 0; c < kRewardClasses; ++c) {
            std::vector<double> row(kEnvWeights);
            for (int j = 0; j < kEnvWeights; ++j) row[j] = models[k].weights(c, j);
            jm["weights"].push_back(row);
        }
        doc["models"].push_back(jm);
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write weight file: " + path);
    out << doc.dump(2) << '\n';
}

PopulationDraw generate_user_population(const EnvConfig& cfg, StreamRng& rng) {
    cfg.validate();
    StreamRng pool_rng = rng.substream("pool");
    const auto pool = generate_base_pool(cfg.population, pool_rng);
    StreamRng pick = rng.substream("draw");
    PopulationDraw out;
    for (int i = 0; i < cfg.num_users; ++i) {
        const int k = static_cast<int>(pick.below(pool.size()));
        out.base_index.push_back(k);
        out.models.push_back(apply_treatment_effect(pool[k], cfg.treatment));
    }
    if (cfg.habituation != Habituation::none) {
        const int count = static_cast<int>(std::lround(cfg.habituation_proportion * cfg.num_users));
        std::vector<int> order(cfg.num_users);
        std::iota(order.begin(), order.end(), 0);
        StreamRng shuffle = rng.substream("habituation");
        for (int k = 0; k < count; ++k) {
            const int j = k + static_cast<int>(shuffle.below(static_cast<std::size_t>(cfg.num_users - k)));
            std::swap(order[k], order[j]);
            out.models[order[k]] = apply_habituation(out.models[order[k]], habituation_eta(cfg.habituation));
        }
    }
    return out;
}

double normalized_day(int day, int days) {
    if (days <= 1) return 0.0;
    return (day - 0.5 * (days + 1)) / (0.5 * (days - 1));
}

bool is_weekend(int day) {
    const int dow = (day - 1) % 7;  // day 1 is a Monday
    return dow == 5 || dow == 6;
}

double normalized_grams(double grams) { return std::clamp(2.0 * grams / kMaxGrams - 1.0, -1.0, 1.0); }

Environment::Environment(const EnvConfig& cfg, std::uint64_t trial_key) : cfg_(cfg) {
    cfg_.validate();
    const StreamRng root(trial_key);
    StreamRng pop_rng = root.substream("population");
    auto pop = generate_user_population(cfg_, pop_rng);
    const StreamRng trait_rng = root.substream("traits");
    env_key_ = derive_key(trial_key, "environment");

    const auto& pc = cfg_.population;
    users_.resize(cfg_.num_users);
    for (int i = 0; i < cfg_.num_users; ++i) {
        auto& u = users_[i];
        u.model = std::move(pop.models[i]);
        u.base_index = pop.base_index[i];
        StreamRng r = trait_rng.substream(static_cast<std::uint64_t>(i));
        u.traits.survey_rate = r.beta(pc.survey_beta_a, pc.survey_beta_b);
        u.traits.app_level = 2.0 * r.beta(pc.app_beta_a, pc.app_beta_b) - 1.0;
        u.traits.use_rate = r.beta(pc.use_beta_a, pc.use_beta_b);
        u.rewards.reserve(cfg_.decision_points());
    }
}

EnvStep Environment::step(int user, int t, int action) {
    auto& u = users_.at(user);
    if (t != u.next_t) throw std::logic_error("environment steps must be taken in order");
    if (t >= cfg_.decision_points()) throw std::out_of_range("decision point beyond the trial horizon");
    if (action != 0 && action != 1) throw std::invalid_argument("action must be 0 or 1");

    StreamRng r(derive_key(derive_key(env_key_, static_cast<std::uint64_t>(user)), static_cast<std::uint64_t>(t)));
    const int day = t / 2 + 1;
    EnvStep out;
    out.features.survey = r.bernoulli(u.traits.survey_rate) ? 1.0 : 0.0;
    out.features.app = std::clamp(u.traits.app_level + cfg_.population.app_noise_sd * r.normal(), -1.0, 1.0);
    out.cannabis_use = r.bernoulli(u.traits.use_rate) ? 1 : 0;
    const double grams = kGramsGrid[r.below(kGramsGrid.size())];
    out.features.cannabis = out.cannabis_use ? normalized_grams(grams) : -1.0;
    out.features.weekend = is_weekend(day) ? 1.0 : 0.0;
    out.features.day = normalized_day(day, cfg_.days);
    out.features.dosage = u.dosage.value();
    const double reward_u = r.uniform();

    out.reward = cfg_.constant_reward ? *cfg_.constant_reward
                                      : reward_from_uniform(reward_probabilities(u.model, out.features, action), reward_u);

    u.dosage.push(action);
    u.rewards.push_back(out.reward);
    const Observables obs = synthesize_observables(out.reward);
    u.state.engagement = engagement_from_rewards(u.rewards);
    u.state.evening = (t + 1) % 2;
    u.state.no_use = no_use_from_report(obs.survey_completion ? std::optional<int>(out.cannabis_use) : std::nullopt);
    out.next_state = u.state;
    ++u.next_t;
    return out;
}

}  // namespace rebandit
