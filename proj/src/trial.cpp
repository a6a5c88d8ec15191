#include "rebandit/trial.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#ifndef REBANDIT_VERSION
#define REBANDIT_VERSION "dev"
#endif

namespace rebandit {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kLogSchema = "rebandit.trial_log/1";

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw std::invalid_argument(where + " must be an object");
    for (const auto& [k, v] : j.items())
        if (!allowed.count(k)) throw std::invalid_argument("unknown key '" + k + "' in " + where);
}

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key) && !j[key].is_null()) out = j[key].get<T>();
}

std::string log_mode_name(LogMode m) {
    switch (m) {
        case LogMode::none: return "none";
        case LogMode::first: return "first";
        case LogMode::all: return "all";
    }
    return "all";
}

LogMode parse_log_mode(const std::string& s) {
    if (s == "none") return LogMode::none;
    if (s == "first") return LogMode::first;
    if (s == "all") return LogMode::all;
    throw std::invalid_argument("logs must be none, first or all");
}

std::string param_name(Parameterization p) { return p == Parameterization::diagonal_log ? "diagonal" : "cholesky"; }

Parameterization parse_param(const std::string& s) {
    if (s == "diagonal") return Parameterization::diagonal_log;
    if (s == "cholesky") return Parameterization::cholesky_full;
    throw std::invalid_argument("parameterization must be diagonal or cholesky");
}

std::string num(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", x);
    return buf;
}

std::string hex(std::uint64_t x) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
    return buf;
}

json update_line(int t, const UpdateReport& r) {
    return {{"type", "update"},
            {"t", t},
            {"kind", r.kind},
            {"noise_var", r.noise_var},
            {"re_cov_diag", r.re_cov_diag},
            {"initial_objective", r.initial_objective},
            {"final_objective", r.final_objective},
            {"iterations", r.iterations},
            {"warning", r.warning},
            {"message", r.message}};
}

// Which update, if any, runs after decision point t.
const char* update_after(const TrialConfig& cfg, int t) {
    if (t + 1 >= cfg.decision_points()) return nullptr;
    if (cfg.hyperparam_cadence > 0 && (t + 1) % cfg.hyperparam_cadence == 0) return "weekly";
    if ((t + 1) % cfg.posterior_cadence == 0) return "nightly";
    return nullptr;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        rows.push_back(std::move(cells));
    }
    return rows;
}

}  // namespace

void TrialConfig::validate() const {
    env.validate();
    agent.validate();
    if (variant < 0 || variant > EnvConfig::kVariantCount) throw std::invalid_argument("variant must be in 0..15");
    if (n_trials < 1) throw std::invalid_argument("n_trials must be at least 1");
    if (threads < 0) throw std::invalid_argument("threads must be non-negative");
    // Cadences must line up with the two-decision-point day.
    if (posterior_cadence < 1 || (posterior_cadence != 1 && posterior_cadence % 2 != 0))
        throw std::invalid_argument("posterior_cadence must be 1 or a positive multiple of 2");
    if (hyperparam_cadence < 0 || (hyperparam_cadence > 0 && hyperparam_cadence % posterior_cadence != 0))
        throw std::invalid_argument("hyperparam_cadence must be 0 or a multiple of posterior_cadence");
    if (!(time_budget_s > 0.0)) throw std::invalid_argument("time_budget_s must be positive");
}

void apply_variant(TrialConfig& cfg, int id) {
    const EnvConfig v = EnvConfig::variant(id);
    cfg.variant = id;
    cfg.env.treatment = v.treatment;
    cfg.env.habituation = v.habituation;
    cfg.env.habituation_proportion = v.habituation_proportion;
}

json to_json(const AgentConfig& a) {
    const auto& o = a.optimizer;
    return {{"lambda", a.lambda},
            {"smoothing", {{"l_min", a.smoothing.l_min}, {"l_max", a.smoothing.l_max}, {"c", a.smoothing.c}, {"b", a.smoothing.b}}},
            {"quadrature_nodes", a.quadrature.nodes_per_panel},
            {"quadrature_half_width", a.quadrature.half_width},
            {"sampling", a.sampling == SamplingMode::smooth ? "smooth" : "indicator"},
            {"solve_method", a.solve_method == SolveMethod::structured ? "structured" : "dense"},
            {"initial_noise_var", a.initial_hp.noise_var},
            {"initial_re_var", a.initial_hp.random_effects_cov(0, 0)},
            {"optimizer",
             {{"step_size", o.step_size},
              {"max_iters", o.max_iters},
              {"grad_tol", o.grad_tol},
              {"eig_floor", o.eig_floor},
              {"sigma_floor", o.sigma_floor},
              {"parameterization", param_name(o.parameterization)},
              {"max_backtracks", o.max_backtracks},
              {"max_step", o.max_step},
              {"max_coord_change", o.max_coord_change}}}};
}

json to_json(const TrialConfig& cfg) {
    const auto& e = cfg.env;
    const auto& p = e.population;
    json env = {{"treatment", to_string(e.treatment)},
                {"habituation", to_string(e.habituation)},
                {"habituation_proportion", e.habituation_proportion},
                {"m", e.num_users},
                {"days", e.days},
                {"heterogeneity", p.heterogeneity},
                {"pool_size", p.pool_size},
                {"weight_file", p.weight_file ? json(*p.weight_file) : json(nullptr)},
                {"survey_beta", {p.survey_beta_a, p.survey_beta_b}},
                {"app_beta", {p.app_beta_a, p.app_beta_b}},
                {"app_noise_sd", p.app_noise_sd},
                {"use_beta", {p.use_beta_a, p.use_beta_b}},
                {"constant_reward", e.constant_reward ? json(*e.constant_reward) : json(nullptr)}};
    return {{"algorithm", to_string(cfg.algorithm)},
            {"variant", cfg.variant},
            {"n_trials", cfg.n_trials},
            {"seed", cfg.seed},
            {"posterior_cadence", cfg.posterior_cadence},
            {"hyperparam_cadence", cfg.hyperparam_cadence},
            {"threads", cfg.threads},
            {"time_budget_s", cfg.time_budget_s},
            {"logs", log_mode_name(cfg.logs)},
            {"env", env},
            {"agent", to_json(cfg.agent)}};
}

AgentConfig agent_config_from_json(const json& a) {
    check_keys(a, {"lambda", "smoothing", "quadrature_nodes", "quadrature_half_width", "sampling", "solve_method",
                   "initial_noise_var", "initial_re_var", "optimizer"},
               "agent");
    AgentConfig ag;
    read(a, "lambda", ag.lambda);
    if (a.contains("smoothing")) {
        const json& s = a["smoothing"];
        check_keys(s, {"l_min", "l_max", "c", "b"}, "agent.smoothing");
        read(s, "l_min", ag.smoothing.l_min);
        read(s, "l_max", ag.smoothing.l_max);
        read(s, "c", ag.smoothing.c);
        read(s, "b", ag.smoothing.b);
    }
    read(a, "quadrature_nodes", ag.quadrature.nodes_per_panel);
    read(a, "quadrature_half_width", ag.quadrature.half_width);
    if (a.contains("sampling")) {
        const auto s = a["sampling"].get<std::string>();
        if (s != "smooth" && s != "indicator") throw std::invalid_argument("sampling must be smooth or indicator");
        ag.sampling = s == "smooth" ? SamplingMode::smooth : SamplingMode::indicator;
    }
    if (a.contains("solve_method")) {
        const auto s = a["solve_method"].get<std::string>();
        if (s != "structured" && s != "dense") throw std::invalid_argument("solve_method must be structured or dense");
        ag.solve_method = s == "dense" ? SolveMethod::dense : SolveMethod::structured;
    }
    read(a, "initial_noise_var", ag.initial_hp.noise_var);
    if (a.contains("initial_re_var")) {
        const double v = a["initial_re_var"].get<double>();
        ag.initial_hp.random_effects_cov = v * MatrixXd::Identity(ag.prior.dim(), ag.prior.dim());
    }
    if (a.contains("optimizer")) {
        const json& o = a["optimizer"];
        check_keys(o, {"step_size", "max_iters", "grad_tol", "eig_floor", "sigma_floor", "parameterization",
                       "max_backtracks", "max_step", "max_coord_change"},
                   "agent.optimizer");
        auto& oc = ag.optimizer;
        read(o, "step_size", oc.step_size);
        read(o, "max_iters", oc.max_iters);
        read(o, "grad_tol", oc.grad_tol);
        read(o, "eig_floor", oc.eig_floor);
        read(o, "sigma_floor", oc.sigma_floor);
        if (o.contains("parameterization")) oc.parameterization = parse_param(o["parameterization"].get<std::string>());
        read(o, "max_backtracks", oc.max_backtracks);
        read(o, "max_step", oc.max_step);
        read(o, "max_coord_change", oc.max_coord_change);
    }
    ag.validate();
    return ag;
}

TrialConfig trial_config_from_json(const json& j) {
    check_keys(j, {"algorithm", "variant", "n_trials", "seed", "posterior_cadence", "hyperparam_cadence", "threads",
                   "time_budget_s", "logs", "env", "agent"},
               "config");
    TrialConfig cfg;
    if (j.contains("algorithm")) cfg.algorithm = parse_algorithm(j["algorithm"].get<std::string>());
    int variant = 1;
    read(j, "variant", variant);
    if (variant != 0) apply_variant(cfg, variant);
    cfg.variant = variant;
    read(j, "n_trials", cfg.n_trials);
    read(j, "seed", cfg.seed);
    read(j, "posterior_cadence", cfg.posterior_cadence);
    read(j, "hyperparam_cadence", cfg.hyperparam_cadence);
    read(j, "threads", cfg.threads);
    read(j, "time_budget_s", cfg.time_budget_s);
    if (j.contains("logs")) cfg.logs = parse_log_mode(j["logs"].get<std::string>());

    if (j.contains("env")) {
        const json& e = j["env"];
        check_keys(e, {"treatment", "habituation", "habituation_proportion", "m", "days", "heterogeneity", "pool_size",
                       "weight_file", "survey_beta", "app_beta", "app_noise_sd", "use_beta", "constant_reward"},
                   "env");
        const bool sets_variant = e.contains("treatment") || e.contains("habituation") || e.contains("habituation_proportion");
        if (sets_variant && variant != 0) {
            // Accept a round-tripped config whose env section agrees with its variant.
            const EnvConfig v = EnvConfig::variant(variant);
            const bool same = (!e.contains("treatment") || parse_treatment_effect(e["treatment"].get<std::string>()) == v.treatment) &&
                              (!e.contains("habituation") || parse_habituation(e["habituation"].get<std::string>()) == v.habituation) &&
                              (!e.contains("habituation_proportion") ||
                               e["habituation_proportion"].get<double>() == v.habituation_proportion);
            if (!same) throw std::invalid_argument("env treatment/habituation given together with a variant; set variant to 0");
        }
        auto& env = cfg.env;
        if (e.contains("treatment")) env.treatment = parse_treatment_effect(e["treatment"].get<std::string>());
        if (e.contains("habituation")) env.habituation = parse_habituation(e["habituation"].get<std::string>());
        read(e, "habituation_proportion", env.habituation_proportion);
        read(e, "m", env.num_users);
        read(e, "days", env.days);
        auto& p = env.population;
        read(e, "heterogeneity", p.heterogeneity);
        read(e, "pool_size", p.pool_size);
        if (e.contains("weight_file") && !e["weight_file"].is_null()) p.weight_file = e["weight_file"].get<std::string>();
        const auto pair = [&](const char* key, double& x, double& y) {
            if (!e.contains(key)) return;
            const auto v = e[key].get<std::vector<double>>();
            if (v.size() != 2) throw std::invalid_argument(std::string(key) + " needs two numbers");
            x = v[0];
            y = v[1];
        };
        pair("survey_beta", p.survey_beta_a, p.survey_beta_b);
        pair("app_beta", p.app_beta_a, p.app_beta_b);
        pair("use_beta", p.use_beta_a, p.use_beta_b);
        read(e, "app_noise_sd", p.app_noise_sd);
        if (e.contains("constant_reward") && !e["constant_reward"].is_null()) env.constant_reward = e["constant_reward"].get<int>();
    }

    if (j.contains("agent")) cfg.agent = agent_config_from_json(j["agent"]);
    cfg.validate();
    return cfg;
}

TrialConfig load_trial_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    try {
        return trial_config_from_json(json::parse(in));
    } catch (const json::exception& e) {
        throw std::invalid_argument("bad config " + path + ": " + e.what());
    }
}

std::uint64_t trial_seed(std::uint64_t root_seed, int trial_index) {
    return derive_key(derive_key(root_seed, "trials"), static_cast<std::uint64_t>(trial_index));
}
std::uint64_t environment_key(std::uint64_t seed) { return derive_key(seed, "environment"); }
std::uint64_t policy_key(std::uint64_t seed) { return derive_key(seed, "policy"); }

TrialResult run_trial(const TrialConfig& cfg, int trial_index, std::ostream* log) {
    cfg.validate();
    const auto start = std::chrono::steady_clock::now();
    TrialResult res;
    res.trial = trial_index;
    res.seed = trial_seed(cfg.seed, trial_index);

    Environment env(cfg.env, environment_key(res.seed));
    const int m = env.num_users(), horizon = env.decision_points();
    auto agent = make_agent(cfg.algorithm, cfg.agent, m);
    const StreamRng policy_root(policy_key(res.seed));
    std::vector<StreamRng> policy;
    for (int i = 0; i < m; ++i) policy.push_back(policy_root.substream(static_cast<std::uint64_t>(i)));

    if (log)
        *log << json{{"type", "header"}, {"schema", kLogSchema}, {"trial", trial_index}, {"trial_seed", res.seed},
                     {"config", to_json(cfg)}}.dump()
             << '\n';

    res.user_totals.assign(m, 0.0);
    long sent = 0;
    for (int t = 0; t < horizon; ++t) {
        for (int i = 0; i < m; ++i) {
            const StateTriple s = env.state(i);
            const double pi = agent->probability(i, s);
            res.min_pi = std::min(res.min_pi, pi);
            res.max_pi = std::max(res.max_pi, pi);
            const std::uint64_t counter = policy[i].counter();
            const ActionDraw ad = sample_action(pi, policy[i]);
            const EnvStep step = env.step(i, t, ad.action);
            const double engineered = agent->observe(i, s, ad.action, pi, step.reward);
            res.user_totals[i] += step.reward;
            sent += ad.action;
            if (log)
                *log << json{{"type", "decision"},
                             {"t", t},
                             {"user", i},
                             {"state", {s.engagement, s.evening, s.no_use}},
                             {"pi", pi},
                             {"draw", ad.draw},
                             {"counter", counter},
                             {"action", ad.action},
                             {"reward", step.reward},
                             {"engineered", engineered}}.dump()
                     << '\n';
        }
        if (const char* kind = update_after(cfg, t)) {
            const UpdateReport r = std::string(kind) == "weekly" ? agent->update_hyperparams() : agent->update_posterior();
            if (r.warning) ++res.update_warnings;
            if (log) *log << update_line(t, r).dump() << '\n';
        }
    }

    double sum = 0.0;
    for (double x : res.user_totals) sum += x;
    res.mean_total = sum / m;
    res.send_rate = static_cast<double>(sent) / (static_cast<double>(m) * horizon);
    if (log)
        *log << json{{"type", "result"}, {"user_totals", res.user_totals}, {"mean_total", res.mean_total},
                     {"send_rate", res.send_rate}, {"update_warnings", res.update_warnings}}.dump()
             << '\n';

    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (res.seconds > cfg.time_budget_s) {
        res.over_budget = true;
        std::cerr << "warning: trial " << trial_index << " took " << res.seconds << " s, over the " << cfg.time_budget_s
                  << " s budget\n";
    }
    return res;
}

ConfidenceInterval normal_ci(const std::vector<double>& xs) {
    ConfidenceInterval ci;
    if (xs.empty()) return ci;
    RunningMoments mom;
    for (double x : xs) mom.add(x);
    ci.mean = mom.mean;
    ci.half_width = xs.size() < 2 ? 0.0 : 1.96 * mom.stddev() / std::sqrt(static_cast<double>(xs.size()));
    return ci;
}

bool overlaps(const ConfidenceInterval& a, const ConfidenceInterval& b) { return a.low() <= b.high() && b.low() <= a.high(); }

Summary aggregate(const std::vector<TrialResult>& results) {
    Summary s;
    std::vector<double> pooled, means;
    double send = 0.0;
    for (const auto& r : results) {
        pooled.insert(pooled.end(), r.user_totals.begin(), r.user_totals.end());
        means.push_back(r.mean_total);
        send += r.send_rate;
        s.update_warnings += r.update_warnings;
    }
    s.pooled = normal_ci(pooled);
    s.trial_mean = normal_ci(means);
    s.trials = static_cast<int>(results.size());
    s.users = results.empty() ? 0 : static_cast<int>(results.front().user_totals.size());
    s.send_rate = results.empty() ? 0.0 : send / static_cast<double>(results.size());
    return s;
}

int pairwise_win_count(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("win counts need seed-matched trials of equal length");
    int wins = 0;
    for (std::size_t k = 0; k < a.size(); ++k) wins += a[k] > b[k] ? 1 : 0;
    return wins;
}

Comparison compare(const ConfidenceInterval& a_ci, const std::vector<double>& a_means, const ConfidenceInterval& b_ci,
                   const std::vector<double>& b_means) {
    Comparison c;
    c.wins_a = pairwise_win_count(a_means, b_means);
    c.wins_b = pairwise_win_count(b_means, a_means);
    c.ties = static_cast<int>(a_means.size()) - c.wins_a - c.wins_b;
    c.ci_overlap = overlaps(a_ci, b_ci);
    if (!c.ci_overlap)
        c.label = a_ci.mean > b_ci.mean ? "green" : "worse";
    else
        c.label = 2 * c.wins_a > static_cast<int>(a_means.size()) ? "yellow" : "blue";
    return c;
}

ExperimentOutput run_experiment(const TrialConfig& cfg, const std::optional<std::string>& out_dir) {
    cfg.validate();
    if (out_dir) {
        fs::create_directories(*out_dir);
        if (cfg.logs != LogMode::none) fs::create_directories(fs::path(*out_dir) / "logs");
    }
    ExperimentOutput out;
    out.results.resize(cfg.n_trials);
    std::atomic<int> next{0};
    std::mutex err_mu;
    std::exception_ptr error;
    const auto worker = [&] {
        for (;;) {
            const int k = next.fetch_add(1);
            if (k >= cfg.n_trials) return;
            try {
                const bool write = out_dir && (cfg.logs == LogMode::all || (cfg.logs == LogMode::first && k == 0));
                if (write) {
                    char name[32];
                    std::snprintf(name, sizeof name, "trial_%04d.jsonl", k);
                    std::ofstream f(fs::path(*out_dir) / "logs" / name, std::ios::binary);
                    out.results[k] = run_trial(cfg, k, &f);
                } else {
                    out.results[k] = run_trial(cfg, k);
                }
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mu);
                if (!error) error = std::current_exception();
                next = cfg.n_trials;
            }
        }
    };
    const int hw = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    const int threads = std::min(cfg.n_trials, cfg.threads > 0 ? cfg.threads : hw);
    std::vector<std::thread> pool;
    for (int k = 1; k < threads; ++k) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);

    out.summary = aggregate(out.results);
    if (!out_dir) return out;

    const fs::path dir(*out_dir);
    const auto& s = out.summary;
    {
        std::ofstream f(dir / "summary.csv", std::ios::binary);
        f << "algorithm,variant,treatment,habituation,habituation_proportion,heterogeneity,n_trials,m,T,lambda,"
             "mean_total,ci_half_width,ci_low,ci_high,trial_mean,trial_ci_half_width,send_rate,update_warnings\n";
        f << to_string(cfg.algorithm) << ',' << cfg.variant << ',' << to_string(cfg.env.treatment) << ','
          << to_string(cfg.env.habituation) << ',' << num(cfg.env.habituation_proportion) << ','
          << num(cfg.env.population.heterogeneity) << ',' << cfg.n_trials << ',' << cfg.env.num_users << ','
          << cfg.decision_points() << ',' << num(cfg.agent.lambda) << ',' << num(s.pooled.mean) << ','
          << num(s.pooled.half_width) << ',' << num(s.pooled.low()) << ',' << num(s.pooled.high()) << ','
          << num(s.trial_mean.mean) << ',' << num(s.trial_mean.half_width) << ',' << num(s.send_rate) << ','
          << s.update_warnings << '\n';
    }
    {
        std::ofstream f(dir / "per_trial.csv", std::ios::binary);
        f << "trial,seed,mean_total,send_rate,min_pi,max_pi,update_warnings\n";
        for (const auto& r : out.results)
            f << r.trial << ',' << hex(r.seed) << ',' << num(r.mean_total) << ',' << num(r.send_rate) << ','
              << num(r.min_pi) << ',' << num(r.max_pi) << ',' << r.update_warnings << '\n';
    }
    {
        const std::string cfg_text = to_json(cfg).dump();
        json manifest = {{"schema", "rebandit.manifest/1"},
                         {"code_version", REBANDIT_VERSION},
                         {"config", to_json(cfg)},
                         {"config_hash", hex(hash_name(cfg_text))},
                         {"seed", cfg.seed},
                         {"ci_population", "pooled participant totals; trial-mean interval also reported"},
                         {"ci_formula", "mean +- 1.96 * sd / sqrt(n)"}};
        json seeds = json::array();
        for (const auto& r : out.results) seeds.push_back(hex(r.seed));
        manifest["trial_seeds"] = seeds;
        std::ofstream(dir / "manifest.json", std::ios::binary) << manifest.dump(2) << '\n';
    }
    {
        json timing = {{"trial_seconds", json::array()}, {"over_budget", 0}};
        for (const auto& r : out.results) {
            timing["trial_seconds"].push_back(r.seconds);
            if (r.over_budget) timing["over_budget"] = timing["over_budget"].get<int>() + 1;
        }
        std::ofstream(dir / "timing.json", std::ios::binary) << timing.dump(2) << '\n';
    }
    return out;
}

ReplayReport replay_trial_log(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open log: " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty log: " + path);
    const json header = json::parse(line);
    if (header.value("schema", "") != kLogSchema) throw std::runtime_error("not a trial log: " + path);
    const TrialConfig cfg = trial_config_from_json(header["config"]);
    const std::uint64_t seed = header["trial_seed"].get<std::uint64_t>();
    const int m = cfg.env.num_users;

    auto agent = make_agent(cfg.algorithm, cfg.agent, m);
    const StreamRng policy_root(policy_key(seed));
    ReplayReport rep;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const json rec = json::parse(line);
        const std::string type = rec["type"];
        if (type == "decision") {
            const int user = rec["user"];
            const auto st = rec["state"].get<std::vector<int>>();
            const StateTriple s{st.at(0), st.at(1), st.at(2)};
            const double pi_logged = rec["pi"], draw_logged = rec["draw"];
            const int action_logged = rec["action"];
            const double pi = agent->probability(user, s);
            StreamRng r(policy_root.substream(static_cast<std::uint64_t>(user)).key(), rec["counter"].get<std::uint64_t>());
            const ActionDraw ad = sample_action(pi, r);
            ++rep.decisions;
            rep.max_pi_diff = std::max(rep.max_pi_diff, std::abs(pi - pi_logged));
            if (pi != pi_logged) ++rep.pi_mismatches;
            if (ad.draw != draw_logged) ++rep.draw_mismatches;
            if (ad.action != action_logged) ++rep.action_mismatches;
            agent->observe(user, s, action_logged, pi_logged, rec["reward"].get<double>());
        } else if (type == "update") {
            const UpdateReport r = rec["kind"] == "weekly" ? agent->update_hyperparams() : agent->update_posterior();
            ++rep.updates;
            if (r.noise_var != rec["noise_var"].get<double>()) ++rep.update_mismatches;
        }
    }
    return rep;
}

DirectoryComparison compare_directories(const std::string& a_dir, const std::string& b_dir) {
    const auto load = [](const std::string& dir, std::string& name, Summary& s, std::vector<double>& means,
                         std::vector<std::string>& seeds) {
        const auto sum = read_csv(fs::path(dir) / "summary.csv");
        if (sum.size() < 2) throw std::runtime_error("summary.csv in " + dir + " has no data row");
        const auto col = [&](const std::string& key) -> const std::string& {
            const auto it = std::find(sum[0].begin(), sum[0].end(), key);
            if (it == sum[0].end()) throw std::runtime_error("summary.csv lacks column " + key);
            return sum[1].at(static_cast<std::size_t>(it - sum[0].begin()));
        };
        name = col("algorithm") + "/variant" + col("variant");
        s.pooled = {std::stod(col("mean_total")), std::stod(col("ci_half_width"))};
        s.trial_mean = {std::stod(col("trial_mean")), std::stod(col("trial_ci_half_width"))};
        s.send_rate = std::stod(col("send_rate"));
        s.trials = std::stoi(col("n_trials"));
        s.users = std::stoi(col("m"));
        for (std::size_t k = 1; const auto& row : read_csv(fs::path(dir) / "per_trial.csv")) {
            if (k++ == 1) continue;
            seeds.push_back(row.at(1));
            means.push_back(std::stod(row.at(2)));
        }
    };
    DirectoryComparison out;
    std::vector<double> am, bm;
    std::vector<std::string> as, bs;
    load(a_dir, out.a_name, out.a, am, as);
    load(b_dir, out.b_name, out.b, bm, bs);
    if (as != bs) throw std::runtime_error("runs are not seed-matched; compare needs identical trial seeds");
    out.result = compare(out.a.pooled, am, out.b.pooled, bm);
    return out;
}

}  // namespace rebandit
