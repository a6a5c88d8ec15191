#include "doctest.h"

#include "rebandit/trial.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace rebandit;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

TrialConfig small_trial(Algorithm alg, int m = 4, int days = 10) {
    TrialConfig cfg;
    cfg.algorithm = alg;
    cfg.env.num_users = m;
    cfg.env.days = days;
    cfg.n_trials = 2;
    cfg.threads = 1;
    cfg.agent.optimizer.max_iters = 40;
    return cfg;
}

std::vector<json> parse_log(const std::string& text) {
    std::vector<json> out;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) out.push_back(json::parse(line));
    return out;
}

TrialResult with_totals(std::vector<double> totals) {
    TrialResult r;
    r.user_totals = std::move(totals);
    double s = 0.0;
    for (double x : r.user_totals) s += x;
    r.mean_total = s / static_cast<double>(r.user_totals.size());
    return r;
}

}  // namespace

TEST_CASE("constant reward 2 under the random policy totals 2 per decision point") {
    auto cfg = small_trial(Algorithm::random, 5, 30);
    cfg.env.constant_reward = 2;
    const auto out = run_experiment(cfg);
    for (const auto& r : out.results)
        for (double t : r.user_totals) CHECK(t == 120.0);
    CHECK(out.summary.pooled.mean == 120.0);
    CHECK(out.summary.pooled.half_width == 0.0);
}

TEST_CASE("a trial has two decision points per day and the configured update cadence") {
    auto cfg = small_trial(Algorithm::blr, 3, 30);
    std::ostringstream log;
    run_trial(cfg, 0, &log);
    const auto lines = parse_log(log.str());
    int decisions = 0, nightly = 0, weekly = 0, max_t = -1;
    for (const auto& l : lines) {
        if (l["type"] == "decision") {
            ++decisions;
            max_t = std::max(max_t, l["t"].get<int>());
        } else if (l["type"] == "update") {
            (l["kind"] == "weekly" ? weekly : nightly)++;
        }
    }
    CHECK(decisions == 3 * 60);
    CHECK(max_t == 59);
    CHECK(weekly == 4);            // after decision points 14, 28, 42, 56
    CHECK(nightly + weekly == 29);  // every second point except the last
    CHECK(lines.front()["type"] == "header");
    CHECK(lines.back()["type"] == "result");
}

TEST_CASE("the first decision of every user uses the initial state") {
    auto cfg = small_trial(Algorithm::rebandit, 4, 3);
    std::ostringstream log;
    run_trial(cfg, 0, &log);
    for (const auto& l : parse_log(log.str()))
        if (l["type"] == "decision" && l["t"] == 0) CHECK(l["state"] == json::array({0, 0, 1}));
}

TEST_CASE("trial logs are byte-identical across runs and replay exactly") {
    for (auto alg : {Algorithm::rebandit, Algorithm::blr, Algorithm::random}) {
        const auto cfg = small_trial(alg, 4, 8);
        std::ostringstream a, b;
        run_trial(cfg, 1, &a);
        run_trial(cfg, 1, &b);
        CHECK(a.str() == b.str());

        const fs::path path = fs::temp_directory_path() / ("rebandit_replay_" + to_string(alg) + ".jsonl");
        {
            std::ofstream f(path);
            f << a.str();
        }
        const auto rep = replay_trial_log(path.string());
        CHECK(rep.ok());
        CHECK(rep.decisions == 4 * 16);
        fs::remove(path);
    }
}

TEST_CASE("a tampered log fails replay") {
    const auto cfg = small_trial(Algorithm::rebandit, 3, 4);
    std::ostringstream a;
    run_trial(cfg, 0, &a);
    auto lines = parse_log(a.str());
    for (auto& l : lines)
        if (l["type"] == "decision" && l["t"] == 3) {
            l["action"] = 1 - l["action"].get<int>();
            break;
        }
    const fs::path path = fs::temp_directory_path() / "rebandit_tampered.jsonl";
    {
        std::ofstream f(path);
        for (const auto& l : lines) f << l.dump() << '\n';
    }
    CHECK_FALSE(replay_trial_log(path.string()).ok());
    fs::remove(path);
}

TEST_CASE("different trials get different seeds and outcomes") {
    CHECK(trial_seed(1, 0) != trial_seed(1, 1));
    CHECK(trial_seed(1, 0) != trial_seed(2, 0));
    const auto cfg = small_trial(Algorithm::random, 6, 5);
    CHECK(run_trial(cfg, 0).user_totals != run_trial(cfg, 1).user_totals);
}

TEST_CASE("send probabilities stay inside the clipping range") {
    const auto out = run_experiment(small_trial(Algorithm::rebandit, 5, 14));
    for (const auto& r : out.results) {
        CHECK(r.min_pi >= 0.2);
        CHECK(r.max_pi <= 0.8);
    }
}

TEST_CASE("aggregation pools participant totals") {
    const auto s = aggregate({with_totals({10, 10}), with_totals({20, 20})});
    CHECK(s.pooled.mean == doctest::Approx(15.0));
    CHECK(s.trial_mean.mean == doctest::Approx(15.0));
    CHECK(s.trials == 2);
    CHECK(s.users == 2);
    // Sample SD of {10,10,20,20} is sqrt(100/3).
    CHECK(s.pooled.half_width == doctest::Approx(1.96 * std::sqrt(100.0 / 3.0) / 2.0));
}

TEST_CASE("normal CI edge cases and 1/sqrt(n) shrinkage") {
    CHECK(normal_ci({}).half_width == 0.0);
    CHECK(normal_ci({4.0}).mean == 4.0);
    CHECK(normal_ci({4.0}).half_width == 0.0);
    StreamRng rng(8);
    std::vector<double> small, large;
    for (int k = 0; k < 400; ++k) large.push_back(rng.normal(100.0, 10.0));
    small.assign(large.begin(), large.begin() + 100);
    const double ratio = normal_ci(small).half_width / normal_ci(large).half_width;
    CHECK(ratio == doctest::Approx(2.0).epsilon(0.2));
}

TEST_CASE("property: win counts are antisymmetric") {
    StreamRng rng(31);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 1 + static_cast<int>(rng.below(30));
        std::vector<double> a(n), b(n);
        for (int k = 0; k < n; ++k) {
            a[k] = static_cast<double>(rng.below(5));
            b[k] = static_cast<double>(rng.below(5));
        }
        int ties = 0;
        for (int k = 0; k < n; ++k) ties += a[k] == b[k];
        CHECK(pairwise_win_count(a, b) + pairwise_win_count(b, a) + ties == n);
        const auto c = compare(normal_ci(a), a, normal_ci(b), b);
        CHECK(c.wins_a == pairwise_win_count(a, b));
        CHECK(c.ties == ties);
    }
}

TEST_CASE("comparison labels") {
    const std::vector<double> hi{10, 11, 12}, lo{1, 2, 3};
    CHECK(compare({11, 1}, hi, {2, 1}, lo).label == "green");
    CHECK(compare({2, 1}, lo, {11, 1}, hi).label == "worse");
    CHECK(compare({5, 3}, {3, 3, 1}, {4, 3}, {2, 2, 2}).label == "yellow");
    CHECK(compare({4, 3}, {2, 2, 2}, {5, 3}, {3, 3, 1}).label == "blue");
}

TEST_CASE("config round trip and validation") {
    auto cfg = small_trial(Algorithm::blr, 7, 12);
    apply_variant(cfg, 9);
    cfg.posterior_cadence = 4;
    cfg.hyperparam_cadence = 28;
    cfg.agent.lambda = 0.3;
    cfg.agent.optimizer.parameterization = Parameterization::cholesky_full;
    const auto back = trial_config_from_json(to_json(cfg));
    CHECK(to_json(back) == to_json(cfg));

    CHECK_THROWS(trial_config_from_json({{"posterior_cadence", 3}}));
    CHECK_THROWS(trial_config_from_json({{"posterior_cadence", 2}, {"hyperparam_cadence", 5}}));
    CHECK_THROWS(trial_config_from_json({{"variant", 16}}));
    CHECK_THROWS(trial_config_from_json({{"algorithm", "ucb"}}));
    CHECK_THROWS(trial_config_from_json({{"bogus", 1}}));
    CHECK_THROWS(trial_config_from_json({{"variant", 2}, {"env", {{"treatment", "high"}}}}));
    CHECK_NOTHROW(trial_config_from_json({{"variant", 0}, {"env", {{"treatment", "high"}}}}));
    CHECK_THROWS(trial_config_from_json({{"agent", {{"quadrature_nodes", 12}}}}));
}

TEST_CASE("agents feed engineered rewards to the model") {
    AgentConfig cfg;
    auto agent = make_agent(Algorithm::rebandit, cfg, 2);
    const StateTriple s{};
    CHECK(agent->observe(0, s, 1, 0.5, 3.0) == 3.0);  // no history yet
    CHECK(agent->observe(0, s, 1, 0.5, 1.0) == doctest::Approx(1.0 - 0.2 * 0.0));
    // Sample SD of {3, 1} is sqrt(2).
    CHECK(agent->observe(0, s, 1, 0.5, 2.0) == doctest::Approx(2.0 - 0.2 * std::sqrt(2.0)));
    CHECK(agent->observe(0, s, 0, 0.5, 2.0) == 2.0);
    CHECK(agent->observe(1, s, 1, 0.5, 2.0) == 2.0);
}

TEST_CASE("before any update every user sees the prior probability") {
    AgentConfig cfg;
    auto agent = make_agent(Algorithm::rebandit, cfg, 3);
    // The per-user prior marginal carries the random-effects covariance too.
    AgentConfig wide = cfg;
    wide.prior.cov += cfg.initial_hp.random_effects_cov;
    auto blr = make_agent(Algorithm::blr, wide, 3);
    const StateTriple s{1, 0, 1};
    CHECK(agent->probability(0, s) == agent->probability(2, s));
    CHECK(agent->probability(0, s) == doctest::Approx(blr->probability(0, s)).epsilon(1e-12));
}

TEST_CASE("the random agent always returns one half") {
    auto agent = make_agent(Algorithm::random, AgentConfig{}, 1);
    CHECK(agent->probability(0, {}) == 0.5);
    CHECK(agent->update_hyperparams().kind == "weekly");
}
