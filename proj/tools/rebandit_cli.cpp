#include "rebandit/diagnostics.hpp"
#include "rebandit/service.hpp"
#include "rebandit/trial.hpp"

#include "CLI11.hpp"
#include "httplib.h"

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>

using namespace rebandit;

namespace {

struct RunArgs {
    std::string config, algorithm, out;
    int variant = -1, trials = 0, threads = -1, m = 0, days = 0;
    long long seed = -1;
    double heterogeneity = -1.0;
    std::string logs;
};

int cmd_run(const RunArgs& a) {
    TrialConfig cfg = a.config.empty() ? TrialConfig{} : load_trial_config(a.config);
    if (!a.algorithm.empty()) cfg.algorithm = parse_algorithm(a.algorithm);
    if (a.variant >= 1) apply_variant(cfg, a.variant);
    if (a.trials > 0) cfg.n_trials = a.trials;
    if (a.seed >= 0) cfg.seed = static_cast<std::uint64_t>(a.seed);
    if (a.threads >= 0) cfg.threads = a.threads;
    if (a.m > 0) cfg.env.num_users = a.m;
    if (a.days > 0) cfg.env.days = a.days;
    if (a.heterogeneity >= 0.0) cfg.env.population.heterogeneity = a.heterogeneity;
    if (!a.logs.empty()) cfg = trial_config_from_json([&] {
            auto j = to_json(cfg);
            j["logs"] = a.logs;
            return j;
        }());
    cfg.validate();
    const auto out = run_experiment(cfg, a.out);
    const auto& s = out.summary;
    std::printf("%s variant %d: mean total %.4f +- %.4f (trial means %.4f +- %.4f), send rate %.3f, %d update warnings\n",
                to_string(cfg.algorithm).c_str(), cfg.variant, s.pooled.mean, s.pooled.half_width, s.trial_mean.mean,
                s.trial_mean.half_width, s.send_rate, s.update_warnings);
    return 0;
}

int cmd_compare(const std::string& a, const std::string& b) {
    const auto c = compare_directories(a, b);
    std::printf("a: %s  %.4f +- %.4f\n", c.a_name.c_str(), c.a.pooled.mean, c.a.pooled.half_width);
    std::printf("b: %s  %.4f +- %.4f\n", c.b_name.c_str(), c.b.pooled.mean, c.b.pooled.half_width);
    std::printf("wins a %d, wins b %d, ties %d, CIs %s -> %s\n", c.result.wins_a, c.result.wins_b, c.result.ties,
                c.result.ci_overlap ? "overlap" : "disjoint", c.result.label.c_str());
    return 0;
}

int cmd_replay(const std::string& log) {
    const auto r = replay_trial_log(log);
    std::printf("decisions %ld, updates %d, pi mismatches %ld, draw mismatches %ld, action mismatches %ld, "
                "update mismatches %d, max |dpi| %.3g\n",
                r.decisions, r.updates, r.pi_mismatches, r.draw_mismatches, r.action_mismatches, r.update_mismatches,
                r.max_pi_diff);
    return r.ok() ? 0 : 1;
}

int cmd_diagnose(const std::string& log, const std::string& out) {
    if (out.empty()) {
        diagnose_trial_log(log, std::cout);
        return 0;
    }
    std::ofstream f(out);
    if (!f) throw std::runtime_error("cannot write " + out);
    diagnose_trial_log(log, f);
    return 0;
}

httplib::Server* g_server = nullptr;

void stop_server(int) {
    if (g_server) g_server->stop();
}

int cmd_serve(const std::string& host, int port, const std::string& state_dir, const std::string& config) {
    const ServiceConfig cfg = config.empty() ? ServiceConfig{} : load_service_config(config);
    const char* token = std::getenv("REBANDIT_ADMIN_TOKEN");
    if (!token || !*token) std::fprintf(stderr, "warning: REBANDIT_ADMIN_TOKEN is unset; admin updates are disabled\n");
    StudyService service(state_dir, cfg, token ? token : "");
    if (service.replayed_events() > 0) std::fprintf(stderr, "recovered %ld events from %s\n", service.replayed_events(), state_dir.c_str());

    httplib::Server server;
    const auto route = [&](const httplib::Request& req, httplib::Response& res) {
        std::string presented = req.get_header_value("X-Admin-Token");
        const std::string auth = req.get_header_value("Authorization");
        if (presented.empty() && auth.rfind("Bearer ", 0) == 0) presented = auth.substr(7);
        const ServiceResponse r = service.handle({req.method, req.path, req.body, presented});
        res.status = r.status;
        res.set_content(r.body.dump(), "application/json");
    };
    for (const char* path : {"/users", "/decision", "/reward", "/admin/update"}) server.Post(path, route);
    server.Get("/status", route);

    g_server = &server;
    std::signal(SIGINT, stop_server);
    std::signal(SIGTERM, stop_server);
    if (!server.bind_to_port(host, port)) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
    std::fprintf(stderr, "listening on %s:%d, state in %s\n", host.c_str(), port, state_dir.c_str());
    server.listen_after_bind();
    g_server = nullptr;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"reBandit trials, comparisons and decision service"};
    app.require_subcommand(1);

    RunArgs run;
    auto* run_cmd = app.add_subcommand("run", "Run seeded simulated trials");
    run_cmd->add_option("--config", run.config, "JSON trial config")->check(CLI::ExistingFile);
    run_cmd->add_option("--algorithm", run.algorithm, "rebandit, blr or random");
    run_cmd->add_option("--variant", run.variant, "Environment variant 1..15")->check(CLI::Range(1, 15));
    run_cmd->add_option("--trials", run.trials, "Number of trials");
    run_cmd->add_option("--seed", run.seed, "Root seed");
    run_cmd->add_option("--threads", run.threads, "Worker threads (0: all cores)");
    run_cmd->add_option("--m", run.m, "Participants per trial");
    run_cmd->add_option("--days", run.days, "Days per trial (two decision points each)");
    run_cmd->add_option("--heterogeneity", run.heterogeneity, "Synthetic population dispersion knob in [0,1]");
    run_cmd->add_option("--logs", run.logs, "Trial logs to write: none, first or all");
    run_cmd->add_option("--out", run.out, "Output directory")->required();

    std::string cmp_a, cmp_b;
    auto* cmp_cmd = app.add_subcommand("compare", "Compare two seed-matched run directories");
    cmp_cmd->add_option("--a", cmp_a)->required()->check(CLI::ExistingDirectory);
    cmp_cmd->add_option("--b", cmp_b)->required()->check(CLI::ExistingDirectory);

    std::string replay_log;
    auto* replay_cmd = app.add_subcommand("replay", "Re-derive every decision in a trial log");
    replay_cmd->add_option("--log", replay_log)->required()->check(CLI::ExistingFile);

    std::string diag_log, diag_out;
    auto* diag_cmd = app.add_subcommand("diagnose", "Population statistics per update epoch of a reBandit trial log, as CSV");
    diag_cmd->add_option("--log", diag_log)->required()->check(CLI::ExistingFile);
    diag_cmd->add_option("--out", diag_out, "CSV path (default: stdout)");

    std::string host = "127.0.0.1", state_dir, serve_config;
    int port = 8080;
    auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP decision service");
    serve_cmd->add_option("--port", port)->check(CLI::Range(1, 65535));
    serve_cmd->add_option("--host", host);
    serve_cmd->add_option("--state-dir", state_dir, "Event log and snapshot directory")->required();
    serve_cmd->add_option("--config", serve_config, "JSON service config")->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);
    try {
        if (*run_cmd) return cmd_run(run);
        if (*cmp_cmd) return cmd_compare(cmp_a, cmp_b);
        if (*replay_cmd) return cmd_replay(replay_log);
        if (*diag_cmd) return cmd_diagnose(diag_log, diag_out);
        if (*serve_cmd) return cmd_serve(host, port, state_dir, serve_config);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
