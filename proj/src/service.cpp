#include "rebandit/service.hpp"

#include "rebandit/sim_env.hpp"
#include "rebandit/trial.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

namespace rebandit {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kServiceSchema = "rebandit.service_log/1";

[[noreturn]] void unprocessable(const std::string& what) { throw ServiceError(422, what); }

const json& field(const json& j, const char* key) {
    if (!j.contains(key)) unprocessable(std::string("missing field '") + key + "'");
    return j[key];
}

long integer(const json& v, const char* key) {
    if (!v.is_number_integer()) unprocessable(std::string("'") + key + "' must be an integer");
    return v.get<long>();
}

// Accepts true/false or 0/1.
int binary(const json& v, const char* key) {
    if (v.is_boolean()) return v.get<bool>() ? 1 : 0;
    if (v.is_number_integer() && (v.get<long>() == 0 || v.get<long>() == 1)) return static_cast<int>(v.get<long>());
    unprocessable(std::string("'") + key + "' must be 0/1 or a boolean");
}

void reject_unknown(const json& j, const std::set<std::string>& allowed) {
    for (const auto& [k, v] : j.items())
        if (!allowed.count(k)) unprocessable("unknown field '" + k + "'");
}

json parse_body(const std::string& body) {
    if (body.empty()) return json::object();
    try {
        json j = json::parse(body);
        if (!j.is_object()) unprocessable("request body must be a JSON object");
        return j;
    } catch (const json::parse_error& e) {
        unprocessable(std::string("malformed JSON: ") + e.what());
    }
}

json matrix_json(const MatrixXd& m) {
    json rows = json::array();
    for (int r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

json vector_json(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json model_summary(const Agent& a, int registered) {
    json j = {{"noise_var", a.noise_var()}};
    if (const auto* r = dynamic_cast<const ReBanditAgent*>(&a)) {
        j["random_effects_cov"] = matrix_json(r->hyperparams().random_effects_cov);
        json means = json::array();
        for (int i = 0; i < registered; ++i) means.push_back(vector_json(r->posterior().user_mean[static_cast<std::size_t>(i)]));
        j["user_means"] = std::move(means);
    } else if (const auto* b = dynamic_cast<const BLRAgent*>(&a)) {
        j["mean"] = vector_json(b->state().mean);
    }
    return j;
}

void fsync_dir(const fs::path& dir) {
    const int d = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY);
    if (d >= 0) {
        ::fsync(d);
        ::close(d);
    }
}

void write_durably(const fs::path& path, const std::string& text) {
    const fs::path tmp = path.string() + ".tmp";
    const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    if (fd < 0) throw std::runtime_error("cannot write " + tmp.string() + ": " + std::strerror(errno));
    std::size_t off = 0;
    while (off < text.size()) {
        const ssize_t n = ::write(fd, text.data() + off, text.size() - off);
        if (n < 0) {
            if (errno == EINTR) continue;
            ::close(fd);
            throw std::runtime_error("write failed: " + std::string(std::strerror(errno)));
        }
        off += static_cast<std::size_t>(n);
    }
    ::fsync(fd);
    ::close(fd);
    fs::rename(tmp, path);
    fsync_dir(path.parent_path());
}

fs::path snapshot_path(const std::string& dir, int seq) {
    char name[40];
    std::snprintf(name, sizeof name, "snapshot_%06d.json", seq);
    return fs::path(dir) / "snapshots" / name;
}

}  // namespace

void ServiceConfig::validate() const {
    agent.validate();
    if (max_users < 1) throw std::invalid_argument("max_users must be at least 1");
    if (snapshot_every < 1) throw std::invalid_argument("snapshot_every must be at least 1");
}

json to_json(const ServiceConfig& cfg) {
    return {{"algorithm", to_string(cfg.algorithm)},
            {"max_users", cfg.max_users},
            {"seed", cfg.seed},
            {"snapshot_every", cfg.snapshot_every},
            {"agent", to_json(cfg.agent)}};
}

ServiceConfig service_config_from_json(const json& j) {
    if (!j.is_object()) throw std::invalid_argument("service config must be an object");
    for (const auto& [k, v] : j.items())
        if (k != "algorithm" && k != "max_users" && k != "seed" && k != "snapshot_every" && k != "agent")
            throw std::invalid_argument("unknown key '" + k + "' in service config");
    ServiceConfig cfg;
    if (j.contains("algorithm")) cfg.algorithm = parse_algorithm(j["algorithm"].get<std::string>());
    if (j.contains("max_users")) cfg.max_users = j["max_users"].get<int>();
    if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("snapshot_every")) cfg.snapshot_every = j["snapshot_every"].get<int>();
    if (j.contains("agent")) cfg.agent = agent_config_from_json(j["agent"]);
    cfg.validate();
    return cfg;
}

ServiceConfig load_service_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    try {
        return service_config_from_json(json::parse(in));
    } catch (const json::exception& e) {
        throw std::invalid_argument("bad config " + path + ": " + e.what());
    }
}

StudyService::StudyService(const std::string& state_dir, const ServiceConfig& cfg, std::string admin_token)
    : cfg_(cfg), dir_(state_dir), admin_token_(std::move(admin_token)) {
    cfg_.validate();
    fs::create_directories(fs::path(dir_) / "snapshots");
    live_ = make_agent(cfg_.algorithm, cfg_.agent, cfg_.max_users);
    snapshot_ = live_->clone();
    policy_root_ = StreamRng(derive_key(cfg_.seed, "policy"));

    const fs::path log = fs::path(dir_) / "events.jsonl";
    const bool existing = fs::exists(log) && fs::file_size(log) > 0;
    if (existing) replay();
    fd_ = ::open(log.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    if (fd_ < 0) throw std::runtime_error("cannot open " + log.string() + ": " + std::strerror(errno));
    if (!existing) append({{"type", "header"}, {"schema", kServiceSchema}, {"config", to_json(cfg_)}});
}

StudyService::~StudyService() {
    if (fd_ >= 0) ::close(fd_);
}

void StudyService::append(const json& event) {
    if (replaying_) return;
    const std::string line = event.dump() + '\n';
    std::size_t off = 0;
    while (off < line.size()) {
        const ssize_t n = ::write(fd_, line.data() + off, line.size() - off);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw std::runtime_error("event log write failed: " + std::string(std::strerror(errno)));
        }
        off += static_cast<std::size_t>(n);
    }
    if (::fsync(fd_) != 0) throw std::runtime_error("event log fsync failed: " + std::string(std::strerror(errno)));
}

void StudyService::replay() {
    const fs::path log = fs::path(dir_) / "events.jsonl";
    std::string text;
    {
        std::ifstream in(log, std::ios::binary);
        text.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }
    // A crash before the fsync can leave a final line without its newline; that
    // event was never acknowledged, so it is dropped.
    const std::size_t complete = text.rfind('\n') == std::string::npos ? 0 : text.rfind('\n') + 1;
    if (complete < text.size()) {
        std::fprintf(stderr, "warning: discarding torn final line of %s\n", log.c_str());
        fs::resize_file(log, complete);
    }
    std::vector<json> events;
    for (std::size_t pos = 0; pos < complete;) {
        const std::size_t nl = text.find('\n', pos);
        try {
            events.push_back(json::parse(text.substr(pos, nl - pos)));
        } catch (const json::parse_error&) {
            throw std::runtime_error("corrupt event log line " + std::to_string(events.size() + 1));
        }
        pos = nl + 1;
    }
    if (events.empty() || events.front().value("schema", "") != kServiceSchema)
        throw std::runtime_error("not a service event log: " + log.string());
    if (to_json(service_config_from_json(events.front().at("config"))) != to_json(cfg_))
        throw std::runtime_error("state directory was created with a different config");

    replaying_ = true;
    const auto expect = [](const json& got, const json& want, const char* what) {
        if (got != want)
            throw std::runtime_error(std::string("replay diverged at ") + what + ": logged " + want.dump() + ", re-derived " + got.dump());
    };
    for (std::size_t k = 1; k < events.size(); ++k) {
        const json& ev = events[k];
        const std::string type = ev.at("type").get<std::string>();
        if (type == "register") {
            json got = do_register(ev.at("external_key").get<std::string>());
            got.erase("existing");
            json want = ev;
            want.erase("type");
            expect(got, want, "registration");
        } else if (type == "decision") {
            json got = do_decide(ev.at("user").get<int>(), ev.at("report"));
            got["type"] = "decision";
            expect(got, ev, "decision");
        } else if (type == "reward") {
            json got = do_reward(ev.at("decision_id").get<long>(), ev.at("raw").get<int>());
            got["type"] = "reward";
            expect(got, ev, "reward");
        } else if (type == "update") {
            json got = do_update(ev.at("kind").get<std::string>());
            got["type"] = "update";
            expect(got, ev, "update");
        } else {
            throw std::runtime_error("unknown event type " + type);
        }
        ++replayed_;
    }
    replaying_ = false;
}

std::shared_ptr<const Agent> StudyService::current() const {
    std::lock_guard lk(snap_mu_);
    return snapshot_;
}

json StudyService::do_register(const std::string& key) {
    std::lock_guard lk(state_mu_);
    if (!key.empty()) {
        if (const auto it = by_key_.find(key); it != by_key_.end())
            return {{"user", it->second}, {"external_key", key}, {"existing", true}};
    }
    if (static_cast<int>(users_.size()) >= cfg_.max_users)
        throw ServiceError(409, "study is full (" + std::to_string(cfg_.max_users) + " users)");
    const int id = static_cast<int>(users_.size());
    users_.push_back({key, 0, 0, {}});
    if (!key.empty()) by_key_[key] = id;
    json out = {{"user", id}, {"external_key", key}};
    append({{"type", "register"}, {"user", id}, {"external_key", key}});
    out["existing"] = false;
    return out;
}

json StudyService::do_decide(int user, const json& report) {
    std::lock_guard lk(state_mu_);
    if (user < 0 || user >= static_cast<int>(users_.size())) throw ServiceError(404, "unknown user " + std::to_string(user));
    UserState& u = users_[static_cast<std::size_t>(user)];

    StateTriple s = initial_state();
    if (u.decisions > 0) {
        s.engagement = engagement_from_rewards(u.rewards);
        s.evening = u.decisions % 2;
        const json& use = report.at("cannabis_use");
        s.no_use = no_use_from_report(use.is_null() ? std::nullopt : std::optional<int>(use.get<int>()));
    }
    const std::shared_ptr<const Agent> snap = current();
    const double pi = snap->probability(user, s);
    StreamRng rng(policy_root_.substream(static_cast<std::uint64_t>(user)).key(), u.rng_counter);
    const std::uint64_t counter = rng.counter();
    const ActionDraw ad = sample_action(pi, rng);

    const long id = static_cast<long>(decisions_.size());
    json ev = {{"type", "decision"},
               {"decision_id", id},
               {"user", user},
               {"t", u.decisions},
               {"report", report},
               {"state", {s.engagement, s.evening, s.no_use}},
               {"pi", pi},
               {"counter", counter},
               {"draw", ad.draw},
               {"action", ad.action}};
    append(ev);
    decisions_.push_back({user, s, pi, ad.action, false});
    u.rng_counter = rng.counter();
    ++u.decisions;
    ev.erase("type");
    return ev;
}

json StudyService::do_reward(long id, int raw) {
    std::lock_guard wl(writer_mu_);
    std::lock_guard lk(state_mu_);
    if (id < 0 || id >= static_cast<long>(decisions_.size())) throw ServiceError(404, "unknown decision " + std::to_string(id));
    Decision& d = decisions_[static_cast<std::size_t>(id)];
    if (d.rewarded) throw ServiceError(409, "decision " + std::to_string(id) + " already has a reward");
    const double engineered = live_->observe(d.user, d.state, d.action, d.pi, raw);
    json ev = {{"type", "reward"}, {"decision_id", id}, {"user", d.user}, {"raw", raw}, {"engineered", engineered}};
    append(ev);
    d.rewarded = true;
    users_[static_cast<std::size_t>(d.user)].rewards.push_back(raw);
    ev.erase("type");
    return ev;
}

json StudyService::do_update(const std::string& kind) {
    std::lock_guard wl(writer_mu_);
    int registered = 0;
    {
        std::lock_guard lk(state_mu_);
        registered = static_cast<int>(users_.size());
    }
    const json before = model_summary(*live_, registered);
    const UpdateReport r = kind == "weekly" ? live_->update_hyperparams() : live_->update_posterior();
    std::shared_ptr<const Agent> next = live_->clone();
    const json after = model_summary(*next, registered);

    std::lock_guard lk(state_mu_);
    const int seq = updates_ + 1;
    json ev = {{"type", "update"},
               {"seq", seq},
               {"kind", r.kind},
               {"noise_var", r.noise_var},
               {"re_cov_diag", r.re_cov_diag},
               {"initial_objective", r.initial_objective},
               {"final_objective", r.final_objective},
               {"iterations", r.iterations},
               {"warning", r.warning},
               {"message", r.message},
               {"before", before},
               {"after", after}};
    append(ev);
    {
        std::lock_guard sl(snap_mu_);
        snapshot_ = std::move(next);
    }
    updates_ = seq;
    if (seq % cfg_.snapshot_every == 0) {
        const fs::path path = snapshot_path(dir_, seq);
        const json snap = {{"seq", seq}, {"decisions", decisions_.size()}, {"model", after}};
        if (replaying_ && fs::exists(path)) {
            std::ifstream in(path);
            if (json::parse(in) != snap) throw std::runtime_error("replayed state disagrees with " + path.string());
        } else {
            write_durably(path, snap.dump(1) + '\n');
        }
    }
    ev.erase("type");
    return ev;
}

json StudyService::register_user(const json& payload) {
    reject_unknown(payload, {"external_key"});
    std::string key;
    if (payload.contains("external_key") && !payload["external_key"].is_null()) {
        if (!payload["external_key"].is_string()) unprocessable("'external_key' must be a string");
        key = payload["external_key"].get<std::string>();
    }
    std::lock_guard wl(writer_mu_);
    return do_register(key);
}

json StudyService::decide(const json& payload) {
    reject_unknown(payload, {"user", "survey_completed", "app_used", "activity", "cannabis_use"});
    const long user = integer(field(payload, "user"), "user");
    json report = {{"survey_completed", binary(field(payload, "survey_completed"), "survey_completed")},
                   {"app_used", binary(field(payload, "app_used"), "app_used")},
                   {"activity", binary(field(payload, "activity"), "activity")},
                   {"cannabis_use", nullptr}};
    if (payload.contains("cannabis_use") && !payload["cannabis_use"].is_null()) {
        if (report["survey_completed"] == 0) unprocessable("'cannabis_use' needs a completed survey");
        report["cannabis_use"] = binary(payload["cannabis_use"], "cannabis_use");
    }
    if (user < 0 || user >= cfg_.max_users) throw ServiceError(404, "unknown user " + std::to_string(user));
    return do_decide(static_cast<int>(user), report);
}

json StudyService::reward(const json& payload) {
    reject_unknown(payload, {"decision_id", "reward"});
    const long id = integer(field(payload, "decision_id"), "decision_id");
    const long raw = integer(field(payload, "reward"), "reward");
    if (raw < 0 || raw > 3) unprocessable("reward must be one of 0, 1, 2, 3");
    return do_reward(id, static_cast<int>(raw));
}

json StudyService::update(const json& payload, const std::string& admin_token) {
    if (admin_token_.empty()) throw ServiceError(403, "admin endpoints are disabled: no admin token configured");
    if (admin_token != admin_token_) throw ServiceError(401, "bad admin token");
    reject_unknown(payload, {"kind"});
    const json& k = field(payload, "kind");
    if (!k.is_string() || (k != "nightly" && k != "weekly")) unprocessable("kind must be nightly or weekly");
    return do_update(k.get<std::string>());
}

json StudyService::status() const {
    std::lock_guard lk(state_mu_);
    return {{"algorithm", to_string(cfg_.algorithm)},
            {"users", users_.size()},
            {"max_users", cfg_.max_users},
            {"decisions", decisions_.size()},
            {"updates", updates_},
            {"noise_var", current()->noise_var()}};
}

json StudyService::digest() const {
    std::lock_guard lk(state_mu_);
    json users = json::array();
    for (const auto& u : users_) users.push_back({{"decisions", u.decisions}, {"rng_counter", u.rng_counter}, {"rewards", u.rewards}});
    json decisions = json::array();
    for (const auto& d : decisions_) decisions.push_back({d.user, d.pi, d.action, d.rewarded});
    return {{"updates", updates_},
            {"users", std::move(users)},
            {"decisions", std::move(decisions)},
            {"model", model_summary(*current(), static_cast<int>(users_.size()))}};
}

ServiceResponse StudyService::handle(const ServiceRequest& req) {
    try {
        if (req.method == "GET" && req.path == "/status") return {200, status()};
        if (req.method != "POST") throw ServiceError(404, "no route for " + req.method + " " + req.path);
        const json body = parse_body(req.body);
        if (req.path == "/users") {
            json out = register_user(body);
            const bool existing = out["existing"].get<bool>();
            return {existing ? 200 : 201, std::move(out)};
        }
        if (req.path == "/decision") return {200, decide(body)};
        if (req.path == "/reward") return {200, reward(body)};
        if (req.path == "/admin/update") return {200, update(body, req.admin_token)};
        throw ServiceError(404, "no route for POST " + req.path);
    } catch (const ServiceError& e) {
        return {e.status(), {{"error", e.what()}}};
    } catch (const json::exception& e) {
        return {422, {{"error", e.what()}}};
    } catch (const std::exception& e) {
        return {500, {{"error", e.what()}}};
    }
}

}  // namespace rebandit
