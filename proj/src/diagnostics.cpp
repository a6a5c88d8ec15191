#include "rebandit/diagnostics.hpp"

#include "rebandit/agents.hpp"
#include "rebandit/trial.hpp"

#include <cstdio>
#include <fstream>
#include <ostream>
#include <stdexcept>

namespace rebandit {

namespace {

MatrixXd spd_inverse(const MatrixXd& m, const char* what) {
    const auto llt = checked_llt(symmetrize(m), what);
    return llt.solve(MatrixXd::Identity(m.rows(), m.cols()));
}

}  // namespace

PopulationStatistics population_statistics(const PriorSpec& prior, const HyperParams& hp, const SufficientStats& stats) {
    prior.validate();
    hp.validate();
    const int p = prior.dim();
    const int m = stats.num_users();
    if (m < 1) throw std::invalid_argument("population statistics need at least one user");
    if (stats.dim() != p || hp.dim() != p) throw std::invalid_argument("dimension mismatch between prior, hyperparameters and stats");

    PopulationStatistics ps;
    ps.num_users = m;
    ps.noise_var = hp.noise_var;
    ps.t1 = VectorXd::Zero(p);
    ps.t2 = VectorXd::Zero(p);
    ps.t3 = MatrixXd::Zero(p, p);
    ps.t4 = MatrixXd::Zero(p, p);
    ps.psi.reserve(m);

    const double s2 = hp.noise_var;
    const MatrixXd su_inv = spd_inverse(hp.random_effects_cov, "random-effects covariance");
    for (const auto& u : stats.users) {
        MatrixXd psi = symmetrize(s2 * su_inv + u.gram);
        const auto llt = checked_llt(psi, "Psi_i");
        ps.t1 += u.cross;
        ps.t2 += u.gram * llt.solve(u.cross);
        ps.t3 += u.gram;
        ps.t4 += u.gram * llt.solve(u.gram);
        ps.psi.push_back(std::move(psi));
    }
    const double inv_m = 1.0 / m;
    ps.t1 *= inv_m;
    ps.t2 *= inv_m;
    ps.t3 *= inv_m;
    ps.t4 = symmetrize(ps.t4 * inv_m);

    const auto prior_llt = checked_llt(prior.cov, "prior covariance");
    const MatrixXd prior_prec = prior_llt.solve(MatrixXd::Identity(p, p));
    ps.e = symmetrize(inv_m * prior_prec + (ps.t3 - ps.t4) / s2);
    const VectorXd rhs = inv_m * prior_llt.solve(prior.mean) + (ps.t1 - ps.t2) / s2;
    ps.lambda = checked_llt(ps.e, "E").solve(rhs);
    return ps;
}

JointPosterior joint_posterior(const PopulationStatistics& ps, const SufficientStats& stats, int user) {
    if (user < 0 || user >= stats.num_users() || user >= static_cast<int>(ps.psi.size()))
        throw std::out_of_range("user index out of range");
    const auto& u = stats.users[static_cast<std::size_t>(user)];
    const auto llt = checked_llt(ps.psi[static_cast<std::size_t>(user)], "Psi_i");
    const MatrixXd w = llt.solve(u.gram);  // Psi^{-1} A
    const int p = static_cast<int>(ps.lambda.size());

    JointPosterior jp;
    jp.pop_mean = ps.lambda;
    jp.user_mean = llt.solve(u.cross - u.gram * ps.lambda);
    jp.v1 = spd_inverse(ps.num_users * ps.e, "mE");
    jp.v2 = -jp.v1 * w.transpose();
    jp.v3 = jp.v2.transpose();
    jp.v4 = symmetrize(ps.noise_var * llt.solve(MatrixXd::Identity(p, p)) + w * jp.v1 * w.transpose());
    return jp;
}

std::vector<JointPosterior> joint_posterior(const PriorSpec& prior, const HyperParams& hp, const SufficientStats& stats) {
    const auto ps = population_statistics(prior, hp, stats);
    std::vector<JointPosterior> out;
    out.reserve(static_cast<std::size_t>(stats.num_users()));
    for (int i = 0; i < stats.num_users(); ++i) out.push_back(joint_posterior(ps, stats, i));
    return out;
}

void diagnose_trial_log(const std::string& path, std::ostream& csv) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open log: " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty log: " + path);
    const auto header = nlohmann::json::parse(line);
    if (header.value("type", "") != "header" || !header.contains("config"))
        throw std::runtime_error("not a trial log: " + path);
    const TrialConfig cfg = trial_config_from_json(header["config"]);
    if (cfg.algorithm != Algorithm::rebandit)
        throw std::runtime_error("diagnostics need a rebandit trial log, got " + to_string(cfg.algorithm));

    ReBanditAgent agent(cfg.agent, cfg.env.num_users);
    const int p = kParamDim;
    csv << "t,kind,noise_var,m,observations,trace_t3,trace_t4,norm_t1,norm_t2,trace_e,min_eig_e";
    for (int j = 0; j < p; ++j) csv << ",lambda_" << j;
    csv << '\n';

    char buf[64];
    const auto num = [&](double v) -> const char* {
        std::snprintf(buf, sizeof buf, "%.10g", v);
        return buf;
    };
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto rec = nlohmann::json::parse(line);
        const std::string type = rec.value("type", "");
        if (type == "decision") {
            const auto st = rec["state"].get<std::vector<int>>();
            agent.observe(rec["user"].get<int>(), StateTriple{st.at(0), st.at(1), st.at(2)}, rec["action"].get<int>(),
                          rec["pi"].get<double>(), rec["reward"].get<double>());
        } else if (type == "update") {
            const std::string kind = rec["kind"].get<std::string>();
            if (kind == "weekly") agent.update_hyperparams();
            else agent.update_posterior();
            const auto ps = population_statistics(cfg.agent.prior, agent.hyperparams(), agent.stats());
            const Eigen::SelfAdjointEigenSolver<MatrixXd> eig(ps.e, Eigen::EigenvaluesOnly);
            csv << rec["t"].get<int>() << ',' << kind << ',' << num(ps.noise_var) << ',' << ps.num_users << ','
                << agent.stats().total_count() << ',' << num(ps.t3.trace()) << ',' << num(ps.t4.trace()) << ','
                << num(ps.t1.norm()) << ',' << num(ps.t2.norm()) << ',' << num(ps.e.trace()) << ','
                << num(eig.eigenvalues().minCoeff());
            for (int j = 0; j < p; ++j) csv << ',' << num(ps.lambda(j));
            csv << '\n';
        }
    }
}

}  // namespace rebandit
