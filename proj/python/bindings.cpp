#include "rebandit/diagnostics.hpp"
#include "rebandit/empirical_bayes.hpp"
#include "rebandit/policy.hpp"
#include "rebandit/trial.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>

namespace py = pybind11;
using namespace rebandit;

namespace {

// Per-user design matrices (rows are observations) and reward vectors.
SufficientStats make_stats(const std::vector<MatrixXd>& designs, const std::vector<VectorXd>& rewards, int p) {
    if (designs.size() != rewards.size()) throw std::invalid_argument("designs and rewards need one entry per user");
    SufficientStats stats(p, static_cast<int>(designs.size()));
    for (std::size_t i = 0; i < designs.size(); ++i) {
        const MatrixXd& x = designs[i];
        if (x.rows() != rewards[i].size()) throw std::invalid_argument("design rows must match reward count");
        if (x.rows() > 0 && x.cols() != p) throw std::invalid_argument("design columns must equal the prior dimension");
        for (int r = 0; r < x.rows(); ++r) stats.users[i].add(x.row(r).transpose(), rewards[i](r));
    }
    return stats;
}

PriorSpec make_prior(const std::optional<VectorXd>& mean, const std::optional<MatrixXd>& cov) {
    if (!mean && !cov) return PriorSpec::standard();
    if (!mean || !cov) throw std::invalid_argument("give both prior_mean and prior_cov, or neither");
    PriorSpec p{*mean, *cov};
    p.validate();
    return p;
}

struct Inputs {
    PriorSpec prior;
    HyperParams hp;
    SufficientStats stats;
};

Inputs inputs(const std::vector<MatrixXd>& designs, const std::vector<VectorXd>& rewards, double noise_var,
              const MatrixXd& re_cov, const std::optional<VectorXd>& prior_mean, const std::optional<MatrixXd>& prior_cov) {
    Inputs in{make_prior(prior_mean, prior_cov), HyperParams{noise_var, re_cov}, {}};
    in.hp.validate();
    in.stats = make_stats(designs, rewards, in.prior.dim());
    return in;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "reBandit core bindings";
    m.attr("__version__") = REBANDIT_VERSION;
    m.attr("PARAM_DIM") = kParamDim;

    m.def("rho", [](double x, double l_min, double l_max, double c, double b) { return rho(x, {l_min, l_max, c, b}); },
          py::arg("x"), py::arg("l_min") = 0.2, py::arg("l_max") = 0.8, py::arg("c") = 5.0, py::arg("b") = 21.053);

    m.def("build_design", [](int s1, int s2, int s3, int action, double pi) {
        const StateTriple s{s1, s2, s3};
        validate_state(s);
        return build_design(s, action, pi);
    }, py::arg("s1"), py::arg("s2"), py::arg("s3"), py::arg("action"), py::arg("pi"));

    m.def("standard_prior", [] {
        const auto p = PriorSpec::standard();
        return py::make_tuple(p.mean, p.cov);
    });

    m.def("action_probability", [](const VectorXd& mean, const MatrixXd& cov, int s1, int s2, int s3) {
        return action_probability(UserPosterior{mean, cov}, StateTriple{s1, s2, s3});
    }, py::arg("mean"), py::arg("cov"), py::arg("s1"), py::arg("s2"), py::arg("s3"));

    m.def("posterior", [](const std::vector<MatrixXd>& designs, const std::vector<VectorXd>& rewards, double noise_var,
                          const MatrixXd& re_cov, std::optional<VectorXd> prior_mean, std::optional<MatrixXd> prior_cov,
                          const std::string& method) {
        const Inputs in = inputs(designs, rewards, noise_var, re_cov, prior_mean, prior_cov);
        if (method != "structured" && method != "dense") throw std::invalid_argument("method must be structured or dense");
        const auto post = posterior_update(in.prior, in.hp, in.stats,
                                           {method == "dense" ? SolveMethod::dense : SolveMethod::structured, false});
        py::dict out;
        out["user_means"] = post.user_mean;
        out["user_covs"] = post.user_cov;
        return out;
    }, py::arg("designs"), py::arg("rewards"), py::arg("noise_var"), py::arg("re_cov"),
       py::arg("prior_mean") = py::none(), py::arg("prior_cov") = py::none(), py::arg("method") = "structured",
       "Posterior over each user's parameters given per-user designs (n_i x p) and rewards.");

    m.def("marginal_log_likelihood", [](const std::vector<MatrixXd>& designs, const std::vector<VectorXd>& rewards,
                                        double noise_var, const MatrixXd& re_cov, std::optional<VectorXd> prior_mean,
                                        std::optional<MatrixXd> prior_cov) {
        const Inputs in = inputs(designs, rewards, noise_var, re_cov, prior_mean, prior_cov);
        return marginal_log_likelihood(in.prior, in.hp, in.stats);
    }, py::arg("designs"), py::arg("rewards"), py::arg("noise_var"), py::arg("re_cov"),
       py::arg("prior_mean") = py::none(), py::arg("prior_cov") = py::none(),
       "Twice the log marginal density of the rewards plus n log(2 pi).");

    m.def("update_hyperparams", [](const std::vector<MatrixXd>& designs, const std::vector<VectorXd>& rewards,
                                   double noise_var, const MatrixXd& re_cov, std::optional<VectorXd> prior_mean,
                                   std::optional<MatrixXd> prior_cov, int max_iters, const std::string& parameterization) {
        const Inputs in = inputs(designs, rewards, noise_var, re_cov, prior_mean, prior_cov);
        OptimizerConfig cfg;
        cfg.max_iters = max_iters;
        if (parameterization == "cholesky") cfg.parameterization = Parameterization::cholesky_full;
        else if (parameterization != "diagonal") throw std::invalid_argument("parameterization must be diagonal or cholesky");
        const auto res = update_hyperparams(in.prior, in.stats, in.hp, cfg);
        py::dict out;
        out["noise_var"] = res.hp.noise_var;
        out["re_cov"] = res.hp.random_effects_cov;
        out["initial_objective"] = res.initial_objective;
        out["final_objective"] = res.final_objective;
        out["iterations"] = res.iterations;
        out["converged"] = res.converged;
        out["warning"] = res.warning;
        return out;
    }, py::arg("designs"), py::arg("rewards"), py::arg("noise_var"), py::arg("re_cov"),
       py::arg("prior_mean") = py::none(), py::arg("prior_cov") = py::none(), py::arg("max_iters") = 200,
       py::arg("parameterization") = "diagonal");

    m.def("joint_posterior", [](const std::vector<MatrixXd>& designs, const std::vector<VectorXd>& rewards,
                                double noise_var, const MatrixXd& re_cov, std::optional<VectorXd> prior_mean,
                                std::optional<MatrixXd> prior_cov) {
        const Inputs in = inputs(designs, rewards, noise_var, re_cov, prior_mean, prior_cov);
        py::list out;
        for (const auto& jp : joint_posterior(in.prior, in.hp, in.stats)) {
            py::dict d;
            d["pop_mean"] = jp.pop_mean;
            d["user_mean"] = jp.user_mean;
            d["theta_mean"] = VectorXd(jp.theta_mean());
            d["theta_cov"] = MatrixXd(jp.theta_cov());
            out.append(d);
        }
        return out;
    }, py::arg("designs"), py::arg("rewards"), py::arg("noise_var"), py::arg("re_cov"),
       py::arg("prior_mean") = py::none(), py::arg("prior_cov") = py::none());

    m.def("run_experiment", [](const std::string& config_json, std::optional<std::string> out_dir) {
        const TrialConfig cfg = trial_config_from_json(nlohmann::json::parse(config_json));
        ExperimentOutput out;
        {
            py::gil_scoped_release release;
            out = run_experiment(cfg, out_dir);
        }
        const auto& s = out.summary;
        py::list means;
        for (const auto& r : out.results) means.append(r.mean_total);
        py::dict d;
        d["mean_total"] = s.pooled.mean;
        d["ci_half_width"] = s.pooled.half_width;
        d["trial_mean"] = s.trial_mean.mean;
        d["trial_ci_half_width"] = s.trial_mean.half_width;
        d["send_rate"] = s.send_rate;
        d["update_warnings"] = s.update_warnings;
        d["trial_means"] = means;
        return d;
    }, py::arg("config_json"), py::arg("out_dir") = py::none(),
       "Runs seeded trials from a JSON config (same schema as the CLI) and returns the summary.");

    m.def("replay_trial_log", [](const std::string& path) {
        const auto r = replay_trial_log(path);
        py::dict d;
        d["ok"] = r.ok();
        d["decisions"] = r.decisions;
        d["updates"] = r.updates;
        d["max_pi_diff"] = r.max_pi_diff;
        return d;
    }, py::arg("path"));
}
