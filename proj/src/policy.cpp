#include "rebandit/policy.hpp"

#include <boost/math/quadrature/gauss.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace rebandit {

void SmoothingParams::validate() const {
    if (!(0.0 <= l_min && l_min < l_max && l_max <= 1.0)) throw std::invalid_argument("need 0 <= l_min < l_max <= 1");
    if (!(c > 0.0) || !(b > 0.0)) throw std::invalid_argument("c and b must be positive");
}

double rho(double x, const SmoothingParams& sp) {
    return sp.l_min + (sp.l_max - sp.l_min) / (1.0 + sp.c * std::exp(-sp.b * x));
}

namespace {

template <unsigned N, class F>
double panel_sum(F&& f, double a, double b) {
    return boost::math::quadrature::gauss<double, N>::integrate(f, a, b);
}

template <class F>
double panel(F&& f, double a, double b, int nodes) {
    switch (nodes) {
        case 8: return panel_sum<8>(f, a, b);
        case 16: return panel_sum<16>(f, a, b);
        case 32: return panel_sum<32>(f, a, b);
        case 64: return panel_sum<64>(f, a, b);
        default: throw std::invalid_argument("nodes_per_panel must be 8, 16, 32 or 64");
    }
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

}  // namespace

double expected_rho(double mean, double var, const SmoothingParams& sp, const QuadratureConfig& qc) {
    if (var < -1e-10) throw std::invalid_argument("negative variance in action probability");
    var = std::max(var, 0.0);
    const double s = std::sqrt(var);
    if (s == 0.0) return rho(mean, sp);

    const double L = qc.half_width;
    std::vector<double> cuts;
    for (double x = -L; x <= L + 1e-12; x += 1.0) cuts.push_back(x);
    // Transition of rho sits at x = log(c)/b; its width is 1/b in the original scale.
    const double centre = (std::log(sp.c) / sp.b - mean) / s;
    const double width = 1.0 / (sp.b * s);
    for (double k : {0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0}) {
        for (double sign : {1.0, -1.0}) {
            const double x = centre + sign * k * width;
            if (x > -L && x < L) cuts.push_back(x);
        }
    }
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

    const auto integrand = [&](double x) { return rho(mean + s * x, sp) * std::exp(-0.5 * x * x); };
    double total = 0.0;
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k) total += panel(integrand, cuts[k], cuts[k + 1], qc.nodes_per_panel);
    const double value = total / std::sqrt(2.0 * std::numbers::pi);
    // The truncated tails carry mass below 1e-18; keep the result inside rho's range.
    return std::clamp(value, sp.l_min, sp.l_max);
}

double action_probability(const VectorXd& mu_beta, const MatrixXd& sigma_beta, const Features& f,
                          const SmoothingParams& sp, const QuadratureConfig& qc, SamplingMode mode) {
    if (mu_beta.size() != kFeatureDim || sigma_beta.rows() != kFeatureDim || sigma_beta.cols() != kFeatureDim)
        throw std::invalid_argument("advantage block must be 8-dimensional");
    const double mean = f.dot(mu_beta);
    double var = f.dot(sigma_beta * f);
    if (var < -1e-10) throw std::invalid_argument("negative variance in action probability");
    var = std::max(var, 0.0);
    if (mode == SamplingMode::indicator) {
        if (var == 0.0) return mean > 0.0 ? 1.0 : 0.0;
        return normal_cdf(mean / std::sqrt(var));
    }
    return expected_rho(mean, var, sp, qc);
}

double action_probability(const UserPosterior& post, const StateTriple& s, const SmoothingParams& sp,
                          const QuadratureConfig& qc, SamplingMode mode) {
    if (post.mean.size() != kParamDim) throw std::invalid_argument("user posterior must be 24-dimensional");
    return action_probability(post.mean.segment<kFeatureDim>(kBetaOffset),
                              post.cov.block<kFeatureDim, kFeatureDim>(kBetaOffset, kBetaOffset), build_features(s), sp,
                              qc, mode);
}

ActionDraw action_from_draw(double pi, double draw) {
    if (!(pi >= 0.0 && pi <= 1.0)) throw std::invalid_argument("pi must lie in [0, 1]");
    return {draw < pi ? 1 : 0, draw};
}

ActionDraw sample_action(double pi, StreamRng& rng) { return action_from_draw(pi, rng.uniform()); }

void RunningMoments::add(double x) {
    ++count;
    const double delta = x - mean;
    mean += delta / static_cast<double>(count);
    m2 += delta * (x - mean);
}

double RunningMoments::stddev() const {
    if (count < 2) return 0.0;
    return std::sqrt(std::max(m2, 0.0) / static_cast<double>(count - 1));
}

double engineer_reward(double raw, int action, double lambda, double sigma_obs) {
    return raw - action * lambda * sigma_obs;
}

RewardEngineer::RewardEngineer(double lambda, int num_users) : lambda_(lambda), moments_(num_users) {
    if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be non-negative");
}

int RewardEngineer::add_user() {
    moments_.emplace_back();
    return num_users() - 1;
}

double RewardEngineer::engineer_and_record(int user, double raw, int action) {
    auto& mom = moments_.at(user);
    const double out = engineer_reward(raw, action, lambda_, mom.stddev());
    mom.add(raw);
    return out;
}

}  // namespace rebandit
