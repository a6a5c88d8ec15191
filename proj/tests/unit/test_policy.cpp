#include "doctest.h"

#include "../oracles.hpp"
#include "rebandit/policy.hpp"

#include <cmath>

using namespace rebandit;

TEST_CASE("rho constants and limits") {
    CHECK(std::abs(rho(0.0) - 0.3) <= 1e-12);
    CHECK(rho(0.1) == doctest::Approx(0.2 + 0.6 / (1.0 + 5.0 * std::exp(-2.1053))).epsilon(1e-12));
    CHECK(rho(0.1) == doctest::Approx(0.5729).epsilon(1e-4));
    CHECK(rho(50.0) == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(rho(-50.0) == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("rho is strictly increasing") {
    StreamRng rng(1);
    for (int k = 0; k < 2000; ++k) {
        const double a = rng.normal(0.0, 0.3), b = a + 1e-3 + rng.uniform();
        CHECK(rho(a) < rho(b));
    }
}

TEST_CASE("degenerate posteriors") {
    const Features f = build_features({1, 0, 1});
    const MatrixXd zero = MatrixXd::Zero(8, 8);
    CHECK(action_probability(VectorXd::Zero(8), zero, f) == doctest::Approx(0.3).epsilon(1e-14));

    // f^T mu = 10 with variance 1e-8 on the intercept direction.
    VectorXd mu = VectorXd::Zero(8);
    mu(0) = 10.0;
    MatrixXd tiny = MatrixXd::Zero(8, 8);
    tiny(0, 0) = 1e-8;
    CHECK(std::abs(action_probability(mu, tiny, build_features({0, 0, 0})) - 0.8) <= 1e-6);

    MatrixXd neg = MatrixXd::Zero(8, 8);
    neg(0, 0) = -1e-6;
    CHECK_THROWS_AS(action_probability(VectorXd::Zero(8), neg, build_features({0, 0, 0})), std::invalid_argument);
    neg(0, 0) = -1e-12;
    CHECK(action_probability(VectorXd::Zero(8), neg, build_features({0, 0, 0})) == doctest::Approx(0.3));
}

TEST_CASE("quadrature matches Monte Carlo at unit variance") {
    StreamRng rng(99);
    const int draws = 1'000'000;
    double acc = 0.0;
    for (int k = 0; k < draws; ++k) acc += rho(rng.normal());
    CHECK(std::abs(expected_rho(0.0, 1.0) - acc / draws) <= 1e-3);
}

TEST_CASE("quadrature agrees with a fine trapezoid reference") {
    // Dense trapezoid on [-12, 12] with 2e5 panels; rho is smooth so this is accurate to ~1e-10.
    const auto reference = [](double m, double v) {
        const double s = std::sqrt(v);
        const int n = 200000;
        const double a = -12.0, h = 24.0 / n;
        double acc = 0.0;
        for (int k = 0; k <= n; ++k) {
            const double x = a + k * h;
            const double w = (k == 0 || k == n) ? 0.5 : 1.0;
            acc += w * rho(m + s * x) * std::exp(-0.5 * x * x);
        }
        return acc * h / std::sqrt(2.0 * std::numbers::pi);
    };
    for (double v : {1e-6, 1e-4, 1e-2, 0.1, 0.5, 1.0, 4.0})
        for (double m : {-1.0, -0.1, 0.0, 0.0764, 0.3, 2.0}) CHECK(std::abs(expected_rho(m, v) - reference(m, v)) <= 1e-8);
}

TEST_CASE("doubling quadrature nodes changes the probability by less than 1e-8") {
    StreamRng rng(7);
    for (int k = 0; k < 2000; ++k) {
        const double m = rng.normal(0.0, 0.5);
        const double v = std::exp(rng.normal(-3.0, 2.0));
        const double a = expected_rho(m, v, {}, {16, 9.0});
        const double b = expected_rho(m, v, {}, {32, 9.0});
        const double c = expected_rho(m, v, {}, {64, 9.0});
        CHECK(std::abs(a - b) < 1e-8);
        CHECK(std::abs(b - c) < 1e-8);
    }
}

TEST_CASE("probabilities stay inside the clipping band for random posteriors") {
    StreamRng rng(2718);
    int bad = 0;
    for (int k = 0; k < 100000; ++k) {
        VectorXd mu(8);
        for (int j = 0; j < 8; ++j) mu(j) = rng.normal(0.0, std::exp(rng.normal(-1.0, 1.5)));
        const MatrixXd cov = oracle::random_spd(rng, 8, std::exp(rng.normal(-3.0, 2.0)), 0.0);
        const StateTriple s{static_cast<int>(rng.below(2)), static_cast<int>(rng.below(2)),
                            static_cast<int>(rng.below(2))};
        const double pi = action_probability(mu, cov, build_features(s));
        if (!(pi >= 0.2 && pi <= 0.8)) ++bad;
    }
    CHECK(bad == 0);
}

TEST_CASE("probability is monotone in the mean at fixed variance") {
    for (double v : {1e-4, 0.01, 0.3, 2.0}) {
        double prev = 0.0;
        for (int k = -40; k <= 40; ++k) {
            const double p = expected_rho(0.02 * k, v);
            CHECK(p >= prev);
            prev = p;
        }
    }
}

TEST_CASE("indicator test mode is the normal tail probability") {
    VectorXd mu = VectorXd::Zero(8);
    mu(0) = 0.5;
    MatrixXd cov = MatrixXd::Zero(8, 8);
    cov(0, 0) = 0.25;
    const double p = action_probability(mu, cov, build_features({0, 0, 0}), {}, {}, SamplingMode::indicator);
    CHECK(p == doctest::Approx(0.5 * std::erfc(-1.0 / std::sqrt(2.0))).epsilon(1e-12));
}

TEST_CASE("action threshold rule") {
    CHECK(action_from_draw(0.8, 0.79).action == 1);
    CHECK(action_from_draw(0.2, 0.2).action == 0);
    StreamRng a(42), b(42);
    for (int k = 0; k < 100; ++k) {
        const auto x = sample_action(0.5, a), y = sample_action(0.5, b);
        CHECK(x.action == y.action);
        CHECK(x.draw == y.draw);
    }
}

TEST_CASE("engineered rewards") {
    CHECK(engineer_reward(2.0, 0, 1.0, 0.5) == 2.0);
    CHECK(engineer_reward(3.0, 1, 0.0, 0.9) == 3.0);
    CHECK(engineer_reward(2.0, 1, 1.0, 0.5) == doctest::Approx(1.5));

    RewardEngineer eng(1.0, 1);
    CHECK(eng.engineer_and_record(0, 3.0, 1) == 3.0);  // no history
    CHECK(eng.engineer_and_record(0, 1.0, 1) == 1.0);  // one observation: sd 0
    // Now history {3, 1}: sample sd = sqrt(2).
    CHECK(eng.engineer_and_record(0, 2.0, 1) == doctest::Approx(2.0 - std::sqrt(2.0)));
    CHECK(eng.engineer_and_record(0, 2.0, 0) == 2.0);
    CHECK(eng.sigma_obs(0) == doctest::Approx(std::sqrt(2.0 / 3.0)));
}

TEST_CASE("running moments match a two-pass computation") {
    StreamRng rng(5);
    RunningMoments mom;
    std::vector<double> xs;
    for (int k = 0; k < 200; ++k) {
        const double x = static_cast<double>(rng.below(4));
        xs.push_back(x);
        mom.add(x);
    }
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= xs.size();
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    CHECK(mom.stddev() == doctest::Approx(std::sqrt(ss / (xs.size() - 1))).epsilon(1e-12));
}
