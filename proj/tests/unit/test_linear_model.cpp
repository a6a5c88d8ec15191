#include "doctest.h"

#include "../oracles.hpp"
#include "rebandit/linear_model.hpp"

#include <algorithm>

using namespace rebandit;

TEST_CASE("features follow the fixed monomial order") {
    Features expect;
    expect << 1, 0, 0, 0, 0, 0, 0, 0;
    CHECK(build_features({0, 0, 0}) == expect);
    expect << 1, 1, 1, 1, 1, 1, 1, 1;
    CHECK(build_features({1, 1, 1}) == expect);
    expect << 1, 1, 0, 1, 0, 0, 1, 0;
    CHECK(build_features({1, 0, 1}) == expect);
    CHECK_THROWS_AS(build_features({2, 0, 0}), std::invalid_argument);
}

TEST_CASE("every state gives a 0/1 feature vector with leading one") {
    for (int code = 0; code < 8; ++code) {
        const StateTriple s{code & 1, (code >> 1) & 1, (code >> 2) & 1};
        const Features f = build_features(s);
        CHECK(f(0) == 1.0);
        for (int k = 0; k < kFeatureDim; ++k) CHECK((f(k) == 0.0 || f(k) == 1.0));
        CHECK(f(4) == s.engagement * s.evening);
        CHECK(f(5) == s.evening * s.no_use);
        CHECK(f(6) == s.engagement * s.no_use);
    }
}

TEST_CASE("design vector blocks") {
    const VectorXd phi = build_design({0, 0, 0}, 0, 0.3);
    REQUIRE(phi.size() == kParamDim);
    CHECK(phi(0) == 1.0);
    CHECK(phi(8) == doctest::Approx(-0.3));
    CHECK(phi(16) == doctest::Approx(0.3));
    CHECK(phi.segment(1, 7).isZero());
    CHECK(phi.segment(9, 7).isZero());
    CHECK(phi.segment(17, 7).isZero());

    const StateTriple s{1, 0, 1};
    const VectorXd sent = build_design(s, 1, 1.0);
    CHECK(sent.segment<8>(8).isZero());
    CHECK(sent.segment<8>(16) == build_features(s));

    const VectorXd none = build_design(s, 0, 0.0);
    CHECK(none.tail(16).isZero());

    CHECK_THROWS_AS(build_design(s, 1, 1.2), std::invalid_argument);
    CHECK_THROWS_AS(build_design(s, 1, -0.1), std::invalid_argument);
}

TEST_CASE("design reconstruction identity holds for random inputs") {
    StreamRng rng(11);
    for (int trial = 0; trial < 500; ++trial) {
        const StateTriple s{static_cast<int>(rng.below(2)), static_cast<int>(rng.below(2)),
                            static_cast<int>(rng.below(2))};
        const int a = static_cast<int>(rng.below(2));
        const double pi = rng.uniform();
        const VectorXd phi = build_design(s, a, pi);
        const VectorXd recon = phi.segment<8>(8) + phi.segment<8>(16);
        CHECK(oracle::max_abs(recon - a * build_features(s)) <= 1e-15);
    }
}

TEST_CASE("standard prior reuses the beta block for gamma") {
    const PriorSpec p = PriorSpec::standard();
    p.validate();
    CHECK(p.mean(0) == doctest::Approx(2.12));
    CHECK(p.mean(3) == doctest::Approx(-0.69));
    CHECK(p.mean.segment<8>(16) == p.mean.segment<8>(8));
    CHECK(p.cov.diagonal().segment<8>(16) == p.cov.diagonal().segment<8>(8));
    CHECK(p.cov(0, 0) == doctest::Approx(0.78 * 0.78));
    CHECK(p.cov(8, 8) == doctest::Approx(0.27 * 0.27));
    CHECK(oracle::max_abs(MatrixXd(p.cov) - MatrixXd(p.cov.diagonal().asDiagonal())) == 0.0);

    const HyperParams hp = HyperParams::initial();
    CHECK(hp.noise_var == 0.85);
    CHECK(hp.random_effects_cov.isApprox(0.01 * MatrixXd::Identity(24, 24)));
}

TEST_CASE("sigma theta tilde Kronecker layout") {
    const PriorSpec p = PriorSpec::standard();
    const HyperParams hp = HyperParams::initial();
    CHECK(build_sigma_theta_tilde(p, hp, 1).isApprox(p.cov + hp.random_effects_cov));

    PriorSpec eye{VectorXd::Zero(24), MatrixXd::Identity(24, 24)};
    HyperParams two{1.0, 2.0 * MatrixXd::Identity(24, 24)};
    const MatrixXd s = build_sigma_theta_tilde(eye, two, 2);
    CHECK(s.block(0, 0, 24, 24).isApprox(3.0 * MatrixXd::Identity(24, 24)));
    CHECK(s.block(24, 24, 24, 24).isApprox(3.0 * MatrixXd::Identity(24, 24)));
    CHECK(s.block(0, 24, 24, 24).isApprox(MatrixXd::Identity(24, 24)));
    CHECK(s.block(24, 0, 24, 24).isApprox(MatrixXd::Identity(24, 24)));

    StreamRng rng(3);
    for (int m = 1; m <= 4; ++m) {
        const auto in = oracle::random_instance(rng, m, 0, 3, true, false);
        const MatrixXd t = build_sigma_theta_tilde(in.prior, in.hp, m);
        CHECK(oracle::max_abs(t - t.transpose()) == 0.0);
        CHECK(Eigen::LLT<MatrixXd>(t).info() == Eigen::Success);
    }
}

TEST_CASE("empty data reproduces the prior exactly") {
    const PriorSpec p = PriorSpec::standard();
    const HyperParams hp = HyperParams::initial();
    const SufficientStats stats(24, 3);
    for (auto method : {SolveMethod::dense, SolveMethod::structured}) {
        const auto post = posterior_update(p, hp, stats, {method, true});
        const MatrixXd tilde = build_sigma_theta_tilde(p, hp, 3);
        for (int i = 0; i < 3; ++i) {
            CHECK((post.user_mean[i].array() == p.mean.array()).all());
            CHECK(oracle::max_abs(post.user_cov[i] - (p.cov + hp.random_effects_cov)) <= 1e-12);
        }
        REQUIRE(post.full_cov.has_value());
        CHECK(oracle::max_abs(*post.full_cov - tilde) <= 1e-12);
        const auto u = extract_user_posterior(post, 1);
        CHECK(oracle::max_abs(u.cov - (p.cov + hp.random_effects_cov)) <= 1e-12);
    }
}

TEST_CASE("one observation on the first coordinate matches the scalar conjugate update") {
    const int p = 3;
    PriorSpec prior{VectorXd::Zero(p), MatrixXd::Identity(p, p)};
    prior.mean(0) = 0.4;
    prior.cov(0, 0) = 0.5;
    HyperParams hp{0.8, MatrixXd::Identity(p, p) * 0.3};
    SufficientStats stats(p, 1);
    VectorXd e1 = VectorXd::Zero(p);
    e1(0) = 1.0;
    stats.users[0].add(e1, 1.7);

    const double v0 = 0.5 + 0.3, s2 = 0.8;
    const double post_var = 1.0 / (1.0 / v0 + 1.0 / s2);
    const double post_mean = post_var * (0.4 / v0 + 1.7 / s2);
    for (auto method : {SolveMethod::dense, SolveMethod::structured}) {
        const auto post = posterior_update(prior, hp, stats, {method, false});
        CHECK(post.user_mean[0](0) == doctest::Approx(post_mean).epsilon(1e-12));
        CHECK(post.user_cov[0](0, 0) == doctest::Approx(post_var).epsilon(1e-12));
        CHECK(post.user_mean[0](1) == doctest::Approx(0.0));
    }
}

TEST_CASE("posterior agrees with the naive dense oracle") {
    StreamRng rng(2024);
    for (int trial = 0; trial < 60; ++trial) {
        const int m = 1 + static_cast<int>(rng.below(3));
        const int p = 2 + static_cast<int>(rng.below(3));
        const auto in = oracle::random_instance(rng, m, 5, p, trial % 2 == 0);
        const auto ref = oracle::dense_posterior(in);
        for (auto method : {SolveMethod::dense, SolveMethod::structured}) {
            const auto post = posterior_update(in.prior, in.hp, in.stats, {method, true});
            CHECK(oracle::max_abs(post.stacked_mean() - ref.mean) <= 1e-8);
            REQUIRE(post.full_cov.has_value());
            CHECK(oracle::max_abs(*post.full_cov - ref.cov) <= 1e-8);
            for (int i = 0; i < m; ++i)
                CHECK(oracle::max_abs(post.user_cov[i] - ref.cov.block(i * p, i * p, p, p)) <= 1e-8);
        }
    }
}

TEST_CASE("structured path agrees with dense path at full dimension") {
    StreamRng rng(77);
    const PriorSpec prior = PriorSpec::standard();
    HyperParams hp = HyperParams::initial();
    hp.random_effects_cov = oracle::random_diag(rng, 24, 0.005, 0.05);
    const int m = 4;
    SufficientStats stats(24, m);
    for (int i = 0; i < m; ++i) {
        for (int t = 0; t < 10 * (i + 1); ++t) {
            const StateTriple s{static_cast<int>(rng.below(2)), t % 2, static_cast<int>(rng.below(2))};
            const double pi = 0.2 + 0.6 * rng.uniform();
            const int a = rng.uniform() < pi ? 1 : 0;
            stats.users[i].add(build_design(s, a, pi), static_cast<double>(rng.below(4)));
        }
    }
    const auto dense = posterior_update(prior, hp, stats, {SolveMethod::dense, true});
    const auto fast = posterior_update(prior, hp, stats, {SolveMethod::structured, true});
    CHECK(oracle::max_abs(dense.stacked_mean() - fast.stacked_mean()) <= 1e-8);
    CHECK(oracle::max_abs(*dense.full_cov - *fast.full_cov) <= 1e-8);
    for (int i = 0; i < m; ++i) {
        CHECK(oracle::max_abs(fast.user_cov[i] - fast.user_cov[i].transpose()) <= 1e-12);
        Eigen::SelfAdjointEigenSolver<MatrixXd> es(fast.user_cov[i]);
        CHECK(es.eigenvalues().minCoeff() > 0.0);
    }
}

TEST_CASE("m = 1 equals a single Bayesian regression with prior Sigma_p + Sigma_u") {
    StreamRng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        auto in = oracle::random_instance(rng, 1, 6, 4);
        const auto post = posterior_update(in.prior, in.hp, in.stats);
        const MatrixXd prior_cov = in.prior.cov + in.hp.random_effects_cov;
        const MatrixXd prec_prior = oracle::naive_inverse(prior_cov);
        const auto& u = in.stats.users[0];
        const MatrixXd cov = oracle::naive_inverse(prec_prior + u.gram / in.hp.noise_var);
        const VectorXd mean = cov * (prec_prior * in.prior.mean + u.cross / in.hp.noise_var);
        CHECK(oracle::max_abs(post.user_mean[0] - mean) <= 1e-8);
        CHECK(oracle::max_abs(post.user_cov[0] - cov) <= 1e-8);
    }
}

TEST_CASE("vanishing random effects collapse every user onto the pooled regression") {
    StreamRng rng(8);
    auto in = oracle::random_instance(rng, 3, 5, 3);
    in.hp.random_effects_cov = 1e-9 * MatrixXd::Identity(3, 3);
    const auto post = posterior_update(in.prior, in.hp, in.stats);
    MatrixXd gram = MatrixXd::Zero(3, 3);
    VectorXd cross = VectorXd::Zero(3);
    for (const auto& u : in.stats.users) {
        gram += u.gram;
        cross += u.cross;
    }
    const MatrixXd prec_prior = oracle::naive_inverse(in.prior.cov + in.hp.random_effects_cov);
    const MatrixXd cov = oracle::naive_inverse(prec_prior + gram / in.hp.noise_var);
    const VectorXd mean = cov * (prec_prior * in.prior.mean + cross / in.hp.noise_var);
    for (int i = 0; i < 3; ++i) CHECK(oracle::max_abs(post.user_mean[i] - mean) <= 1e-4);
}

TEST_CASE("sufficient statistics do not depend on observation order") {
    StreamRng rng(13);
    auto in = oracle::random_instance(rng, 1, 6, 4);
    std::vector<int> order(in.phi[0].size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = static_cast<int>(k);
    std::reverse(order.begin(), order.end());
    UserStats rev(4);
    for (int k : order) rev.add(in.phi[0][k], in.reward[0][k]);
    CHECK(oracle::max_abs(rev.gram - in.stats.users[0].gram) <= 1e-12);
    CHECK(oracle::max_abs(rev.cross - in.stats.users[0].cross) <= 1e-12);
    CHECK(rev.count == in.stats.users[0].count);
    CHECK(oracle::max_abs(rev.gram - rev.gram.transpose()) == 0.0);
}

TEST_CASE("user extraction bounds") {
    const auto post = prior_posterior(PriorSpec::standard(), HyperParams::initial(), 2);
    CHECK_THROWS_AS(extract_user_posterior(post, 2), std::out_of_range);
    CHECK_THROWS_AS(extract_user_posterior(post, -1), std::out_of_range);
}

TEST_CASE("ill-conditioned hyperparameters raise a diagnostic error") {
    PriorSpec prior{VectorXd::Zero(2), MatrixXd::Identity(2, 2)};
    HyperParams hp{1.0, MatrixXd::Identity(2, 2)};
    hp.random_effects_cov(0, 0) = -5.0;
    SufficientStats stats(2, 2);
    stats.users[0].add(VectorXd::Ones(2), 1.0);
    CHECK_THROWS_AS(posterior_update(prior, hp, stats, {SolveMethod::dense, false}), NumericalError);
}
