#include "doctest.h"

#include "../oracles.hpp"
#include "rebandit/baselines.hpp"

#include <cmath>

using namespace rebandit;

namespace {

UserStats pool(const oracle::Instance& in) {
    UserStats s(in.p());
    for (int i = 0; i < in.m(); ++i)
        for (std::size_t k = 0; k < in.phi[i].size(); ++k) s.add(in.phi[i][k], in.reward[i][k]);
    return s;
}

}  // namespace

TEST_CASE("BLR with no data is the prior") {
    const PriorSpec prior = PriorSpec::standard();
    const auto post = blr_posterior_update(prior, BLRState::initial(prior));
    CHECK(post.mean == prior.mean);
    CHECK(post.cov == prior.cov);
    const auto nv = blr_update_noise_variance(prior, BLRState::initial(prior));
    CHECK(nv.noise_var == 0.85);
}

TEST_CASE("BLR single observation matches the scalar conjugate update") {
    PriorSpec prior{VectorXd::Zero(2), MatrixXd::Identity(2, 2)};
    prior.mean(0) = -0.2;
    prior.cov(0, 0) = 0.6;
    BLRState st = BLRState::initial(prior, 0.5);
    VectorXd e1 = VectorXd::Zero(2);
    e1(0) = 1.0;
    st.pooled.add(e1, 1.1);
    const auto post = blr_posterior_update(prior, st);
    const double var = 1.0 / (1.0 / 0.6 + 1.0 / 0.5);
    CHECK(std::abs(post.cov(0, 0) - var) <= 1e-10);
    CHECK(std::abs(post.mean(0) - var * (-0.2 / 0.6 + 1.1 / 0.5)) <= 1e-10);
}

TEST_CASE("BLR matches an independent ridge-style closed form") {
    StreamRng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        const auto in = oracle::random_instance(rng, 3, 4, 4);
        BLRState st = BLRState::initial(in.prior, in.hp.noise_var);
        st.pooled = pool(in);
        const auto post = blr_posterior_update(in.prior, st);
        const auto [phi, r] = oracle::stacked_design(in);
        // Pooled design: every user's rows against the same parameter block.
        MatrixXd x(phi.rows(), in.p());
        x.setZero();
        for (int i = 0; i < in.m(); ++i) x += phi.block(0, i * in.p(), phi.rows(), in.p());
        const MatrixXd prec0 = oracle::naive_inverse(in.prior.cov);
        const MatrixXd cov = oracle::naive_inverse(x.transpose() * x / in.hp.noise_var + prec0);
        const VectorXd mean = cov * (x.transpose() * r / in.hp.noise_var + prec0 * in.prior.mean);
        CHECK(oracle::max_abs(post.cov - cov) <= 1e-8);
        CHECK(oracle::max_abs(post.mean - mean) <= 1e-8);
    }
}

TEST_CASE("BLR objective equals the mixed-model objective with one block and no random effects") {
    StreamRng rng(32);
    for (int trial = 0; trial < 20; ++trial) {
        const auto in = oracle::random_instance(rng, 3, 4, 3);
        const UserStats pooled = pool(in);
        SufficientStats one(in.p(), 1);
        one.users[0] = pooled;
        const HyperParams zero_re{in.hp.noise_var, MatrixXd::Zero(in.p(), in.p())};
        const double mixed = marginal_log_likelihood(in.prior, zero_re, one);
        CHECK(std::abs(blr_marginal_log_likelihood(in.prior, pooled, in.hp.noise_var) - mixed) <= 1e-8);
    }
}

TEST_CASE("BLR noise variance update is monotone and respects the floor") {
    StreamRng rng(33);
    const auto in = oracle::random_instance(rng, 3, 5, 3);
    BLRState st = BLRState::initial(in.prior);
    st.pooled = pool(in);
    const auto res = blr_update_noise_variance(in.prior, st);
    CHECK(res.final_objective >= res.initial_objective - 1e-10);
    CHECK(res.noise_var >= 1e-4);
    for (std::size_t k = 1; k < res.trace.size(); ++k) CHECK(res.trace[k] >= res.trace[k - 1]);
}

TEST_CASE("random policy sends half the time") {
    CHECK(random_policy() == 0.5);
    StreamRng rng(10);
    int sent = 0;
    for (int k = 0; k < 10000; ++k) sent += rng.uniform() < random_policy() ? 1 : 0;
    CHECK(std::abs(sent / 10000.0 - 0.5) <= 0.02);
}
