#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "mnat/sampler.hpp"

using namespace mnat;

namespace {

// Endpoints of independent chains on the 1D box [-1, 1] for the single model w=1, b=0, y=-1.
std::vector<double> chain_endpoints(double beta, std::size_t chains, std::size_t steps, std::uint64_t seed) {
    const FlatMixture flat(ParticleMixture::dirac({1.0, 0.0}));
    const LabeledSample s{{0.0}, -1};
    const GibbsSpec spec{&flat, &s, {{0.0}, 1.0, Norm::Linf}, beta};
    PlaConfig cfg;
    cfg.steps = steps;
    cfg.step_size = 1e-3;
    cfg.noise = 1.0;
    std::vector<double> out;
    for (std::size_t c = 0; c < chains; ++c) {
        RngStream rng(seed, "chain", c);
        out.push_back(pla_sample(spec, cfg, Vec{0.0}, rng)[0]);
    }
    return out;
}

std::vector<double> histogram(const std::vector<double>& xs, std::size_t bins) {
    std::vector<double> h(bins, 0.0);
    for (double x : xs) {
        auto b = static_cast<std::size_t>((x + 1.0) / 2.0 * bins);
        h[std::min(b, bins - 1)] += 1.0 / static_cast<double>(xs.size());
    }
    return h;
}

}  // namespace

TEST(UniformBall, ZeroRadiusReturnsCenter) {
    RngStream rng(1, "u");
    EXPECT_EQ(sample_uniform_ball({{0.3, -2.0}, 0.0, Norm::L2}, rng), (Vec{0.3, -2.0}));
    EXPECT_EQ(sample_uniform_ball({{0.3, -2.0}, 0.0, Norm::Linf}, rng), (Vec{0.3, -2.0}));
}

TEST(UniformBall, L2MeanAndMembership) {
    const Ball b{{1.0, -1.0}, 2.0, Norm::L2};
    RngStream rng(2, "u");
    double mx = 0, my = 0, inner = 0;
    const int n = 100000;
    for (int k = 0; k < n; ++k) {
        const Vec p = sample_uniform_ball(b, rng);
        ASSERT_TRUE(b.contains(p, 1e-12));
        mx += p[0];
        my += p[1];
        if (b.distance(p) <= 1.0) inner += 1;
    }
    EXPECT_NEAR(mx / n, 1.0, 0.02 * 2.0);
    EXPECT_NEAR(my / n, -1.0, 0.02 * 2.0);
    // Uniform in area: a quarter of the mass lies within half the radius.
    EXPECT_NEAR(inner / n, 0.25, 0.01);
}

TEST(UniformBall, LinfMembership) {
    const Ball b{{0.0, 0.0, 0.0}, 0.5, Norm::Linf};
    RngStream rng(3, "u");
    for (int k = 0; k < 10000; ++k) ASSERT_TRUE(b.contains(sample_uniform_ball(b, rng), 1e-12));
}

TEST(RngStream, IdenticalKeysIdenticalStreams) {
    RngStream a(7, "pla", 3, 9), b(7, "pla", 3, 9), c(7, "pla", 4, 9);
    const auto x = a.bits();
    EXPECT_EQ(x, b.bits());
    EXPECT_NE(x, c.bits());
}

TEST(Pla, ConstantLossDoesNotMove) {
    const FlatMixture flat(ParticleMixture::dirac({0.0, 0.0, 0.4}));
    const LabeledSample s{{0.0, 0.0}, 1};
    const GibbsSpec spec{&flat, &s, {{0.0, 0.0}, 1.0, Norm::L2}, 0.1};
    PlaConfig cfg;
    cfg.noise = 0.0;
    RngStream rng(1, "pla");
    EXPECT_EQ(pla_sample(spec, cfg, Vec{0.2, -0.3}, rng), (Vec{0.2, -0.3}));
}

TEST(Pla, NoiselessChainAscendsTheLoss) {
    const FlatMixture flat(ParticleMixture::uniform({{1.0, 2.0, 0.0}, {0.5, -0.5, 1.0}}));
    const LabeledSample s{{0.0, 0.0}, 1};
    const GibbsSpec spec{&flat, &s, {{0.0, 0.0}, 1.0, Norm::L2}, 0.5};
    PlaConfig cfg;
    cfg.noise = 0.0;
    cfg.step_size = 1e-2;
    cfg.steps = 500;
    RngStream rng(1, "pla");
    std::vector<double> trace;
    const Vec end = pla_sample(spec, cfg, Vec{0.0, 0.0}, rng, &trace);
    ASSERT_EQ(trace.size(), 500u);
    for (std::size_t k = 1; k < trace.size(); ++k) EXPECT_GE(trace[k], trace[k - 1] - 1e-15) << k;
    EXPECT_NEAR(std::hypot(end[0], end[1]), 1.0, 1e-9);
}

TEST(Pla, IteratesStayInside) {
    const FlatMixture flat(ParticleMixture::dirac({3.0, -1.0, 0.0}));
    const LabeledSample s{{0.5, 0.5}, -1};
    for (Norm nm : {Norm::L2, Norm::Linf}) {
        const Ball b{{0.5, 0.5}, 0.3, nm};
        const GibbsSpec spec{&flat, &s, b, 0.01};
        PlaConfig cfg;
        cfg.step_size = 0.05;
        Vec x = s.x;
        for (std::uint64_t it = 0; it < 200; ++it) {
            RngStream rng(5, "pla", 0, it);
            x = pla_sample(spec, cfg, x, rng);
            ASSERT_TRUE(b.contains(x, 1e-12));
        }
    }
}

TEST(Pla, BitReproducible) {
    const FlatMixture flat(ParticleMixture::uniform({{1.0, 2.0, 0.0}, {0.5, -0.5, 1.0}}));
    const LabeledSample s{{0.0, 0.0}, 1};
    const GibbsSpec spec{&flat, &s, {{0.0, 0.0}, 1.0, Norm::L2}, 0.05};
    PlaConfig cfg;
    RngStream a(9, "pla", 2, 3), b(9, "pla", 2, 3);
    EXPECT_EQ(pla_sample(spec, cfg, Vec{0.1, 0.1}, a), pla_sample(spec, cfg, Vec{0.1, 0.1}, b));
}

TEST(Pla, NonFiniteGradientNamesStep) {
    const FlatMixture flat(ParticleMixture::dirac({INFINITY, 0.0}));
    const LabeledSample s{{0.0}, 1};
    const GibbsSpec spec{&flat, &s, {{0.0}, 1.0, Norm::L2}, 0.1};
    RngStream rng(1, "pla");
    try {
        pla_sample(spec, PlaConfig{}, Vec{0.0}, rng);
        FAIL() << "expected a runtime error";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos) << e.what();
    }
}

TEST(Pla, RejectsBadInput) {
    const FlatMixture flat(ParticleMixture::dirac({1.0, 0.0}));
    const LabeledSample s{{0.0}, 1};
    RngStream rng(1, "pla");
    EXPECT_THROW(pla_sample({&flat, &s, {{0.0}, 1.0, Norm::L2}, 0.1}, PlaConfig{}, Vec{2.0}, rng), input_error);
    EXPECT_THROW(pla_sample({&flat, &s, {{0.0}, 1.0, Norm::L2}, 0.0}, PlaConfig{}, Vec{0.0}, rng), input_error);
    PlaConfig bad;
    bad.steps = 0;
    EXPECT_THROW(pla_sample({&flat, &s, {{0.0}, 1.0, Norm::L2}, 0.1}, bad, Vec{0.0}, rng), input_error);
}

TEST(Pla, MatchesGibbsDensityOnTheInterval) {
    // Target on [-1, 1] is proportional to exp(log(1 + e^x) / 0.5) = (1 + e^x)^2.
    const auto xs = chain_endpoints(0.5, 4000, 2000, 17);
    const std::size_t bins = 20;
    const auto h = histogram(xs, bins);
    std::vector<double> q(bins, 0.0);
    double z = 0.0;
    const int sub = 1000;
    for (std::size_t b = 0; b < bins; ++b) {
        for (int k = 0; k < sub; ++k) {
            const double x = -1.0 + (b + (k + 0.5) / sub) * 2.0 / bins;
            q[b] += std::pow(1.0 + std::exp(x), 2.0);
        }
        z += q[b];
    }
    double tv = 0.0;
    for (std::size_t b = 0; b < bins; ++b) tv += 0.5 * std::abs(h[b] - q[b] / z);
    EXPECT_LE(tv, 0.1);
}

TEST(Pla, HotChainsAreNearlyUniform) {
    const auto xs = chain_endpoints(1e3, 4000, 2000, 18);
    const auto h = histogram(xs, 20);
    double tv = 0.0;
    for (double p : h) tv += 0.5 * std::abs(p - 0.05);
    EXPECT_LE(tv, 0.1);
}

TEST(Pla, ColdChainsConcentrateAtTheMaximizer) {
    // The loss increases in x, so the maximizer is the right endpoint.
    const auto xs = chain_endpoints(1e-2, 2000, 2000, 19);
    const double near = static_cast<double>(std::count_if(xs.begin(), xs.end(), [](double x) { return x >= 0.9; }));
    EXPECT_GE(near / xs.size(), 0.9);
}

TEST(BestOfK, DegenerateBall) {
    RngStream rng(1, "a");
    const Ball b{{0.5, 0.5}, 0.0, Norm::L2};
    const auto r = best_of_k_attack([](std::span<const double> x) { return x[0] + 2 * x[1]; }, b, 1, rng);
    EXPECT_EQ(r.point, b.center);
    EXPECT_DOUBLE_EQ(r.value, 1.5);
}

TEST(BestOfK, ConstantLoss) {
    RngStream rng(1, "a");
    const auto r = best_of_k_attack([](std::span<const double>) { return 0.25; }, {{0.0, 0.0}, 1.0, Norm::L2}, 50, rng);
    EXPECT_EQ(r.value, 0.25);
}

TEST(BestOfK, CloseToGridMaximum) {
    const Ball b{{0.0, 0.0}, 1.5, Norm::L2};
    const Vec th{2.0, -1.0, 0.5};
    const auto loss = [&](std::span<const double> x) { return logistic_loss_theta(th, x, -1); };
    RngStream rng(4, "a");
    const double bk = best_of_k_attack(loss, b, 1000, rng).value;
    const double gm = grid_max_attack(loss, b, 400).value;
    EXPECT_LE(bk, gm + 1e-3);
    EXPECT_GE(bk, 0.98 * gm);
}

TEST(BestOfK, MedianNondecreasingInK) {
    const Ball b{{0.0, 0.0}, 1.0, Norm::L2};
    const Vec th{1.0, 1.0, 0.0};
    const auto loss = [&](std::span<const double> x) { return logistic_loss_theta(th, x, 1); };
    double prev = -1.0;
    for (std::size_t k : {1u, 10u, 100u, 1000u}) {
        std::vector<double> vals;
        for (std::uint64_t trial = 0; trial < 100; ++trial) {
            RngStream rng(k, "trial", trial);
            vals.push_back(best_of_k_attack(loss, b, k, rng).value);
        }
        std::nth_element(vals.begin(), vals.begin() + 50, vals.end());
        EXPECT_GE(vals[50], prev) << "K=" << k;
        prev = vals[50];
    }
}

TEST(BestOfK, PointsInsideBall) {
    const Ball b{{0.0, 0.0}, 0.7, Norm::Linf};
    RngStream rng(6, "a");
    const auto r = best_of_k_attack([](std::span<const double> x) { return x[0] * x[1]; }, b, 200, rng);
    EXPECT_TRUE(b.contains(r.point, 1e-12));
}

TEST(GridMax, ConstantLoss) {
    const auto r = grid_max_attack([](std::span<const double>) { return -3.0; }, {{0.0, 0.0}, 1.0, Norm::L2}, 20);
    EXPECT_EQ(r.value, -3.0);
}

TEST(GridMax, SoftplusOnUnitDisc) {
    const Ball b{{0.0, 0.0}, 1.0, Norm::L2};
    const auto loss = [](std::span<const double> x) { return std::log1p(std::exp(x[0])); };
    const auto grid = make_ball_grid(b, 400);
    const auto r = grid_max_attack(loss, grid);
    // log(1 + e) at the analytic maximizer (1, 0).
    const double exact = 1.3132616875182228;
    EXPECT_LE(r.value, exact);
    EXPECT_GE(r.value, exact - grid.cell_diameter());
    EXPECT_NEAR(r.point[0], 1.0, grid.cell_diameter());
    EXPECT_NEAR(r.point[1], 0.0, 0.1);
}

TEST(GridMax, NondecreasingUnderNestedRefinement) {
    const Ball b{{0.2, -0.1}, 1.0, Norm::L2};
    const Vec th{0.3, 1.7, -0.2};
    const auto loss = [&](std::span<const double> x) { return logistic_loss_theta(th, x, -1); };
    const double v10 = grid_max_attack(loss, b, 10).value;
    const double v50 = grid_max_attack(loss, b, 50).value;
    const double v250 = grid_max_attack(loss, b, 250).value;
    EXPECT_LE(v10, v50);
    EXPECT_LE(v50, v250);
}

TEST(GridMax, HighDimensionUnsupported) {
    EXPECT_THROW(grid_max_attack([](std::span<const double>) { return 0.0; }, {{0, 0, 0, 0}, 1.0, Norm::L2}, 4),
                 unsupported_error);
}

TEST(FlatMixture, SkipsZeroWeightsAndMatchesMixture) {
    const ParticleMixture m{{{1.0, 2.0, 0.0}, {5.0, 5.0, 5.0}, {-0.5, 0.5, 1.0}}, {0.4, 0.0, 0.6}};
    const FlatMixture f(m);
    EXPECT_EQ(f.size(), 2u);
    const Vec x{0.3, -0.7};
    EXPECT_NEAR(f.loss(x, 1), expected_loss(m, x, 1), 1e-15);
    Vec g(2), g2(2);
    EXPECT_NEAR(f.loss_and_grad_x(x, 1, g), expected_loss(m, x, 1), 1e-15);
    f.grad_x(x, 1, g2);
    EXPECT_EQ(g, g2);
}
