#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "mnat/measures.hpp"

using namespace mnat;

namespace {

Dataset tiny_data() {
    return {{{{0.5, -1.0}, 1}, {{-2.0, 0.3}, -1}, {{1.0, 1.0}, 1}}, 2};
}

std::vector<Vec> clean_points(const Dataset& d) {
    std::vector<Vec> v;
    for (const auto& s : d.samples) v.push_back(s.x);
    return v;
}

std::vector<Ball> big_balls(const Dataset& d) {
    std::vector<Ball> b;
    for (const auto& s : d.samples) b.push_back({s.x, 100.0, Norm::L2});
    return b;
}

Vec random_simplex(std::mt19937_64& gen, std::size_t n) {
    std::exponential_distribution<double> e(1.0);
    Vec w(n);
    for (double& v : w) v = e(gen);
    const double s = std::accumulate(w.begin(), w.end(), 0.0);
    for (double& v : w) v /= s;
    return w;
}

}  // namespace

// --- game_value -------------------------------------------------------------

TEST(GameValue, DegenerateMeasuresGiveCleanLoss) {
    const auto d = tiny_data();
    const Vec th{0.7, -0.2, 0.1};
    const auto attack = AttackAverage::initial(clean_points(d));
    double clean = 0.0;
    for (const auto& s : d.samples) clean += logistic_loss(LinearModel::from_theta(th), s);
    EXPECT_NEAR(game_value(ParticleMixture::dirac(th), attack, d), clean / 3.0, 1e-15);
}

TEST(GameValue, DuplicatedAtomsLeaveValueUnchanged) {
    const auto d = tiny_data();
    auto a = AttackAverage::initial({{0.1, 0.2}, {0.3, -0.4}, {1.5, 2.0}});
    a = fw_average_attack(a, {{0.0, 0.0}, {1.0, 1.0}, {-1.0, 0.5}}, 0, big_balls(d));
    AttackAverage doubled = a;
    for (auto& atoms : doubled.atoms) {
        const auto copy = atoms;
        atoms.insert(atoms.end(), copy.begin(), copy.end());
    }
    const auto mix = ParticleMixture::uniform({{0.3, 0.1, -0.2}, {-1.0, 2.0, 0.5}});
    EXPECT_NEAR(game_value(mix, a, d), game_value(mix, doubled, d), 1e-15);
}

TEST(GameValue, TwoParticleExpansion) {
    const auto d = tiny_data();
    auto a = AttackAverage::initial({{0.1, 0.2}, {0.3, -0.4}, {1.5, 2.0}});
    a = fw_average_attack(a, {{0.0, 0.0}, {1.0, 1.0}, {-1.0, 0.5}}, 0, big_balls(d));
    const Vec t1{0.3, 0.1, -0.2}, t2{-1.0, 2.0, 0.5};
    // Direct expansion of (1/N) sum_i (1/|atoms|) sum_x sum_j w_j l.
    double brute = 0.0;
    for (std::size_t i = 0; i < 3; ++i)
        for (const auto& x : a.atoms[i])
            brute += (0.25 * logistic_loss_theta(t1, x, d[i].y) + 0.75 * logistic_loss_theta(t2, x, d[i].y)) / 2.0;
    brute /= 3.0;
    EXPECT_NEAR(game_value(ParticleMixture{{t1, t2}, {0.25, 0.75}}, a, d), brute, 1e-15);
}

TEST(GameValue, CountMismatchThrows) {
    const auto d = tiny_data();
    const auto a = AttackAverage::initial({{0.0, 0.0}});
    EXPECT_THROW(game_value(ParticleMixture::dirac({0, 0, 0}), a, d), input_error);
    const auto g = std::make_shared<const BallGrid>(make_ball_grid({{0.0, 0.0}, 1.0, Norm::L2}, 10));
    std::vector<GridDensity> dens{uniform_density(g)};
    EXPECT_THROW(game_value(ParticleMixture::dirac({0, 0, 0}), dens, d), input_error);
}

TEST(GameValue, BilinearInBothPlayers) {
    std::mt19937_64 gen(4);
    std::normal_distribution<double> n(0.0, 1.0);
    const auto d = tiny_data();
    std::vector<Vec> parts;
    for (int j = 0; j < 4; ++j) parts.push_back({n(gen), n(gen), n(gen)});
    const Vec wa = random_simplex(gen, 4), wb = random_simplex(gen, 4);
    std::vector<std::shared_ptr<const BallGrid>> grids;
    std::vector<GridDensity> na, nb;
    for (const auto& s : d.samples) {
        grids.push_back(std::make_shared<const BallGrid>(make_ball_grid({s.x, 0.8, Norm::L2}, 12)));
        na.push_back({grids.back(), random_simplex(gen, grids.back()->size())});
        nb.push_back({grids.back(), random_simplex(gen, grids.back()->size())});
    }
    for (double lam : {0.0, 0.2, 0.65, 1.0}) {
        Vec wc(4);
        for (int j = 0; j < 4; ++j) wc[j] = lam * wa[j] + (1 - lam) * wb[j];
        EXPECT_NEAR(game_value({parts, wc}, na, d),
                    lam * game_value({parts, wa}, na, d) + (1 - lam) * game_value({parts, wb}, na, d), 1e-13);
        std::vector<GridDensity> nc;
        for (std::size_t i = 0; i < 3; ++i) nc.push_back(mix_densities(nb[i], na[i], lam));
        EXPECT_NEAR(game_value({parts, wa}, nc, d),
                    lam * game_value({parts, wa}, na, d) + (1 - lam) * game_value({parts, wa}, nb, d), 1e-13);
    }
}

// --- entropy ------------------------------------------------------------------

TEST(Entropy, UniformIsZero) {
    const auto g = std::make_shared<const BallGrid>(make_ball_grid({{0.0, 0.0}, 1.0, Norm::L2}, 40));
    EXPECT_NEAR(entropy_penalty(uniform_density(g)), 0.0, 1e-12);
}

TEST(Entropy, PointMassOnHundredCells) {
    const auto g = std::make_shared<const BallGrid>(make_ball_grid({{0.0, 0.0}, 1.0, Norm::Linf}, 10));
    ASSERT_EQ(g->size(), 100u);
    Vec p(100, 0.0);
    p[37] = 1.0;
    // KL = log(Vol / vol_k) = log 100.
    EXPECT_NEAR(entropy_penalty(GridDensity{g, p}), std::log(100.0), 1e-14);
}

TEST(Entropy, NonNegativeAndZeroOnlyAtUniform) {
    std::mt19937_64 gen(8);
    const auto g = std::make_shared<const BallGrid>(make_ball_grid({{0.0}, 1.0, Norm::Linf}, 30));
    for (int r = 0; r < 50; ++r) {
        const GridDensity d{g, random_simplex(gen, g->size())};
        EXPECT_GT(entropy_penalty(d), 1e-10);
    }
}

TEST(Entropy, NegativeProbabilityThrows) {
    const auto g = std::make_shared<const BallGrid>(make_ball_grid({{0.0}, 1.0, Norm::Linf}, 4));
    EXPECT_THROW(entropy_penalty(GridDensity{g, {0.5, 0.6, -0.1, 0.0}}), input_error);
}

// --- multiplicative weights ----------------------------------------------------

TEST(MwUpdate, EqualLossesKeepWeights) {
    const Vec w{0.1, 0.2, 0.3, 0.4};
    const Vec out = mw_update(w, Vec{2.5, 2.5, 2.5, 2.5}, 0.7);
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(out[j], w[j], 1e-12);
}

TEST(MwUpdate, TwoThirdsOneThird) {
    const Vec out = mw_update(Vec{0.5, 0.5}, Vec{0.0, std::log(2.0)}, 1.0);
    EXPECT_NEAR(out[0], 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(out[1], 1.0 / 3.0, 1e-15);
}

TEST(MwUpdate, ZeroStepKeepsWeights) {
    const Vec w{0.15, 0.85};
    const Vec out = mw_update(w, Vec{3.0, -1.0}, 0.0);
    EXPECT_NEAR(out[0], 0.15, 1e-15);
    EXPECT_NEAR(out[1], 0.85, 1e-15);
}

TEST(MwUpdate, NonFiniteLossThrows) {
    EXPECT_THROW(mw_update(Vec{0.5, 0.5}, Vec{NAN, 0.0}, 1.0), input_error);
    EXPECT_THROW(mw_update(Vec{0.5, 0.5}, Vec{INFINITY, 0.0}, 1.0), input_error);
}

TEST(MwUpdate, SimplexDriftOverManyUpdates) {
    std::mt19937_64 gen(21);
    std::uniform_real_distribution<double> u(0.0, 3.0);
    Vec w(20, 0.05);
    for (int k = 0; k < 10000; ++k) {
        Vec l(20);
        for (double& v : l) v = u(gen);
        w = mw_update(w, l, 0.01);
        double s = 0.0;
        for (double v : w) {
            ASSERT_GE(v, 0.0);
            s += v;
        }
        ASSERT_LE(std::abs(s - 1.0), 1e-12) << "update " << k;
    }
}

TEST(MwUpdate, LowerLossGainsRelativeWeight) {
    std::mt19937_64 gen(22);
    std::uniform_real_distribution<double> u(0.0, 3.0);
    for (int r = 0; r < 200; ++r) {
        const Vec w = random_simplex(gen, 5);
        Vec l(5);
        for (double& v : l) v = u(gen);
        const Vec out = mw_update(w, l, 0.5);
        for (int a = 0; a < 5; ++a)
            for (int b = 0; b < 5; ++b)
                if (l[a] < l[b]) EXPECT_GT(out[a] / out[b], w[a] / w[b]);
    }
}

// --- Frank-Wolfe averages ---------------------------------------------------------

TEST(FwAverageAttack, TwoAtomsUniform) {
    const std::vector<Ball> balls{{{0.0}, 1.0, Norm::L2}};
    auto a = AttackAverage::initial({{0.25}});
    a = fw_average_attack(a, {{-0.5}}, 0, balls);
    ASSERT_EQ(a.atoms[0].size(), 2u);
    EXPECT_EQ(a.atoms[0][0], (Vec{0.25}));
    EXPECT_EQ(a.atoms[0][1], (Vec{-0.5}));
}

TEST(FwAverageAttack, EachAtomHasWeightOneOverTPlusOne) {
    const std::vector<Ball> balls{{{0.0}, 1.0, Norm::L2}};
    auto a = AttackAverage::initial({{0.0}});
    for (std::size_t t = 0; t < 9; ++t) a = fw_average_attack(a, {{0.1 * t}}, t, balls);
    ASSERT_EQ(a.atoms[0].size(), 10u);
    // A statistic that picks out one atom has expectation 1/(T+1).
    double hit = 0.0;
    for (const auto& x : a.atoms[0]) hit += (x[0] == 0.1 * 3) ? 1.0 : 0.0;
    EXPECT_DOUBLE_EQ(hit / a.atoms[0].size(), 0.1);
}

TEST(FwAverageAttack, MatchesRecursiveForm) {
    std::mt19937_64 gen(31);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const std::vector<Ball> balls{{{0.0, 0.0}, 2.0, Norm::Linf}};
    auto a = AttackAverage::initial({{u(gen), u(gen)}});
    double recursive = 2.0 * a.atoms[0][0][0] - a.atoms[0][0][1];  // linear statistic
    for (std::size_t t = 0; t < 10000; ++t) {
        const Vec x{u(gen), u(gen)};
        a = fw_average_attack(a, {x}, t, balls);
        const double tt = static_cast<double>(t);
        recursive = (tt + 1) / (tt + 2) * recursive + 1 / (tt + 2) * (2.0 * x[0] - x[1]);
    }
    double mean = 0.0;
    for (const auto& x : a.atoms[0]) mean += 2.0 * x[0] - x[1];
    mean /= static_cast<double>(a.atoms[0].size());
    EXPECT_LE(std::abs(mean - recursive), 1e-12);
}

TEST(FwAverageAttack, Errors) {
    const std::vector<Ball> balls{{{0.0}, 1.0, Norm::L2}};
    auto a = AttackAverage::initial({{0.0}});
    EXPECT_THROW(fw_average_attack(a, {{2.0}}, 0, balls), input_error);
    EXPECT_THROW(fw_average_attack(a, {{0.5}}, 3, balls), input_error);
}

TEST(FwAverageAttack, DiscardHistoryKeepsLatestOnly) {
    const std::vector<Ball> balls{{{0.0}, 1.0, Norm::L2}};
    auto a = AttackAverage::initial({{0.0}}, false);
    a = fw_average_attack(a, {{0.5}}, 0, balls);
    a = fw_average_attack(a, {{-0.5}}, 1, balls);
    EXPECT_EQ(a.atoms[0].size(), 1u);
    EXPECT_EQ(a.latest(0), (Vec{-0.5}));
    EXPECT_EQ(a.updates, 2u);
}

TEST(FwAverageMixture, TwoSnapshotsUniform) {
    HistoryAverage h;
    h.snapshots.push_back(ParticleMixture::dirac({1.0, 0.0}));
    h = fw_average_mixture(h, ParticleMixture{{{2.0, 0.0}, {3.0, 0.0}}, {0.25, 0.75}}, 0);
    const auto flat = h.flatten();
    ASSERT_EQ(flat.size(), 3u);
    EXPECT_DOUBLE_EQ(flat.weights[0], 0.5);
    EXPECT_DOUBLE_EQ(flat.weights[1], 0.125);
    EXPECT_DOUBLE_EQ(flat.weights[2], 0.375);
}

TEST(FwAverageMixture, SnapshotWeightsAreOneOverTPlusOne) {
    HistoryAverage h;
    h.snapshots.push_back(ParticleMixture::dirac({0.0, 0.0}));
    for (std::size_t t = 0; t < 9; ++t) h = fw_average_mixture(h, ParticleMixture::dirac({double(t + 1), 0.0}), t);
    for (double w : h.flatten().weights) EXPECT_DOUBLE_EQ(w, 0.1);
}

TEST(FwAverageMixture, MatchesRecursiveForm) {
    std::mt19937_64 gen(32);
    std::normal_distribution<double> n(0.0, 1.0);
    HistoryAverage h;
    h.snapshots.push_back(ParticleMixture::uniform({{n(gen), n(gen)}, {n(gen), n(gen)}}));
    const auto stat = [](const ParticleMixture& m) {
        double s = 0.0;
        for (std::size_t j = 0; j < m.size(); ++j) s += m.weights[j] * (m.particles[j][0] + 3.0 * m.particles[j][1]);
        return s;
    };
    double recursive = stat(h.snapshots[0]);
    for (std::size_t t = 0; t < 10000; ++t) {
        const auto next = ParticleMixture{{{n(gen), n(gen)}, {n(gen), n(gen)}}, {0.4, 0.6}};
        h = fw_average_mixture(std::move(h), next, t);
        const double tt = static_cast<double>(t);
        recursive = (tt + 1) / (tt + 2) * recursive + 1 / (tt + 2) * stat(next);
    }
    const auto flat = h.flatten();
    double ws = 0.0;
    for (double w : flat.weights) ws += w;
    EXPECT_LE(std::abs(ws - 1.0), 1e-12);
    EXPECT_LE(std::abs(stat(flat) - recursive), 1e-12);
}

TEST(FwAverageMixture, WrongIterationThrows) {
    HistoryAverage h;
    h.snapshots.push_back(ParticleMixture::dirac({0.0, 0.0}));
    EXPECT_THROW(fw_average_mixture(h, ParticleMixture::dirac({1.0, 0.0}), 1), input_error);
}

TEST(HistoryAverage, WindowAndThinning) {
    HistoryAverage h;
    for (int s = 0; s < 11; ++s) h.snapshots.push_back(ParticleMixture::dirac({double(s)}));
    const auto w = h.window(3);
    ASSERT_EQ(w.size(), 3u);
    EXPECT_EQ(w[0].particles[0][0], 8.0);
    EXPECT_EQ(h.window(50).size(), 11u);
    const auto th = h.thinned(6);
    ASSERT_EQ(th.count(), 6u);
    for (int k = 0; k < 6; ++k) EXPECT_EQ(th.snapshots[k].particles[0][0], 2.0 * k);
    EXPECT_EQ(h.thinned(0).count(), 11u);
}

// --- grids and densities --------------------------------------------------------

TEST(BallGrid, LinfKeepsAllCells) {
    const auto g = make_ball_grid({{1.0, -1.0}, 0.5, Norm::Linf}, 8);
    EXPECT_EQ(g.size(), 64u);
    EXPECT_NEAR(g.total_volume(), 1.0, 1e-14);
}

TEST(BallGrid, L2AreaConvergesToDisc) {
    const auto g = make_ball_grid({{0.0, 0.0}, 1.0, Norm::L2}, 400);
    EXPECT_NEAR(g.total_volume(), M_PI, 2e-3);
    for (const auto& p : g.points) ASSERT_LE(std::hypot(p[0], p[1]), 1.0);
}

TEST(BallGrid, ZeroRadiusIsCenter) {
    const auto g = make_ball_grid({{0.3, 0.4}, 0.0, Norm::L2}, 10);
    ASSERT_EQ(g.size(), 1u);
    EXPECT_EQ(g.points[0], (Vec{0.3, 0.4}));
}

TEST(BallGrid, Guards) {
    EXPECT_THROW(make_ball_grid({{0, 0, 0, 0}, 1.0, Norm::L2}, 4), unsupported_error);
    EXPECT_THROW(make_ball_grid({{0.0}, 1.0, Norm::L2}, 1), input_error);
}

TEST(GibbsDensity, NormalizedAndUniformAtHighTemperature) {
    const auto g = std::make_shared<const BallGrid>(make_ball_grid({{0.0, 0.0}, 1.0, Norm::L2}, 50));
    Vec v(g->size());
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = 3.0 * g->points[k][0] - g->points[k][1];
    const auto hot = gibbs_density(g, v, 1e6);
    hot.validate();
    const double u = 1.0 / static_cast<double>(g->size());
    for (double p : hot.probs) EXPECT_NEAR(p, u, 1e-4 * u);
    const auto cold = gibbs_density(g, v, 1e-3);
    cold.validate();
}
