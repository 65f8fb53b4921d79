#pragma once

// Training algorithms for the randomized adversarial-training game:
//   * FRAT: particle WFR updates for the classifier (gradient step on every particle,
//     multiplicative weights on the mixture) against projected-Langevin draws from
//     the Gibbs best response to the classifier's time average, with Frank-Wolfe
//     averaging of both players;
//   * a grid-exact variant that keeps the attacker as explicit densities;
//   * baselines: SAT (single model), ATM (mixture trained against best-of-K attacks)
//     and the weight-only oracle / regularized algorithms over fixed candidates.
//
// The ATM, oracle and regularized procedures are reconstructions of prior-work
// baselines from their one-line descriptions, not verified ports.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mnat/common.hpp"
#include "mnat/eval.hpp"
#include "mnat/game.hpp"
#include "mnat/measures.hpp"
#include "mnat/parallel.hpp"
#include "mnat/rng.hpp"
#include "mnat/sampler.hpp"

namespace mnat {

enum class Algorithm { frat, sat, atm, oracle, regularized };
enum class AttackKind { best_of_k, pgd };

inline std::string to_string(Algorithm a) {
    switch (a) {
        case Algorithm::frat: return "frat";
        case Algorithm::sat: return "sat";
        case Algorithm::atm: return "atm";
        case Algorithm::oracle: return "oracle";
        case Algorithm::regularized: return "regularized";
    }
    return "?";
}

inline Algorithm parse_algorithm(const std::string& s) {
    for (auto a : {Algorithm::frat, Algorithm::sat, Algorithm::atm, Algorithm::oracle, Algorithm::regularized})
        if (to_string(a) == s) return a;
    throw input_error("unknown algorithm '" + s + "' (expected frat|sat|atm|oracle|regularized)");
}

inline std::string to_string(AttackKind a) { return a == AttackKind::pgd ? "pgd" : "best_of_k"; }

inline AttackKind parse_attack(const std::string& s) {
    if (s == "best_of_k" || s == "uniform") return AttackKind::best_of_k;
    if (s == "pgd") return AttackKind::pgd;
    throw input_error("unknown attack '" + s + "' (expected best_of_k|pgd)");
}

/// Hyperparameters shared by every training algorithm; each one reads the fields it needs.
struct TrainConfig {
    std::size_t models = 20;         // M, particles in the classifier mixture
    std::size_t iterations = 2000;   // T
    double eta = 0.1;                // particle step (transport)
    double eta_weights = 0.1;        // multiplicative-weights step (birth-death)
    double beta = 0.01;              // entropy regularization
    PlaConfig pla{};
    std::size_t minibatch = 0;       // 0 = full batch
    bool keep_attack_history = true;
    std::uint64_t seed = 0;
    double init_scale = 1.0;         // particles drawn from N(0, init_scale^2 I)

    AttackKind attack = AttackKind::best_of_k;  // SAT / ATM / oracle attack
    std::size_t attack_k = 1000;
    std::size_t pgd_steps = 10;

    std::size_t candidates = 20;            // weight-only baselines
    double candidate_range = 7.0;
    bool candidate_bias = false;            // also draw b from [-range, range]
    double candidate_min_accuracy = 0.6;
    std::size_t regularized_draws = 1;

    double plateau_tol = 0.0;        // > 0 enables the plateau stopping rule
    std::size_t plateau_window = 100;
    std::size_t threads = 1;

    void validate() const {
        detail::require(models >= 1, "models (M) must be >= 1");
        detail::require(eta >= 0.0 && eta_weights >= 0.0, "step sizes must be >= 0");
        detail::require(beta > 0.0, "beta must be > 0");
        detail::require(attack_k >= 1, "attack K must be >= 1");
        detail::require(pgd_steps >= 1, "pgd steps must be >= 1");
        detail::require(candidates >= 1, "candidate count must be >= 1");
        detail::require(regularized_draws >= 1, "regularized draws must be >= 1");
        detail::require(init_scale >= 0.0, "init scale must be >= 0");
        pla.validate();
    }
};

struct EvalConfig {
    std::size_t interval = 0;        // emit a trace row every `interval` iterations; 0 = final only
    std::size_t attack_k = 1000;
    std::size_t max_snapshots = 200; // history snapshots used when evaluating averaged strategies
    const Dataset* test = nullptr;
    bool record_wall_time = false;   // off keeps traces byte-reproducible
};

struct TraceRow {
    std::size_t iter = 0;
    double robust_train_loss = 0.0;
    double robust_train_acc = 0.0;
    double robust_test_loss = std::numeric_limits<double>::quiet_NaN();
    double robust_test_acc = std::numeric_limits<double>::quiet_NaN();
    double game_value = 0.0;  // payoff L(mu^(t), nu^(t)) of the iteration's own pair
    double wall_ms = 0.0;
};

struct RunTrace {
    std::vector<TraceRow> rows;
};

// ---------------------------------------------------------------------------
// Shared pieces
// ---------------------------------------------------------------------------

inline std::vector<Vec> init_particles(std::size_t dim_x, std::size_t count, std::uint64_t seed, double scale) {
    std::vector<Vec> out;
    out.reserve(count);
    for (std::size_t j = 0; j < count; ++j) {
        RngStream rng(seed, "init", j);
        Vec th(dim_x + 1);
        for (double& v : th) v = scale * rng.normal();
        out.push_back(std::move(th));
    }
    return out;
}

namespace detail {

class Clock {
public:
    double elapsed_ms() const {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline bool should_emit(std::size_t iter, std::size_t total, const EvalConfig& ev) {
    if (iter == 0) return false;
    if (iter == total) return true;
    return ev.interval > 0 && iter % ev.interval == 0;
}

inline TraceRow evaluate_row(std::size_t iter, const ParticleMixture& strategy, const GameInstance& inst,
                             const TrainConfig& cfg, const EvalConfig& ev, double payoff, const Clock& clock) {
    TraceRow row;
    row.iter = iter;
    const auto train = robust_metrics(strategy, inst.data, inst.eps, inst.norm, ev.attack_k, cfg.seed, "eval-train");
    row.robust_train_loss = train.robust_loss;
    row.robust_train_acc = train.robust_accuracy;
    if (ev.test) {
        const auto test = robust_metrics(strategy, *ev.test, inst.eps, inst.norm, ev.attack_k, cfg.seed, "eval-test");
        row.robust_test_loss = test.robust_loss;
        row.robust_test_acc = test.robust_accuracy;
    }
    row.game_value = payoff;
    row.wall_ms = ev.record_wall_time ? std::round(clock.elapsed_ms()) : 0.0;
    return row;
}

/// Relative change of the mean payoff between two consecutive windows.
class PlateauDetector {
public:
    PlateauDetector(double tol, std::size_t window) : tol_(tol), window_(window) {}

    bool push(double payoff) {
        if (tol_ <= 0.0 || window_ == 0) return false;
        values_.push_back(payoff);
        if (values_.size() > 2 * window_) values_.pop_front();
        if (values_.size() < 2 * window_) return false;
        const double prev = std::accumulate(values_.begin(), values_.begin() + window_, 0.0) / window_;
        const double cur = std::accumulate(values_.begin() + window_, values_.end(), 0.0) / window_;
        return std::abs(cur - prev) <= tol_ * std::max(std::abs(prev), 1e-300);
    }

private:
    double tol_;
    std::size_t window_;
    std::deque<double> values_;
};

/// Fixed-step normalized projected gradient ascent from the center.
template <class LossGrad>
AttackResult pgd_attack(LossGrad&& loss_grad, const Ball& ball, std::size_t steps) {
    Vec x(ball.center);
    Vec g(x.size());
    if (ball.radius == 0.0) return {x, loss_grad(x, g)};
    const double alpha = 2.5 * ball.radius / static_cast<double>(steps);
    for (std::size_t s = 0; s < steps; ++s) {
        loss_grad(x, g);
        const double n = ball.norm == Norm::L2 ? norm2(g) : 1.0;
        if (ball.norm == Norm::L2 && n == 0.0) break;
        for (std::size_t k = 0; k < x.size(); ++k)
            x[k] += ball.norm == Norm::L2 ? alpha * g[k] / n : alpha * ((g[k] > 0) - (g[k] < 0));
        x = project_ball(ball, x);
    }
    const double v = loss_grad(x, g);
    return {x, v};
}

/// Point attack on every sample against a fixed mixture (best-of-K or PGD).
inline std::vector<Vec> attack_all(const FlatMixture& flat, const GameInstance& inst, const TrainConfig& cfg,
                                   std::size_t t) {
    std::vector<Vec> points(inst.size());
    parallel_for(inst.size(), cfg.threads, [&](std::size_t i) {
        const int y = inst.data[i].y;
        if (cfg.attack == AttackKind::pgd) {
            points[i] = pgd_attack([&](std::span<const double> x, std::span<double> g) { return flat.loss_and_grad_x(x, y, g); },
                                   inst.balls[i], cfg.pgd_steps)
                            .point;
        } else {
            RngStream rng(cfg.seed, "attack", i, t);
            points[i] = best_of_k_attack([&](std::span<const double> x) { return flat.loss(x, y); }, inst.balls[i],
                                         cfg.attack_k, rng)
                            .point;
        }
    });
    return points;
}

struct ParticleStats {
    Vec losses;             // mean loss of each particle over the points
    std::vector<Vec> grads; // mean theta-gradient of each particle
};

inline ParticleStats particle_stats(const ParticleMixture& mix, const Dataset& data, std::span<const std::size_t> batch,
                                    std::span<const Vec> points) {
    const std::size_t m = mix.size();
    const std::size_t dt = mix.theta_dim();
    ParticleStats st{Vec(m, 0.0), std::vector<Vec>(m, Vec(dt, 0.0))};
    Vec g(dt);
    for (std::size_t j = 0; j < m; ++j) {
        for (std::size_t i : batch) {
            st.losses[j] += loss_and_grad_theta(mix.particles[j], points[i], data[i].y, g);
            axpy(1.0, g, st.grads[j]);
        }
        const double inv = 1.0 / static_cast<double>(batch.size());
        st.losses[j] *= inv;
        for (double& v : st.grads[j]) v *= inv;
    }
    return st;
}

/// One WFR step: theta_j -= eta * grad_j, weights <- MW(weights, losses, eta_w). Returns the payoff of `mix`.
inline double wfr_step(ParticleMixture& mix, const ParticleStats& st, double eta, double eta_w) {
    double payoff = 0.0;
    for (std::size_t j = 0; j < mix.size(); ++j) payoff += mix.weights[j] * st.losses[j];
    for (std::size_t j = 0; j < mix.size(); ++j) axpy(-eta, st.grads[j], mix.particles[j]);
    mix.weights = mw_update(mix.weights, st.losses, eta_w);
    return payoff;
}

inline std::vector<std::size_t> all_indices(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), 0);
    return v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// FRAT
// ---------------------------------------------------------------------------

struct FratState {
    ParticleMixture current;       // mu^(t)
    HistoryAverage history;        // mu_bar^(t): snapshots mu^(0..t)
    AttackAverage attack;          // nu_bar^(t): atoms x_hat^(0..t) per sample
    std::vector<Vec> chains;       // persistent PLA chain positions
    std::size_t t = 0;
    double last_payoff = std::numeric_limits<double>::quiet_NaN();
};

/// Gaussian particles with uniform weights; attacker atoms and chains start at the clean points.
inline FratState frat_init(const GameInstance& inst, const TrainConfig& cfg) {
    cfg.validate();
    FratState st;
    st.current = ParticleMixture::uniform(init_particles(inst.dim(), cfg.models, cfg.seed, cfg.init_scale));
    st.history.snapshots.push_back(st.current);
    std::vector<Vec> clean;
    for (const auto& s : inst.data.samples) clean.push_back(s.x);
    st.chains = clean;
    st.attack = AttackAverage::initial(std::move(clean), cfg.keep_attack_history);
    return st;
}

/// Minibatch indices for iteration t (sorted; all samples when minibatch is 0 or >= N).
inline std::vector<std::size_t> frat_batch(std::size_t n, const TrainConfig& cfg, std::size_t t) {
    auto idx = detail::all_indices(n);
    if (cfg.minibatch == 0 || cfg.minibatch >= n) return idx;
    RngStream rng(cfg.seed, "batch", 0, t);
    for (std::size_t k = 0; k < cfg.minibatch; ++k) {
        const std::size_t r = k + static_cast<std::size_t>(rng.bits() % (n - k));
        std::swap(idx[k], idx[r]);
    }
    idx.resize(cfg.minibatch);
    std::sort(idx.begin(), idx.end());
    return idx;
}

/// One iteration. Attacks are drawn first, against the window of mu_bar^(t), and the
/// classifier update then uses those draws, so no separate attacker history is needed
/// to drive training.
inline FratState frat_step(FratState st, const GameInstance& inst, const TrainConfig& cfg) {
    const auto batch = frat_batch(inst.size(), cfg, st.t);
    const FlatMixture window(HistoryAverage::flatten_window(st.history.window(cfg.pla.window)));

    parallel_for(batch.size(), cfg.threads, [&](std::size_t b) {
        const std::size_t i = batch[b];
        GibbsSpec spec{&window, &inst.data[i], inst.balls[i], cfg.beta};
        RngStream rng(cfg.seed, "pla", i, st.t);
        st.chains[i] = pla_sample(spec, cfg.pla, st.chains[i], rng);
    });

    const auto stats = detail::particle_stats(st.current, inst.data, batch, st.chains);
    st.last_payoff = detail::wfr_step(st.current, stats, cfg.eta, cfg.eta_weights);
    st.history = fw_average_mixture(std::move(st.history), st.current, st.t);
    st.attack = fw_average_attack(std::move(st.attack), st.chains, st.t, inst.balls);
    ++st.t;
    return st;
}

struct FratResult {
    HistoryAverage history;
    AttackAverage attack;
    RunTrace trace;
    std::size_t iterations_run = 0;
};

inline FratResult frat_run(const TrainConfig& cfg, const GameInstance& inst, const EvalConfig& ev = {}) {
    detail::Clock clock;
    FratState st = frat_init(inst, cfg);
    RunTrace trace;
    detail::PlateauDetector plateau(cfg.plateau_tol, cfg.plateau_window);
    for (std::size_t t = 0; t < cfg.iterations; ++t) {
        st = frat_step(std::move(st), inst, cfg);
        const bool stop = plateau.push(st.last_payoff);
        const std::size_t total = stop ? st.t : cfg.iterations;
        if (detail::should_emit(st.t, total, ev))
            trace.rows.push_back(detail::evaluate_row(st.t, st.history.thinned(ev.max_snapshots).flatten(), inst, cfg,
                                                      ev, st.last_payoff, clock));
        if (stop) break;
    }
    return {std::move(st.history), std::move(st.attack), std::move(trace), st.t};
}

// ---------------------------------------------------------------------------
// Grid-exact FRAT
// ---------------------------------------------------------------------------

struct GridExactOptions {
    std::size_t resolution = 400;
    /// true: nu^(t) responds to mean(mu^(0..t)) (the average that includes the mixture
    /// about to be updated, as in frat_step); false: to mean(mu^(0..t-1)).
    bool respond_to_current = true;
    /// Start from nu^(0) = uniform instead of a best response.
    bool uniform_initial = false;
    std::vector<std::size_t> checkpoints;  // iteration counts T at which to record diagnostics
    std::function<void(std::size_t, std::span<const GridDensity>)> observer;  // sees nu^(t)
};

struct GridExactResult {
    HistoryAverage history;                 // mu^(0..T)
    std::vector<GridDensity> attacker_average;  // B_T = mean(nu^(0..T-1))
    GridRunDiagnostics diagnostics;

    /// A_T = mean(mu^(0..T-1)), the classifier average paired with attacker_average.
    ParticleMixture classifier_average() const {
        return HistoryAverage::flatten_window(std::span(history.snapshots).first(history.count() - 1));
    }
};

inline GridExactResult frat_run_grid_exact(const TrainConfig& cfg, const GameInstance& inst,
                                           const GridExactOptions& opt) {
    cfg.validate();
    if (inst.dim() > 2) throw unsupported_error("grid-exact mode supports d_x <= 2");
    if (inst.size() > 64) throw unsupported_error("grid-exact mode supports at most 64 samples");
    detail::require(cfg.iterations >= 1, "grid-exact mode needs at least one iteration");

    const std::size_t n = inst.size();
    const auto grids = detail::make_grids(inst.balls, opt.resolution);

    ParticleMixture mix = ParticleMixture::uniform(init_particles(inst.dim(), cfg.models, cfg.seed, cfg.init_scale));
    GridExactResult res;
    res.history.snapshots.push_back(mix);
    res.diagnostics.beta = cfg.beta;
    res.diagnostics.resolution = opt.resolution;

    std::vector<Vec> value_sum(n), prev_value_sum(n), nu_sum(n);
    for (std::size_t i = 0; i < n; ++i) {
        value_sum[i].assign(grids[i]->size(), 0.0);
        nu_sum[i].assign(grids[i]->size(), 0.0);
    }
    double payoff_sum = 0.0;
    std::vector<std::size_t> checkpoints = opt.checkpoints;
    std::sort(checkpoints.begin(), checkpoints.end());

    const std::size_t m = cfg.models;
    const std::size_t dt = inst.dim() + 1;
    for (std::size_t t = 0; t < cfg.iterations; ++t) {
        // Per-particle losses on every grid cell.
        std::vector<std::vector<Vec>> particle_values(n, std::vector<Vec>(m));
        prev_value_sum = value_sum;
        for (std::size_t i = 0; i < n; ++i) {
            const int y = inst.data[i].y;
            for (std::size_t j = 0; j < m; ++j) {
                auto& pv = particle_values[i][j];
                pv.resize(grids[i]->size());
                for (std::size_t k = 0; k < pv.size(); ++k) pv[k] = logistic_loss_theta(mix.particles[j], grids[i]->points[k], y);
            }
            for (std::size_t k = 0; k < grids[i]->size(); ++k) {
                double v = 0.0;
                for (std::size_t j = 0; j < m; ++j) v += mix.weights[j] * particle_values[i][j][k];
                value_sum[i][k] += v;
            }
        }

        std::vector<GridDensity> nu;
        nu.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            if (t == 0 && opt.uniform_initial) {
                nu.push_back(uniform_density(grids[i]));
                continue;
            }
            const bool lagged = !opt.respond_to_current && t > 0;
            const Vec& sum = lagged ? prev_value_sum[i] : value_sum[i];
            const double count = lagged ? static_cast<double>(t) : static_cast<double>(t + 1);
            Vec avg(sum.size());
            for (std::size_t k = 0; k < sum.size(); ++k) avg[k] = sum[k] / count;
            nu.push_back(gibbs_density(grids[i], avg, cfg.beta));
        }
        if (opt.observer) opt.observer(t, nu);

        // Exact expectations of losses and gradients under nu^(t).
        detail::ParticleStats stats{Vec(m, 0.0), std::vector<Vec>(m, Vec(dt, 0.0))};
        Vec g(dt);
        for (std::size_t j = 0; j < m; ++j) {
            for (std::size_t i = 0; i < n; ++i) {
                const int y = inst.data[i].y;
                const auto& pts = grids[i]->points;
                for (std::size_t k = 0; k < pts.size(); ++k) {
                    const double p = nu[i].probs[k];
                    if (p == 0.0) continue;
                    loss_and_grad_theta(mix.particles[j], pts[k], y, g);
                    stats.losses[j] += p * particle_values[i][j][k];
                    detail::axpy(p, g, stats.grads[j]);
                }
            }
            stats.losses[j] /= static_cast<double>(n);
            for (double& v : stats.grads[j]) v /= static_cast<double>(n);
        }
        const double payoff = detail::wfr_step(mix, stats, cfg.eta, cfg.eta_weights);
        res.diagnostics.payoffs.push_back(payoff);
        payoff_sum += payoff;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < nu_sum[i].size(); ++k) nu_sum[i][k] += nu[i].probs[k];

        const std::size_t big_t = t + 1;
        if (std::binary_search(checkpoints.begin(), checkpoints.end(), big_t)) {
            GridCheckpoint cp;
            cp.t = big_t;
            cp.avg_payoff = payoff_sum / static_cast<double>(big_t);
            for (std::size_t i = 0; i < n; ++i) {
                Vec v(value_sum[i]);
                for (double& x : v) x /= static_cast<double>(big_t);
                cp.classifier_values.push_back(std::move(v));
                Vec p(nu_sum[i]);
                for (double& x : p) x /= static_cast<double>(big_t);
                cp.attacker_average.push_back({grids[i], std::move(p)});
            }
            cp.classifier_average = HistoryAverage::flatten_window(res.history.snapshots);
            res.diagnostics.checkpoints.push_back(std::move(cp));
        }
        res.history.snapshots.push_back(mix);
    }

    const double total = static_cast<double>(cfg.iterations);
    for (std::size_t i = 0; i < n; ++i) {
        Vec p(nu_sum[i]);
        for (double& x : p) x /= total;
        res.attacker_average.push_back({grids[i], std::move(p)});
    }
    return res;
}

// ---------------------------------------------------------------------------
// SAT and ATM
// ---------------------------------------------------------------------------

struct SatResult {
    LinearModel model;
    RunTrace trace;
    std::vector<double> payoffs;  // attacked training loss per iteration
};

/// Standard adversarial training of one model: attack every sample, then one gradient step.
inline SatResult sat_run(const TrainConfig& cfg, const GameInstance& inst, const EvalConfig& ev = {}) {
    cfg.validate();
    detail::Clock clock;
    Vec theta = init_particles(inst.dim(), 1, cfg.seed, cfg.init_scale).front();
    const auto batch = detail::all_indices(inst.size());
    SatResult res;
    detail::PlateauDetector plateau(cfg.plateau_tol, cfg.plateau_window);
    Vec g(theta.size());
    for (std::size_t t = 0; t < cfg.iterations; ++t) {
        const FlatMixture flat(ParticleMixture::dirac(theta));
        const auto points = detail::attack_all(flat, inst, cfg, t);
        Vec grad(theta.size(), 0.0);
        double loss = 0.0;
        for (std::size_t i : batch) {
            loss += loss_and_grad_theta(theta, points[i], inst.data[i].y, g);
            detail::axpy(1.0, g, grad);
        }
        const double inv = 1.0 / static_cast<double>(batch.size());
        loss *= inv;
        for (double& v : grad) v *= inv;
        detail::axpy(-cfg.eta, grad, theta);
        res.payoffs.push_back(loss);
        const bool stop = plateau.push(loss);
        const std::size_t total = stop ? t + 1 : cfg.iterations;
        if (detail::should_emit(t + 1, total, ev))
            res.trace.rows.push_back(
                detail::evaluate_row(t + 1, ParticleMixture::dirac(theta), inst, cfg, ev, loss, clock));
        if (stop) break;
    }
    res.model = LinearModel::from_theta(theta);
    return res;
}

struct MixtureResult {
    ParticleMixture mixture;
    RunTrace trace;
    std::vector<double> payoffs;
};

/// Adversarial training of a weighted mixture: attack the mixture's expected loss,
/// step every particle on the attacked points, reweight with multiplicative weights.
inline MixtureResult atm_run(const TrainConfig& cfg, const GameInstance& inst, const EvalConfig& ev = {}) {
    cfg.validate();
    detail::Clock clock;
    MixtureResult res;
    res.mixture = ParticleMixture::uniform(init_particles(inst.dim(), cfg.models, cfg.seed, cfg.init_scale));
    const auto batch = detail::all_indices(inst.size());
    detail::PlateauDetector plateau(cfg.plateau_tol, cfg.plateau_window);
    for (std::size_t t = 0; t < cfg.iterations; ++t) {
        const auto points = detail::attack_all(FlatMixture(res.mixture), inst, cfg, t);
        const auto stats = detail::particle_stats(res.mixture, inst.data, batch, points);
        const double payoff = detail::wfr_step(res.mixture, stats, cfg.eta, cfg.eta_weights);
        res.payoffs.push_back(payoff);
        const bool stop = plateau.push(payoff);
        const std::size_t total = stop ? t + 1 : cfg.iterations;
        if (detail::should_emit(t + 1, total, ev))
            res.trace.rows.push_back(detail::evaluate_row(t + 1, res.mixture, inst, cfg, ev, payoff, clock));
        if (stop) break;
    }
    return res;
}

// ---------------------------------------------------------------------------
// Weight-only baselines
// ---------------------------------------------------------------------------

enum class WeightOnlyMode { oracle, regularized };

/// Rejection-sampled candidate models: w uniform in [-range, range]^d (and b likewise
/// when `candidate_bias`, else b = 0), kept iff clean accuracy exceeds the threshold.
inline std::vector<Vec> generate_candidates(const Dataset& data, const TrainConfig& cfg) {
    RngStream rng(cfg.seed, "candidates");
    std::vector<Vec> out;
    const std::size_t max_tries = 1'000'000;
    for (std::size_t tries = 0; out.size() < cfg.candidates; ++tries) {
        if (tries >= max_tries)
            throw std::runtime_error("generate_candidates: acceptance rate too low for the accuracy threshold");
        Vec th(data.dim + 1, 0.0);
        for (std::size_t k = 0; k < data.dim; ++k) th[k] = rng.uniform(-cfg.candidate_range, cfg.candidate_range);
        if (cfg.candidate_bias) th[data.dim] = rng.uniform(-cfg.candidate_range, cfg.candidate_range);
        std::size_t correct = 0;
        for (const auto& s : data.samples) correct += predict(th, s.x) == s.y;
        if (static_cast<double>(correct) / static_cast<double>(data.size()) > cfg.candidate_min_accuracy)
            out.push_back(std::move(th));
    }
    return out;
}

/// Multiplicative weights over fixed candidates. The attacker responds to the current
/// weighted candidates with a best-of-K point (oracle) or with projected-Langevin
/// draws from the Gibbs density at temperature beta (regularized).
inline MixtureResult weight_only_run(WeightOnlyMode mode, std::vector<Vec> candidates, const TrainConfig& cfg,
                                     const GameInstance& inst, const EvalConfig& ev = {}) {
    cfg.validate();
    detail::require(!candidates.empty(), "weight_only_run: no candidates");
    detail::Clock clock;
    MixtureResult res;
    res.mixture = ParticleMixture::uniform(std::move(candidates));
    std::vector<Vec> chains;
    for (const auto& s : inst.data.samples) chains.push_back(s.x);
    const auto batch = detail::all_indices(inst.size());
    detail::PlateauDetector plateau(cfg.plateau_tol, cfg.plateau_window);
    for (std::size_t t = 0; t < cfg.iterations; ++t) {
        const FlatMixture flat(res.mixture);
        Vec losses(res.mixture.size(), 0.0);
        if (mode == WeightOnlyMode::oracle) {
            const auto points = detail::attack_all(flat, inst, cfg, t);
            for (std::size_t j = 0; j < res.mixture.size(); ++j) {
                for (std::size_t i : batch) losses[j] += logistic_loss_theta(res.mixture.particles[j], points[i], inst.data[i].y);
                losses[j] /= static_cast<double>(batch.size());
            }
        } else {
            std::vector<std::vector<Vec>> draws(inst.size());
            parallel_for(inst.size(), cfg.threads, [&](std::size_t i) {
                GibbsSpec spec{&flat, &inst.data[i], inst.balls[i], cfg.beta};
                RngStream rng(cfg.seed, "pla", i, t);
                for (std::size_t r = 0; r < cfg.regularized_draws; ++r) {
                    chains[i] = pla_sample(spec, cfg.pla, chains[i], rng);
                    draws[i].push_back(chains[i]);
                }
            });
            for (std::size_t j = 0; j < res.mixture.size(); ++j) {
                for (std::size_t i : batch) {
                    double s = 0.0;
                    for (const auto& x : draws[i]) s += logistic_loss_theta(res.mixture.particles[j], x, inst.data[i].y);
                    losses[j] += s / static_cast<double>(draws[i].size());
                }
                losses[j] /= static_cast<double>(batch.size());
            }
        }
        double payoff = 0.0;
        for (std::size_t j = 0; j < losses.size(); ++j) payoff += res.mixture.weights[j] * losses[j];
        res.mixture.weights = mw_update(res.mixture.weights, losses, cfg.eta_weights);
        res.payoffs.push_back(payoff);
        const bool stop = plateau.push(payoff);
        const std::size_t total = stop ? t + 1 : cfg.iterations;
        if (detail::should_emit(t + 1, total, ev))
            res.trace.rows.push_back(detail::evaluate_row(t + 1, res.mixture, inst, cfg, ev, payoff, clock));
        if (stop) break;
    }
    return res;
}

}  // namespace mnat
