#pragma once

// Metrics and equilibrium checkers: robust loss / accuracy, the unregularized and
// entropy-regularized primal-dual gaps, the closed-form log-partition value of the
// regularized inner maximum, Lyapunov potentials of grid-exact runs, a Lipschitz
// estimate in x and the regularization-error inequality.
//
// Every checker here is deterministic; robust_metrics draws its attack candidates
// from streams keyed by (seed, split, sample).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mnat/common.hpp"
#include "mnat/game.hpp"
#include "mnat/measures.hpp"
#include "mnat/rng.hpp"
#include "mnat/sampler.hpp"

namespace mnat {

// ---------------------------------------------------------------------------
// Robust metrics
// ---------------------------------------------------------------------------

struct RobustMetrics {
    double robust_loss = 0.0;
    double robust_accuracy = 0.0;
    double natural_loss = 0.0;
    double natural_accuracy = 0.0;
};

/// Best-of-K attack on every sample against the strategy's expected loss.
inline RobustMetrics robust_metrics(const ParticleMixture& strategy, const Dataset& data, double eps, Norm norm,
                                    std::size_t k, std::uint64_t seed, std::string_view split = "eval") {
    detail::require(k >= 1, "robust_metrics: K must be >= 1");
    detail::require(!data.samples.empty(), "robust_metrics: empty dataset");
    strategy.validate(1e-9);
    const FlatMixture flat(strategy);
    RobustMetrics m;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& s = data[i];
        const Ball ball{s.x, eps, norm};
        RngStream rng(seed, split, i);
        auto attack = best_of_k_attack([&](std::span<const double> x) { return flat.loss(x, s.y); }, ball, k, rng);
        m.robust_loss += attack.value;
        m.robust_accuracy += flat.accuracy(attack.point, s.y);
        m.natural_loss += flat.loss(s.x, s.y);
        m.natural_accuracy += flat.accuracy(s.x, s.y);
    }
    const double n = static_cast<double>(data.size());
    m.robust_loss /= n;
    m.robust_accuracy /= n;
    m.natural_loss /= n;
    m.natural_accuracy /= n;
    return m;
}

inline RobustMetrics robust_metrics(const LinearModel& model, const Dataset& data, double eps, Norm norm,
                                    std::size_t k, std::uint64_t seed, std::string_view split = "eval") {
    return robust_metrics(ParticleMixture::dirac(model.theta()), data, eps, norm, k, seed, split);
}

// ---------------------------------------------------------------------------
// Minimization over classifier parameters
// ---------------------------------------------------------------------------

/// Attacker measure for one sample as weighted points.
struct WeightedPoints {
    std::vector<const Vec*> points;
    Vec weights;
};

inline std::vector<WeightedPoints> as_weighted(const AttackAverage& attack) {
    std::vector<WeightedPoints> out(attack.num_samples());
    for (std::size_t i = 0; i < attack.num_samples(); ++i) {
        const auto& atoms = attack.atoms[i];
        const double w = 1.0 / static_cast<double>(atoms.size());
        for (const auto& a : atoms) {
            out[i].points.push_back(&a);
            out[i].weights.push_back(w);
        }
    }
    return out;
}

inline std::vector<WeightedPoints> as_weighted(std::span<const GridDensity> densities) {
    std::vector<WeightedPoints> out(densities.size());
    for (std::size_t i = 0; i < densities.size(); ++i) {
        const auto& d = densities[i];
        for (std::size_t k = 0; k < d.probs.size(); ++k)
            if (d.probs[k] > 0.0) {
                out[i].points.push_back(&d.grid->points[k]);
                out[i].weights.push_back(d.probs[k]);
            }
    }
    return out;
}

/// Candidate classifier parameters for inf_mu L(mu, nu). The minimum of a linear
/// functional over probability measures is attained at a Dirac, so a finite set of
/// thetas suffices; `polish` additionally runs damped Newton from the best grid point
/// (the objective is convex in theta for the logistic loss) and keeps it only if it
/// improves the value.
struct ThetaGrid {
    std::vector<Vec> points;
    bool polish = true;
};

/// Regular lattice of `per_axis` points over [-w_range, w_range]^d_x x [-b_range, b_range].
inline std::vector<Vec> theta_lattice(std::size_t dim_x, std::size_t per_axis = 21, double w_range = 7.0,
                                      double b_range = 3.0) {
    detail::require(per_axis >= 2, "theta lattice needs >= 2 points per axis");
    const std::size_t d = dim_x + 1;
    std::size_t total = 1;
    for (std::size_t k = 0; k < d; ++k) total *= per_axis;
    std::vector<Vec> pts;
    pts.reserve(total);
    std::vector<std::size_t> idx(d, 0);
    for (std::size_t c = 0; c < total; ++c) {
        Vec th(d);
        for (std::size_t k = 0; k < d; ++k) {
            const double r = k + 1 == d ? b_range : w_range;
            th[k] = -r + 2.0 * r * static_cast<double>(idx[k]) / static_cast<double>(per_axis - 1);
        }
        pts.push_back(std::move(th));
        for (std::size_t k = d; k-- > 0;) {
            if (++idx[k] < per_axis) break;
            idx[k] = 0;
        }
    }
    return pts;
}

/// Default theta grid: lattice plus any extra parameter vectors (run particles, candidates).
inline ThetaGrid default_theta_grid(std::size_t dim_x, std::span<const Vec> extra = {}) {
    ThetaGrid g;
    g.points = theta_lattice(dim_x);
    g.points.insert(g.points.end(), extra.begin(), extra.end());
    return g;
}

namespace detail {

// (1/N) sum_i sum_k w_ik l(theta, x_ik, y_i), optionally with gradient and Hessian.
inline double attacked_objective(std::span<const double> theta, std::span<const WeightedPoints> measure,
                                 const Dataset& data, Eigen::VectorXd* grad = nullptr,
                                 Eigen::MatrixXd* hess = nullptr) {
    const std::size_t dt = theta.size();
    const std::size_t d = dt - 1;
    if (grad) grad->setZero(static_cast<Eigen::Index>(dt));
    if (hess) hess->setZero(static_cast<Eigen::Index>(dt), static_cast<Eigen::Index>(dt));
    Eigen::VectorXd xt(static_cast<Eigen::Index>(dt));
    double total = 0.0;
    for (std::size_t i = 0; i < measure.size(); ++i) {
        const int y = data[i].y;
        double si = 0.0;
        for (std::size_t k = 0; k < measure[i].points.size(); ++k) {
            const Vec& x = *measure[i].points[k];
            const double w = measure[i].weights[k];
            const double m = margin(theta, x, y);
            si += w * softplus_neg(m);
            if (grad || hess) {
                for (std::size_t c = 0; c < d; ++c) xt[static_cast<Eigen::Index>(c)] = x[c];
                xt[static_cast<Eigen::Index>(d)] = 1.0;
                const double s = sigmoid_neg(m);
                if (grad) *grad += (-y * s * w) * xt;
                if (hess) *hess += (s * (1.0 - s) * w) * (xt * xt.transpose());
            }
        }
        total += si;
    }
    const double n = static_cast<double>(measure.size());
    if (grad) *grad /= n;
    if (hess) *hess /= n;
    return total / n;
}

}  // namespace detail

struct ThetaMin {
    double value = std::numeric_limits<double>::infinity();
    Vec theta;
    double grid_value = std::numeric_limits<double>::infinity();
};

inline ThetaMin min_over_theta(const ThetaGrid& grid, std::span<const WeightedPoints> measure, const Dataset& data) {
    detail::require(!grid.points.empty(), "theta grid is empty");
    detail::require(measure.size() == data.size(), "attacker measure count != dataset size");
    ThetaMin best;
    for (const auto& th : grid.points) {
        detail::require_same_dim(th.size(), data.dim + 1, "theta grid");
        const double v = detail::attacked_objective(th, measure, data);
        if (v < best.value) {
            best.value = v;
            best.theta = th;
        }
    }
    best.grid_value = best.value;
    if (!grid.polish) return best;

    Eigen::VectorXd g;
    Eigen::MatrixXd h;
    Vec theta = best.theta;
    double f = best.value;
    const auto dt = static_cast<Eigen::Index>(theta.size());
    for (int it = 0; it < 100; ++it) {
        detail::attacked_objective(theta, measure, data, &g, &h);
        h += 1e-10 * Eigen::MatrixXd::Identity(dt, dt);
        const Eigen::VectorXd step = h.ldlt().solve(g);
        if (!step.allFinite()) break;
        const double decrement = g.dot(step);
        if (decrement <= 1e-18) break;
        double t = 1.0;
        bool moved = false;
        for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
            Vec cand(theta);
            for (Eigen::Index c = 0; c < dt; ++c) cand[static_cast<std::size_t>(c)] -= t * step[c];
            const double fc = detail::attacked_objective(cand, measure, data);
            if (fc <= f - 0.25 * t * decrement) {
                theta = std::move(cand);
                f = fc;
                moved = true;
                break;
            }
        }
        if (!moved) break;
    }
    if (f < best.value) {
        best.value = f;
        best.theta = std::move(theta);
    }
    return best;
}

// ---------------------------------------------------------------------------
// Gap reports
// ---------------------------------------------------------------------------

struct GapReport {
    double sup_term = 0.0;
    double inf_term = 0.0;
    double gap = 0.0;
    double beta = 0.0;
    std::size_t theta_grid_size = 0;
    bool theta_polished = false;
    std::size_t x_resolution = 0;
    double grid_error = 0.0;  // Lipschitz-in-x estimate times cell diameter
};

inline GapReport make_gap_report(double sup_term, double inf_term, double beta, const ThetaGrid& tg,
                                 std::size_t resolution, double grid_error) {
    GapReport r;
    r.sup_term = sup_term;
    r.inf_term = inf_term;
    r.gap = sup_term - inf_term;
    r.beta = beta;
    r.theta_grid_size = tg.points.size();
    r.theta_polished = tg.polish;
    r.x_resolution = resolution;
    r.grid_error = grid_error;
    return r;
}

namespace detail {

inline std::vector<std::shared_ptr<const BallGrid>> make_grids(std::span<const Ball> balls, std::size_t resolution) {
    std::vector<std::shared_ptr<const BallGrid>> grids;
    grids.reserve(balls.size());
    for (const auto& b : balls) grids.push_back(std::make_shared<const BallGrid>(make_ball_grid(b, resolution)));
    return grids;
}

inline Vec values_on_grid(const FlatMixture& flat, const BallGrid& grid, int y) {
    Vec v(grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k) v[k] = flat.loss(grid.points[k], y);
    return v;
}

// Largest l1 norm of E grad_x l over the grid cells.
inline double max_grad_l1(const FlatMixture& flat, const BallGrid& grid, int y) {
    Vec g(grid.ball.dim());
    double best = 0.0;
    for (const auto& p : grid.points) {
        flat.grad_x(p, y, g);
        best = std::max(best, norm1(g));
    }
    return best;
}

}  // namespace detail

/// G_0: sup over attacker (pointwise grid maximum of E_mu l) minus min over theta of L(delta_theta, nu_bar).
inline GapReport gap_unregularized(const ParticleMixture& classifier, const AttackAverage& attack,
                                   const GameInstance& inst, const ThetaGrid& theta_grid, std::size_t resolution) {
    detail::require(attack.num_samples() == inst.size(), "gap_unregularized: attacker/sample count mismatch");
    const FlatMixture flat(classifier);
    double sup = 0.0;
    double lip = 0.0;
    double cell = 0.0;
    for (std::size_t i = 0; i < inst.size(); ++i) {
        const auto grid = make_ball_grid(inst.balls[i], resolution);
        const int y = inst.data[i].y;
        sup += grid_max_attack([&](std::span<const double> x) { return flat.loss(x, y); }, grid).value;
        lip = std::max(lip, detail::max_grad_l1(flat, grid, y));
        cell = std::max(cell, grid.cell_width);
    }
    sup /= static_cast<double>(inst.size());
    const auto measure = as_weighted(attack);
    const auto inf = min_over_theta(theta_grid, measure, inst.data);
    return make_gap_report(sup, inf.value, 0.0, theta_grid, resolution, lip * cell);
}

inline GapReport gap_unregularized(const HistoryAverage& classifier, const AttackAverage& attack,
                                   const GameInstance& inst, const ThetaGrid& theta_grid, std::size_t resolution) {
    return gap_unregularized(classifier.flatten(), attack, inst, theta_grid, resolution);
}

/// beta * log( mean over equal-volume cells of exp(values / beta) ), log-sum-exp stabilized.
inline double log_partition_from_values(std::span<const double> values, double beta) {
    detail::require(beta > 0.0, "log partition: beta must be > 0");
    detail::require(!values.empty(), "log partition: no cells");
    const double vmax = *std::max_element(values.begin(), values.end());
    double s = 0.0;
    for (double v : values) s += std::exp((v - vmax) / beta);
    return vmax + beta * std::log(s / static_cast<double>(values.size()));
}

/// Closed-form regularized inner maximum for one sample:
/// beta * log( (1/Vol) * integral over the ball of exp(E_mu l / beta) ).
inline double log_partition_value(const ParticleMixture& classifier, const LabeledSample& sample, const Ball& ball,
                                  double beta, std::size_t resolution) {
    detail::require(beta > 0.0, "log_partition_value: beta must be > 0");
    const auto grid = make_ball_grid(ball, resolution);
    const auto values = detail::values_on_grid(FlatMixture(classifier), grid, sample.y);
    return log_partition_from_values(values, beta);
}

/// Same quantity for an arbitrary integrand on the ball (used by tests and oracles).
template <class Fn>
double log_partition_of(Fn&& f, const Ball& ball, double beta, std::size_t resolution) {
    const auto grid = make_ball_grid(ball, resolution);
    Vec v(grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k) v[k] = f(std::span<const double>(grid.points[k]));
    return log_partition_from_values(v, beta);
}

/// Gibbs best response of every sample to `classifier` on the given grids.
inline std::vector<GridDensity> gibbs_response(const ParticleMixture& classifier, const GameInstance& inst,
                                               std::span<const std::shared_ptr<const BallGrid>> grids, double beta) {
    const FlatMixture flat(classifier);
    std::vector<GridDensity> out;
    out.reserve(inst.size());
    for (std::size_t i = 0; i < inst.size(); ++i) {
        const auto v = detail::values_on_grid(flat, *grids[i], inst.data[i].y);
        out.push_back(gibbs_density(grids[i], v, beta));
    }
    return out;
}

/// G_beta with explicit attacker densities. The sup side uses the closed form on
/// grids of the given resolution; the inf side is min_theta L(delta_theta, nu_bar) - beta H(nu_bar).
inline GapReport gap_regularized(const ParticleMixture& classifier, std::span<const GridDensity> attacker,
                                 const GameInstance& inst, const ThetaGrid& theta_grid, double beta,
                                 std::size_t resolution) {
    detail::require(beta > 0.0, "gap_regularized: beta must be > 0");
    detail::require(attacker.size() == inst.size(), "gap_regularized: attacker/sample count mismatch");
    for (const auto& d : attacker) d.validate();
    const FlatMixture flat(classifier);
    double sup = 0.0;
    double lip = 0.0;
    double cell = 0.0;
    for (std::size_t i = 0; i < inst.size(); ++i) {
        const auto grid = make_ball_grid(inst.balls[i], resolution);
        const auto v = detail::values_on_grid(flat, grid, inst.data[i].y);
        sup += log_partition_from_values(v, beta);
        lip = std::max(lip, detail::max_grad_l1(flat, grid, inst.data[i].y));
        cell = std::max(cell, grid.cell_width);
    }
    sup /= static_cast<double>(inst.size());
    const auto measure = as_weighted(attacker);
    const auto inf = min_over_theta(theta_grid, measure, inst.data);
    const double inf_term = inf.value - beta * entropy_penalty(attacker);
    return make_gap_report(sup, inf_term, beta, theta_grid, resolution, lip * cell);
}

inline GapReport gap_regularized(const HistoryAverage& classifier, std::span<const GridDensity> attacker,
                                 const GameInstance& inst, const ThetaGrid& theta_grid, double beta,
                                 std::size_t resolution) {
    return gap_regularized(classifier.flatten(), attacker, inst, theta_grid, beta, resolution);
}

/// Atomic attacker measures have infinite KL to the uniform measure.
template <class Classifier>
GapReport gap_regularized(const Classifier&, const AttackAverage&, const GameInstance&, const ThetaGrid&, double,
                          std::size_t) {
    throw input_error("G_beta undefined for atomic nu_bar; use grid-exact mode");
}

// ---------------------------------------------------------------------------
// Lipschitz estimate and the regularization-error inequality
// ---------------------------------------------------------------------------

/// max over samples and grid cells of ||grad_x E_mu l||_1 (dual of Linf), times 1.1.
inline double estimate_lipschitz_x(const ParticleMixture& classifier, const GameInstance& inst,
                                   std::size_t resolution) {
    const FlatMixture flat(classifier);
    double best = 0.0;
    for (std::size_t i = 0; i < inst.size(); ++i) {
        const auto grid = make_ball_grid(inst.balls[i], resolution);
        best = std::max(best, detail::max_grad_l1(flat, grid, inst.data[i].y));
    }
    return 1.1 * best;
}

struct BoundReport {
    double g0 = 0.0;
    double g_beta = 0.0;
    double beta = 0.0;
    double eps = 0.0;
    std::size_t dim_x = 0;
    double lipschitz_estimate = 0.0;
    double lipschitz_used = 0.0;
    double regularization_term = 0.0;  // beta d log(2 eps G / (beta d)) + beta d
    double slack = 0.0;                // (g_beta + regularization_term) - g0
    double tolerance = 0.0;
    bool satisfied = false;
};

/// Checks G_0 <= G_beta + beta d log(2 eps G / (beta d)) + beta d on Linf balls with 0 < beta <= eps / d.
///
/// Any upper bound on the Lipschitz constant is itself a Lipschitz constant, and the
/// inequality needs 2 eps G >= 2 beta d; the constant entering the bound is therefore
/// max(estimate, beta d / eps). Both values are reported.
inline BoundReport check_regularization_bound(const GameInstance& inst, const ParticleMixture& classifier,
                                              std::span<const GridDensity> attacker, double beta,
                                              const ThetaGrid& theta_grid, std::size_t resolution) {
    if (inst.norm != Norm::Linf) throw input_error("regularization bound requires Linf balls");
    if (!(beta > 0.0)) throw input_error("regularization bound requires beta > 0");
    const double d = static_cast<double>(inst.dim());
    const double eps = inst.eps;
    if (!(eps > 0.0)) throw input_error("regularization bound requires eps > 0");
    if (beta > eps / d * (1.0 + 1e-12)) throw input_error("regularization bound requires beta <= eps / d_x");

    // Both gaps share the inf side's argmin; compute it once.
    const auto measure = as_weighted(attacker);
    const auto inf = min_over_theta(theta_grid, measure, inst.data);
    const FlatMixture flat(classifier);
    double sup0 = 0.0;
    double supb = 0.0;
    double lip = 0.0;
    double cell = 0.0;
    for (std::size_t i = 0; i < inst.size(); ++i) {
        const auto grid = make_ball_grid(inst.balls[i], resolution);
        const int y = inst.data[i].y;
        const auto v = detail::values_on_grid(flat, grid, y);
        sup0 += *std::max_element(v.begin(), v.end());
        supb += log_partition_from_values(v, beta);
        lip = std::max(lip, detail::max_grad_l1(flat, grid, y));
        cell = std::max(cell, grid.cell_width);
    }
    const double n = static_cast<double>(inst.size());
    BoundReport r;
    r.g0 = sup0 / n - inf.value;
    r.g_beta = supb / n - (inf.value - beta * entropy_penalty(attacker));
    r.beta = beta;
    r.eps = eps;
    r.dim_x = inst.dim();
    r.lipschitz_estimate = 1.1 * lip;
    r.lipschitz_used = std::max(r.lipschitz_estimate, beta * d / eps);
    r.regularization_term = beta * d * std::log(2.0 * eps * r.lipschitz_used / (beta * d)) + beta * d;
    r.slack = r.g_beta + r.regularization_term - r.g0;
    // Grid maximum and midpoint quadrature each err by at most G * (half a cell) in Linf.
    r.tolerance = r.lipschitz_used * cell;
    r.satisfied = r.slack >= -r.tolerance;
    return r;
}

// ---------------------------------------------------------------------------
// Lyapunov potentials of grid-exact runs
// ---------------------------------------------------------------------------

/// State of a grid-exact run after T iterations: the time averages
/// A_T = mean(mu^(0..T-1)) and B_T = mean(nu^(0..T-1)), the average payoff
/// (1/T) sum_s L(mu^(s), nu^(s)) and E_{A_T} l tabulated on every sample's grid.
struct GridCheckpoint {
    std::size_t t = 0;
    double avg_payoff = 0.0;
    std::vector<Vec> classifier_values;
    std::vector<GridDensity> attacker_average;
    ParticleMixture classifier_average;
};

struct GridRunDiagnostics {
    double beta = 1.0;
    std::size_t resolution = 0;
    std::vector<double> payoffs;  // L(mu^(s), nu^(s)) for s = 0, 1, ...
    std::vector<GridCheckpoint> checkpoints;
};

struct LyapunovRow {
    std::size_t t = 0;
    double r_mu = 0.0;
    double r_nu = 0.0;
    double avg_payoff = 0.0;
    double gap_beta = 0.0;  // G_beta(A_T, B_T) computed independently by gap_regularized
};

inline std::vector<LyapunovRow> lyapunov_trace(const GridRunDiagnostics& diag, const GameInstance& inst,
                                               const ThetaGrid& theta_grid) {
    if (diag.checkpoints.empty()) throw input_error("lyapunov_trace: run recorded no checkpoints");
    std::vector<LyapunovRow> rows;
    for (const auto& cp : diag.checkpoints) {
        if (cp.t == 0 || cp.classifier_values.size() != inst.size() || cp.attacker_average.size() != inst.size())
            throw input_error("lyapunov_trace: incomplete checkpoint");
        double sup = 0.0;
        for (const auto& v : cp.classifier_values) sup += log_partition_from_values(v, diag.beta);
        sup /= static_cast<double>(inst.size());
        const double h_bar = entropy_penalty(cp.attacker_average);
        const auto measure = as_weighted(cp.attacker_average);
        const auto inf = min_over_theta(theta_grid, measure, inst.data);

        LyapunovRow row;
        row.t = cp.t;
        row.avg_payoff = cp.avg_payoff;
        row.r_nu = sup - cp.avg_payoff + diag.beta * h_bar;
        row.r_mu = cp.avg_payoff - inf.value;
        row.gap_beta =
            gap_regularized(cp.classifier_average, cp.attacker_average, inst, theta_grid, diag.beta, diag.resolution)
                .gap;
        rows.push_back(row);
    }
    return rows;
}

}  // namespace mnat
