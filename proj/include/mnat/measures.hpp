#pragma once

// Probability-measure machinery for both players: time averages of classifier
// mixtures, atom averages of attacker draws, explicit densities on quadrature
// grids, the bilinear objective and the entropy / multiplicative-weights /
// Frank-Wolfe updates built on them.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mnat/common.hpp"
#include "mnat/game.hpp"

namespace mnat {

// ---------------------------------------------------------------------------
// Classifier history
// ---------------------------------------------------------------------------

/// Uniform average over the snapshots mu^(0), ..., mu^(t).
///
/// Snapshots are kept as-is so the sliding-window gradient and the exact average
/// share one representation; `flatten()` produces the averaged atoms explicitly.
struct HistoryAverage {
    std::vector<ParticleMixture> snapshots;

    std::size_t count() const { return snapshots.size(); }
    const ParticleMixture& latest() const { return snapshots.back(); }

    /// The last `k` snapshots (all of them if fewer exist).
    std::span<const ParticleMixture> window(std::size_t k) const {
        const std::size_t n = std::min(k, snapshots.size());
        return std::span<const ParticleMixture>(snapshots).last(n);
    }

    ParticleMixture flatten() const { return flatten_window(snapshots); }

    /// Uniform-over-snapshots mixture of the given span, weighted within each snapshot.
    static ParticleMixture flatten_window(std::span<const ParticleMixture> snaps) {
        detail::require(!snaps.empty(), "history average is empty");
        ParticleMixture out;
        const double scale = 1.0 / static_cast<double>(snaps.size());
        for (const auto& s : snaps)
            for (std::size_t j = 0; j < s.size(); ++j) {
                out.particles.push_back(s.particles[j]);
                out.weights.push_back(scale * s.weights[j]);
            }
        return out;
    }

    /// Evenly spaced subset of at most `max_snapshots` snapshots (always keeps the last one).
    HistoryAverage thinned(std::size_t max_snapshots) const {
        if (max_snapshots == 0 || snapshots.size() <= max_snapshots) return *this;
        HistoryAverage out;
        const std::size_t n = snapshots.size();
        for (std::size_t k = 0; k < max_snapshots; ++k) {
            const double pos = max_snapshots == 1 ? static_cast<double>(n - 1)
                                                  : static_cast<double>(k) * static_cast<double>(n - 1) /
                                                        static_cast<double>(max_snapshots - 1);
            out.snapshots.push_back(snapshots[static_cast<std::size_t>(std::llround(pos))]);
        }
        return out;
    }
};

/// mu_bar^(t+1) = (t+1)/(t+2) mu_bar^(t) + 1/(t+2) mu^(t+1), stored as an appended snapshot.
inline HistoryAverage fw_average_mixture(HistoryAverage avg, ParticleMixture next, std::size_t t) {
    detail::require(avg.count() == t + 1, "fw_average_mixture: t must equal the number of prior updates");
    next.validate();
    if (!avg.snapshots.empty()) detail::require_same_dim(next.theta_dim(), avg.latest().theta_dim(), "fw_average_mixture");
    avg.snapshots.push_back(std::move(next));
    return avg;
}

// ---------------------------------------------------------------------------
// Attacker atom averages
// ---------------------------------------------------------------------------

/// Per-sample uniform average of attack atoms x_hat_i^(0..T).
///
/// With `keep_history == false` only the latest atom per sample is retained
/// (enough for training, not for gap evaluation).
struct AttackAverage {
    std::vector<std::vector<Vec>> atoms;
    std::size_t updates = 0;  // number of fw_average_attack calls applied
    bool keep_history = true;

    std::size_t num_samples() const { return atoms.size(); }

    static AttackAverage initial(std::vector<Vec> first_atoms, bool keep_history = true) {
        AttackAverage a;
        a.keep_history = keep_history;
        for (auto& x : first_atoms) a.atoms.push_back({std::move(x)});
        return a;
    }

    const Vec& latest(std::size_t i) const { return atoms[i].back(); }
};

inline AttackAverage fw_average_attack(AttackAverage avg, std::vector<Vec> new_atoms, std::size_t t,
                                       std::span<const Ball> balls) {
    detail::require(avg.updates == t, "fw_average_attack: t must equal the number of prior updates");
    detail::require(new_atoms.size() == avg.num_samples() && balls.size() == avg.num_samples(),
                    "fw_average_attack: one atom and ball per sample required");
    for (std::size_t i = 0; i < new_atoms.size(); ++i) {
        if (!balls[i].contains(new_atoms[i]))
            throw input_error("fw_average_attack: atom for sample " + std::to_string(i) + " lies outside its ball");
        if (avg.keep_history)
            avg.atoms[i].push_back(std::move(new_atoms[i]));
        else
            avg.atoms[i].back() = std::move(new_atoms[i]);
    }
    ++avg.updates;
    return avg;
}

// ---------------------------------------------------------------------------
// Quadrature grids and densities
// ---------------------------------------------------------------------------

/// Equal-volume cells covering a ball.
///
/// The bounding box [c - eps, c + eps]^d is split into `resolution` cells per axis.
/// Linf balls keep every cell; L2 balls keep the cells whose centers lie inside.
/// A zero-radius ball is represented by its center as a single unit cell.
struct BallGrid {
    Ball ball;
    std::size_t resolution = 0;
    double cell_width = 0.0;
    double cell_volume = 0.0;
    std::vector<Vec> points;

    std::size_t size() const { return points.size(); }
    double total_volume() const { return cell_volume * static_cast<double>(points.size()); }
    /// Euclidean diameter of one cell.
    double cell_diameter() const { return cell_width * std::sqrt(static_cast<double>(ball.dim())); }
};

inline constexpr std::size_t kMaxGridDim = 3;
inline constexpr std::size_t kMaxGridCells = 20'000'000;

inline BallGrid make_ball_grid(const Ball& ball, std::size_t resolution) {
    const std::size_t d = ball.dim();
    if (d == 0 || d > kMaxGridDim)
        throw unsupported_error("grid quadrature supports 1 <= d_x <= 3 (got " + std::to_string(d) + ")");
    detail::require(resolution >= 2, "grid resolution must be >= 2");
    detail::require(ball.radius >= 0.0, "ball radius must be >= 0");
    BallGrid g;
    g.ball = ball;
    g.resolution = resolution;
    if (ball.radius == 0.0) {
        g.points.push_back(ball.center);
        g.cell_volume = 1.0;
        return g;
    }
    double total = 1.0;
    for (std::size_t k = 0; k < d; ++k) total *= static_cast<double>(resolution);
    if (total > static_cast<double>(kMaxGridCells))
        throw unsupported_error("grid of " + std::to_string(static_cast<long long>(total)) + " cells exceeds the limit");

    g.cell_width = 2.0 * ball.radius / static_cast<double>(resolution);
    g.cell_volume = std::pow(g.cell_width, static_cast<double>(d));
    std::vector<std::size_t> idx(d, 0);
    Vec p(d);
    const auto cells = static_cast<std::size_t>(total);
    g.points.reserve(ball.norm == Norm::Linf ? cells : cells * 4 / 5 + 1);
    for (std::size_t c = 0; c < cells; ++c) {
        for (std::size_t k = 0; k < d; ++k)
            p[k] = ball.center[k] - ball.radius + (static_cast<double>(idx[k]) + 0.5) * g.cell_width;
        if (ball.norm == Norm::Linf || ball.distance(p) <= ball.radius) g.points.push_back(p);
        for (std::size_t k = d; k-- > 0;) {  // odometer, last axis fastest
            if (++idx[k] < resolution) break;
            idx[k] = 0;
        }
    }
    return g;
}

/// Attacker density on a grid: probability mass p_k per cell.
struct GridDensity {
    std::shared_ptr<const BallGrid> grid;
    Vec probs;

    void validate(double tol = 1e-10) const {
        detail::require(grid != nullptr, "grid density without grid");
        detail::require(probs.size() == grid->size(), "grid density: probability count != cell count");
        double s = 0.0;
        for (double p : probs) {
            detail::require(p >= 0.0 && std::isfinite(p), "grid density: negative or non-finite probability");
            s += p;
        }
        detail::require(std::abs(s - 1.0) <= tol, "grid density: probabilities do not sum to 1");
    }
};

inline GridDensity uniform_density(std::shared_ptr<const BallGrid> grid) {
    const double p = 1.0 / static_cast<double>(grid->size());
    return {grid, Vec(grid->size(), p)};
}

/// Volume-weighted softmax: p_k proportional to vol_k exp(values_k / beta).
inline GridDensity gibbs_density(std::shared_ptr<const BallGrid> grid, std::span<const double> values, double beta) {
    detail::require(beta > 0.0, "gibbs_density: beta must be > 0");
    detail::require(values.size() == grid->size(), "gibbs_density: value count != cell count");
    const double vmax = *std::max_element(values.begin(), values.end());
    Vec p(values.size());
    double z = 0.0;
    for (std::size_t k = 0; k < values.size(); ++k) {
        p[k] = std::exp((values[k] - vmax) / beta);
        z += p[k];
    }
    for (double& v : p) v /= z;
    return {std::move(grid), std::move(p)};
}

/// Convex combination a * (1 - s) + b * s on the same grid.
inline GridDensity mix_densities(const GridDensity& a, const GridDensity& b, double s) {
    detail::require(a.grid == b.grid, "mix_densities: densities live on different grids");
    GridDensity out{a.grid, Vec(a.probs.size())};
    for (std::size_t k = 0; k < a.probs.size(); ++k) out.probs[k] = (1.0 - s) * a.probs[k] + s * b.probs[k];
    return out;
}

/// KL(nu || uniform on the grid) = sum_k p_k log(p_k / (vol_k / Vol)), with 0 log 0 = 0.
inline double entropy_penalty(const GridDensity& density) {
    detail::require(density.grid != nullptr && density.probs.size() == density.grid->size(),
                    "entropy_penalty: malformed density");
    const double n = static_cast<double>(density.probs.size());
    double kl = 0.0;
    for (double p : density.probs) {
        if (p < 0.0) throw input_error("entropy_penalty: negative probability");
        if (p > 0.0) kl += p * std::log(p * n);
    }
    return std::max(kl, 0.0);
}

/// (1/N) sum_i KL(nu_i || u_i).
inline double entropy_penalty(std::span<const GridDensity> densities) {
    double s = 0.0;
    for (const auto& d : densities) s += entropy_penalty(d);
    return s / static_cast<double>(densities.size());
}

// ---------------------------------------------------------------------------
// Bilinear objective
// ---------------------------------------------------------------------------

/// L(mu, nu) with nu given by per-sample atom averages (uniform over atoms).
inline double game_value(const ParticleMixture& mix, const AttackAverage& attack, const Dataset& data) {
    if (attack.num_samples() != data.size())
        throw input_error("game_value: attacker has " + std::to_string(attack.num_samples()) +
                          " measures for " + std::to_string(data.size()) + " samples");
    double total = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& atoms = attack.atoms[i];
        double si = 0.0;
        for (const auto& x : atoms) si += expected_loss(mix, x, data[i].y);
        total += si / static_cast<double>(atoms.size());
    }
    return total / static_cast<double>(data.size());
}

inline double game_value(const HistoryAverage& avg, const AttackAverage& attack, const Dataset& data) {
    return game_value(avg.flatten(), attack, data);
}

/// E_{x ~ nu_i} E_{theta ~ mu} l(theta, (x, y_i)) for one grid density.
inline double density_expected_loss(const ParticleMixture& mix, const GridDensity& nu, int y) {
    double v = 0.0;
    const auto& pts = nu.grid->points;
    for (std::size_t k = 0; k < pts.size(); ++k)
        if (nu.probs[k] > 0.0) v += nu.probs[k] * expected_loss(mix, pts[k], y);
    return v;
}

inline double game_value(const ParticleMixture& mix, std::span<const GridDensity> attack, const Dataset& data) {
    if (attack.size() != data.size())
        throw input_error("game_value: attacker has " + std::to_string(attack.size()) + " measures for " +
                          std::to_string(data.size()) + " samples");
    double total = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) total += density_expected_loss(mix, attack[i], data[i].y);
    return total / static_cast<double>(data.size());
}

inline double game_value(const HistoryAverage& avg, std::span<const GridDensity> attack, const Dataset& data) {
    return game_value(avg.flatten(), attack, data);
}

// ---------------------------------------------------------------------------
// Multiplicative weights
// ---------------------------------------------------------------------------

/// w_j <- w_j exp(-step * loss_j) / Z, normalized in log space.
inline Vec mw_update(std::span<const double> weights, std::span<const double> losses, double step) {
    detail::require(weights.size() == losses.size() && !weights.empty(), "mw_update: size mismatch");
    Vec logw(weights.size());
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < weights.size(); ++j) {
        if (!std::isfinite(losses[j])) throw input_error("mw_update: non-finite loss at index " + std::to_string(j));
        logw[j] = weights[j] > 0.0 ? std::log(weights[j]) - step * losses[j]
                                   : -std::numeric_limits<double>::infinity();
        mx = std::max(mx, logw[j]);
    }
    detail::require(std::isfinite(mx), "mw_update: all weights are zero");
    Vec out(weights.size());
    double z = 0.0;
    for (std::size_t j = 0; j < weights.size(); ++j) {
        out[j] = std::exp(logw[j] - mx);
        z += out[j];
    }
    for (double& w : out) w /= z;
    return out;
}

}  // namespace mnat
