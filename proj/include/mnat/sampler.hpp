#pragma once

// Randomized attack machinery: uniform draws from a ball, the projected Langevin
// sampler for the Gibbs best-response density, the best-of-K uniform attack and a
// deterministic grid maximizer used as an oracle.

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mnat/common.hpp"
#include "mnat/game.hpp"
#include "mnat/measures.hpp"
#include "mnat/rng.hpp"

namespace mnat {

/// Contiguous copy of a mixture for the hot loops (theta rows of length d+1).
class FlatMixture {
public:
    FlatMixture() = default;

    explicit FlatMixture(const ParticleMixture& mix) : stride_(mix.theta_dim()) {
        thetas_.reserve(mix.size() * stride_);
        for (std::size_t j = 0; j < mix.size(); ++j) {
            if (mix.weights[j] == 0.0) continue;
            thetas_.insert(thetas_.end(), mix.particles[j].begin(), mix.particles[j].end());
            weights_.push_back(mix.weights[j]);
        }
    }

    std::size_t size() const { return weights_.size(); }
    std::size_t x_dim() const { return stride_ - 1; }

    std::span<const double> theta(std::size_t j) const { return {thetas_.data() + j * stride_, stride_}; }

    double loss(std::span<const double> x, int y) const {
        double v = 0.0;
        for (std::size_t j = 0; j < weights_.size(); ++j) v += weights_[j] * logistic_loss_theta(theta(j), x, y);
        return v;
    }

    /// Writes E grad_x l into grad (size d_x); returns E l.
    double loss_and_grad_x(std::span<const double> x, int y, std::span<double> grad) const {
        std::fill(grad.begin(), grad.end(), 0.0);
        double v = 0.0;
        const std::size_t d = x.size();
        for (std::size_t j = 0; j < weights_.size(); ++j) {
            const auto th = theta(j);
            const double m = margin(th, x, y);
            v += weights_[j] * softplus_neg(m);
            const double c = -y * sigmoid_neg(m) * weights_[j];
            for (std::size_t k = 0; k < d; ++k) grad[k] += c * th[k];
        }
        return v;
    }

    /// Writes E grad_x l into grad (size d_x).
    void grad_x(std::span<const double> x, int y, std::span<double> grad) const {
        std::fill(grad.begin(), grad.end(), 0.0);
        const std::size_t d = x.size();
        for (std::size_t j = 0; j < weights_.size(); ++j) {
            const auto th = theta(j);
            const double c = -y * sigmoid_neg(margin(th, x, y)) * weights_[j];
            for (std::size_t k = 0; k < d; ++k) grad[k] += c * th[k];
        }
    }

    double accuracy(std::span<const double> x, int y) const {
        double a = 0.0;
        for (std::size_t j = 0; j < weights_.size(); ++j)
            if (predict(theta(j), x) == y) a += weights_[j];
        return a;
    }

private:
    std::size_t stride_ = 0;
    Vec thetas_;
    Vec weights_;
};

// ---------------------------------------------------------------------------

/// Exact uniform draw from the ball, written into `out` (size d).
inline void sample_uniform_ball_into(const Ball& ball, RngStream& rng, std::span<double> out) {
    const std::size_t d = ball.dim();
    std::copy(ball.center.begin(), ball.center.end(), out.begin());
    if (ball.radius == 0.0) return;
    if (ball.norm == Norm::Linf) {
        for (std::size_t k = 0; k < d; ++k) out[k] += rng.uniform(-ball.radius, ball.radius);
        return;
    }
    double dir[64];
    Vec heap;
    double* v = dir;
    if (d > std::size(dir)) {
        heap.resize(d);
        v = heap.data();
    }
    double n2 = 0.0;
    do {
        n2 = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            v[k] = rng.normal();
            n2 += v[k] * v[k];
        }
    } while (n2 == 0.0);
    const double r = ball.radius * std::pow(rng.uniform(), 1.0 / static_cast<double>(d)) / std::sqrt(n2);
    for (std::size_t k = 0; k < d; ++k) out[k] += r * v[k];
    if (!ball.contains(out, 0.0)) {
        const Vec p = project_ball(ball, out);
        std::copy(p.begin(), p.end(), out.begin());
    }
}

inline Vec sample_uniform_ball(const Ball& ball, RngStream& rng) {
    Vec p(ball.dim());
    sample_uniform_ball_into(ball, rng, p);
    return p;
}

/// Target density proportional to exp(E_{theta ~ classifier} l(theta, (x, y)) / beta) on the ball.
struct GibbsSpec {
    const FlatMixture* classifier = nullptr;  // flattened window of the history average
    const LabeledSample* sample = nullptr;
    Ball ball;
    double beta = 1.0;
};

struct PlaConfig {
    std::size_t steps = 50;      // S
    double step_size = 1e-3;     // lambda
    double noise = 1.0;          // omega
    std::size_t window = 5;      // number of recent snapshots used for the gradient

    void validate() const {
        detail::require(steps >= 1, "PLA steps must be >= 1");
        detail::require(step_size > 0.0, "PLA step size must be > 0");
        detail::require(noise >= 0.0, "PLA noise scale must be >= 0");
        detail::require(window >= 1, "PLA window must be >= 1");
    }
};

/// Projected Langevin chain:
///   x <- Proj_ball(x + lambda / (2 beta) * E grad_x l + omega * sqrt(lambda) * xi).
///
/// The drift ascends the expected loss, so with omega = 1 the chain targets
/// exp(+l_bar / beta). Every iterate stays in the ball. If `loss_trace` is given,
/// the expected loss after each step is appended to it.
inline Vec pla_sample(const GibbsSpec& spec, const PlaConfig& cfg, std::span<const double> init, RngStream& rng,
                      std::vector<double>* loss_trace = nullptr) {
    detail::require(spec.classifier != nullptr && spec.sample != nullptr, "pla_sample: incomplete Gibbs spec");
    detail::require(spec.beta > 0.0, "pla_sample: beta must be > 0");
    detail::require(spec.classifier->size() > 0, "pla_sample: empty classifier window");
    cfg.validate();
    detail::require_same_dim(init.size(), spec.ball.dim(), "pla_sample");
    detail::require(spec.ball.contains(init, 1e-9), "pla_sample: initial point outside the ball");

    const std::size_t d = init.size();
    const int y = spec.sample->y;
    const double drift = cfg.step_size / (2.0 * spec.beta);
    const double diffusion = cfg.noise * std::sqrt(cfg.step_size);
    Vec x(init.begin(), init.end());
    Vec grad(d);
    for (std::size_t s = 0; s < cfg.steps; ++s) {
        spec.classifier->grad_x(x, y, grad);
        if (!detail::all_finite(grad))
            throw std::runtime_error("pla_sample: non-finite gradient at step " + std::to_string(s));
        for (std::size_t k = 0; k < d; ++k) {
            x[k] += drift * grad[k];
            if (diffusion > 0.0) x[k] += diffusion * rng.normal();
        }
        x = project_ball(spec.ball, x);
        if (loss_trace) loss_trace->push_back(spec.classifier->loss(x, y));
    }
    return x;
}

// ---------------------------------------------------------------------------

struct AttackResult {
    Vec point;
    double value = -std::numeric_limits<double>::infinity();
};

/// K uniform draws plus the ball center (as candidate K+1); returns the loss maximizer.
/// Ties keep the earliest candidate.
template <class LossFn>
AttackResult best_of_k_attack(LossFn&& loss, const Ball& ball, std::size_t k, RngStream& rng) {
    detail::require(k >= 1, "best_of_k_attack: K must be >= 1");
    if (ball.radius == 0.0) return {ball.center, loss(std::span<const double>(ball.center))};
    AttackResult best;
    Vec p(ball.dim());
    for (std::size_t c = 0; c < k; ++c) {
        sample_uniform_ball_into(ball, rng, p);
        const double v = loss(std::span<const double>(p));
        if (v > best.value) best = {p, v};
    }
    const double vc = loss(std::span<const double>(ball.center));
    if (vc > best.value) best = {ball.center, vc};
    return best;
}

/// Deterministic maximizer over the cells of a precomputed grid (lowest index wins ties).
template <class LossFn>
AttackResult grid_max_attack(LossFn&& loss, const BallGrid& grid) {
    AttackResult best;
    std::size_t arg = 0;
    for (std::size_t c = 0; c < grid.size(); ++c) {
        const double v = loss(std::span<const double>(grid.points[c]));
        if (v > best.value) {
            best.value = v;
            arg = c;
        }
    }
    best.point = grid.points[arg];
    return best;
}

template <class LossFn>
AttackResult grid_max_attack(LossFn&& loss, const Ball& ball, std::size_t resolution) {
    return grid_max_attack(std::forward<LossFn>(loss), make_ball_grid(ball, resolution));
}

}  // namespace mnat
