#pragma once

// Core game primitives: labeled samples, perturbation balls, the linear-logistic
// loss with its two gradients, and prediction / accuracy of randomized classifiers.
//
// A parameter vector theta has layout (w_0, ..., w_{d-1}, b), so d_theta = d_x + 1.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "mnat/common.hpp"

namespace mnat {

struct LabeledSample {
    Vec x;
    int y = 1;  // -1 or +1
};

struct Dataset {
    std::vector<LabeledSample> samples;
    std::size_t dim = 0;

    std::size_t size() const { return samples.size(); }
    const LabeledSample& operator[](std::size_t i) const { return samples[i]; }

    void validate() const {
        detail::require(!samples.empty(), "dataset is empty");
        for (const auto& s : samples) {
            detail::require_same_dim(s.x.size(), dim, "dataset");
            detail::require(s.y == 1 || s.y == -1, "dataset: label must be -1 or +1");
            detail::require(detail::all_finite(s.x), "dataset: non-finite feature");
        }
    }
};

enum class Norm { L2, Linf };

inline std::string to_string(Norm n) { return n == Norm::L2 ? "l2" : "linf"; }

inline Norm parse_norm(const std::string& s) {
    if (s == "l2" || s == "L2") return Norm::L2;
    if (s == "linf" || s == "Linf" || s == "inf") return Norm::Linf;
    throw input_error("unknown norm '" + s + "' (expected l2 or linf)");
}

struct Ball {
    Vec center;
    double radius = 0.0;
    Norm norm = Norm::L2;

    std::size_t dim() const { return center.size(); }

    double distance(std::span<const double> p) const {
        double acc = 0.0;
        for (std::size_t k = 0; k < center.size(); ++k) {
            double d = std::abs(p[k] - center[k]);
            acc = norm == Norm::L2 ? acc + d * d : std::max(acc, d);
        }
        return norm == Norm::L2 ? std::sqrt(acc) : acc;
    }

    bool contains(std::span<const double> p, double tol = 1e-12) const {
        return distance(p) <= radius + tol;
    }

    double volume() const {
        const double d = static_cast<double>(dim());
        if (norm == Norm::Linf) return std::pow(2.0 * radius, d);
        return std::pow(M_PI, d / 2.0) / std::tgamma(d / 2.0 + 1.0) * std::pow(radius, d);
    }
};

struct LinearModel {
    Vec w;
    double b = 0.0;

    std::size_t dim() const { return w.size(); }

    Vec theta() const {
        Vec t(w);
        t.push_back(b);
        return t;
    }

    static LinearModel from_theta(std::span<const double> theta) {
        detail::require(!theta.empty(), "theta must contain at least the bias");
        return {Vec(theta.begin(), theta.end() - 1), theta.back()};
    }
};

// log(1 + exp(-m)) without overflow.
inline double softplus_neg(double m) { return std::max(-m, 0.0) + std::log1p(std::exp(-std::abs(m))); }

// sigma(-m) = 1 / (1 + exp(m)), stable for both signs.
inline double sigmoid_neg(double m) {
    if (m >= 0) {
        double e = std::exp(-m);
        return e / (1.0 + e);
    }
    return 1.0 / (1.0 + std::exp(m));
}

/// Margin y * (w^T x + b) with theta in (w, b) layout.
inline double margin(std::span<const double> theta, std::span<const double> x, int y) {
    const std::size_t d = x.size();
    return y * (detail::dot(theta.first(d), x) + theta[d]);
}

inline double logistic_loss_theta(std::span<const double> theta, std::span<const double> x, int y) {
    return softplus_neg(margin(theta, x, y));
}

inline double y_margin(const LinearModel& model, const LabeledSample& s) {
    return s.y * (detail::dot(model.w, s.x) + model.b);
}

/// log(1 + exp(-y (w^T x + b))).
inline double logistic_loss(const LinearModel& model, const LabeledSample& s) {
    detail::require_same_dim(model.dim(), s.x.size(), "logistic_loss");
    return softplus_neg(y_margin(model, s));
}

/// Writes d loss / d theta into out (size d+1); returns the loss.
inline double loss_and_grad_theta(std::span<const double> theta, std::span<const double> x, int y,
                                  std::span<double> out) {
    const std::size_t d = x.size();
    const double m = margin(theta, x, y);
    const double c = -y * sigmoid_neg(m);
    for (std::size_t k = 0; k < d; ++k) out[k] = c * x[k];
    out[d] = c;
    return softplus_neg(m);
}

/// Adds scale * d loss / d x into out (size d).
inline void add_grad_x(std::span<const double> theta, std::span<const double> x, int y, double scale,
                       std::span<double> out) {
    const std::size_t d = x.size();
    const double c = -y * sigmoid_neg(margin(theta, x, y)) * scale;
    for (std::size_t k = 0; k < d; ++k) out[k] += c * theta[k];
}

inline Vec loss_grad_theta(const LinearModel& model, const LabeledSample& s) {
    detail::require_same_dim(model.dim(), s.x.size(), "loss_grad_theta");
    Vec theta = model.theta();
    Vec g(theta.size());
    loss_and_grad_theta(theta, s.x, s.y, g);
    return g;
}

inline Vec loss_grad_x(const LinearModel& model, const LabeledSample& s) {
    detail::require_same_dim(model.dim(), s.x.size(), "loss_grad_x");
    Vec theta = model.theta();
    Vec g(s.x.size(), 0.0);
    add_grad_x(theta, s.x, s.y, 1.0, g);
    return g;
}

/// Euclidean projection onto the ball (radial shrink for L2, clamp for Linf).
inline Vec project_ball(const Ball& ball, std::span<const double> p) {
    detail::require_same_dim(p.size(), ball.dim(), "project_ball");
    Vec out(p.begin(), p.end());
    if (ball.norm == Norm::Linf) {
        for (std::size_t k = 0; k < out.size(); ++k)
            out[k] = std::clamp(out[k], ball.center[k] - ball.radius, ball.center[k] + ball.radius);
        return out;
    }
    const double dist = ball.distance(p);
    if (dist <= ball.radius) return out;
    const double scale = ball.radius / dist;
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = ball.center[k] + scale * (p[k] - ball.center[k]);
    // Rounding can leave the result a hair outside; pull it in until it is not.
    for (double shrink = 0x1p-52; ball.distance(out) > ball.radius && shrink < 1.0; shrink *= 2.0)
        for (std::size_t k = 0; k < out.size(); ++k) out[k] = ball.center[k] + scale * (1.0 - shrink) * (p[k] - ball.center[k]);
    return out;
}

/// Predicted label, with sign(0) mapped to +1.
inline int predict(std::span<const double> theta, std::span<const double> x) {
    const std::size_t d = x.size();
    return detail::dot(theta.first(d), x) + theta[d] >= 0.0 ? 1 : -1;
}

/// Randomized classifier: weighted parameter particles on the simplex.
struct ParticleMixture {
    std::vector<Vec> particles;
    Vec weights;

    std::size_t size() const { return particles.size(); }
    std::size_t theta_dim() const { return particles.empty() ? 0 : particles.front().size(); }

    static ParticleMixture uniform(std::vector<Vec> particles) {
        const double w = 1.0 / static_cast<double>(particles.size());
        Vec weights(particles.size(), w);
        return {std::move(particles), std::move(weights)};
    }

    static ParticleMixture dirac(Vec theta) { return {{std::move(theta)}, {1.0}}; }

    void validate(double tol = 1e-12) const {
        detail::require(!particles.empty(), "mixture must have at least one particle");
        detail::require(weights.size() == particles.size(), "mixture: weight count != particle count");
        double sum = 0.0;
        for (double w : weights) {
            detail::require(w >= 0.0 && std::isfinite(w), "mixture: negative or non-finite weight");
            sum += w;
        }
        detail::require(std::abs(sum - 1.0) <= tol, "mixture: weights do not sum to 1");
        for (const auto& p : particles) detail::require_same_dim(p.size(), theta_dim(), "mixture");
    }
};

/// Probability that a draw from the mixture labels the sample correctly.
inline double expected_accuracy(const ParticleMixture& mix, const LabeledSample& s) {
    detail::require(mix.size() > 0, "expected_accuracy: empty mixture");
    detail::require_same_dim(mix.theta_dim(), s.x.size() + 1, "expected_accuracy");
    double acc = 0.0;
    for (std::size_t j = 0; j < mix.size(); ++j)
        if (predict(mix.particles[j], s.x) == s.y) acc += mix.weights[j];
    return acc;
}

/// Expected loss E_{theta ~ mix} l(theta, (x, y)).
inline double expected_loss(const ParticleMixture& mix, std::span<const double> x, int y) {
    double v = 0.0;
    for (std::size_t j = 0; j < mix.size(); ++j) v += mix.weights[j] * logistic_loss_theta(mix.particles[j], x, y);
    return v;
}

/// A dataset together with one perturbation ball per sample.
struct GameInstance {
    Dataset data;
    std::vector<Ball> balls;
    double eps = 0.0;
    Norm norm = Norm::L2;

    std::size_t size() const { return data.size(); }
    std::size_t dim() const { return data.dim; }
};

inline GameInstance make_instance(Dataset data, double eps, Norm norm) {
    data.validate();
    detail::require(eps >= 0.0 && std::isfinite(eps), "perturbation radius must be finite and >= 0");
    GameInstance g;
    g.eps = eps;
    g.norm = norm;
    for (const auto& s : data.samples) g.balls.push_back({s.x, eps, norm});
    g.data = std::move(data);
    return g;
}

}  // namespace mnat
