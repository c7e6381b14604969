#pragma once

// Finite-difference oracles for the soft-prune formulas, built only from the
// defining forward expressions.

#include <cmath>
#include <functional>
#include <random>

namespace testing {

struct PrunePoint {
    double w;
    double tau;
    double temp;
    bool saturated;
};

// T log-uniform in [1e-6, 1e-1]; half the points have |w^2 - tau| <= 5T
// (transitional), half 40T..60T away (saturated).
inline PrunePoint random_prune_point(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double temp = std::pow(10.0, -6.0 + 5.0 * u01(rng));
    double w = 0.0;
    while (std::fabs(w) < 1e-3) {
        w = -0.5 + u01(rng);
    }
    const bool saturated = u01(rng) < 0.5;
    double off = saturated ? 40.0 + 20.0 * u01(rng) : 5.0 * u01(rng);
    if (u01(rng) < 0.5) {
        off = -off;
    }
    return {w, w * w - off * temp, temp, saturated};
}

inline double plain_sigmoid(double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// Five-point central difference.
inline double d5(const std::function<double(double)>& f, double x, double h) {
    return (-f(x + 2 * h) + 8 * f(x + h) - 8 * f(x - h) + f(x - 2 * h)) / (12 * h);
}

// Step sizes: 1% of the distance over which the sigmoid argument moves by 1.
inline double w_step(const PrunePoint& p) {
    return std::min(1e-2 * p.temp / (2.0 * std::fabs(p.w)), 1e-3 * std::fabs(p.w));
}
inline double tau_step(const PrunePoint& p) {
    return 1e-2 * p.temp;
}

// When the mask is near 1 its complement 1 - s carries the information, so
// the oracle differentiates s = 1 - sigm(-x) through the complement instead
// (the constant drops out of the derivative).
inline double mask_shape(double w, double tau, double temp, bool upper) {
    const double x = (w * w - tau) / temp;
    return upper ? -plain_sigmoid(-x) : plain_sigmoid(x);
}

inline bool upper_half(const PrunePoint& p) {
    return p.w * p.w - p.tau > 0;
}

// d/dw sigm((w^2 - tau)/T)
inline double fd_mask_wrt_w(const PrunePoint& p) {
    const bool up = upper_half(p);
    return d5([&](double w) { return mask_shape(w, p.tau, p.temp, up); }, p.w, w_step(p));
}

// d/dtau sigm((w^2 - tau)/T)
inline double fd_mask_wrt_tau(const PrunePoint& p) {
    const bool up = upper_half(p);
    return d5([&](double t) { return mask_shape(p.w, t, p.temp, up); }, p.tau, tau_step(p));
}

// d/dtau of v = w * sigm(.)
inline double fd_v_wrt_tau(const PrunePoint& p) {
    const bool up = upper_half(p);
    return d5([&](double t) { return p.w * mask_shape(p.w, t, p.temp, up); }, p.tau, tau_step(p));
}

// d/dw of v = w * sigm(.); above the threshold v = w - w(1 - s)
inline double fd_v_wrt_w(const PrunePoint& p) {
    const bool up = upper_half(p);
    return d5([&](double w) { return up ? w + w * mask_shape(w, p.tau, p.temp, true) : w * mask_shape(w, p.tau, p.temp, false); },
              p.w, w_step(p));
}

// d/dw of g * v(w) + lambda * sigm(.): a linear loss with dL/dv = g plus the
// soft L0 term, i.e. the exact weight gradient.
inline double fd_total_wrt_w(const PrunePoint& p, double g, double lambda) {
    const bool up = upper_half(p);
    return d5(
        [&](double w) {
            const double m = mask_shape(w, p.tau, p.temp, up);
            const double v = up ? w + w * m : w * m;
            return g * v + lambda * m;
        },
        p.w, w_step(p));
}

} // namespace testing
