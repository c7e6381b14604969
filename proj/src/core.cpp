#include "ltp/core.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ltp {

namespace {

void require_temp(double temp, std::string_view op) {
    if (!(temp > 0.0)) {
        throw std::invalid_argument(std::string(op) + ": temperature must be positive, got " + std::to_string(temp));
    }
}

// s and 1 - s evaluated separately so the tails keep full relative precision.
struct SigmoidPair {
    double s;
    double one_minus_s;
};

SigmoidPair sigmoid_pair(double x) {
    return {sigmoid(x), sigmoid(-x)};
}

double sigma_T_unchecked(double w, double tau, double temp) {
    const auto [s, r] = sigmoid_pair((w * w - tau) / temp);
    return (2.0 * w / temp) * s * r;
}

} // namespace

GradMode parse_grad_mode(std::string_view s) {
    if (s == "approx") {
        return GradMode::approx;
    }
    if (s == "full_clamped") {
        return GradMode::full_clamped;
    }
    if (s == "full_unclamped") {
        return GradMode::full_unclamped;
    }
    if (s == "l0_in_weight_update") {
        return GradMode::l0_in_weight_update;
    }
    throw std::invalid_argument("unknown grad mode '" + std::string(s) + "'");
}

std::string_view to_string(GradMode m) {
    switch (m) {
    case GradMode::approx:
        return "approx";
    case GradMode::full_clamped:
        return "full_clamped";
    case GradMode::full_unclamped:
        return "full_unclamped";
    case GradMode::l0_in_weight_update:
        return "l0_in_weight_update";
    }
    throw std::invalid_argument("unknown grad mode");
}

PruneMode parse_prune_mode(std::string_view s) {
    if (s == "off") {
        return PruneMode::off;
    }
    if (s == "soft") {
        return PruneMode::soft;
    }
    if (s == "hard") {
        return PruneMode::hard;
    }
    throw std::invalid_argument("unknown prune mode '" + std::string(s) + "'");
}

std::string_view to_string(PruneMode m) {
    switch (m) {
    case PruneMode::off:
        return "off";
    case PruneMode::soft:
        return "soft";
    case PruneMode::hard:
        return "hard";
    }
    throw std::invalid_argument("unknown prune mode");
}

void LtpHyperParams::validate() const {
    auto positive = [](double v, const char* name) {
        if (!(v > 0.0) || !std::isfinite(v)) {
            throw std::invalid_argument(std::string(name) + " must be positive and finite");
        }
    };
    positive(T0, "T0");
    positive(lr_ratio, "lr_ratio");
    positive(clamp_kappa, "clamp_kappa");
    if (!(lambda0 >= 0.0) || !std::isfinite(lambda0)) {
        throw std::invalid_argument("lambda0 must be non-negative and finite");
    }
    if (!(c_lambda >= 1.0) || !std::isfinite(c_lambda)) {
        throw std::invalid_argument("c_lambda must be >= 1");
    }
    if (N_lambda < 1) {
        throw std::invalid_argument("N_lambda must be a positive integer");
    }
}

double sigmoid(double x) {
    if (x >= 0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double soft_mask(double w, double tau, double temp) {
    require_temp(temp, "soft_mask");
    return sigmoid((w * w - tau) / temp);
}

double sigma_T(double w, double tau, double temp) {
    require_temp(temp, "sigma_T");
    return sigma_T_unchecked(w, tau, temp);
}

double grad_v_wrt_tau(double w, double tau, double temp) {
    return -0.5 * sigma_T(w, tau, temp);
}

double grad_v_wrt_w(double w, double tau, double temp, Derivative variant) {
    const double s = soft_mask(w, tau, temp);
    if (variant == Derivative::approx) {
        return s;
    }
    return s + w * sigma_T_unchecked(w, tau, temp);
}

Tensor soft_prune(const Tensor& w, const Tensor& tau, double temp, GradMode mode) {
    require_temp(temp, "soft_prune");
    if (tau.numel() != 1) {
        throw std::invalid_argument("soft_prune: threshold must be a scalar, got shape " + shape_str(tau.shape()));
    }
    const double t = tau.item();
    auto wd = w.data();
    std::vector<double> out(wd.size());
    for (std::size_t i = 0; i < wd.size(); ++i) {
        out[i] = wd[i] * sigmoid((wd[i] * wd[i] - t) / temp);
    }
    const bool full = mode == GradMode::full_clamped || mode == GradMode::full_unclamped;
    return record_op("soft_prune", w.shape(), std::move(out), {w, tau},
                     [temp, full](std::span<const double> g, std::vector<Tensor>& in) {
                         auto ws = in[0].data();
                         const double t = in[1].item();
                         double dtau = 0.0;
                         const bool want_w = in[0].requires_grad();
                         std::span<double> dw;
                         if (want_w) {
                             dw = in[0].mutable_grad();
                         }
                         for (std::size_t i = 0; i < g.size(); ++i) {
                             const auto [s, r] = sigmoid_pair((ws[i] * ws[i] - t) / temp);
                             const double st = (2.0 * ws[i] / temp) * s * r;
                             if (want_w) {
                                 dw[i] += g[i] * (full ? s + ws[i] * st : s);
                             }
                             dtau += g[i] * (-0.5 * st);
                         }
                         if (in[1].requires_grad()) {
                             in[1].mutable_grad()[0] += dtau;
                         }
                     });
}

Tensor soft_prune(const Tensor& w, double tau, double temp, GradMode mode) {
    return soft_prune(w, Tensor::scalar(tau), temp, mode);
}

bool is_kept(double w, double tau) {
    return w * w > tau;
}

Tensor hard_prune(const Tensor& w, double tau) {
    auto wd = w.data();
    std::vector<double> out(wd.size());
    for (std::size_t i = 0; i < wd.size(); ++i) {
        out[i] = is_kept(wd[i], tau) ? wd[i] : 0.0;
    }
    return record_op("hard_prune", w.shape(), std::move(out), {w}, [tau](std::span<const double> g, std::vector<Tensor>& in) {
        auto ws = in[0].data();
        auto dw = in[0].mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (is_kept(ws[i], tau)) {
                dw[i] += g[i];
            }
        }
    });
}

std::size_t PrunableParam::kept_count() const {
    if (mode == PruneMode::hard && !mask.empty()) {
        std::size_t n = 0;
        for (auto m : mask) {
            n += m ? 1 : 0;
        }
        return n;
    }
    return hard_keep_count(w.data(), tau);
}

std::size_t hard_keep_count(std::span<const double> w, double tau) {
    std::size_t n = 0;
    for (auto v : w) {
        n += is_kept(v, tau) ? 1 : 0;
    }
    return n;
}

std::size_t transitional_count(std::span<const double> w, double tau, double temp) {
    std::size_t n = 0;
    for (auto v : w) {
        n += std::fabs(v * v - tau) <= temp ? 1 : 0;
    }
    return n;
}

double soft_l0(std::span<const double> w, double tau, double temp) {
    require_temp(temp, "soft_l0");
    double acc = 0.0;
    for (auto v : w) {
        acc += sigmoid((v * v - tau) / temp);
    }
    return acc;
}

double grad_l0_wrt_tau(std::span<const double> w, double tau, double temp) {
    require_temp(temp, "grad_l0_wrt_tau");
    double acc = 0.0;
    for (auto v : w) {
        const auto [s, r] = sigmoid_pair((v * v - tau) / temp);
        acc += s * r;
    }
    return -acc / temp;
}

std::vector<double> grad_l0_wrt_w(std::span<const double> w, double tau, double temp) {
    require_temp(temp, "grad_l0_wrt_w");
    std::vector<double> g(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
        g[i] = sigma_T_unchecked(w[i], tau, temp);
    }
    return g;
}

double threshold_grad(const PrunableParam& p, std::span<const double> dL_dv, double lambda) {
    auto w = p.w.data();
    if (dL_dv.size() != w.size()) {
        throw std::invalid_argument("threshold_step: dL/dv has " + std::to_string(dL_dv.size()) +
                                    " entries, weights have " + std::to_string(w.size()));
    }
    require_temp(p.temp, "threshold_step");
    double data_term = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        data_term += dL_dv[i] * (-0.5 * sigma_T_unchecked(w[i], p.tau, p.temp));
    }
    double reg_term = 0.0;
    if (lambda != 0.0) {
        reg_term = lambda * grad_l0_wrt_tau(w, p.tau, p.temp);
    }
    return data_term + reg_term;
}

double threshold_step(const PrunableParam& p, std::span<const double> dL_dv, double lambda, double eta_tau) {
    return p.tau - eta_tau * threshold_grad(p, dL_dv, lambda);
}

std::vector<double> weight_grad(const PrunableParam& p, std::span<const double> dL_dv, double lambda, GradMode mode,
                                ClampSpec clamp) {
    auto w = p.w.data();
    if (dL_dv.size() != w.size()) {
        throw std::invalid_argument("weight_grad: dL/dv has " + std::to_string(dL_dv.size()) +
                                    " entries, weights have " + std::to_string(w.size()));
    }
    require_temp(p.temp, "weight_grad");
    std::vector<double> g(w.size());
    const double limit = clamp.kappa * p.temp / clamp.eta;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const auto [s, r] = sigmoid_pair((w[i] * w[i] - p.tau) / p.temp);
        const double st = (2.0 * w[i] / p.temp) * s * r;
        switch (mode) {
        case GradMode::approx:
            g[i] = s * dL_dv[i];
            break;
        case GradMode::l0_in_weight_update:
            g[i] = s * dL_dv[i] + lambda * st;
            break;
        case GradMode::full_unclamped:
            g[i] = s * dL_dv[i] + (w[i] * dL_dv[i] + lambda) * st;
            break;
        case GradMode::full_clamped: {
            const double raw = s * dL_dv[i] + (w[i] * dL_dv[i] + lambda) * st;
            g[i] = std::fmax(-limit, std::fmin(limit, raw));
            break;
        }
        default:
            throw std::invalid_argument("weight_grad: unknown grad mode");
        }
    }
    return g;
}

double per_layer_temperature(std::span<const double> w, double T0) {
    if (w.empty()) {
        throw std::invalid_argument("per_layer_temperature: empty weight tensor");
    }
    // Welford over |w|
    double m = 0.0, m2 = 0.0;
    std::size_t n = 0;
    for (auto v : w) {
        const double a = std::fabs(v);
        ++n;
        const double d = a - m;
        m += d / static_cast<double>(n);
        m2 += d * (a - m);
    }
    const double var = m2 / static_cast<double>(n);
    if (!(var > 0.0)) {
        throw std::invalid_argument("per_layer_temperature: |w| has zero variance (degenerate layer)");
    }
    return T0 * var;
}

double lambda_value(const LtpHyperParams& hp, int n) {
    return std::pow(hp.c_lambda, static_cast<double>(n)) * hp.lambda0;
}

LambdaState initial_lambda_state(const LtpHyperParams& hp, double keep_ratio) {
    LambdaState s;
    s.lambda = lambda_value(hp, 0);
    s.keep_ratio_at_update = keep_ratio;
    return s;
}

LambdaState lambda_step(LambdaState state, const LtpHyperParams& hp, double current_keep_ratio) {
    state.epochs_since_update += 1;
    if (state.epochs_since_update >= hp.N_lambda && state.keep_ratio_at_update - current_keep_ratio < 0.01) {
        state.n += 1;
        state.epochs_since_update = 0;
        state.keep_ratio_at_update = current_keep_ratio;
    }
    state.lambda = lambda_value(hp, state.n);
    return state;
}

} // namespace ltp
