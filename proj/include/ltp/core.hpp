#pragma once

#include "ltp/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ltp {

// How the weight gradient is formed while soft-pruning.
//   approx              sigm(.) * dL/dv, regularizer excluded from weight updates
//   full_clamped        exact chain rule incl. lambda * L0 term, clamped to eta*|g| <= kappa*T
//   full_unclamped      exact chain rule incl. lambda * L0 term
//   l0_in_weight_update approx plus lambda * sigma_T
enum class GradMode { approx, full_clamped, full_unclamped, l0_in_weight_update };
enum class PruneMode { off, soft, hard };

GradMode parse_grad_mode(std::string_view s);
std::string_view to_string(GradMode m);
PruneMode parse_prune_mode(std::string_view s);
std::string_view to_string(PruneMode m);

// A prunable weight tensor together with its layer threshold and temperature.
struct PrunableParam {
    std::string name;
    Tensor w;
    double tau = 0.0;
    double temp = 1.0;
    PruneMode mode = PruneMode::off;
    bool exempt = false;
    // Fixed keep mask set when the layer is finalized; hard mode multiplies by
    // it instead of re-thresholding, so finetuning cannot flip a bit.
    std::vector<std::uint8_t> mask;

    std::size_t kept_count() const;
};

struct LtpHyperParams {
    double T0 = 1e-3;
    double lr_ratio = 1e-5;
    double lambda0 = 2e-6;
    double c_lambda = 1.0;
    int N_lambda = 5;
    GradMode grad_mode = GradMode::approx;
    double clamp_kappa = 0.1;

    void validate() const;
};

struct LambdaState {
    int n = 0;
    double lambda = 0.0;
    int epochs_since_update = 0;
    double keep_ratio_at_update = 1.0;
};

double sigmoid(double x);

// sigm((w^2 - tau) / T)
double soft_mask(double w, double tau, double temp);

// d/dw sigm((w^2 - tau) / T) = (2w/T) s (1 - s)
double sigma_T(double w, double tau, double temp);

double grad_v_wrt_tau(double w, double tau, double temp);

enum class Derivative { full, approx };
double grad_v_wrt_w(double w, double tau, double temp, Derivative variant);

// v = w * sigm((w^2 - tau) / T). The tape rule for dv/dw follows `mode`:
// the full derivative for the full_* modes, the sigmoid alone otherwise.
// A tau tensor that requires grad receives sum_k dL/dv_k * (-sigma_T / 2).
Tensor soft_prune(const Tensor& w, const Tensor& tau, double temp, GradMode mode = GradMode::approx);
Tensor soft_prune(const Tensor& w, double tau, double temp, GradMode mode = GradMode::approx);

// v = w if w^2 > tau else 0. Gradient flows through kept entries only.
Tensor hard_prune(const Tensor& w, double tau);

bool is_kept(double w, double tau);
std::size_t hard_keep_count(std::span<const double> w, double tau);
std::size_t transitional_count(std::span<const double> w, double tau, double temp);

double soft_l0(std::span<const double> w, double tau, double temp);
double grad_l0_wrt_tau(std::span<const double> w, double tau, double temp);
std::vector<double> grad_l0_wrt_w(std::span<const double> w, double tau, double temp);

// dL_T/dtau = sum_k dL/dv_k * dv_k/dtau + lambda * dL0/dtau
double threshold_grad(const PrunableParam& p, std::span<const double> dL_dv, double lambda);
double threshold_step(const PrunableParam& p, std::span<const double> dL_dv, double lambda, double eta_tau);

struct ClampSpec {
    double eta = 1.0;
    double kappa = 0.1;
};

std::vector<double> weight_grad(const PrunableParam& p, std::span<const double> dL_dv, double lambda, GradMode mode,
                                ClampSpec clamp = {});

// T_l = T0 * population variance of |w|
double per_layer_temperature(std::span<const double> w, double T0);

double lambda_value(const LtpHyperParams& hp, int n);
LambdaState initial_lambda_state(const LtpHyperParams& hp, double keep_ratio);
LambdaState lambda_step(LambdaState state, const LtpHyperParams& hp, double current_keep_ratio);

} // namespace ltp
