#pragma once

#include <vector>

#include "dualdiff/common.hpp"
#include "dualdiff/tensor.hpp"

namespace dualdiff {

// Fixed variance-preserving schedule: alpha[m]^2 + sigma[m]^2 = 1,
// index 0 is the clean-data endpoint (alpha 1, sigma 0).
struct ScheduleParams {
    int steps = 0;               // M
    std::vector<double> alpha;   // [M+1]
    std::vector<double> sigma;   // [M+1]

    double sigma2(int m) const { return sigma[m] * sigma[m]; }
    double snr(int m) const;     // alpha^2 / sigma^2; +inf at m = 0
};

// beta_m interpolates linearly from beta_1 to beta_M;
// alpha_m = prod_{k<=m} sqrt(1 - beta_k).
ScheduleParams linear_schedule(int steps, double beta_1, double beta_m);

struct TransitionParams {
    double alpha_cond;   // alpha_{m|n}
    double sigma2_cond;  // sigma^2_{m|n}
};

// Conditional q(x_m | x_n) scalars for 0 <= n < m <= M.
TransitionParams transition_params(const ScheduleParams& s, int n, int m);

// Bounded log-SNR field over the future horizon: one curve per future
// timestep, shared across the x/y coordinates. gamma(t, m) runs from
// gamma_min at m = 0 to gamma_max at m = M along a monotone quintic whose
// derivative is the square of a real quadratic; the step index is
// normalized to [0,1] before polynomial evaluation.
struct GammaField {
    std::vector<double> a1, a2, a3;  // [t_fut], strictly positive
    double gamma_min = 0.0;
    double gamma_max = 0.0;
    int steps = 0;  // M

    // Validates coefficients and bounds; throws ScheduleError for a
    // degenerate field (f(., M) <= 0 at any timestep).
    GammaField(std::vector<double> a1, std::vector<double> a2, std::vector<double> a3,
               double gamma_min, double gamma_max, int steps);

    int horizon() const { return static_cast<int>(a1.size()); }
};

// Antiderivative of (a1 s^2 + a2 s + a3)^2 at s, with zero constant term.
double gamma_poly(double a1, double a2, double a3, double s);

std::vector<double> gamma_eval(const GammaField& g, int m);  // [t_fut]

struct AdaptiveParams {
    std::vector<double> alpha2;  // sigmoid(-gamma)
    std::vector<double> sigma2;  // sigmoid(gamma)
    std::vector<double> snr;     // exp(-gamma)
};

AdaptiveParams adaptive_params(const GammaField& g, int m);

// nu(t, n) - nu(t, m) for n < m; the forward-branch loss weight.
std::vector<double> snr_gap(const GammaField& g, int n, int m);

// Per-timestep conditional scalars of the adaptive schedule.
struct AdaptiveTransition {
    std::vector<double> alpha_cond;
    std::vector<double> sigma2_cond;
};
AdaptiveTransition adaptive_transition(const GammaField& g, int n, int m);

// ---- differentiable route ----
// The same gamma construction over batched coefficient tensors [B, t_fut],
// used inside the training graph so gradients reach the coefficient
// predictor; must agree with the plain route to round-off.

struct GammaCoeffs {
    Tensor a1, a2, a3;  // [B, t_fut]
};

// f evaluated at per-sample normalized steps s in [0,1] ([B,1] tensor).
Tensor gamma_poly_t(const GammaCoeffs& c, const Tensor& s);
// gamma(., m) for per-sample steps m ([B,1] tensor of m/M).
Tensor gamma_at_t(const GammaCoeffs& c, const Tensor& s_norm, double gamma_min,
                  double gamma_max);

}  // namespace dualdiff
