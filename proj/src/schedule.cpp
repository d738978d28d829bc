#include "dualdiff/schedule.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace dualdiff {

namespace {

double sigmoid_scalar(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace

double ScheduleParams::snr(int m) const {
    if (m == 0) return std::numeric_limits<double>::infinity();
    return alpha[m] * alpha[m] / (sigma[m] * sigma[m]);
}

ScheduleParams linear_schedule(int steps, double beta_1, double beta_m) {
    if (steps < 1) throw ConfigError("linear_schedule: steps must be >= 1");
    if (!(0.0 < beta_1 && beta_1 <= beta_m && beta_m < 1.0)) {
        throw ConfigError("linear_schedule: need 0 < beta_1 <= beta_M < 1");
    }
    ScheduleParams s;
    s.steps = steps;
    s.alpha.resize(steps + 1);
    s.sigma.resize(steps + 1);
    s.alpha[0] = 1.0;
    s.sigma[0] = 0.0;
    double prod = 1.0;
    for (int m = 1; m <= steps; ++m) {
        const double beta =
            steps == 1 ? beta_1 : beta_1 + (beta_m - beta_1) * (m - 1) / double(steps - 1);
        prod *= std::sqrt(1.0 - beta);
        s.alpha[m] = prod;
        s.sigma[m] = std::sqrt(1.0 - prod * prod);
    }
    for (int m = 1; m < steps; ++m) {
        if (!(s.snr(m + 1) < s.snr(m))) {
            throw ScheduleError("linear_schedule: SNR not strictly decreasing at step " +
                                std::to_string(m + 1));
        }
    }
    return s;
}

TransitionParams transition_params(const ScheduleParams& s, int n, int m) {
    if (!(0 <= n && n < m && m <= s.steps)) {
        throw ContractError("transition_params: need 0 <= n < m <= M");
    }
    const double a = s.alpha[m] / s.alpha[n];
    double s2 = s.sigma2(m) - a * a * s.sigma2(n);
    if (s2 < 0.0) {
        if (s2 < -1e-12) throw ScheduleError("transition_params: negative conditional variance");
        s2 = 0.0;
    }
    return {a, s2};
}

GammaField::GammaField(std::vector<double> a1_, std::vector<double> a2_, std::vector<double> a3_,
                       double gmin, double gmax, int steps_)
    : a1(std::move(a1_)), a2(std::move(a2_)), a3(std::move(a3_)),
      gamma_min(gmin), gamma_max(gmax), steps(steps_) {
    if (a1.size() != a2.size() || a1.size() != a3.size() || a1.empty()) {
        throw ShapeError("GammaField: coefficient arrays must share a nonzero length");
    }
    if (steps < 1) throw ConfigError("GammaField: steps must be >= 1");
    if (!(gamma_min < gamma_max)) throw ConfigError("GammaField: gamma_min must be < gamma_max");
    for (std::size_t t = 0; t < a1.size(); ++t) {
        if (!std::isfinite(a1[t]) || !std::isfinite(a2[t]) || !std::isfinite(a3[t])) {
            throw NumericError("GammaField: non-finite coefficient");
        }
        if (gamma_poly(a1[t], a2[t], a3[t], 1.0) <= 0.0) {
            throw ScheduleError("GammaField: degenerate field, f(., M) <= 0 at timestep " +
                                std::to_string(t));
        }
    }
}

double gamma_poly(double a1, double a2, double a3, double s) {
    // antiderivative of (a1 s^2 + a2 s + a3)^2, constant term fixed to zero
    const double s2 = s * s;
    const double s3 = s2 * s;
    const double s4 = s3 * s;
    const double s5 = s4 * s;
    return a1 * a1 / 5.0 * s5 + a1 * a2 / 2.0 * s4 + (a2 * a2 + 2.0 * a1 * a3) / 3.0 * s3 +
           a2 * a3 * s2 + a3 * a3 * s;
}

std::vector<double> gamma_eval(const GammaField& g, int m) {
    if (m < 0 || m > g.steps) throw ContractError("gamma_eval: step out of range");
    const int t_fut = g.horizon();
    const double s = double(m) / double(g.steps);
    std::vector<double> out(t_fut);
    for (int t = 0; t < t_fut; ++t) {
        const double f_m = gamma_poly(g.a1[t], g.a2[t], g.a3[t], s);
        const double f_end = gamma_poly(g.a1[t], g.a2[t], g.a3[t], 1.0);
        const double r = f_m / f_end;
        // two-sided lerp keeps both boundary values exact
        out[t] = g.gamma_min * (1.0 - r) + g.gamma_max * r;
    }
    return out;
}

AdaptiveParams adaptive_params(const GammaField& g, int m) {
    const auto gamma = gamma_eval(g, m);
    AdaptiveParams p;
    p.alpha2.resize(gamma.size());
    p.sigma2.resize(gamma.size());
    p.snr.resize(gamma.size());
    for (std::size_t t = 0; t < gamma.size(); ++t) {
        p.alpha2[t] = sigmoid_scalar(-gamma[t]);
        p.sigma2[t] = sigmoid_scalar(gamma[t]);
        p.snr[t] = std::exp(-gamma[t]);
    }
    return p;
}

std::vector<double> snr_gap(const GammaField& g, int n, int m) {
    if (!(n < m)) throw ContractError("snr_gap: need n < m");
    const auto gn = gamma_eval(g, n);
    const auto gm = gamma_eval(g, m);
    std::vector<double> gap(gn.size());
    for (std::size_t t = 0; t < gn.size(); ++t) {
        gap[t] = std::exp(-gn[t]) - std::exp(-gm[t]);
        if (!(gap[t] > 0.0)) {
            throw ScheduleError("snr_gap: non-positive gap at timestep " + std::to_string(t) +
                                " (schedule monotonicity violated)");
        }
    }
    return gap;
}

AdaptiveTransition adaptive_transition(const GammaField& g, int n, int m) {
    if (!(0 <= n && n < m && m <= g.steps)) {
        throw ContractError("adaptive_transition: need 0 <= n < m <= M");
    }
    const auto pn = adaptive_params(g, n);
    const auto pm = adaptive_params(g, m);
    AdaptiveTransition tr;
    const int t_fut = g.horizon();
    tr.alpha_cond.resize(t_fut);
    tr.sigma2_cond.resize(t_fut);
    for (int t = 0; t < t_fut; ++t) {
        const double a = std::sqrt(pm.alpha2[t] / pn.alpha2[t]);
        double s2 = pm.sigma2[t] - a * a * pn.sigma2[t];
        if (s2 < 0.0) s2 = 0.0;  // round-off guard; analytically >= 0
        tr.alpha_cond[t] = a;
        tr.sigma2_cond[t] = s2;
    }
    return tr;
}

Tensor gamma_poly_t(const GammaCoeffs& c, const Tensor& s) {
    const Tensor& a1 = c.a1;
    const Tensor& a2 = c.a2;
    const Tensor& a3 = c.a3;
    auto s2 = mul(s, s);
    auto s3 = mul(s2, s);
    auto s4 = mul(s3, s);
    auto s5 = mul(s4, s);
    auto term1 = mul(scale(mul(a1, a1), 0.2), s5);
    auto term2 = mul(scale(mul(a1, a2), 0.5), s4);
    auto term3 = mul(scale(add(mul(a2, a2), scale(mul(a1, a3), 2.0)), 1.0 / 3.0), s3);
    auto term4 = mul(mul(a2, a3), s2);
    auto term5 = mul(mul(a3, a3), s);
    return add(add(add(term1, term2), add(term3, term4)), term5);
}

Tensor gamma_at_t(const GammaCoeffs& c, const Tensor& s_norm, double gamma_min,
                  double gamma_max) {
    auto f_m = gamma_poly_t(c, s_norm);
    auto one = Tensor::full({1}, 1.0);
    auto f_end = gamma_poly_t(c, one);
    auto r = div(f_m, f_end);
    // same two-sided lerp as the plain route
    return add(scale(shift(neg(r), 1.0), gamma_min), scale(r, gamma_max));
}

}  // namespace dualdiff
