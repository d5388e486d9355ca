#include "cyclediff/sched.hpp"

#include <cmath>
#include <string>

#include "cyclediff/errors.hpp"

namespace cyclediff {

std::size_t VarianceSchedule::check_index(int t) const {
    if (t < 1 || t > T)
        throw ConfigError("schedule: step index " + std::to_string(t) + " out of 1.." +
                          std::to_string(T));
    return static_cast<std::size_t>(t - 1);
}

double VarianceSchedule::alpha_bar(int t) const {
    if (t == 0) return 1.0;
    return alpha_bars[check_index(t)];
}

double VarianceSchedule::posterior_variance(int t) const {
    check_index(t);
    return (1.0 - alpha_bar(t - 1)) / (1.0 - alpha_bar(t)) * beta(t);
}

void VarianceSchedule::validate() const {
    if (T < 1) throw ConfigError("schedule: T must be >= 1");
    if (betas.size() != static_cast<std::size_t>(T) || alphas.size() != betas.size() ||
        alpha_bars.size() != betas.size())
        throw ConfigError("schedule: table sizes do not match T");
    double prod = 1.0;
    double prev_bar = 1.0;
    for (int t = 1; t <= T; ++t) {
        const double b = beta(t);
        if (!(b > 0.0 && b < 1.0)) throw ConfigError("schedule: beta out of (0,1)");
        prod *= alpha(t);
        if (std::abs(alpha_bar(t) - prod) > 1e-12)
            throw ConfigError("schedule: alpha_bar inconsistent with product");
        if (!(alpha_bar(t) < prev_bar))
            throw ConfigError("schedule: alpha_bar must strictly decrease");
        prev_bar = alpha_bar(t);
    }
    if (!(alpha_bar(T) > 0.0 && alpha_bar(T) < 1.0))
        throw ConfigError("schedule: alpha_bar(T) must lie in (0,1)");
}

VarianceSchedule build_linear_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) throw ConfigError("schedule: T must be >= 1");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
        throw ConfigError("schedule: need 0 < beta_start <= beta_end < 1");

    VarianceSchedule s;
    s.T = T;
    s.betas.resize(static_cast<std::size_t>(T));
    s.alphas.resize(static_cast<std::size_t>(T));
    s.alpha_bars.resize(static_cast<std::size_t>(T));

    double prod = 1.0;
    for (int t = 1; t <= T; ++t) {
        const double frac = (T == 1) ? 0.0 : static_cast<double>(t - 1) / (T - 1);
        const double b = beta_start + (beta_end - beta_start) * frac;
        prod *= 1.0 - b;
        s.betas[t - 1] = b;
        s.alphas[t - 1] = 1.0 - b;
        s.alpha_bars[t - 1] = prod;
    }
    return s;
}

Tensor q_sample(const Tensor& z0, int t, const Tensor& eps, const VarianceSchedule& s) {
    check_same_shape(z0, eps, "q_sample");
    if (t < 1 || t > s.T) throw ConfigError("q_sample: t must lie in [1, T]");
    const double abar = s.alpha_bar(t);
    const double c0 = std::sqrt(abar);
    const double ce = std::sqrt(1.0 - abar);
    Tensor out = z0;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c0 * z0[i] + ce * eps[i];
    return out;
}

Tensor cfg_combine(const Tensor& eps_cond, const Tensor& eps_uncond, double s) {
    check_same_shape(eps_cond, eps_uncond, "cfg_combine");
    if (!(s >= 0.0)) throw ConfigError("cfg_combine: guidance scale must be >= 0");
    Tensor out = eps_cond;
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = eps_cond[i] + s * (eps_cond[i] - eps_uncond[i]);
    return out;
}

Tensor posterior_step(const Tensor& z_t, const Tensor& eps_hat, int t, const Tensor& noise,
                      const VarianceSchedule& s) {
    check_same_shape(z_t, eps_hat, "posterior_step");
    check_same_shape(z_t, noise, "posterior_step");
    const double a = s.alpha(t);
    const double abar = s.alpha_bar(t);
    const double inv_sqrt_a = 1.0 / std::sqrt(a);
    const double eps_coef = (1.0 - a) / std::sqrt(1.0 - abar);
    const double sigma = std::sqrt(s.posterior_variance(t));
    Tensor out = z_t;
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = inv_sqrt_a * (z_t[i] - eps_coef * eps_hat[i]) + sigma * noise[i];
    return out;
}

double epsilon_loss(const Tensor& eps, const Tensor& eps_hat) {
    check_same_shape(eps, eps_hat, "epsilon_loss");
    double sum = 0.0;
    for (std::size_t i = 0; i < eps.size(); ++i) {
        const double d = eps[i] - eps_hat[i];
        sum += d * d;
    }
    return sum / static_cast<double>(eps.size());
}

}  // namespace cyclediff
