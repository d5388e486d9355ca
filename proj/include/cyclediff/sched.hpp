#pragma once

#include <vector>

#include "cyclediff/tensor.hpp"

namespace cyclediff {

// Variance schedule beta_1..beta_T with the derived alpha and alpha-bar
// tables. Step indices are 1-based throughout; alpha_bar(0) is defined as 1.
struct VarianceSchedule {
    int T = 0;
    std::vector<double> betas;       // beta_t, t = 1..T
    std::vector<double> alphas;      // 1 - beta_t
    std::vector<double> alpha_bars;  // prod_{s<=t} alpha_s

    double beta(int t) const { return betas[check_index(t)]; }
    double alpha(int t) const { return alphas[check_index(t)]; }
    double alpha_bar(int t) const;  // alpha_bar(0) = 1

    // Posterior variance beta-tilde_t = (1 - abar_{t-1}) / (1 - abar_t) * beta_t.
    double posterior_variance(int t) const;

    void validate() const;

  private:
    std::size_t check_index(int t) const;
};

VarianceSchedule build_linear_schedule(int T, double beta_start, double beta_end);

// Closed-form forward noising: sqrt(abar_t) z0 + sqrt(1 - abar_t) eps.
Tensor q_sample(const Tensor& z0, int t, const Tensor& eps, const VarianceSchedule& s);

// Classifier-free guidance: eps_cond + s * (eps_cond - eps_uncond).
Tensor cfg_combine(const Tensor& eps_cond, const Tensor& eps_uncond, double s);

// One reverse step: (1/sqrt(alpha_t)) (z_t - (1-alpha_t)/sqrt(1-abar_t) eps_hat)
// plus sqrt(beta-tilde_t) n. The t = 1 step is noiseless.
Tensor posterior_step(const Tensor& z_t, const Tensor& eps_hat, int t, const Tensor& noise,
                      const VarianceSchedule& s);

// Mean squared error over all elements.
double epsilon_loss(const Tensor& eps, const Tensor& eps_hat);

}  // namespace cyclediff
