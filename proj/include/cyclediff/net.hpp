#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cyclediff/tensor.hpp"

namespace cyclediff {

struct UNetConfig {
    int base_channels = 16;  // channel plan [c, 2c, 4c]
    int emb_dim = 64;
    int n_prompts = 4;             // embedding table has n_prompts + 1 rows, row 0 = blank
    bool meb_skips = true;         // the three residual adds around the modulation stages
    bool mask_modulation = true;   // ablation switch: bypass the gamma_m/beta_m stage
    void validate() const;
};

struct Conv2d {
    Tensor weight;  // (Co, Ci, Kh, Kw)
    Tensor bias;    // (Co)
};

struct Linear {
    Tensor weight;  // (out, in)
    Tensor bias;    // (out)
};

// Modulation kernels of one masked enhanced block. The z pair reads the
// resized conditioning latent, the m pair reads the resized mask.
struct MebParams {
    Conv2d gamma_z, beta_z;  // latent channels -> block channels, 3x3
    Conv2d gamma_m, beta_m;  // 1 -> block channels, 3x3
};

struct ResBlockParams {
    Conv2d conv1, conv2;  // 3x3, stride 1
    Conv2d skip;          // 1x1 projection, present only when channels change
    Linear emb;           // embedding vector -> per-channel bias
    bool has_skip() const { return skip.weight.size() > 0; }
};

// Denoiser parameters. Three downblocks at [c, 2c, 4c] with one MEB each,
// a middle block, mirrored upblocks with skip concatenation, and a shared
// timestep MLP plus prompt table feeding every residual block.
struct ToyUNetParams {
    UNetConfig config;
    Conv2d stem;  // 3 -> c
    ResBlockParams db1, db2, db3, mid, ub3, ub2, ub1;
    MebParams meb1, meb2, meb3;
    Conv2d down1, down2;  // stride-2 3x3
    Conv2d up1, up2;      // 3x3 after nearest 2x upsample
    Conv2d head;          // c -> 3, zero-initialized
    Linear mlp1, mlp2;    // timestep MLP
    Tensor prompt_table;  // (n_prompts + 1, emb_dim), row 0 fixed at zero
};

// Gradients mirror the parameter layout tensor for tensor.
using Gradients = ToyUNetParams;

ToyUNetParams init_params(const UNetConfig& cfg, std::uint64_t seed);
Gradients zeros_like(const ToyUNetParams& p);

// Walks every parameter tensor in a fixed order with a stable name; the
// order defines the checkpoint manifest and the optimizer state layout.
void for_each_param(ToyUNetParams& p,
                    const std::function<void(const std::string&, Tensor&)>& fn);
void for_each_param(const ToyUNetParams& p,
                    const std::function<void(const std::string&, const Tensor&)>& fn);
std::size_t count_params(const ToyUNetParams& p);

// Layer primitives. Activations are rank-3 (C, H, W); convolutions are
// zero-padded cross-correlations.
Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);
void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& grad_y, int stride, int pad,
                     Tensor* grad_x, Tensor& grad_w, Tensor& grad_b);

// Parameter-free per-channel normalization with variance floor 1e-5.
Tensor instance_norm(const Tensor& x);
Tensor instance_norm_forward(const Tensor& x, std::vector<double>& inv_std);
Tensor instance_norm_backward(const Tensor& y, const std::vector<double>& inv_std,
                              const Tensor& grad_y);

Tensor silu(const Tensor& x);
Tensor silu_backward(const Tensor& x, const Tensor& grad_y);

Tensor resize_bilinear(const Tensor& x, int out_h, int out_w);
Tensor resize_nearest(const Tensor& x, int out_h, int out_w);
Tensor upsample_nearest2(const Tensor& x);
Tensor upsample_nearest2_backward(const Tensor& grad_y);
Tensor concat_channels(const Tensor& a, const Tensor& b);

// One masked enhanced block: inner = gamma_z(z) * Norm(f) + beta_z(z),
// outer = gamma_m(M) * inner + beta_m(M), with optional residual adds
// around the block and both stages.
Tensor meb_modulate(const Tensor& f_prev, const Tensor& cond_latent, const Tensor& mask,
                    const MebParams& p, bool skips, bool mask_modulation);

Tensor sinusoidal_embed(int t, int dim);
Tensor timestep_embed(int t, const ToyUNetParams& p);
Tensor prompt_embed(int prompt_id, const Tensor& table);

struct UNetCond {
    Tensor cond_latent;  // (3, H, W), zeros in the holes
    Tensor mask;         // (1, H, W), values 0 or 1
    int prompt_id = 0;
};

// Forward-pass cache for the exact reverse sweep.
struct NormCache {
    Tensor y;
    std::vector<double> inv_std;
};

struct ResBlockCache {
    Tensor x;
    NormCache n1;
    Tensor a1;
    NormCache n2;
    Tensor m2;  // n2.y + embedding bias
    Tensor a2;
};

struct MebCache {
    Tensor f_prev;
    NormCache norm;
    Tensor z_r, m_r;  // resized conditions
    Tensor gz, gm;
    Tensor inner;
};

struct UNetActivations {
    int t = 0;
    int prompt_id = 0;
    Tensor sin_emb, mlp1_out, mlp1_act, e_raw, silu_e;
    Tensor z_in;
    ResBlockCache db1, db2, db3, mid, ub3, ub2, ub1;
    MebCache meb1, meb2, meb3;
    Tensor down1_in, down2_in;
    Tensor up1_up, up2_up;  // nearest-upsampled conv inputs
    NormCache head_norm;
    Tensor head_act;
};

Tensor unet_forward(const ToyUNetParams& p, const Tensor& z_t, int t, const UNetCond& cond);
Tensor unet_forward(const ToyUNetParams& p, const Tensor& z_t, int t, const UNetCond& cond,
                    UNetActivations& acts);

// Exact reverse-mode gradients of sum(grad_eps * eps_hat) with respect to
// every parameter; grad_eps is the loss gradient at the network output.
Gradients unet_backward(const ToyUNetParams& p, const UNetActivations& acts,
                        const Tensor& grad_eps);
void unet_backward_accumulate(const ToyUNetParams& p, const UNetActivations& acts,
                              const Tensor& grad_eps, Gradients& grads);

struct GradCheckReport {
    double max_rel_err = 0.0;
    int checks = 0;
};

// Central finite-difference check (h = 1e-5) of the full-network backward
// pass against an epsilon-MSE loss on random inputs at `size` x `size`.
// Samples `per_tensor` random elements from every parameter tensor; the
// relative error denominator is floored at 1e-5, the measurement limit of
// central differences in double precision, so structurally zero and
// noise-floor gradients compare absolutely.
GradCheckReport gradient_check(const UNetConfig& cfg, int prompt_id, std::uint64_t seed, int size,
                               int per_tensor);

}  // namespace cyclediff
