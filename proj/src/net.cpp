#include "cyclediff/net.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "cyclediff/rng.hpp"

namespace cyclediff {

namespace {

void require(bool ok, const char* msg) {
    if (!ok) throw DimensionError(msg);
}

// Valid output range [lo, hi] for one kernel tap: input index
// o*stride + k - pad must stay inside [0, extent).
void tap_range(int extent, int out_extent, int stride, int k, int pad, int& lo, int& hi) {
    const int shift = pad - k;
    lo = shift <= 0 ? 0 : (shift + stride - 1) / stride;
    const int top = extent - 1 - k + pad;
    hi = top < 0 ? -1 : top / stride;
    if (hi > out_extent - 1) hi = out_extent - 1;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Tensor linear_forward(const Linear& p, const Tensor& x) {
    const int out = p.weight.dim(0);
    const int in = p.weight.dim(1);
    require(static_cast<int>(x.size()) == in, "linear: input size mismatch");
    Tensor y({out});
    for (int o = 0; o < out; ++o) {
        const double* wrow = p.weight.data() + static_cast<std::size_t>(o) * in;
        double acc = p.bias[o];
        for (int i = 0; i < in; ++i) acc += wrow[i] * x[i];
        y[o] = acc;
    }
    return y;
}

void linear_backward_acc(const Linear& p, const Tensor& x, const Tensor& gy, Linear& g,
                         Tensor* gx) {
    const int out = p.weight.dim(0);
    const int in = p.weight.dim(1);
    for (int o = 0; o < out; ++o) {
        const double go = gy[o];
        g.bias[o] += go;
        double* gwrow = g.weight.data() + static_cast<std::size_t>(o) * in;
        for (int i = 0; i < in; ++i) gwrow[i] += go * x[i];
    }
    if (gx) {
        for (int o = 0; o < out; ++o) {
            const double go = gy[o];
            const double* wrow = p.weight.data() + static_cast<std::size_t>(o) * in;
            for (int i = 0; i < in; ++i) (*gx)[i] += go * wrow[i];
        }
    }
}

void conv_backward_acc(const Tensor& x, const Conv2d& p, const Tensor& gy, int stride, int pad,
                       Tensor* gx, Conv2d& g) {
    Tensor gw, gb;
    conv2d_backward(x, p.weight, gy, stride, pad, gx, gw, gb);
    add_inplace(g.weight, gw);
    add_inplace(g.bias, gb);
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
    Tensor y = x;
    const int c = x.dim(0);
    const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
    for (int ch = 0; ch < c; ++ch) {
        double* row = y.data() + ch * plane;
        const double b = bias[ch];
        for (std::size_t i = 0; i < plane; ++i) row[i] += b;
    }
    return y;
}

Tensor resblock_forward(const ResBlockParams& p, const Tensor& x, const Tensor& silu_e,
                        ResBlockCache& c) {
    c.x = x;
    Tensor n1 = instance_norm_forward(x, c.n1.inv_std);
    c.n1.y = n1;
    c.a1 = silu(n1);
    Tensor h1 = conv2d_forward(c.a1, p.conv1.weight, p.conv1.bias, 1, 1);
    Tensor n2 = instance_norm_forward(h1, c.n2.inv_std);
    c.n2.y = n2;
    const Tensor eb = linear_forward(p.emb, silu_e);
    c.m2 = add_channel_bias(n2, eb);
    c.a2 = silu(c.m2);
    Tensor h3 = conv2d_forward(c.a2, p.conv2.weight, p.conv2.bias, 1, 1);
    if (p.has_skip()) {
        Tensor sk = conv2d_forward(x, p.skip.weight, p.skip.bias, 1, 0);
        add_inplace(h3, sk);
    } else {
        add_inplace(h3, x);
    }
    return h3;
}

Tensor resblock_backward(const ResBlockParams& p, const ResBlockCache& c, const Tensor& silu_e,
                         const Tensor& g_out, ResBlockParams& g, Tensor& g_silu_e) {
    Tensor g_a2;
    conv_backward_acc(c.a2, p.conv2, g_out, 1, 1, &g_a2, g.conv2);
    const Tensor g_m2 = silu_backward(c.m2, g_a2);

    // Per-channel bias gradient plus the shared embedding-vector gradient.
    const int ch = g_m2.dim(0);
    const std::size_t plane = static_cast<std::size_t>(g_m2.dim(1)) * g_m2.dim(2);
    Tensor g_eb({ch});
    for (int cc = 0; cc < ch; ++cc) {
        const double* row = g_m2.data() + cc * plane;
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += row[i];
        g_eb[cc] = acc;
    }
    linear_backward_acc(p.emb, silu_e, g_eb, g.emb, &g_silu_e);

    const Tensor g_h1 = instance_norm_backward(c.n2.y, c.n2.inv_std, g_m2);
    Tensor g_a1;
    conv_backward_acc(c.a1, p.conv1, g_h1, 1, 1, &g_a1, g.conv1);
    const Tensor g_n1 = silu_backward(c.n1.y, g_a1);
    Tensor g_x = instance_norm_backward(c.n1.y, c.n1.inv_std, g_n1);

    if (p.has_skip()) {
        Tensor g_sk;
        conv_backward_acc(c.x, p.skip, g_out, 1, 0, &g_sk, g.skip);
        add_inplace(g_x, g_sk);
    } else {
        add_inplace(g_x, g_out);
    }
    return g_x;
}

Tensor meb_forward(const Tensor& f_prev, const Tensor& z_r, const Tensor& m_r,
                   const MebParams& p, bool skips, bool mask_mod, MebCache& c) {
    require(z_r.dim(1) == f_prev.dim(1) && z_r.dim(2) == f_prev.dim(2),
            "meb: conditioning latent resolution mismatch");
    require(m_r.dim(0) == 1 && m_r.dim(1) == f_prev.dim(1) && m_r.dim(2) == f_prev.dim(2),
            "meb: mask resolution mismatch");
    c.f_prev = f_prev;
    c.z_r = z_r;
    c.m_r = m_r;
    Tensor n = instance_norm_forward(f_prev, c.norm.inv_std);
    c.norm.y = n;
    c.gz = conv2d_forward(z_r, p.gamma_z.weight, p.gamma_z.bias, 1, 1);
    const Tensor bz = conv2d_forward(z_r, p.beta_z.weight, p.beta_z.bias, 1, 1);
    Tensor p1 = mul(c.gz, n);
    add_inplace(p1, bz);
    c.inner = skips ? add(n, p1) : p1;

    Tensor outer;
    if (mask_mod) {
        c.gm = conv2d_forward(m_r, p.gamma_m.weight, p.gamma_m.bias, 1, 1);
        const Tensor bm = conv2d_forward(m_r, p.beta_m.weight, p.beta_m.bias, 1, 1);
        Tensor p2 = mul(c.gm, c.inner);
        add_inplace(p2, bm);
        outer = skips ? add(c.inner, p2) : p2;
    } else {
        outer = c.inner;
    }
    return skips ? add(f_prev, outer) : outer;
}

Tensor meb_backward(const MebParams& p, const MebCache& c, bool skips, bool mask_mod,
                    const Tensor& g_out, MebParams& g) {
    Tensor g_fprev = skips ? g_out : Tensor::zeros(g_out.shape());
    const Tensor& g_outer = g_out;

    Tensor g_inner;
    if (mask_mod) {
        const Tensor& g_p2 = g_outer;
        g_inner = skips ? Tensor(g_outer) : Tensor::zeros(g_outer.shape());
        Tensor tmp = mul(g_p2, c.gm);
        add_inplace(g_inner, tmp);
        const Tensor g_gm = mul(g_p2, c.inner);
        conv_backward_acc(c.m_r, p.gamma_m, g_gm, 1, 1, nullptr, g.gamma_m);
        conv_backward_acc(c.m_r, p.beta_m, g_p2, 1, 1, nullptr, g.beta_m);
    } else {
        g_inner = g_outer;
    }

    const Tensor& g_p1 = g_inner;
    Tensor g_n = skips ? Tensor(g_inner) : Tensor::zeros(g_inner.shape());
    Tensor tmp = mul(g_p1, c.gz);
    add_inplace(g_n, tmp);
    const Tensor g_gz = mul(g_p1, c.norm.y);
    conv_backward_acc(c.z_r, p.gamma_z, g_gz, 1, 1, nullptr, g.gamma_z);
    conv_backward_acc(c.z_r, p.beta_z, g_p1, 1, 1, nullptr, g.beta_z);

    const Tensor g_from_norm = instance_norm_backward(c.norm.y, c.norm.inv_std, g_n);
    add_inplace(g_fprev, g_from_norm);
    return g_fprev;
}

Conv2d he_conv(int co, int ci, int k, Rng& rng) {
    Conv2d c;
    c.weight = Tensor({co, ci, k, k});
    const double std = std::sqrt(2.0 / (static_cast<double>(ci) * k * k));
    for (std::size_t i = 0; i < c.weight.size(); ++i) c.weight[i] = rng.normal() * std;
    c.bias = Tensor({co});
    return c;
}

Conv2d const_conv(int co, int ci, int k, double bias_value) {
    Conv2d c;
    c.weight = Tensor({co, ci, k, k});
    c.bias = Tensor::full({co}, bias_value);
    return c;
}

Linear he_linear(int out, int in, Rng& rng) {
    Linear l;
    l.weight = Tensor({out, in});
    const double std = std::sqrt(2.0 / in);
    for (std::size_t i = 0; i < l.weight.size(); ++i) l.weight[i] = rng.normal() * std;
    l.bias = Tensor({out});
    return l;
}

ResBlockParams make_resblock(int in, int out, int emb_dim, Rng& rng) {
    ResBlockParams r;
    r.conv1 = he_conv(out, in, 3, rng);
    r.conv2 = he_conv(out, out, 3, rng);
    if (in != out) r.skip = he_conv(out, in, 1, rng);
    r.emb = he_linear(out, emb_dim, rng);
    return r;
}

MebParams make_meb(int channels, Rng& rng) {
    (void)rng;
    MebParams m;
    m.gamma_z = const_conv(channels, 3, 3, 1.0);
    m.beta_z = const_conv(channels, 3, 3, 0.0);
    m.gamma_m = const_conv(channels, 1, 3, 1.0);
    m.beta_m = const_conv(channels, 1, 3, 0.0);
    return m;
}

void visit_conv(const std::string& name, Conv2d& c,
                const std::function<void(const std::string&, Tensor&)>& fn) {
    fn(name + ".w", c.weight);
    fn(name + ".b", c.bias);
}

void visit_linear(const std::string& name, Linear& l,
                  const std::function<void(const std::string&, Tensor&)>& fn) {
    fn(name + ".w", l.weight);
    fn(name + ".b", l.bias);
}

void visit_resblock(const std::string& name, ResBlockParams& r,
                    const std::function<void(const std::string&, Tensor&)>& fn) {
    visit_conv(name + ".c1", r.conv1, fn);
    visit_conv(name + ".c2", r.conv2, fn);
    if (r.has_skip()) visit_conv(name + ".sk", r.skip, fn);
    visit_linear(name + ".emb", r.emb, fn);
}

void visit_meb(const std::string& name, MebParams& m,
               const std::function<void(const std::string&, Tensor&)>& fn) {
    visit_conv(name + ".gz", m.gamma_z, fn);
    visit_conv(name + ".bz", m.beta_z, fn);
    visit_conv(name + ".gm", m.gamma_m, fn);
    visit_conv(name + ".bm", m.beta_m, fn);
}

}  // namespace

void UNetConfig::validate() const {
    if (base_channels < 1) throw ConfigError("base_channels must be positive");
    if (emb_dim < 2 || emb_dim % 2 != 0) throw ConfigError("emb_dim must be even and >= 2");
    if (n_prompts < 0) throw ConfigError("n_prompts must be non-negative");
}

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    require(x.rank() == 3, "conv2d: input must be (C, H, W)");
    require(w.rank() == 4, "conv2d: kernel must be (Co, Ci, Kh, Kw)");
    require(w.dim(1) == x.dim(0), "conv2d: channel mismatch");
    require(b.rank() == 1 && b.dim(0) == w.dim(0), "conv2d: bias shape mismatch");
    const int ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const int co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (wd + 2 * pad - kw) / stride + 1;
    require(oh >= 1 && ow >= 1, "conv2d: output collapses to zero size");

    Tensor y({co, oh, ow});
    const std::size_t oplane = static_cast<std::size_t>(oh) * ow;
    for (int oc = 0; oc < co; ++oc) {
        double* dst = y.data() + oc * oplane;
        const double bv = b[oc];
        for (std::size_t i = 0; i < oplane; ++i) dst[i] = bv;
    }
    for (int oc = 0; oc < co; ++oc) {
        for (int ic = 0; ic < ci; ++ic) {
            for (int ky = 0; ky < kh; ++ky) {
                int oy_lo, oy_hi;
                tap_range(h, oh, stride, ky, pad, oy_lo, oy_hi);
                for (int kx = 0; kx < kw; ++kx) {
                    const double wv =
                        w[((static_cast<std::size_t>(oc) * ci + ic) * kh + ky) * kw + kx];
                    int ox_lo, ox_hi;
                    tap_range(wd, ow, stride, kx, pad, ox_lo, ox_hi);
                    for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                        const int iy = oy * stride + ky - pad;
                        const double* xrow =
                            x.data() + (static_cast<std::size_t>(ic) * h + iy) * wd + kx - pad;
                        double* yrow = y.data() + (static_cast<std::size_t>(oc) * oh + oy) * ow;
                        if (stride == 1) {
                            for (int ox = ox_lo; ox <= ox_hi; ++ox) yrow[ox] += wv * xrow[ox];
                        } else {
                            for (int ox = ox_lo; ox <= ox_hi; ++ox)
                                yrow[ox] += wv * xrow[static_cast<std::size_t>(ox) * stride];
                        }
                    }
                }
            }
        }
    }
    return y;
}

void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& grad_y, int stride, int pad,
                     Tensor* grad_x, Tensor& grad_w, Tensor& grad_b) {
    const int ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const int co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int oh = grad_y.dim(1), ow = grad_y.dim(2);
    require(grad_y.dim(0) == co, "conv2d_backward: grad channel mismatch");

    grad_b = Tensor({co});
    const std::size_t oplane = static_cast<std::size_t>(oh) * ow;
    for (int oc = 0; oc < co; ++oc) {
        const double* g = grad_y.data() + oc * oplane;
        double acc = 0.0;
        for (std::size_t i = 0; i < oplane; ++i) acc += g[i];
        grad_b[oc] = acc;
    }

    grad_w = Tensor(w.shape());
    for (int oc = 0; oc < co; ++oc) {
        for (int ic = 0; ic < ci; ++ic) {
            for (int ky = 0; ky < kh; ++ky) {
                int oy_lo, oy_hi;
                tap_range(h, oh, stride, ky, pad, oy_lo, oy_hi);
                for (int kx = 0; kx < kw; ++kx) {
                    int ox_lo, ox_hi;
                    tap_range(wd, ow, stride, kx, pad, ox_lo, ox_hi);
                    double acc = 0.0;
                    for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                        const int iy = oy * stride + ky - pad;
                        const double* xrow =
                            x.data() + (static_cast<std::size_t>(ic) * h + iy) * wd + kx - pad;
                        const double* grow =
                            grad_y.data() + (static_cast<std::size_t>(oc) * oh + oy) * ow;
                        if (stride == 1) {
                            for (int ox = ox_lo; ox <= ox_hi; ++ox) acc += grow[ox] * xrow[ox];
                        } else {
                            for (int ox = ox_lo; ox <= ox_hi; ++ox)
                                acc += grow[ox] * xrow[static_cast<std::size_t>(ox) * stride];
                        }
                    }
                    grad_w[((static_cast<std::size_t>(oc) * ci + ic) * kh + ky) * kw + kx] = acc;
                }
            }
        }
    }

    if (grad_x) {
        *grad_x = Tensor(x.shape());
        for (int oc = 0; oc < co; ++oc) {
            for (int ic = 0; ic < ci; ++ic) {
                for (int ky = 0; ky < kh; ++ky) {
                    int oy_lo, oy_hi;
                    tap_range(h, oh, stride, ky, pad, oy_lo, oy_hi);
                    for (int kx = 0; kx < kw; ++kx) {
                        const double wv =
                            w[((static_cast<std::size_t>(oc) * ci + ic) * kh + ky) * kw + kx];
                        int ox_lo, ox_hi;
                        tap_range(wd, ow, stride, kx, pad, ox_lo, ox_hi);
                        for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                            const int iy = oy * stride + ky - pad;
                            double* xrow = grad_x->data() +
                                           (static_cast<std::size_t>(ic) * h + iy) * wd + kx - pad;
                            const double* grow =
                                grad_y.data() + (static_cast<std::size_t>(oc) * oh + oy) * ow;
                            if (stride == 1) {
                                for (int ox = ox_lo; ox <= ox_hi; ++ox) xrow[ox] += wv * grow[ox];
                            } else {
                                for (int ox = ox_lo; ox <= ox_hi; ++ox)
                                    xrow[static_cast<std::size_t>(ox) * stride] += wv * grow[ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

Tensor instance_norm(const Tensor& x) {
    std::vector<double> inv_std;
    return instance_norm_forward(x, inv_std);
}

Tensor instance_norm_forward(const Tensor& x, std::vector<double>& inv_std) {
    require(x.rank() == 3, "instance_norm: input must be (C, H, W)");
    const int c = x.dim(0);
    const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
    require(plane >= 2, "instance_norm: needs at least 2 spatial elements");
    constexpr double kEps = 1e-5;

    Tensor y(x.shape());
    inv_std.assign(static_cast<std::size_t>(c), 0.0);
    for (int ch = 0; ch < c; ++ch) {
        const double* src = x.data() + ch * plane;
        double* dst = y.data() + ch * plane;
        double mean = 0.0;
        for (std::size_t i = 0; i < plane; ++i) mean += src[i];
        mean /= static_cast<double>(plane);
        double var = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
            const double d = src[i] - mean;
            var += d * d;
        }
        var /= static_cast<double>(plane);
        const double is = 1.0 / std::sqrt(var + kEps);
        inv_std[static_cast<std::size_t>(ch)] = is;
        for (std::size_t i = 0; i < plane; ++i) dst[i] = (src[i] - mean) * is;
    }
    return y;
}

Tensor instance_norm_backward(const Tensor& y, const std::vector<double>& inv_std,
                              const Tensor& grad_y) {
    check_same_shape(y, grad_y, "instance_norm_backward");
    const int c = y.dim(0);
    const std::size_t plane = static_cast<std::size_t>(y.dim(1)) * y.dim(2);
    Tensor gx(y.shape());
    for (int ch = 0; ch < c; ++ch) {
        const double* yr = y.data() + ch * plane;
        const double* gr = grad_y.data() + ch * plane;
        double* dst = gx.data() + ch * plane;
        double mg = 0.0, mgy = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
            mg += gr[i];
            mgy += gr[i] * yr[i];
        }
        mg /= static_cast<double>(plane);
        mgy /= static_cast<double>(plane);
        const double is = inv_std[static_cast<std::size_t>(ch)];
        for (std::size_t i = 0; i < plane; ++i) dst[i] = is * (gr[i] - mg - yr[i] * mgy);
    }
    return gx;
}

Tensor silu(const Tensor& x) {
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * sigmoid(x[i]);
    return y;
}

Tensor silu_backward(const Tensor& x, const Tensor& grad_y) {
    check_same_shape(x, grad_y, "silu_backward");
    Tensor gx(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double s = sigmoid(x[i]);
        gx[i] = grad_y[i] * s * (1.0 + x[i] * (1.0 - s));
    }
    return gx;
}

Tensor resize_bilinear(const Tensor& x, int out_h, int out_w) {
    require(x.rank() == 3 && out_h >= 1 && out_w >= 1, "resize_bilinear: bad arguments");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (out_h == h && out_w == w) return x;
    Tensor y({c, out_h, out_w});
    const double sy = static_cast<double>(h) / out_h;
    const double sx = static_cast<double>(w) / out_w;
    for (int oy = 0; oy < out_h; ++oy) {
        double fy = (oy + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        fy -= y0;
        if (y0 < 0) {
            y0 = 0;
            fy = 0.0;
        }
        if (y0 > h - 1) {
            y0 = h - 1;
            fy = 0.0;
        }
        const int y1 = y0 + 1 < h ? y0 + 1 : h - 1;
        for (int ox = 0; ox < out_w; ++ox) {
            double fx = (ox + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            fx -= x0;
            if (x0 < 0) {
                x0 = 0;
                fx = 0.0;
            }
            if (x0 > w - 1) {
                x0 = w - 1;
                fx = 0.0;
            }
            const int x1 = x0 + 1 < w ? x0 + 1 : w - 1;
            for (int ch = 0; ch < c; ++ch) {
                const double a = x.at(ch, y0, x0), bb = x.at(ch, y0, x1);
                const double cc = x.at(ch, y1, x0), d = x.at(ch, y1, x1);
                y.at(ch, oy, ox) = (1 - fy) * ((1 - fx) * a + fx * bb) +
                                   fy * ((1 - fx) * cc + fx * d);
            }
        }
    }
    return y;
}

Tensor resize_nearest(const Tensor& x, int out_h, int out_w) {
    require(x.rank() == 3 && out_h >= 1 && out_w >= 1, "resize_nearest: bad arguments");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (out_h == h && out_w == w) return x;
    Tensor y({c, out_h, out_w});
    const double sy = static_cast<double>(h) / out_h;
    const double sx = static_cast<double>(w) / out_w;
    for (int oy = 0; oy < out_h; ++oy) {
        int iy = static_cast<int>(std::floor((oy + 0.5) * sy));
        iy = iy < 0 ? 0 : (iy > h - 1 ? h - 1 : iy);
        for (int ox = 0; ox < out_w; ++ox) {
            int ix = static_cast<int>(std::floor((ox + 0.5) * sx));
            ix = ix < 0 ? 0 : (ix > w - 1 ? w - 1 : ix);
            for (int ch = 0; ch < c; ++ch) y.at(ch, oy, ox) = x.at(ch, iy, ix);
        }
    }
    return y;
}

Tensor upsample_nearest2(const Tensor& x) {
    require(x.rank() == 3, "upsample_nearest2: input must be (C, H, W)");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor y({c, 2 * h, 2 * w});
    for (int ch = 0; ch < c; ++ch)
        for (int iy = 0; iy < h; ++iy)
            for (int ix = 0; ix < w; ++ix) {
                const double v = x.at(ch, iy, ix);
                y.at(ch, 2 * iy, 2 * ix) = v;
                y.at(ch, 2 * iy, 2 * ix + 1) = v;
                y.at(ch, 2 * iy + 1, 2 * ix) = v;
                y.at(ch, 2 * iy + 1, 2 * ix + 1) = v;
            }
    return y;
}

Tensor upsample_nearest2_backward(const Tensor& grad_y) {
    require(grad_y.rank() == 3 && grad_y.dim(1) % 2 == 0 && grad_y.dim(2) % 2 == 0,
            "upsample_nearest2_backward: grad must have even spatial size");
    const int c = grad_y.dim(0), h = grad_y.dim(1) / 2, w = grad_y.dim(2) / 2;
    Tensor gx({c, h, w});
    for (int ch = 0; ch < c; ++ch)
        for (int iy = 0; iy < h; ++iy)
            for (int ix = 0; ix < w; ++ix)
                gx.at(ch, iy, ix) = grad_y.at(ch, 2 * iy, 2 * ix) +
                                    grad_y.at(ch, 2 * iy, 2 * ix + 1) +
                                    grad_y.at(ch, 2 * iy + 1, 2 * ix) +
                                    grad_y.at(ch, 2 * iy + 1, 2 * ix + 1);
    return gx;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    require(a.rank() == 3 && b.rank() == 3 && a.dim(1) == b.dim(1) && a.dim(2) == b.dim(2),
            "concat_channels: spatial sizes differ");
    Tensor y({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
    std::memcpy(y.data(), a.data(), a.size() * sizeof(double));
    std::memcpy(y.data() + a.size(), b.data(), b.size() * sizeof(double));
    return y;
}

Tensor meb_modulate(const Tensor& f_prev, const Tensor& cond_latent, const Tensor& mask,
                    const MebParams& p, bool skips, bool mask_modulation) {
    MebCache cache;
    return meb_forward(f_prev, cond_latent, mask, p, skips, mask_modulation, cache);
}

Tensor sinusoidal_embed(int t, int dim) {
    if (t < 1) throw ConfigError("sinusoidal_embed: t must be >= 1");
    if (dim < 2 || dim % 2 != 0) throw ConfigError("sinusoidal_embed: dim must be even");
    const int half = dim / 2;
    Tensor e({dim});
    for (int i = 0; i < half; ++i) {
        const double exponent = half > 1 ? static_cast<double>(i) / (half - 1) : 0.0;
        const double freq = std::exp(-std::log(10000.0) * exponent);
        e[i] = std::sin(t * freq);
        e[half + i] = std::cos(t * freq);
    }
    return e;
}

Tensor timestep_embed(int t, const ToyUNetParams& p) {
    const Tensor s = sinusoidal_embed(t, p.config.emb_dim);
    return linear_forward(p.mlp2, silu(linear_forward(p.mlp1, s)));
}

Tensor prompt_embed(int prompt_id, const Tensor& table) {
    if (prompt_id < 0 || prompt_id >= table.dim(0))
        throw ConfigError("prompt_embed: prompt id out of range");
    const int dim = table.dim(1);
    Tensor e({dim});
    if (prompt_id == 0) return e;  // blank prompt is structurally zero
    const double* row = table.data() + static_cast<std::size_t>(prompt_id) * dim;
    for (int i = 0; i < dim; ++i) e[i] = row[i];
    return e;
}

ToyUNetParams init_params(const UNetConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    const int c = cfg.base_channels;
    ToyUNetParams p;
    p.config = cfg;
    p.stem = he_conv(c, 3, 3, rng);
    p.db1 = make_resblock(c, c, cfg.emb_dim, rng);
    p.meb1 = make_meb(c, rng);
    p.down1 = he_conv(2 * c, c, 3, rng);
    p.db2 = make_resblock(2 * c, 2 * c, cfg.emb_dim, rng);
    p.meb2 = make_meb(2 * c, rng);
    p.down2 = he_conv(4 * c, 2 * c, 3, rng);
    p.db3 = make_resblock(4 * c, 4 * c, cfg.emb_dim, rng);
    p.meb3 = make_meb(4 * c, rng);
    p.mid = make_resblock(4 * c, 4 * c, cfg.emb_dim, rng);
    p.ub3 = make_resblock(8 * c, 4 * c, cfg.emb_dim, rng);
    p.up1 = he_conv(2 * c, 4 * c, 3, rng);
    p.ub2 = make_resblock(4 * c, 2 * c, cfg.emb_dim, rng);
    p.up2 = he_conv(c, 2 * c, 3, rng);
    p.ub1 = make_resblock(2 * c, c, cfg.emb_dim, rng);
    p.head = const_conv(3, c, 3, 0.0);  // zero start: the first prediction is 0
    p.mlp1 = he_linear(cfg.emb_dim, cfg.emb_dim, rng);
    p.mlp2 = he_linear(cfg.emb_dim, cfg.emb_dim, rng);
    p.prompt_table = Tensor({cfg.n_prompts + 1, cfg.emb_dim});
    for (int r = 1; r <= cfg.n_prompts; ++r)
        for (int i = 0; i < cfg.emb_dim; ++i)
            p.prompt_table[static_cast<std::size_t>(r) * cfg.emb_dim + i] = rng.normal() * 0.1;
    return p;
}

Gradients zeros_like(const ToyUNetParams& p) {
    Gradients g = p;
    for_each_param(g, [](const std::string&, Tensor& t) { t.fill(0.0); });
    return g;
}

void for_each_param(ToyUNetParams& p,
                    const std::function<void(const std::string&, Tensor&)>& fn) {
    visit_conv("stem", p.stem, fn);
    visit_resblock("db1", p.db1, fn);
    visit_meb("meb1", p.meb1, fn);
    visit_conv("down1", p.down1, fn);
    visit_resblock("db2", p.db2, fn);
    visit_meb("meb2", p.meb2, fn);
    visit_conv("down2", p.down2, fn);
    visit_resblock("db3", p.db3, fn);
    visit_meb("meb3", p.meb3, fn);
    visit_resblock("mid", p.mid, fn);
    visit_resblock("ub3", p.ub3, fn);
    visit_conv("up1", p.up1, fn);
    visit_resblock("ub2", p.ub2, fn);
    visit_conv("up2", p.up2, fn);
    visit_resblock("ub1", p.ub1, fn);
    visit_conv("head", p.head, fn);
    visit_linear("mlp1", p.mlp1, fn);
    visit_linear("mlp2", p.mlp2, fn);
    fn("prompt_table", p.prompt_table);
}

void for_each_param(const ToyUNetParams& p,
                    const std::function<void(const std::string&, const Tensor&)>& fn) {
    for_each_param(const_cast<ToyUNetParams&>(p),
                   [&](const std::string& name, Tensor& t) { fn(name, t); });
}

std::size_t count_params(const ToyUNetParams& p) {
    std::size_t n = 0;
    for_each_param(p, [&](const std::string&, const Tensor& t) { n += t.size(); });
    return n;
}

Tensor unet_forward(const ToyUNetParams& p, const Tensor& z_t, int t, const UNetCond& cond) {
    UNetActivations acts;
    return unet_forward(p, z_t, t, cond, acts);
}

Tensor unet_forward(const ToyUNetParams& p, const Tensor& z_t, int t, const UNetCond& cond,
                    UNetActivations& acts) {
    require(z_t.rank() == 3 && z_t.dim(0) == 3, "unet: z_t must be (3, H, W)");
    const int h = z_t.dim(1), w = z_t.dim(2);
    require(h % 4 == 0 && w % 4 == 0 && h >= 8 && w >= 8,
            "unet: spatial size must be a multiple of 4 and at least 8");
    require(cond.cond_latent.same_shape(z_t), "unet: cond_latent shape mismatch");
    require(cond.mask.rank() == 3 && cond.mask.dim(0) == 1 && cond.mask.dim(1) == h &&
                cond.mask.dim(2) == w,
            "unet: mask shape mismatch");
    if (cond.prompt_id < 0 || cond.prompt_id > p.config.n_prompts)
        throw ConfigError("unet: prompt id out of range");

    const bool skips = p.config.meb_skips;
    const bool mm = p.config.mask_modulation;

    acts.t = t;
    acts.prompt_id = cond.prompt_id;
    acts.sin_emb = sinusoidal_embed(t, p.config.emb_dim);
    acts.mlp1_out = linear_forward(p.mlp1, acts.sin_emb);
    acts.mlp1_act = silu(acts.mlp1_out);
    acts.e_raw = linear_forward(p.mlp2, acts.mlp1_act);
    add_inplace(acts.e_raw, prompt_embed(cond.prompt_id, p.prompt_table));
    acts.silu_e = silu(acts.e_raw);

    acts.z_in = z_t;
    const Tensor s0 = conv2d_forward(z_t, p.stem.weight, p.stem.bias, 1, 1);

    const Tensor d1 = resblock_forward(p.db1, s0, acts.silu_e, acts.db1);
    const Tensor f1 = meb_forward(d1, cond.cond_latent, cond.mask, p.meb1, skips, mm, acts.meb1);
    acts.down1_in = f1;
    const Tensor t1 = conv2d_forward(f1, p.down1.weight, p.down1.bias, 2, 1);

    const Tensor z2 = resize_bilinear(cond.cond_latent, h / 2, w / 2);
    const Tensor m2 = resize_nearest(cond.mask, h / 2, w / 2);
    const Tensor d2 = resblock_forward(p.db2, t1, acts.silu_e, acts.db2);
    const Tensor f2 = meb_forward(d2, z2, m2, p.meb2, skips, mm, acts.meb2);
    acts.down2_in = f2;
    const Tensor t2 = conv2d_forward(f2, p.down2.weight, p.down2.bias, 2, 1);

    const Tensor z4 = resize_bilinear(cond.cond_latent, h / 4, w / 4);
    const Tensor m4 = resize_nearest(cond.mask, h / 4, w / 4);
    const Tensor d3 = resblock_forward(p.db3, t2, acts.silu_e, acts.db3);
    const Tensor f3 = meb_forward(d3, z4, m4, p.meb3, skips, mm, acts.meb3);

    const Tensor mo = resblock_forward(p.mid, f3, acts.silu_e, acts.mid);
    const Tensor u3 = resblock_forward(p.ub3, concat_channels(mo, f3), acts.silu_e, acts.ub3);

    acts.up1_up = upsample_nearest2(u3);
    const Tensor q1 = conv2d_forward(acts.up1_up, p.up1.weight, p.up1.bias, 1, 1);
    const Tensor u2 = resblock_forward(p.ub2, concat_channels(q1, f2), acts.silu_e, acts.ub2);

    acts.up2_up = upsample_nearest2(u2);
    const Tensor q2 = conv2d_forward(acts.up2_up, p.up2.weight, p.up2.bias, 1, 1);
    const Tensor u1 = resblock_forward(p.ub1, concat_channels(q2, f1), acts.silu_e, acts.ub1);

    const Tensor hn = instance_norm_forward(u1, acts.head_norm.inv_std);
    acts.head_norm.y = hn;
    acts.head_act = silu(hn);
    return conv2d_forward(acts.head_act, p.head.weight, p.head.bias, 1, 1);
}

namespace {

// Splits the gradient of concat_channels(a, b) back into its two parts.
void split_channels(const Tensor& g, int ca, Tensor& ga, Tensor& gb) {
    const int h = g.dim(1), w = g.dim(2);
    const int cb = g.dim(0) - ca;
    ga = Tensor({ca, h, w});
    gb = Tensor({cb, h, w});
    std::memcpy(ga.data(), g.data(), ga.size() * sizeof(double));
    std::memcpy(gb.data(), g.data() + ga.size(), gb.size() * sizeof(double));
}

}  // namespace

void unet_backward_accumulate(const ToyUNetParams& p, const UNetActivations& acts,
                              const Tensor& grad_eps, Gradients& g) {
    const bool skips = p.config.meb_skips;
    const bool mm = p.config.mask_modulation;
    const int c = p.config.base_channels;

    Tensor g_silu_e({p.config.emb_dim});

    Tensor g_ha;
    conv_backward_acc(acts.head_act, p.head, grad_eps, 1, 1, &g_ha, g.head);
    const Tensor g_hn = silu_backward(acts.head_norm.y, g_ha);
    const Tensor g_u1 = instance_norm_backward(acts.head_norm.y, acts.head_norm.inv_std, g_hn);

    const Tensor g_cat1 = resblock_backward(p.ub1, acts.ub1, acts.silu_e, g_u1, g.ub1, g_silu_e);
    Tensor g_q2, g_f1;
    split_channels(g_cat1, c, g_q2, g_f1);

    Tensor g_up2_up;
    conv_backward_acc(acts.up2_up, p.up2, g_q2, 1, 1, &g_up2_up, g.up2);
    const Tensor g_u2 = upsample_nearest2_backward(g_up2_up);

    const Tensor g_cat2 = resblock_backward(p.ub2, acts.ub2, acts.silu_e, g_u2, g.ub2, g_silu_e);
    Tensor g_q1, g_f2;
    split_channels(g_cat2, 2 * c, g_q1, g_f2);

    Tensor g_up1_up;
    conv_backward_acc(acts.up1_up, p.up1, g_q1, 1, 1, &g_up1_up, g.up1);
    const Tensor g_u3 = upsample_nearest2_backward(g_up1_up);

    const Tensor g_cat3 = resblock_backward(p.ub3, acts.ub3, acts.silu_e, g_u3, g.ub3, g_silu_e);
    Tensor g_mo, g_f3;
    split_channels(g_cat3, 4 * c, g_mo, g_f3);

    const Tensor g_f3_mid = resblock_backward(p.mid, acts.mid, acts.silu_e, g_mo, g.mid, g_silu_e);
    add_inplace(g_f3, g_f3_mid);

    const Tensor g_d3 = meb_backward(p.meb3, acts.meb3, skips, mm, g_f3, g.meb3);
    const Tensor g_t2 = resblock_backward(p.db3, acts.db3, acts.silu_e, g_d3, g.db3, g_silu_e);

    Tensor g_f2_down;
    conv_backward_acc(acts.down2_in, p.down2, g_t2, 2, 1, &g_f2_down, g.down2);
    add_inplace(g_f2, g_f2_down);

    const Tensor g_d2 = meb_backward(p.meb2, acts.meb2, skips, mm, g_f2, g.meb2);
    const Tensor g_t1 = resblock_backward(p.db2, acts.db2, acts.silu_e, g_d2, g.db2, g_silu_e);

    Tensor g_f1_down;
    conv_backward_acc(acts.down1_in, p.down1, g_t1, 2, 1, &g_f1_down, g.down1);
    add_inplace(g_f1, g_f1_down);

    const Tensor g_d1 = meb_backward(p.meb1, acts.meb1, skips, mm, g_f1, g.meb1);
    const Tensor g_s0 = resblock_backward(p.db1, acts.db1, acts.silu_e, g_d1, g.db1, g_silu_e);

    conv_backward_acc(acts.z_in, p.stem, g_s0, 1, 1, nullptr, g.stem);

    // Embedding chain: silu over e_raw, then the prompt row and the MLP.
    const Tensor g_e = silu_backward(acts.e_raw, g_silu_e);
    if (acts.prompt_id > 0) {
        const int dim = p.config.emb_dim;
        double* row = g.prompt_table.data() + static_cast<std::size_t>(acts.prompt_id) * dim;
        for (int i = 0; i < dim; ++i) row[i] += g_e[i];
    }
    Tensor g_mlp1_act({p.config.emb_dim});
    linear_backward_acc(p.mlp2, acts.mlp1_act, g_e, g.mlp2, &g_mlp1_act);
    const Tensor g_mlp1_out = silu_backward(acts.mlp1_out, g_mlp1_act);
    linear_backward_acc(p.mlp1, acts.sin_emb, g_mlp1_out, g.mlp1, nullptr);
}

Gradients unet_backward(const ToyUNetParams& p, const UNetActivations& acts,
                        const Tensor& grad_eps) {
    Gradients g = zeros_like(p);
    unet_backward_accumulate(p, acts, grad_eps, g);
    return g;
}

GradCheckReport gradient_check(const UNetConfig& cfg, int prompt_id, std::uint64_t seed, int size,
                               int per_tensor) {
    cfg.validate();
    if (size < 8 || size % 4 != 0)
        throw ConfigError("gradient_check: size must be a multiple of 4 and >= 8");
    if (per_tensor < 1) throw ConfigError("gradient_check: per_tensor must be >= 1");
    if (prompt_id < 0 || prompt_id > cfg.n_prompts)
        throw ConfigError("gradient_check: prompt id out of range");

    ToyUNetParams params = init_params(cfg, seed);
    Rng rng = Rng::derive(seed, streams::kInit, 0xfd);
    // Shake every tensor off the structured init (zero head, unit gammas);
    // at the exact init the zero head weights would block gradient flow to
    // everything upstream and the check would be vacuous.
    for_each_param(params, [&](const std::string&, Tensor& t) {
        for (std::size_t i = 0; i < t.size(); ++i) t[i] += 0.05 * rng.normal();
    });

    UNetCond cond;
    cond.mask = Tensor({1, size, size});
    for (std::size_t i = 0; i < cond.mask.size(); ++i)
        cond.mask[i] = rng.uniform() < 0.7 ? 1.0 : 0.0;
    cond.cond_latent = Tensor::randn({3, size, size}, rng);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x)
                if (cond.mask.at(0, y, x) == 0.0) cond.cond_latent.at(c, y, x) = 0.0;
    cond.prompt_id = prompt_id;

    const int t = 7;
    const Tensor z_t = Tensor::randn({3, size, size}, rng);
    const Tensor eps_target = Tensor::randn({3, size, size}, rng);
    const double inv_n = 1.0 / static_cast<double>(z_t.size());

    const auto loss_at = [&]() {
        const Tensor out = unet_forward(params, z_t, t, cond);
        double acc = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) {
            const double d = out[i] - eps_target[i];
            acc += d * d;
        }
        return acc * inv_n;
    };

    UNetActivations acts;
    const Tensor out = unet_forward(params, z_t, t, cond, acts);
    Tensor grad_eps(out.shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        grad_eps[i] = 2.0 * (out[i] - eps_target[i]) * inv_n;
    const Gradients grads = unet_backward(params, acts, grad_eps);

    std::vector<Tensor*> param_tensors;
    for_each_param(params, [&](const std::string&, Tensor& t2) { param_tensors.push_back(&t2); });
    std::vector<const Tensor*> grad_tensors;
    for_each_param(grads,
                   [&](const std::string&, const Tensor& t2) { grad_tensors.push_back(&t2); });

    const double h = 1e-5;
    GradCheckReport report;
    Rng pick = Rng::derive(seed, streams::kInit, 0xfe);
    for (std::size_t k = 0; k < param_tensors.size(); ++k) {
        Tensor& pt = *param_tensors[k];
        const Tensor& gt = *grad_tensors[k];
        for (int c = 0; c < per_tensor; ++c) {
            const std::size_t i = static_cast<std::size_t>(
                pick.uniform_int(0, static_cast<int>(pt.size()) - 1));
            const double orig = pt[i];
            pt[i] = orig + h;
            const double f_plus = loss_at();
            pt[i] = orig - h;
            const double f_minus = loss_at();
            pt[i] = orig;
            const double fd = (f_plus - f_minus) / (2.0 * h);
            const double an = gt[i];
            // The denominator floor is the resolution limit of central
            // differences at h = 1e-5 on an O(1) loss: the two evaluations
            // cancel to ~1e-10 in fd units, so gradients below ~1e-5 are
            // compared absolutely (to 1e-9) rather than relatively.
            const double rel =
                std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-5});
            if (rel > report.max_rel_err) report.max_rel_err = rel;
            ++report.checks;
        }
    }
    return report;
}

}  // namespace cyclediff
