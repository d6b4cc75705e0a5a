// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "metaseg/rng.hpp"
#include "metaseg/tensor.hpp"

// Dense compute kernels for the graph primitives. All activations are
// rank-4 [C,D,H,W] row-major with W fastest; inner loops run along W so
// the hot paths reduce to contiguous axpy/dot and auto-vectorize.
namespace metaseg::kernels {

template <typename T>
void conv3d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int k, int pad,
                    Tensor<T>& out) {
    const int64_t ci_n = x.shape[0], D = x.shape[1], H = x.shape[2], W = x.shape[3];
    const int64_t co_n = w.shape[0];
    const int64_t Do = out.shape[1], Ho = out.shape[2], Wo = out.shape[3];
    for (int64_t co = 0; co < co_n; ++co)
        std::fill_n(out.data.data() + co * Do * Ho * Wo, Do * Ho * Wo, b[co]);
    for (int64_t co = 0; co < co_n; ++co) {
        for (int64_t ci = 0; ci < ci_n; ++ci) {
            const T* xin = x.data.data() + ci * D * H * W;
            T* o = out.data.data() + co * Do * Ho * Wo;
            const T* wk = w.data.data() + (co * ci_n + ci) * k * k * k;
            for (int kz = 0; kz < k; ++kz) {
                const int64_t zlo = std::max<int64_t>(0, pad - kz);
                const int64_t zhi = std::min<int64_t>(Do, D + pad - kz);
                for (int ky = 0; ky < k; ++ky) {
                    const int64_t ylo = std::max<int64_t>(0, pad - ky);
                    const int64_t yhi = std::min<int64_t>(Ho, H + pad - ky);
                    for (int kx = 0; kx < k; ++kx) {
                        const int64_t xlo = std::max<int64_t>(0, pad - kx);
                        const int64_t xhi = std::min<int64_t>(Wo, W + pad - kx);
                        if (xlo >= xhi) continue;
                        const T wv = wk[(kz * k + ky) * k + kx];
                        for (int64_t z = zlo; z < zhi; ++z) {
                            const int64_t zi = z + kz - pad;
                            for (int64_t y = ylo; y < yhi; ++y) {
                                const int64_t yi = y + ky - pad;
                                const T* __restrict__ ip =
                                    xin + (zi * H + yi) * W + (xlo + kx - pad);
                                T* __restrict__ op = o + (z * Ho + y) * Wo + xlo;
                                for (int64_t i = 0; i < xhi - xlo; ++i) op[i] += wv * ip[i];
                            }
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void conv3d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gout, int k,
                     int pad, Tensor<T>& gx, Tensor<T>& gw, Tensor<T>& gb) {
    const int64_t ci_n = x.shape[0], D = x.shape[1], H = x.shape[2], W = x.shape[3];
    const int64_t co_n = w.shape[0];
    const int64_t Do = gout.shape[1], Ho = gout.shape[2], Wo = gout.shape[3];
    for (int64_t co = 0; co < co_n; ++co) {
        const T* go = gout.data.data() + co * Do * Ho * Wo;
        T acc = 0;
        for (int64_t i = 0; i < Do * Ho * Wo; ++i) acc += go[i];
        gb[co] += acc;
    }
    for (int64_t co = 0; co < co_n; ++co) {
        const T* go = gout.data.data() + co * Do * Ho * Wo;
        for (int64_t ci = 0; ci < ci_n; ++ci) {
            const T* xin = x.data.data() + ci * D * H * W;
            T* gxc = gx.data.data() + ci * D * H * W;
            const T* wk = w.data.data() + (co * ci_n + ci) * k * k * k;
            T* gwk = gw.data.data() + (co * ci_n + ci) * k * k * k;
            for (int kz = 0; kz < k; ++kz) {
                const int64_t zlo = std::max<int64_t>(0, pad - kz);
                const int64_t zhi = std::min<int64_t>(Do, D + pad - kz);
                for (int ky = 0; ky < k; ++ky) {
                    const int64_t ylo = std::max<int64_t>(0, pad - ky);
                    const int64_t yhi = std::min<int64_t>(Ho, H + pad - ky);
                    for (int kx = 0; kx < k; ++kx) {
                        const int64_t xlo = std::max<int64_t>(0, pad - kx);
                        const int64_t xhi = std::min<int64_t>(Wo, W + pad - kx);
                        if (xlo >= xhi) continue;
                        const T wv = wk[(kz * k + ky) * k + kx];
                        T wacc = 0;
                        for (int64_t z = zlo; z < zhi; ++z) {
                            const int64_t zi = z + kz - pad;
                            for (int64_t y = ylo; y < yhi; ++y) {
                                const int64_t yi = y + ky - pad;
                                const T* __restrict__ ip =
                                    xin + (zi * H + yi) * W + (xlo + kx - pad);
                                T* __restrict__ gxp =
                                    gxc + (zi * H + yi) * W + (xlo + kx - pad);
                                const T* __restrict__ gop = go + (z * Ho + y) * Wo + xlo;
                                T dot = 0;
                                for (int64_t i = 0; i < xhi - xlo; ++i) {
                                    dot += gop[i] * ip[i];
                                    gxp[i] += wv * gop[i];
                                }
                                wacc += dot;
                            }
                        }
                        gwk[(kz * k + ky) * k + kx] += wacc;
                    }
                }
            }
        }
    }
}

template <typename T>
void conv_transpose3d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int k,
                              int s, Tensor<T>& out) {
    const int64_t ci_n = x.shape[0], D = x.shape[1], H = x.shape[2], W = x.shape[3];
    const int64_t co_n = out.shape[0], Do = out.shape[1], Ho = out.shape[2], Wo = out.shape[3];
    for (int64_t co = 0; co < co_n; ++co)
        std::fill_n(out.data.data() + co * Do * Ho * Wo, Do * Ho * Wo, b[co]);
    for (int64_t ci = 0; ci < ci_n; ++ci) {
        const T* xin = x.data.data() + ci * D * H * W;
        for (int64_t co = 0; co < co_n; ++co) {
            T* o = out.data.data() + co * Do * Ho * Wo;
            const T* wk = w.data.data() + (ci * co_n + co) * k * k * k;
            for (int kz = 0; kz < k; ++kz)
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx) {
                        const T wv = wk[(kz * k + ky) * k + kx];
                        for (int64_t z = 0; z < D; ++z)
                            for (int64_t y = 0; y < H; ++y) {
                                const T* ip = xin + (z * H + y) * W;
                                T* op = o + ((z * s + kz) * Ho + (y * s + ky)) * Wo + kx;
                                for (int64_t xx = 0; xx < W; ++xx) op[xx * s] += wv * ip[xx];
                            }
                    }
        }
    }
}

template <typename T>
void conv_transpose3d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gout,
                               int k, int s, Tensor<T>& gx, Tensor<T>& gw, Tensor<T>& gb) {
    const int64_t ci_n = x.shape[0], D = x.shape[1], H = x.shape[2], W = x.shape[3];
    const int64_t co_n = gout.shape[0], Do = gout.shape[1], Ho = gout.shape[2], Wo = gout.shape[3];
    for (int64_t co = 0; co < co_n; ++co) {
        const T* go = gout.data.data() + co * Do * Ho * Wo;
        T acc = 0;
        for (int64_t i = 0; i < Do * Ho * Wo; ++i) acc += go[i];
        gb[co] += acc;
    }
    for (int64_t ci = 0; ci < ci_n; ++ci) {
        const T* xin = x.data.data() + ci * D * H * W;
        T* gxc = gx.data.data() + ci * D * H * W;
        for (int64_t co = 0; co < co_n; ++co) {
            const T* go = gout.data.data() + co * Do * Ho * Wo;
            const T* wk = w.data.data() + (ci * co_n + co) * k * k * k;
            T* gwk = gw.data.data() + (ci * co_n + co) * k * k * k;
            for (int kz = 0; kz < k; ++kz)
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx) {
                        const T wv = wk[(kz * k + ky) * k + kx];
                        T wacc = 0;
                        for (int64_t z = 0; z < D; ++z)
                            for (int64_t y = 0; y < H; ++y) {
                                const T* ip = xin + (z * H + y) * W;
                                T* gxp = gxc + (z * H + y) * W;
                                const T* gop = go + ((z * s + kz) * Ho + (y * s + ky)) * Wo + kx;
                                for (int64_t xx = 0; xx < W; ++xx) {
                                    wacc += ip[xx] * gop[xx * s];
                                    gxp[xx] += wv * gop[xx * s];
                                }
                            }
                        gwk[(kz * k + ky) * k + kx] += wacc;
                    }
        }
    }
}

// argmax indices (linear within the input tensor) are recorded for backward;
// ties resolve to the first maximal element in scan order.
template <typename T>
void maxpool3d_forward(const Tensor<T>& x, int k, int s, Tensor<T>& out,
                       std::vector<int64_t>& argmax) {
    const int64_t C = x.shape[0], D = x.shape[1], H = x.shape[2], W = x.shape[3];
    const int64_t Do = out.shape[1], Ho = out.shape[2], Wo = out.shape[3];
    argmax.assign(static_cast<size_t>(out.numel()), 0);
    int64_t oi = 0;
    for (int64_t c = 0; c < C; ++c) {
        const T* xc = x.data.data() + c * D * H * W;
        for (int64_t z = 0; z < Do; ++z)
            for (int64_t y = 0; y < Ho; ++y)
                for (int64_t xx = 0; xx < Wo; ++xx, ++oi) {
                    T best{};
                    int64_t besti = -1;
                    for (int kz = 0; kz < k; ++kz)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                                const int64_t idx =
                                    ((z * s + kz) * H + (y * s + ky)) * W + (xx * s + kx);
                                const T v = xc[idx];
                                if (besti < 0 || v > best) {
                                    best = v;
                                    besti = idx;
                                }
                            }
                    out[oi] = best;
                    argmax[static_cast<size_t>(oi)] = c * D * H * W + besti;
                }
    }
}

template <typename T>
void maxpool3d_backward(const Tensor<T>& gout, const std::vector<int64_t>& argmax, Tensor<T>& gx) {
    for (int64_t i = 0; i < gout.numel(); ++i) gx[argmax[static_cast<size_t>(i)]] += gout[i];
}

template <typename T>
void relu_forward(const Tensor<T>& x, Tensor<T>& out) {
    for (int64_t i = 0; i < x.numel(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename T>
void relu_backward(const Tensor<T>& x, const Tensor<T>& gout, Tensor<T>& gx) {
    for (int64_t i = 0; i < x.numel(); ++i)
        if (x[i] > T(0)) gx[i] += gout[i];
}

// saved per group: mean, invstd
template <typename T>
void groupnorm_forward(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift,
                       int groups, double eps, Tensor<T>& out, std::vector<T>& saved) {
    const int64_t C = x.shape[0], S = x.shape[1] * x.shape[2] * x.shape[3];
    const int64_t cpg = C / groups;
    const int64_t m = cpg * S;
    saved.assign(static_cast<size_t>(2 * groups), T(0));
    for (int64_t g = 0; g < groups; ++g) {
        const T* xg = x.data.data() + g * cpg * S;
        double mean = 0;
        for (int64_t i = 0; i < m; ++i) mean += xg[i];
        mean /= static_cast<double>(m);
        double var = 0;
        for (int64_t i = 0; i < m; ++i) {
            const double d = xg[i] - mean;
            var += d * d;
        }
        var /= static_cast<double>(m);
        const T invstd = static_cast<T>(1.0 / std::sqrt(var + eps));
        saved[static_cast<size_t>(2 * g)] = static_cast<T>(mean);
        saved[static_cast<size_t>(2 * g + 1)] = invstd;
        for (int64_t cc = 0; cc < cpg; ++cc) {
            const int64_t c = g * cpg + cc;
            const T* xc = x.data.data() + c * S;
            T* oc = out.data.data() + c * S;
            const T a = scale[c] * invstd;
            const T b = shift[c] - a * static_cast<T>(mean);
            for (int64_t i = 0; i < S; ++i) oc[i] = a * xc[i] + b;
        }
    }
}

template <typename T>
void groupnorm_backward(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& gout,
                        int groups, const std::vector<T>& saved, Tensor<T>& gx, Tensor<T>& gscale,
                        Tensor<T>& gshift) {
    const int64_t C = x.shape[0], S = x.shape[1] * x.shape[2] * x.shape[3];
    const int64_t cpg = C / groups;
    const int64_t m = cpg * S;
    std::vector<T> xhat(static_cast<size_t>(m));
    for (int64_t g = 0; g < groups; ++g) {
        const T mean = saved[static_cast<size_t>(2 * g)];
        const T invstd = saved[static_cast<size_t>(2 * g + 1)];
        double sum_u = 0, sum_ux = 0;
        for (int64_t cc = 0; cc < cpg; ++cc) {
            const int64_t c = g * cpg + cc;
            const T* xc = x.data.data() + c * S;
            const T* gc = gout.data.data() + c * S;
            double dscale = 0, dshift = 0;
            for (int64_t i = 0; i < S; ++i) {
                const T xh = (xc[i] - mean) * invstd;
                xhat[static_cast<size_t>(cc * S + i)] = xh;
                const double u = static_cast<double>(gc[i]) * scale[c];
                dscale += static_cast<double>(gc[i]) * xh;
                dshift += gc[i];
                sum_u += u;
                sum_ux += u * xh;
            }
            gscale[c] += static_cast<T>(dscale);
            gshift[c] += static_cast<T>(dshift);
        }
        const T mean_u = static_cast<T>(sum_u / static_cast<double>(m));
        const T mean_ux = static_cast<T>(sum_ux / static_cast<double>(m));
        for (int64_t cc = 0; cc < cpg; ++cc) {
            const int64_t c = g * cpg + cc;
            const T* gc = gout.data.data() + c * S;
            T* gxc = gx.data.data() + c * S;
            const T sc = scale[c];
            for (int64_t i = 0; i < S; ++i) {
                const T u = gc[i] * sc;
                const T xh = xhat[static_cast<size_t>(cc * S + i)];
                gxc[i] += invstd * (u - mean_u - xh * mean_ux);
            }
        }
    }
}

// Inverted dropout: mask is 0 or 1/(1-p); pure function of the seed.
template <typename T>
void dropout_mask(int64_t n, double p, uint64_t seed, std::vector<T>& mask) {
    mask.resize(static_cast<size_t>(n));
    Rng rng(seed);
    const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
    for (int64_t i = 0; i < n; ++i)
        mask[static_cast<size_t>(i)] = rng.uniform() < p ? T(0) : keep_scale;
}

template <typename T>
void softmax_c_forward(const Tensor<T>& x, Tensor<T>& out) {
    const int64_t C = x.shape[0], S = x.shape[1] * x.shape[2] * x.shape[3];
    for (int64_t v = 0; v < S; ++v) {
        T mx = x[v];
        for (int64_t c = 1; c < C; ++c) mx = std::max(mx, x[c * S + v]);
        T denom = 0;
        for (int64_t c = 0; c < C; ++c) {
            const T e = std::exp(x[c * S + v] - mx);
            out[c * S + v] = e;
            denom += e;
        }
        for (int64_t c = 0; c < C; ++c) out[c * S + v] /= denom;
    }
}

template <typename T>
void softmax_c_backward(const Tensor<T>& probs, const Tensor<T>& gout, Tensor<T>& gx) {
    const int64_t C = probs.shape[0], S = probs.shape[1] * probs.shape[2] * probs.shape[3];
    for (int64_t v = 0; v < S; ++v) {
        T dot = 0;
        for (int64_t c = 0; c < C; ++c) dot += gout[c * S + v] * probs[c * S + v];
        for (int64_t c = 0; c < C; ++c)
            gx[c * S + v] += probs[c * S + v] * (gout[c * S + v] - dot);
    }
}

// Generalized Dice loss over the channel axis (class weights 1/(volume+eps)^2),
// with eps also added to the final denominator.
template <typename T>
struct GdlSaved {
    std::vector<double> w;
    double num = 0;
    double den = 0;
};

template <typename T>
double gdl_forward(const Tensor<T>& probs, const Tensor<T>& target, double eps, GdlSaved<T>& sv) {
    const int64_t C = probs.shape[0], S = probs.numel() / C;
    sv.w.assign(static_cast<size_t>(C), 0.0);
    double num = 0, den = 0;
    for (int64_t c = 0; c < C; ++c) {
        const T* p = probs.data.data() + c * S;
        const T* r = target.data.data() + c * S;
        double rsum = 0, rp = 0, psum = 0;
        for (int64_t i = 0; i < S; ++i) {
            rsum += r[i];
            psum += p[i];
            rp += static_cast<double>(r[i]) * p[i];
        }
        const double w = 1.0 / ((rsum + eps) * (rsum + eps));
        sv.w[static_cast<size_t>(c)] = w;
        num += w * rp;
        den += w * (rsum + psum);
    }
    sv.num = num;
    sv.den = den + eps;
    return 1.0 - 2.0 * num / sv.den;
}

template <typename T>
void gdl_backward(const Tensor<T>& target, const GdlSaved<T>& sv, T gout, Tensor<T>& gprobs) {
    const int64_t C = gprobs.shape[0], S = gprobs.numel() / C;
    const double inv_den = 1.0 / sv.den;
    for (int64_t c = 0; c < C; ++c) {
        const T* r = target.data.data() + c * S;
        T* gp = gprobs.data.data() + c * S;
        const double w = sv.w[static_cast<size_t>(c)];
        // d/dp of 2*num/den with den independent contribution folded in
        const double num_term = 2.0 * w * inv_den;
        const double den_term = 2.0 * sv.num * w * inv_den * inv_den;
        for (int64_t i = 0; i < S; ++i)
            gp[i] += gout * static_cast<T>(den_term - num_term * r[i]);
    }
}

} // namespace metaseg::kernels
