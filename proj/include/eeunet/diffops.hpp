#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "eeunet/error.hpp"
#include "eeunet/tensor.hpp"

namespace eeunet::nn {

// A named learnable array plus its gradient accumulator. grad_seen tracks
// whether backward ever wrote this accumulator in the current step, which is
// what separates "legitimately zero gradient" from "dead subgraph".
template <typename T>
struct ParamTensor {
    std::string name;
    Tensor4<T> value;
    Tensor4<T> grad;
    bool learnable = true;
    bool grad_seen = false;

    ParamTensor() = default;
    ParamTensor(std::string name_, Tensor4<T> value_, bool learnable_ = true)
        : name(std::move(name_)),
          value(std::move(value_)),
          grad(value.n, value.c, value.h, value.w),
          learnable(learnable_) {}

    void zero_grad() {
        grad.fill(T(0));
        grad_seen = false;
    }

    void accumulate(const Tensor4<T>& g) {
        if (!g.same_shape(grad)) throw ShapeMismatch("gradient shape mismatch for " + name);
        for (size_t i = 0; i < grad.data.size(); ++i) grad.data[i] += g.data[i];
        grad_seen = true;
    }
};

inline int conv_out_dim(int in, int k, int stride, int pad) {
    int span = in + 2 * pad - k;
    if (span < 0 || span % stride != 0)
        throw ShapeMismatch("conv output dim not integral: in=" + std::to_string(in) + " k=" +
                            std::to_string(k) + " stride=" + std::to_string(stride) + " pad=" +
                            std::to_string(pad));
    return span / stride + 1;
}

// -------------------------------------------------------------------------
// conv2d: cross-correlation semantics (no kernel flip). Weight layout is
// (Cout, Cin, kh, kw); bias, when present, is (Cout,1,1,1).

template <typename T>
Tensor4<T> conv2d_forward(const Tensor4<T>& x, const Tensor4<T>& w, const Tensor4<T>* b, int stride,
                          int pad) {
    if (w.c != x.c) throw ShapeMismatch("conv2d: kernel Cin " + std::to_string(w.c) +
                                        " != input channels " + std::to_string(x.c));
    if (b && (b->n != w.n || b->size() != static_cast<size_t>(w.n)))
        throw ShapeMismatch("conv2d: bias length != Cout");
    const int oh = conv_out_dim(x.h, w.h, stride, pad);
    const int ow = conv_out_dim(x.w, w.w, stride, pad);
    Tensor4<T> y(x.n, w.n, oh, ow);

    parallel_for(static_cast<int64_t>(x.n) * w.n, [&](int64_t task) {
        const int in = static_cast<int>(task / w.n);
        const int co = static_cast<int>(task % w.n);
        T* yp = y.plane(in, co);
        if (b) {
            T bv = b->data[static_cast<size_t>(co)];
            for (int i = 0; i < oh * ow; ++i) yp[i] = bv;
        }
        for (int ci = 0; ci < x.c; ++ci) {
            const T* xp = x.plane(in, ci);
            for (int kh = 0; kh < w.h; ++kh)
                for (int kw = 0; kw < w.w; ++kw) {
                    const T wv = w.at(co, ci, kh, kw);
                    if (wv == T(0)) continue;
                    for (int r = 0; r < oh; ++r) {
                        const int ih = r * stride - pad + kh;
                        if (ih < 0 || ih >= x.h) continue;
                        const T* xrow = xp + static_cast<size_t>(ih) * x.w;
                        T* yrow = yp + static_cast<size_t>(r) * ow;
                        // column bounds where iw = c*stride - pad + kw stays inside
                        int c_lo = 0;
                        if (pad - kw > 0) c_lo = (pad - kw + stride - 1) / stride;
                        int c_hi = std::min(ow, (x.w - 1 - kw + pad) / stride + 1);
                        for (int c = c_lo; c < c_hi; ++c) yrow[c] += wv * xrow[c * stride - pad + kw];
                    }
                }
        }
    });
    check_finite(y, "conv2d");
    return y;
}

template <typename T>
struct ConvGrads {
    Tensor4<T> dx, dw, db;
};

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor4<T>& x, const Tensor4<T>& w, const Tensor4<T>& dy, int stride,
                             int pad) {
    const int oh = conv_out_dim(x.h, w.h, stride, pad);
    const int ow = conv_out_dim(x.w, w.w, stride, pad);
    if (dy.n != x.n || dy.c != w.n || dy.h != oh || dy.w != ow)
        throw ShapeMismatch("conv2d_backward: dy shape " + dy.shape_str());

    ConvGrads<T> g{Tensor4<T>(x.n, x.c, x.h, x.w), Tensor4<T>(w.n, w.c, w.h, w.w),
                   Tensor4<T>(w.n, 1, 1, 1)};

    // dx: each (n, ci) plane is owned by one task; the kw scatter below stays
    // inside that plane, so the parallel partition is write-disjoint.
    parallel_for(static_cast<int64_t>(x.n) * x.c, [&](int64_t task) {
        const int in = static_cast<int>(task / x.c);
        const int ci = static_cast<int>(task % x.c);
        T* dxp = g.dx.plane(in, ci);
        for (int co = 0; co < w.n; ++co) {
            const T* dyp = dy.plane(in, co);
            for (int kh = 0; kh < w.h; ++kh)
                for (int kw = 0; kw < w.w; ++kw) {
                    const T wv = w.at(co, ci, kh, kw);
                    if (wv == T(0)) continue;
                    for (int r = 0; r < oh; ++r) {
                        const int ih = r * stride - pad + kh;
                        if (ih < 0 || ih >= x.h) continue;
                        T* dxrow = dxp + static_cast<size_t>(ih) * x.w;
                        const T* dyrow = dyp + static_cast<size_t>(r) * ow;
                        int c_lo = 0;
                        if (pad - kw > 0) c_lo = (pad - kw + stride - 1) / stride;
                        int c_hi = std::min(ow, (x.w - 1 - kw + pad) / stride + 1);
                        for (int c = c_lo; c < c_hi; ++c) dxrow[c * stride - pad + kw] += wv * dyrow[c];
                    }
                }
        }
    });

    // dw and db: one task per output channel.
    parallel_for(w.n, [&](int64_t co64) {
        const int co = static_cast<int>(co64);
        double db_acc = 0;
        for (int in = 0; in < x.n; ++in) {
            const T* dyp = dy.plane(in, co);
            for (int i = 0; i < oh * ow; ++i) db_acc += static_cast<double>(dyp[i]);
            for (int ci = 0; ci < x.c; ++ci) {
                const T* xp = x.plane(in, ci);
                for (int kh = 0; kh < w.h; ++kh)
                    for (int kw = 0; kw < w.w; ++kw) {
                        double acc = 0;
                        for (int r = 0; r < oh; ++r) {
                            const int ih = r * stride - pad + kh;
                            if (ih < 0 || ih >= x.h) continue;
                            const T* xrow = xp + static_cast<size_t>(ih) * x.w;
                            const T* dyrow = dyp + static_cast<size_t>(r) * ow;
                            int c_lo = 0;
                            if (pad - kw > 0) c_lo = (pad - kw + stride - 1) / stride;
                            int c_hi = std::min(ow, (x.w - 1 - kw + pad) / stride + 1);
                            for (int c = c_lo; c < c_hi; ++c)
                                acc += static_cast<double>(dyrow[c]) *
                                       static_cast<double>(xrow[c * stride - pad + kw]);
                        }
                        g.dw.at(co, ci, kh, kw) += static_cast<T>(acc);
                    }
            }
        }
        g.db.data[static_cast<size_t>(co)] = static_cast<T>(db_acc);
    });
    return g;
}

// -------------------------------------------------------------------------
// conv_transpose2d: the adjoint of a strided conv2d. Weight layout is
// (Cin, Cout, kh, kw). No padding; out = (in-1)*stride + k, so the 2x2
// stride-2 case doubles the spatial dims. With k == stride every output
// pixel has exactly one source, which makes the forward a pure gather.

template <typename T>
Tensor4<T> conv_transpose2d_forward(const Tensor4<T>& x, const Tensor4<T>& w, const Tensor4<T>* b,
                                    int stride) {
    if (w.n != x.c) throw ShapeMismatch("conv_transpose2d: kernel Cin != input channels");
    if (b && b->size() != static_cast<size_t>(w.c)) throw ShapeMismatch("conv_transpose2d: bias length != Cout");
    const int oh = (x.h - 1) * stride + w.h;
    const int ow = (x.w - 1) * stride + w.w;
    Tensor4<T> y(x.n, w.c, oh, ow);

    parallel_for(static_cast<int64_t>(x.n) * w.c, [&](int64_t task) {
        const int in = static_cast<int>(task / w.c);
        const int co = static_cast<int>(task % w.c);
        T* yp = y.plane(in, co);
        if (b) {
            T bv = b->data[static_cast<size_t>(co)];
            for (int i = 0; i < oh * ow; ++i) yp[i] = bv;
        }
        for (int ci = 0; ci < x.c; ++ci) {
            const T* xp = x.plane(in, ci);
            for (int kh = 0; kh < w.h; ++kh)
                for (int kw = 0; kw < w.w; ++kw) {
                    const T wv = w.at(ci, co, kh, kw);
                    if (wv == T(0)) continue;
                    for (int r = 0; r < x.h; ++r) {
                        const T* xrow = xp + static_cast<size_t>(r) * x.w;
                        T* yrow = yp + static_cast<size_t>(r * stride + kh) * ow + kw;
                        for (int c = 0; c < x.w; ++c) yrow[c * stride] += wv * xrow[c];
                    }
                }
        }
    });
    check_finite(y, "conv_transpose2d");
    return y;
}

template <typename T>
ConvGrads<T> conv_transpose2d_backward(const Tensor4<T>& x, const Tensor4<T>& w, const Tensor4<T>& dy,
                                       int stride) {
    const int oh = (x.h - 1) * stride + w.h;
    const int ow = (x.w - 1) * stride + w.w;
    if (dy.n != x.n || dy.c != w.c || dy.h != oh || dy.w != ow)
        throw ShapeMismatch("conv_transpose2d_backward: dy shape " + dy.shape_str());

    ConvGrads<T> g{Tensor4<T>(x.n, x.c, x.h, x.w), Tensor4<T>(w.n, w.c, w.h, w.w),
                   Tensor4<T>(w.c, 1, 1, 1)};

    parallel_for(static_cast<int64_t>(x.n) * x.c, [&](int64_t task) {
        const int in = static_cast<int>(task / x.c);
        const int ci = static_cast<int>(task % x.c);
        T* dxp = g.dx.plane(in, ci);
        for (int co = 0; co < w.c; ++co) {
            const T* dyp = dy.plane(in, co);
            for (int kh = 0; kh < w.h; ++kh)
                for (int kw = 0; kw < w.w; ++kw) {
                    const T wv = w.at(ci, co, kh, kw);
                    if (wv == T(0)) continue;
                    for (int r = 0; r < x.h; ++r) {
                        T* dxrow = dxp + static_cast<size_t>(r) * x.w;
                        const T* dyrow = dyp + static_cast<size_t>(r * stride + kh) * ow + kw;
                        for (int c = 0; c < x.w; ++c) dxrow[c] += wv * dyrow[c * stride];
                    }
                }
        }
    });

    parallel_for(w.c, [&](int64_t co64) {
        const int co = static_cast<int>(co64);
        double db_acc = 0;
        for (int in = 0; in < x.n; ++in) {
            const T* dyp = dy.plane(in, co);
            for (int i = 0; i < oh * ow; ++i) db_acc += static_cast<double>(dyp[i]);
            for (int ci = 0; ci < x.c; ++ci) {
                const T* xp = x.plane(in, ci);
                for (int kh = 0; kh < w.h; ++kh)
                    for (int kw = 0; kw < w.w; ++kw) {
                        double acc = 0;
                        for (int r = 0; r < x.h; ++r) {
                            const T* xrow = xp + static_cast<size_t>(r) * x.w;
                            const T* dyrow = dyp + static_cast<size_t>(r * stride + kh) * ow + kw;
                            for (int c = 0; c < x.w; ++c)
                                acc += static_cast<double>(xrow[c]) * static_cast<double>(dyrow[c * stride]);
                        }
                        g.dw.at(ci, co, kh, kw) += static_cast<T>(acc);
                    }
            }
        }
        g.db.data[static_cast<size_t>(co)] = static_cast<T>(db_acc);
    });
    return g;
}

// -------------------------------------------------------------------------
// batch_norm2d. Train mode normalizes by batch statistics (biased variance,
// eps 1e-5) and updates running stats with momentum 0.1 (running variance
// uses the unbiased estimate); eval mode normalizes by the running stats.

inline constexpr double kBnEps = 1e-5;
inline constexpr double kBnMomentum = 0.1;

template <typename T>
struct BNContext {
    Tensor4<T> xhat;            // cached normalized input (train mode)
    std::vector<double> inv_std;  // per channel
};

template <typename T>
Tensor4<T> batch_norm2d_forward(const Tensor4<T>& x, const Tensor4<T>& gamma, const Tensor4<T>& beta,
                                Tensor4<T>& running_mean, Tensor4<T>& running_var, bool train,
                                BNContext<T>* ctx) {
    if (gamma.size() != static_cast<size_t>(x.c) || beta.size() != static_cast<size_t>(x.c))
        throw ShapeMismatch("batch_norm2d: gamma/beta length != channels");
    const int64_t per_chan = static_cast<int64_t>(x.n) * x.h * x.w;
    Tensor4<T> y(x.n, x.c, x.h, x.w);
    if (ctx) {
        ctx->xhat = Tensor4<T>(x.n, x.c, x.h, x.w);
        ctx->inv_std.assign(static_cast<size_t>(x.c), 0.0);
    }

    parallel_for(x.c, [&](int64_t c64) {
        const int c = static_cast<int>(c64);
        double mean, var;
        if (train) {
            double sum = 0, sq = 0;
            for (int in = 0; in < x.n; ++in) {
                const T* xp = x.plane(in, c);
                for (int i = 0; i < x.h * x.w; ++i) {
                    sum += xp[i];
                    sq += static_cast<double>(xp[i]) * xp[i];
                }
            }
            mean = sum / static_cast<double>(per_chan);
            var = sq / static_cast<double>(per_chan) - mean * mean;
            if (var < 0) var = 0;  // guard against rounding on constant input
            double unbiased = per_chan > 1 ? var * static_cast<double>(per_chan) / (per_chan - 1) : var;
            running_mean.data[c] =
                static_cast<T>((1.0 - kBnMomentum) * running_mean.data[c] + kBnMomentum * mean);
            running_var.data[c] =
                static_cast<T>((1.0 - kBnMomentum) * running_var.data[c] + kBnMomentum * unbiased);
        } else {
            mean = running_mean.data[c];
            var = running_var.data[c];
        }
        const double inv_std = 1.0 / std::sqrt(var + kBnEps);
        if (ctx) ctx->inv_std[static_cast<size_t>(c)] = inv_std;
        const double g = gamma.data[c], b = beta.data[c];
        for (int in = 0; in < x.n; ++in) {
            const T* xp = x.plane(in, c);
            T* yp = y.plane(in, c);
            T* hp = ctx ? ctx->xhat.plane(in, c) : nullptr;
            for (int i = 0; i < x.h * x.w; ++i) {
                double xh = (static_cast<double>(xp[i]) - mean) * inv_std;
                if (hp) hp[i] = static_cast<T>(xh);
                yp[i] = static_cast<T>(g * xh + b);
            }
        }
    });
    check_finite(y, "batch_norm2d");
    return y;
}

template <typename T>
struct BNGrads {
    Tensor4<T> dx, dgamma, dbeta;
};

// Train-mode backward; needs the context cached by the forward pass.
template <typename T>
BNGrads<T> batch_norm2d_backward(const BNContext<T>& ctx, const Tensor4<T>& gamma, const Tensor4<T>& dy) {
    const Tensor4<T>& xhat = ctx.xhat;
    if (!dy.same_shape(xhat)) throw ShapeMismatch("batch_norm2d_backward: dy shape");
    const int64_t m = static_cast<int64_t>(dy.n) * dy.h * dy.w;
    BNGrads<T> g{Tensor4<T>(dy.n, dy.c, dy.h, dy.w), Tensor4<T>(dy.c, 1, 1, 1), Tensor4<T>(dy.c, 1, 1, 1)};

    parallel_for(dy.c, [&](int64_t c64) {
        const int c = static_cast<int>(c64);
        double sum_dy = 0, sum_dy_xhat = 0;
        for (int in = 0; in < dy.n; ++in) {
            const T* dp = dy.plane(in, c);
            const T* hp = xhat.plane(in, c);
            for (int i = 0; i < dy.h * dy.w; ++i) {
                sum_dy += dp[i];
                sum_dy_xhat += static_cast<double>(dp[i]) * hp[i];
            }
        }
        g.dbeta.data[c] = static_cast<T>(sum_dy);
        g.dgamma.data[c] = static_cast<T>(sum_dy_xhat);
        const double scale = static_cast<double>(gamma.data[c]) * ctx.inv_std[static_cast<size_t>(c)] /
                             static_cast<double>(m);
        for (int in = 0; in < dy.n; ++in) {
            const T* dp = dy.plane(in, c);
            const T* hp = xhat.plane(in, c);
            T* gp = g.dx.plane(in, c);
            for (int i = 0; i < dy.h * dy.w; ++i)
                gp[i] = static_cast<T>(scale * (static_cast<double>(m) * dp[i] - sum_dy -
                                                static_cast<double>(hp[i]) * sum_dy_xhat));
        }
    });
    return g;
}

// Eval-mode backward: the normalization is a fixed affine map.
template <typename T>
BNGrads<T> batch_norm2d_backward_eval(const Tensor4<T>& x, const Tensor4<T>& gamma,
                                      const Tensor4<T>& running_mean, const Tensor4<T>& running_var,
                                      const Tensor4<T>& dy) {
    BNGrads<T> g{Tensor4<T>(dy.n, dy.c, dy.h, dy.w), Tensor4<T>(dy.c, 1, 1, 1), Tensor4<T>(dy.c, 1, 1, 1)};
    parallel_for(dy.c, [&](int64_t c64) {
        const int c = static_cast<int>(c64);
        const double inv_std = 1.0 / std::sqrt(static_cast<double>(running_var.data[c]) + kBnEps);
        const double mean = running_mean.data[c];
        double sum_dy = 0, sum_dy_xhat = 0;
        for (int in = 0; in < dy.n; ++in) {
            const T* dp = dy.plane(in, c);
            const T* xp = x.plane(in, c);
            T* gp = g.dx.plane(in, c);
            for (int i = 0; i < dy.h * dy.w; ++i) {
                sum_dy += dp[i];
                sum_dy_xhat += static_cast<double>(dp[i]) * (static_cast<double>(xp[i]) - mean) * inv_std;
                gp[i] = static_cast<T>(static_cast<double>(gamma.data[c]) * inv_std * dp[i]);
            }
        }
        g.dbeta.data[c] = static_cast<T>(sum_dy);
        g.dgamma.data[c] = static_cast<T>(sum_dy_xhat);
    });
    return g;
}

// -------------------------------------------------------------------------
// Elementwise / structural ops.

template <typename T>
Tensor4<T> relu_forward(const Tensor4<T>& x) {
    Tensor4<T> y(x.n, x.c, x.h, x.w);
    for (size_t i = 0; i < x.data.size(); ++i) y.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
    return y;
}

// Subgradient at exactly 0 is taken as 0.
template <typename T>
Tensor4<T> relu_backward(const Tensor4<T>& x, const Tensor4<T>& dy) {
    if (!x.same_shape(dy)) throw ShapeMismatch("relu_backward: dy shape");
    Tensor4<T> dx(x.n, x.c, x.h, x.w);
    for (size_t i = 0; i < x.data.size(); ++i) dx.data[i] = x.data[i] > T(0) ? dy.data[i] : T(0);
    return dx;
}

template <typename T>
struct PoolResult {
    Tensor4<T> y;
    std::vector<int32_t> argmax;  // flat index into the input plane, per output element
};

// 2x2 max pool, stride 2. Ties go to the first index in row-major window
// order so backward routing is deterministic.
template <typename T>
PoolResult<T> max_pool2d_forward(const Tensor4<T>& x) {
    if (x.h % 2 != 0 || x.w % 2 != 0)
        throw OddSpatialDim("max_pool2d requires even spatial dims, got " + x.shape_str());
    const int oh = x.h / 2, ow = x.w / 2;
    PoolResult<T> res{Tensor4<T>(x.n, x.c, oh, ow),
                      std::vector<int32_t>(static_cast<size_t>(x.n) * x.c * oh * ow)};
    parallel_for(static_cast<int64_t>(x.n) * x.c, [&](int64_t task) {
        const int in = static_cast<int>(task / x.c);
        const int c = static_cast<int>(task % x.c);
        const T* xp = x.plane(in, c);
        T* yp = res.y.plane(in, c);
        int32_t* ap = res.argmax.data() + task * oh * ow;
        for (int r = 0; r < oh; ++r)
            for (int cc = 0; cc < ow; ++cc) {
                int best = (2 * r) * x.w + 2 * cc;
                T bv = xp[best];
                const int cand[3] = {(2 * r) * x.w + 2 * cc + 1, (2 * r + 1) * x.w + 2 * cc,
                                     (2 * r + 1) * x.w + 2 * cc + 1};
                for (int k = 0; k < 3; ++k)
                    if (xp[cand[k]] > bv) {
                        bv = xp[cand[k]];
                        best = cand[k];
                    }
                yp[r * ow + cc] = bv;
                ap[r * ow + cc] = best;
            }
    });
    return res;
}

template <typename T>
Tensor4<T> max_pool2d_backward(const Tensor4<T>& dy, const std::vector<int32_t>& argmax, int in_h,
                               int in_w) {
    Tensor4<T> dx(dy.n, dy.c, in_h, in_w);
    parallel_for(static_cast<int64_t>(dy.n) * dy.c, [&](int64_t task) {
        const int in = static_cast<int>(task / dy.c);
        const int c = static_cast<int>(task % dy.c);
        const T* dp = dy.plane(in, c);
        T* gp = dx.plane(in, c);
        const int32_t* ap = argmax.data() + task * dy.h * dy.w;
        for (int i = 0; i < dy.h * dy.w; ++i) gp[ap[i]] += dp[i];
    });
    return dx;
}

template <typename T>
Tensor4<T> concat_channels(const std::vector<const Tensor4<T>*>& parts) {
    if (parts.empty()) throw ShapeMismatch("concat_channels: no inputs");
    int total_c = 0;
    for (const auto* p : parts) {
        if (p->n != parts[0]->n || p->h != parts[0]->h || p->w != parts[0]->w)
            throw ShapeMismatch("concat_channels: inputs disagree on (N,H,W)");
        total_c += p->c;
    }
    Tensor4<T> y(parts[0]->n, total_c, parts[0]->h, parts[0]->w);
    int c0 = 0;
    for (const auto* p : parts) {
        for (int in = 0; in < p->n; ++in)
            for (int c = 0; c < p->c; ++c)
                std::copy(p->plane(in, c), p->plane(in, c) + p->h * p->w, y.plane(in, c0 + c));
        c0 += p->c;
    }
    return y;
}

// Channel slice [c0, c1), used to route concat gradients back to the parts.
template <typename T>
Tensor4<T> slice_channels(const Tensor4<T>& x, int c0, int c1) {
    if (c0 < 0 || c1 > x.c || c0 >= c1) throw ShapeMismatch("slice_channels: bad range");
    Tensor4<T> y(x.n, c1 - c0, x.h, x.w);
    for (int in = 0; in < x.n; ++in)
        for (int c = c0; c < c1; ++c)
            std::copy(x.plane(in, c), x.plane(in, c) + x.h * x.w, y.plane(in, c - c0));
    return y;
}

// Per-pixel softmax across channels, max-shifted for stability. Output sums
// to 1 over C at every pixel and is strictly positive.
template <typename T>
Tensor4<T> softmax_channels_forward(const Tensor4<T>& x) {
    Tensor4<T> y(x.n, x.c, x.h, x.w);
    parallel_for(static_cast<int64_t>(x.n) * x.h, [&](int64_t task) {
        const int in = static_cast<int>(task / x.h);
        const int r = static_cast<int>(task % x.h);
        for (int cc = 0; cc < x.w; ++cc) {
            double mx = x.at(in, 0, r, cc);
            for (int c = 1; c < x.c; ++c) mx = std::max(mx, static_cast<double>(x.at(in, c, r, cc)));
            double denom = 0;
            for (int c = 0; c < x.c; ++c) denom += std::exp(static_cast<double>(x.at(in, c, r, cc)) - mx);
            for (int c = 0; c < x.c; ++c)
                y.at(in, c, r, cc) =
                    static_cast<T>(std::exp(static_cast<double>(x.at(in, c, r, cc)) - mx) / denom);
        }
    });
    return y;
}

template <typename T>
Tensor4<T> softmax_channels_backward(const Tensor4<T>& y, const Tensor4<T>& dy) {
    if (!y.same_shape(dy)) throw ShapeMismatch("softmax_backward: dy shape");
    Tensor4<T> dx(y.n, y.c, y.h, y.w);
    parallel_for(static_cast<int64_t>(y.n) * y.h, [&](int64_t task) {
        const int in = static_cast<int>(task / y.h);
        const int r = static_cast<int>(task % y.h);
        for (int cc = 0; cc < y.w; ++cc) {
            double dot = 0;
            for (int c = 0; c < y.c; ++c)
                dot += static_cast<double>(y.at(in, c, r, cc)) * dy.at(in, c, r, cc);
            for (int c = 0; c < y.c; ++c)
                dx.at(in, c, r, cc) =
                    static_cast<T>(static_cast<double>(y.at(in, c, r, cc)) * (dy.at(in, c, r, cc) - dot));
        }
    });
    return dx;
}

template <typename T>
double dot(const Tensor4<T>& a, const Tensor4<T>& b) {
    if (!a.same_shape(b)) throw ShapeMismatch("dot: shape mismatch");
    double s = 0;
    for (size_t i = 0; i < a.data.size(); ++i) s += static_cast<double>(a.data[i]) * b.data[i];
    return s;
}

// -------------------------------------------------------------------------
// Adam with bias correction. Moment buffers are indexed parallel to the
// parameter list handed to adam_init.

template <typename T>
struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t t = 0;
    std::vector<Tensor4<T>> m, v;
};

template <typename T>
AdamState<T> adam_init(const std::vector<ParamTensor<T>*>& params, double lr = 1e-3) {
    AdamState<T> st;
    st.lr = lr;
    for (const auto* p : params) {
        st.m.emplace_back(p->value.n, p->value.c, p->value.h, p->value.w);
        st.v.emplace_back(p->value.n, p->value.c, p->value.h, p->value.w);
    }
    return st;
}

template <typename T>
void adam_step(const std::vector<ParamTensor<T>*>& params, AdamState<T>& st) {
    if (params.size() != st.m.size()) throw ShapeMismatch("adam_step: state does not match param list");
    for (const auto* p : params)
        if (p->learnable && !p->grad_seen)
            throw EmptyGradient("parameter '" + p->name + "' received no gradient this step");

    st.t += 1;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
    for (size_t k = 0; k < params.size(); ++k) {
        ParamTensor<T>& p = *params[k];
        if (!p.learnable) continue;
        Tensor4<T>& m = st.m[k];
        Tensor4<T>& v = st.v[k];
        for (size_t i = 0; i < p.value.data.size(); ++i) {
            const double g = p.grad.data[i];
            const double mi = st.beta1 * m.data[i] + (1.0 - st.beta1) * g;
            const double vi = st.beta2 * v.data[i] + (1.0 - st.beta2) * g * g;
            m.data[i] = static_cast<T>(mi);
            v.data[i] = static_cast<T>(vi);
            p.value.data[i] -= static_cast<T>(st.lr * (mi / bc1) / (std::sqrt(vi / bc2) + st.eps));
        }
        p.zero_grad();
    }
}

}  // namespace eeunet::nn
