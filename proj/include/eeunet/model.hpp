#pragma once

#include <array>
#include <cmath>
#include <deque>
#include <string>
#include <vector>

#include "eeunet/diffops.hpp"
#include "eeunet/edge.hpp"
#include "eeunet/error.hpp"
#include "eeunet/rng.hpp"
#include "eeunet/tensor.hpp"

namespace eeunet::net {

inline constexpr int kDepth = 4;
inline constexpr int kEdgeChannels = 3;

struct ArchSpec {
    int in_channels = 1;
    int base_width = 64;
    int depth = kDepth;
    int num_classes = 4;
    bool edge_infusion = true;

    int width(int level) const { return base_width << level; }  // level 0..3
    int bottleneck_width() const { return base_width * 16; }

    void validate() const {
        if (in_channels < 1 || base_width < 1) throw ShapeMismatch("ArchSpec: widths must be >= 1");
        if (depth != kDepth) throw ShapeMismatch("ArchSpec: only depth 4 is supported");
        if (num_classes != 4) throw ShapeMismatch("ArchSpec: only 4 classes are supported");
    }
};

// conv -> BN -> ReLU unit. Convolutions that feed a batch norm carry no
// bias: BN's beta provides the shift, and a bias before BN would receive an
// identically zero gradient (the normalization cancels constant shifts).
template <typename T>
struct ConvBnUnit {
    nn::ParamTensor<T>* w = nullptr;
    nn::ParamTensor<T>* gamma = nullptr;
    nn::ParamTensor<T>* beta = nullptr;
    nn::ParamTensor<T>* running_mean = nullptr;
    nn::ParamTensor<T>* running_var = nullptr;
};

template <typename T>
struct Model {
    ArchSpec spec;
    std::deque<nn::ParamTensor<T>> store;  // stable addresses
    std::vector<nn::ParamTensor<T>*> all_params;
    std::vector<nn::ParamTensor<T>*> learnable;

    std::array<std::array<ConvBnUnit<T>, 2>, kDepth> enc;
    std::array<ConvBnUnit<T>, 2> bottleneck;
    std::array<nn::ParamTensor<T>*, kDepth> up_w{};
    std::array<nn::ParamTensor<T>*, kDepth> up_b{};
    std::array<std::array<ConvBnUnit<T>, 2>, kDepth> dec;
    nn::ParamTensor<T>* head_w = nullptr;
    nn::ParamTensor<T>* head_b = nullptr;

    nn::ParamTensor<T>& param(const std::string& name) {
        for (auto* p : all_params)
            if (p->name == name) return *p;
        throw ShapeMismatch("no parameter named '" + name + "'");
    }

    void zero_grads() {
        for (auto* p : learnable) p->zero_grad();
    }
};

namespace detail {

template <typename T>
nn::ParamTensor<T>* add_param(Model<T>& m, const std::string& name, Tensor4<T> value, bool learnable) {
    m.store.emplace_back(name, std::move(value), learnable);
    nn::ParamTensor<T>* p = &m.store.back();
    m.all_params.push_back(p);
    if (learnable) m.learnable.push_back(p);
    return p;
}

// Scaled-uniform fan-in init: U(-a, a) with a = sqrt(1 / (Cin*kh*kw)).
template <typename T>
void init_uniform(Tensor4<T>& t, int fan_in, Rng& rng) {
    const double a = std::sqrt(1.0 / fan_in);
    for (auto& v : t.data) v = static_cast<T>(rng.uniform(-a, a));
}

template <typename T>
ConvBnUnit<T> add_conv_bn(Model<T>& m, const std::string& prefix, int cin, int cout, int k, Rng& rng) {
    ConvBnUnit<T> u;
    Tensor4<T> w(cout, cin, k, k);
    init_uniform(w, cin * k * k, rng);
    u.w = add_param(m, prefix + ".conv.w", std::move(w), true);
    u.gamma = add_param(m, prefix + ".bn.gamma", Tensor4<T>(cout, 1, 1, 1, T(1)), true);
    u.beta = add_param(m, prefix + ".bn.beta", Tensor4<T>(cout, 1, 1, 1, T(0)), true);
    u.running_mean = add_param(m, prefix + ".bn.running_mean", Tensor4<T>(cout, 1, 1, 1, T(0)), false);
    u.running_var = add_param(m, prefix + ".bn.running_var", Tensor4<T>(cout, 1, 1, 1, T(1)), false);
    return u;
}

}  // namespace detail

// Deterministic model construction: one RNG seeded once, parameters filled
// in declaration order.
template <typename T>
Model<T> build_model(const ArchSpec& spec, uint64_t seed) {
    spec.validate();
    Model<T> m;
    m.spec = spec;
    Rng rng(seed);

    int cin = spec.in_channels;
    for (int l = 0; l < kDepth; ++l) {
        const int w = spec.width(l);
        m.enc[l][0] = detail::add_conv_bn(m, "enc" + std::to_string(l) + ".unit0", cin, w, 3, rng);
        m.enc[l][1] = detail::add_conv_bn(m, "enc" + std::to_string(l) + ".unit1", w, w, 3, rng);
        cin = w;
    }
    const int bw = spec.bottleneck_width();
    m.bottleneck[0] = detail::add_conv_bn(m, "bottleneck.unit0", spec.width(3), bw, 3, rng);
    m.bottleneck[1] = detail::add_conv_bn(m, "bottleneck.unit1", bw, bw, 3, rng);

    for (int l = kDepth - 1; l >= 0; --l) {
        const int w = spec.width(l);
        const int up_in = 2 * w;  // bottleneck width for l=3, previous decoder width otherwise
        const std::string prefix = "dec" + std::to_string(l);
        Tensor4<T> uw(up_in, w, 2, 2);
        detail::init_uniform(uw, up_in * 2 * 2, rng);
        m.up_w[l] = detail::add_param(m, prefix + ".up.w", std::move(uw), true);
        Tensor4<T> ub(w, 1, 1, 1);
        detail::init_uniform(ub, up_in * 2 * 2, rng);
        m.up_b[l] = detail::add_param(m, prefix + ".up.b", std::move(ub), true);
        const int concat_c = 2 * w + (spec.edge_infusion ? kEdgeChannels : 0);
        m.dec[l][0] = detail::add_conv_bn(m, prefix + ".unit0", concat_c, w, 3, rng);
        m.dec[l][1] = detail::add_conv_bn(m, prefix + ".unit1", w, w, 3, rng);
    }

    Tensor4<T> hw(spec.num_classes, spec.base_width, 1, 1);
    detail::init_uniform(hw, spec.base_width, rng);
    m.head_w = detail::add_param(m, "head.w", std::move(hw), true);
    Tensor4<T> hb(spec.num_classes, 1, 1, 1);
    detail::init_uniform(hb, spec.base_width, rng);
    m.head_b = detail::add_param(m, "head.b", std::move(hb), true);
    return m;
}

// Intermediate-shape journal for the shape-contract tests.
struct ShapeTrace {
    std::vector<std::pair<std::string, std::array<int, 4>>> entries;

    void add(const std::string& name, int n, int c, int h, int w) {
        entries.push_back({name, {n, c, h, w}});
    }
    const std::array<int, 4>* find(const std::string& name) const {
        for (const auto& [k, v] : entries)
            if (k == name) return &v;
        return nullptr;
    }
};

template <typename T>
struct ForwardOptions {
    bool train = false;
    bool keep_ctx = false;  // cache intermediates for backward
    // When set, replaces on-the-fly edge extraction; indexed in decoder pop
    // order (element 0 is consumed by the deepest decoder level). This is
    // how the gradient checks hold the edge constants fixed across finite
    // difference evaluations.
    const std::vector<Tensor4<T>>* frozen_edge_channels = nullptr;
    bool collect_edge_diag = false;  // fill ForwardResult::edge_diag
    ShapeTrace* trace = nullptr;
};

namespace detail {

template <typename T>
struct CbrCtx {
    Tensor4<T> conv_in;
    nn::BNContext<T> bn;
    Tensor4<T> bn_out;  // relu input
};

template <typename T>
struct EncLevelCtx {
    CbrCtx<T> unit[2];
    std::vector<int32_t> pool_argmax;
    int skip_h = 0, skip_w = 0;
};

template <typename T>
struct DecLevelCtx {
    Tensor4<T> up_in;
    CbrCtx<T> unit[2];
};

}  // namespace detail

template <typename T>
struct ForwardCtx {
    std::array<detail::EncLevelCtx<T>, kDepth> enc;
    detail::CbrCtx<T> bottleneck[2];
    std::array<detail::DecLevelCtx<T>, kDepth> dec;
    Tensor4<T> head_in;
    bool train = false;
};

template <typename T>
struct ForwardResult {
    Tensor4<T> logits;
    // One stack per batch element, push order enc0..enc3 (so pops come out
    // deepest-first, matching the decoder); filled when collect_edge_diag.
    std::vector<edge::EdgeStack> edge_diag;
};

namespace detail {

template <typename T>
Tensor4<T> run_cbr(const ConvBnUnit<T>& u, const Tensor4<T>& x, bool train, CbrCtx<T>* ctx) {
    Tensor4<T> conv = nn::conv2d_forward(x, u.w->value, static_cast<const Tensor4<T>*>(nullptr), 1, 1);
    nn::BNContext<T> bn_ctx;
    Tensor4<T> bn = nn::batch_norm2d_forward(conv, u.gamma->value, u.beta->value, u.running_mean->value,
                                             u.running_var->value, train, ctx ? &bn_ctx : nullptr);
    Tensor4<T> y = nn::relu_forward(bn);
    if (ctx) {
        ctx->conv_in = x;
        ctx->bn = std::move(bn_ctx);
        ctx->bn_out = std::move(bn);
    }
    return y;
}

// Backward through conv -> BN -> ReLU; accumulates parameter gradients and
// returns the gradient w.r.t. the unit input.
template <typename T>
Tensor4<T> backward_cbr(const ConvBnUnit<T>& u, const CbrCtx<T>& ctx, const Tensor4<T>& dy) {
    Tensor4<T> d_bn = nn::relu_backward(ctx.bn_out, dy);
    auto bg = nn::batch_norm2d_backward(ctx.bn, u.gamma->value, d_bn);
    u.gamma->accumulate(bg.dgamma);
    u.beta->accumulate(bg.dbeta);
    auto cg = nn::conv2d_backward(ctx.conv_in, u.w->value, bg.dx, 1, 1);
    u.w->accumulate(cg.dw);
    return cg.dx;
}

// Per-batch-element edge extraction packed into an (N,3,H,W) tensor. Levels
// whose spatial dims fall below the edge pipeline's 4x4 minimum contribute
// all-zero channels so the concat widths stay architecture-constant.
template <typename T>
Tensor4<T> batch_edge_channels(const Tensor4<T>& skip, std::vector<edge::EdgeStack>* diag) {
    Tensor4<T> out(skip.n, kEdgeChannels, skip.h, skip.w);
    std::vector<edge::EdgeFeatures> feats(static_cast<size_t>(skip.n));
    const bool usable = skip.h >= 4 && skip.w >= 4;
    if (usable) {
        parallel_for(skip.n, [&](int64_t n64) {
            const int n = static_cast<int>(n64);
            feats[static_cast<size_t>(n)] = edge::edge_extract(skip, n);
            Tensor4<T> ch = edge::edge_channels<T>(feats[static_cast<size_t>(n)]);
            for (int c = 0; c < kEdgeChannels; ++c)
                std::copy(ch.plane(0, c), ch.plane(0, c) + skip.h * skip.w, out.plane(n, c));
        });
    } else {
        for (auto& f : feats) {
            f.binary = Grid2D<uint8_t>(skip.h, skip.w);
            f.magnitude = Grid2D<double>(skip.h, skip.w);
            f.orientation = Grid2D<double>(skip.h, skip.w);
        }
    }
    if (diag)
        for (int n = 0; n < skip.n; ++n)
            (*diag)[static_cast<size_t>(n)].push(feats[static_cast<size_t>(n)]);
    return out;
}

}  // namespace detail

// Full EE-UNet forward. Edge channels are recomputed from the skip features
// on every pass and enter the graph as constants: the edge pipeline has
// discrete steps (thinning, hysteresis), so no gradient flows through it.
template <typename T>
ForwardResult<T> forward(Model<T>& m, const Tensor4<T>& x, const ForwardOptions<T>& opts,
                         ForwardCtx<T>* ctx = nullptr) {
    m.spec.validate();
    if (x.c != m.spec.in_channels) throw ShapeMismatch("forward: input channels != ArchSpec.in_channels");
    if (x.h % 16 != 0 || x.w % 16 != 0)
        throw ShapeMismatch("forward: spatial dims must be divisible by 16, got " + x.shape_str());
    const bool keep = opts.keep_ctx;
    if (keep && !ctx) throw ShapeMismatch("forward: keep_ctx requires a ForwardCtx");
    if (ctx) ctx->train = opts.train;

    ForwardResult<T> result;
    if (opts.collect_edge_diag) result.edge_diag.resize(static_cast<size_t>(x.n));

    std::array<Tensor4<T>, kDepth> skips;
    std::array<Tensor4<T>, kDepth> edge_ch;

    Tensor4<T> cur = x;
    for (int l = 0; l < kDepth; ++l) {
        cur = detail::run_cbr(m.enc[l][0], cur, opts.train, keep ? &ctx->enc[l].unit[0] : nullptr);
        cur = detail::run_cbr(m.enc[l][1], cur, opts.train, keep ? &ctx->enc[l].unit[1] : nullptr);
        skips[l] = cur;
        if (opts.trace) opts.trace->add("enc" + std::to_string(l) + ".skip", cur.n, cur.c, cur.h, cur.w);
        if (m.spec.edge_infusion && !opts.frozen_edge_channels)
            edge_ch[l] = detail::batch_edge_channels(skips[l],
                                                     opts.collect_edge_diag ? &result.edge_diag : nullptr);
        auto pooled = nn::max_pool2d_forward(cur);
        if (ctx) {
            ctx->enc[l].pool_argmax = std::move(pooled.argmax);
            ctx->enc[l].skip_h = cur.h;
            ctx->enc[l].skip_w = cur.w;
        }
        cur = std::move(pooled.y);
        if (opts.trace) opts.trace->add("pool" + std::to_string(l), cur.n, cur.c, cur.h, cur.w);
    }

    cur = detail::run_cbr(m.bottleneck[0], cur, opts.train, keep ? &ctx->bottleneck[0] : nullptr);
    cur = detail::run_cbr(m.bottleneck[1], cur, opts.train, keep ? &ctx->bottleneck[1] : nullptr);
    if (opts.trace) opts.trace->add("bottleneck", cur.n, cur.c, cur.h, cur.w);

    int frozen_idx = 0;
    for (int l = kDepth - 1; l >= 0; --l) {
        if (keep) ctx->dec[l].up_in = cur;
        Tensor4<T> up = nn::conv_transpose2d_forward(cur, m.up_w[l]->value, &m.up_b[l]->value, 2);
        if (opts.trace) opts.trace->add("dec" + std::to_string(l) + ".up", up.n, up.c, up.h, up.w);

        std::vector<const Tensor4<T>*> parts{&up, &skips[l]};
        Tensor4<T> frozen;
        if (m.spec.edge_infusion) {
            if (opts.frozen_edge_channels) {
                frozen = (*opts.frozen_edge_channels)[static_cast<size_t>(frozen_idx++)];
                parts.push_back(&frozen);
            } else {
                parts.push_back(&edge_ch[l]);
            }
        }
        Tensor4<T> cat = nn::concat_channels(parts);
        if (opts.trace) opts.trace->add("dec" + std::to_string(l) + ".concat", cat.n, cat.c, cat.h, cat.w);

        cur = detail::run_cbr(m.dec[l][0], cat, opts.train, keep ? &ctx->dec[l].unit[0] : nullptr);
        cur = detail::run_cbr(m.dec[l][1], cur, opts.train, keep ? &ctx->dec[l].unit[1] : nullptr);
    }

    if (keep) ctx->head_in = cur;
    result.logits = nn::conv2d_forward(cur, m.head_w->value, &m.head_b->value, 1, 0);
    if (opts.trace)
        opts.trace->add("logits", result.logits.n, result.logits.c, result.logits.h, result.logits.w);
    check_finite(result.logits, "forward logits");
    return result;
}

// Backward through the whole network given d(loss)/d(logits). Parameter
// gradients accumulate into the model; the return value is d(loss)/d(input).
// The edge-channel slices of the concat gradients are dropped (constants).
template <typename T>
Tensor4<T> backward(Model<T>& m, const ForwardCtx<T>& ctx, const Tensor4<T>& dlogits) {
    if (!ctx.train) throw ShapeMismatch("backward requires a train-mode forward context");
    auto hg = nn::conv2d_backward(ctx.head_in, m.head_w->value, dlogits, 1, 0);
    m.head_w->accumulate(hg.dw);
    m.head_b->accumulate(hg.db);
    Tensor4<T> d = std::move(hg.dx);

    std::array<Tensor4<T>, kDepth> d_skip;
    for (int l = 0; l < kDepth; ++l) {
        d = detail::backward_cbr(m.dec[l][1], ctx.dec[l].unit[1], d);
        Tensor4<T> d_cat = detail::backward_cbr(m.dec[l][0], ctx.dec[l].unit[0], d);

        const int w = m.spec.width(l);
        Tensor4<T> d_up = nn::slice_channels(d_cat, 0, w);
        d_skip[l] = nn::slice_channels(d_cat, w, 2 * w);

        auto ug = nn::conv_transpose2d_backward(ctx.dec[l].up_in, m.up_w[l]->value, d_up, 2);
        m.up_w[l]->accumulate(ug.dw);
        m.up_b[l]->accumulate(ug.db);
        d = std::move(ug.dx);
    }

    d = detail::backward_cbr(m.bottleneck[1], ctx.bottleneck[1], d);
    d = detail::backward_cbr(m.bottleneck[0], ctx.bottleneck[0], d);

    for (int l = kDepth - 1; l >= 0; --l) {
        Tensor4<T> d_total =
            nn::max_pool2d_backward(d, ctx.enc[l].pool_argmax, ctx.enc[l].skip_h, ctx.enc[l].skip_w);
        for (size_t i = 0; i < d_total.data.size(); ++i) d_total.data[i] += d_skip[l].data[i];
        d = detail::backward_cbr(m.enc[l][1], ctx.enc[l].unit[1], d_total);
        d = detail::backward_cbr(m.enc[l][0], ctx.enc[l].unit[0], d);
    }
    return d;
}

// Per-pixel argmax over channels; ties break toward the lower class index,
// so all-equal logits land on background.
template <typename T>
std::vector<Grid2D<uint8_t>> predict_mask(const Tensor4<T>& logits) {
    std::vector<Grid2D<uint8_t>> out(static_cast<size_t>(logits.n));
    for (int n = 0; n < logits.n; ++n) {
        Grid2D<uint8_t>& g = out[static_cast<size_t>(n)];
        g = Grid2D<uint8_t>(logits.h, logits.w);
        for (int r = 0; r < logits.h; ++r)
            for (int c = 0; c < logits.w; ++c) {
                int best = 0;
                T bv = logits.at(n, 0, r, c);
                for (int k = 1; k < logits.c; ++k)
                    if (logits.at(n, k, r, c) > bv) {
                        bv = logits.at(n, k, r, c);
                        best = k;
                    }
                g.at(r, c) = static_cast<uint8_t>(best);
            }
    }
    return out;
}

}  // namespace eeunet::net
