#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "eeunet/diffops.hpp"
#include "eeunet/rng.hpp"
#include "eeunet/tensor.hpp"

namespace eeunet::nn {

struct GradCheckReport {
    std::string op;
    double max_rel_err = 0;
    double tolerance = 0;
    bool pass = false;
};

// Central finite differences (h = 1e-5, double precision) against the
// analytic backward. The scalar probe is L = <out, dy> for a fixed random dy
// drawn away from zero. Per-element error is |a - n| / max(|a| + |n|, 1):
// relative where gradients are O(1) or larger, absolute below that, so the
// fixed tolerances in the contracts are meaningful for linear ops too.
class GradChecker {
public:
    explicit GradChecker(uint64_t seed) : rng_(seed) {}

    Tensor4<double> random_tensor(int n, int c, int h, int w, double lo = -1.0, double hi = 1.0) {
        Tensor4<double> t(n, c, h, w);
        for (auto& v : t.data) v = rng_.uniform(lo, hi);
        return t;
    }

    // Random probe direction with |dy_i| >= 0.5 so no output is masked.
    Tensor4<double> probe_like(const Tensor4<double>& out) {
        Tensor4<double> dy(out.n, out.c, out.h, out.w);
        for (auto& v : dy.data) v = (rng_.bernoulli(0.5) ? 1.0 : -1.0) * rng_.uniform(0.5, 1.5);
        return dy;
    }

    // forward: () -> output given current input values (captured by pointer).
    // analytic: dy -> gradients for `inputs`, same order.
    GradCheckReport check(const std::string& op_name,
                          const std::vector<Tensor4<double>*>& inputs,
                          const std::function<Tensor4<double>()>& forward,
                          const std::function<std::vector<Tensor4<double>>(const Tensor4<double>&)>& analytic,
                          double tolerance, double h = 1e-5) {
        Tensor4<double> out = forward();
        Tensor4<double> dy = probe_like(out);
        std::vector<Tensor4<double>> grads = analytic(dy);

        GradCheckReport rep{op_name, 0.0, tolerance, false};
        for (size_t k = 0; k < inputs.size(); ++k) {
            Tensor4<double>& x = *inputs[k];
            for (size_t i = 0; i < x.data.size(); ++i) {
                const double keep = x.data[i];
                x.data[i] = keep + h;
                const double lp = dot(forward(), dy);
                x.data[i] = keep - h;
                const double lm = dot(forward(), dy);
                x.data[i] = keep;
                const double numeric = (lp - lm) / (2.0 * h);
                const double a = grads[k].data[i];
                const double err = std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), 1.0);
                rep.max_rel_err = std::max(rep.max_rel_err, err);
            }
        }
        rep.pass = rep.max_rel_err < tolerance;
        return rep;
    }

    Rng& rng() { return rng_; }

private:
    Rng rng_;
};

// Canned per-op suite shared by the unit tests, the acceptance harness, and
// the `grad-check` CLI subcommand. Five random instances per op.
inline std::vector<GradCheckReport> run_diffops_grad_suite(uint64_t seed, int instances = 5) {
    GradChecker gc(seed);
    std::vector<GradCheckReport> reports;
    const double tol = 1e-4;
    const double tol_linear = 1e-8;

    for (int inst = 0; inst < instances; ++inst) {
        const std::string tag = "#" + std::to_string(inst);

        {  // conv2d, stride 1 pad 1 (the in-model configuration)
            auto x = gc.random_tensor(1, 2, 5, 5);
            auto w = gc.random_tensor(3, 2, 3, 3);
            auto b = gc.random_tensor(3, 1, 1, 1);
            auto fwd = [&] { return conv2d_forward(x, w, &b, 1, 1); };
            reports.push_back(gc.check(
                "conv2d_s1p1" + tag, {&x, &w, &b}, fwd,
                [&](const Tensor4<double>& dy) {
                    auto g = conv2d_backward(x, w, dy, 1, 1);
                    return std::vector<Tensor4<double>>{g.dx, g.dw, g.db};
                },
                tol));
        }
        {  // conv2d, stride 2 (pooling-free downsample path used in tests)
            auto x = gc.random_tensor(2, 2, 6, 6);
            auto w = gc.random_tensor(2, 2, 2, 2);
            auto b = gc.random_tensor(2, 1, 1, 1);
            auto fwd = [&] { return conv2d_forward(x, w, &b, 2, 0); };
            reports.push_back(gc.check(
                "conv2d_s2" + tag, {&x, &w, &b}, fwd,
                [&](const Tensor4<double>& dy) {
                    auto g = conv2d_backward(x, w, dy, 2, 0);
                    return std::vector<Tensor4<double>>{g.dx, g.dw, g.db};
                },
                tol));
        }
        {  // conv_transpose2d, 2x2 stride 2
            auto x = gc.random_tensor(1, 3, 4, 4);
            auto w = gc.random_tensor(3, 2, 2, 2);
            auto b = gc.random_tensor(2, 1, 1, 1);
            auto fwd = [&] { return conv_transpose2d_forward(x, w, &b, 2); };
            reports.push_back(gc.check(
                "conv_transpose2d" + tag, {&x, &w, &b}, fwd,
                [&](const Tensor4<double>& dy) {
                    auto g = conv_transpose2d_backward(x, w, dy, 2);
                    return std::vector<Tensor4<double>>{g.dx, g.dw, g.db};
                },
                tol));
        }
        {  // batch_norm2d, train mode
            auto x = gc.random_tensor(2, 3, 4, 4);
            auto gamma = gc.random_tensor(3, 1, 1, 1, 0.5, 1.5);
            auto beta = gc.random_tensor(3, 1, 1, 1);
            auto fwd = [&] {
                Tensor4<double> rm(3, 1, 1, 1), rv(3, 1, 1, 1, 1.0);
                BNContext<double> ctx;
                return batch_norm2d_forward(x, gamma, beta, rm, rv, true, &ctx);
            };
            reports.push_back(gc.check(
                "batch_norm2d_train" + tag, {&x, &gamma, &beta}, fwd,
                [&](const Tensor4<double>& dy) {
                    Tensor4<double> rm(3, 1, 1, 1), rv(3, 1, 1, 1, 1.0);
                    BNContext<double> ctx;
                    batch_norm2d_forward(x, gamma, beta, rm, rv, true, &ctx);
                    auto g = batch_norm2d_backward(ctx, gamma, dy);
                    return std::vector<Tensor4<double>>{g.dx, g.dgamma, g.dbeta};
                },
                tol));
        }
        {  // relu, inputs resampled away from the kink
            auto x = gc.random_tensor(1, 2, 4, 4);
            for (auto& v : x.data)
                while (std::abs(v) < 1e-3) v = gc.rng().uniform(-1.0, 1.0);
            auto fwd = [&] { return relu_forward(x); };
            reports.push_back(gc.check(
                "relu" + tag, {&x}, fwd,
                [&](const Tensor4<double>& dy) {
                    return std::vector<Tensor4<double>>{relu_backward(x, dy)};
                },
                tol));
        }
        {  // max_pool2d, window values separated so +-h cannot flip the argmax
            auto x = gc.random_tensor(1, 2, 4, 4);
            bool ok = false;
            while (!ok) {
                ok = true;
                for (int in = 0; in < x.n && ok; ++in)
                    for (int c = 0; c < x.c && ok; ++c)
                        for (int r = 0; r < x.h / 2 && ok; ++r)
                            for (int cc = 0; cc < x.w / 2 && ok; ++cc) {
                                double vals[4] = {x.at(in, c, 2 * r, 2 * cc), x.at(in, c, 2 * r, 2 * cc + 1),
                                                  x.at(in, c, 2 * r + 1, 2 * cc),
                                                  x.at(in, c, 2 * r + 1, 2 * cc + 1)};
                                for (int a = 0; a < 4; ++a)
                                    for (int bIdx = a + 1; bIdx < 4; ++bIdx)
                                        if (std::abs(vals[a] - vals[bIdx]) < 1e-3) ok = false;
                            }
                if (!ok)
                    for (auto& v : x.data) v = gc.rng().uniform(-1.0, 1.0);
            }
            auto fwd = [&] { return max_pool2d_forward(x).y; };
            reports.push_back(gc.check(
                "max_pool2d" + tag, {&x}, fwd,
                [&](const Tensor4<double>& dy) {
                    auto res = max_pool2d_forward(x);
                    return std::vector<Tensor4<double>>{max_pool2d_backward(dy, res.argmax, x.h, x.w)};
                },
                tol));
        }
        {  // concat: linear, held to the tight tolerance
            auto a = gc.random_tensor(1, 3, 3, 3);
            auto b = gc.random_tensor(1, 2, 3, 3);
            auto fwd = [&] { return concat_channels<double>({&a, &b}); };
            reports.push_back(gc.check(
                "concat_channels" + tag, {&a, &b}, fwd,
                [&](const Tensor4<double>& dy) {
                    return std::vector<Tensor4<double>>{slice_channels(dy, 0, 3), slice_channels(dy, 3, 5)};
                },
                tol_linear));
        }
        {  // softmax over channels (checked through the composed probe loss)
            auto x = gc.random_tensor(1, 4, 3, 3);
            auto fwd = [&] { return softmax_channels_forward(x); };
            reports.push_back(gc.check(
                "softmax_channels" + tag, {&x}, fwd,
                [&](const Tensor4<double>& dy) {
                    auto y = softmax_channels_forward(x);
                    return std::vector<Tensor4<double>>{softmax_channels_backward(y, dy)};
                },
                tol));
        }
    }
    return reports;
}

}  // namespace eeunet::nn
