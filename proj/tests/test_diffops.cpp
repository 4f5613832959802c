#include <catch2/catch_amalgamated.hpp>

#include "eeunet/diffops.hpp"
#include "eeunet/gradcheck.hpp"
#include "eeunet/rng.hpp"

using namespace eeunet;
using namespace eeunet::nn;

namespace {

Tensor4<double> rand_tensor(Rng& rng, int n, int c, int h, int w, double lo = -1, double hi = 1) {
    Tensor4<double> t(n, c, h, w);
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

}  // namespace

TEST_CASE("conv2d: identity kernel reproduces the input") {
    Rng rng(1);
    Tensor4<double> x = rand_tensor(rng, 2, 3, 6, 6);
    Tensor4<double> w(3, 3, 3, 3);
    for (int c = 0; c < 3; ++c) w.at(c, c, 1, 1) = 1.0;  // delta at center, per channel
    Tensor4<double> y = conv2d_forward<double>(x, w, nullptr, 1, 1);
    REQUIRE(y.same_shape(x));
    for (size_t i = 0; i < x.data.size(); ++i) CHECK(y.data[i] == Catch::Approx(x.data[i]).margin(1e-15));
}

TEST_CASE("conv2d: zero kernel and zero bias give zero output") {
    Rng rng(2);
    Tensor4<double> x = rand_tensor(rng, 1, 2, 5, 5);
    Tensor4<double> w(4, 2, 3, 3);
    Tensor4<double> b(4, 1, 1, 1);
    Tensor4<double> y = conv2d_forward(x, w, &b, 1, 1);
    for (double v : y.data) CHECK(v == 0.0);
}

TEST_CASE("conv2d: shape errors") {
    Rng rng(3);
    Tensor4<double> x = rand_tensor(rng, 1, 2, 5, 5);
    Tensor4<double> w_badc(3, 3, 3, 3);
    CHECK_THROWS_AS(conv2d_forward<double>(x, w_badc, nullptr, 1, 1), ShapeMismatch);
    Tensor4<double> w(3, 2, 2, 2);
    CHECK_THROWS_AS(conv2d_forward<double>(x, w, nullptr, 2, 0), ShapeMismatch);  // (5-2)%2 != 0
}

TEST_CASE("conv_transpose2d: all-ones kernel tiles each input pixel") {
    Tensor4<double> x(1, 1, 2, 2);
    x.data = {1, 2, 3, 4};
    Tensor4<double> w(1, 1, 2, 2, 1.0);
    Tensor4<double> y = conv_transpose2d_forward<double>(x, w, nullptr, 2);
    REQUIRE(y.h == 4);
    REQUIRE(y.w == 4);
    const double expect[4][4] = {{1, 1, 2, 2}, {1, 1, 2, 2}, {3, 3, 4, 4}, {3, 3, 4, 4}};
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) CHECK(y.at(0, 0, r, c) == expect[r][c]);
}

TEST_CASE("conv_transpose2d: zero input gives zero output") {
    Tensor4<double> x(2, 3, 4, 4);
    Rng rng(4);
    Tensor4<double> w = rand_tensor(rng, 3, 2, 2, 2);
    Tensor4<double> y = conv_transpose2d_forward<double>(x, w, nullptr, 2);
    for (double v : y.data) CHECK(v == 0.0);
}

TEST_CASE("conv / conv_transpose adjoint identity on random instances") {
    Rng rng(20240810);
    for (int it = 0; it < 8; ++it) {
        // conv: (C1 -> C2, k=2, s=2, no pad, no bias); convT shares the weight
        Tensor4<double> x = rand_tensor(rng, 1, 2, 8, 8);
        Tensor4<double> w = rand_tensor(rng, 3, 2, 2, 2);  // (C2, C1, 2, 2)
        Tensor4<double> cx = conv2d_forward<double>(x, w, nullptr, 2, 0);
        Tensor4<double> y = rand_tensor(rng, 1, 3, 4, 4);
        // convT weight layout (Cin=C2, Cout=C1, kh, kw) is the same buffer
        Tensor4<double> ty = conv_transpose2d_forward<double>(y, w, nullptr, 2);
        CHECK(std::abs(dot(cx, y) - dot(x, ty)) < 1e-10);
    }
}

TEST_CASE("batch_norm2d: train mode statistics land on beta and gamma") {
    Rng rng(5);
    Tensor4<double> x = rand_tensor(rng, 2, 3, 4, 4, -3, 5);  // batch*H*W = 32 per channel
    Tensor4<double> gamma(3, 1, 1, 1);
    gamma.data = {1.0, 2.0, 0.5};
    Tensor4<double> beta(3, 1, 1, 1);
    beta.data = {0.0, -1.0, 3.0};
    Tensor4<double> rm(3, 1, 1, 1), rv(3, 1, 1, 1, 1.0);
    Tensor4<double> y = batch_norm2d_forward(x, gamma, beta, rm, rv, true, static_cast<BNContext<double>*>(nullptr));

    for (int c = 0; c < 3; ++c) {
        double sum = 0, sq = 0;
        for (int n = 0; n < 2; ++n)
            for (int i = 0; i < 16; ++i) {
                double v = y.plane(n, c)[i];
                sum += v;
                sq += v * v;
            }
        double mean = sum / 32.0;
        double var = sq / 32.0 - mean * mean;
        CHECK(std::abs(mean - beta.data[static_cast<size_t>(c)]) < 1e-6);
        CHECK(std::abs(std::sqrt(var) - gamma.data[static_cast<size_t>(c)]) < 1e-3);  // eps-regularized
    }
    // running stats moved toward the batch stats
    CHECK(rm.data[0] != 0.0);
    CHECK(rv.data[0] != 1.0);
}

TEST_CASE("batch_norm2d: constant input maps to zero under gamma=1 beta=0") {
    Tensor4<double> x(1, 2, 4, 4, 3.25);
    Tensor4<double> gamma(2, 1, 1, 1, 1.0), beta(2, 1, 1, 1, 0.0);
    Tensor4<double> rm(2, 1, 1, 1), rv(2, 1, 1, 1, 1.0);
    Tensor4<double> y = batch_norm2d_forward(x, gamma, beta, rm, rv, true, static_cast<BNContext<double>*>(nullptr));
    for (double v : y.data) CHECK(std::abs(v) < 1e-9);
}

TEST_CASE("batch_norm2d: eval mode uses running stats") {
    Tensor4<double> x(1, 1, 2, 2);
    x.data = {1, 2, 3, 4};
    Tensor4<double> gamma(1, 1, 1, 1, 2.0), beta(1, 1, 1, 1, 1.0);
    Tensor4<double> rm(1, 1, 1, 1, 2.0), rv(1, 1, 1, 1, 4.0);
    Tensor4<double> y = batch_norm2d_forward(x, gamma, beta, rm, rv, false, static_cast<BNContext<double>*>(nullptr));
    for (int i = 0; i < 4; ++i)
        CHECK(y.data[static_cast<size_t>(i)] ==
              Catch::Approx(2.0 * (x.data[static_cast<size_t>(i)] - 2.0) / std::sqrt(4.0 + 1e-5) + 1.0));
}

TEST_CASE("max_pool2d: window maxima and odd-dim rejection") {
    Tensor4<double> x(1, 1, 2, 2);
    x.data = {1, 2, 3, 4};
    auto res = max_pool2d_forward(x);
    CHECK(res.y.data[0] == 4.0);

    Tensor4<double> odd(1, 1, 3, 4);
    CHECK_THROWS_AS(max_pool2d_forward(odd), OddSpatialDim);
}

TEST_CASE("max_pool2d: tie routing is deterministic (first in row-major order)") {
    Tensor4<double> x(1, 1, 2, 2, 5.0);  // all equal
    auto res = max_pool2d_forward(x);
    CHECK(res.argmax[0] == 0);
    Tensor4<double> dy(1, 1, 1, 1, 1.0);
    Tensor4<double> dx = max_pool2d_backward(dy, res.argmax, 2, 2);
    CHECK(dx.data == std::vector<double>{1, 0, 0, 0});
}

TEST_CASE("softmax_channels: equal logits split evenly; sums are 1 and positive") {
    Tensor4<double> x(1, 4, 2, 2, 0.7);
    Tensor4<double> y = softmax_channels_forward(x);
    for (double v : y.data) CHECK(v == Catch::Approx(0.25));

    Rng rng(6);
    Tensor4<double> z = rand_tensor(rng, 2, 4, 3, 3, -10, 10);
    Tensor4<double> p = softmax_channels_forward(z);
    for (int n = 0; n < 2; ++n)
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) {
                double s = 0;
                for (int k = 0; k < 4; ++k) {
                    CHECK(p.at(n, k, r, c) > 0.0);
                    s += p.at(n, k, r, c);
                }
                CHECK(std::abs(s - 1.0) < 1e-6);
            }
}

TEST_CASE("concat_channels: stacking order and exact slice recovery") {
    Rng rng(7);
    Tensor4<double> a = rand_tensor(rng, 1, 64, 4, 4);
    Tensor4<double> b = rand_tensor(rng, 1, 3, 4, 4);
    Tensor4<double> y = concat_channels<double>({&a, &b});
    CHECK(y.c == 67);
    CHECK(slice_channels(y, 0, 64).data == a.data);
    CHECK(slice_channels(y, 64, 67).data == b.data);

    Tensor4<double> bad(1, 3, 5, 4);
    CHECK_THROWS_AS(concat_channels<double>({&a, &bad}), ShapeMismatch);
}

TEST_CASE("gradient suite: every op passes at its tolerance on 5 instances") {
    auto reports = run_diffops_grad_suite(20240811);
    for (const auto& r : reports) {
        INFO(r.op << " max_rel_err=" << r.max_rel_err << " tol=" << r.tolerance);
        CHECK(r.pass);
    }
}

TEST_CASE("grad checker catches a sign-flipped backward") {
    GradChecker gc(123);
    auto x = gc.random_tensor(1, 2, 4, 4);
    for (auto& v : x.data)
        while (std::abs(v) < 1e-3) v = gc.rng().uniform(-1.0, 1.0);
    auto fwd = [&] { return relu_forward(x); };
    auto rep = gc.check(
        "relu_broken", {&x}, fwd,
        [&](const Tensor4<double>& dy) {
            Tensor4<double> g = relu_backward(x, dy);
            for (auto& v : g.data) v = -v;  // deliberately wrong
            return std::vector<Tensor4<double>>{g};
        },
        1e-4);
    CHECK_FALSE(rep.pass);
}

TEST_CASE("adam: first-step magnitude is the learning rate, zero grads are inert") {
    ParamTensor<double> p("theta", Tensor4<double>(1, 1, 2, 2));
    p.value.data = {1.0, -2.0, 3.0, 0.5};
    std::vector<ParamTensor<double>*> params{&p};
    AdamState<double> st = adam_init(params, 0.001);

    Tensor4<double> g(1, 1, 2, 2);
    g.data = {0.3, -0.7, 0.001, 2.0};
    p.accumulate(g);
    std::vector<double> before = p.value.data;
    adam_step(params, st);
    CHECK(st.t == 1);
    for (size_t i = 0; i < 4; ++i) {
        double delta = p.value.data[i] - before[i];
        double expect = -0.001 * g.data[i] / (std::abs(g.data[i]) + 1e-8);
        CHECK(delta == Catch::Approx(expect).epsilon(1e-6));
    }

    // zero gradient: parameter unchanged, t still increments
    Tensor4<double> zero(1, 1, 2, 2);
    ParamTensor<double> q("q", Tensor4<double>(1, 1, 2, 2, 5.0));
    std::vector<ParamTensor<double>*> qp{&q};
    AdamState<double> st2 = adam_init(qp, 0.001);
    q.accumulate(zero);
    adam_step(qp, st2);
    CHECK(st2.t == 1);
    for (double v : q.value.data) CHECK(v == 5.0);
}

TEST_CASE("adam: untouched parameter raises EmptyGradient") {
    ParamTensor<double> p("dead", Tensor4<double>(1, 1, 1, 1, 1.0));
    std::vector<ParamTensor<double>*> params{&p};
    AdamState<double> st = adam_init(params, 0.001);
    CHECK_THROWS_AS(adam_step(params, st), EmptyGradient);
}

TEST_CASE("adam: 200 steps on theta^2 shrink theta") {
    // scalar simulation oracle: f(theta) = theta^2, grad = 2 theta
    ParamTensor<double> p("theta", Tensor4<double>(1, 1, 1, 1, 1.0));
    std::vector<ParamTensor<double>*> params{&p};
    AdamState<double> st = adam_init(params, 0.05);
    for (int i = 0; i < 200; ++i) {
        Tensor4<double> g(1, 1, 1, 1, 2.0 * p.value.data[0]);
        p.accumulate(g);
        adam_step(params, st);
    }
    CHECK(std::abs(p.value.data[0]) < 0.5);
    CHECK(st.t == 200);
}

TEST_CASE("determinism: identical inputs give bit-identical forward outputs") {
    Rng rng(8);
    Tensor4<float> x(2, 3, 8, 8);
    for (auto& v : x.data) v = static_cast<float>(rng.uniform(-1, 1));
    Tensor4<float> w(4, 3, 3, 3);
    for (auto& v : w.data) v = static_cast<float>(rng.uniform(-1, 1));
    Tensor4<float> a = conv2d_forward<float>(x, w, nullptr, 1, 1);
    Tensor4<float> b = conv2d_forward<float>(x, w, nullptr, 1, 1);
    CHECK(a.data == b.data);
}
