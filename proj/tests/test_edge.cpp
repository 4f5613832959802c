#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "eeunet/edge.hpp"
#include "eeunet/rng.hpp"

using namespace eeunet;
using namespace eeunet::edge;

namespace {

Grid2D<double> rand_grid(Rng& rng, int r, int c, double lo = 0, double hi = 1) {
    Grid2D<double> g(r, c);
    for (auto& v : g.data) v = rng.uniform(lo, hi);
    return g;
}

// Literal transcription of the four stencil formulas, as written, with i
// the row index and j the column index.
struct StencilOracle {
    Grid2D<double> dx, dy, lambda, theta;
};
StencilOracle stencil_oracle(const Grid2D<double>& I) {
    StencilOracle o{Grid2D<double>(I.rows - 1, I.cols - 1), Grid2D<double>(I.rows - 1, I.cols - 1),
                    Grid2D<double>(I.rows - 1, I.cols - 1), Grid2D<double>(I.rows - 1, I.cols - 1)};
    for (int i = 0; i + 1 < I.rows; ++i)
        for (int j = 0; j + 1 < I.cols; ++j) {
            double dx = (I.at(i, j + 1) - I.at(i, j) + I.at(i + 1, j + 1) - I.at(i + 1, j)) / 2.0;
            double dy = (I.at(i, j) - I.at(i + 1, j) + I.at(i, j + 1) - I.at(i + 1, j + 1)) / 2.0;
            o.dx.at(i, j) = dx;
            o.dy.at(i, j) = dy;
            o.lambda.at(i, j) = std::sqrt(dx * dx + dy * dy);
            o.theta.at(i, j) = (dx == 0 && dy == 0) ? 0.0 : std::atan2(dy, dx);
        }
    return o;
}

// Dense (non-separable) 2D Gaussian convolution with the same reflect rule.
Grid2D<double> gaussian_oracle(const Grid2D<double>& g, int r, double w) {
    const int half = r / 2;
    std::vector<double> k1(static_cast<size_t>(r));
    double sum = 0;
    for (int i = 0; i < r; ++i) {
        double d = i - half;
        k1[static_cast<size_t>(i)] = std::exp(-(d * d) / (2 * w * w));
        sum += k1[static_cast<size_t>(i)];
    }
    for (auto& v : k1) v /= sum;
    auto reflect = [](int idx, int n) {
        if (idx < 0) idx = -idx - 1;
        if (idx >= n) idx = 2 * n - idx - 1;
        return std::clamp(idx, 0, n - 1);
    };
    Grid2D<double> out(g.rows, g.cols);
    for (int rr = 0; rr < g.rows; ++rr)
        for (int cc = 0; cc < g.cols; ++cc) {
            double acc = 0;
            for (int a = -half; a <= half; ++a)
                for (int b = -half; b <= half; ++b)
                    acc += k1[static_cast<size_t>(a + half)] * k1[static_cast<size_t>(b + half)] *
                           g.at(reflect(rr + a, g.rows), reflect(cc + b, g.cols));
            out.at(rr, cc) = acc;
        }
    return out;
}

// Brute-force non-maximum suppression, re-deriving the direction bin from
// the angle without sharing code with the implementation.
Grid2D<double> nms_oracle(const Grid2D<double>& lambda, const Grid2D<double>& theta) {
    Grid2D<double> out(lambda.rows, lambda.cols);
    for (int r = 0; r < lambda.rows; ++r)
        for (int c = 0; c < lambda.cols; ++c) {
            double deg = theta.at(r, c) * 180.0 / kPi;
            while (deg < 0) deg += 180.0;
            while (deg >= 180.0) deg -= 180.0;
            int dr, dc;
            if (deg < 22.5 || deg >= 157.5) { dr = 0; dc = 1; }
            else if (deg < 67.5) { dr = 1; dc = 1; }
            else if (deg < 112.5) { dr = 1; dc = 0; }
            else { dr = 1; dc = -1; }
            auto get = [&](int rr, int cc) {
                return (rr < 0 || rr >= lambda.rows || cc < 0 || cc >= lambda.cols) ? 0.0
                                                                                    : lambda.at(rr, cc);
            };
            double v = lambda.at(r, c);
            out.at(r, c) = (v >= get(r - dr, c - dc) && v >= get(r + dr, c + dc)) ? v : 0.0;
        }
    return out;
}

// Exhaustive hysteresis oracle: seed with strong pixels, then iterate "keep
// any >= low pixel 8-adjacent to a kept pixel" until nothing changes.
Grid2D<uint8_t> hysteresis_oracle(const Grid2D<double>& lambda, double low, double high) {
    Grid2D<uint8_t> keep(lambda.rows, lambda.cols);
    for (int r = 0; r < lambda.rows; ++r)
        for (int c = 0; c < lambda.cols; ++c)
            if (lambda.at(r, c) >= high) keep.at(r, c) = 1;
    bool changed = true;
    while (changed) {
        changed = false;
        for (int r = 0; r < lambda.rows; ++r)
            for (int c = 0; c < lambda.cols; ++c) {
                if (keep.at(r, c) || lambda.at(r, c) < low) continue;
                for (int dr = -1; dr <= 1 && !keep.at(r, c); ++dr)
                    for (int dc = -1; dc <= 1; ++dc) {
                        int nr = r + dr, nc = c + dc;
                        if (nr < 0 || nr >= lambda.rows || nc < 0 || nc >= lambda.cols) continue;
                        if (keep.at(nr, nc)) {
                            keep.at(r, c) = 1;
                            changed = true;
                            break;
                        }
                    }
            }
    }
    return keep;
}

}  // namespace

TEST_CASE("gaussian_smooth: constant grids are fixed points") {
    Grid2D<double> g(9, 7, 4.2);
    Grid2D<double> out = gaussian_smooth(g, 5, 1.5);
    for (double v : out.data) CHECK(v == Catch::Approx(4.2).margin(1e-12));
}

TEST_CASE("gaussian_smooth: centered impulse keeps total mass and symmetry") {
    Grid2D<double> g(15, 15);
    g.at(7, 7) = 1.0;
    Grid2D<double> out = gaussian_smooth(g, 5, 1.0);
    double mass = 0;
    for (double v : out.data) mass += v;
    CHECK(std::abs(mass - 1.0) < 1e-9);
    CHECK(out.at(7, 7) > out.at(7, 8));
    CHECK(out.at(7, 8) == Catch::Approx(out.at(7, 6)).margin(1e-15));
    CHECK(out.at(6, 7) == Catch::Approx(out.at(8, 7)).margin(1e-15));
}

TEST_CASE("gaussian_smooth: matches the dense 2D oracle on random grids") {
    Rng rng(31);
    for (int it = 0; it < 5; ++it) {
        Grid2D<double> g = rand_grid(rng, 32, 32);
        for (int r : {3, 5, 7}) {
            Grid2D<double> a = gaussian_smooth(g, r, r / 2.0);
            Grid2D<double> b = gaussian_oracle(g, r, r / 2.0);
            double max_diff = 0;
            for (size_t i = 0; i < a.data.size(); ++i)
                max_diff = std::max(max_diff, std::abs(a.data[i] - b.data[i]));
            CHECK(max_diff < 1e-10);
        }
    }
}

TEST_CASE("gaussian_smooth: kernel validation") {
    Grid2D<double> g(8, 8, 1.0);
    CHECK_THROWS_AS(gaussian_smooth(g, 4, 1.0), BadKernel);
    CHECK_THROWS_AS(gaussian_smooth(g, 1, 1.0), BadKernel);
    CHECK_THROWS_AS(gaussian_smooth(g, 5, 0.0), BadKernel);
}

TEST_CASE("grad_xy: ramps reproduce the stencil signs") {
    Grid2D<double> horiz(6, 6), vert(6, 6), flat(6, 6, 3.0);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) {
            horiz.at(i, j) = j;
            vert.at(i, j) = i;
        }
    auto [hx, hy] = grad_xy(horiz);
    for (double v : hx.data) CHECK(v == 1.0);
    for (double v : hy.data) CHECK(v == 0.0);

    auto [vx, vy] = grad_xy(vert);
    for (double v : vx.data) CHECK(v == 0.0);
    for (double v : vy.data) CHECK(v == -1.0);  // I(i,j) - I(i+1,j) sign convention

    auto [fx, fy] = grad_xy(flat);
    for (double v : fx.data) CHECK(v == 0.0);
    for (double v : fy.data) CHECK(v == 0.0);

    Grid2D<double> tiny(1, 5, 0.0);
    CHECK_THROWS_AS(grad_xy(tiny), GridTooSmall);
}

TEST_CASE("stencils and magnitude/orientation match the literal oracle on 100 random grids") {
    Rng rng(77);
    for (int it = 0; it < 100; ++it) {
        int rows = 3 + static_cast<int>(rng.uniform_index(14));
        int cols = 3 + static_cast<int>(rng.uniform_index(14));
        Grid2D<double> g = rand_grid(rng, rows, cols, -5, 5);
        auto oracle = stencil_oracle(g);
        auto [dx, dy] = grad_xy(g);
        auto [lambda, theta] = magnitude_orientation(dx, dy);
        for (size_t i = 0; i < dx.data.size(); ++i) {
            CHECK(std::abs(dx.data[i] - oracle.dx.data[i]) < 1e-12);
            CHECK(std::abs(dy.data[i] - oracle.dy.data[i]) < 1e-12);
            CHECK(std::abs(lambda.data[i] - oracle.lambda.data[i]) < 1e-12);
            CHECK(std::abs(theta.data[i] - oracle.theta.data[i]) < 1e-12);
        }
    }
}

TEST_CASE("magnitude_orientation: hand cases") {
    Grid2D<double> dx(1, 3), dy(1, 3);
    dx.data = {1, 0, 3};
    dy.data = {0, 0, 4};
    auto [lambda, theta] = magnitude_orientation(dx, dy);
    CHECK(lambda.data[0] == 1.0);
    CHECK(theta.data[0] == 0.0);
    CHECK(lambda.data[1] == 0.0);
    CHECK(theta.data[1] == 0.0);  // convention at (0,0)
    CHECK(lambda.data[2] == 5.0);
    CHECK(theta.data[2] == Catch::Approx(std::atan2(4.0, 3.0)).margin(1e-15));
    CHECK(theta.data[2] == Catch::Approx(0.9273).margin(1e-4));
}

TEST_CASE("thin_edges: single-pixel maximum survives, plateaus keep interior") {
    Grid2D<double> lambda(3, 3, 0.1);
    lambda.at(1, 1) = 1.0;
    Grid2D<double> theta(3, 3, 0.0);
    Grid2D<double> out = thin_edges(lambda, theta);
    CHECK(out.at(1, 1) == 1.0);

    Grid2D<double> plateau(4, 4, 0.5);
    Grid2D<double> t0(4, 4, 0.0);
    Grid2D<double> thinned = thin_edges(plateau, t0);
    for (double v : thinned.data) CHECK(v == 0.5);  // >= comparison keeps ties
}

TEST_CASE("thin_edges: ideal vertical step edge thins to one pixel width") {
    // step at column 7: gradient column in the stencil output is single
    Grid2D<double> img(16, 16);
    for (int r = 0; r < 16; ++r)
        for (int c = 0; c < 16; ++c) img.at(r, c) = c >= 8 ? 1.0 : 0.0;
    auto [dx, dy] = grad_xy(img);
    auto [lambda, theta] = magnitude_orientation(dx, dy);
    Grid2D<double> out = thin_edges(lambda, theta);
    for (int r = 0; r < out.rows; ++r) {
        int nonzero = 0;
        for (int c = 0; c < out.cols; ++c) nonzero += out.at(r, c) > 0;
        CHECK(nonzero == 1);
    }
}

TEST_CASE("thin_edges: matches the brute-force oracle on random 16x16 grids") {
    Rng rng(404);
    for (int it = 0; it < 100; ++it) {
        Grid2D<double> g = rand_grid(rng, 16, 16);
        auto [dx, dy] = grad_xy(gaussian_smooth(g, 3, 1.0));
        auto [lambda, theta] = magnitude_orientation(dx, dy);
        Grid2D<double> mine = thin_edges(lambda, theta);
        Grid2D<double> oracle = nms_oracle(lambda, theta);
        CHECK(mine.data == oracle.data);
    }
}

TEST_CASE("thin_edges: never increases lambda; support nests") {
    Rng rng(405);
    for (int it = 0; it < 20; ++it) {
        Grid2D<double> lambda = rand_grid(rng, 12, 12);
        Grid2D<double> theta = rand_grid(rng, 12, 12, -kPi, kPi);
        Grid2D<double> thinned = thin_edges(lambda, theta);
        for (size_t i = 0; i < lambda.data.size(); ++i) {
            CHECK(thinned.data[i] <= lambda.data[i]);
            if (thinned.data[i] > 0) CHECK(lambda.data[i] > 0);
        }
    }
}

TEST_CASE("hysteresis: trivial and connectivity cases") {
    Grid2D<double> lambda(3, 5, 0.1);
    CHECK(hysteresis(lambda, 0.2, 0.5).data == std::vector<uint8_t>(15, 0));

    // one strong pixel with a weak 8-connected chain
    Grid2D<double> chain(3, 5, 0.0);
    chain.at(1, 0) = 1.0;   // strong
    chain.at(0, 1) = 0.3;   // weak, diagonal neighbor
    chain.at(1, 2) = 0.3;   // weak, diagonal from (0,1)
    chain.at(2, 3) = 0.3;   // weak, diagonal from (1,2)
    Grid2D<uint8_t> kept = hysteresis(chain, 0.25, 0.9);
    CHECK(kept.at(1, 0) == 1);
    CHECK(kept.at(0, 1) == 1);
    CHECK(kept.at(1, 2) == 1);
    CHECK(kept.at(2, 3) == 1);
    int total = 0;
    for (uint8_t v : kept.data) total += v;
    CHECK(total == 4);
}

TEST_CASE("hysteresis: matches the reachability oracle on random 12x12 grids") {
    Rng rng(406);
    for (int it = 0; it < 100; ++it) {
        Grid2D<double> lambda = rand_grid(rng, 12, 12);
        double high = rng.uniform(0.5, 0.95);
        double low = rng.uniform(0.05, high);
        Grid2D<uint8_t> mine = hysteresis(lambda, low, high);
        Grid2D<uint8_t> oracle = hysteresis_oracle(lambda, low, high);
        CHECK(mine.data == oracle.data);
    }
}

TEST_CASE("hysteresis: lowering both thresholds only grows the output") {
    Rng rng(407);
    for (int it = 0; it < 30; ++it) {
        Grid2D<double> lambda = rand_grid(rng, 10, 10);
        double high = rng.uniform(0.5, 0.9);
        double low = rng.uniform(0.1, high);
        double high2 = high * rng.uniform(0.5, 1.0);
        double low2 = std::min(low * rng.uniform(0.5, 1.0), high2);
        Grid2D<uint8_t> a = hysteresis(lambda, low, high);
        Grid2D<uint8_t> b = hysteresis(lambda, low2, high2);
        for (size_t i = 0; i < a.data.size(); ++i)
            if (a.data[i]) CHECK(b.data[i] == 1);
    }
}

TEST_CASE("edge_extract: constant features give empty edges") {
    Tensor4<double> feat(1, 4, 16, 16, 3.0);
    EdgeFeatures e = edge_extract(feat, 0);
    for (uint8_t v : e.binary.data) CHECK(v == 0);
    for (double v : e.magnitude.data) CHECK(v == 0.0);
    for (double v : e.orientation.data) CHECK(v == 0.0);
}

TEST_CASE("edge_extract: disk boundary yields a closed ring within 2 px") {
    const int N = 64;
    const double cx = 32.2, cy = 31.7, R = 14.0;
    Tensor4<double> feat(1, 1, N, N);
    for (int r = 0; r < N; ++r)
        for (int c = 0; c < N; ++c)
            feat.at(0, 0, r, c) = std::hypot(c - cx, r - cy) <= R ? 1.0 : 0.0;

    EdgeFeatures e = edge_extract(feat, 0);
    int count = 0;
    for (int r = 0; r < N; ++r)
        for (int c = 0; c < N; ++c)
            if (e.binary.at(r, c)) {
                ++count;
                // stencil output lives on the half-pixel grid; allow 2 px slack
                double d = std::hypot(c + 0.5 - cx, r + 0.5 - cy);
                CHECK(std::abs(d - R) <= 2.0);
            }
    CHECK(count >= 20);

    // ring closure: every angular sector contains an edge pixel
    for (int bin = 0; bin < 24; ++bin) {
        double ang = 2 * kPi * (bin + 0.5) / 24.0;
        double px = cx + R * std::cos(ang), py = cy + R * std::sin(ang);
        bool found = false;
        for (int r = 0; r < N && !found; ++r)
            for (int c = 0; c < N && !found; ++c)
                if (e.binary.at(r, c) && std::hypot(c + 0.5 - px, r + 0.5 - py) <= 2.5) found = true;
        CHECK(found);
    }
}

TEST_CASE("edge_extract: deterministic, and binary pixels clear the low threshold") {
    Rng rng(55);
    Tensor4<double> feat(1, 3, 32, 32);
    for (auto& v : feat.data) v = rng.uniform();
    EdgeFeatures a = edge_extract(feat, 0);
    EdgeFeatures b = edge_extract(feat, 0);
    CHECK(a.binary.data == b.binary.data);
    CHECK(a.magnitude.data == b.magnitude.data);
    CHECK(a.orientation.data == b.orientation.data);
    for (int r = 0; r < 32; ++r)
        for (int c = 0; c < 32; ++c)
            if (a.binary.at(r, c)) CHECK(a.magnitude.at(r, c) >= a.low_threshold);
}

TEST_CASE("edge_extract: labels attach near mask structures when provided") {
    const int N = 32;
    Tensor4<double> feat(1, 1, N, N);
    Grid2D<uint8_t> mask(N, N);
    for (int r = 0; r < N; ++r)
        for (int c = 0; c < N; ++c) {
            bool inside = std::hypot(c - 16.0, r - 16.0) <= 8.0;
            feat.at(0, 0, r, c) = inside ? 1.0 : 0.0;
            mask.at(r, c) = inside ? 3 : 0;
        }
    EdgeFeatures e = edge_extract(feat, 0, &mask);
    REQUIRE(e.label.has_value());
    int labeled = 0;
    for (int r = 0; r < N; ++r)
        for (int c = 0; c < N; ++c) {
            if (!e.binary.at(r, c)) continue;
            if (e.label->at(r, c) != 0) {
                CHECK(e.label->at(r, c) == 3);
                ++labeled;
            }
        }
    CHECK(labeled > 0);
}

TEST_CASE("scaled kernel size follows the level size") {
    CHECK(scaled_kernel_size(8, 8) == 3);
    CHECK(scaled_kernel_size(16, 16) == 3);
    CHECK(scaled_kernel_size(128, 128) == 3);
    CHECK(scaled_kernel_size(160, 160) == 5);
    CHECK(scaled_kernel_size(256, 256) == 7);
}

TEST_CASE("edge_channels: packing and exact round trip") {
    EdgeFeatures empty;
    empty.binary = Grid2D<uint8_t>(8, 8);
    empty.magnitude = Grid2D<double>(8, 8);
    empty.orientation = Grid2D<double>(8, 8);
    Tensor4<double> ch = edge_channels<double>(empty);
    for (double v : ch.data) CHECK(v == 0.0);

    Rng rng(66);
    Tensor4<double> feat(1, 2, 32, 32);
    for (auto& v : feat.data) v = rng.uniform();
    EdgeFeatures e = edge_extract(feat, 0);
    Tensor4<double> packed = edge_channels<double>(e);
    REQUIRE(packed.c == 3);

    double max_lambda = 0;
    for (double v : e.magnitude.data) max_lambda = std::max(max_lambda, v);
    REQUIRE(max_lambda > 0);
    double max_ch1 = 0;
    for (int i = 0; i < 32 * 32; ++i) {
        CHECK(packed.plane(0, 0)[i] == static_cast<double>(e.binary.data[static_cast<size_t>(i)]));
        CHECK(packed.plane(0, 1)[i] == Catch::Approx(e.magnitude.data[static_cast<size_t>(i)] / max_lambda).margin(1e-15));
        CHECK(packed.plane(0, 2)[i] == Catch::Approx(e.orientation.data[static_cast<size_t>(i)] / kPi).margin(1e-15));
        max_ch1 = std::max(max_ch1, packed.plane(0, 1)[i]);
    }
    CHECK(max_ch1 == 1.0);  // the lambda-max pixel packs to exactly 1
}
