#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <optional>
#include <vector>

#include "eeunet/error.hpp"
#include "eeunet/tensor.hpp"

namespace eeunet::edge {

inline constexpr double kPi = 3.14159265358979323846;

enum class EdgeLabel : uint8_t { none = 0, rv_edge = 1, myo_edge = 2, lv_edge = 3 };

// Per-level edge attributes. Magnitude and orientation are stored at the
// feature's full H x W (the stencil output is zero-padded on the last row
// and column); orientation is 0 wherever magnitude is 0.
struct EdgeFeatures {
    Grid2D<uint8_t> binary;    // thinned + hysteresis-selected edge pixels
    Grid2D<double> magnitude;  // lambda, post-thinning
    Grid2D<double> orientation;
    std::optional<Grid2D<uint8_t>> label;  // only when a ground-truth mask was supplied
    double low_threshold = 0, high_threshold = 0;
};

// LIFO of per-encoder-level edge features; the decoder pops top-down.
class EdgeStack {
public:
    void push(EdgeFeatures e) { items_.push_back(std::move(e)); }
    EdgeFeatures pop() {
        if (items_.empty()) throw ShapeMismatch("EdgeStack::pop on empty stack");
        EdgeFeatures e = std::move(items_.back());
        items_.pop_back();
        return e;
    }
    size_t size() const { return items_.size(); }
    const EdgeFeatures& peek(size_t from_top = 0) const { return items_[items_.size() - 1 - from_top]; }

private:
    std::vector<EdgeFeatures> items_;
};

// Separable Gaussian, kernel normalized to sum 1, reflect boundary
// (abc|cba: index -1 maps to 0, index n maps to n-1).
inline Grid2D<double> gaussian_smooth(const Grid2D<double>& g, int r, double w) {
    if (r < 3 || r % 2 == 0) throw BadKernel("gaussian kernel size must be odd and >= 3");
    if (!(w > 0)) throw BadKernel("gaussian spatial weight must be positive");

    std::vector<double> kernel(static_cast<size_t>(r));
    const int half = r / 2;
    double sum = 0;
    for (int i = 0; i < r; ++i) {
        const double d = i - half;
        kernel[static_cast<size_t>(i)] = std::exp(-(d * d) / (2.0 * w * w));
        sum += kernel[static_cast<size_t>(i)];
    }
    for (double& k : kernel) k /= sum;

    auto reflect = [](int idx, int n) {
        if (idx < 0) idx = -idx - 1;
        if (idx >= n) idx = 2 * n - idx - 1;
        return std::clamp(idx, 0, n - 1);
    };

    Grid2D<double> tmp(g.rows, g.cols);
    for (int row = 0; row < g.rows; ++row)
        for (int col = 0; col < g.cols; ++col) {
            double acc = 0;
            for (int k = -half; k <= half; ++k)
                acc += kernel[static_cast<size_t>(k + half)] * g.at(row, reflect(col + k, g.cols));
            tmp.at(row, col) = acc;
        }
    Grid2D<double> out(g.rows, g.cols);
    for (int row = 0; row < g.rows; ++row)
        for (int col = 0; col < g.cols; ++col) {
            double acc = 0;
            for (int k = -half; k <= half; ++k)
                acc += kernel[static_cast<size_t>(k + half)] * tmp.at(reflect(row + k, g.rows), col);
            out.at(row, col) = acc;
        }
    return out;
}

// The 2x2 gradient stencils, with i the row and j the column:
//   dx(i,j) = (I(i,j+1) - I(i,j) + I(i+1,j+1) - I(i+1,j)) / 2
//   dy(i,j) = (I(i,j)   - I(i+1,j) + I(i,j+1) - I(i+1,j+1)) / 2
// The stencil consumes one row and one column: output is (H-1) x (W-1).
inline std::pair<Grid2D<double>, Grid2D<double>> grad_xy(const Grid2D<double>& g) {
    if (g.rows < 2 || g.cols < 2) throw GridTooSmall("grad_xy needs at least a 2x2 grid");
    Grid2D<double> dx(g.rows - 1, g.cols - 1);
    Grid2D<double> dy(g.rows - 1, g.cols - 1);
    for (int i = 0; i + 1 < g.rows; ++i)
        for (int j = 0; j + 1 < g.cols; ++j) {
            dx.at(i, j) = (g.at(i, j + 1) - g.at(i, j) + g.at(i + 1, j + 1) - g.at(i + 1, j)) / 2.0;
            dy.at(i, j) = (g.at(i, j) - g.at(i + 1, j) + g.at(i, j + 1) - g.at(i + 1, j + 1)) / 2.0;
        }
    return {dx, dy};
}

// lambda = sqrt(dx^2 + dy^2); theta = atan2(dy, dx), 0 at (0,0) by
// convention (the single-argument arctangent is undefined at dx = 0).
inline std::pair<Grid2D<double>, Grid2D<double>> magnitude_orientation(const Grid2D<double>& dx,
                                                                       const Grid2D<double>& dy) {
    if (!dx.same_shape(dy)) throw ShapeMismatch("magnitude_orientation: shape mismatch");
    Grid2D<double> lambda(dx.rows, dx.cols);
    Grid2D<double> theta(dx.rows, dx.cols);
    for (size_t i = 0; i < dx.data.size(); ++i) {
        const double gx = dx.data[i], gy = dy.data[i];
        lambda.data[i] = std::sqrt(gx * gx + gy * gy);
        theta.data[i] = (gx == 0.0 && gy == 0.0) ? 0.0 : std::atan2(gy, gx);
    }
    return {lambda, theta};
}

// Gradient direction quantized to {0, 45, 90, 135} degrees (mod 180).
inline int quantize_direction(double theta) {
    double deg = theta * 180.0 / kPi;
    if (deg < 0) deg += 180.0;
    if (deg >= 180.0) deg -= 180.0;
    if (deg < 22.5 || deg >= 157.5) return 0;
    if (deg < 67.5) return 45;
    if (deg < 112.5) return 90;
    return 135;
}

// Non-maximum suppression along the quantized gradient direction. A pixel
// survives iff lambda >= both neighbors (ties survive, so plateaus keep
// their interior); neighbors outside the grid count as 0.
inline Grid2D<double> thin_edges(const Grid2D<double>& lambda, const Grid2D<double>& theta) {
    if (!lambda.same_shape(theta)) throw ShapeMismatch("thin_edges: shape mismatch");
    Grid2D<double> out(lambda.rows, lambda.cols);
    auto lam = [&](int r, int c) -> double {
        if (r < 0 || r >= lambda.rows || c < 0 || c >= lambda.cols) return 0.0;
        return lambda.at(r, c);
    };
    for (int r = 0; r < lambda.rows; ++r)
        for (int c = 0; c < lambda.cols; ++c) {
            int dr = 0, dc = 0;
            switch (quantize_direction(theta.at(r, c))) {
                case 0: dr = 0; dc = 1; break;    // gradient along x: compare left/right
                case 45: dr = 1; dc = 1; break;
                case 90: dr = 1; dc = 0; break;   // gradient along y: compare up/down
                case 135: dr = 1; dc = -1; break;
            }
            const double v = lambda.at(r, c);
            out.at(r, c) = (v >= lam(r - dr, c - dc) && v >= lam(r + dr, c + dc)) ? v : 0.0;
        }
    return out;
}

// Double-threshold hysteresis: pixels >= high seed a flood fill that keeps
// 8-connected pixels in [low, high).
inline Grid2D<uint8_t> hysteresis(const Grid2D<double>& lambda, double low, double high) {
    if (!(low >= 0) || low > high) throw DataError("hysteresis requires 0 <= low <= high");
    Grid2D<uint8_t> keep(lambda.rows, lambda.cols);
    std::deque<std::pair<int, int>> frontier;
    for (int r = 0; r < lambda.rows; ++r)
        for (int c = 0; c < lambda.cols; ++c)
            if (lambda.at(r, c) >= high) {
                keep.at(r, c) = 1;
                frontier.emplace_back(r, c);
            }
    while (!frontier.empty()) {
        auto [r, c] = frontier.front();
        frontier.pop_front();
        for (int dr = -1; dr <= 1; ++dr)
            for (int dc = -1; dc <= 1; ++dc) {
                const int nr = r + dr, nc = c + dc;
                if (nr < 0 || nr >= lambda.rows || nc < 0 || nc >= lambda.cols) continue;
                if (keep.at(nr, nc)) continue;
                if (lambda.at(nr, nc) >= low) {
                    keep.at(nr, nc) = 1;
                    frontier.emplace_back(nr, nc);
                }
            }
    }
    return keep;
}

struct EdgeExtractConfig {
    // Kernel size scales with the level: largest odd integer <= max(3, min(H,W)/32).
    // The spatial weight is (constant * r) / 2 with constant defaulting to 1.
    double w_constant = 1.0;
    int r_override = 0;       // > 0 forces the kernel size
    double w_override = 0;    // > 0 forces the spatial weight
    double high_quantile = 0.75;  // of nonzero thinned lambda
    double low_fraction = 0.4;    // low = fraction * high
    double high_override = -1;    // >= 0 forces the high threshold
    double low_override = -1;
};

inline int scaled_kernel_size(int h, int w) {
    double m = std::max(3.0, static_cast<double>(std::min(h, w)) / 32.0);
    int r = static_cast<int>(std::floor(m));
    if (r % 2 == 0) r -= 1;
    return std::max(r, 3);
}

// The full per-level pipeline: channel mean -> Gaussian denoise -> 2x2
// stencils -> lambda/theta -> non-max suppression -> hysteresis. Thresholds
// come from the thinned-lambda distribution (75th percentile of nonzero
// values, low = 0.4 * high) so they track the feature scale; an all-flat
// input yields empty edges. The optional mask only attaches diagnostic
// labels; the returned channels never depend on it.
template <typename T>
inline EdgeFeatures edge_extract(const Tensor4<T>& feature, int batch_index,
                                 const Grid2D<uint8_t>* mask = nullptr, EdgeExtractConfig cfg = {}) {
    if (feature.h < 4 || feature.w < 4) throw GridTooSmall("edge_extract needs spatial dims >= 4x4");
    if (batch_index < 0 || batch_index >= feature.n) throw ShapeMismatch("edge_extract batch index");

    const int H = feature.h, W = feature.w;
    Grid2D<double> mean(H, W);
    for (int c = 0; c < feature.c; ++c) {
        const T* p = feature.plane(batch_index, c);
        for (int i = 0; i < H * W; ++i) mean.data[static_cast<size_t>(i)] += p[i];
    }
    for (double& v : mean.data) v /= feature.c;

    const int r = cfg.r_override > 0 ? cfg.r_override : scaled_kernel_size(H, W);
    const double w = cfg.w_override > 0 ? cfg.w_override : cfg.w_constant * r / 2.0;
    Grid2D<double> denoised = gaussian_smooth(mean, r, w);

    auto [gx, gy] = grad_xy(denoised);
    auto [lambda, theta] = magnitude_orientation(gx, gy);
    Grid2D<double> thinned = thin_edges(lambda, theta);

    double high = cfg.high_override, low = cfg.low_override;
    if (high < 0) {
        std::vector<double> nonzero;
        for (double v : thinned.data)
            if (v > 0) nonzero.push_back(v);
        if (nonzero.empty()) {
            high = low = 0;
        } else {
            high = percentile(nonzero, cfg.high_quantile);
            low = cfg.low_fraction * high;
        }
    }
    if (low < 0) low = cfg.low_fraction * high;

    EdgeFeatures e;
    e.low_threshold = low;
    e.high_threshold = high;
    e.magnitude = Grid2D<double>(H, W);
    e.orientation = Grid2D<double>(H, W);
    e.binary = Grid2D<uint8_t>(H, W);

    bool any_edge = high > 0;
    Grid2D<uint8_t> kept =
        any_edge ? hysteresis(thinned, low, high) : Grid2D<uint8_t>(thinned.rows, thinned.cols);
    for (int row = 0; row + 1 < H; ++row)
        for (int col = 0; col + 1 < W; ++col) {
            const double lam = thinned.at(row, col);
            e.magnitude.at(row, col) = lam;
            e.orientation.at(row, col) = lam > 0 ? theta.at(row, col) : 0.0;
            e.binary.at(row, col) = kept.at(row, col);
        }

    if (mask) {
        if (mask->rows != H || mask->cols != W) throw DimMismatch("edge_extract: mask dims != feature dims");
        Grid2D<uint8_t> lab(H, W);
        for (int row = 0; row < H; ++row)
            for (int col = 0; col < W; ++col) {
                if (!e.binary.at(row, col)) continue;
                // nearest nonzero-mask pixel within 2 px
                double best_d = 1e9;
                uint8_t best = 0;
                for (int dr = -2; dr <= 2; ++dr)
                    for (int dc = -2; dc <= 2; ++dc) {
                        const int nr = row + dr, nc = col + dc;
                        if (nr < 0 || nr >= H || nc < 0 || nc >= W) continue;
                        const uint8_t m = mask->at(nr, nc);
                        if (m == 0) continue;
                        const double d = std::sqrt(static_cast<double>(dr * dr + dc * dc));
                        if (d <= 2.0 && d < best_d) {
                            best_d = d;
                            best = m;
                        }
                    }
                lab.at(row, col) = best;
            }
        e.label = std::move(lab);
    }
    return e;
}

// Pack EdgeFeatures into the 3 infusion channels: binary {0,1}, lambda
// normalized to [0,1] by its max, theta / pi in (-1, 1].
template <typename T>
inline Tensor4<T> edge_channels(const EdgeFeatures& e) {
    const int H = e.binary.rows, W = e.binary.cols;
    Tensor4<T> out(1, 3, H, W);
    double max_lambda = 0;
    for (double v : e.magnitude.data) max_lambda = std::max(max_lambda, v);
    const double inv = max_lambda > 0 ? 1.0 / max_lambda : 0.0;
    T* b = out.plane(0, 0);
    T* l = out.plane(0, 1);
    T* t = out.plane(0, 2);
    for (int i = 0; i < H * W; ++i) {
        b[i] = static_cast<T>(e.binary.data[static_cast<size_t>(i)]);
        l[i] = static_cast<T>(e.magnitude.data[static_cast<size_t>(i)] * inv);
        t[i] = static_cast<T>(e.orientation.data[static_cast<size_t>(i)] / kPi);
    }
    return out;
}

}  // namespace eeunet::edge
