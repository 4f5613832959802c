#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "eeunet/error.hpp"
#include "eeunet/nifti.hpp"
#include "eeunet/rng.hpp"
#include "eeunet/tensor.hpp"

namespace eeunet::data {

inline constexpr int kSliceSize = 128;
inline constexpr int kNumClasses = 4;  // 0=background, 1=RV, 2=Myo, 3=LV

enum class Phase : uint8_t { ED = 0, ES = 1 };
enum class Pathology : uint8_t { NOR = 0, MINF = 1, DCM = 2, HCM = 3, ARV = 4 };

inline const char* phase_name(Phase p) { return p == Phase::ED ? "ED" : "ES"; }
inline const char* pathology_name(Pathology p) {
    static const char* names[] = {"NOR", "MINF", "DCM", "HCM", "ARV"};
    return names[static_cast<int>(p)];
}
inline Phase phase_from_name(const std::string& s) {
    if (s == "ED") return Phase::ED;
    if (s == "ES") return Phase::ES;
    throw DataError("unknown phase '" + s + "'");
}
inline Pathology pathology_from_name(const std::string& s) {
    for (int i = 0; i < 5; ++i)
        if (s == pathology_name(static_cast<Pathology>(i))) return static_cast<Pathology>(i);
    throw DataError("unknown pathology class '" + s + "'");
}

struct SampleMeta {
    std::string patient_id;
    Phase phase = Phase::ED;
    int slice_index = 0;
    Pathology pathology = Pathology::NOR;
};

// One training-ready slice: 128x128 image in [0,1] plus its label mask.
struct SliceSample {
    Grid2D<float> image;   // kSliceSize x kSliceSize, values in [0,1]
    Grid2D<uint8_t> mask;  // same dims, values in {0,1,2,3}
    double spacing_x = 1.0, spacing_y = 1.0;  // mm per pixel after resize
    SampleMeta meta;

    void validate() const {
        if (image.rows != kSliceSize || image.cols != kSliceSize || !mask.same_shape(Grid2D<uint8_t>(kSliceSize, kSliceSize)))
            throw DimMismatch("slice sample must be 128x128");
        if (!(spacing_x > 0) || !(spacing_y > 0)) throw NonPositiveSpacing("sample spacing must be positive");
        for (float v : image.data)
            if (!(v >= 0.0f && v <= 1.0f)) throw DataError("image value outside [0,1]");
        for (uint8_t m : mask.data)
            if (m >= kNumClasses) throw UnknownLabel("mask label " + std::to_string(m) + " outside {0..3}");
    }
};

using eeunet::percentile;

// Clip to the [p1, p99] percentile band, then map affinely onto [0,1].
// Constant (or percentile-degenerate) slices map to all-zeros.
inline Grid2D<float> normalize_slice(const Grid2D<float>& raw) {
    if (raw.size() == 0) throw DataError("normalize_slice on empty grid");
    for (float v : raw.data)
        if (!std::isfinite(v)) throw DataError("normalize_slice on non-finite grid");
    double p1 = percentile(raw.data, 0.01);
    double p99 = percentile(raw.data, 0.99);
    Grid2D<float> out(raw.rows, raw.cols);
    if (!(p99 > p1)) return out;  // all zeros
    double inv = 1.0 / (p99 - p1);
    for (size_t i = 0; i < raw.data.size(); ++i) {
        double v = std::clamp(static_cast<double>(raw.data[i]), p1, p99);
        out.data[i] = static_cast<float>((v - p1) * inv);
    }
    return out;
}

// Bilinear resize with the align-corners-false convention: output pixel
// centers map to src = (dst + 0.5) * (in/out) - 0.5, samples clamped at the
// border. Identity when dims match.
inline Grid2D<float> resize_bilinear(const Grid2D<float>& src, int out_rows, int out_cols) {
    if (src.rows < 1 || src.cols < 1) throw DimMismatch("resize source must be non-empty");
    Grid2D<float> out(out_rows, out_cols);
    double sr = static_cast<double>(src.rows) / out_rows;
    double sc = static_cast<double>(src.cols) / out_cols;
    for (int r = 0; r < out_rows; ++r) {
        double fy = (r + 0.5) * sr - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        double wy = fy - y0;
        int y0c = std::clamp(y0, 0, src.rows - 1);
        int y1c = std::clamp(y0 + 1, 0, src.rows - 1);
        for (int c = 0; c < out_cols; ++c) {
            double fx = (c + 0.5) * sc - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            double wx = fx - x0;
            int x0c = std::clamp(x0, 0, src.cols - 1);
            int x1c = std::clamp(x0 + 1, 0, src.cols - 1);
            double top = (1.0 - wx) * src.at(y0c, x0c) + wx * src.at(y0c, x1c);
            double bot = (1.0 - wx) * src.at(y1c, x0c) + wx * src.at(y1c, x1c);
            out.at(r, c) = static_cast<float>((1.0 - wy) * top + wy * bot);
        }
    }
    return out;
}

// Nearest-neighbor resize (same center mapping); output values are always a
// subset of the input values, which is what label masks need.
template <typename T>
inline Grid2D<T> resize_nearest(const Grid2D<T>& src, int out_rows, int out_cols) {
    if (src.rows < 1 || src.cols < 1) throw DimMismatch("resize source must be non-empty");
    Grid2D<T> out(out_rows, out_cols);
    double sr = static_cast<double>(src.rows) / out_rows;
    double sc = static_cast<double>(src.cols) / out_cols;
    for (int r = 0; r < out_rows; ++r) {
        int y = std::clamp(static_cast<int>(std::floor((r + 0.5) * sr)), 0, src.rows - 1);
        for (int c = 0; c < out_cols; ++c) {
            int x = std::clamp(static_cast<int>(std::floor((c + 0.5) * sc)), 0, src.cols - 1);
            out.at(r, c) = src.at(y, x);
        }
    }
    return out;
}

// Optional remap from the dataset's stored mask integers onto the project
// encoding {0=bg, 1=RV, 2=Myo, 3=LV}. Identity by default.
struct LabelRemap {
    std::array<int, 4> stored{0, 1, 2, 3};  // stored[class] = integer in the mask file

    uint8_t to_class(int stored_value) const {
        for (int c = 0; c < 4; ++c)
            if (stored[c] == stored_value) return static_cast<uint8_t>(c);
        throw UnknownLabel("mask value " + std::to_string(stored_value) + " not in the label map");
    }
};

// Cut a (volume, mask) pair into per-slice training samples: normalize and
// bilinear-resize the image, nearest-resize the mask, rescale spacing so the
// physical extent of each axis is conserved.
inline std::vector<SliceSample> volume_to_slices(const nifti::Volume& vol, const nifti::Volume& mask_vol,
                                                 const SampleMeta& meta,
                                                 const LabelRemap& remap = LabelRemap{}) {
    if (vol.dims != mask_vol.dims) throw DimMismatch("image and mask volumes disagree on dims");
    if (vol.dims[3] != 1) throw DimMismatch("volume_to_slices expects a single frame; select_frame first");
    const int nx = vol.dims[0], ny = vol.dims[1], nz = vol.dims[2];

    std::vector<SliceSample> out;
    out.reserve(static_cast<size_t>(nz));
    for (int z = 0; z < nz; ++z) {
        Grid2D<float> img(ny, nx);
        Grid2D<uint8_t> msk(ny, nx);
        for (int y = 0; y < ny; ++y)
            for (int x = 0; x < nx; ++x) {
                size_t idx = static_cast<size_t>(x) + static_cast<size_t>(nx) * (y + static_cast<size_t>(ny) * z);
                img.at(y, x) = vol.data[idx];
                float mv = mask_vol.data[idx];
                if (mv != std::floor(mv)) throw UnknownLabel("non-integer mask value");
                msk.at(y, x) = remap.to_class(static_cast<int>(mv));
            }

        SliceSample s;
        s.image = resize_bilinear(normalize_slice(img), kSliceSize, kSliceSize);
        for (float& v : s.image.data) v = std::clamp(v, 0.0f, 1.0f);
        s.mask = resize_nearest(msk, kSliceSize, kSliceSize);
        s.spacing_x = vol.spacing[0] * nx / kSliceSize;
        s.spacing_y = vol.spacing[1] * ny / kSliceSize;
        s.meta = meta;
        s.meta.slice_index = z;
        s.validate();
        out.push_back(std::move(s));
    }
    return out;
}

// Patient-level k-fold plan; assignment is by patient, never by slice.
struct FoldPlan {
    std::vector<std::set<std::string>> folds;

    int fold_of(const std::string& patient) const {
        for (size_t i = 0; i < folds.size(); ++i)
            if (folds[i].count(patient)) return static_cast<int>(i);
        return -1;
    }
};

// Stratified by pathology class: each class's patients are shuffled and
// dealt round-robin, with the starting fold rotated per class so remainders
// spread out. Deterministic in (patients, k, seed).
inline FoldPlan make_folds(const std::vector<std::pair<std::string, Pathology>>& patients, int k,
                           uint64_t seed) {
    if (k < 2) throw DataError("make_folds requires k >= 2");
    if (patients.size() < static_cast<size_t>(k))
        throw TooFewPatients("need at least " + std::to_string(k) + " patients for " + std::to_string(k) +
                             " folds");

    std::map<Pathology, std::vector<std::string>> by_class;
    std::set<std::string> seen;
    for (const auto& [id, cls] : patients) {
        if (!seen.insert(id).second) throw DataError("duplicate patient id '" + id + "'");
        by_class[cls].push_back(id);
    }

    FoldPlan plan;
    plan.folds.resize(static_cast<size_t>(k));
    Rng rng(seed);
    int class_rot = 0;
    for (auto& [cls, ids] : by_class) {
        std::sort(ids.begin(), ids.end());
        rng.shuffle(ids);
        for (size_t i = 0; i < ids.size(); ++i)
            plan.folds[(i + class_rot) % static_cast<size_t>(k)].insert(ids[i]);
        ++class_rot;
    }
    return plan;
}

namespace detail {

template <typename T, typename Sampler>
inline Grid2D<T> warp(const Grid2D<T>& src, double angle_rad, bool hflip, Sampler sample) {
    Grid2D<T> out(src.rows, src.cols);
    double cy = (src.rows - 1) * 0.5;
    double cx = (src.cols - 1) * 0.5;
    double ca = std::cos(angle_rad), sa = std::sin(angle_rad);
    for (int r = 0; r < out.rows; ++r)
        for (int c = 0; c < out.cols; ++c) {
            // inverse map: rotate the output coordinate back into the source
            double x = c - cx, y = r - cy;
            double sx = ca * x + sa * y + cx;
            double sy = -sa * x + ca * y + cy;
            if (hflip) sx = (src.cols - 1) - sx;
            out.at(r, c) = sample(src, sy, sx);
        }
    return out;
}

template <typename T>
inline T sample_nearest(const Grid2D<T>& g, double sy, double sx) {
    int y = static_cast<int>(std::llround(sy));
    int x = static_cast<int>(std::llround(sx));
    if (y < 0 || y >= g.rows || x < 0 || x >= g.cols) return T(0);
    return g.at(y, x);
}

inline float sample_bilinear(const Grid2D<float>& g, double sy, double sx) {
    if (sy < -0.5 || sy > g.rows - 0.5 || sx < -0.5 || sx > g.cols - 0.5) return 0.0f;
    int y0 = static_cast<int>(std::floor(sy));
    int x0 = static_cast<int>(std::floor(sx));
    double wy = sy - y0, wx = sx - x0;
    auto px = [&](int y, int x) -> double {
        if (y < 0 || y >= g.rows || x < 0 || x >= g.cols) return 0.0;
        return g.at(y, x);
    };
    double top = (1 - wx) * px(y0, x0) + wx * px(y0, x0 + 1);
    double bot = (1 - wx) * px(y0 + 1, x0) + wx * px(y0 + 1, x0 + 1);
    return static_cast<float>((1 - wy) * top + wy * bot);
}

}  // namespace detail

// Training-time augmentation: rotation in [-10, +10] degrees plus a coin-flip
// horizontal mirror, the same transform applied to image (bilinear) and mask
// (nearest). Off by default project-wide; identity when disabled.
inline SliceSample augment(const SliceSample& in, uint64_t seed, bool enabled) {
    if (!enabled) return in;
    Rng rng(seed);
    double angle = rng.uniform(-10.0, 10.0) * 3.14159265358979323846 / 180.0;
    bool flip = rng.bernoulli(0.5);

    SliceSample out = in;
    out.image = detail::warp(in.image, angle, flip, detail::sample_bilinear);
    out.mask = detail::warp(in.mask, angle, flip, detail::sample_nearest<uint8_t>);
    for (float& v : out.image.data) v = std::clamp(v, 0.0f, 1.0f);
    return out;
}

}  // namespace eeunet::data
