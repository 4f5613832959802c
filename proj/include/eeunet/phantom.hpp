#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "eeunet/dataset.hpp"
#include "eeunet/rng.hpp"

namespace eeunet::data {

struct PhantomConfig {
    double noise_sigma = 0.02;  // additive Gaussian noise, capped at 0.05
};

// Desk-scale stand-in for real cine stacks: LV is a filled disk, Myo an
// annulus of width >= 4 px around it, RV a crescent hugging the annulus.
// The four classes get well-separated flat intensities (gaps >= 0.18 before
// noise). Every draw is a distinct synthetic patient; phases alternate and
// pathology tags cycle so grouped reports have data in every cell.
inline std::vector<SliceSample> gen_phantom(uint64_t seed, int count, PhantomConfig cfg = {}) {
    if (count < 1) throw DataError("gen_phantom requires count >= 1");
    double sigma = std::clamp(cfg.noise_sigma, 0.0, 0.05);

    Rng rng(seed);
    std::vector<SliceSample> out;
    out.reserve(static_cast<size_t>(count));

    for (int k = 0; k < count; ++k) {
        double cx = rng.uniform(56.0, 72.0);
        double cy = rng.uniform(56.0, 72.0);
        double r_lv = rng.uniform(10.0, 16.0);
        double r_myo = r_lv + rng.uniform(4.5, 7.0);
        double r_rv = rng.uniform(12.0, 16.0);
        double phi = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
        double dist_rv = r_myo + 0.5 * r_rv;
        double rv_cx = cx + dist_rv * std::cos(phi);
        double rv_cy = cy + dist_rv * std::sin(phi);

        // Intensity bands ordered LV < Myo < background < RV so that the
        // midpoint of every class adjacency falls inside the background
        // band: a boundary pixel whose receptive-field average is ambiguous
        // then resembles background, not a third foreground class.
        double v_lv = rng.uniform(0.04, 0.08);
        double v_myo = rng.uniform(0.25, 0.29);
        double v_bg = rng.uniform(0.50, 0.54);
        double v_rv = rng.uniform(0.74, 0.78);

        SliceSample s;
        s.image = Grid2D<float>(kSliceSize, kSliceSize);
        s.mask = Grid2D<uint8_t>(kSliceSize, kSliceSize);
        s.spacing_x = 1.0;
        s.spacing_y = 1.0;

        for (int r = 0; r < kSliceSize; ++r)
            for (int c = 0; c < kSliceSize; ++c) {
                double d_lv = std::hypot(c - cx, r - cy);
                double d_rv = std::hypot(c - rv_cx, r - rv_cy);
                uint8_t label = 0;
                if (d_lv <= r_lv) label = 3;
                else if (d_lv <= r_myo) label = 2;
                else if (d_rv <= r_rv) label = 1;  // outside the annulus: crescent
                s.mask.at(r, c) = label;
                double base = label == 3 ? v_lv : label == 2 ? v_myo : label == 1 ? v_rv : v_bg;
                s.image.at(r, c) = static_cast<float>(base);
            }

        // Noise draws happen for every pixel regardless of sigma so the
        // geometry for a given seed does not depend on the noise setting.
        for (float& v : s.image.data) {
            double n = rng.normal();
            v = static_cast<float>(std::clamp(static_cast<double>(v) + sigma * n, 0.0, 1.0));
        }

        char pid[32];
        std::snprintf(pid, sizeof(pid), "phantom%03d", k);
        s.meta.patient_id = pid;
        s.meta.phase = (k % 2 == 0) ? Phase::ED : Phase::ES;
        s.meta.pathology = static_cast<Pathology>(k % 5);
        s.meta.slice_index = 0;
        s.validate();
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace eeunet::data
