#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "eeunet/dataset.hpp"
#include "eeunet/error.hpp"
#include "eeunet/tensor.hpp"

namespace eeunet::metrics {

inline constexpr int kNumClasses = data::kNumClasses;
inline constexpr double kDiceSmooth = 1e-6;

// Per-class loss weights, normalized to sum 1.
struct ClassWeights {
    std::array<double, kNumClasses> w{0.25, 0.25, 0.25, 0.25};

    static ClassWeights uniform() { return ClassWeights{}; }

    static ClassWeights from_raw(std::array<double, kNumClasses> raw) {
        double sum = 0;
        for (double v : raw) {
            if (v < 0) throw DataError("class weights must be non-negative");
            sum += v;
        }
        if (!(sum > 0)) throw DataError("class weights must not all be zero");
        ClassWeights cw;
        for (int i = 0; i < kNumClasses; ++i) cw.w[static_cast<size_t>(i)] = raw[static_cast<size_t>(i)] / sum;
        return cw;
    }

    // w_p proportional to 1 / pixel frequency of class p; empty classes are
    // clamped to one pixel so the weight stays finite.
    static ClassWeights inverse_frequency(const std::vector<Grid2D<uint8_t>>& masks) {
        std::array<double, kNumClasses> count{};
        for (const auto& m : masks)
            for (uint8_t v : m.data) {
                if (v >= kNumClasses) throw UnknownLabel("mask label outside {0..3}");
                count[v] += 1;
            }
        std::array<double, kNumClasses> raw{};
        for (int c = 0; c < kNumClasses; ++c)
            raw[static_cast<size_t>(c)] = 1.0 / std::max(count[static_cast<size_t>(c)], 1.0);
        return from_raw(raw);
    }
};

template <typename T>
inline Tensor4<T> one_hot(const std::vector<const Grid2D<uint8_t>*>& masks) {
    if (masks.empty()) throw ShapeMismatch("one_hot: no masks");
    const int H = masks[0]->rows, W = masks[0]->cols;
    Tensor4<T> out(static_cast<int>(masks.size()), kNumClasses, H, W);
    for (size_t n = 0; n < masks.size(); ++n) {
        if (masks[n]->rows != H || masks[n]->cols != W) throw ShapeMismatch("one_hot: mask dims differ");
        for (int i = 0; i < H * W; ++i) {
            uint8_t v = masks[n]->data[static_cast<size_t>(i)];
            if (v >= kNumClasses) throw UnknownLabel("mask label outside {0..3}");
            out.plane(static_cast<int>(n), v)[i] = T(1);
        }
    }
    return out;
}

// Smoothed soft Dice similarity for one class, pooled over the whole batch:
//   D_p = (2 * sum(x*y) + s) / (sum(x) + sum(y) + s)
// x are the class-p probabilities, y the one-hot targets. The smoothing
// makes empty-vs-empty come out as 1 and keeps the score differentiable.
template <typename T>
inline double soft_dice_class(const Tensor4<T>& probs, const Tensor4<T>& onehot, int p) {
    if (!probs.same_shape(onehot)) throw ShapeMismatch("soft_dice_class: shape mismatch");
    if (p < 0 || p >= probs.c) throw ShapeMismatch("soft_dice_class: class index");
    double inter = 0, sum_x = 0, sum_y = 0;
    for (int n = 0; n < probs.n; ++n) {
        const T* xp = probs.plane(n, p);
        const T* yp = onehot.plane(n, p);
        for (int i = 0; i < probs.h * probs.w; ++i) {
            inter += static_cast<double>(xp[i]) * yp[i];
            sum_x += xp[i];
            sum_y += yp[i];
        }
    }
    return (2.0 * inter + kDiceSmooth) / (sum_x + sum_y + kDiceSmooth);
}

// loss = 1 - sum_p w_p * D_p with normalized weights.
template <typename T>
inline double weighted_dice_loss(const Tensor4<T>& probs, const Tensor4<T>& onehot,
                                 const ClassWeights& weights) {
    double acc = 0;
    for (int p = 0; p < kNumClasses; ++p)
        acc += weights.w[static_cast<size_t>(p)] * soft_dice_class(probs, onehot, p);
    return 1.0 - acc;
}

// d(loss)/d(probs). Each class touches only its own channel:
//   dD_p/dx_i = (2*y_i*(sx+sy+s) - (2*inter+s)) / (sx+sy+s)^2,  dL = -w_p dD_p.
template <typename T>
inline Tensor4<T> weighted_dice_loss_backward(const Tensor4<T>& probs, const Tensor4<T>& onehot,
                                              const ClassWeights& weights) {
    if (!probs.same_shape(onehot)) throw ShapeMismatch("weighted_dice_loss_backward: shape mismatch");
    Tensor4<T> dprobs(probs.n, probs.c, probs.h, probs.w);
    for (int p = 0; p < kNumClasses; ++p) {
        double inter = 0, sum_x = 0, sum_y = 0;
        for (int n = 0; n < probs.n; ++n) {
            const T* xp = probs.plane(n, p);
            const T* yp = onehot.plane(n, p);
            for (int i = 0; i < probs.h * probs.w; ++i) {
                inter += static_cast<double>(xp[i]) * yp[i];
                sum_x += xp[i];
                sum_y += yp[i];
            }
        }
        const double den = sum_x + sum_y + kDiceSmooth;
        const double num = 2.0 * inter + kDiceSmooth;
        const double wp = weights.w[static_cast<size_t>(p)];
        for (int n = 0; n < probs.n; ++n) {
            const T* yp = onehot.plane(n, p);
            T* gp = dprobs.plane(n, p);
            for (int i = 0; i < probs.h * probs.w; ++i)
                gp[i] = static_cast<T>(-wp * (2.0 * yp[i] * den - num) / (den * den));
        }
    }
    return dprobs;
}

// Hard-label Dice on a single class. Both sets empty counts as perfect
// agreement; exactly one empty counts as total miss.
inline double dsc(const Grid2D<uint8_t>& pred, const Grid2D<uint8_t>& gt, int p) {
    if (!pred.same_shape(gt)) throw ShapeMismatch("dsc: mask dims differ");
    long inter = 0, np = 0, ng = 0;
    for (size_t i = 0; i < pred.data.size(); ++i) {
        const bool a = pred.data[i] == p;
        const bool b = gt.data[i] == p;
        inter += a && b;
        np += a;
        ng += b;
    }
    if (np == 0 && ng == 0) return 1.0;
    if (np == 0 || ng == 0) return 0.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

// Boundary pixels of class p: class-p pixels with at least one non-p
// 4-neighbor (out-of-grid counts as background).
inline std::vector<std::pair<int, int>> contour_points(const Grid2D<uint8_t>& mask, int p) {
    std::vector<std::pair<int, int>> pts;
    for (int r = 0; r < mask.rows; ++r)
        for (int c = 0; c < mask.cols; ++c) {
            if (mask.at(r, c) != p) continue;
            bool boundary = r == 0 || r == mask.rows - 1 || c == 0 || c == mask.cols - 1;
            if (!boundary)
                boundary = mask.at(r - 1, c) != p || mask.at(r + 1, c) != p || mask.at(r, c - 1) != p ||
                           mask.at(r, c + 1) != p;
            if (boundary) pts.emplace_back(r, c);
        }
    return pts;
}

struct HausdorffResult {
    bool defined = false;
    double hd_mm = 0;            // symmetric: max of the two directed values
    double directed_pred_gt = 0; // pred contour -> gt contour
    double directed_gt_pred = 0;
};

// Symmetric Hausdorff distance between the class-p contours, in mm.
// spacing_x scales columns, spacing_y scales rows. Either contour empty
// leaves the result flagged undefined (excluded from averages upstream).
inline HausdorffResult hausdorff(const Grid2D<uint8_t>& pred, const Grid2D<uint8_t>& gt, int p,
                                 double spacing_x, double spacing_y) {
    if (!pred.same_shape(gt)) throw ShapeMismatch("hausdorff: mask dims differ");
    if (!(spacing_x > 0) || !(spacing_y > 0)) throw NonPositiveSpacing("hausdorff spacing must be positive");
    auto a = contour_points(pred, p);
    auto b = contour_points(gt, p);
    HausdorffResult res;
    if (a.empty() || b.empty()) return res;

    auto directed = [&](const std::vector<std::pair<int, int>>& from,
                        const std::vector<std::pair<int, int>>& to) {
        double worst = 0;
        for (const auto& [fr, fc] : from) {
            double best = 1e300;
            for (const auto& [tr, tc] : to) {
                const double dy = (fr - tr) * spacing_y;
                const double dx = (fc - tc) * spacing_x;
                best = std::min(best, dx * dx + dy * dy);
            }
            worst = std::max(worst, best);
        }
        return std::sqrt(worst);
    };
    res.directed_pred_gt = directed(a, b);
    res.directed_gt_pred = directed(b, a);
    res.hd_mm = std::max(res.directed_pred_gt, res.directed_gt_pred);
    res.defined = true;
    return res;
}

// One evaluated (sample, foreground class) pair.
struct EvalRecord {
    std::string patient_id;
    int slice_index = 0;
    data::Phase phase = data::Phase::ED;
    data::Pathology pathology = data::Pathology::NOR;
    int cls = 1;  // 1=RV, 2=Myo, 3=LV
    double dsc = 0;
    HausdorffResult hd;
};

struct GroupStat {
    double dsc_sum = 0;
    double hd_sum = 0;
    long n = 0;
    long hd_defined = 0;

    double mean_dsc() const { return n > 0 ? dsc_sum / static_cast<double>(n) : 0; }
    double mean_hd() const { return hd_defined > 0 ? hd_sum / static_cast<double>(hd_defined) : 0; }
};

struct Report {
    // keyed by (pathology, phase, class) and (phase, class)
    std::map<std::tuple<int, int, int>, GroupStat> by_pathology;
    std::map<std::pair<int, int>, GroupStat> by_phase;
    long undefined_hd = 0;
    long records = 0;
};

inline Report aggregate(const std::vector<EvalRecord>& records) {
    if (records.empty()) throw EmptyRecords("aggregate over empty record list");
    Report rep;
    rep.records = static_cast<long>(records.size());
    for (const auto& r : records) {
        auto add = [&](GroupStat& g) {
            g.dsc_sum += r.dsc;
            g.n += 1;
            if (r.hd.defined) {
                g.hd_sum += r.hd.hd_mm;
                g.hd_defined += 1;
            }
        };
        add(rep.by_pathology[{static_cast<int>(r.pathology), static_cast<int>(r.phase), r.cls}]);
        add(rep.by_phase[{static_cast<int>(r.phase), r.cls}]);
        if (!r.hd.defined) rep.undefined_hd += 1;
    }
    return rep;
}

// Aligned plain-text tables: per-pathology rows ED / ES / Average, then the
// pooled per-phase table, classes ordered LV, RV, MYO. The Average row is
// the mean of the two phase rows. Rounding happens here only.
inline std::string render_report(const Report& rep) {
    static const int cls_order[3] = {3, 1, 2};  // LV, RV, Myo
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);

    auto cell = [&](const GroupStat* g, bool dice) -> std::string {
        if (!g || g->n == 0 || (!dice && g->hd_defined == 0)) return "   -  ";
        std::ostringstream c;
        c << std::fixed << std::setprecision(2) << std::setw(6) << (dice ? g->mean_dsc() : g->mean_hd());
        return c.str();
    };

    os << "Class     Instance   Dice score              Hausdorff distance(mm)\n";
    os << "                     LV     RV     MYO       LV     RV     MYO\n";
    for (int pat = 0; pat < 5; ++pat) {
        bool any = false;
        for (const auto& [key, g] : rep.by_pathology)
            if (std::get<0>(key) == pat) any = true;
        if (!any) continue;
        for (int phase = 0; phase < 3; ++phase) {  // 0=ED, 1=ES, 2=Average
            os << std::setw(6) << std::left
               << (phase == 0 ? data::pathology_name(static_cast<data::Pathology>(pat)) : "")
               << std::right << "  " << std::setw(8) << std::left
               << (phase == 0 ? "ED" : phase == 1 ? "ES" : "Average") << std::right << "  ";
            for (int dice = 1; dice >= 0; --dice) {
                for (int k = 0; k < 3; ++k) {
                    const int cls = cls_order[k];
                    if (phase < 2) {
                        auto it = rep.by_pathology.find({pat, phase, cls});
                        os << cell(it == rep.by_pathology.end() ? nullptr : &it->second, dice) << ' ';
                    } else {
                        auto ed = rep.by_pathology.find({pat, 0, cls});
                        auto es = rep.by_pathology.find({pat, 1, cls});
                        GroupStat avg;
                        int have = 0;
                        for (auto* it : {&ed, &es}) {
                            if (*it == rep.by_pathology.end()) continue;
                            const GroupStat& g = (*it)->second;
                            if (g.n == 0) continue;
                            avg.dsc_sum += g.mean_dsc();
                            avg.n += 1;
                            if (g.hd_defined > 0) {
                                avg.hd_sum += g.mean_hd();
                                avg.hd_defined += 1;
                            }
                            ++have;
                        }
                        os << cell(have ? &avg : nullptr, dice) << ' ';
                    }
                }
                if (dice) os << "   ";
            }
            os << '\n';
        }
    }

    os << "\nOverall    Dice score              Hausdorff distance(mm)\n";
    os << "           LV     RV     MYO       LV     RV     MYO\n";
    for (int phase = 0; phase < 2; ++phase) {
        os << std::setw(9) << std::left << (phase == 0 ? "ED" : "ES") << std::right << "  ";
        for (int dice = 1; dice >= 0; --dice) {
            for (int k = 0; k < 3; ++k) {
                auto it = rep.by_phase.find({phase, cls_order[k]});
                os << cell(it == rep.by_phase.end() ? nullptr : &it->second, dice) << ' ';
            }
            if (dice) os << "   ";
        }
        os << '\n';
    }
    os << "\nrecords: " << rep.records << "  undefined HD (excluded from means): " << rep.undefined_hd
       << '\n';
    return os.str();
}

// Machine-readable TSV, one line per (grouping, value).
inline std::string render_report_tsv(const Report& rep) {
    static const int cls_order[3] = {3, 1, 2};
    static const char* cls_name[4] = {"BG", "RV", "MYO", "LV"};
    std::ostringstream os;
    os << "group\tpathology\tphase\tclass\tmean_dsc\tmean_hd_mm\tn\thd_defined\n";
    os << std::setprecision(10);
    for (const auto& [key, g] : rep.by_pathology) {
        auto [pat, phase, cls] = key;
        os << "pathology\t" << data::pathology_name(static_cast<data::Pathology>(pat)) << '\t'
           << (phase == 0 ? "ED" : "ES") << '\t' << cls_name[cls] << '\t' << g.mean_dsc() << '\t'
           << (g.hd_defined ? g.mean_hd() : -1.0) << '\t' << g.n << '\t' << g.hd_defined << '\n';
    }
    for (int phase = 0; phase < 2; ++phase)
        for (int k = 0; k < 3; ++k) {
            auto it = rep.by_phase.find({phase, cls_order[k]});
            if (it == rep.by_phase.end()) continue;
            const GroupStat& g = it->second;
            os << "overall\t*\t" << (phase == 0 ? "ED" : "ES") << '\t' << cls_name[cls_order[k]] << '\t'
               << g.mean_dsc() << '\t' << (g.hd_defined ? g.mean_hd() : -1.0) << '\t' << g.n << '\t'
               << g.hd_defined << '\n';
        }
    return os.str();
}

}  // namespace eeunet::metrics
