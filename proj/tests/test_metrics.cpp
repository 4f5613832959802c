#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "eeunet/gradcheck.hpp"
#include "eeunet/metrics.hpp"
#include "eeunet/rng.hpp"

using namespace eeunet;
using namespace eeunet::metrics;

namespace {

Grid2D<uint8_t> rand_mask(Rng& rng, int rows, int cols) {
    Grid2D<uint8_t> m(rows, cols);
    for (auto& v : m.data) v = static_cast<uint8_t>(rng.uniform_index(4));
    return m;
}

// Independent all-pairs Hausdorff oracle, restating the contour rule.
struct HdOracle {
    bool defined = false;
    double sym = 0, d_ab = 0, d_ba = 0;
};
HdOracle hd_oracle(const Grid2D<uint8_t>& A, const Grid2D<uint8_t>& B, int cls, double sx, double sy) {
    auto contour = [&](const Grid2D<uint8_t>& m) {
        std::vector<std::pair<int, int>> pts;
        for (int r = 0; r < m.rows; ++r)
            for (int c = 0; c < m.cols; ++c) {
                if (m.at(r, c) != cls) continue;
                auto off = [&](int rr, int cc) {
                    return rr < 0 || rr >= m.rows || cc < 0 || cc >= m.cols || m.at(rr, cc) != cls;
                };
                if (off(r - 1, c) || off(r + 1, c) || off(r, c - 1) || off(r, c + 1)) pts.push_back({r, c});
            }
        return pts;
    };
    auto a = contour(A), b = contour(B);
    HdOracle o;
    if (a.empty() || b.empty()) return o;
    auto dir = [&](const std::vector<std::pair<int, int>>& u, const std::vector<std::pair<int, int>>& v) {
        double worst = 0;
        for (auto& p : u) {
            double best = 1e300;
            for (auto& q : v)
                best = std::min(best, std::hypot((p.first - q.first) * sy, (p.second - q.second) * sx));
            worst = std::max(worst, best);
        }
        return worst;
    };
    o.d_ab = dir(a, b);
    o.d_ba = dir(b, a);
    o.sym = std::max(o.d_ab, o.d_ba);
    o.defined = true;
    return o;
}

}  // namespace

TEST_CASE("soft_dice_class: perfect, empty, and hand-counted cases") {
    // perfect prediction
    Grid2D<uint8_t> gt(4, 4);
    gt.at(1, 1) = 3;
    gt.at(1, 2) = 3;
    Tensor4<double> onehot = one_hot<double>({&gt});
    CHECK(soft_dice_class(onehot, onehot, 3) == Catch::Approx(1.0).margin(1e-6));

    // class absent from both: smoothed 1
    CHECK(soft_dice_class(onehot, onehot, 1) == Catch::Approx(1.0).margin(1e-6));

    // target 3 fg pixels, hard prediction 2 fg with 1 overlapping -> 0.4
    Grid2D<uint8_t> gt3(4, 4), pred2(4, 4);
    gt3.at(0, 0) = 1;
    gt3.at(0, 1) = 1;
    gt3.at(0, 2) = 1;
    pred2.at(0, 2) = 1;
    pred2.at(3, 3) = 1;
    Tensor4<double> y = one_hot<double>({&gt3});
    Tensor4<double> x = one_hot<double>({&pred2});
    CHECK(soft_dice_class(x, y, 1) == Catch::Approx(0.4).margin(1e-5));
}

TEST_CASE("soft dice on hard one-hot probs reproduces set-based dsc") {
    Rng rng(1001);
    for (int it = 0; it < 20; ++it) {
        Grid2D<uint8_t> a = rand_mask(rng, 8, 8);
        Grid2D<uint8_t> b = rand_mask(rng, 8, 8);
        Tensor4<double> x = one_hot<double>({&a});
        Tensor4<double> y = one_hot<double>({&b});
        for (int cls = 0; cls < 4; ++cls) {
            double soft = soft_dice_class(x, y, cls);
            double hard = dsc(a, b, cls);
            CHECK(std::abs(soft - hard) < 1e-5);
        }
    }
}

TEST_CASE("weighted_dice_loss: perfect prediction and weighted-mean arithmetic") {
    Grid2D<uint8_t> gt(4, 4);
    gt.at(0, 0) = 1;
    gt.at(1, 1) = 2;
    gt.at(2, 2) = 3;
    Tensor4<double> onehot = one_hot<double>({&gt});
    CHECK(weighted_dice_loss(onehot, onehot, ClassWeights::uniform()) < 1e-5);

    // per-class D = (1, 0.5, 0.5, 0.5) with uniform weights -> loss 0.375.
    // Class 0 agrees exactly; classes 1..3 have |x|=|y|=2 with overlap 1.
    Tensor4<double> x(1, 4, 4, 4), y(1, 4, 4, 4);
    for (int i = 0; i < 4; ++i) {
        x.plane(0, 0)[i] = 1.0;
        y.plane(0, 0)[i] = 1.0;
    }
    for (int cls = 1; cls < 4; ++cls) {
        int base = 4 * cls;
        x.plane(0, cls)[base + 0] = 1.0;  // overlapping pixel
        x.plane(0, cls)[base + 1] = 1.0;
        y.plane(0, cls)[base + 0] = 1.0;
        y.plane(0, cls)[base + 2] = 1.0;
    }
    for (int cls = 1; cls < 4; ++cls)
        CHECK(soft_dice_class(x, y, cls) == Catch::Approx(0.5).margin(1e-5));
    CHECK(weighted_dice_loss(x, y, ClassWeights::uniform()) == Catch::Approx(0.375).margin(1e-5));
}

TEST_CASE("weighted_dice_loss: gradient through softmax matches finite differences") {
    nn::GradChecker gc(2024);
    auto logits = gc.random_tensor(1, 4, 6, 6, -2, 2);
    Rng rng(3);
    Grid2D<uint8_t> gt = rand_mask(rng, 6, 6);
    Tensor4<double> onehot = one_hot<double>({&gt});
    ClassWeights w = ClassWeights::from_raw({0.1, 0.4, 0.2, 0.3});

    auto fwd = [&] {
        Tensor4<double> probs = nn::softmax_channels_forward(logits);
        Tensor4<double> out(1, 1, 1, 1);
        out.data[0] = weighted_dice_loss(probs, onehot, w);
        return out;
    };
    auto rep = gc.check(
        "weighted_dice_loss", {&logits}, fwd,
        [&](const Tensor4<double>& dy) {
            Tensor4<double> probs = nn::softmax_channels_forward(logits);
            Tensor4<double> dprobs = weighted_dice_loss_backward(probs, onehot, w);
            Tensor4<double> dlogits = nn::softmax_channels_backward(probs, dprobs);
            for (auto& v : dlogits.data) v *= dy.data[0];
            return std::vector<Tensor4<double>>{dlogits};
        },
        1e-4);
    INFO("max_rel_err=" << rep.max_rel_err);
    CHECK(rep.pass);
}

TEST_CASE("weighted_dice_loss: more overlap at fixed marginals lowers the loss") {
    // two probability fields with identical per-class mass, different overlap
    Grid2D<uint8_t> gt(2, 2);
    gt.at(0, 0) = 1;
    gt.at(0, 1) = 1;
    Tensor4<double> onehot = one_hot<double>({&gt});

    Tensor4<double> low(1, 4, 2, 2), high(1, 4, 2, 2);
    // mass 1.0 on class 1 in both, overlap differs
    low.plane(0, 1)[2] = 1.0;   // off-target pixel
    high.plane(0, 1)[0] = 1.0;  // on-target pixel
    for (int i = 0; i < 4; ++i) {
        low.plane(0, 0)[i] = 1.0 - low.plane(0, 1)[i];
        high.plane(0, 0)[i] = 1.0 - high.plane(0, 1)[i];
    }
    double l_low = weighted_dice_loss(low, onehot, ClassWeights::uniform());
    double l_high = weighted_dice_loss(high, onehot, ClassWeights::uniform());
    CHECK(l_high < l_low);
}

TEST_CASE("class weights: normalization and inverse frequency") {
    ClassWeights u = ClassWeights::uniform();
    double s = 0;
    for (double v : u.w) s += v;
    CHECK(std::abs(s - 1.0) < 1e-9);

    Grid2D<uint8_t> m(4, 4);          // 15 background, 1 of class 3
    m.at(0, 0) = 3;
    ClassWeights iw = ClassWeights::inverse_frequency({m});
    CHECK(iw.w[3] > iw.w[0]);
    // absent classes clamp to count 1, same as a single-pixel class
    CHECK(iw.w[1] == Catch::Approx(iw.w[3]));
    s = 0;
    for (double v : iw.w) s += v;
    CHECK(std::abs(s - 1.0) < 1e-9);
}

TEST_CASE("dsc: paper anchor cases and conventions") {
    Grid2D<uint8_t> a(4, 4), b(4, 4);
    a.at(1, 1) = 3;
    b.at(1, 1) = 3;
    CHECK(dsc(a, b, 3) == 1.0);  // identical masks: complete overlap

    Grid2D<uint8_t> c(4, 4), d(4, 4);
    c.at(0, 0) = 1;
    d.at(3, 3) = 1;
    CHECK(dsc(c, d, 1) == 0.0);  // disjoint foregrounds

    // |X|=3, |Y|=2, overlap 1 -> 0.4
    Grid2D<uint8_t> x(4, 4), y(4, 4);
    x.at(0, 0) = 2;
    x.at(0, 1) = 2;
    x.at(0, 2) = 2;
    y.at(0, 2) = 2;
    y.at(3, 3) = 2;
    CHECK(dsc(x, y, 2) == Catch::Approx(0.4));

    // both empty -> 1, one empty -> 0
    Grid2D<uint8_t> e1(4, 4), e2(4, 4);
    CHECK(dsc(e1, e2, 1) == 1.0);
    CHECK(dsc(x, e1, 2) == 0.0);
}

TEST_CASE("dsc: symmetric") {
    Rng rng(71);
    for (int it = 0; it < 30; ++it) {
        Grid2D<uint8_t> a = rand_mask(rng, 10, 10);
        Grid2D<uint8_t> b = rand_mask(rng, 10, 10);
        for (int cls = 0; cls < 4; ++cls) CHECK(dsc(a, b, cls) == dsc(b, a, cls));
    }
}

TEST_CASE("hausdorff: identical masks give zero, single-pair gives the Euclidean distance") {
    Grid2D<uint8_t> a(8, 8);
    for (int r = 2; r < 6; ++r)
        for (int c = 2; c < 6; ++c) a.at(r, c) = 3;
    auto res = hausdorff(a, a, 3, 1.0, 1.0);
    REQUIRE(res.defined);
    CHECK(res.hd_mm == 0.0);

    Grid2D<uint8_t> p(5, 5), q(5, 5);
    p.at(0, 0) = 1;
    q.at(3, 4) = 1;
    auto res2 = hausdorff(p, q, 1, 1.0, 1.0);
    REQUIRE(res2.defined);
    CHECK(res2.hd_mm == Catch::Approx(5.0));

    // empty side -> undefined
    Grid2D<uint8_t> empty(5, 5);
    CHECK_FALSE(hausdorff(p, empty, 1, 1.0, 1.0).defined);
    CHECK_FALSE(hausdorff(empty, empty, 1, 1.0, 1.0).defined);
}

TEST_CASE("hausdorff: matches the brute-force oracle exactly on random masks") {
    Rng rng(72);
    for (int it = 0; it < 60; ++it) {
        Grid2D<uint8_t> a = rand_mask(rng, 10, 10);
        Grid2D<uint8_t> b = rand_mask(rng, 10, 10);
        double sx = it % 3 == 0 ? 1.0 : 2.0;
        double sy = it % 3 == 1 ? 0.5 : 1.0;
        for (int cls = 1; cls < 4; ++cls) {
            auto mine = hausdorff(a, b, cls, sx, sy);
            auto oracle = hd_oracle(a, b, cls, sx, sy);
            REQUIRE(mine.defined == oracle.defined);
            if (mine.defined) {
                CHECK(mine.hd_mm == oracle.sym);
                CHECK(mine.directed_pred_gt == oracle.d_ab);
                CHECK(mine.directed_gt_pred == oracle.d_ba);
            }
        }
    }
}

TEST_CASE("hausdorff: symmetric, zero iff contours equal, triangle inequality") {
    Rng rng(73);
    for (int it = 0; it < 30; ++it) {
        Grid2D<uint8_t> a = rand_mask(rng, 8, 8);
        Grid2D<uint8_t> b = rand_mask(rng, 8, 8);
        Grid2D<uint8_t> c = rand_mask(rng, 8, 8);
        auto ab = hausdorff(a, b, 1, 1, 1);
        auto ba = hausdorff(b, a, 1, 1, 1);
        if (ab.defined) {
            CHECK(ab.hd_mm == ba.hd_mm);
            if (ab.hd_mm == 0.0)
                CHECK(contour_points(a, 1) == contour_points(b, 1));
        }
        auto ac = hausdorff(a, c, 1, 1, 1);
        auto bc = hausdorff(b, c, 1, 1, 1);
        if (ab.defined && ac.defined && bc.defined)
            CHECK(ac.hd_mm <= ab.hd_mm + bc.hd_mm + 1e-12);
    }
}

TEST_CASE("aggregate: means, grouping, undefined-HD accounting") {
    using data::Pathology, data::Phase;
    EvalRecord r1;
    r1.patient_id = "p1";
    r1.pathology = Pathology::DCM;
    r1.phase = Phase::ED;
    r1.cls = 3;
    r1.dsc = 0.8;
    r1.hd.defined = true;
    r1.hd.hd_mm = 4.0;
    CHECK_THROWS_AS(aggregate({}), EmptyRecords);

    Report one = aggregate({r1});
    CHECK(one.by_phase.at({0, 3}).mean_dsc() == Catch::Approx(0.8));

    EvalRecord r2 = r1;
    r2.dsc = 1.0;
    r2.hd.defined = false;
    Report rep = aggregate({r1, r2});
    const GroupStat& g = rep.by_pathology.at({static_cast<int>(Pathology::DCM), 0, 3});
    CHECK(g.mean_dsc() == Catch::Approx(0.9));
    CHECK(g.mean_hd() == Catch::Approx(4.0));  // undefined HD excluded from the mean
    CHECK(g.hd_defined == 1);
    CHECK(rep.undefined_hd == 1);
}

TEST_CASE("render_report: carries the pathology x phase x class table structure") {
    using data::Pathology, data::Phase;
    std::vector<EvalRecord> records;
    for (int pat = 0; pat < 5; ++pat)
        for (int ph = 0; ph < 2; ++ph)
            for (int cls = 1; cls <= 3; ++cls) {
                EvalRecord r;
                r.pathology = static_cast<Pathology>(pat);
                r.phase = static_cast<Phase>(ph);
                r.cls = cls;
                r.dsc = 0.9;
                r.hd.defined = true;
                r.hd.hd_mm = 5.0;
                records.push_back(r);
            }
    Report rep = aggregate(records);
    std::string txt = render_report(rep);
    for (const char* tag : {"DCM", "HCM", "MINF", "NOR", "ARV", "ED", "ES", "Average", "LV", "RV", "MYO",
                            "Dice score", "Hausdorff distance(mm)"})
        CHECK(txt.find(tag) != std::string::npos);

    std::string tsv = render_report_tsv(rep);
    CHECK(tsv.find("pathology\tDCM\tED\tLV") != std::string::npos);
    CHECK(tsv.find("overall\t*\tES\tMYO") != std::string::npos);
}
