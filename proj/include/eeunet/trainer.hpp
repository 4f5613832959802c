#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "eeunet/checkpoint.hpp"
#include "eeunet/dataset.hpp"
#include "eeunet/diffops.hpp"
#include "eeunet/metrics.hpp"
#include "eeunet/model.hpp"
#include "eeunet/records.hpp"
#include "eeunet/rng.hpp"

namespace eeunet::train {

enum class WeightsMode { inverse_frequency, uniform };

struct TrainConfig {
    int epochs = 100;
    int batch_size = 32;
    double lr = 0.001;
    uint64_t seed = 0;
    int fold_index = 0;
    bool augment = false;
    WeightsMode weights_mode = WeightsMode::inverse_frequency;
    net::ArchSpec arch;

    void validate() const {
        if (epochs < 1) throw DataError("config: epochs must be >= 1");
        if (batch_size < 1) throw DataError("config: batch_size must be >= 1");
        if (!(lr > 0)) throw DataError("config: lr must be > 0");
        arch.validate();
    }
};

struct EpochLog {
    int epoch = 0;
    double mean_loss = 0;
    std::array<double, 4> val_dsc{};  // per class, background included
    double val_mean_fg_dsc = 0;       // mean over RV / Myo / LV
};

struct TrainLog {
    std::vector<EpochLog> epochs;
    int best_epoch = -1;
    double best_val_dsc = -1;
    std::set<std::string> train_patients;
    metrics::ClassWeights weights;
};

using EpochSink = std::function<void(const EpochLog&)>;

template <typename T>
struct TrainResult {
    net::Model<T> model;  // final weights
    TrainLog log;
    std::vector<Tensor4<T>> best_values;  // all-parameter snapshot at the best epoch
    nn::AdamState<T> adam;
};

namespace detail {

template <typename T>
Tensor4<T> batch_images(const std::vector<const data::SliceSample*>& batch) {
    const int H = batch[0]->image.rows, W = batch[0]->image.cols;
    Tensor4<T> x(static_cast<int>(batch.size()), 1, H, W);
    for (size_t n = 0; n < batch.size(); ++n) {
        const auto& img = batch[n]->image;
        T* p = x.plane(static_cast<int>(n), 0);
        for (int i = 0; i < H * W; ++i) p[i] = static_cast<T>(img.data[static_cast<size_t>(i)]);
    }
    return x;
}

template <typename T>
std::vector<Tensor4<T>> snapshot_values(const net::Model<T>& m) {
    std::vector<Tensor4<T>> vals;
    vals.reserve(m.all_params.size());
    for (const auto* p : m.all_params) vals.push_back(p->value);
    return vals;
}

template <typename T>
void restore_values(net::Model<T>& m, const std::vector<Tensor4<T>>& vals) {
    if (vals.size() != m.all_params.size()) throw ShapeMismatch("snapshot does not match parameter list");
    for (size_t i = 0; i < m.all_params.size(); ++i) m.all_params[i]->value = vals[i];
}

}  // namespace detail

// Rebuild the best-validation-epoch model from a finished run.
template <typename T>
net::Model<T> best_model(const TrainResult<T>& r) {
    net::Model<T> m = net::build_model<T>(r.model.spec, 0);
    detail::restore_values(m, r.best_values);
    return m;
}

// Per-class mean hard Dice over a sample set (eval mode).
template <typename T>
std::array<double, 4> validation_dsc(net::Model<T>& model, const std::vector<data::SliceSample>& samples,
                                     int batch_size) {
    std::array<double, 4> sum{};
    long n_done = 0;
    for (size_t off = 0; off < samples.size(); off += static_cast<size_t>(batch_size)) {
        std::vector<const data::SliceSample*> batch;
        for (size_t i = off; i < std::min(samples.size(), off + static_cast<size_t>(batch_size)); ++i)
            batch.push_back(&samples[i]);
        Tensor4<T> x = detail::batch_images<T>(batch);
        net::ForwardOptions<T> opts;
        auto res = net::forward(model, x, opts);
        auto masks = net::predict_mask(res.logits);
        for (size_t i = 0; i < batch.size(); ++i) {
            for (int cls = 0; cls < 4; ++cls)
                sum[static_cast<size_t>(cls)] += metrics::dsc(masks[i], batch[i]->mask, cls);
            ++n_done;
        }
    }
    if (n_done == 0) throw EmptyFold("validation set is empty");
    for (double& v : sum) v /= static_cast<double>(n_done);
    return sum;
}

// The training loop: seeded shuffle per epoch, forward (train mode) ->
// weighted soft-Dice loss -> backward -> Adam step, validation after every
// epoch, best-by-validation-DSC snapshot kept, last partial batch included.
// Deterministic in (cfg.seed, samples): a single RNG drives shuffling and
// augmentation draws in a fixed order.
template <typename T>
TrainResult<T> train_loop(const std::vector<data::SliceSample>& train_samples,
                          const std::vector<data::SliceSample>& val_samples, const TrainConfig& cfg,
                          const EpochSink& sink = nullptr) {
    cfg.validate();
    if (train_samples.empty()) throw EmptyFold("training fold is empty");
    for (const auto& s : train_samples) s.validate();

    TrainLog log;
    for (const auto& s : train_samples) log.train_patients.insert(s.meta.patient_id);
    for (const auto& s : val_samples)
        if (log.train_patients.count(s.meta.patient_id))
            throw DataError("patient '" + s.meta.patient_id + "' leaks between train and validation");

    if (cfg.weights_mode == WeightsMode::inverse_frequency) {
        std::vector<Grid2D<uint8_t>> masks;
        masks.reserve(train_samples.size());
        for (const auto& s : train_samples) masks.push_back(s.mask);
        log.weights = metrics::ClassWeights::inverse_frequency(masks);
    } else {
        log.weights = metrics::ClassWeights::uniform();
    }

    net::Model<T> model = net::build_model<T>(cfg.arch, cfg.seed);
    std::vector<nn::ParamTensor<T>*> params = model.learnable;
    nn::AdamState<T> adam = nn::adam_init(params, cfg.lr);
    Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);

    std::vector<size_t> order(train_samples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::vector<Tensor4<T>> best_values = detail::snapshot_values(model);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0;
        long batches = 0;
        for (size_t off = 0; off < order.size(); off += static_cast<size_t>(cfg.batch_size)) {
            std::vector<data::SliceSample> augmented;
            std::vector<const data::SliceSample*> batch;
            for (size_t i = off; i < std::min(order.size(), off + static_cast<size_t>(cfg.batch_size));
                 ++i) {
                const auto& s = train_samples[order[i]];
                if (cfg.augment)
                    augmented.push_back(data::augment(s, rng.next_u64(), true));
                else
                    batch.push_back(&s);
            }
            if (cfg.augment)
                for (const auto& s : augmented) batch.push_back(&s);

            Tensor4<T> x = detail::batch_images<T>(batch);
            std::vector<const Grid2D<uint8_t>*> mask_ptrs;
            for (const auto* s : batch) mask_ptrs.push_back(&s->mask);
            Tensor4<T> onehot = metrics::one_hot<T>(mask_ptrs);

            net::ForwardCtx<T> ctx;
            net::ForwardOptions<T> opts;
            opts.train = true;
            opts.keep_ctx = true;
            auto res = net::forward(model, x, opts, &ctx);
            Tensor4<T> probs = nn::softmax_channels_forward(res.logits);
            double loss = metrics::weighted_dice_loss(probs, onehot, log.weights);
            if (!std::isfinite(loss))
                throw DivergenceDetected("loss is not finite at epoch " + std::to_string(epoch) +
                                         " batch " + std::to_string(batches));
            Tensor4<T> dprobs = metrics::weighted_dice_loss_backward(probs, onehot, log.weights);
            Tensor4<T> dlogits = nn::softmax_channels_backward(probs, dprobs);
            net::backward(model, ctx, dlogits);
            nn::adam_step(params, adam);

            loss_sum += loss;
            ++batches;
        }

        EpochLog el;
        el.epoch = epoch;
        el.mean_loss = loss_sum / static_cast<double>(batches);
        if (!val_samples.empty()) {
            el.val_dsc = validation_dsc(model, val_samples, cfg.batch_size);
            el.val_mean_fg_dsc = (el.val_dsc[1] + el.val_dsc[2] + el.val_dsc[3]) / 3.0;
        }
        if (el.val_mean_fg_dsc > log.best_val_dsc) {
            log.best_val_dsc = el.val_mean_fg_dsc;
            log.best_epoch = epoch;
            best_values = detail::snapshot_values(model);
        }
        log.epochs.push_back(el);
        if (sink) sink(el);
    }

    return {std::move(model), std::move(log), std::move(best_values), std::move(adam)};
}

// Evaluate a model on a fold: eval-mode forward, argmax masks, DSC +
// Hausdorff per foreground class per sample.
template <typename T>
std::vector<metrics::EvalRecord> evaluate(net::Model<T>& model,
                                          const std::vector<data::SliceSample>& samples, int batch_size) {
    if (samples.empty()) throw EmptyFold("evaluation fold is empty");
    std::vector<metrics::EvalRecord> records;
    for (size_t off = 0; off < samples.size(); off += static_cast<size_t>(batch_size)) {
        std::vector<const data::SliceSample*> batch;
        for (size_t i = off; i < std::min(samples.size(), off + static_cast<size_t>(batch_size)); ++i)
            batch.push_back(&samples[i]);
        Tensor4<T> x = detail::batch_images<T>(batch);
        net::ForwardOptions<T> opts;
        auto res = net::forward(model, x, opts);
        auto masks = net::predict_mask(res.logits);
        for (size_t i = 0; i < batch.size(); ++i) {
            const auto& s = *batch[i];
            for (int cls = 1; cls <= 3; ++cls) {
                metrics::EvalRecord r;
                r.patient_id = s.meta.patient_id;
                r.slice_index = s.meta.slice_index;
                r.phase = s.meta.phase;
                r.pathology = s.meta.pathology;
                r.cls = cls;
                r.dsc = metrics::dsc(masks[i], s.mask, cls);
                r.hd = metrics::hausdorff(masks[i], s.mask, cls, s.spacing_x, s.spacing_y);
                records.push_back(std::move(r));
            }
        }
    }
    return records;
}

struct CrossValidationOutcome {
    std::vector<std::vector<metrics::EvalRecord>> fold_records;
    std::vector<metrics::EvalRecord> pooled;
    std::vector<TrainLog> fold_logs;
};

// k-fold cross-validation over a persisted dataset: trains one model per
// fold on the remaining folds, evaluates the best-epoch model on the
// held-out fold, pools the records. The leakage guard re-checks that no
// evaluated patient was in that model's training fold. `repeats` reruns the
// whole k-fold sweep with seed+r and pools everything (defaults to a single
// repetition at desk scale).
template <typename T>
CrossValidationOutcome cross_validate(const std::string& data_dir, const data::Manifest& manifest,
                                      const TrainConfig& base_cfg, const EpochSink& sink = nullptr,
                                      int repeats = 1) {
    const int k = static_cast<int>(manifest.folds.folds.size());
    if (k < 2) throw DataError("cross_validate needs at least 2 folds in the manifest");
    if (repeats < 1) throw DataError("cross_validate needs repeats >= 1");

    CrossValidationOutcome out;
    for (int rep = 0; rep < repeats; ++rep) {
        for (int fold = 0; fold < k; ++fold) {
            TrainConfig cfg = base_cfg;
            cfg.fold_index = fold;
            cfg.seed = base_cfg.seed + static_cast<uint64_t>(rep);
            auto train_samples = data::load_fold(data_dir, manifest, fold, false);
            auto eval_samples = data::load_fold(data_dir, manifest, fold, true);
            auto result = train_loop<T>(train_samples, eval_samples, cfg, sink);
            net::Model<T> best = best_model(result);
            auto records = evaluate(best, eval_samples, cfg.batch_size);
            for (const auto& r : records)
                if (result.log.train_patients.count(r.patient_id))
                    throw DataError("leakage: evaluated patient '" + r.patient_id +
                                    "' was in the training fold");
            out.pooled.insert(out.pooled.end(), records.begin(), records.end());
            out.fold_records.push_back(std::move(records));
            out.fold_logs.push_back(std::move(result.log));
        }
    }
    return out;
}

}  // namespace eeunet::train
