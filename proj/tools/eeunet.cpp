// eeunet: one binary, one subcommand per pipeline stage. Every run prints
// its fully resolved configuration before acting, and all randomness comes
// from the single --seed flag so runs are reproducible records.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "eeunet/checkpoint.hpp"
#include "eeunet/dataset.hpp"
#include "eeunet/edge.hpp"
#include "eeunet/gradcheck.hpp"
#include "eeunet/metrics.hpp"
#include "eeunet/model.hpp"
#include "eeunet/nifti.hpp"
#include "eeunet/phantom.hpp"
#include "eeunet/records.hpp"
#include "eeunet/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace eeunet;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitDivergence = 4;
constexpr int kExitIo = 5;

json config_to_json(const train::TrainConfig& cfg) {
    return json{{"epochs", cfg.epochs},
                {"batch_size", cfg.batch_size},
                {"lr", cfg.lr},
                {"seed", cfg.seed},
                {"fold_index", cfg.fold_index},
                {"augment", cfg.augment},
                {"weights_mode",
                 cfg.weights_mode == train::WeightsMode::inverse_frequency ? "invfreq" : "uniform"},
                {"arch",
                 {{"in_channels", cfg.arch.in_channels},
                  {"base_width", cfg.arch.base_width},
                  {"edge_infusion", cfg.arch.edge_infusion}}}};
}

void config_from_json(const json& j, train::TrainConfig& cfg) {
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.lr = j.value("lr", cfg.lr);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.fold_index = j.value("fold_index", cfg.fold_index);
    cfg.augment = j.value("augment", cfg.augment);
    if (j.contains("weights_mode")) {
        std::string m = j["weights_mode"];
        if (m == "invfreq" || m == "inverse-frequency")
            cfg.weights_mode = train::WeightsMode::inverse_frequency;
        else if (m == "uniform")
            cfg.weights_mode = train::WeightsMode::uniform;
        else
            throw DataError("unknown weights_mode '" + m + "'");
    }
    if (j.contains("arch")) {
        const json& a = j["arch"];
        cfg.arch.in_channels = a.value("in_channels", cfg.arch.in_channels);
        cfg.arch.base_width = a.value("base_width", cfg.arch.base_width);
        cfg.arch.edge_infusion = a.value("edge_infusion", cfg.arch.edge_infusion);
    }
}

void print_resolved(const std::string& cmd, const json& j) {
    std::cout << "[eeunet] " << cmd << " resolved config: " << j.dump() << "\n";
}

struct TrainCli {
    std::string data_dir;
    std::string out_dir = "run";
    std::string config_path;
    train::TrainConfig cfg;
    bool no_edge_infusion = false;
    std::string weights = "";
    bool augment_flag = false;

    void finalize() {
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            if (!in) throw IoFailure("cannot open config " + config_path);
            json j = json::parse(in, nullptr, true, true);
            config_from_json(j, cfg);
        }
    }
    // flag overrides win over the config file
    void apply_overrides(bool epochs_set, int epochs, bool batch_set, int batch, bool lr_set, double lr,
                         bool seed_set, uint64_t seed, bool fold_set, int fold, bool bw_set, int bw) {
        if (epochs_set) cfg.epochs = epochs;
        if (batch_set) cfg.batch_size = batch;
        if (lr_set) cfg.lr = lr;
        if (seed_set) cfg.seed = seed;
        if (fold_set) cfg.fold_index = fold;
        if (bw_set) cfg.arch.base_width = bw;
        if (no_edge_infusion) cfg.arch.edge_infusion = false;
        if (augment_flag) cfg.augment = true;
        if (weights == "uniform") cfg.weights_mode = train::WeightsMode::uniform;
        else if (weights == "invfreq") cfg.weights_mode = train::WeightsMode::inverse_frequency;
        else if (!weights.empty()) throw DataError("--weights must be invfreq or uniform");
    }
};

void write_text(const fs::path& p, const std::string& content) {
    std::ofstream out(p);
    if (!out) throw IoFailure("cannot create " + p.string());
    out << content;
    if (!out) throw IoFailure("write failed on " + p.string());
}

json report_to_json(const metrics::Report& rep) {
    json groups = json::array();
    static const char* cls_name[4] = {"BG", "RV", "MYO", "LV"};
    for (const auto& [key, g] : rep.by_pathology) {
        auto [pat, phase, cls] = key;
        groups.push_back({{"pathology", data::pathology_name(static_cast<data::Pathology>(pat))},
                          {"phase", phase == 0 ? "ED" : "ES"},
                          {"class", cls_name[cls]},
                          {"mean_dsc", g.mean_dsc()},
                          {"mean_hd_mm", g.hd_defined ? json(g.mean_hd()) : json(nullptr)},
                          {"n", g.n},
                          {"hd_defined", g.hd_defined}});
    }
    json overall = json::array();
    for (const auto& [key, g] : rep.by_phase) {
        auto [phase, cls] = key;
        overall.push_back({{"phase", phase == 0 ? "ED" : "ES"},
                           {"class", cls_name[cls]},
                           {"mean_dsc", g.mean_dsc()},
                           {"mean_hd_mm", g.hd_defined ? json(g.mean_hd()) : json(nullptr)},
                           {"n", g.n},
                           {"hd_defined", g.hd_defined}});
    }
    return json{{"by_pathology_phase_class", groups},
                {"by_phase_class", overall},
                {"records", rep.records},
                {"undefined_hd", rep.undefined_hd}};
}

std::string records_tsv(const std::vector<metrics::EvalRecord>& records) {
    std::ostringstream os;
    static const char* cls_name[4] = {"BG", "RV", "MYO", "LV"};
    os << "patient\tslice\tphase\tpathology\tclass\tdsc\thd_defined\thd_mm\thd_pred_to_gt\thd_gt_to_pred\n";
    os << std::setprecision(10);
    for (const auto& r : records) {
        os << r.patient_id << '\t' << r.slice_index << '\t' << data::phase_name(r.phase) << '\t'
           << data::pathology_name(r.pathology) << '\t' << cls_name[r.cls] << '\t' << r.dsc << '\t'
           << (r.hd.defined ? 1 : 0) << '\t' << (r.hd.defined ? r.hd.hd_mm : -1.0) << '\t'
           << (r.hd.defined ? r.hd.directed_pred_gt : -1.0) << '\t'
           << (r.hd.defined ? r.hd.directed_gt_pred : -1.0) << '\n';
    }
    return os.str();
}

train::EpochSink jsonl_sink(std::ostream& stream) {
    return [&stream](const train::EpochLog& el) {
        json j{{"epoch", el.epoch},
               {"mean_loss", el.mean_loss},
               {"val_dsc_bg", el.val_dsc[0]},
               {"val_dsc_rv", el.val_dsc[1]},
               {"val_dsc_myo", el.val_dsc[2]},
               {"val_dsc_lv", el.val_dsc[3]},
               {"val_mean_fg_dsc", el.val_mean_fg_dsc}};
        stream << j.dump() << "\n";
        stream.flush();
    };
}

void write_pgm(const fs::path& p, const Grid2D<double>& g, double lo, double hi) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw IoFailure("cannot create " + p.string());
    out << "P5\n" << g.cols << " " << g.rows << "\n255\n";
    for (double v : g.data) {
        double t = hi > lo ? (v - lo) / (hi - lo) : 0.0;
        out.put(static_cast<char>(std::clamp(t, 0.0, 1.0) * 255.0 + 0.5));
    }
    if (!out) throw IoFailure("write failed on " + p.string());
}

int run(int argc, char** argv) {
    CLI::App app{"edge-enhanced U-Net toolkit for 4-class cardiac CMR segmentation"};
    app.require_subcommand(1);

    // ---- phantom ----------------------------------------------------------
    auto* cmd_phantom = app.add_subcommand("phantom", "generate synthetic phantom slices");
    int ph_count = 40;
    uint64_t ph_seed = 0;
    std::string ph_out = "phantom_data";
    int ph_folds = 5;
    double ph_noise = 0.03;
    cmd_phantom->add_option("--count", ph_count, "number of phantom patients")->check(CLI::PositiveNumber);
    cmd_phantom->add_option("--seed", ph_seed, "rng seed");
    cmd_phantom->add_option("--out", ph_out, "output dataset directory")->required();
    cmd_phantom->add_option("--folds", ph_folds, "folds to record in the manifest");
    cmd_phantom->add_option("--noise", ph_noise, "additive noise sigma (max 0.05)");
    cmd_phantom->callback([&] {
        print_resolved("phantom", json{{"count", ph_count},
                                       {"seed", ph_seed},
                                       {"out", ph_out},
                                       {"folds", ph_folds},
                                       {"noise", ph_noise}});
        data::PhantomConfig pc;
        pc.noise_sigma = ph_noise;
        auto samples = data::gen_phantom(ph_seed, ph_count, pc);
        std::vector<std::pair<std::string, data::Pathology>> patients;
        for (const auto& s : samples) patients.push_back({s.meta.patient_id, s.meta.pathology});
        auto folds = data::make_folds(patients, ph_folds, ph_seed);
        data::save_dataset(ph_out, samples, folds);
        std::cout << "wrote " << samples.size() << " samples to " << ph_out << "\n";
    });

    // ---- preprocess -------------------------------------------------------
    auto* cmd_pre = app.add_subcommand("preprocess", "convert NIfTI pairs into the record dataset");
    std::string pre_list, pre_out = "dataset";
    int pre_folds = 5;
    uint64_t pre_seed = 0;
    int pre_frame = 0;
    cmd_pre->add_option("--list", pre_list,
                        "text file: <image.nii[.gz]> <mask.nii[.gz]> <patient> <ED|ES> <pathology> per line")
        ->required();
    cmd_pre->add_option("--out", pre_out, "output dataset directory");
    cmd_pre->add_option("--folds", pre_folds, "folds to record in the manifest");
    cmd_pre->add_option("--seed", pre_seed, "rng seed for fold assignment");
    cmd_pre->add_option("--frame", pre_frame, "frame to select from 4D volumes");
    cmd_pre->callback([&] {
        print_resolved("preprocess", json{{"list", pre_list},
                                          {"out", pre_out},
                                          {"folds", pre_folds},
                                          {"seed", pre_seed},
                                          {"frame", pre_frame}});
        std::ifstream in(pre_list);
        if (!in) throw IoFailure("cannot open list file " + pre_list);
        std::vector<data::SliceSample> samples;
        std::vector<std::pair<std::string, data::Pathology>> patients;
        std::set<std::string> seen;
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty() || line[0] == '#') continue;
            std::istringstream ss(line);
            std::string img_path, mask_path, patient, phase, pathology;
            ss >> img_path >> mask_path >> patient >> phase >> pathology;
            if (!ss) throw DataError("malformed list line: " + line);
            nifti::Volume vol = nifti::load_volume(img_path);
            nifti::Volume mask = nifti::load_volume(mask_path);
            if (vol.dims[3] > 1) vol = nifti::select_frame(vol, pre_frame);
            if (mask.dims[3] > 1) mask = nifti::select_frame(mask, pre_frame);
            data::SampleMeta meta;
            meta.patient_id = patient;
            meta.phase = data::phase_from_name(phase);
            meta.pathology = data::pathology_from_name(pathology);
            auto slices = data::volume_to_slices(vol, mask, meta);
            samples.insert(samples.end(), slices.begin(), slices.end());
            if (seen.insert(patient).second) patients.push_back({patient, meta.pathology});
        }
        if (samples.empty()) throw DataError("list file produced no samples");
        auto folds = data::make_folds(patients, pre_folds, pre_seed);
        data::save_dataset(pre_out, samples, folds);
        std::cout << "wrote " << samples.size() << " samples from " << patients.size() << " patients to "
                  << pre_out << "\n";
    });

    // ---- train ------------------------------------------------------------
    auto* cmd_train = app.add_subcommand("train", "train on one fold of a dataset");
    TrainCli tc;
    int t_epochs = 0, t_batch = 0, t_fold = 0, t_bw = 0;
    double t_lr = 0;
    uint64_t t_seed = 0;
    cmd_train->add_option("--data", tc.data_dir, "dataset directory")->required();
    cmd_train->add_option("--out", tc.out_dir, "output directory for checkpoints and logs");
    cmd_train->add_option("--config", tc.config_path, "JSON config file");
    auto* oe = cmd_train->add_option("--epochs", t_epochs, "override: epochs");
    auto* ob = cmd_train->add_option("--batch", t_batch, "override: batch size");
    auto* ol = cmd_train->add_option("--lr", t_lr, "override: learning rate");
    auto* os_ = cmd_train->add_option("--seed", t_seed, "override: seed");
    auto* of = cmd_train->add_option("--fold", t_fold, "override: held-out fold index");
    auto* ow = cmd_train->add_option("--base-width", t_bw, "override: first-level width");
    cmd_train->add_flag("--no-edge-infusion", tc.no_edge_infusion, "disable edge infusion (ablation)");
    cmd_train->add_flag("--augment", tc.augment_flag, "enable rotation/flip augmentation");
    cmd_train->add_option("--weights", tc.weights, "loss weights: invfreq or uniform");
    cmd_train->callback([&] {
        tc.cfg.epochs = 100;  // protocol defaults; config/flags override
        tc.cfg.batch_size = 32;
        tc.finalize();
        tc.apply_overrides(oe->count() > 0, t_epochs, ob->count() > 0, t_batch, ol->count() > 0, t_lr,
                           os_->count() > 0, t_seed, of->count() > 0, t_fold, ow->count() > 0, t_bw);
        tc.cfg.validate();
        print_resolved("train", config_to_json(tc.cfg));

        data::Manifest manifest = data::load_manifest(tc.data_dir);
        auto train_samples = data::load_fold(tc.data_dir, manifest, tc.cfg.fold_index, false);
        auto val_samples = data::load_fold(tc.data_dir, manifest, tc.cfg.fold_index, true);

        fs::create_directories(tc.out_dir);
        std::ofstream log_file(fs::path(tc.out_dir) / "trainlog.jsonl");
        auto result = train::train_loop<float>(train_samples, val_samples, tc.cfg, [&](const train::EpochLog& el) {
            jsonl_sink(std::cout)(el);
            jsonl_sink(log_file)(el);
        });
        net::save_checkpoint(result.model, &result.adam, (fs::path(tc.out_dir) / "last.ckpt").string());
        net::Model<float> best = train::best_model(result);
        net::save_checkpoint(best, static_cast<nn::AdamState<float>*>(nullptr),
                             (fs::path(tc.out_dir) / "best.ckpt").string());
        std::cout << "best epoch " << result.log.best_epoch << " val fg DSC " << result.log.best_val_dsc
                  << "; checkpoints in " << tc.out_dir << "\n";
    });

    // ---- eval -------------------------------------------------------------
    auto* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint on a held-out fold");
    std::string ev_ckpt, ev_data, ev_out = "eval_out";
    int ev_fold = 0, ev_batch = 8;
    cmd_eval->add_option("--ckpt", ev_ckpt, "checkpoint file")->required();
    cmd_eval->add_option("--data", ev_data, "dataset directory")->required();
    cmd_eval->add_option("--fold", ev_fold, "held-out fold index");
    cmd_eval->add_option("--batch", ev_batch, "evaluation batch size");
    cmd_eval->add_option("--out", ev_out, "output directory");
    cmd_eval->callback([&] {
        print_resolved("eval", json{{"ckpt", ev_ckpt}, {"data", ev_data}, {"fold", ev_fold},
                                    {"batch", ev_batch}, {"out", ev_out}});
        auto loaded = net::load_checkpoint<float>(ev_ckpt);
        data::Manifest manifest = data::load_manifest(ev_data);
        auto samples = data::load_fold(ev_data, manifest, ev_fold, true);
        auto records = train::evaluate(loaded.model, samples, ev_batch);
        auto report = metrics::aggregate(records);
        fs::create_directories(ev_out);
        write_text(fs::path(ev_out) / "records.tsv", records_tsv(records));
        write_text(fs::path(ev_out) / "report.txt", metrics::render_report(report));
        write_text(fs::path(ev_out) / "report.tsv", metrics::render_report_tsv(report));
        write_text(fs::path(ev_out) / "report.json", report_to_json(report).dump(2) + "\n");
        std::cout << metrics::render_report(report);
    });

    // ---- cross-validate ---------------------------------------------------
    auto* cmd_cv = app.add_subcommand("cross-validate", "train and evaluate every fold");
    TrainCli cv;
    int c_epochs = 0, c_batch = 0, c_fold = 0, c_bw = 0;
    double c_lr = 0;
    uint64_t c_seed = 0;
    cmd_cv->add_option("--data", cv.data_dir, "dataset directory")->required();
    cmd_cv->add_option("--out", cv.out_dir, "output directory");
    cmd_cv->add_option("--config", cv.config_path, "JSON config file");
    auto* ce = cmd_cv->add_option("--epochs", c_epochs, "override: epochs");
    auto* cb = cmd_cv->add_option("--batch", c_batch, "override: batch size");
    auto* cl = cmd_cv->add_option("--lr", c_lr, "override: learning rate");
    auto* cs = cmd_cv->add_option("--seed", c_seed, "override: seed");
    auto* cw = cmd_cv->add_option("--base-width", c_bw, "override: first-level width");
    cmd_cv->add_flag("--no-edge-infusion", cv.no_edge_infusion, "disable edge infusion (ablation)");
    cmd_cv->add_flag("--augment", cv.augment_flag, "enable augmentation");
    int c_repeats = 1;
    cmd_cv->add_option("--repeats", c_repeats, "repeat the whole k-fold sweep with shifted seeds");
    cmd_cv->add_option("--weights", cv.weights, "loss weights: invfreq or uniform");
    cmd_cv->callback([&] {
        cv.cfg.epochs = 100;
        cv.cfg.batch_size = 32;
        cv.finalize();
        cv.apply_overrides(ce->count() > 0, c_epochs, cb->count() > 0, c_batch, cl->count() > 0, c_lr,
                           cs->count() > 0, c_seed, false, c_fold, cw->count() > 0, c_bw);
        cv.cfg.validate();
        print_resolved("cross-validate", config_to_json(cv.cfg));

        data::Manifest manifest = data::load_manifest(cv.data_dir);
        fs::create_directories(cv.out_dir);
        std::ofstream log_file(fs::path(cv.out_dir) / "trainlog.jsonl");
        auto outcome =
            train::cross_validate<float>(cv.data_dir, manifest, cv.cfg, jsonl_sink(log_file), c_repeats);

        for (size_t f = 0; f < outcome.fold_records.size(); ++f) {
            auto rep = metrics::aggregate(outcome.fold_records[f]);
            fs::path fold_dir = fs::path(cv.out_dir) / ("fold" + std::to_string(f));
            fs::create_directories(fold_dir);
            write_text(fold_dir / "records.tsv", records_tsv(outcome.fold_records[f]));
            write_text(fold_dir / "report.txt", metrics::render_report(rep));
            write_text(fold_dir / "report.json", report_to_json(rep).dump(2) + "\n");
        }
        auto pooled = metrics::aggregate(outcome.pooled);
        write_text(fs::path(cv.out_dir) / "records.tsv", records_tsv(outcome.pooled));
        write_text(fs::path(cv.out_dir) / "report.txt", metrics::render_report(pooled));
        write_text(fs::path(cv.out_dir) / "report.tsv", metrics::render_report_tsv(pooled));
        write_text(fs::path(cv.out_dir) / "report.json", report_to_json(pooled).dump(2) + "\n");
        std::cout << metrics::render_report(pooled);
    });

    // ---- segment ----------------------------------------------------------
    auto* cmd_seg = app.add_subcommand("segment", "segment a NIfTI volume with a checkpoint");
    std::string sg_ckpt, sg_in, sg_out;
    int sg_frame = 0;
    cmd_seg->add_option("--ckpt", sg_ckpt, "checkpoint file")->required();
    cmd_seg->add_option("--in", sg_in, "input NIfTI volume")->required();
    cmd_seg->add_option("--out", sg_out, "output label NIfTI")->required();
    cmd_seg->add_option("--frame", sg_frame, "frame to segment when the input is 4D");
    cmd_seg->callback([&] {
        print_resolved("segment",
                       json{{"ckpt", sg_ckpt}, {"in", sg_in}, {"out", sg_out}, {"frame", sg_frame}});
        auto loaded = net::load_checkpoint<float>(sg_ckpt);
        nifti::Volume vol = nifti::load_volume(sg_in);
        if (vol.dims[3] > 1) vol = nifti::select_frame(vol, sg_frame);
        const int nx = vol.dims[0], ny = vol.dims[1], nz = vol.dims[2];

        nifti::Volume out;
        out.dims = {nx, ny, nz, 1};
        out.spacing = vol.spacing;
        out.dtype_tag = nifti::Dtype::u8;
        out.data.resize(out.voxels());

        for (int z = 0; z < nz; ++z) {
            Grid2D<float> slice(ny, nx);
            for (int y = 0; y < ny; ++y)
                for (int x = 0; x < nx; ++x)
                    slice.at(y, x) =
                        vol.data[static_cast<size_t>(x) + static_cast<size_t>(nx) * (y + static_cast<size_t>(ny) * z)];
            Grid2D<float> net_in =
                data::resize_bilinear(data::normalize_slice(slice), data::kSliceSize, data::kSliceSize);
            for (float& v : net_in.data) v = std::clamp(v, 0.0f, 1.0f);
            Tensor4<float> x(1, 1, data::kSliceSize, data::kSliceSize);
            std::copy(net_in.data.begin(), net_in.data.end(), x.plane(0, 0));
            auto res = net::forward(loaded.model, x, net::ForwardOptions<float>{});
            Grid2D<uint8_t> pred = net::predict_mask(res.logits)[0];
            Grid2D<uint8_t> back = data::resize_nearest(pred, ny, nx);
            for (int y = 0; y < ny; ++y)
                for (int xx = 0; xx < nx; ++xx)
                    out.data[static_cast<size_t>(xx) + static_cast<size_t>(nx) * (y + static_cast<size_t>(ny) * z)] =
                        back.at(y, xx);
        }
        nifti::write_nifti(out, sg_out);
        std::cout << "wrote labels to " << sg_out << "\n";
    });

    // ---- edges ------------------------------------------------------------
    auto* cmd_edges = app.add_subcommand("edges", "run the edge extractor over a NIfTI volume");
    std::string ed_in, ed_out = "edges_out", ed_format = "pgm";
    int ed_r = 0, ed_slice = -1;
    double ed_w = 0, ed_low = -1, ed_high = -1;
    cmd_edges->add_option("--in", ed_in, "input NIfTI volume")->required();
    cmd_edges->add_option("--out", ed_out, "output directory");
    cmd_edges->add_option("--format", ed_format, "pgm or nifti")->check(CLI::IsMember({"pgm", "nifti"}));
    cmd_edges->add_option("--r", ed_r, "override Gaussian kernel size (odd, >= 3)");
    cmd_edges->add_option("--w", ed_w, "override Gaussian spatial weight");
    cmd_edges->add_option("--low", ed_low, "override low hysteresis threshold");
    cmd_edges->add_option("--high", ed_high, "override high hysteresis threshold");
    cmd_edges->add_option("--slice", ed_slice, "process only this slice index");
    cmd_edges->callback([&] {
        print_resolved("edges", json{{"in", ed_in}, {"out", ed_out}, {"format", ed_format},
                                     {"r", ed_r}, {"w", ed_w}, {"low", ed_low}, {"high", ed_high},
                                     {"slice", ed_slice}});
        nifti::Volume vol = nifti::load_volume(ed_in);
        if (vol.dims[3] > 1) vol = nifti::select_frame(vol, 0);
        const int nx = vol.dims[0], ny = vol.dims[1], nz = vol.dims[2];
        fs::create_directories(ed_out);

        edge::EdgeExtractConfig cfg;
        cfg.r_override = ed_r;
        cfg.w_override = ed_w;
        cfg.low_override = ed_low;
        cfg.high_override = ed_high;

        nifti::Volume vb, vl, vt;
        for (auto* v : {&vb, &vl, &vt}) {
            v->dims = {nx, ny, nz, 1};
            v->spacing = vol.spacing;
            v->dtype_tag = nifti::Dtype::f32;
            v->data.assign(static_cast<size_t>(nx) * ny * nz, 0.0f);
        }

        for (int z = 0; z < nz; ++z) {
            if (ed_slice >= 0 && z != ed_slice) continue;
            Tensor4<double> feat(1, 1, ny, nx);
            for (int y = 0; y < ny; ++y)
                for (int x = 0; x < nx; ++x)
                    feat.at(0, 0, y, x) =
                        vol.data[static_cast<size_t>(x) + static_cast<size_t>(nx) * (y + static_cast<size_t>(ny) * z)];
            edge::EdgeFeatures e = edge::edge_extract(feat, 0, nullptr, cfg);

            if (ed_format == "pgm") {
                char suffix[32];
                std::snprintf(suffix, sizeof(suffix), "_s%03d.pgm", z);
                double max_l = 0;
                for (double v : e.magnitude.data) max_l = std::max(max_l, v);
                Grid2D<double> bin(ny, nx);
                for (size_t i = 0; i < bin.data.size(); ++i) bin.data[i] = e.binary.data[i];
                write_pgm(fs::path(ed_out) / ("binary" + std::string(suffix)), bin, 0, 1);
                write_pgm(fs::path(ed_out) / ("lambda" + std::string(suffix)), e.magnitude, 0,
                          max_l > 0 ? max_l : 1);
                write_pgm(fs::path(ed_out) / ("theta" + std::string(suffix)), e.orientation, -edge::kPi,
                          edge::kPi);
            } else {
                for (int y = 0; y < ny; ++y)
                    for (int x = 0; x < nx; ++x) {
                        size_t idx = static_cast<size_t>(x) + static_cast<size_t>(nx) * (y + static_cast<size_t>(ny) * z);
                        vb.data[idx] = e.binary.at(y, x);
                        vl.data[idx] = static_cast<float>(e.magnitude.at(y, x));
                        vt.data[idx] = static_cast<float>(e.orientation.at(y, x));
                    }
            }
            std::cout << "slice " << z << ": low=" << e.low_threshold << " high=" << e.high_threshold
                      << "\n";
        }
        if (ed_format == "nifti") {
            nifti::write_nifti(vb, (fs::path(ed_out) / "binary.nii.gz").string());
            nifti::write_nifti(vl, (fs::path(ed_out) / "lambda.nii.gz").string());
            nifti::write_nifti(vt, (fs::path(ed_out) / "theta.nii.gz").string());
        }
        std::cout << "edge maps in " << ed_out << "\n";
    });

    // ---- grad-check -------------------------------------------------------
    auto* cmd_gc = app.add_subcommand("grad-check", "finite-difference checks for every operator");
    uint64_t gc_seed = 20240811;
    int gc_instances = 5;
    cmd_gc->add_option("--seed", gc_seed, "rng seed");
    cmd_gc->add_option("--instances", gc_instances, "random instances per operator");
    cmd_gc->callback([&] {
        print_resolved("grad-check", json{{"seed", gc_seed}, {"instances", gc_instances}});
        auto reports = nn::run_diffops_grad_suite(gc_seed, gc_instances);
        bool all_pass = true;
        for (const auto& r : reports) {
            std::cout << (r.pass ? "PASS" : "FAIL") << "  " << r.op << "  max_rel_err=" << r.max_rel_err
                      << "  tol=" << r.tolerance << "\n";
            all_pass = all_pass && r.pass;
        }
        if (!all_pass) throw DataError("gradient checks failed");
        std::cout << reports.size() << " checks passed\n";
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);  // prints help or the usage error
        return rc == 0 ? 0 : kExitUsage;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const DivergenceDetected& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return kExitDivergence;
    } catch (const IoFailure& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
}
