#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "eeunet/bytes.hpp"
#include "eeunet/dataset.hpp"
#include "eeunet/nifti.hpp"

namespace eeunet::data {

// On-disk dataset layout: one flat binary record per slice plus a plain-text
// manifest. Record format (all little-endian):
//
//   magic   "EESR"
//   u32     version (1)
//   u32     rows, u32 cols
//   u8[4]   label map: stored mask integer for class {bg, RV, Myo, LV}
//   f32     spacing_x, f32 spacing_y (mm)
//   u8      phase (0=ED, 1=ES)
//   u8      pathology (0=NOR 1=MINF 2=DCM 3=HCM 4=ARV)
//   u32     slice_index
//   str     patient_id (u32 length + bytes)
//   f32[rows*cols]  image, row-major
//   u8[rows*cols]   mask
//
// The manifest lists every record and the patient-level fold assignment:
//   sample <file> <patient> <phase> <slice> <pathology>
//   fold <index> <patient>

inline constexpr uint32_t kRecordVersion = 1;

inline std::vector<uint8_t> encode_record(const SliceSample& s) {
    s.validate();
    ByteWriter w;
    w.raw(reinterpret_cast<const uint8_t*>("EESR"), 4);
    w.u32(kRecordVersion);
    w.u32(static_cast<uint32_t>(s.image.rows));
    w.u32(static_cast<uint32_t>(s.image.cols));
    for (int c = 0; c < 4; ++c) w.u8(static_cast<uint8_t>(c));
    w.f32(static_cast<float>(s.spacing_x));
    w.f32(static_cast<float>(s.spacing_y));
    w.u8(static_cast<uint8_t>(s.meta.phase));
    w.u8(static_cast<uint8_t>(s.meta.pathology));
    w.u32(static_cast<uint32_t>(s.meta.slice_index));
    w.str(s.meta.patient_id);
    for (float v : s.image.data) w.f32(v);
    w.raw(s.mask.data.data(), s.mask.data.size());
    return w.bytes();
}

inline SliceSample decode_record(const std::vector<uint8_t>& bytes) {
    ByteReader r(bytes);
    const uint8_t* magic = r.take(4);
    if (std::memcmp(magic, "EESR", 4) != 0) throw BadMagic("not a slice record");
    uint32_t version = r.u32();
    if (version != kRecordVersion) throw DataError("unsupported record version " + std::to_string(version));
    int rows = static_cast<int>(r.u32());
    int cols = static_cast<int>(r.u32());
    for (int c = 0; c < 4; ++c) {
        if (r.u8() != c) throw DataError("record label map is not the project encoding");
    }
    SliceSample s;
    s.spacing_x = r.f32();
    s.spacing_y = r.f32();
    s.meta.phase = static_cast<Phase>(r.u8());
    s.meta.pathology = static_cast<Pathology>(r.u8());
    s.meta.slice_index = static_cast<int>(r.u32());
    s.meta.patient_id = r.str();
    s.image = Grid2D<float>(rows, cols);
    for (float& v : s.image.data) v = r.f32();
    s.mask = Grid2D<uint8_t>(rows, cols);
    const uint8_t* m = r.take(s.mask.data.size());
    std::copy(m, m + s.mask.data.size(), s.mask.data.begin());
    s.validate();
    return s;
}

struct ManifestEntry {
    std::string file;
    std::string patient_id;
    Phase phase = Phase::ED;
    int slice_index = 0;
    Pathology pathology = Pathology::NOR;
};

struct Manifest {
    std::vector<ManifestEntry> entries;
    FoldPlan folds;
};

inline std::string record_filename(const SampleMeta& m) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%s_%s_s%03d.rec", m.patient_id.c_str(), phase_name(m.phase),
                  m.slice_index);
    return buf;
}

inline void save_dataset(const std::string& dir, const std::vector<SliceSample>& samples,
                         const FoldPlan& folds) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoFailure("cannot create dataset directory " + dir);

    std::ofstream manifest(fs::path(dir) / "manifest.txt");
    if (!manifest) throw IoFailure("cannot create manifest in " + dir);
    manifest << "# eeunet dataset manifest v1\n";
    manifest << "# sample <file> <patient> <phase> <slice> <pathology>\n";
    for (const auto& s : samples) {
        std::string name = record_filename(s.meta);
        nifti::write_file((fs::path(dir) / name).string(), encode_record(s));
        manifest << "sample " << name << ' ' << s.meta.patient_id << ' ' << phase_name(s.meta.phase)
                 << ' ' << s.meta.slice_index << ' ' << pathology_name(s.meta.pathology) << '\n';
    }
    for (size_t f = 0; f < folds.folds.size(); ++f)
        for (const auto& p : folds.folds[f]) manifest << "fold " << f << ' ' << p << '\n';
    if (!manifest) throw IoFailure("manifest write failed in " + dir);
}

inline Manifest load_manifest(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream in(fs::path(dir) / "manifest.txt");
    if (!in) throw IoFailure("cannot open manifest in " + dir);

    Manifest m;
    std::map<int, std::set<std::string>> folds;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        std::string kind;
        ss >> kind;
        if (kind == "sample") {
            ManifestEntry e;
            std::string phase, pathology;
            ss >> e.file >> e.patient_id >> phase >> e.slice_index >> pathology;
            if (!ss) throw DataError("malformed manifest sample line: " + line);
            e.phase = phase_from_name(phase);
            e.pathology = pathology_from_name(pathology);
            m.entries.push_back(std::move(e));
        } else if (kind == "fold") {
            int idx;
            std::string patient;
            ss >> idx >> patient;
            if (!ss) throw DataError("malformed manifest fold line: " + line);
            folds[idx].insert(patient);
        } else {
            throw DataError("unknown manifest line kind '" + kind + "'");
        }
    }
    if (!folds.empty()) {
        int max_fold = folds.rbegin()->first;
        m.folds.folds.resize(static_cast<size_t>(max_fold) + 1);
        for (auto& [idx, set] : folds) m.folds.folds[static_cast<size_t>(idx)] = std::move(set);
    }
    return m;
}

inline SliceSample load_record(const std::string& dir, const std::string& file) {
    return decode_record(nifti::read_file((std::filesystem::path(dir) / file).string()));
}

// Samples whose patient lands in fold `fold_index` (held-out set) or outside
// it (training set). Entries keep their manifest order.
inline std::vector<SliceSample> load_fold(const std::string& dir, const Manifest& m, int fold_index,
                                          bool held_out) {
    if (fold_index < 0 || fold_index >= static_cast<int>(m.folds.folds.size()))
        throw DataError("fold index out of range");
    std::vector<SliceSample> out;
    for (const auto& e : m.entries) {
        bool in_fold = m.folds.folds[static_cast<size_t>(fold_index)].count(e.patient_id) > 0;
        if (in_fold == held_out) out.push_back(load_record(dir, e.file));
    }
    return out;
}

}  // namespace eeunet::data
