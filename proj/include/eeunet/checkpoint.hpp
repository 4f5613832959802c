#pragma once

#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include "eeunet/bytes.hpp"
#include "eeunet/diffops.hpp"
#include "eeunet/model.hpp"
#include "eeunet/nifti.hpp"

namespace eeunet::net {

// Checkpoint container (versioned, little-endian):
//
//   magic "EEUC", u32 version (1)
//   ArchSpec: i32 in_channels, i32 base_width, i32 depth, i32 num_classes,
//             u8 edge_infusion
//   u8 scalar kind: 4 = float32, 8 = float64
//   u32 parameter count, then per parameter:
//     str name, u8 learnable, u32 dims[4], raw scalar payload
//   u8 has_adam; if set: f64 lr/beta1/beta2/eps, u64 t, then per learnable
//   parameter (in file order) the m and v payloads.
//
// The embedded ArchSpec makes a checkpoint self-describing: loading first
// rebuilds the parameter set from the spec, then fills values by name.

inline constexpr uint32_t kCheckpointVersion = 1;

template <typename T>
constexpr uint8_t scalar_kind() {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    return std::is_same_v<T, float> ? 4 : 8;
}

template <typename T>
void write_payload(ByteWriter& w, const Tensor4<T>& t) {
    for (T v : t.data) {
        if constexpr (std::is_same_v<T, float>)
            w.f32(v);
        else
            w.f64(v);
    }
}

template <typename T>
void read_payload(ByteReader& r, Tensor4<T>& t) {
    for (T& v : t.data) {
        if constexpr (std::is_same_v<T, float>)
            v = r.f32();
        else
            v = r.f64();
    }
}

template <typename T>
std::vector<uint8_t> encode_checkpoint(const Model<T>& m, const nn::AdamState<T>* adam) {
    ByteWriter w;
    w.raw(reinterpret_cast<const uint8_t*>("EEUC"), 4);
    w.u32(kCheckpointVersion);
    w.u32(static_cast<uint32_t>(m.spec.in_channels));
    w.u32(static_cast<uint32_t>(m.spec.base_width));
    w.u32(static_cast<uint32_t>(m.spec.depth));
    w.u32(static_cast<uint32_t>(m.spec.num_classes));
    w.u8(m.spec.edge_infusion ? 1 : 0);
    w.u8(scalar_kind<T>());
    w.u32(static_cast<uint32_t>(m.all_params.size()));
    for (const auto* p : m.all_params) {
        w.str(p->name);
        w.u8(p->learnable ? 1 : 0);
        w.u32(static_cast<uint32_t>(p->value.n));
        w.u32(static_cast<uint32_t>(p->value.c));
        w.u32(static_cast<uint32_t>(p->value.h));
        w.u32(static_cast<uint32_t>(p->value.w));
        write_payload(w, p->value);
    }
    w.u8(adam ? 1 : 0);
    if (adam) {
        w.f64(adam->lr);
        w.f64(adam->beta1);
        w.f64(adam->beta2);
        w.f64(adam->eps);
        w.u64(static_cast<uint64_t>(adam->t));
        if (adam->m.size() != m.learnable.size())
            throw ShapeMismatch("adam state does not match the learnable parameter list");
        for (size_t i = 0; i < adam->m.size(); ++i) {
            write_payload(w, adam->m[i]);
            write_payload(w, adam->v[i]);
        }
    }
    return w.bytes();
}

template <typename T>
struct LoadedCheckpoint {
    Model<T> model;
    std::optional<nn::AdamState<T>> adam;
};

template <typename T>
LoadedCheckpoint<T> decode_checkpoint(const std::vector<uint8_t>& bytes) {
    ByteReader r(bytes);
    const uint8_t* magic = r.take(4);
    if (std::memcmp(magic, "EEUC", 4) != 0) throw BadMagic("not a checkpoint file");
    uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw DataError("unsupported checkpoint version " + std::to_string(version));

    ArchSpec spec;
    spec.in_channels = static_cast<int>(r.u32());
    spec.base_width = static_cast<int>(r.u32());
    spec.depth = static_cast<int>(r.u32());
    spec.num_classes = static_cast<int>(r.u32());
    spec.edge_infusion = r.u8() != 0;

    uint8_t kind = r.u8();
    if (kind != scalar_kind<T>())
        throw DataError("checkpoint scalar width " + std::to_string(kind) +
                        " does not match the requested precision");

    LoadedCheckpoint<T> out{build_model<T>(spec, 0), std::nullopt};
    uint32_t count = r.u32();
    if (count != out.model.all_params.size())
        throw DataError("checkpoint parameter count does not match the architecture");
    for (uint32_t i = 0; i < count; ++i) {
        std::string name = r.str();
        uint8_t learnable = r.u8();
        int n = static_cast<int>(r.u32());
        int c = static_cast<int>(r.u32());
        int h = static_cast<int>(r.u32());
        int w = static_cast<int>(r.u32());
        nn::ParamTensor<T>& p = out.model.param(name);
        if (p.value.n != n || p.value.c != c || p.value.h != h || p.value.w != w)
            throw DataError("checkpoint shape mismatch for " + name);
        if ((p.learnable ? 1 : 0) != learnable) throw DataError("checkpoint learnable flag mismatch for " + name);
        read_payload(r, p.value);
    }
    if (r.u8()) {
        nn::AdamState<T> st;
        st.lr = r.f64();
        st.beta1 = r.f64();
        st.beta2 = r.f64();
        st.eps = r.f64();
        st.t = static_cast<int64_t>(r.u64());
        for (const auto* p : out.model.learnable) {
            Tensor4<T> mt(p->value.n, p->value.c, p->value.h, p->value.w);
            Tensor4<T> vt(p->value.n, p->value.c, p->value.h, p->value.w);
            read_payload(r, mt);
            read_payload(r, vt);
            st.m.push_back(std::move(mt));
            st.v.push_back(std::move(vt));
        }
        out.adam = std::move(st);
    }
    return out;
}

template <typename T>
void save_checkpoint(const Model<T>& m, const nn::AdamState<T>* adam, const std::string& path) {
    nifti::write_file(path, encode_checkpoint(m, adam));
}

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
    return decode_checkpoint<T>(nifti::read_file(path));
}

}  // namespace eeunet::net
