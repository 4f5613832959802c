#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "eeunet/error.hpp"

namespace eeunet::nifti {

// Storage type codes from the NIfTI-1 standard.
enum class Dtype : int16_t {
    u8 = 2,
    i16 = 4,
    i32 = 8,
    f32 = 16,
    f64 = 64,
    u16 = 512,
};

inline int dtype_bytes(Dtype d) {
    switch (d) {
        case Dtype::u8: return 1;
        case Dtype::i16: return 2;
        case Dtype::u16: return 2;
        case Dtype::i32: return 4;
        case Dtype::f32: return 4;
        case Dtype::f64: return 8;
    }
    throw UnsupportedDtype("unknown dtype code");
}

// A parsed volume. Voxels are stored as float with x fastest, then y, z, t;
// scl_slope / scl_inter have already been applied.
struct Volume {
    std::array<int, 4> dims{0, 0, 0, 1};      // nx, ny, nz, nt
    std::array<double, 3> spacing{1, 1, 1};   // mm per voxel along x, y, z
    Dtype dtype_tag = Dtype::f32;
    std::vector<float> data;

    size_t voxels() const {
        return static_cast<size_t>(dims[0]) * dims[1] * dims[2] * dims[3];
    }

    void validate() const {
        for (int i = 0; i < 4; ++i)
            if (dims[i] <= 0) throw DataError("volume has non-positive dim " + std::to_string(i));
        if (voxels() != data.size())
            throw DataError("volume data length does not match dims");
        for (double s : spacing)
            if (!(s > 0) || !std::isfinite(s)) throw NonPositiveSpacing("volume spacing must be positive");
        for (float v : data)
            if (!std::isfinite(v)) throw DataError("volume contains non-finite voxel");
    }
};

namespace detail {

// All multi-byte header fields are read through these so a byte-swapped
// file (big-endian writer) decodes identically.
inline uint16_t get_u16(const uint8_t* p, bool swap) {
    uint16_t v;
    std::memcpy(&v, p, 2);
    if (swap) v = static_cast<uint16_t>((v >> 8) | (v << 8));
    return v;
}
inline uint32_t get_u32(const uint8_t* p, bool swap) {
    uint32_t v;
    std::memcpy(&v, p, 4);
    if (swap) v = __builtin_bswap32(v);
    return v;
}
inline uint64_t get_u64(const uint8_t* p, bool swap) {
    uint64_t v;
    std::memcpy(&v, p, 8);
    if (swap) v = __builtin_bswap64(v);
    return v;
}
inline int16_t get_i16(const uint8_t* p, bool swap) { return static_cast<int16_t>(get_u16(p, swap)); }
inline int32_t get_i32(const uint8_t* p, bool swap) { return static_cast<int32_t>(get_u32(p, swap)); }
inline float get_f32(const uint8_t* p, bool swap) {
    uint32_t v = get_u32(p, swap);
    float f;
    std::memcpy(&f, &v, 4);
    return f;
}
inline double get_f64(const uint8_t* p, bool swap) {
    uint64_t v = get_u64(p, swap);
    double f;
    std::memcpy(&f, &v, 8);
    return f;
}

inline void put_u16(std::vector<uint8_t>& out, size_t off, uint16_t v) {
    out[off] = static_cast<uint8_t>(v & 0xff);
    out[off + 1] = static_cast<uint8_t>(v >> 8);
}
inline void put_u32(std::vector<uint8_t>& out, size_t off, uint32_t v) {
    for (int i = 0; i < 4; ++i) out[off + i] = static_cast<uint8_t>((v >> (8 * i)) & 0xff);
}
inline void put_f32(std::vector<uint8_t>& out, size_t off, float f) {
    uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32(out, off, v);
}

inline bool is_gzip(const std::vector<uint8_t>& b) {
    return b.size() >= 2 && b[0] == 0x1f && b[1] == 0x8b;
}

inline std::vector<uint8_t> gunzip(const std::vector<uint8_t>& in) {
    z_stream zs{};
    if (inflateInit2(&zs, 15 + 32) != Z_OK) throw IoFailure("inflateInit2 failed");
    std::vector<uint8_t> out;
    out.reserve(in.size() * 4);
    std::vector<uint8_t> buf(1 << 16);
    zs.next_in = const_cast<Bytef*>(in.data());
    zs.avail_in = static_cast<uInt>(in.size());
    int ret = Z_OK;
    do {
        zs.next_out = buf.data();
        zs.avail_out = static_cast<uInt>(buf.size());
        ret = inflate(&zs, Z_NO_FLUSH);
        if (ret != Z_OK && ret != Z_STREAM_END) {
            inflateEnd(&zs);
            throw TruncatedData("gzip stream corrupt or truncated");
        }
        out.insert(out.end(), buf.data(), buf.data() + (buf.size() - zs.avail_out));
    } while (ret != Z_STREAM_END && (zs.avail_in > 0 || zs.avail_out == 0));
    inflateEnd(&zs);
    if (ret != Z_STREAM_END) throw TruncatedData("gzip stream ended early");
    return out;
}

inline std::vector<uint8_t> gzip_compress(const std::vector<uint8_t>& in) {
    z_stream zs{};
    if (deflateInit2(&zs, Z_DEFAULT_COMPRESSION, Z_DEFLATED, 15 + 16, 8, Z_DEFAULT_STRATEGY) != Z_OK)
        throw IoFailure("deflateInit2 failed");
    std::vector<uint8_t> out;
    std::vector<uint8_t> buf(1 << 16);
    zs.next_in = const_cast<Bytef*>(in.data());
    zs.avail_in = static_cast<uInt>(in.size());
    int ret = Z_OK;
    do {
        zs.next_out = buf.data();
        zs.avail_out = static_cast<uInt>(buf.size());
        ret = deflate(&zs, Z_FINISH);
        out.insert(out.end(), buf.data(), buf.data() + (buf.size() - zs.avail_out));
    } while (ret != Z_STREAM_END);
    deflateEnd(&zs);
    return out;
}

}  // namespace detail

// Header field offsets per the NIfTI-1 standard (348-byte header).
inline constexpr size_t kHeaderSize = 348;
inline constexpr size_t kOffDim = 40;        // short dim[8]
inline constexpr size_t kOffDatatype = 70;   // short
inline constexpr size_t kOffBitpix = 72;     // short
inline constexpr size_t kOffPixdim = 76;     // float pixdim[8]
inline constexpr size_t kOffVoxOffset = 108; // float
inline constexpr size_t kOffSclSlope = 112;  // float
inline constexpr size_t kOffSclInter = 116;  // float
inline constexpr size_t kOffXyztUnits = 123; // char
inline constexpr size_t kOffMagic = 344;     // char[4]

inline Volume parse_nifti(const std::vector<uint8_t>& raw) {
    using namespace detail;
    const std::vector<uint8_t> bytes = is_gzip(raw) ? gunzip(raw) : raw;
    if (bytes.size() < kHeaderSize) throw BadMagic("buffer shorter than a NIfTI-1 header");

    // Endianness sentinel: sizeof_hdr must read 348 one way or the other.
    bool swap = false;
    int32_t hdr_size = get_i32(bytes.data(), false);
    if (hdr_size != 348) {
        if (get_i32(bytes.data(), true) == 348) {
            swap = true;
        } else {
            throw BadMagic("not a NIfTI-1 file (bad header size sentinel)");
        }
    }

    const char* magic = reinterpret_cast<const char*>(bytes.data() + kOffMagic);
    if (std::strncmp(magic, "n+1", 3) == 0) {
        // single-file .nii, data follows in this buffer
    } else if (std::strncmp(magic, "ni1", 3) == 0) {
        throw DataError("paired .hdr/.img NIfTI is not supported; use single-file .nii");
    } else {
        throw BadMagic("not a NIfTI-1 file (bad magic)");
    }

    int16_t ndim = get_i16(bytes.data() + kOffDim, swap);
    if (ndim < 2 || ndim > 7) throw DataError("unsupported ndim " + std::to_string(ndim));
    std::array<int, 7> dim_all{1, 1, 1, 1, 1, 1, 1};
    for (int i = 0; i < ndim; ++i) {
        int16_t d = get_i16(bytes.data() + kOffDim + 2 * (i + 1), swap);
        if (d <= 0) throw DataError("non-positive dim[" + std::to_string(i + 1) + "]");
        dim_all[i] = d;
    }
    for (int i = 4; i < 7; ++i)
        if (dim_all[i] != 1) throw DataError("dims beyond the time axis are not supported");

    Volume vol;
    vol.dims = {dim_all[0], dim_all[1], dim_all[2], dim_all[3]};

    int16_t dt_code = get_i16(bytes.data() + kOffDatatype, swap);
    switch (dt_code) {
        case 2: vol.dtype_tag = Dtype::u8; break;
        case 4: vol.dtype_tag = Dtype::i16; break;
        case 8: vol.dtype_tag = Dtype::i32; break;
        case 16: vol.dtype_tag = Dtype::f32; break;
        case 64: vol.dtype_tag = Dtype::f64; break;
        case 512: vol.dtype_tag = Dtype::u16; break;
        default:
            throw UnsupportedDtype("unsupported NIfTI datatype code " + std::to_string(dt_code));
    }

    for (int i = 0; i < 3; ++i) {
        float s = get_f32(bytes.data() + kOffPixdim + 4 * (i + 1), swap);
        if (!(s > 0.0f) || !std::isfinite(s))
            throw NonPositiveSpacing("pixdim[" + std::to_string(i + 1) + "] must be positive");
        vol.spacing[i] = s;
    }

    float vox_offset_f = get_f32(bytes.data() + kOffVoxOffset, swap);
    size_t vox_offset = vox_offset_f < static_cast<float>(kHeaderSize)
                            ? kHeaderSize
                            : static_cast<size_t>(vox_offset_f);

    float slope = get_f32(bytes.data() + kOffSclSlope, swap);
    float inter = get_f32(bytes.data() + kOffSclInter, swap);
    if (slope == 0.0f || !std::isfinite(slope)) slope = 1.0f;  // sloppy writers
    if (!std::isfinite(inter)) inter = 0.0f;
    bool rescaled = (slope != 1.0f) || (inter != 0.0f);

    size_t nvox = vol.voxels();
    size_t nbytes = nvox * static_cast<size_t>(dtype_bytes(vol.dtype_tag));
    if (bytes.size() < vox_offset + nbytes)
        throw TruncatedData("voxel payload shorter than header dims imply");

    const uint8_t* p = bytes.data() + vox_offset;
    vol.data.resize(nvox);
    for (size_t i = 0; i < nvox; ++i) {
        double v = 0;
        switch (vol.dtype_tag) {
            case Dtype::u8: v = p[i]; break;
            case Dtype::i16: v = get_i16(p + 2 * i, swap); break;
            case Dtype::u16: v = get_u16(p + 2 * i, swap); break;
            case Dtype::i32: v = get_i32(p + 4 * i, swap); break;
            case Dtype::f32: v = get_f32(p + 4 * i, swap); break;
            case Dtype::f64: v = get_f64(p + 8 * i, swap); break;
        }
        if (rescaled) v = static_cast<double>(slope) * v + static_cast<double>(inter);
        float f = static_cast<float>(v);
        if (!std::isfinite(f)) throw DataError("non-finite voxel value at index " + std::to_string(i));
        vol.data[i] = f;
    }
    // Once scaling is applied the original integer storage no longer holds
    // the values; the volume is float from here on.
    if (rescaled) vol.dtype_tag = Dtype::f32;
    return vol;
}

// Encode to single-file .nii bytes (no compression), vox_offset 352.
inline std::vector<uint8_t> write_nifti_bytes(const Volume& vol) {
    using namespace detail;
    vol.validate();

    size_t nvox = vol.voxels();
    int bpv = dtype_bytes(vol.dtype_tag);
    std::vector<uint8_t> out(352 + nvox * static_cast<size_t>(bpv), 0);

    put_u32(out, 0, 348);
    out[38] = 'r';  // "regular" flag, kept for Analyze compatibility
    int16_t ndim = vol.dims[3] > 1 ? 4 : 3;
    put_u16(out, kOffDim, static_cast<uint16_t>(ndim));
    for (int i = 0; i < 4; ++i) put_u16(out, kOffDim + 2 * (i + 1), static_cast<uint16_t>(vol.dims[i]));
    for (int i = 5; i < 8; ++i) put_u16(out, kOffDim + 2 * i, 1);
    put_u16(out, kOffDatatype, static_cast<uint16_t>(vol.dtype_tag));
    put_u16(out, kOffBitpix, static_cast<uint16_t>(bpv * 8));
    put_f32(out, kOffPixdim, 1.0f);
    for (int i = 0; i < 3; ++i) put_f32(out, kOffPixdim + 4 * (i + 1), static_cast<float>(vol.spacing[i]));
    put_f32(out, kOffPixdim + 16, 1.0f);
    put_f32(out, kOffVoxOffset, 352.0f);
    put_f32(out, kOffSclSlope, 1.0f);
    put_f32(out, kOffSclInter, 0.0f);
    out[kOffXyztUnits] = 2 | 8;  // NIFTI_UNITS_MM | NIFTI_UNITS_SEC
    out[kOffMagic] = 'n';
    out[kOffMagic + 1] = '+';
    out[kOffMagic + 2] = '1';
    out[kOffMagic + 3] = '\0';
    // bytes 348..351 stay zero: no header extensions

    uint8_t* p = out.data() + 352;
    for (size_t i = 0; i < nvox; ++i) {
        float v = vol.data[i];
        switch (vol.dtype_tag) {
            case Dtype::u8: {
                if (v < 0 || v > 255 || v != std::floor(v))
                    throw DataError("voxel value not representable as uint8");
                p[i] = static_cast<uint8_t>(v);
                break;
            }
            case Dtype::i16: {
                if (v < -32768 || v > 32767 || v != std::floor(v))
                    throw DataError("voxel value not representable as int16");
                put_u16(out, 352 + 2 * i, static_cast<uint16_t>(static_cast<int16_t>(v)));
                break;
            }
            case Dtype::u16: {
                if (v < 0 || v > 65535 || v != std::floor(v))
                    throw DataError("voxel value not representable as uint16");
                put_u16(out, 352 + 2 * i, static_cast<uint16_t>(v));
                break;
            }
            case Dtype::i32: {
                if (v != std::floor(v)) throw DataError("voxel value not representable as int32");
                put_u32(out, 352 + 4 * i, static_cast<uint32_t>(static_cast<int32_t>(v)));
                break;
            }
            case Dtype::f32: put_f32(out, 352 + 4 * i, v); break;
            case Dtype::f64: {
                double d = v;
                uint64_t u;
                std::memcpy(&u, &d, 8);
                for (int b = 0; b < 8; ++b)
                    out[352 + 8 * i + b] = static_cast<uint8_t>((u >> (8 * b)) & 0xff);
                break;
            }
        }
    }
    return out;
}

inline std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoFailure("cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (f.bad()) throw IoFailure("read failed on " + path);
    return bytes;
}

inline void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoFailure("cannot create " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoFailure("write failed on " + path);
}

// Serialize to path; a .gz suffix selects gzip compression.
inline void write_nifti(const Volume& vol, const std::string& path) {
    std::vector<uint8_t> bytes = write_nifti_bytes(vol);
    if (path.size() > 3 && path.compare(path.size() - 3, 3, ".gz") == 0)
        bytes = detail::gzip_compress(bytes);
    write_file(path, bytes);
}

inline Volume load_volume(const std::string& path) { return parse_nifti(read_file(path)); }

// Slice a frame out of a 4D cine volume; the parser never drops the time
// axis, frame selection happens here.
inline Volume select_frame(const Volume& vol, int t) {
    if (t < 0 || t >= vol.dims[3]) throw DimMismatch("frame index out of range");
    Volume out;
    out.dims = {vol.dims[0], vol.dims[1], vol.dims[2], 1};
    out.spacing = vol.spacing;
    out.dtype_tag = vol.dtype_tag;
    size_t frame = static_cast<size_t>(vol.dims[0]) * vol.dims[1] * vol.dims[2];
    out.data.assign(vol.data.begin() + static_cast<long>(frame) * t,
                    vol.data.begin() + static_cast<long>(frame) * (t + 1));
    return out;
}

}  // namespace eeunet::nifti
