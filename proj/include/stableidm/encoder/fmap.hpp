#pragma once

// .fmap container: magic "FMAP", u32 version = 1, u8 dtype code, u32 ndim,
// ndim x u32 extents, row-major payload. All integers little-endian.
// dtype codes: 0 = f32, 1 = u8, 2 = f64 (used for model parameters).

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "stableidm/errors.hpp"
#include "stableidm/numcore/tensor.hpp"

namespace stableidm::fmap {

enum class DType : std::uint8_t { f32 = 0, u8 = 1, f64 = 2 };

inline constexpr std::uint32_t kVersion = 1;

class BadMagicError : public FormatError {
public:
    using FormatError::FormatError;
};

class VersionError : public FormatError {
public:
    using FormatError::FormatError;
};

class TruncatedError : public FormatError {
public:
    using FormatError::FormatError;
};

class DTypeError : public FormatError {
public:
    using FormatError::FormatError;
};

inline std::size_t dtype_size(DType d) {
    switch (d) {
        case DType::f32: return 4;
        case DType::u8: return 1;
        case DType::f64: return 8;
    }
    throw DTypeError("unknown dtype");
}

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
}

inline std::uint64_t get_u64(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

}  // namespace detail

/// Serialize a tensor. u8 requires integral values in [0, 255]; f32 narrows.
inline std::vector<std::uint8_t> encode(const numcore::Tensor& t, DType dtype) {
    std::vector<std::uint8_t> out{'F', 'M', 'A', 'P'};
    detail::put_u32(out, kVersion);
    out.push_back(static_cast<std::uint8_t>(dtype));
    detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) detail::put_u32(out, static_cast<std::uint32_t>(e));
    out.reserve(out.size() + t.size() * dtype_size(dtype));
    for (double v : t.data()) {
        switch (dtype) {
            case DType::f32: detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v))); break;
            case DType::f64: detail::put_u64(out, std::bit_cast<std::uint64_t>(v)); break;
            case DType::u8:
                if (!(v >= 0.0 && v <= 255.0) || v != std::floor(v)) {
                    throw ParameterError("fmap: value " + std::to_string(v) + " not representable as u8");
                }
                out.push_back(static_cast<std::uint8_t>(v));
                break;
        }
    }
    return out;
}

struct Decoded {
    numcore::Tensor tensor;
    DType dtype;
};

inline Decoded decode(const std::vector<std::uint8_t>& bytes, const std::string& origin = "<memory>") {
    auto need = [&](std::size_t n, const char* what) {
        if (bytes.size() < n) {
            throw TruncatedError(origin + ": truncated " + what + ": need " + std::to_string(n) + " bytes, have " +
                                 std::to_string(bytes.size()));
        }
    };
    need(4, "magic");
    if (std::memcmp(bytes.data(), "FMAP", 4) != 0) {
        std::string magic(bytes.begin(), bytes.begin() + 4);
        for (auto& c : magic) {
            if (c < 32 || c > 126) c = '?';
        }
        throw BadMagicError(origin + ": bad magic '" + magic + "', expected 'FMAP'");
    }
    need(13, "header");
    const std::uint32_t version = detail::get_u32(bytes.data() + 4);
    if (version != kVersion) {
        throw VersionError(origin + ": unsupported fmap version " + std::to_string(version) + " (expected " +
                           std::to_string(kVersion) + ")");
    }
    const std::uint8_t code = bytes[8];
    if (code > 2) throw DTypeError(origin + ": unknown dtype code " + std::to_string(code));
    const auto dtype = static_cast<DType>(code);
    const std::uint32_t ndim = detail::get_u32(bytes.data() + 9);
    std::size_t pos = 13;
    need(pos + 4ull * ndim, "extents");
    numcore::Shape shape;
    for (std::uint32_t i = 0; i < ndim; ++i) {
        const std::uint32_t e = detail::get_u32(bytes.data() + pos);
        if (e == 0) throw FormatError(origin + ": zero extent in dimension " + std::to_string(i));
        shape.push_back(e);
        pos += 4;
    }
    if (ndim == 0) throw FormatError(origin + ": zero-dimensional tensor");
    const std::size_t n = numcore::shape_numel(shape);
    const std::size_t payload = n * dtype_size(dtype);
    need(pos + payload, "payload");
    if (bytes.size() != pos + payload) {
        throw FormatError(origin + ": " + std::to_string(bytes.size() - pos - payload) + " trailing bytes after payload");
    }
    std::vector<double> data(n);
    const std::uint8_t* p = bytes.data() + pos;
    for (std::size_t i = 0; i < n; ++i) {
        switch (dtype) {
            case DType::f32: data[i] = static_cast<double>(std::bit_cast<float>(detail::get_u32(p + 4 * i))); break;
            case DType::u8: data[i] = static_cast<double>(p[i]); break;
            case DType::f64: data[i] = std::bit_cast<double>(detail::get_u64(p + 8 * i)); break;
        }
    }
    return Decoded{numcore::Tensor(std::move(shape), std::move(data)), dtype};
}

inline void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed for " + path.string());
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string() + " for reading");
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

inline void save_fmap(const numcore::Tensor& t, const std::filesystem::path& path, DType dtype = DType::f32) {
    write_bytes(path, encode(t, dtype));
}

inline Decoded load_fmap_with_dtype(const std::filesystem::path& path) { return decode(read_bytes(path), path.string()); }

inline numcore::Tensor load_fmap(const std::filesystem::path& path) { return load_fmap_with_dtype(path).tensor; }

}  // namespace stableidm::fmap
