#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "glp/io.hpp"
#include "glp/matrix.hpp"

namespace glp {

/// Model checkpoint container: magic "GLPW", format version, a model-kind
/// tag, integer config values, then parameter tensors in declaration order
/// as shape-prefixed little-endian f64. Loading derives every shape from
/// the stored config and rejects mismatches.
namespace checkpoint {

inline constexpr char kMagic[4] = {'G', 'L', 'P', 'W'};
inline constexpr std::uint32_t kVersion = 1;

enum class ModelKind : std::uint32_t {
    Denoiser = 1,
    Sae = 2,
    SourceLm = 3,
};

inline void write(const std::string& path, ModelKind kind,
                  const std::vector<std::uint64_t>& config,
                  const std::vector<const Matrix*>& tensors) {
    std::ofstream out = open_for_write(path);
    write_magic(out, kMagic);
    write_pod(out, kVersion);
    write_pod(out, static_cast<std::uint32_t>(kind));
    write_pod(out, static_cast<std::uint64_t>(config.size()));
    for (std::uint64_t v : config) write_pod(out, v);
    write_pod(out, static_cast<std::uint64_t>(tensors.size()));
    for (const Matrix* t : tensors) {
        write_pod(out, static_cast<std::uint64_t>(t->rows));
        write_pod(out, static_cast<std::uint64_t>(t->cols));
        out.write(reinterpret_cast<const char*>(t->data.data()),
                  static_cast<std::streamsize>(t->data.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

struct Loaded {
    ModelKind kind;
    std::vector<std::uint64_t> config;
    std::vector<Matrix> tensors;
};

inline Loaded read(const std::string& path, ModelKind expected_kind) {
    std::ifstream in = open_for_read(path);
    expect_magic(in, kMagic, "checkpoint");
    const auto version = read_pod<std::uint32_t>(in, "checkpoint version");
    if (version != kVersion)
        throw FileFormatError(FileFormatError::Kind::BadVersion,
                              "unsupported checkpoint version " + std::to_string(version));
    Loaded loaded;
    loaded.kind = static_cast<ModelKind>(read_pod<std::uint32_t>(in, "model kind"));
    if (loaded.kind != expected_kind)
        throw FileFormatError(FileFormatError::Kind::BadValue,
                              "checkpoint holds a different model kind");
    const auto n_config = read_pod<std::uint64_t>(in, "config length");
    for (std::uint64_t i = 0; i < n_config; ++i)
        loaded.config.push_back(read_pod<std::uint64_t>(in, "config value"));
    const auto n_tensors = read_pod<std::uint64_t>(in, "tensor count");
    for (std::uint64_t i = 0; i < n_tensors; ++i) {
        const auto rows = read_pod<std::uint64_t>(in, "tensor rows");
        const auto cols = read_pod<std::uint64_t>(in, "tensor cols");
        Matrix t(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
        in.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(double)));
        if (!in)
            throw FileFormatError(FileFormatError::Kind::Truncated,
                                  "truncated tensor data in checkpoint");
        loaded.tensors.push_back(std::move(t));
    }
    return loaded;
}

/// Copy loaded tensors into a freshly initialized model's parameter slots,
/// insisting every shape lines up.
inline void assign_tensors(std::vector<Matrix*> dst, std::vector<Matrix>& src,
                           const char* what) {
    if (dst.size() != src.size())
        throw FileFormatError(FileFormatError::Kind::BadValue,
                              std::string(what) + ": tensor count mismatch");
    for (std::size_t i = 0; i < dst.size(); ++i) {
        if (dst[i]->rows != src[i].rows || dst[i]->cols != src[i].cols)
            throw FileFormatError(FileFormatError::Kind::BadValue,
                                  std::string(what) + ": tensor shape mismatch");
        *dst[i] = std::move(src[i]);
    }
}

}  // namespace checkpoint
}  // namespace glp
