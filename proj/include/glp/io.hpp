#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

namespace glp {

/// Malformed binary file. `kind` distinguishes the failure so callers can
/// report "wrong magic" vs "unsupported version" vs "truncated".
class FileFormatError : public std::runtime_error {
  public:
    enum class Kind { BadMagic, BadVersion, Truncated, BadValue };

    FileFormatError(Kind kind, const std::string& msg)
        : std::runtime_error(msg), kind_(kind) {}

    Kind kind() const { return kind_; }

  private:
    Kind kind_;
};

static_assert(sizeof(double) == 8, "requires 64-bit IEEE double");
static_assert(sizeof(float) == 4, "requires 32-bit IEEE float");

template <typename T>
void write_pod(std::ostream& out, const T& value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const char* what) {
    T value;
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in)
        throw FileFormatError(FileFormatError::Kind::Truncated,
                              std::string("truncated file while reading ") + what);
    return value;
}

inline void write_magic(std::ostream& out, const char magic[4]) {
    out.write(magic, 4);
}

inline void expect_magic(std::istream& in, const char magic[4], const char* what) {
    char got[4];
    in.read(got, 4);
    if (!in)
        throw FileFormatError(FileFormatError::Kind::Truncated,
                              std::string("truncated file while reading ") + what +
                                  " magic");
    if (std::memcmp(got, magic, 4) != 0)
        throw FileFormatError(FileFormatError::Kind::BadMagic,
                              std::string("bad magic for ") + what);
}

inline std::ofstream open_for_write(const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    return out;
}

inline std::ifstream open_for_read(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    return in;
}

}  // namespace glp
