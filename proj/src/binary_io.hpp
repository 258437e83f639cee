#pragma once

// Little-endian fixed-width readers/writers shared by the on-disk formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <type_traits>

#include "tagknn/error.hpp"

namespace tagknn::io {

static_assert(std::endian::native == std::endian::little, "on-disk formats assume a little-endian host");

template <typename T>
void write_pod(std::ostream& out, const T& value) {
    static_assert(std::is_trivially_copyable_v<T>);
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
void write_array(std::ostream& out, std::span<const T> values) {
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
}

inline void write_short_string(std::ostream& out, const std::string& s) {
    if (s.size() > UINT16_MAX) throw ValidationError("string too long for u16 length prefix: " + s.substr(0, 32));
    write_pod(out, static_cast<std::uint16_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline void read_exact(std::istream& in, void* dst, std::size_t bytes, const char* what) {
    in.read(static_cast<char*>(dst), static_cast<std::streamsize>(bytes));
    if (static_cast<std::size_t>(in.gcount()) != bytes)
        throw IoError(std::string("truncated ") + what + ": expected " + std::to_string(bytes) + " bytes, got " +
                      std::to_string(in.gcount()));
}

template <typename T>
T read_pod(std::istream& in, const char* what) {
    T value;
    read_exact(in, &value, sizeof(T), what);
    return value;
}

inline std::string read_short_string(std::istream& in, const char* what) {
    const auto len = read_pod<std::uint16_t>(in, what);
    std::string s(len, '\0');
    if (len) read_exact(in, s.data(), len, what);
    return s;
}

inline void expect_magic(std::istream& in, const char (&magic)[5], const char* what) {
    char got[4];
    read_exact(in, got, 4, what);
    if (std::memcmp(got, magic, 4) != 0) throw IoError(std::string("bad magic in ") + what);
}

}  // namespace tagknn::io
