#pragma once

#include "proclip/core.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

namespace proclip::io {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

using Bytes = std::vector<std::uint8_t>;

template <typename T>
inline void put_le(Bytes& out, T value) {
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(raw), std::end(raw));
    out.insert(out.end(), std::begin(raw), std::end(raw));
}

inline void put_bytes(Bytes& out, std::string_view s) { out.insert(out.end(), s.begin(), s.end()); }

/// Sequential little-endian reader that reports the byte offset of any failure.
class ByteReader {
public:
    explicit ByteReader(const Bytes& data) : data_(data) {}

    [[nodiscard]] std::uint64_t offset() const noexcept { return pos_; }
    [[nodiscard]] bool at_end() const noexcept { return pos_ == data_.size(); }
    [[nodiscard]] std::uint64_t remaining() const noexcept { return data_.size() - pos_; }

    template <typename T>
    T get(const char* what) {
        need(sizeof(T), what);
        std::uint8_t raw[sizeof(T)];
        std::memcpy(raw, data_.data() + pos_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(raw), std::end(raw));
        T value;
        std::memcpy(&value, raw, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }

    std::string get_string(std::size_t n, const char* what) {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    void need(std::uint64_t n, const char* what) const {
        if (remaining() < n)
            throw ParseError(std::string("truncated input while reading ") + what, pos_);
    }

private:
    const Bytes& data_;
    std::uint64_t pos_ = 0;
};

[[nodiscard]] inline Bytes read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path.string() + " for reading");
    return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, const Bytes& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ConfigError("write failed for " + path.string());
}

inline void write_text(const std::filesystem::path& path, std::string_view text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw ConfigError("write failed for " + path.string());
}

[[nodiscard]] inline std::string read_text(const std::filesystem::path& path) {
    const Bytes b = read_file(path);
    return std::string(b.begin(), b.end());
}

}  // namespace proclip::io
