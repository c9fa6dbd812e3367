#pragma once

#include "slipnet/error.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace slipnet::io {

/// Appends little-endian scalars to a byte buffer.
class ByteWriter {
public:
    void bytes(std::string_view raw) { buf_.insert(buf_.end(), raw.begin(), raw.end()); }

    template <typename T>
    void put(T value) {
        static_assert(std::is_arithmetic_v<T>);
        if constexpr (std::is_floating_point_v<T>) {
            using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
            put(std::bit_cast<U>(value));
        } else {
            using U = std::make_unsigned_t<T>;
            auto u = static_cast<U>(value);
            for (std::size_t i = 0; i < sizeof(T); ++i) {
                buf_.push_back(static_cast<unsigned char>(u & 0xFFu));
                if constexpr (sizeof(T) > 1) u = static_cast<U>(u >> 8);
            }
        }
    }

    void pad(std::size_t n) { buf_.insert(buf_.end(), n, 0); }

    std::vector<unsigned char>& buffer() { return buf_; }

private:
    std::vector<unsigned char> buf_;
};

/// Bounds-checked little-endian cursor. Truncation raises MalformedHeader.
class ByteReader {
public:
    explicit ByteReader(const std::vector<unsigned char>& data, std::size_t start = 0) : data_(data), pos_(start) {}

    bool has(std::size_t n) const { return pos_ + n <= data_.size(); }
    std::size_t remaining() const { return data_.size() - pos_; }
    std::size_t position() const { return pos_; }

    std::string bytes(std::size_t n) {
        need(n);
        std::string out(reinterpret_cast<const char*>(data_.data() + pos_), n);
        pos_ += n;
        return out;
    }

    template <typename T>
    T get() {
        static_assert(std::is_arithmetic_v<T>);
        if constexpr (std::is_floating_point_v<T>) {
            using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
            return std::bit_cast<T>(get<U>());
        } else {
            need(sizeof(T));
            using U = std::make_unsigned_t<T>;
            U u = 0;
            for (std::size_t i = 0; i < sizeof(T); ++i) {
                u = static_cast<U>(u | (static_cast<U>(data_[pos_ + i]) << (8 * i)));
            }
            pos_ += sizeof(T);
            return static_cast<T>(u);
        }
    }

    void skip(std::size_t n) {
        need(n);
        pos_ += n;
    }

private:
    void need(std::size_t n) const {
        if (!has(n)) throw Error(ErrorKind::MalformedHeader, "unexpected end of data");
    }

    const std::vector<unsigned char>& data_;
    std::size_t pos_ = 0;
};

std::vector<unsigned char> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes);
void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

} // namespace slipnet::io
