#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <string>
#include <vector>

#include "dclseg/errors.hpp"

namespace dclseg::detail {

// Little-endian byte packing independent of host order.
class ByteWriter {
public:
    void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
    void u8(std::uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void str(const std::string& s) {
        u64(s.size());
        raw(s.data(), s.size());
    }
    const std::vector<char>& bytes() const { return bytes_; }

private:
    std::vector<char> bytes_;
};

class ByteReader {
public:
    ByteReader(std::vector<char> bytes, std::string source) : bytes_(std::move(bytes)), source_(std::move(source)) {}
    void need(std::size_t n) const {
        if (n > bytes_.size() - pos_) throw FormatError(source_ + ": truncated file");
    }
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(bytes_[pos_++]);
    }
    std::uint32_t u32() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    float f32() { return std::bit_cast<float>(u32()); }
    template <std::size_t N>
    bool magic(const char (&m)[N]) {
        need(N);
        const bool ok = std::equal(m, m + N, bytes_.begin() + static_cast<std::ptrdiff_t>(pos_));
        pos_ += N;
        return ok;
    }
    std::string str() {
        const std::uint64_t n = u64();
        need(n);
        std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_), bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return s;
    }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    std::vector<char> bytes_;
    std::string source_;
    std::size_t pos_ = 0;
};

}  // namespace dclseg::detail
