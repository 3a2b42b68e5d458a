#pragma once

// Little-endian byte serialization helpers for the on-disk formats. Raw
// struct memory is never written; every field goes through these so the
// layout is identical across builds.

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include <zlib.h>

#include "crossl/errors.hpp"

namespace crossl::wire {

inline void put_u32(std::vector<std::uint8_t>& buf, std::uint32_t v) {
    buf.push_back(static_cast<std::uint8_t>(v));
    buf.push_back(static_cast<std::uint8_t>(v >> 8));
    buf.push_back(static_cast<std::uint8_t>(v >> 16));
    buf.push_back(static_cast<std::uint8_t>(v >> 24));
}

inline void put_f64(std::vector<std::uint8_t>& buf, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

inline void put_bytes(std::vector<std::uint8_t>& buf, const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    buf.insert(buf.end(), p, p + n);
}

// Sequential reader with offset-aware errors.
class Reader {
public:
    Reader(const std::vector<std::uint8_t>& buf, std::string what)
        : buf_(buf), what_(std::move(what)) {}

    std::size_t offset() const { return off_; }
    std::size_t remaining() const { return buf_.size() - off_; }

    std::uint32_t u32() {
        need(4, "u32");
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[off_ + i]) << (8 * i);
        off_ += 4;
        return v;
    }

    double f64() {
        need(8, "f64");
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf_[off_ + i]) << (8 * i);
        off_ += 8;
        double v;
        std::memcpy(&v, &bits, sizeof(v));
        return v;
    }

    std::string str(std::size_t n) {
        need(n, "string");
        std::string s(reinterpret_cast<const char*>(buf_.data() + off_), n);
        off_ += n;
        return s;
    }

    void f64_block(double* out, std::size_t count) {
        need(count * 8, "f64 block");
        for (std::size_t i = 0; i < count; ++i) out[i] = f64();
    }

    void expect_magic(const char* magic) {
        const std::size_t n = std::strlen(magic);
        std::size_t at = off_;
        std::string got = str(n);
        if (got != magic) {
            throw format_error(what_ + ": bad magic at offset " + std::to_string(at) +
                               " (expected \"" + magic + "\")");
        }
    }

    [[noreturn]] void fail(const std::string& msg) const {
        throw format_error(what_ + ": " + msg + " at offset " + std::to_string(off_));
    }

private:
    void need(std::size_t n, const char* field) {
        if (off_ + n > buf_.size()) {
            throw format_error(what_ + ": truncated reading " + field + " at offset " +
                               std::to_string(off_) + " (file has " +
                               std::to_string(buf_.size()) + " bytes)");
        }
    }

    const std::vector<std::uint8_t>& buf_;
    std::string what_;
    std::size_t off_ = 0;
};

inline std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
    return static_cast<std::uint32_t>(
        ::crc32(0L, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes);
void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

} // namespace crossl::wire
