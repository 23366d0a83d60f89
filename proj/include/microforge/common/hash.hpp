#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>

namespace mf {

/// 64-bit FNV-1a, incremental.
class Fnv1a {
public:
    void update(const void* data, std::size_t n) noexcept {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h_ ^= p[i];
            h_ *= 0x100000001B3ULL;
        }
    }
    void update(std::string_view s) noexcept { update(s.data(), s.size()); }
    void update(std::span<const double> v) noexcept { update(v.data(), v.size_bytes()); }

    std::uint64_t digest() const noexcept { return h_; }
    std::string hex() const;

private:
    std::uint64_t h_ = 0xCBF29CE484222325ULL;
};

inline std::string Fnv1a::hex() const {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    std::uint64_t v = h_;
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xF];
        v >>= 4;
    }
    return out;
}

inline std::string fnv1a_hex(std::string_view s) {
    Fnv1a h;
    h.update(s);
    return h.hex();
}

}  // namespace mf
