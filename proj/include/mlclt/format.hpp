#pragma once

#include <charconv>
#include <cstdint>
#include <string>

namespace mlclt {

// Shortest round-trip decimal.
inline std::string format_double(double v)
{
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

// FNV-1a, used to fingerprint CSV schemas.
inline std::uint64_t fnv1a(const std::string& s)
{
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

} // namespace mlclt
