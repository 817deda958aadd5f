#include "dpspg/common.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>

namespace dpspg {

std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t fnv1a(const std::string& s) { return fnv1a(s.data(), s.size()); }

std::uint64_t derive_seed(std::uint64_t base, const std::string& role, std::uint64_t index) {
    std::uint64_t h = fnv1a(role);
    h = fnv1a(&base, sizeof(base), h);
    h = fnv1a(&index, sizeof(index), h);
    // keep zero out of the stream; splitmix works from any state but a
    // distinct nonzero value makes collisions easier to spot in dumps
    return h == 0 ? 0x9e3779b97f4a7c15ULL : h;
}

std::string to_hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

std::string fmt_double(double v) {
    // %.17g round-trips every double; trim to the shortest representation
    // that still round-trips so CSVs stay readable.
    char buf[40];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        double parsed = 0.0;
        std::sscanf(buf, "%lf", &parsed);
        if (parsed == v || (std::isnan(parsed) && std::isnan(v))) {
            return std::string(buf);
        }
    }
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
}

}  // namespace dpspg
