#include "microforge/microgen/sampling.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "microforge/common/rng.hpp"

namespace mf::microgen {

std::vector<std::vector<double>> lhs_sample(std::size_t n, std::span<const Interval> ranges, std::uint64_t seed) {
    if (n == 0) throw std::invalid_argument("lhs_sample: n must be at least 1");
    for (const auto& r : ranges) {
        if (!(r.hi > r.lo)) throw std::invalid_argument("lhs_sample: degenerate range");
    }
    Rng rng(seed);
    std::vector<std::vector<double>> out(n, std::vector<double>(ranges.size()));
    std::vector<std::size_t> strata(n);
    for (std::size_t d = 0; d < ranges.size(); ++d) {
        std::iota(strata.begin(), strata.end(), std::size_t{0});
        rng.shuffle(std::span(strata));
        const double width = (ranges[d].hi - ranges[d].lo) / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            out[i][d] = ranges[d].lo + (static_cast<double>(strata[i]) + rng.uniform()) * width;
        }
    }
    return out;
}

std::vector<DescriptorPoint> sample_fiber_descriptors(std::size_t n, std::uint64_t seed) {
    const Interval ranges[] = {{static_cast<double>(kMinParticles), static_cast<double>(kMaxParticles)},
                               {kMinAspect, kMaxAspect},
                               {kMinFraction, kMaxFraction}};
    const auto raw = lhs_sample(n, ranges, seed);
    std::vector<DescriptorPoint> out;
    out.reserve(n);
    for (const auto& row : raw) {
        out.push_back({static_cast<int>(std::lround(row[0])), row[1], row[2]});
    }
    return out;
}

}  // namespace mf::microgen
