#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "microforge/microgen/geometry.hpp"

namespace mf::microgen {

struct Interval {
    double lo = 0.0;
    double hi = 1.0;
};

/// Latin hypercube sample: n points, one per stratum in every dimension.
/// Returns n rows of ranges.size() coordinates.
std::vector<std::vector<double>> lhs_sample(std::size_t n, std::span<const Interval> ranges, std::uint64_t seed);

/// LHS over (N_p, A_r, v_f) with the design ranges; N_p rounded afterwards.
std::vector<DescriptorPoint> sample_fiber_descriptors(std::size_t n, std::uint64_t seed);

}  // namespace mf::microgen
