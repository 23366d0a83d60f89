#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mf::microgen {

/// Point in the short-fiber descriptor space.
struct DescriptorPoint {
    int n_particles = 1;
    double aspect_ratio = 1.0;
    double volume_fraction = 0.1;

    bool operator==(const DescriptorPoint&) const = default;
};

/// Short-fiber design space.
inline constexpr int kMinParticles = 15;
inline constexpr int kMaxParticles = 35;
inline constexpr double kMinAspect = 1.0;
inline constexpr double kMaxAspect = 4.0;
inline constexpr double kMinFraction = 0.10;
inline constexpr double kMaxFraction = 0.40;

/// Ellipse in the unit periodic square. `a` is the major semi-axis and
/// `theta` its angle from the x axis.
struct Ellipse {
    double x = 0.0;
    double y = 0.0;
    double a = 0.0;
    double b = 0.0;
    double theta = 0.0;

    double area() const noexcept;
    /// Point membership using the minimum periodic image.
    bool contains(double px, double py) const noexcept;
    /// Same test for a point already expressed relative to the centre.
    bool contains_offset(double dx, double dy) const noexcept;

    bool operator==(const Ellipse&) const = default;
};

/// Representative volume element: unit square with periodic wrap.
struct Rve {
    std::vector<Ellipse> inclusions;

    double analytic_fraction() const noexcept;
    bool operator==(const Rve&) const = default;
};

/// Minimum-image displacement on the unit torus.
double wrap_delta(double d) noexcept;

/// Conservative overlap predicate: bounding-circle rejection, then 64
/// boundary samples per ellipse tested against the other ellipse.
bool overlaps(const Ellipse& p, const Ellipse& q) noexcept;

inline constexpr int kBoundarySamples = 64;

/// Semi-axes for a descriptor: each fibre covers v_f / N_p of the unit
/// domain with a / b = A_r.
struct FiberSize {
    double a = 0.0;
    double b = 0.0;
};
FiberSize size_fibers(const DescriptorPoint& d);

/// Raised when random sequential adsorption runs out of attempts.
class PlacementError : public std::runtime_error {
public:
    PlacementError(const DescriptorPoint& d, std::size_t attempts);

    DescriptorPoint descriptor;
    std::size_t attempts;
};

struct Placement {
    Rve rve;
    int reseeds = 0;  // full-RVE restarts that were needed
};

/// Full-RVE restarts before a PlacementError surfaces.
inline constexpr int kMaxReseeds = 8;

/// Places N_p non-overlapping ellipses of size_fibers(d) with uniform
/// centres and orientations in [0, pi).
Placement rsa_place(const DescriptorPoint& d, std::uint64_t seed, std::size_t max_attempts);

/// round(v_f / (pi r^2)).
std::size_t circle_count(double volume_fraction, double radius);

/// Fixed-radius circles whose count realises v_f to within one circle area.
Placement rsa_place_circles(double volume_fraction, double radius, std::uint64_t seed, std::size_t max_attempts);

}  // namespace mf::microgen
