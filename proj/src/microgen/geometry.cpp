#include "microforge/microgen/geometry.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "microforge/common/rng.hpp"

namespace mf::microgen {

double Ellipse::area() const noexcept { return std::numbers::pi * a * b; }

bool Ellipse::contains_offset(double dx, double dy) const noexcept {
    const double c = std::cos(theta), s = std::sin(theta);
    const double u = (dx * c + dy * s) / a;
    const double v = (-dx * s + dy * c) / b;
    return u * u + v * v <= 1.0;
}

bool Ellipse::contains(double px, double py) const noexcept {
    return contains_offset(wrap_delta(px - x), wrap_delta(py - y));
}

double Rve::analytic_fraction() const noexcept {
    double s = 0.0;
    for (const auto& e : inclusions) s += e.area();
    return s;
}

double wrap_delta(double d) noexcept { return d - std::round(d); }

bool overlaps(const Ellipse& p, const Ellipse& q) noexcept {
    const double dx = wrap_delta(q.x - p.x);
    const double dy = wrap_delta(q.y - p.y);
    const double reach = p.a + q.a;
    const double d2 = dx * dx + dy * dy;
    if (d2 > reach * reach) return false;
    const double inner = p.b + q.b;
    if (d2 < inner * inner) return true;
    if (p.a == p.b && q.a == q.b) return false;  // circles: bounding test is exact

    // Boundary of `from` sampled in the frame centred on `to`.
    auto boundary_hits = [](const Ellipse& from, const Ellipse& to, double ox, double oy) {
        const double c = std::cos(from.theta), s = std::sin(from.theta);
        for (int k = 0; k < kBoundarySamples; ++k) {
            const double t = 2.0 * std::numbers::pi * k / kBoundarySamples;
            const double lx = from.a * std::cos(t), ly = from.b * std::sin(t);
            if (to.contains_offset(ox + lx * c - ly * s, oy + lx * s + ly * c)) return true;
        }
        return false;
    };
    // p's centre seen from q is (-dx, -dy).
    return boundary_hits(p, q, -dx, -dy) || boundary_hits(q, p, dx, dy);
}

FiberSize size_fibers(const DescriptorPoint& d) {
    if (d.n_particles < 1 || !(d.aspect_ratio >= 1.0) || !(d.volume_fraction > 0.0 && d.volume_fraction < 1.0)) {
        throw std::invalid_argument("size_fibers: invalid descriptor");
    }
    const double a = std::sqrt(d.volume_fraction * d.aspect_ratio / (std::numbers::pi * d.n_particles));
    return {a, a / d.aspect_ratio};
}

namespace {

std::string describe(const DescriptorPoint& d, std::size_t attempts) {
    std::ostringstream os;
    os << "random sequential adsorption failed for N_p=" << d.n_particles << " A_r=" << d.aspect_ratio
       << " v_f=" << d.volume_fraction << " after " << attempts << " attempts";
    return os.str();
}

// One RSA pass; returns false when some particle exhausts its attempts.
bool place_once(std::size_t count, double a, double b, bool random_orientation, Rng& rng, std::size_t max_attempts,
                Rve& out, std::size_t& attempts_used) {
    out.inclusions.clear();
    out.inclusions.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        bool placed = false;
        for (std::size_t attempt = 0; attempt < max_attempts; ++attempt) {
            ++attempts_used;
            Ellipse e;
            e.x = rng.uniform();
            e.y = rng.uniform();
            e.a = a;
            e.b = b;
            e.theta = random_orientation ? rng.uniform() * std::numbers::pi : 0.0;
            bool clash = false;
            for (const auto& other : out.inclusions) {
                if (overlaps(e, other)) {
                    clash = true;
                    break;
                }
            }
            if (!clash) {
                out.inclusions.push_back(e);
                placed = true;
                break;
            }
        }
        if (!placed) return false;
    }
    return true;
}

Placement place_with_reseeds(const DescriptorPoint& d, std::size_t count, double a, double b, bool orient,
                             std::uint64_t seed, std::size_t max_attempts) {
    if (max_attempts == 0) throw std::invalid_argument("rsa_place: max_attempts must be positive");
    Placement result;
    std::size_t attempts = 0;
    for (int round = 0; round <= kMaxReseeds; ++round) {
        Rng rng(round == 0 ? seed : derive_seed(seed, static_cast<std::uint64_t>(round)));
        if (place_once(count, a, b, orient, rng, max_attempts, result.rve, attempts)) {
            result.reseeds = round;
            return result;
        }
    }
    throw PlacementError(d, attempts);
}

}  // namespace

PlacementError::PlacementError(const DescriptorPoint& d, std::size_t n)
    : std::runtime_error(describe(d, n)), descriptor(d), attempts(n) {}

Placement rsa_place(const DescriptorPoint& d, std::uint64_t seed, std::size_t max_attempts) {
    const FiberSize size = size_fibers(d);
    return place_with_reseeds(d, static_cast<std::size_t>(d.n_particles), size.a, size.b, true, seed, max_attempts);
}

std::size_t circle_count(double volume_fraction, double radius) {
    return static_cast<std::size_t>(std::llround(volume_fraction / (std::numbers::pi * radius * radius)));
}

Placement rsa_place_circles(double volume_fraction, double radius, std::uint64_t seed, std::size_t max_attempts) {
    if (!(volume_fraction >= kMinFraction && volume_fraction <= kMaxFraction)) {
        throw std::invalid_argument("rsa_place_circles: volume fraction outside [0.10, 0.40]");
    }
    if (!(radius > 0.0 && radius < 0.5)) throw std::invalid_argument("rsa_place_circles: radius outside (0, 0.5)");
    const std::size_t count = circle_count(volume_fraction, radius);
    const DescriptorPoint d{static_cast<int>(count), 1.0, volume_fraction};
    return place_with_reseeds(d, count, radius, radius, false, seed, max_attempts);
}

}  // namespace mf::microgen
