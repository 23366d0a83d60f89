#include "microforge/homogenize/solver.hpp"

#include <cstdio>
#include <string>

namespace mf::homog {

std::string to_string(Scheme s) { return s == Scheme::spectral ? "spectral" : "fem"; }

Scheme parse_scheme(const std::string& s) {
    if (s == "spectral") return Scheme::spectral;
    if (s == "fem") return Scheme::fem;
    throw std::invalid_argument("unknown solver scheme '" + s + "'");
}

namespace {
std::string describe(double residual, int iterations) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "homogenize: no convergence after %d iterations (residual %.3e)", iterations,
                  residual);
    return buf;
}

constexpr double kBoundSlack = 1e-3;
}  // namespace

NonConvergenceError::NonConvergenceError(double r, int it)
    : std::runtime_error(describe(r, it)), residual(r), iterations(it) {}

HomogenizationResult homogenize(const PhaseMap& pm, const Material& matrix, const Material& inclusion,
                                const SolverConfig& cfg) {
    matrix.validate();
    inclusion.validate();
    if (!(cfg.tolerance > 0.0)) throw std::invalid_argument("homogenize: tolerance must be positive");
    if (cfg.max_iterations < 1) throw std::invalid_argument("homogenize: max_iterations must be at least 1");
    if (pm.height != pm.width) throw std::invalid_argument("homogenize: phase map must be square");
    if (pm.width < 16) throw std::invalid_argument("homogenize: grid must be at least 16x16");
    if (pm.phase.size() != static_cast<std::size_t>(pm.width) * pm.height) {
        throw std::invalid_argument("homogenize: phase buffer does not match dimensions");
    }

    const StiffnessTensor2D cm = phase_stiffness(matrix, cfg.plane_strain);
    const StiffnessTensor2D ci = phase_stiffness(inclusion, cfg.plane_strain);
    HomogenizationResult r = cfg.scheme == Scheme::spectral ? detail::solve_spectral(pm, cm, ci, cfg)
                                                            : detail::solve_fem(pm, cm, ci);
    r.stiffness.voigt = 0.5 * (r.raw.voigt + r.raw.voigt.transpose());

    const MixtureBounds b = mixture_bounds(pm.inclusion_fraction(), matrix, inclusion, cfg.plane_strain);
    for (int i = 0; i < 3; ++i) {
        const double v = r.stiffness.voigt(i, i);
        const double lo = b.reuss.voigt(i, i), hi = b.voigt.voigt(i, i);
        if (v < lo * (1.0 - kBoundSlack) || v > hi * (1.0 + kBoundSlack)) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "homogenize: C(%d,%d) = %.6f outside [%.6f, %.6f]", i, i, v, lo, hi);
            throw ConsistencyError(buf);
        }
    }
    if (!r.stiffness.positive_definite()) throw ConsistencyError("homogenize: effective stiffness not positive definite");
    return r;
}

}  // namespace mf::homog
