#pragma once

#include <array>
#include <stdexcept>
#include <string>

#include "microforge/homogenize/elasticity.hpp"

namespace mf::homog {

enum class Scheme {
    spectral,  // FFT-preconditioned fixed point on the periodic Lippmann-Schwinger equation
    fem,       // direct sparse solve of the same element model, grids up to kMaxFemGrid
};

std::string to_string(Scheme s);
Scheme parse_scheme(const std::string& s);

inline constexpr int kMaxFemGrid = 64;

struct SolverConfig {
    Scheme scheme = Scheme::spectral;
    double tolerance = 1e-8;  // normalized equilibrium residual
    int max_iterations = 10000;
    bool plane_strain = true;
};

class NonConvergenceError : public std::runtime_error {
public:
    NonConvergenceError(double residual, int iterations);
    double residual;
    int iterations;
};

/// Effective stiffness outside its Voigt-Reuss envelope.
class ConsistencyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct HomogenizationResult {
    StiffnessTensor2D stiffness;  // symmetrized
    StiffnessTensor2D raw;        // columns straight from the three load cases
    std::array<int, 3> iterations{};
    double residual = 0.0;        // worst final residual over load cases
};

/// Solves the three periodic cell problems (unit e11, e22 and engineering
/// shear 2e12) and returns the volume-averaged stress columns. The result is
/// symmetrized and checked against the Voigt-Reuss bounds (0.1 % slack).
HomogenizationResult homogenize(const PhaseMap& pm, const Material& matrix, const Material& inclusion,
                                const SolverConfig& cfg = {});

inline StiffnessTensor2D effective_stiffness(const PhaseMap& pm, const Material& matrix, const Material& inclusion,
                                             const SolverConfig& cfg = {}) {
    return homogenize(pm, matrix, inclusion, cfg).stiffness;
}

namespace detail {
HomogenizationResult solve_spectral(const PhaseMap& pm, const StiffnessTensor2D& cm, const StiffnessTensor2D& ci,
                                    const SolverConfig& cfg);
HomogenizationResult solve_fem(const PhaseMap& pm, const StiffnessTensor2D& cm, const StiffnessTensor2D& ci);
}  // namespace detail

}  // namespace mf::homog
