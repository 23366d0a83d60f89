#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "microforge/microgen/raster.hpp"

namespace mf::homog {

/// Isotropic linear-elastic phase. Units: GPa.
struct Material {
    double young_modulus = 1.0;
    double poisson_ratio = 0.0;

    /// Throws std::invalid_argument unless E > 0 and -1 < nu < 0.5.
    void validate() const;
};

inline constexpr Material kMatrixMaterial{100.0, 0.30};
inline constexpr Material kInclusionMaterial{500.0, 0.19};

/// 3x3 stiffness in Voigt order (11, 22, 12) acting on engineering shear.
struct StiffnessTensor2D {
    Eigen::Matrix3d voigt = Eigen::Matrix3d::Zero();

    double c1111() const { return voigt(0, 0); }
    double c2222() const { return voigt(1, 1); }
    double c1212() const { return voigt(2, 2); }
    double c1122() const { return voigt(0, 1); }
    bool positive_definite() const;
    /// max |C - C^T| relative to max |C|.
    double asymmetry() const;
};

/// Plane strain (default) or plane stress stiffness of an isotropic phase.
StiffnessTensor2D phase_stiffness(const Material& m, bool plane_strain = true);

struct MixtureBounds {
    StiffnessTensor2D reuss;
    StiffnessTensor2D voigt;
};

/// Voigt: stiffness average. Reuss: inverse of the compliance average.
MixtureBounds mixture_bounds(double inclusion_fraction, const Material& matrix, const Material& inclusion,
                             bool plane_strain = true);

/// Per-pixel phase ids (0 matrix, 1 inclusion), row-major, rows along y.
struct PhaseMap {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> phase;

    static PhaseMap from_image(const microgen::RasterImage& image);
    static PhaseMap uniform(int n, std::uint8_t phase_id);
    double inclusion_fraction() const;
};

}  // namespace mf::homog
