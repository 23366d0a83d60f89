#include "microforge/homogenize/elasticity.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include <cmath>

namespace mf::homog {

void Material::validate() const {
    if (!(young_modulus > 0.0)) throw std::invalid_argument("material: Young's modulus must be positive");
    if (!(poisson_ratio > -1.0 && poisson_ratio < 0.5)) {
        throw std::invalid_argument("material: Poisson's ratio must lie in (-1, 0.5)");
    }
}

bool StiffnessTensor2D::positive_definite() const {
    const Eigen::Matrix3d sym = 0.5 * (voigt + voigt.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(sym);
    return es.eigenvalues().minCoeff() > 0.0;
}

double StiffnessTensor2D::asymmetry() const {
    const double scale = voigt.cwiseAbs().maxCoeff();
    if (scale == 0.0) return 0.0;
    return (voigt - voigt.transpose()).cwiseAbs().maxCoeff() / scale;
}

StiffnessTensor2D phase_stiffness(const Material& m, bool plane_strain) {
    m.validate();
    const double e = m.young_modulus, nu = m.poisson_ratio;
    StiffnessTensor2D c;
    if (plane_strain) {
        const double lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
        const double mu = e / (2.0 * (1.0 + nu));
        c.voigt << lambda + 2.0 * mu, lambda, 0.0,
                   lambda, lambda + 2.0 * mu, 0.0,
                   0.0, 0.0, mu;
    } else {
        const double f = e / (1.0 - nu * nu);
        c.voigt << f, f * nu, 0.0,
                   f * nu, f, 0.0,
                   0.0, 0.0, e / (2.0 * (1.0 + nu));
    }
    return c;
}

MixtureBounds mixture_bounds(double vf, const Material& matrix, const Material& inclusion, bool plane_strain) {
    if (!(vf >= 0.0 && vf <= 1.0)) throw std::invalid_argument("mixture_bounds: fraction outside [0, 1]");
    const Eigen::Matrix3d cm = phase_stiffness(matrix, plane_strain).voigt;
    const Eigen::Matrix3d ci = phase_stiffness(inclusion, plane_strain).voigt;
    MixtureBounds b;
    b.voigt.voigt = (1.0 - vf) * cm + vf * ci;
    b.reuss.voigt = ((1.0 - vf) * cm.inverse() + vf * ci.inverse()).inverse();
    return b;
}

PhaseMap PhaseMap::from_image(const microgen::RasterImage& image) {
    PhaseMap pm;
    pm.height = image.height;
    pm.width = image.width;
    pm.phase.resize(image.pixels.size());
    for (std::size_t i = 0; i < pm.phase.size(); ++i) pm.phase[i] = image.pixels[i] >= 128 ? 1 : 0;
    return pm;
}

PhaseMap PhaseMap::uniform(int n, std::uint8_t phase_id) {
    PhaseMap pm;
    pm.height = pm.width = n;
    pm.phase.assign(static_cast<std::size_t>(n) * n, phase_id);
    return pm;
}

double PhaseMap::inclusion_fraction() const {
    if (phase.empty()) return 0.0;
    std::size_t on = 0;
    for (auto p : phase) on += p;
    return static_cast<double>(on) / static_cast<double>(phase.size());
}

}  // namespace mf::homog
