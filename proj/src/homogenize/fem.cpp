// Periodic bilinear finite elements on the pixel grid, one element per pixel,
// one-point (centre) quadrature. Unknowns are the periodic displacement
// fluctuation. Node 0 is pinned against rigid translation; on even grids node 1
// is pinned as well, which removes the strain-free nodal checkerboard.

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "microforge/homogenize/solver.hpp"
#include "pixel_element.hpp"

namespace mf::homog::detail {

namespace {

using Mat8 = Eigen::Matrix<double, 8, 8>;
using Mat83 = Eigen::Matrix<double, 8, 3>;

struct ElementMatrices {
    Mat8 k;     // int B^T C B
    Mat83 f;    // int B^T C
    Mat38 cb;   // int C B
    Eigen::Matrix3d c;
};

ElementMatrices element(const Eigen::Matrix3d& c) {
    const Mat38 b = centre_strain_matrix();
    return {b.transpose() * c * b, b.transpose() * c, c * b, c};
}

}  // namespace

HomogenizationResult solve_fem(const PhaseMap& pm, const StiffnessTensor2D& cm, const StiffnessTensor2D& ci) {
    const int n = pm.width;
    if (n > kMaxFemGrid) {
        throw std::invalid_argument("fem scheme: grid " + std::to_string(n) + " exceeds " +
                                    std::to_string(kMaxFemGrid));
    }
    const std::array<ElementMatrices, 2> mats = {element(cm.voigt), element(ci.voigt)};
    const int nnode = n * n;
    const int npinned = n % 2 == 0 ? 2 : 1;
    const int ndof = 2 * (nnode - npinned);
    auto pinned = [npinned](int node) { return node < npinned; };
    auto dof = [npinned](int node, int d) { return 2 * (node - npinned) + d; };
    auto node_of = [n](int r, int c) { return ((r + n) % n) * n + (c + n) % n; };

    std::vector<std::array<int, 4>> conn(static_cast<std::size_t>(nnode));
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c)
            conn[static_cast<std::size_t>(r * n + c)] = {node_of(r, c), node_of(r, c + 1), node_of(r + 1, c + 1),
                                                         node_of(r + 1, c)};

    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(nnode) * 64);
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(ndof, 3);
    for (std::size_t e = 0; e < conn.size(); ++e) {
        const ElementMatrices& m = mats[pm.phase[e] ? 1 : 0];
        for (int a = 0; a < 8; ++a) {
            const int node_a = conn[e][static_cast<std::size_t>(a / 2)];
            if (pinned(node_a)) continue;
            const int ia = dof(node_a, a % 2);
            rhs.row(ia) -= m.f.row(a);
            for (int b = 0; b < 8; ++b) {
                const int node_b = conn[e][static_cast<std::size_t>(b / 2)];
                if (pinned(node_b)) continue;
                trip.emplace_back(ia, dof(node_b, b % 2), m.k(a, b));
            }
        }
    }
    Eigen::SparseMatrix<double> k(ndof, ndof);
    k.setFromTriplets(trip.begin(), trip.end());
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(k);
    if (ldlt.info() != Eigen::Success) throw std::runtime_error("fem scheme: factorization failed");
    const Eigen::MatrixXd u = ldlt.solve(rhs);

    HomogenizationResult result;
    Eigen::Matrix3d avg = Eigen::Matrix3d::Zero();
    for (std::size_t e = 0; e < conn.size(); ++e) {
        const ElementMatrices& m = mats[pm.phase[e] ? 1 : 0];
        Mat83 ue = Mat83::Zero();
        for (int a = 0; a < 8; ++a) {
            const int node_a = conn[e][static_cast<std::size_t>(a / 2)];
            if (!pinned(node_a)) ue.row(a) = u.row(dof(node_a, a % 2));
        }
        avg += m.c + m.cb * ue;
    }
    result.raw.voigt = avg / static_cast<double>(nnode);
    // Equilibrium residual of the assembled system, relative to the load.
    const Eigen::MatrixXd res = k * u - rhs;
    result.residual = res.norm() / std::max(rhs.norm(), 1e-300);
    return result;
}

}  // namespace mf::homog::detail
