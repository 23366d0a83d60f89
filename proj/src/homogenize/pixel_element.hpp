#pragma once

#include <Eigen/Core>

#include <array>

namespace mf::homog::detail {

using Mat38 = Eigen::Matrix<double, 3, 8>;

// Bilinear pixel element on the unit square, integrated at its centre. Local
// nodes (x, y) = (0,0) (1,0) (1,1) (0,1); x runs along columns, y along rows.
// On a periodic grid with even side the only zero-energy mode besides rigid
// translation is the global nodal checkerboard, which carries no strain.
inline constexpr std::array<int, 4> kNodeRow = {0, 0, 1, 1};
inline constexpr std::array<int, 4> kNodeCol = {0, 1, 1, 0};

inline Mat38 centre_strain_matrix() {
    const double dx[4] = {-0.5, 0.5, 0.5, -0.5};
    const double dy[4] = {-0.5, -0.5, 0.5, 0.5};
    Mat38 b = Mat38::Zero();
    for (int a = 0; a < 4; ++a) {
        b(0, 2 * a) = dx[a];
        b(1, 2 * a + 1) = dy[a];
        b(2, 2 * a) = dy[a];
        b(2, 2 * a + 1) = dx[a];
    }
    return b;
}

}  // namespace mf::homog::detail
