// Fixed point on the periodic Lippmann-Schwinger equation, discretized with
// bilinear pixel elements integrated at the element centre:
//   u <- u - K0^-1 f(u),   f(u) = sum_e B^T sigma(E + B u)
// K0 is the stiffness of the homogeneous reference medium. On a periodic grid
// it is block-diagonal in Fourier space, so applying its inverse costs one
// forward and one inverse FFT per displacement component. Each iterate is
// compatible by construction; at the fixed point f = 0, which is the exact
// discrete equilibrium of the same element model the fem scheme assembles.
// The reference Lame constants are the arithmetic mean of the two phases.

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <memory>
#include <mutex>
#include <numbers>

#include "microforge/homogenize/solver.hpp"
#include "pixel_element.hpp"

namespace mf::homog::detail {

namespace {

struct FftwFree {
    void operator()(void* p) const noexcept { fftw_free(p); }
};
template <class T>
using FftwBuffer = std::unique_ptr<T[], FftwFree>;

template <class T>
FftwBuffer<T> fftw_buffer(std::size_t n) {
    auto* p = static_cast<T*>(fftw_malloc(sizeof(T) * n));
    if (!p) throw std::bad_alloc();
    return FftwBuffer<T>(p);
}

// The FFTW planner is not thread-safe; execution is.
std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}

struct PlanDeleter {
    void operator()(fftw_plan_s* p) const noexcept {
        std::lock_guard lock(planner_mutex());
        fftw_destroy_plan(p);
    }
};
using Plan = std::unique_ptr<fftw_plan_s, PlanDeleter>;

using cd = std::complex<double>;

// Inverse of the 2x2 Hermitian reference stiffness at one frequency.
struct InvBlock {
    double a = 0.0;
    cd b{};
    double d = 0.0;
};

std::vector<InvBlock> reference_inverse(int n, const Eigen::Matrix3d& c0, const Mat38& b) {
    const int nh = n / 2 + 1;
    std::vector<InvBlock> out(static_cast<std::size_t>(n) * nh);
    const double two_pi_n = 2.0 * std::numbers::pi / n;
    for (int r = 0; r < n; ++r) {
        for (int kx = 0; kx < nh; ++kx) {
            if (r == 0 && kx == 0) continue;
            Eigen::Matrix<cd, 3, 2> bh = Eigen::Matrix<cd, 3, 2>::Zero();
            for (int a = 0; a < 4; ++a) {
                const double th = two_pi_n * (kx * kNodeCol[static_cast<std::size_t>(a)] +
                                              r * kNodeRow[static_cast<std::size_t>(a)]);
                bh += b.middleCols<2>(2 * a).cast<cd>() * std::polar(1.0, th);
            }
            const Eigen::Matrix2cd k = bh.adjoint() * c0.cast<cd>() * bh;
            const double k11 = k(0, 0).real(), k22 = k(1, 1).real();
            // Checkerboard frequency: no strain, no force, no update.
            if (k11 + k22 < 1e-10 * c0.norm()) continue;
            const cd k12 = k(0, 1);
            const double det = k11 * k22 - std::norm(k12);
            out[static_cast<std::size_t>(r) * nh + kx] = {k22 / det, -k12 / det, k11 / det};
        }
    }
    return out;
}

}  // namespace

HomogenizationResult solve_spectral(const PhaseMap& pm, const StiffnessTensor2D& cm, const StiffnessTensor2D& ci,
                                    const SolverConfig& cfg) {
    const int n = pm.width;
    const std::size_t npix = static_cast<std::size_t>(n) * n;
    const int nh = n / 2 + 1;
    const std::size_t nfreq = static_cast<std::size_t>(n) * nh;

    const Eigen::Matrix3d c0 = 0.5 * (cm.voigt + ci.voigt);
    const Mat38 b = centre_strain_matrix();
    const std::vector<InvBlock> k0inv = reference_inverse(n, c0, b);
    const std::array<Eigen::Matrix3d, 2> cphase = {cm.voigt, ci.voigt};

    std::array<FftwBuffer<double>, 2> u, f;
    std::array<FftwBuffer<fftw_complex>, 2> fh;
    for (int c = 0; c < 2; ++c) {
        u[c] = fftw_buffer<double>(npix);
        f[c] = fftw_buffer<double>(npix);
        fh[c] = fftw_buffer<fftw_complex>(nfreq);
    }
    // One plan pair; new-array execute reuses it for both components.
    Plan fwd, inv;
    {
        std::lock_guard lock(planner_mutex());
        fwd.reset(fftw_plan_dft_r2c_2d(n, n, f[0].get(), fh[0].get(), FFTW_ESTIMATE));
        inv.reset(fftw_plan_dft_c2r_2d(n, n, fh[0].get(), f[0].get(), FFTW_ESTIMATE));
    }

    std::vector<std::array<std::size_t, 4>> conn(npix);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c)
            for (std::size_t a = 0; a < 4; ++a)
                conn[static_cast<std::size_t>(r * n + c)][a] =
                    static_cast<std::size_t>(((r + kNodeRow[a]) % n) * n + (c + kNodeCol[a]) % n);

    HomogenizationResult result;
    const double inv_npix = 1.0 / static_cast<double>(npix);

    for (int load = 0; load < 3; ++load) {
        Eigen::Vector3d macro = Eigen::Vector3d::Zero();
        macro(load) = 1.0;
        std::fill_n(u[0].get(), npix, 0.0);
        std::fill_n(u[1].get(), npix, 0.0);

        double residual = 0.0;
        Eigen::Vector3d mean_sig;
        int it = 0;
        for (;; ++it) {
            std::fill_n(f[0].get(), npix, 0.0);
            std::fill_n(f[1].get(), npix, 0.0);
            mean_sig.setZero();
            for (std::size_t e = 0; e < npix; ++e) {
                const auto& nodes = conn[e];
                Eigen::Matrix<double, 8, 1> ue;
                for (std::size_t a = 0; a < 4; ++a) {
                    ue(static_cast<Eigen::Index>(2 * a)) = u[0][nodes[a]];
                    ue(static_cast<Eigen::Index>(2 * a + 1)) = u[1][nodes[a]];
                }
                const Eigen::Matrix3d& c = cphase[pm.phase[e] ? 1 : 0];
                const Eigen::Vector3d sig = c * (macro + b * ue);
                mean_sig += sig;
                const Eigen::Matrix<double, 8, 1> fe = b.transpose() * sig;
                for (std::size_t a = 0; a < 4; ++a) {
                    f[0][nodes[a]] += fe(static_cast<Eigen::Index>(2 * a));
                    f[1][nodes[a]] += fe(static_cast<Eigen::Index>(2 * a + 1));
                }
            }
            mean_sig *= inv_npix;

            double f2 = 0.0;
            for (int c = 0; c < 2; ++c)
                for (std::size_t p = 0; p < npix; ++p) f2 += f[c][p] * f[c][p];
            // Nodal forces in pixel units are the discrete divergence of stress.
            residual = std::sqrt(f2 * inv_npix) / mean_sig.norm();
            if (residual < cfg.tolerance) break;
            if (it >= cfg.max_iterations) throw NonConvergenceError(residual, it);

            for (int c = 0; c < 2; ++c) fftw_execute_dft_r2c(fwd.get(), f[c].get(), fh[c].get());
            for (std::size_t k = 0; k < nfreq; ++k) {
                const InvBlock& g = k0inv[k];
                const cd f1(fh[0][k][0], fh[0][k][1]), f2c(fh[1][k][0], fh[1][k][1]);
                const cd d1 = -(g.a * f1 + g.b * f2c) * inv_npix;
                const cd d2 = -(std::conj(g.b) * f1 + g.d * f2c) * inv_npix;
                fh[0][k][0] = d1.real();
                fh[0][k][1] = d1.imag();
                fh[1][k][0] = d2.real();
                fh[1][k][1] = d2.imag();
            }
            for (int c = 0; c < 2; ++c) {
                fftw_execute_dft_c2r(inv.get(), fh[c].get(), f[c].get());
                double* uc = u[c].get();
                const double* du = f[c].get();
                for (std::size_t p = 0; p < npix; ++p) uc[p] += du[p];
            }
        }
        result.iterations[static_cast<std::size_t>(load)] = it;
        result.residual = std::max(result.residual, residual);
        result.raw.voigt.col(load) = mean_sig;
    }
    return result;
}

}  // namespace mf::homog::detail
