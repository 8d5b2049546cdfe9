#include "wendy/testfn.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <random>
#include <stdexcept>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

namespace wendy {

namespace {

constexpr double kPi = 3.14159265358979323846;

using SpMat = Eigen::SparseMatrix<double>;

// Values of the unit-norm bump and its derivative on the 2*m_t+1 point
// window around the center. The first and last window entries are exactly
// zero, so the clamped tail never produces 0*inf when the derivative factor
// blows up at the support edge.
void bump_profile(int m_t, double eta, double dt, Vec& phi_win, Vec& phidot_win) {
    const int w = 2 * m_t + 1;
    phi_win = Vec::Zero(w);
    phidot_win = Vec::Zero(w);
    for (int j = 1; j < w - 1; ++j) {
        const double x = double(j - m_t) / double(m_t);
        phi_win[j] = std::exp(-eta / (1.0 - x * x));
    }
    phi_win /= phi_win.norm();
    for (int j = 1; j < w - 1; ++j) {
        const double x = double(j - m_t) / double(m_t);
        const double beta = 1.0 - x * x;
        phidot_win[j] = phi_win[j] * (-2.0 * eta * x) / (double(m_t) * dt * beta * beta);
    }
}

double grid_spacing(const Vec& grid) {
    if (grid.size() < 3) throw std::invalid_argument("test functions need at least 3 grid points");
    const double dt = grid[1] - grid[0];
    if (!(dt > 0.0)) throw std::invalid_argument("grid must be increasing");
    return dt;
}

RadiusScan scan_impl(const Vec& data_col, const Vec& grid,
                     const std::vector<int>& candidate_radii, int subsample_factor,
                     double eta) {
    const int n = int(grid.size());
    const int m_intervals = n - 1;
    const double dt = grid_spacing(grid);
    if (int(data_col.size()) != n)
        throw std::invalid_argument("min_radius_scan: data and grid sizes differ");
    if (subsample_factor < 2)
        throw std::invalid_argument("min_radius_scan: subsample factor must be at least 2");
    if (candidate_radii.size() < 4)
        throw std::invalid_argument("min_radius_scan: need at least 4 candidate radii");
    if (!data_col.allFinite())
        throw std::invalid_argument("min_radius_scan: data contains NaN");
    for (std::size_t i = 1; i < candidate_radii.size(); ++i)
        if (candidate_radii[i] <= candidate_radii[i - 1])
            throw std::invalid_argument("min_radius_scan: radii must be strictly increasing");

    const int center = m_intervals / 2;
    const double t_span = grid[m_intervals] - grid[0];
    const int mode = m_intervals / subsample_factor;

    RadiusScan scan;
    scan.candidate_radii = candidate_radii;
    scan.surrogate_errors = Vec(candidate_radii.size());

    Vec pw, dw;
    for (std::size_t i = 0; i < candidate_radii.size(); ++i) {
        const int r = candidate_radii[i];
        if (r < 1 || center - r < 0 || center + r > m_intervals)
            throw std::invalid_argument("min_radius_scan: candidate radius does not fit the grid");
        bump_profile(r, eta, dt, pw, dw);
        // DFT of the windowed data at the subsampled mode; only the window
        // contributes since the bump vanishes elsewhere.
        std::complex<double> acc(0.0, 0.0);
        const double ang = 2.0 * kPi * double(mode) / double(m_intervals);
        for (int j = -r; j <= r; ++j) {
            const int idx = center + j;
            const double y = pw[j + r] * data_col[idx];
            acc += y * std::complex<double>(std::cos(ang * idx), -std::sin(ang * idx));
        }
        const double fhat = std::abs(acc) * t_span / double(m_intervals);
        scan.surrogate_errors[i] =
            std::max(2.0 * kPi / std::sqrt(t_span) * fhat, 1e-300);
    }

    Vec lx(scan.surrogate_errors.size()), ly(scan.surrogate_errors.size());
    for (int i = 0; i < lx.size(); ++i) {
        lx[i] = std::log(double(candidate_radii[i]));
        ly[i] = std::log(scan.surrogate_errors[i]);
    }
    // A flat curve means noise dominates at every radius; take the smallest.
    const double mx = lx.mean(), my = ly.mean();
    double sxx = 0.0, sxy = 0.0;
    for (int i = 0; i < lx.size(); ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
    }
    const double overall_slope = sxx > 0.0 ? sxy / sxx : 0.0;
    scan.corner_index = overall_slope > -0.5 ? 0 : piecewise_corner(lx, ly);
    return scan;
}

int choose_k(const Vec& sigma, const SvdPolicy& policy) {
    const int total = int(sigma.size());
    if (total == 0 || !(sigma[0] > 0.0))
        throw std::runtime_error("test function stack has zero rank");
    int rank = 0;
    while (rank < total && sigma[rank] > sigma[0] * 1e-7) ++rank;
    if (policy.fixed_k > 0) return std::min(policy.fixed_k, rank);

    int k_energy = rank;
    const double target = policy.energy * sigma.head(rank).squaredNorm();
    double run = 0.0;
    for (int i = 0; i < rank; ++i) {
        run += sigma[i] * sigma[i];
        if (run >= target) {
            k_energy = i + 1;
            break;
        }
    }
    int k_corner = rank;
    if (rank >= 4) {
        Vec lx(rank), ly(rank);
        for (int i = 0; i < rank; ++i) {
            lx[i] = std::log(double(i + 1));
            ly[i] = std::log(sigma[i]);
        }
        k_corner = piecewise_corner(lx, ly) + 1;
    }
    return std::min({std::max(k_corner, k_energy), policy.rank_cap, rank});
}

// Thin orthonormal factor of a tall matrix.
Mat thin_q(const Mat& y) {
    Eigen::HouseholderQR<Mat> qr(y);
    return qr.householderQ() * Mat::Identity(y.rows(), y.cols());
}

}  // namespace

std::pair<Vec, Vec> bump_row(int center_index, int m_t, double eta, const Vec& grid) {
    const int n = int(grid.size());
    const double dt = grid_spacing(grid);
    if (eta <= 0.0) throw std::invalid_argument("bump_row: eta must be positive");
    if (m_t < 1) throw std::invalid_argument("bump_row: radius must be at least 1");
    if (center_index - m_t < 0 || center_index + m_t > n - 1)
        throw std::invalid_argument("bump_row: support does not fit inside the grid");

    Vec pw, dw;
    bump_profile(m_t, eta, dt, pw, dw);
    Vec phi = Vec::Zero(n);
    Vec phidot = Vec::Zero(n);
    phi.segment(center_index - m_t, 2 * m_t + 1) = pw;
    phidot.segment(center_index - m_t, 2 * m_t + 1) = dw;
    return {std::move(phi), std::move(phidot)};
}

RadiusScan min_radius_scan(const Vec& data_col, const Vec& grid,
                           const std::vector<int>& candidate_radii, int subsample_factor) {
    return scan_impl(data_col, grid, candidate_radii, subsample_factor, 9.0);
}

std::vector<int> default_radius_candidates(int num_points) {
    const int max_r = (num_points - 1) / 2;
    std::vector<int> out;
    double r = 2.0;
    while (true) {
        const int ri = int(std::llround(r));
        if (ri > max_r) break;
        if (out.empty() || ri > out.back()) out.push_back(ri);
        r *= std::sqrt(2.0);
    }
    if (out.size() < 4)
        throw std::invalid_argument("grid too short for a radius scan");
    return out;
}

int piecewise_corner(const Vec& x, const Vec& y) {
    const int n = int(x.size());
    if (n < 4 || int(y.size()) != n)
        throw std::invalid_argument("piecewise_corner: need at least 4 points");

    std::vector<double> sx(n + 1, 0.0), sy(n + 1, 0.0), sxx(n + 1, 0.0), sxy(n + 1, 0.0),
        syy(n + 1, 0.0);
    for (int i = 0; i < n; ++i) {
        sx[i + 1] = sx[i] + x[i];
        sy[i + 1] = sy[i] + y[i];
        sxx[i + 1] = sxx[i] + x[i] * x[i];
        sxy[i + 1] = sxy[i] + x[i] * y[i];
        syy[i + 1] = syy[i] + y[i] * y[i];
    }
    auto seg_sse = [&](int lo, int hi) {
        const double cnt = double(hi - lo + 1);
        const double vxx = sxx[hi + 1] - sxx[lo] - (sx[hi + 1] - sx[lo]) * (sx[hi + 1] - sx[lo]) / cnt;
        const double vxy = sxy[hi + 1] - sxy[lo] - (sx[hi + 1] - sx[lo]) * (sy[hi + 1] - sy[lo]) / cnt;
        const double vyy = syy[hi + 1] - syy[lo] - (sy[hi + 1] - sy[lo]) * (sy[hi + 1] - sy[lo]) / cnt;
        if (vxx <= 1e-30) return std::max(vyy, 0.0);
        return std::max(vyy - vxy * vxy / vxx, 0.0);
    };

    // The corner point belongs to both segments; each segment keeps at
    // least two points.
    int best = 1;
    double best_sse = std::numeric_limits<double>::infinity();
    for (int b = 1; b <= n - 2; ++b) {
        const double sse = seg_sse(0, b) + seg_sse(b, n - 1);
        if (sse < best_sse) {
            best_sse = sse;
            best = b;
        }
    }
    return best;
}

TestFunctionBasis build_basis(const Mat& data, const Vec& grid, double eta,
                              const std::vector<double>& radius_multipliers,
                              const SvdPolicy& policy) {
    const int n = int(grid.size());
    const double dt = grid_spacing(grid);
    if (int(data.rows()) != n)
        throw std::invalid_argument("build_basis: data and grid sizes differ");
    if (data.cols() < 1) throw std::invalid_argument("build_basis: data has no columns");
    if (!data.allFinite()) throw std::invalid_argument("build_basis: data contains NaN");
    if (eta <= 0.0) throw std::invalid_argument("build_basis: eta must be positive");
    if (radius_multipliers.empty())
        throw std::invalid_argument("build_basis: no radius multipliers");
    if (policy.rank_cap < 1) throw std::invalid_argument("build_basis: rank cap must be positive");

    // Pool the per-dimension minimum radii by taking the largest.
    const std::vector<int> candidates = default_radius_candidates(n);
    int min_rad = 0;
    for (int d = 0; d < data.cols(); ++d) {
        const RadiusScan scan = scan_impl(data.col(d), grid, candidates, 2, eta);
        min_rad = std::max(min_rad, scan.candidate_radii[scan.corner_index]);
    }

    std::vector<int> radii;
    for (double mult : radius_multipliers) {
        const int r = int(std::llround(mult * double(min_rad)));
        if (r >= 1 && 2 * r + 1 <= n) radii.push_back(r);
    }
    std::sort(radii.begin(), radii.end());
    radii.erase(std::unique(radii.begin(), radii.end()), radii.end());
    if (radii.empty())
        throw std::invalid_argument("build_basis: no radius fits inside the grid");

    // Stack every admissible translate of every radius. dt is folded in so
    // rows represent trapezoid-rule integrals; it cancels in the reduction
    // but keeps the raw stack at the integral's scale.
    int k_full = 0;
    for (int r : radii) k_full += n - 2 * r;
    std::vector<Eigen::Triplet<double>> trip_phi, trip_dot;
    trip_phi.reserve(std::size_t(k_full) * 16);
    trip_dot.reserve(std::size_t(k_full) * 16);
    {
        int row = 0;
        Vec pw, dw;
        for (int r : radii) {
            bump_profile(r, eta, dt, pw, dw);
            for (int c = r; c <= n - 1 - r; ++c, ++row) {
                for (int j = 1 - r; j <= r - 1; ++j) {
                    trip_phi.emplace_back(row, c + j, pw[j + r] * dt);
                    trip_dot.emplace_back(row, c + j, dw[j + r] * dt);
                }
            }
        }
    }
    SpMat a(k_full, n), adot(k_full, n);
    a.setFromTriplets(trip_phi.begin(), trip_phi.end());
    adot.setFromTriplets(trip_dot.begin(), trip_dot.end());

    TestFunctionBasis basis;
    basis.eta = eta;
    basis.min_radius = min_rad;
    basis.radii_used = radii;

    Mat v_k, w_k;
    Vec sigma;
    int kk = 0;
    if (n <= 1200) {
        // Small grids: exact eigendecomposition of the Gram matrix. The
        // right singular vectors come out orthonormal to machine precision.
        const Mat g = Mat(SpMat(a.transpose() * a));
        Eigen::SelfAdjointEigenSolver<Mat> es(g);
        if (es.info() != Eigen::Success)
            throw std::runtime_error("build_basis: eigendecomposition failed");
        sigma = Vec(n);
        for (int i = 0; i < n; ++i)
            sigma[i] = std::sqrt(std::max(es.eigenvalues()[n - 1 - i], 0.0));
        kk = choose_k(sigma, policy);
        v_k = Mat(n, kk);
        for (int i = 0; i < kk; ++i) v_k.col(i) = es.eigenvectors().col(n - 1 - i);
        w_k = a * v_k;
        for (int i = 0; i < kk; ++i) w_k.col(i) /= sigma[i];
    } else {
        // Large grids: seeded randomized range finder on the row space.
        // The seed is a fixed constant so rebuilding the same stack gives
        // bit-identical results regardless of caller or thread.
        const int want = (policy.fixed_k > 0 ? policy.fixed_k : policy.rank_cap) + 20;
        const int ell = std::min({want, n, k_full});
        std::mt19937_64 rng(0x7e57ba5e5eedULL);
        std::normal_distribution<double> gauss(0.0, 1.0);
        Mat omega(k_full, ell);
        for (int j = 0; j < ell; ++j)
            for (int i = 0; i < k_full; ++i) omega(i, j) = gauss(rng);
        Mat y = a.transpose() * omega;
        for (int it = 0; it < 2; ++it) {
            y = thin_q(y);
            y = a.transpose() * (a * y);
        }
        const Mat q = thin_q(y);
        const Mat b = a * q;
        Eigen::BDCSVD<Mat> svd(b, Eigen::ComputeThinU | Eigen::ComputeThinV);
        sigma = svd.singularValues();
        kk = choose_k(sigma, policy);
        v_k = q * svd.matrixV().leftCols(kk);
        w_k = svd.matrixU().leftCols(kk);
    }

    basis.singular_values = sigma;
    basis.k = kk;
    basis.phi = v_k.transpose();
    const Mat dot_proj = adot.transpose() * w_k;
    basis.phi_dot = sigma.head(kk).cwiseInverse().asDiagonal() * Mat(dot_proj.transpose());
    return basis;
}

}  // namespace wendy
