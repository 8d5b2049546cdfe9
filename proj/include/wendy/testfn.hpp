#pragma once

#include <utility>
#include <vector>

#include "wendy/types.hpp"

namespace wendy {

// Orthonormalized test-function matrices built from compactly supported
// bumps on a uniform time grid. phi has orthonormal rows; phi_dot is the
// image of the same reduction applied to the analytic derivative rows, so
// it carries the 1/dt scale of a time derivative.
struct TestFunctionBasis {
    Mat phi;       // K x (M+1)
    Mat phi_dot;   // K x (M+1)
    int k = 0;
    std::vector<int> radii_used;
    int min_radius = 0;
    Vec singular_values;  // computed spectrum of the stacked bump matrix, descending
    double eta = 9.0;
};

// Result of the integration-error scan over candidate support radii.
struct RadiusScan {
    std::vector<int> candidate_radii;
    Vec surrogate_errors;
    int corner_index = 0;
};

// Controls how many rows survive the SVD reduction. With fixed_k > 0 the
// corner/energy selection is bypassed and exactly min(fixed_k, rank) rows
// are kept, which is what the complexity sweeps use.
struct SvdPolicy {
    int rank_cap = 500;
    double energy = 0.9999;
    int fixed_k = 0;
};

// One bump C*exp(-eta/(1 - x^2)) with x = (t - t_c)/(m_t*dt), clamped to
// zero outside |x| < 1 and normalized to unit 2-norm on the grid, together
// with its analytic time derivative. Throws std::invalid_argument when the
// support does not fit inside the grid.
std::pair<Vec, Vec> bump_row(int center_index, int m_t, double eta, const Vec& grid);

// Surrogate integration error for each candidate radius: the magnitude of
// the DFT of the windowed data at mode floor(M/s), scaled by 2*pi/sqrt(T).
// corner_index marks the knee of the log-log curve; a flat curve (overall
// slope > -0.5, as happens for pure noise) yields corner_index 0.
RadiusScan min_radius_scan(const Vec& data_col, const Vec& grid,
                           const std::vector<int>& candidate_radii,
                           int subsample_factor = 2);

// Geometric ladder of scan radii, half-octave spacing, from 2 to M/2.
std::vector<int> default_radius_candidates(int num_points);

// Breakpoint of a two-segment least-squares fit to (x, y), returned as the
// index of the point shared by both segments. Needs at least 4 points.
int piecewise_corner(const Vec& x, const Vec& y);

// Full pipeline: per-column radius scans pooled by max, bumps at
// min_radius times each multiplier centered at every admissible grid
// point, then SVD reduction to orthonormal rows.
TestFunctionBasis build_basis(const Mat& data, const Vec& grid, double eta = 9.0,
                              const std::vector<double>& radius_multipliers = {1.0, 2.0, 4.0, 8.0},
                              const SvdPolicy& policy = SvdPolicy{});

}  // namespace wendy
