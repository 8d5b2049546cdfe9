#pragma once

#include "wendy/types.hpp"

#include <functional>
#include <string>
#include <vector>

namespace wendy {

// Right-hand side u' = f(p, u, t) together with the analytic derivatives the
// weak-form estimators consume. All callbacks write into preallocated
// outputs sized by the caller:
//   rhs      -> f            (D)
//   jac_u    -> df/du        (D x D), (d, d') = df_d/du_d'
//   jac_p    -> df/dp        (D x J)
//   jac_up   -> d2f/du dp    (D x D x J)
//   hess_pp  -> d2f/dp dp    (D x J x J), symmetric in the last two indices
//   hess_upp -> d3f/du dp dp (D x D x J x J), symmetric in the last two
struct OdeModel {
    int dim_state = 0;   // D
    int dim_params = 0;  // J
    std::string name;

    bool linear_in_params = false;  // enables the affine-in-p fast paths
    bool stiff = false;             // selects the implicit integrator

    std::function<void(const Vec&, const Vec&, double, Vec&)> rhs;
    std::function<void(const Vec&, const Vec&, double, Mat&)> jac_u;
    std::function<void(const Vec&, const Vec&, double, Mat&)> jac_p;
    std::function<void(const Vec&, const Vec&, double, Tensor3&)> jac_up;
    std::function<void(const Vec&, const Vec&, double, Tensor3&)> hess_pp;
    std::function<void(const Vec&, const Vec&, double, Tensor4&)> hess_upp;

    // Optimization box; +-inf entries mean unconstrained.
    Vec param_lower, param_upper;

    // Sampling boxes for derivative verification probes.
    Vec probe_param_lower, probe_param_upper;
    Vec probe_state_lower, probe_state_upper;
    double probe_time_lower = 0.0;
    double probe_time_upper = 1.0;

    bool has_bounds() const;
};

// A named estimation target: model plus the ground truth and experiment
// protocol used by the benchmark harness.
struct BenchmarkSystem {
    OdeModel model;
    Vec p_star;
    Vec u0;
    double t0 = 0.0;
    double t_end = 0.0;
    Mat init_range;  // J x 2, columns are (low, high) for initial guesses
    NoiseKind noise_kind = NoiseKind::gaussian;
};

// Built-in systems: "lorenz", "hindmarsh_rose", "goodwin", "sir_tdi".
// Throws std::invalid_argument for unknown names.
BenchmarkSystem builtin_system(const std::string& name);
std::vector<std::string> builtin_system_names();

// Change of variables x = log(u). The returned model evaluates
// x' = f(p, exp(x), t) / exp(x) elementwise, with all derivative callbacks
// rewritten for the x coordinates. Multiplicative noise on u becomes
// additive noise on x, so the Gaussian pipeline applies unchanged.
OdeModel log_transformed(const OdeModel& base);

struct DerivativeCheckReport {
    bool ok = false;
    double max_rel_error = 0.0;
    std::string worst_entry;  // callback name and index of the worst mismatch
};

// Central finite-difference cross-check of every analytic callback against
// rhs at random (p, u, t) probes drawn from the model's probe boxes.
// Steps are h = 1e-6 * (1 + |x|); the check passes at relative tolerance
// 1e-5 (scaled by the local derivative magnitude).
DerivativeCheckReport verify_derivatives(const OdeModel& model, int probes, unsigned seed);

}  // namespace wendy
