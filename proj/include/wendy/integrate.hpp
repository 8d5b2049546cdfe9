#pragma once

#include "wendy/model.hpp"
#include "wendy/types.hpp"

namespace wendy {

enum class SimStatus { ok, blew_up, nan };

const char* to_string(SimStatus s);

struct Trajectory {
    Vec times;    // copy of the requested grid
    Mat states;   // (#times) x D, row m = u(t_m); NaN rows after a failure
    SimStatus status = SimStatus::ok;
};

struct IntegrateOptions {
    double rel_tol = 1e-8;
    double abs_tol = 1e-8;
    double blowup_norm = 1e8;  // max-norm guard, exceeding it aborts with blew_up
};

// Integrates u' = f(p, u, t) and samples the solution exactly at `times`
// (strictly increasing, >= 2 entries) via the stepper's dense output.
// Adaptive explicit 5(4) pair for non-stiff models, L-stable order-4
// Rosenbrock when model.stiff is set. Never throws on divergence; the
// status field reports blow-ups and NaN escapes instead.
Trajectory simulate(const OdeModel& model, const Vec& p, const Vec& u0, const Vec& times,
                    const IntegrateOptions& opts = {});

struct SensitivityTrajectory {
    Trajectory traj;
    std::vector<Mat> dstate_dp;   // per time point, D x J
    std::vector<Mat> dstate_du0;  // per time point, D x D
};

// Forward sensitivity analysis: integrates the augmented system
//   u'  = f,  (dU/dp)' = (df/du)(dU/dp) + df/dp,  (dU/du0)' = (df/du)(dU/du0)
// with the explicit adaptive stepper. Used by the output-error solver.
SensitivityTrajectory simulate_with_sensitivities(const OdeModel& model, const Vec& p,
                                                  const Vec& u0, const Vec& times,
                                                  const IntegrateOptions& opts = {});

}  // namespace wendy
