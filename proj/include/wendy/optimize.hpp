#pragma once

#include "wendy/types.hpp"

#include <functional>
#include <string>

namespace wendy {

enum class Termination {
    converged_gradient,
    converged_step,
    converged_objective,
    max_iterations,
    time_limit,
    numerical_failure,
};

std::string to_string(Termination t);
bool is_converged(Termination t);

struct OptimizeOptions {
    int max_iterations = 200;
    double time_limit_seconds = 200.0;
    double grad_tol = 1e-8;
    double step_tol = 1e-8;
    double obj_tol = 1e-8;
    double trust_radius_init = 1.0;
    double trust_radius_max = 1e8;
    double lm_lambda_init = 1e-3;  // scaled by max diag of J^T J
};

struct OptimizeResult {
    Vec x;
    double value = 0.0;
    Termination termination = Termination::numerical_failure;
    int iterations = 0;
    int objective_evaluations = 0;
    std::string message;

    bool converged() const { return is_converged(termination); }
};

// Smooth objective with analytic derivatives. Callbacks return false to mark
// the point unevaluable (trial steps there are rejected; failure at an
// accepted point aborts the run).
struct NewtonObjective {
    std::function<bool(const Vec& x, double& value)> value;
    std::function<bool(const Vec& x, double& value, Vec& grad, Mat& hess)> value_grad_hess;
};

// Box-constrained trust-region Newton iteration. The quadratic subproblem is
// solved by projected Steihaug conjugate gradients on the inactive variables;
// steps are clamped back into the box. Empty bound vectors mean unconstrained.
// Step- and objective-based stops additionally require a small projected
// gradient, so a converged result always has
// ||P(x - grad) - x|| <= 1e-6 * (1 + |value|).
OptimizeResult trust_region_newton(const NewtonObjective& objective, const Vec& x0,
                                   const Vec& lower, const Vec& upper,
                                   const OptimizeOptions& opts = {});

// Residual model for nonlinear least squares on 0.5*||r(x)||^2. Callbacks
// return false when the residual cannot be evaluated (for example a diverging
// forward simulation); such trial steps are rejected and the damping grows
// until progress resumes or the run is declared failed.
struct ResidualModel {
    std::function<bool(const Vec& x, Vec& r)> residual;
    std::function<bool(const Vec& x, Vec& r, Mat& jac)> residual_jacobian;
};

// Levenberg-Marquardt with Nielsen damping updates. Reported value is the
// final ||r||^2.
OptimizeResult levenberg_marquardt(const ResidualModel& model, const Vec& x0,
                                   const OptimizeOptions& opts = {});

}  // namespace wendy
