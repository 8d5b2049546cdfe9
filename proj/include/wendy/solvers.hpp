#pragma once

#include "wendy/integrate.hpp"
#include "wendy/optimize.hpp"
#include "wendy/weakform.hpp"

#include <optional>
#include <string>

namespace wendy {

struct EstimationOptions {
    OptimizeOptions optimize;
    int irls_max_rounds = 1000;
    double irls_tol = 1e-8;
    double hybrid_margin = 0.05;   // fractional likelihood slack before hybrid keeps the MLE answer
    bool attach_uncertainty = true;
    IntegrateOptions integrate;    // forward simulations in the output-error path
};

struct EstimationResult {
    std::string method;
    Vec p;
    Vec u0;                        // output-error methods: fitted initial state
    double objective = 0.0;        // method-specific final objective
    Termination termination = Termination::numerical_failure;
    bool converged = false;
    int iterations = 0;
    bool fallback_used = false;    // degraded path taken (see each solver)
    std::optional<EstimatorUncertainty> uncertainty;
    std::string message;
};

// Maximum-likelihood fit: trust-region Newton on the weak negative
// log-likelihood under the model's parameter box. When the estimated noise is
// indistinguishable from zero the likelihood is degenerate, so the solver
// falls back to wls() and flags fallback_used. Converged fits carry the
// parameter covariance.
EstimationResult wendy_mle(WeakFormProblem& problem, const Vec& p0,
                           const EstimationOptions& opts = {});

// Unweighted least squares on the weak residual. Linear-in-parameter models
// are solved in closed form; otherwise Levenberg-Marquardt from p0.
EstimationResult wls(WeakFormProblem& problem, const Vec& p0,
                     const EstimationOptions& opts = {});

// Iteratively reweighted least squares: freeze S at the current iterate,
// minimize the whitened residual, repeat until the outer step stalls.
EstimationResult wendy_irls(WeakFormProblem& problem, const Vec& p0,
                            const EstimationOptions& opts = {});

// Output-error least squares over (p, u0): repeated forward simulation
// against the raw data, initial state seeded from the first data row.
EstimationResult oe_ls(const OdeModel& model, const Mat& data, const Vec& grid,
                       const Vec& p0, const EstimationOptions& opts = {});

// wendy_mle warm-starting oe_ls. Keeps the output-error answer unless it is
// unusable (failed run, bound violation) or its weak likelihood is worse than
// the MLE answer by more than hybrid_margin relative to the likelihood scale
// |l| + 1; fallback_used marks the kept-MLE case.
EstimationResult hybrid(WeakFormProblem& problem, const Mat& raw_data, const Vec& p0,
                        const EstimationOptions& opts = {});

}  // namespace wendy
