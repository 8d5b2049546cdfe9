#pragma once

#include "wendy/weakform.hpp"

#include <memory>

namespace wendy {

// Negative log-likelihood of the whitened weak residual:
//   l(p) = logdet S(p) + r(p)^T S(p)^{-1} r(p)
// All evaluation modes share a single Cholesky factorization of S per point.
struct LikelihoodEvaluation {
    double value = 0.0;
    double logdet = 0.0;
    double mahalanobis = 0.0;
    Vec gradient;  // sized J when derivatives were requested
    Mat hessian;   // J x J when the Hessian was requested
    std::shared_ptr<const CovarianceFactor> factor;
};

// Value only. Uses triangular solves against the Cholesky factor; S^{-1} is
// never formed.
LikelihoodEvaluation nll(WeakFormProblem& problem, const Vec& p);

// Value, gradient, and optionally the exact Hessian.
LikelihoodEvaluation nll_with_derivatives(WeakFormProblem& problem, const Vec& p,
                                          bool want_hessian);

}  // namespace wendy
