#include "wendy/solvers.hpp"

#include "wendy/integrate.hpp"
#include "wendy/likelihood.hpp"

#include <Eigen/QR>

#include <cmath>
#include <exception>
#include <stdexcept>

namespace wendy {

namespace {

// Mean squared second difference of one column at the given stride,
// normalized by the filter energy 6 so white noise of variance v gives v.
double second_difference_energy(const Vec& w, int stride) {
    const int n = static_cast<int>(w.size());
    double acc = 0.0;
    for (int m = stride; m + stride < n; ++m) {
        const double d2 = w[m - stride] - 2.0 * w[m] + w[m + stride];
        acc += d2 * d2;
    }
    return acc / (6.0 * static_cast<double>(n - 2 * stride));
}

// Decide whether the estimated noise level is a signal-curvature artifact
// rather than real measurement noise. White noise keeps the same second
// difference energy at any stride, while smooth-signal curvature grows as
// stride^4 (a factor 16 from stride 1 to 2). A stride ratio near the top of
// that range means the estimate is dominated by curvature and the data is
// effectively clean; the cut at 8 asks for clear dominance.
bool noise_is_negligible(const WeakFormProblem& problem) {
    const Mat& w = problem.working_data();
    const int n = static_cast<int>(w.rows());
    for (int d = 0; d < problem.dim_state(); ++d) {
        const double mean = w.col(d).mean();
        const double var = (w.col(d).array() - mean).square().mean();
        const double e1 = second_difference_energy(w.col(d), 1);
        if (e1 <= 1e-9 * std::max(var, 1e-300)) continue;
        if (n < 8) return false;
        const double e2 = second_difference_energy(w.col(d), 2);
        if (e2 <= 8.0 * e1) return false;
    }
    return true;
}

void copy_optimize_fields(const OptimizeResult& r, EstimationResult& out) {
    out.p = r.x;
    out.objective = r.value;
    out.termination = r.termination;
    out.converged = r.converged();
    out.iterations = r.iterations;
    if (!r.message.empty()) out.message = r.message;
}

void attach_uncertainty(WeakFormProblem& problem, EstimationResult& out) {
    try {
        out.uncertainty = estimator_covariance(problem, out.p);
    } catch (const std::exception& e) {
        if (!out.message.empty()) out.message += "; ";
        out.message += std::string("no covariance: ") + e.what();
    }
}

bool violates_box(const Vec& p, const Vec& lo, const Vec& hi) {
    if (lo.size() == p.size() && (p.array() < lo.array()).any()) return true;
    if (hi.size() == p.size() && (p.array() > hi.array()).any()) return true;
    return false;
}

Vec flatten_difference(const Mat& sim, const Mat& data) {
    const int n = static_cast<int>(data.rows());
    const int D = static_cast<int>(data.cols());
    Vec r(n * D);
    for (int d = 0; d < D; ++d) r.segment(d * n, n) = sim.col(d) - data.col(d);
    return r;
}

}  // namespace

EstimationResult wls(WeakFormProblem& problem, const Vec& p0, const EstimationOptions& opts) {
    EstimationResult out;
    out.method = "wls";
    try {
        if (problem.model().linear_in_params) {
            const Mat gjac = problem.residual_jacobian_p(p0);
            const Vec offset = problem.g(p0) - gjac * p0;
            const Vec rhs = problem.b() - offset;
            out.p = gjac.colPivHouseholderQr().solve(rhs);
            out.objective = (gjac * out.p - rhs).squaredNorm();
            out.termination = Termination::converged_gradient;
            out.converged = true;
            out.iterations = 1;
            return out;
        }
        ResidualModel rm;
        rm.residual = [&](const Vec& x, Vec& r) {
            try {
                r = problem.residual(x);
                return true;
            } catch (const std::exception&) {
                return false;
            }
        };
        rm.residual_jacobian = [&](const Vec& x, Vec& r, Mat& jac) {
            try {
                r = problem.residual(x);
                jac = problem.residual_jacobian_p(x);
                return true;
            } catch (const std::exception&) {
                return false;
            }
        };
        copy_optimize_fields(levenberg_marquardt(rm, p0, opts.optimize), out);
    } catch (const std::exception& e) {
        out.termination = Termination::numerical_failure;
        out.converged = false;
        out.message = e.what();
        if (out.p.size() == 0) out.p = p0;
    }
    return out;
}

EstimationResult wendy_mle(WeakFormProblem& problem, const Vec& p0,
                           const EstimationOptions& opts) {
    EstimationResult out;
    out.method = "wendy_mle";

    if (noise_is_negligible(problem)) {
        out = wls(problem, p0, opts);
        out.method = "wendy_mle";
        out.fallback_used = true;
        if (!out.message.empty()) out.message += "; ";
        out.message += "noise at the measurement floor; solved as least squares";
        return out;
    }

    NewtonObjective obj;
    obj.value = [&](const Vec& x, double& v) {
        try {
            v = nll(problem, x).value;
            return true;
        } catch (const std::exception&) {
            return false;
        }
    };
    obj.value_grad_hess = [&](const Vec& x, double& v, Vec& g, Mat& h) {
        try {
            LikelihoodEvaluation e = nll_with_derivatives(problem, x, true);
            v = e.value;
            g = std::move(e.gradient);
            h = std::move(e.hessian);
            return true;
        } catch (const std::exception&) {
            return false;
        }
    };

    const OdeModel& m = problem.model();
    copy_optimize_fields(
        trust_region_newton(obj, p0, m.param_lower, m.param_upper, opts.optimize), out);

    if (out.converged && opts.attach_uncertainty) attach_uncertainty(problem, out);
    return out;
}

EstimationResult wendy_irls(WeakFormProblem& problem, const Vec& p0,
                            const EstimationOptions& opts) {
    EstimationResult out;
    out.method = "wendy_irls";
    Vec p = p0;
    try {
        for (int round = 1; round <= opts.irls_max_rounds; ++round) {
            out.iterations = round;
            const CovarianceFactor cf = problem.covariance(p);
            const auto lfac = cf.llt.matrixL();

            Vec pnext;
            if (problem.model().linear_in_params) {
                const Mat gjac = problem.residual_jacobian_p(p);
                const Vec offset = problem.g(p) - gjac * p;
                const Mat jw = lfac.solve(gjac);
                const Vec rhsw = lfac.solve((problem.b() - offset).eval());
                pnext = jw.colPivHouseholderQr().solve(rhsw);
                out.objective = (jw * pnext - rhsw).squaredNorm();
            } else {
                ResidualModel rm;
                rm.residual = [&](const Vec& x, Vec& r) {
                    try {
                        r = lfac.solve(problem.residual(x));
                        return true;
                    } catch (const std::exception&) {
                        return false;
                    }
                };
                rm.residual_jacobian = [&](const Vec& x, Vec& r, Mat& jac) {
                    try {
                        r = lfac.solve(problem.residual(x));
                        jac = lfac.solve(problem.residual_jacobian_p(x));
                        return true;
                    } catch (const std::exception&) {
                        return false;
                    }
                };
                const OptimizeResult inner = levenberg_marquardt(rm, p, opts.optimize);
                if (inner.termination == Termination::numerical_failure) {
                    out.p = p;
                    out.termination = Termination::numerical_failure;
                    out.converged = false;
                    out.message = "inner weighted solve failed: " + inner.message;
                    return out;
                }
                pnext = inner.x;
                out.objective = inner.value;
            }

            const double step = (pnext - p).norm();
            p = pnext;
            if (step <= opts.irls_tol * (1.0 + p.norm())) {
                out.p = p;
                out.termination = Termination::converged_step;
                out.converged = true;
                return out;
            }
        }
        out.p = p;
        out.termination = Termination::max_iterations;
        out.converged = false;
    } catch (const std::exception& e) {
        out.p = p;
        out.termination = Termination::numerical_failure;
        out.converged = false;
        out.message = e.what();
    }
    return out;
}

EstimationResult oe_ls(const OdeModel& model, const Mat& data, const Vec& grid,
                       const Vec& p0, const EstimationOptions& opts) {
    EstimationResult out;
    out.method = "oe_ls";
    const int D = model.dim_state;
    const int J = model.dim_params;
    if (data.rows() != grid.size() || data.cols() != D) {
        out.termination = Termination::numerical_failure;
        out.message = "data shape does not match the grid and model";
        out.p = p0;
        return out;
    }

    Vec x0(J + D);
    x0.head(J) = p0;
    x0.tail(D) = data.row(0).transpose();

    ResidualModel rm;
    rm.residual = [&](const Vec& x, Vec& r) {
        const Trajectory t = simulate(model, x.head(J), x.tail(D), grid, opts.integrate);
        if (t.status != SimStatus::ok) return false;
        r = flatten_difference(t.states, data);
        return r.allFinite();
    };
    rm.residual_jacobian = [&](const Vec& x, Vec& r, Mat& jac) {
        const SensitivityTrajectory s =
            simulate_with_sensitivities(model, x.head(J), x.tail(D), grid, opts.integrate);
        if (s.traj.status != SimStatus::ok) return false;
        r = flatten_difference(s.traj.states, data);
        const int n = static_cast<int>(data.rows());
        jac.resize(n * D, J + D);
        for (int m = 0; m < n; ++m)
            for (int d = 0; d < D; ++d) {
                for (int j = 0; j < J; ++j) jac(d * n + m, j) = s.dstate_dp[m](d, j);
                for (int e = 0; e < D; ++e) jac(d * n + m, J + e) = s.dstate_du0[m](d, e);
            }
        return r.allFinite() && jac.allFinite();
    };

    const OptimizeResult r = levenberg_marquardt(rm, x0, opts.optimize);
    out.p = r.x.head(J);
    out.u0 = r.x.tail(D);
    out.objective = r.value;
    out.termination = r.termination;
    out.converged = r.converged();
    out.iterations = r.iterations;
    out.message = r.message;
    return out;
}

EstimationResult hybrid(WeakFormProblem& problem, const Mat& raw_data, const Vec& p0,
                        const EstimationOptions& opts) {
    EstimationResult mle = wendy_mle(problem, p0, opts);
    const Vec seed = mle.converged ? mle.p : p0;
    EstimationResult oe =
        oe_ls(problem.original_model(), raw_data, problem.grid(), seed, opts);

    auto keep_mle = [&](const std::string& why) {
        EstimationResult out = mle;
        out.method = "hybrid";
        out.fallback_used = true;
        if (!out.message.empty()) out.message += "; ";
        out.message += why;
        return out;
    };

    if (!oe.converged)
        return keep_mle(oe.message.empty() ? "output-error stage did not converge"
                                           : "output-error stage unusable: " + oe.message);

    const OdeModel& m = problem.model();
    if (violates_box(oe.p, m.param_lower, m.param_upper))
        return keep_mle("output-error estimate violates the parameter box");

    // After a least-squares fallback there is no trustworthy noise model, so
    // the likelihood comparison has no basis and the refit stands on its own.
    if (mle.converged && !mle.fallback_used) {
        double l_mle = 0.0, l_oe = 0.0;
        try {
            l_mle = nll(problem, mle.p).value;
            l_oe = nll(problem, oe.p).value;
        } catch (const std::exception& e) {
            return keep_mle(std::string("likelihood comparison failed: ") + e.what());
        }
        // Relative margin on a shifted scale so the rule stays meaningful
        // when the likelihood is negative or tiny.
        if (l_oe > l_mle + opts.hybrid_margin * (std::abs(l_mle) + 1.0))
            return keep_mle("kept the likelihood estimate (worse refit likelihood)");
    }

    EstimationResult out = oe;
    out.method = "hybrid";
    out.fallback_used = false;
    if (opts.attach_uncertainty) attach_uncertainty(problem, out);
    return out;
}

}  // namespace wendy
