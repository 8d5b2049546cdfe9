#include "wendy/optimize.hpp"

#include <Eigen/Cholesky>

#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace wendy {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

Vec clamp_to_box(const Vec& x, const Vec& lo, const Vec& hi) {
    return x.cwiseMax(lo).cwiseMin(hi);
}

// Positive root of ||s + tau*d|| = radius.
double boundary_step(const Vec& s, const Vec& d, double radius) {
    const double dd = d.squaredNorm();
    if (dd <= 0.0) return 0.0;
    const double sd = s.dot(d);
    const double ss = s.squaredNorm();
    const double disc = std::max(0.0, sd * sd + dd * (radius * radius - ss));
    return (-sd + std::sqrt(disc)) / dd;
}

// Steihaug-Toint truncated CG for min g^T s + 0.5 s^T H s, ||s|| <= radius.
Vec steihaug_cg(const Mat& h, const Vec& g, double radius) {
    const int n = static_cast<int>(g.size());
    Vec s = Vec::Zero(n);
    Vec r = -g;
    Vec d = r;
    double rr = r.squaredNorm();
    const double gnorm = std::sqrt(rr);
    if (gnorm == 0.0) return s;
    const double stop = std::min(0.5, std::sqrt(gnorm)) * gnorm;

    const int max_cg = std::max(10, 2 * n);
    for (int it = 0; it < max_cg; ++it) {
        const Vec hd = h * d;
        const double dhd = d.dot(hd);
        if (dhd <= 1e-14 * d.squaredNorm()) {
            s += boundary_step(s, d, radius) * d;
            return s;
        }
        const double alpha = rr / dhd;
        if ((s + alpha * d).norm() >= radius) {
            s += boundary_step(s, d, radius) * d;
            return s;
        }
        s += alpha * d;
        r -= alpha * hd;
        const double rr_new = r.squaredNorm();
        if (std::sqrt(rr_new) <= stop) return s;
        d = r + (rr_new / rr) * d;
        rr = rr_new;
    }
    return s;
}

}  // namespace

std::string to_string(Termination t) {
    switch (t) {
        case Termination::converged_gradient: return "converged_gradient";
        case Termination::converged_step: return "converged_step";
        case Termination::converged_objective: return "converged_objective";
        case Termination::max_iterations: return "max_iterations";
        case Termination::time_limit: return "time_limit";
        case Termination::numerical_failure: return "numerical_failure";
    }
    return "unknown";
}

bool is_converged(Termination t) {
    return t == Termination::converged_gradient || t == Termination::converged_step ||
           t == Termination::converged_objective;
}

OptimizeResult trust_region_newton(const NewtonObjective& objective, const Vec& x0,
                                   const Vec& lower, const Vec& upper,
                                   const OptimizeOptions& opts) {
    const int n = static_cast<int>(x0.size());
    if (!objective.value || !objective.value_grad_hess)
        throw std::invalid_argument("trust_region_newton: objective callbacks are required");

    Vec lo = lower.size() ? lower : Vec::Constant(n, -kInf);
    Vec hi = upper.size() ? upper : Vec::Constant(n, kInf);
    if (lo.size() != n || hi.size() != n)
        throw std::invalid_argument("trust_region_newton: bound sizes do not match x0");
    if ((lo.array() > hi.array()).any())
        throw std::invalid_argument("trust_region_newton: lower bound exceeds upper bound");

    OptimizeResult res;
    res.x = clamp_to_box(x0, lo, hi);

    const auto t_start = Clock::now();
    double f = 0.0;
    Vec g(n);
    Mat h(n, n);
    ++res.objective_evaluations;
    if (!objective.value_grad_hess(res.x, f, g, h) || !std::isfinite(f) || !g.allFinite() ||
        !h.allFinite()) {
        res.termination = Termination::numerical_failure;
        res.message = "objective not evaluable at the initial point";
        return res;
    }
    res.value = f;

    double radius = opts.trust_radius_init;
    int consecutive_rejects = 0;
    const double guard_tol = 1e-6;  // projected-gradient guard for step/objective stops

    for (int iter = 1; iter <= opts.max_iterations; ++iter) {
        res.iterations = iter;

        const double pg_norm = (res.x - clamp_to_box(res.x - g, lo, hi)).norm();
        if (pg_norm <= opts.grad_tol * (1.0 + std::abs(f))) {
            res.termination = Termination::converged_gradient;
            res.value = f;
            return res;
        }
        if (seconds_since(t_start) > opts.time_limit_seconds) {
            res.termination = Termination::time_limit;
            res.value = f;
            return res;
        }

        // Freeze variables pressed against their bound with an inward-blocking
        // gradient, then solve the subproblem on the remainder.
        std::vector<int> free;
        free.reserve(n);
        for (int i = 0; i < n; ++i) {
            const double eps_a = 1e-10 * (1.0 + std::abs(res.x[i]));
            const bool at_lo = res.x[i] <= lo[i] + eps_a && g[i] > 0.0;
            const bool at_hi = res.x[i] >= hi[i] - eps_a && g[i] < 0.0;
            if (!at_lo && !at_hi) free.push_back(i);
        }
        if (free.empty()) {
            res.termination = Termination::converged_gradient;
            res.value = f;
            return res;
        }

        const int nf = static_cast<int>(free.size());
        Vec gf(nf);
        Mat hf(nf, nf);
        for (int a = 0; a < nf; ++a) {
            gf[a] = g[free[a]];
            for (int b = 0; b < nf; ++b) hf(a, b) = h(free[a], free[b]);
        }

        const Vec sf = steihaug_cg(hf, gf, radius);
        Vec s = Vec::Zero(n);
        for (int a = 0; a < nf; ++a) s[free[a]] = sf[a];

        const Vec trial = clamp_to_box(res.x + s, lo, hi);
        const Vec step = trial - res.x;
        const double pred = -(g.dot(step) + 0.5 * step.dot(h * step));

        double f_trial = 0.0;
        ++res.objective_evaluations;
        const bool eval_ok = step.norm() > 0.0 && pred > 0.0 &&
                             objective.value(trial, f_trial) && std::isfinite(f_trial);
        const double rho = eval_ok ? (f - f_trial) / pred : -kInf;

        if (eval_ok && rho >= 1e-4) {
            const double step_norm = step.norm();
            const double df = f - f_trial;
            res.x = trial;

            ++res.objective_evaluations;
            if (!objective.value_grad_hess(res.x, f, g, h) || !std::isfinite(f) ||
                !g.allFinite() || !h.allFinite()) {
                res.termination = Termination::numerical_failure;
                res.message = "derivatives not evaluable at an accepted point";
                return res;
            }
            res.value = f;
            consecutive_rejects = 0;

            if (rho > 0.75 && step_norm >= 0.8 * radius)
                radius = std::min(2.0 * radius, opts.trust_radius_max);
            else if (rho < 0.25)
                radius *= 0.25;

            const double pg_new = (res.x - clamp_to_box(res.x - g, lo, hi)).norm();
            const double guard = guard_tol * (1.0 + std::abs(f));
            if (step_norm <= opts.step_tol * (1.0 + res.x.norm()) && pg_new <= guard) {
                res.termination = Termination::converged_step;
                return res;
            }
            if (std::abs(df) <= opts.obj_tol * (1.0 + std::abs(f)) && pg_new <= guard) {
                res.termination = Termination::converged_objective;
                return res;
            }
        } else {
            radius *= 0.25;
            ++consecutive_rejects;
            if (consecutive_rejects >= 5 && radius < 1e-14) {
                res.termination = Termination::numerical_failure;
                res.message = "trust region collapsed without progress";
                res.value = f;
                return res;
            }
        }
    }

    res.termination = Termination::max_iterations;
    res.value = f;
    return res;
}

OptimizeResult levenberg_marquardt(const ResidualModel& model, const Vec& x0,
                                   const OptimizeOptions& opts) {
    if (!model.residual || !model.residual_jacobian)
        throw std::invalid_argument("levenberg_marquardt: residual callbacks are required");

    OptimizeResult res;
    res.x = x0;
    const auto t_start = Clock::now();

    Vec r;
    Mat jac;
    ++res.objective_evaluations;
    if (!model.residual_jacobian(res.x, r, jac) || !r.allFinite() || !jac.allFinite()) {
        res.termination = Termination::numerical_failure;
        res.message = "residual not evaluable at the initial point";
        return res;
    }

    double fval = 0.5 * r.squaredNorm();
    Vec g = jac.transpose() * r;
    Mat a = jac.transpose() * jac;

    double mu = opts.lm_lambda_init * std::max(a.diagonal().maxCoeff(), 1e-300);
    double nu = 2.0;
    res.value = r.squaredNorm();

    if (g.norm() <= opts.grad_tol * (1.0 + fval)) {
        res.termination = Termination::converged_gradient;
        return res;
    }

    Vec r_trial;
    for (int iter = 1; iter <= opts.max_iterations; ++iter) {
        res.iterations = iter;
        if (seconds_since(t_start) > opts.time_limit_seconds) {
            res.termination = Termination::time_limit;
            return res;
        }

        Mat damped = a;
        damped.diagonal().array() += mu;
        Eigen::LDLT<Mat> ldlt(damped);
        if (ldlt.info() != Eigen::Success) {
            mu *= nu;
            nu *= 2.0;
            if (mu > 1e32) {
                res.termination = Termination::numerical_failure;
                res.message = "damped normal equations unsolvable";
                return res;
            }
            continue;
        }
        const Vec delta = ldlt.solve(-g);
        if (!delta.allFinite()) {
            mu *= nu;
            nu *= 2.0;
            if (mu > 1e32) {
                res.termination = Termination::numerical_failure;
                res.message = "step solve produced non-finite values";
                return res;
            }
            continue;
        }

        const Vec trial = res.x + delta;
        ++res.objective_evaluations;
        const bool ok = model.residual(trial, r_trial) && r_trial.allFinite();
        const double f_trial = ok ? 0.5 * r_trial.squaredNorm() : kInf;
        const double pred = 0.5 * delta.dot(mu * delta - g);
        const double rho = (ok && pred > 0.0) ? (fval - f_trial) / pred : -kInf;

        if (ok && rho > 0.0) {
            res.x = trial;
            const double df = fval - f_trial;
            fval = f_trial;

            ++res.objective_evaluations;
            if (!model.residual_jacobian(res.x, r, jac) || !r.allFinite() || !jac.allFinite()) {
                res.termination = Termination::numerical_failure;
                res.message = "jacobian not evaluable at an accepted point";
                return res;
            }
            g = jac.transpose() * r;
            a = jac.transpose() * jac;
            res.value = r.squaredNorm();

            const double shrink = 1.0 - std::pow(2.0 * rho - 1.0, 3);
            mu *= std::max(1.0 / 3.0, shrink);
            nu = 2.0;

            if (g.norm() <= opts.grad_tol * (1.0 + fval)) {
                res.termination = Termination::converged_gradient;
                return res;
            }
            // Step- and objective-based stops only count for accepted steps;
            // a step shrunk to nothing by damping is a stall, not convergence.
            if (delta.norm() <= opts.step_tol * (1.0 + res.x.norm())) {
                res.termination = Termination::converged_step;
                return res;
            }
            if (std::abs(df) <= opts.obj_tol * (1.0 + fval)) {
                res.termination = Termination::converged_objective;
                return res;
            }
        } else {
            mu *= nu;
            nu *= 2.0;
            if (mu > 1e32) {
                res.termination = Termination::numerical_failure;
                res.message = "no acceptable step under maximum damping";
                return res;
            }
        }
    }

    res.termination = Termination::max_iterations;
    return res;
}

}  // namespace wendy
