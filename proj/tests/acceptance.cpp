// End-to-end acceptance checks. Each criterion prints one [PASS]/[FAIL] line
// with a timing and a short detail string; the exit code is the number of
// failures. Run with --only 3,8 to restrict to a subset while profiling.

#include "wendy/bench.hpp"
#include "wendy/likelihood.hpp"
#include "wendy/model.hpp"
#include "wendy/solvers.hpp"
#include "wendy/testfn.hpp"
#include "wendy/weakform.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace {

using wendy::Mat;
using wendy::Vec;

constexpr double kInf = std::numeric_limits<double>::infinity();

double rel_err(const Vec& a, const Vec& b) { return (a - b).norm() / b.norm(); }

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(3);
    os << v;
    return os.str();
}

struct Dataset {
    wendy::BenchmarkSystem sys;
    Vec grid;
    Mat truth;
    Mat data;
};

// All noisy checks here read the noise ratio as a standard-deviation fraction
// (the squared variance convention); the reference accuracy numbers the
// criteria pin down were produced under that reading.
constexpr wendy::NoiseConvention kConvention = wendy::NoiseConvention::squared;

Dataset make_dataset(const std::string& name, int M, double noise_ratio, std::uint64_t seed,
                     double t_end = 0.0) {
    Dataset ds;
    ds.sys = wendy::builtin_system(name);
    ds.grid = wendy::benchmark_grid(ds.sys, M, t_end);
    const wendy::Trajectory traj = wendy::simulate_truth(ds.sys, ds.grid);
    if (traj.status != wendy::SimStatus::ok)
        throw std::runtime_error("truth simulation failed for " + name);
    ds.truth = traj.states;
    std::mt19937_64 rng(seed);
    ds.data = wendy::corrupt(ds.truth, ds.sys.noise_kind, noise_ratio, rng, kConvention);
    return ds;
}

wendy::WeakFormProblem make_problem(const Dataset& ds, const wendy::SvdPolicy& policy) {
    wendy::TestFunctionBasis basis =
        wendy::build_basis(ds.data, ds.grid, 9.0, {1.0, 2.0, 4.0, 8.0}, policy);
    wendy::NoiseModel noise;
    noise.kind = ds.sys.noise_kind;
    return wendy::WeakFormProblem(ds.sys.model, basis, ds.data, ds.grid, noise);
}

double finite_or_inf(double v) { return std::isfinite(v) ? v : kInf; }

// Median of coefficient errors for one (case, estimator) group, non-finite
// entries pushed to +inf so diverged fits count as arbitrarily bad.
double group_median_err(const std::vector<wendy::TrialRecord>& records,
                        const std::string& system, int M, const std::string& estimator,
                        bool successes_only) {
    std::vector<double> errs;
    for (const auto& r : records) {
        if (r.system != system || r.M != M || r.estimator != estimator) continue;
        if (successes_only && !wendy::trial_succeeded(r)) continue;
        errs.push_back(finite_or_inf(r.coeff_err));
    }
    return wendy::median(std::move(errs));
}

int group_failures(const std::vector<wendy::TrialRecord>& records, const std::string& estimator,
                   int* total = nullptr) {
    int fails = 0, n = 0;
    for (const auto& r : records) {
        if (r.estimator != estimator) continue;
        ++n;
        if (!wendy::trial_succeeded(r)) ++fails;
    }
    if (total) *total = n;
    return fails;
}

// ---------------------------------------------------------------------------
// 1. Analytic gradient and Hessian of the objective agree with central finite
//    differences at random feasible parameter points on all built-in systems.

bool criterion1(std::string& detail) {
    const std::vector<std::string> names = {"lorenz", "hindmarsh_rose", "goodwin", "sir_tdi"};
    double worst_g = 0.0, worst_h = 0.0;
    std::mt19937_64 rng(101);
    std::uniform_real_distribution<double> spread(0.8, 1.25);

    for (const auto& name : names) {
        Dataset ds = make_dataset(name, 128, 0.05, 7001 + names.size());
        wendy::SvdPolicy policy;
        policy.fixed_k = 8;
        wendy::WeakFormProblem problem = make_problem(ds, policy);
        const int J = ds.sys.model.dim_params;

        for (int point = 0; point < 20; ++point) {
            Vec p(J);
            bool ok = false;
            for (int attempt = 0; attempt < 40 && !ok; ++attempt) {
                for (int j = 0; j < J; ++j) {
                    double v = ds.sys.p_star[j] * spread(rng);
                    v = std::min(std::max(v, ds.sys.model.param_lower[j]),
                                 ds.sys.model.param_upper[j]);
                    p[j] = v;
                }
                ok = std::isfinite(wendy::nll(problem, p).value);
            }
            if (!ok) {
                detail = "no finite evaluation point found for " + name;
                return false;
            }

            const auto eval = wendy::nll_with_derivatives(problem, p, true);

            Vec fd_grad(J);
            for (int j = 0; j < J; ++j) {
                const double h = 1e-5 * (1.0 + std::abs(p[j]));
                Vec pp = p, pm = p;
                pp[j] += h;
                pm[j] -= h;
                fd_grad[j] = (wendy::nll(problem, pp).value - wendy::nll(problem, pm).value) /
                             (2.0 * h);
            }
            const double gerr = (eval.gradient - fd_grad).cwiseAbs().maxCoeff() /
                                (fd_grad.cwiseAbs().maxCoeff() + 1.0);

            Mat fd_hess(J, J);
            for (int j = 0; j < J; ++j) {
                const double h = 1e-5 * (1.0 + std::abs(p[j]));
                Vec pp = p, pm = p;
                pp[j] += h;
                pm[j] -= h;
                const Vec gp = wendy::nll_with_derivatives(problem, pp, false).gradient;
                const Vec gm = wendy::nll_with_derivatives(problem, pm, false).gradient;
                fd_hess.col(j) = (gp - gm) / (2.0 * h);
            }
            const Mat fd_sym = 0.5 * (fd_hess + fd_hess.transpose());
            const double herr = (eval.hessian - fd_sym).cwiseAbs().maxCoeff() /
                                (fd_sym.cwiseAbs().maxCoeff() + 1.0);

            worst_g = std::max(worst_g, gerr);
            worst_h = std::max(worst_h, herr);
        }
    }
    detail = "worst gradient " + fmt(worst_g) + ", worst hessian " + fmt(worst_h) +
             " (tol 1e-5 / 1e-4)";
    return worst_g < 1e-5 && worst_h < 1e-4;
}

// ---------------------------------------------------------------------------
// 2. At the true parameters the whitened weak residual is standard normal to
//    first order: near-zero mean and near-unit variance over repeated draws.

bool criterion2(std::string& detail) {
    Dataset ds = make_dataset("hindmarsh_rose", 512, 0.01, 7101);
    wendy::SvdPolicy policy;
    policy.fixed_k = 64;
    wendy::TestFunctionBasis basis =
        wendy::build_basis(ds.data, ds.grid, 9.0, {1.0, 2.0, 4.0, 8.0}, policy);
    if (basis.k != 64) {
        detail = "basis delivered k=" + std::to_string(basis.k);
        return false;
    }

    std::mt19937_64 rng(7102);
    double sum = 0.0, sumsq = 0.0;
    std::int64_t count = 0;
    for (int draw = 0; draw < 500; ++draw) {
        const Mat data = wendy::corrupt(ds.truth, ds.sys.noise_kind, 0.01, rng, kConvention);
        wendy::NoiseModel noise;
        noise.kind = ds.sys.noise_kind;
        wendy::WeakFormProblem problem(ds.sys.model, basis, data, ds.grid, noise);
        const auto eval = wendy::nll(problem, ds.sys.p_star);
        const Vec r = problem.residual(ds.sys.p_star);
        const Vec z = eval.factor->llt.matrixL().solve(r);
        sum += z.sum();
        sumsq += z.squaredNorm();
        count += z.size();
    }
    const double mean = sum / static_cast<double>(count);
    const double var = sumsq / static_cast<double>(count) - mean * mean;
    detail = "whitened mean " + fmt(mean) + ", variance " + fmt(var) +
             " over 500 draws (want |mean| < 0.15, var in [0.7, 1.3])";
    return std::abs(mean) < 0.15 && var >= 0.7 && var <= 1.3;
}

// ---------------------------------------------------------------------------
// 3. On noise-free data the maximum-likelihood entry point detects the
//    degenerate noise model, falls back to least squares, and recovers the
//    true coefficients from random initial guesses.

bool criterion3(std::string& detail) {
    const std::vector<wendy::SweepCase> cases = {
        {"lorenz", 512, 0.0, 0.0},
        {"hindmarsh_rose", 512, 0.0, 0.0},
        {"goodwin", 256, 0.0, 0.0},
        {"sir_tdi", 256, 0.0, 0.0},
    };
    wendy::SweepOptions opts;
    opts.trials = 10;
    opts.master_seed = 11;
    opts.estimators = {"wendy_mle"};
    const wendy::SweepResult result = wendy::run_sweep(cases, opts);

    std::ostringstream os;
    bool pass = true;
    for (const auto& c : cases) {
        int hits = 0, fallbacks = 0, n = 0;
        for (const auto& r : result.records) {
            if (r.system != c.system || r.M != c.M) continue;
            ++n;
            if (std::isfinite(r.coeff_err) && r.coeff_err < 1e-3) ++hits;
            if (r.message.find("least squares") != std::string::npos) ++fallbacks;
        }
        os << " " << c.system << " " << hits << "/" << n;
        if (hits < 8 || fallbacks != n) pass = false;
        if (fallbacks != n) os << " (fallback " << fallbacks << "/" << n << ")";
    }
    detail = "recoveries below 1e-3:" + os.str();
    return pass;
}

// ---------------------------------------------------------------------------
// 4. Growing the horizon on a chaotic system leaves the likelihood fit
//    accurate while plain trajectory fitting degrades.

bool criterion4(std::string& detail) {
    const std::vector<wendy::SweepCase> cases = {
        {"lorenz", 300, 3.0, 0.1},
        {"lorenz", 1500, 15.0, 0.1},
        {"lorenz", 3000, 30.0, 0.1},
    };
    wendy::SweepOptions opts;
    opts.trials = 10;
    opts.master_seed = 21;
    opts.convention = kConvention;
    opts.estimators = {"wendy_mle", "oe_ls"};
    opts.svd.rank_cap = 128;
    opts.estimation.optimize.time_limit_seconds = 60.0;
    const wendy::SweepResult result = wendy::run_sweep(cases, opts);

    const double mle_short = group_median_err(result.records, "lorenz", 300, "wendy_mle", false);
    const double mle_long = group_median_err(result.records, "lorenz", 3000, "wendy_mle", false);
    const double oe_short = group_median_err(result.records, "lorenz", 300, "oe_ls", false);
    const double oe_long = group_median_err(result.records, "lorenz", 3000, "oe_ls", false);

    detail = "median errors, horizon 3 -> 30: likelihood " + fmt(mle_short) + " -> " +
             fmt(mle_long) + ", output-error " + fmt(oe_short) + " -> " + fmt(oe_long);
    return mle_long <= 2.0 * mle_short && oe_long >= 3.0 * oe_short;
}

// ---------------------------------------------------------------------------
// 5. Under moderate noise the likelihood fit never fails outright, and the
//    reweighted least-squares baseline fails at least as often.

bool criterion5(std::string& detail) {
    const std::vector<wendy::SweepCase> cases = {{"hindmarsh_rose", 256, 0.0, 0.05}};
    wendy::SweepOptions opts;
    opts.trials = 20;
    opts.master_seed = 31;
    opts.convention = kConvention;
    opts.estimators = {"wendy_mle", "wendy_irls"};
    opts.svd.rank_cap = 128;
    const wendy::SweepResult result = wendy::run_sweep(cases, opts);

    int n_mle = 0, n_irls = 0;
    const int mle_fail = group_failures(result.records, "wendy_mle", &n_mle);
    const int irls_fail = group_failures(result.records, "wendy_irls", &n_irls);
    detail = "failures: likelihood " + std::to_string(mle_fail) + "/" + std::to_string(n_mle) +
             ", reweighted " + std::to_string(irls_fail) + "/" + std::to_string(n_irls);
    return n_mle == 20 && mle_fail == 0 && irls_fail >= mle_fail;
}

// ---------------------------------------------------------------------------
// 6. Multiplicative noise: the likelihood fit beats unweighted least squares
//    on accuracy, and its error decomposition lands in the expected ranges.

bool criterion6(std::string& detail) {
    const std::vector<wendy::SweepCase> cases = {{"goodwin", 256, 0.0, 0.05}};
    wendy::SweepOptions opts;
    opts.trials = 20;
    opts.master_seed = 41;
    opts.convention = kConvention;
    opts.estimators = {"wendy_mle", "wls"};
    opts.svd.rank_cap = 128;
    const wendy::SweepResult result = wendy::run_sweep(cases, opts);

    const double med_mle = group_median_err(result.records, "goodwin", 256, "wendy_mle", true);
    const double med_wls = group_median_err(result.records, "goodwin", 256, "wls", true);

    const wendy::MetricSummary* mle_metrics = nullptr;
    for (const auto& g : result.groups)
        if (g.estimator == "wendy_mle") mle_metrics = &g.metrics;
    if (!mle_metrics) {
        detail = "missing metrics group";
        return false;
    }
    const double b2 = mle_metrics->median_bias2;
    const double vr = mle_metrics->median_variance;
    const double ms = mle_metrics->median_mse;

    detail = "median error " + fmt(med_mle) + " (plain least squares " + fmt(med_wls) +
             "); bias2 " + fmt(b2) + ", variance " + fmt(vr) + ", mse " + fmt(ms);
    const bool decomposition_ok = b2 > 3.57e-5 && b2 < 3.57e-3 && vr > 3.88e-4 &&
                                  vr < 3.88e-2 && ms > 8.67e-4 && ms < 8.67e-2;
    return med_mle < 0.25 && med_mle < med_wls && decomposition_ok;
}

// ---------------------------------------------------------------------------
// 7. Box-constrained epidemic model: no failures for the likelihood fit or
//    the hybrid refinement, and the reported confidence intervals cover the
//    truth at close to their nominal rate.

bool criterion7(std::string& detail) {
    const std::vector<wendy::SweepCase> cases = {{"sir_tdi", 256, 0.0, 0.05}};
    wendy::SweepOptions opts;
    opts.trials = 20;
    opts.master_seed = 51;
    opts.convention = kConvention;
    opts.estimators = {"wendy_mle", "hybrid"};
    opts.svd.rank_cap = 128;
    const wendy::SweepResult result = wendy::run_sweep(cases, opts);

    int n_mle = 0, n_hyb = 0;
    const int mle_fail = group_failures(result.records, "wendy_mle", &n_mle);
    const int hyb_fail = group_failures(result.records, "hybrid", &n_hyb);

    double coverage = -1.0;
    for (const auto& g : result.groups)
        if (g.estimator == "wendy_mle") coverage = g.metrics.median_coverage;

    detail = "failures " + std::to_string(mle_fail) + "+" + std::to_string(hyb_fail) + "/" +
             std::to_string(n_mle) + " each, median coverage " + fmt(coverage);
    return n_mle == 20 && n_hyb == 20 && mle_fail == 0 && hyb_fail == 0 && coverage >= 0.90;
}

// ---------------------------------------------------------------------------
// 8. Hessian evaluation cost scales linearly in the number of samples at
//    fixed basis size and roughly cubically in the basis size.

double time_hessian(wendy::WeakFormProblem& problem, const Vec& p) {
    double best = kInf;
    for (int rep = 0; rep < 4; ++rep) {
        // Nudge the point so per-point memoization cannot serve a cached table.
        const Vec q = p * (1.0 + 1e-9 * rep);
        const auto start = std::chrono::steady_clock::now();
        wendy::nll_with_derivatives(problem, q, true);
        const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start;
        if (rep > 0) best = std::min(best, dt.count());
    }
    return best;
}

double loglog_slope(const std::vector<double>& sizes, const std::vector<double>& times) {
    const int n = static_cast<int>(sizes.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (int i = 0; i < n; ++i) {
        const double x = std::log(sizes[i]), y = std::log(times[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

// Ring coupling with two parameters and a wide state so the factor dimension
// dominates the assembly work in the basis-size sweep.
wendy::OdeModel ring_model(int D) {
    wendy::OdeModel m;
    m.dim_state = D;
    m.dim_params = 2;
    m.name = "ring";
    m.linear_in_params = true;
    m.rhs = [D](const Vec& p, const Vec& u, double, Vec& out) {
        for (int d = 0; d < D; ++d) out[d] = p[0] * u[(d + 1) % D] + p[1] * u[d];
    };
    m.jac_u = [D](const Vec& p, const Vec&, double, Mat& out) {
        out.setZero();
        for (int d = 0; d < D; ++d) {
            out(d, (d + 1) % D) += p[0];
            out(d, d) += p[1];
        }
    };
    m.jac_p = [D](const Vec&, const Vec& u, double, Mat& out) {
        for (int d = 0; d < D; ++d) {
            out(d, 0) = u[(d + 1) % D];
            out(d, 1) = u[d];
        }
    };
    m.jac_up = [D](const Vec&, const Vec&, double, wendy::Tensor3& out) {
        out.set_zero();
        for (int d = 0; d < D; ++d) {
            out(d, (d + 1) % D, 0) = 1.0;
            out(d, d, 1) = 1.0;
        }
    };
    m.hess_pp = [](const Vec&, const Vec&, double, wendy::Tensor3& out) { out.set_zero(); };
    m.hess_upp = [](const Vec&, const Vec&, double, wendy::Tensor4& out) { out.set_zero(); };
    m.param_lower = Vec::Constant(2, -kInf);
    m.param_upper = Vec::Constant(2, kInf);
    return m;
}

bool criterion8(std::string& detail) {
    // Sample-count sweep at fixed basis size.
    std::vector<double> m_sizes, m_times;
    for (int M : {256, 512, 1024, 2048}) {
        Dataset ds = make_dataset("lorenz", M, 0.05, 7201);
        wendy::SvdPolicy policy;
        policy.fixed_k = 64;
        wendy::WeakFormProblem problem = make_problem(ds, policy);
        if (problem.num_test_functions() != 64) {
            detail = "sample sweep basis delivered k=" +
                     std::to_string(problem.num_test_functions()) + " at M=" + std::to_string(M);
            return false;
        }
        m_sizes.push_back(M);
        m_times.push_back(time_hessian(problem, ds.sys.p_star));
    }
    const double m_slope = loglog_slope(m_sizes, m_times);

    // Basis-size sweep at a fixed grid.
    const int D = 8, M = 256;
    const wendy::OdeModel model = ring_model(D);
    Vec p(2);
    p << 0.7, -0.75;
    Vec u0(D);
    for (int d = 0; d < D; ++d) u0[d] = 1.0 + 0.25 * d;
    const Vec grid = wendy::uniform_grid(0.0, 8.0, M);
    const wendy::Trajectory traj = wendy::simulate(model, p, u0, grid);
    if (traj.status != wendy::SimStatus::ok) {
        detail = "ring simulation failed";
        return false;
    }
    std::mt19937_64 rng(7202);
    const Mat data = wendy::corrupt(traj.states, wendy::NoiseKind::gaussian, 0.02, rng, kConvention);

    std::vector<double> k_sizes, k_times;
    for (int K : {64, 128, 256}) {
        wendy::SvdPolicy policy;
        policy.fixed_k = K;
        wendy::TestFunctionBasis basis =
            wendy::build_basis(data, grid, 9.0, {1.0, 2.0, 4.0, 8.0}, policy);
        if (basis.k != K) {
            detail = "basis sweep delivered k=" + std::to_string(basis.k) + " for K=" +
                     std::to_string(K);
            return false;
        }
        wendy::WeakFormProblem problem(model, basis, data, grid, wendy::NoiseModel{});
        k_sizes.push_back(K);
        k_times.push_back(time_hessian(problem, p));
    }
    const double k_slope = loglog_slope(k_sizes, k_times);

    detail = "sample-count slope " + fmt(m_slope) + " (want 1 +- 0.3), basis-size slope " +
             fmt(k_slope) + " (want 3 +- 0.5)";
    return std::abs(m_slope - 1.0) <= 0.3 && std::abs(k_slope - 3.0) <= 0.5;
}

// ---------------------------------------------------------------------------
// 9. Summary metrics agree with a direct brute-force evaluation on a fixture
//    with failures, missing uncertainties, and mixed signs.

bool criterion9(std::string& detail) {
    Vec p_star(2);
    p_star << 2.0, -4.0;

    std::vector<wendy::TrialRecord> records;
    for (int t = 0; t < 10; ++t) {
        wendy::TrialRecord r;
        r.system = "fixture";
        r.estimator = "x";
        r.trial = t;
        r.p_hat = Vec(2);
        r.p_hat << 2.0 + 0.03 * (t - 4.5), -4.0 - 0.11 * (t - 3.0);
        r.coeff_err = 0.01 * (t + 1);
        r.forward_err = 0.02 * (t + 1);
        r.stderr_vals = Vec(2);
        r.stderr_vals << 0.05 + 0.01 * t, 0.3 + 0.02 * t;
        if (t == 5) r.coeff_err = 26.0;                                      // hard failure
        if (t == 6) r.forward_err = std::numeric_limits<double>::quiet_NaN();  // crashed forward run
        if (t == 3) r.stderr_vals = Vec();  // converged fit without a covariance
        records.push_back(r);
    }

    const wendy::MetricSummary m = wendy::compute_metrics(records, p_star);

    // Brute force, written independently of the library internals.
    std::vector<int> ok;
    for (int t = 0; t < 10; ++t) {
        const auto& r = records[t];
        if (std::isfinite(r.coeff_err) && std::isfinite(r.forward_err) && r.coeff_err < 25.0 &&
            r.forward_err < 25.0)
            ok.push_back(t);
    }
    double sum_ce = 0.0, sum_fe = 0.0;
    for (int t : ok) {
        sum_ce += records[t].coeff_err;
        sum_fe += records[t].forward_err;
    }
    const auto brute_median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        const std::size_t n = v.size();
        return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    };

    bool pass = true;
    std::ostringstream why;
    if (m.successes != static_cast<int>(ok.size()) ||
        m.failure_rate != (10.0 - ok.size()) / 10.0) {
        pass = false;
        why << " success-count";
    }
    if (m.mean_coeff_err != sum_ce / ok.size() || m.mean_forward_err != sum_fe / ok.size()) {
        pass = false;
        why << " means";
    }

    for (int j = 0; j < 2 && pass; ++j) {
        double mean_j = 0.0;
        for (int t : ok) mean_j += records[t].p_hat[j];
        mean_j /= static_cast<double>(ok.size());
        std::vector<double> b2, vr, ms;
        int covered = 0, with_stderr_hits = 0;
        for (int t : ok) {
            const double d = records[t].p_hat[j] - p_star[j];
            const double s = records[t].p_hat[j] - mean_j;
            b2.push_back(d * d / (p_star[j] * p_star[j]));
            vr.push_back(s * s / (p_star[j] * p_star[j]));
            ms.push_back((d * d + s * s) / (p_star[j] * p_star[j]));
            if (records[t].stderr_vals.size() == 2 &&
                std::abs(d) < 2.0 * records[t].stderr_vals[j])
                ++with_stderr_hits;
        }
        covered = with_stderr_hits;
        const double tol = 1e-12;
        if (std::abs(m.bias2[j] - brute_median(b2)) > tol * std::max(1.0, brute_median(b2)) ||
            std::abs(m.variance[j] - brute_median(vr)) > tol ||
            std::abs(m.mse[j] - brute_median(ms)) > tol) {
            pass = false;
            why << " medians[" << j << "]";
        }
        if (m.coverage[j] != static_cast<double>(covered) / ok.size()) {
            pass = false;
            why << " coverage[" << j << "]";
        }
    }
    detail = pass ? "sums exact, medians within 1e-12, coverage exact" : "mismatch:" + why.str();
    return pass;
}

// ---------------------------------------------------------------------------
// 10. The benchmark command is deterministic: different worker-thread counts
//     produce byte-identical result files for the same seed.

std::string slurp(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + p.string());
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

bool criterion10(std::string& detail) {
    namespace fs = std::filesystem;
    const fs::path base = fs::temp_directory_path() / "wendy_acceptance_c10";
    fs::remove_all(base);
    fs::create_directories(base);

    const fs::path cfg = base / "bench.json";
    {
        std::ofstream f(cfg);
        f << "{\n"
          << "  \"systems\": [\"lorenz\", \"goodwin\"],\n"
          << "  \"subsamples\": [64],\n"
          << "  \"noise_ratios\": [0.1],\n"
          << "  \"trials\": 2,\n"
          << "  \"master_seed\": 99,\n"
          << "  \"estimators\": [\"wendy_mle\", \"wls\"],\n"
          << "  \"rank_cap\": 64\n"
          << "}\n";
    }

    const std::string cli = WENDY_CLI_PATH;
    for (int threads : {1, 4}) {
        const fs::path out = base / ("run" + std::to_string(threads));
        const std::string cmd = cli + " benchmark --config " + cfg.string() + " --threads " +
                                std::to_string(threads) + " --out-dir " + out.string() +
                                " > /dev/null";
        if (std::system(cmd.c_str()) != 0) {
            detail = "benchmark command failed with " + std::to_string(threads) + " threads";
            return false;
        }
    }

    for (const char* name : {"results.csv", "metrics.csv", "metrics_per_param.csv"}) {
        if (slurp(base / "run1" / name) != slurp(base / "run4" / name)) {
            detail = std::string(name) + " differs between thread counts";
            return false;
        }
    }
    detail = "result files byte-identical across 1 and 4 threads";
    return true;
}

struct Criterion {
    int id;
    const char* label;
    double budget_seconds;
    std::function<bool(std::string&)> run;
};

}  // namespace

int main(int argc, char** argv) {
    std::vector<Criterion> criteria = {
        {1, "objective derivatives match finite differences", 120, criterion1},
        {2, "whitened residual is standard normal at the truth", 300, criterion2},
        {3, "noise-free data recovered through the least-squares fallback", 600, criterion3},
        {4, "long horizons favor the likelihood fit over trajectory fitting", 1800, criterion4},
        {5, "no failures under moderate noise, reweighting fails at least as often", 1200,
         criterion5},
        {6, "multiplicative noise accuracy and error decomposition", 1800, criterion6},
        {7, "constrained epidemic fit succeeds with honest intervals", 1800, criterion7},
        {8, "hessian cost scales linearly in samples, cubically in basis size", 900, criterion8},
        {9, "summary metrics match a brute-force evaluation", 1, criterion9},
        {10, "benchmark output independent of thread count", 600, criterion10},
    };

    std::vector<int> only;
    for (int a = 1; a < argc; ++a) {
        const std::string arg = argv[a];
        if (arg == "--only" && a + 1 < argc) {
            std::stringstream ss(argv[++a]);
            std::string tok;
            while (std::getline(ss, tok, ',')) only.push_back(std::stoi(tok));
        }
    }

    int failures = 0;
    for (auto& c : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
        std::string detail;
        bool pass = false;
        const auto start = std::chrono::steady_clock::now();
        try {
            pass = c.run(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start;
        if (dt.count() > c.budget_seconds) {
            pass = false;
            detail += " [over budget " + fmt(c.budget_seconds) + "s]";
        }
        std::cout << (pass ? "[PASS]" : "[FAIL]") << " criterion " << c.id << ": " << c.label
                  << " (" << fmt(dt.count()) << "s) - " << detail << "\n"
                  << std::flush;
        if (!pass) ++failures;
    }
    return failures;
}
