#pragma once

#include "wendy/model.hpp"
#include "wendy/solvers.hpp"
#include "wendy/testfn.hpp"
#include "wendy/types.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace wendy {

// Whether the injected per-entry noise variance scales like the noise ratio
// itself or its square. The linear reading is the default.
enum class NoiseConvention { linear, squared };

// One benchmark setting: a system at a given grid size, horizon, and noise
// ratio. t_end = 0 keeps the system's default horizon.
struct SweepCase {
    std::string system;
    int M = 256;
    double t_end = 0.0;
    double noise_ratio = 0.0;
};

struct SweepOptions {
    int trials = 100;
    std::uint64_t master_seed = 1;
    std::vector<std::string> estimators = {"wendy_mle", "wls", "wendy_irls", "oe_ls",
                                           "hybrid"};
    NoiseConvention convention = NoiseConvention::linear;
    int threads = 1;
    EstimationOptions estimation;
    SvdPolicy svd;  // test function reduction policy shared by all trials
};

struct TrialRecord {
    int case_order = 0;  // position of the case in the sweep definition
    int est_order = 0;   // position of the estimator in the option list
    std::string system;
    std::string estimator;
    int M = 0;
    double t_end = 0.0;
    double noise_ratio = 0.0;
    int trial = 0;
    bool solver_converged = false;
    Vec p0;
    Vec p_hat;
    Vec stderr_vals;     // empty when no covariance was produced
    double coeff_err = 0.0;
    double forward_err = 0.0;
    double seconds = 0.0;
    std::string message;
};

// Success criterion: both relative errors finite and below 25 (2500%).
bool trial_succeeded(const TrialRecord& r);

struct MetricSummary {
    int total = 0;
    int successes = 0;
    double failure_rate = 1.0;
    double mean_coeff_err = 0.0;
    double mean_forward_err = 0.0;
    Vec bias2;     // per parameter: med (p_hat_j - p*_j)^2 / p*_j^2 over successes
    Vec variance;  // med (p_hat_j - mean_j)^2 / p*_j^2
    Vec mse;       // med [(p_hat_j - p*_j)^2 + (p_hat_j - mean_j)^2] / p*_j^2
    Vec coverage;  // fraction of successes with |p_hat_j - p*_j| < 2 stderr_j
    double median_bias2 = 0.0;     // medians of the per-parameter columns
    double median_variance = 0.0;
    double median_mse = 0.0;
    double median_coverage = 0.0;
};

double median(std::vector<double> values);  // empty input -> NaN

MetricSummary compute_metrics(const std::vector<TrialRecord>& records, const Vec& p_star);

// Sampling grid for benchmark data: uniform with M+1 points ending at the
// horizon. Starts at t0, except that systems with multiplicative noise and a
// zero entry in u0 start one step later, since their first sample could not
// carry lognormal noise.
Vec benchmark_grid(const BenchmarkSystem& sys, int M, double t_end);

// Truth trajectory sampled at the given benchmark grid. Integration always
// starts from the system's initial state at its native t0; when the grid
// starts one step later the leading sample is simulated and dropped.
Trajectory simulate_truth(const BenchmarkSystem& sys, const Vec& grid);

// Additive Gaussian noise scaled by the mean signal power, or multiplicative
// lognormal noise. Draws happen in row-major data order.
Mat corrupt(const Mat& truth, NoiseKind kind, double noise_ratio, std::mt19937_64& rng,
            NoiseConvention convention = NoiseConvention::linear);

// Counter-style per-trial seed: a hash of the full trial key, so results do
// not depend on scheduling order.
std::uint64_t trial_seed(std::uint64_t master, const std::string& system, int M,
                         double t_end, double noise_ratio, int trial);

struct SweepGroup {
    SweepCase spec;
    std::string estimator;
    Vec p_star;
    MetricSummary metrics;
};

struct SweepResult {
    std::vector<TrialRecord> records;  // canonical order: case, trial, estimator
    std::vector<SweepGroup> groups;
};

// Runs trials x cases x estimators. Every estimator in a trial sees the same
// noisy data and the same initial guess; the truth trajectory is simulated
// once per (system, M, t_end). Output is identical for any thread count.
SweepResult run_sweep(const std::vector<SweepCase>& cases, const SweepOptions& opts);

void write_results_csv(const SweepResult& result, const std::string& path);
void write_timings_csv(const SweepResult& result, const std::string& path);
void write_metrics_csv(const SweepResult& result, const std::string& path);
void write_metrics_per_param_csv(const SweepResult& result, const std::string& path);

// Trajectory interchange: header "t,u1..uD", one row per sample.
void write_trajectory_csv(const std::string& path, const Vec& times, const Mat& states);
std::pair<Vec, Mat> read_trajectory_csv(const std::string& path);

}  // namespace wendy
