#include "wendy/bench.hpp"

#include "wendy/integrate.hpp"
#include "wendy/testfn.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace wendy {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

std::uint64_t splitmix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

std::string join_vec(const Vec& v) {
    std::string out;
    for (int i = 0; i < v.size(); ++i) {
        if (i) out += ';';
        out += fmt(v[i]);
    }
    return out;
}

std::string sanitize(std::string s) {
    for (char& c : s) {
        if (c == ',' || c == '\n' || c == '\r' || c == '"') c = ';';
    }
    return s;
}

double rel_norm_err(const Vec& a, const Vec& b) {
    const double den = b.norm();
    if (den == 0.0) return kNan;
    return (a - b).norm() / den;
}

struct TruthKey {
    std::string system;
    int M;
    double t_end;
    bool operator<(const TruthKey& o) const {
        if (system != o.system) return system < o.system;
        if (M != o.M) return M < o.M;
        return t_end < o.t_end;
    }
};

struct TruthData {
    BenchmarkSystem sys;
    Vec grid;
    Mat states;
};

EstimationResult dispatch_estimator(const std::string& name, WeakFormProblem& problem,
                                    const BenchmarkSystem& sys, const Mat& data,
                                    const Vec& grid, const Vec& p0,
                                    const EstimationOptions& opts) {
    if (name == "wendy_mle") return wendy_mle(problem, p0, opts);
    if (name == "wls") return wls(problem, p0, opts);
    if (name == "wendy_irls") return wendy_irls(problem, p0, opts);
    if (name == "oe_ls") return oe_ls(sys.model, data, grid, p0, opts);
    if (name == "hybrid") return hybrid(problem, data, p0, opts);
    throw std::invalid_argument("unknown estimator: " + name);
}

}  // namespace

bool trial_succeeded(const TrialRecord& r) {
    return std::isfinite(r.coeff_err) && std::isfinite(r.forward_err) && r.coeff_err < 25.0 &&
           r.forward_err < 25.0;
}

double median(std::vector<double> values) {
    if (values.empty()) return kNan;
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    if (n % 2 == 1) return values[n / 2];
    return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

MetricSummary compute_metrics(const std::vector<TrialRecord>& records, const Vec& p_star) {
    MetricSummary out;
    out.total = static_cast<int>(records.size());
    const int J = static_cast<int>(p_star.size());
    out.bias2 = Vec::Constant(J, kNan);
    out.variance = Vec::Constant(J, kNan);
    out.mse = Vec::Constant(J, kNan);
    out.coverage = Vec::Constant(J, kNan);
    out.mean_coeff_err = kNan;
    out.mean_forward_err = kNan;
    out.median_bias2 = kNan;
    out.median_variance = kNan;
    out.median_mse = kNan;
    out.median_coverage = kNan;

    std::vector<const TrialRecord*> good;
    for (const TrialRecord& r : records)
        if (trial_succeeded(r)) good.push_back(&r);
    out.successes = static_cast<int>(good.size());
    out.failure_rate =
        out.total == 0 ? kNan
                       : static_cast<double>(out.total - out.successes) / out.total;
    if (good.empty()) return out;

    double ce = 0.0, fe = 0.0;
    for (const TrialRecord* r : good) {
        ce += r->coeff_err;
        fe += r->forward_err;
    }
    out.mean_coeff_err = ce / out.successes;
    out.mean_forward_err = fe / out.successes;

    for (int j = 0; j < J; ++j) {
        double mean_j = 0.0;
        for (const TrialRecord* r : good) mean_j += r->p_hat[j];
        mean_j /= out.successes;

        const double denom = p_star[j] * p_star[j];
        std::vector<double> b2, vr, ms;
        int hits = 0;
        for (const TrialRecord* r : good) {
            const double dstar = r->p_hat[j] - p_star[j];
            const double dmean = r->p_hat[j] - mean_j;
            b2.push_back(dstar * dstar / denom);
            vr.push_back(dmean * dmean / denom);
            ms.push_back((dstar * dstar + dmean * dmean) / denom);
            if (r->stderr_vals.size() == p_star.size() &&
                std::abs(dstar) < 2.0 * r->stderr_vals[j])
                ++hits;
        }
        out.bias2[j] = median(b2);
        out.variance[j] = median(vr);
        out.mse[j] = median(ms);
        out.coverage[j] = static_cast<double>(hits) / out.successes;
    }

    auto to_std = [](const Vec& v) {
        return std::vector<double>(v.data(), v.data() + v.size());
    };
    out.median_bias2 = median(to_std(out.bias2));
    out.median_variance = median(to_std(out.variance));
    out.median_mse = median(to_std(out.mse));
    out.median_coverage = median(to_std(out.coverage));
    return out;
}

Vec benchmark_grid(const BenchmarkSystem& sys, int M, double t_end) {
    const double t1 = t_end > 0.0 ? t_end : sys.t_end;
    double t0 = sys.t0;
    if (sys.noise_kind == NoiseKind::lognormal && (sys.u0.array() <= 0.0).any())
        t0 += (t1 - sys.t0) / static_cast<double>(M + 1);
    return uniform_grid(t0, t1, M);
}

Trajectory simulate_truth(const BenchmarkSystem& sys, const Vec& grid) {
    const int n = static_cast<int>(grid.size());
    if (grid[0] <= sys.t0) return simulate(sys.model, sys.p_star, sys.u0, grid);
    Vec extended(n + 1);
    extended[0] = sys.t0;
    extended.tail(n) = grid;
    Trajectory full = simulate(sys.model, sys.p_star, sys.u0, extended);
    Trajectory out;
    out.status = full.status;
    out.times = grid;
    if (full.states.rows() == n + 1) out.states = full.states.bottomRows(n);
    return out;
}

Mat corrupt(const Mat& truth, NoiseKind kind, double noise_ratio, std::mt19937_64& rng,
            NoiseConvention convention) {
    if (noise_ratio < 0.0) throw std::invalid_argument("corrupt: negative noise ratio");
    if (noise_ratio == 0.0) return truth;

    const double scale =
        convention == NoiseConvention::linear ? noise_ratio : noise_ratio * noise_ratio;
    std::normal_distribution<double> gauss(0.0, 1.0);
    Mat out(truth.rows(), truth.cols());

    if (kind == NoiseKind::gaussian) {
        const double var = scale * truth.squaredNorm() / static_cast<double>(truth.rows());
        const double sd = std::sqrt(var);
        for (int m = 0; m < truth.rows(); ++m)
            for (int d = 0; d < truth.cols(); ++d) out(m, d) = truth(m, d) + sd * gauss(rng);
    } else {
        if ((truth.array() <= 0.0).any())
            throw std::invalid_argument("corrupt: lognormal noise needs positive truth data");
        const double sd = std::sqrt(scale);
        for (int m = 0; m < truth.rows(); ++m)
            for (int d = 0; d < truth.cols(); ++d)
                out(m, d) = truth(m, d) * std::exp(sd * gauss(rng));
    }
    return out;
}

std::uint64_t trial_seed(std::uint64_t master, const std::string& system, int M,
                         double t_end, double noise_ratio, int trial) {
    std::uint64_t h = splitmix(master);
    h = splitmix(h ^ fnv1a(system));
    h = splitmix(h ^ static_cast<std::uint64_t>(M));
    h = splitmix(h ^ std::bit_cast<std::uint64_t>(t_end));
    h = splitmix(h ^ std::bit_cast<std::uint64_t>(noise_ratio));
    h = splitmix(h ^ static_cast<std::uint64_t>(trial));
    return h;
}

SweepResult run_sweep(const std::vector<SweepCase>& cases, const SweepOptions& opts) {
    if (opts.trials <= 0) throw std::invalid_argument("run_sweep: trials must be positive");
    if (cases.empty()) throw std::invalid_argument("run_sweep: no cases");

    // Validate estimator names up front.
    for (const std::string& e : opts.estimators) {
        if (e != "wendy_mle" && e != "wls" && e != "wendy_irls" && e != "oe_ls" &&
            e != "hybrid")
            throw std::invalid_argument("unknown estimator: " + e);
    }

    // Truth trajectories, one per (system, M, t_end).
    std::map<TruthKey, TruthData> truths;
    for (const SweepCase& c : cases) {
        const TruthKey key{c.system, c.M, c.t_end};
        if (truths.count(key)) continue;
        TruthData td;
        td.sys = builtin_system(c.system);
        td.grid = benchmark_grid(td.sys, c.M, c.t_end);
        const Trajectory traj = simulate_truth(td.sys, td.grid);
        if (traj.status != SimStatus::ok)
            throw std::runtime_error("run_sweep: truth simulation failed for " + c.system +
                                     " (" + to_string(traj.status) + ")");
        td.states = traj.states;
        truths.emplace(key, std::move(td));
    }

    struct Task {
        int case_idx;
        int trial;
    };
    std::vector<Task> tasks;
    for (int ci = 0; ci < static_cast<int>(cases.size()); ++ci)
        for (int tr = 0; tr < opts.trials; ++tr) tasks.push_back({ci, tr});

    std::vector<TrialRecord> records;
    std::mutex records_mutex;
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;

    auto worker = [&]() {
        while (true) {
            const std::size_t idx = next.fetch_add(1);
            if (idx >= tasks.size()) return;
            const Task task = tasks[idx];
            const SweepCase& c = cases[task.case_idx];
            try {
                const TruthData& td = truths.at(TruthKey{c.system, c.M, c.t_end});
                const BenchmarkSystem& sys = td.sys;
                const int J = sys.model.dim_params;

                std::mt19937_64 rng(trial_seed(opts.master_seed, c.system, c.M, c.t_end,
                                               c.noise_ratio, task.trial));
                Vec p0(J);
                for (int j = 0; j < J; ++j) {
                    std::uniform_real_distribution<double> u(sys.init_range(j, 0),
                                                             sys.init_range(j, 1));
                    p0[j] = u(rng);
                }
                const Mat data =
                    corrupt(td.states, sys.noise_kind, c.noise_ratio, rng, opts.convention);

                TestFunctionBasis basis =
                    build_basis(data, td.grid, 9.0, {1.0, 2.0, 4.0, 8.0}, opts.svd);

                std::vector<TrialRecord> batch;
                for (int ei = 0; ei < static_cast<int>(opts.estimators.size()); ++ei) {
                    TrialRecord rec;
                    rec.case_order = task.case_idx;
                    rec.est_order = ei;
                    rec.system = c.system;
                    rec.estimator = opts.estimators[ei];
                    rec.M = c.M;
                    rec.t_end = c.t_end;
                    rec.noise_ratio = c.noise_ratio;
                    rec.trial = task.trial;
                    rec.p0 = p0;
                    rec.coeff_err = kNan;
                    rec.forward_err = kNan;

                    const auto t0 = std::chrono::steady_clock::now();
                    try {
                        NoiseModel noise;
                        noise.kind = sys.noise_kind;
                        WeakFormProblem problem(sys.model, basis, data, td.grid, noise);
                        const EstimationResult er = dispatch_estimator(
                            rec.estimator, problem, sys, data, td.grid, p0, opts.estimation);
                        rec.solver_converged = er.converged;
                        rec.p_hat = er.p;
                        rec.message = er.message;
                        if (er.uncertainty) rec.stderr_vals = er.uncertainty->standard_error;
                    } catch (const std::exception& e) {
                        rec.solver_converged = false;
                        rec.message = e.what();
                    }
                    rec.seconds = std::chrono::duration<double>(
                                      std::chrono::steady_clock::now() - t0)
                                      .count();

                    if (rec.p_hat.size() == J && rec.p_hat.allFinite()) {
                        rec.coeff_err = rel_norm_err(rec.p_hat, sys.p_star);
                        const Trajectory fwd = simulate(sys.model, rec.p_hat, sys.u0, td.grid,
                                                        opts.estimation.integrate);
                        if (fwd.status == SimStatus::ok) {
                            const double den = td.states.norm();
                            rec.forward_err =
                                den > 0.0 ? (fwd.states - td.states).norm() / den : kNan;
                        }
                    }
                    batch.push_back(std::move(rec));
                }

                std::lock_guard<std::mutex> lk(records_mutex);
                for (auto& r : batch) records.push_back(std::move(r));
            } catch (...) {
                std::lock_guard<std::mutex> lk(error_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };

    const int nthreads = std::max(1, opts.threads);
    if (nthreads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < nthreads; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (first_error) std::rethrow_exception(first_error);

    std::sort(records.begin(), records.end(), [](const TrialRecord& a, const TrialRecord& b) {
        if (a.case_order != b.case_order) return a.case_order < b.case_order;
        if (a.trial != b.trial) return a.trial < b.trial;
        return a.est_order < b.est_order;
    });

    SweepResult out;
    out.records = std::move(records);

    for (int ci = 0; ci < static_cast<int>(cases.size()); ++ci) {
        const Vec& p_star = truths.at(TruthKey{cases[ci].system, cases[ci].M,
                                               cases[ci].t_end})
                                .sys.p_star;
        for (int ei = 0; ei < static_cast<int>(opts.estimators.size()); ++ei) {
            std::vector<TrialRecord> group;
            for (const TrialRecord& r : out.records)
                if (r.case_order == ci && r.est_order == ei) group.push_back(r);
            SweepGroup g;
            g.spec = cases[ci];
            g.estimator = opts.estimators[ei];
            g.p_star = p_star;
            g.metrics = compute_metrics(group, p_star);
            out.groups.push_back(std::move(g));
        }
    }
    return out;
}

void write_results_csv(const SweepResult& result, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f << "system,estimator,M,t_end,noise_ratio,trial,converged,failed,coeff_err,forward_err,"
         "p0,p_hat,stderr,message\n";
    for (const TrialRecord& r : result.records) {
        f << r.system << ',' << r.estimator << ',' << r.M << ',' << fmt(r.t_end) << ','
          << fmt(r.noise_ratio) << ',' << r.trial << ',' << (r.solver_converged ? 1 : 0) << ','
          << (trial_succeeded(r) ? 0 : 1) << ',' << fmt(r.coeff_err) << ','
          << fmt(r.forward_err) << ',' << join_vec(r.p0) << ',' << join_vec(r.p_hat) << ','
          << join_vec(r.stderr_vals) << ',' << sanitize(r.message) << '\n';
    }
}

void write_timings_csv(const SweepResult& result, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f << "system,estimator,M,t_end,noise_ratio,trial,seconds\n";
    for (const TrialRecord& r : result.records) {
        f << r.system << ',' << r.estimator << ',' << r.M << ',' << fmt(r.t_end) << ','
          << fmt(r.noise_ratio) << ',' << r.trial << ',' << fmt(r.seconds) << '\n';
    }
}

void write_metrics_csv(const SweepResult& result, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f << "system,estimator,M,t_end,noise_ratio,trials,successes,failure_rate,"
         "mean_coeff_err,mean_forward_err,median_bias2,median_variance,median_mse,"
         "median_coverage\n";
    for (const SweepGroup& g : result.groups) {
        const MetricSummary& m = g.metrics;
        f << g.spec.system << ',' << g.estimator << ',' << g.spec.M << ',' << fmt(g.spec.t_end)
          << ',' << fmt(g.spec.noise_ratio) << ',' << m.total << ',' << m.successes << ','
          << fmt(m.failure_rate) << ',' << fmt(m.mean_coeff_err) << ','
          << fmt(m.mean_forward_err) << ',' << fmt(m.median_bias2) << ','
          << fmt(m.median_variance) << ',' << fmt(m.median_mse) << ','
          << fmt(m.median_coverage) << '\n';
    }
}

void write_metrics_per_param_csv(const SweepResult& result, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f << "system,estimator,M,t_end,noise_ratio,param_index,bias2,variance,mse,coverage\n";
    for (const SweepGroup& g : result.groups) {
        const MetricSummary& m = g.metrics;
        for (int j = 0; j < m.bias2.size(); ++j) {
            f << g.spec.system << ',' << g.estimator << ',' << g.spec.M << ','
              << fmt(g.spec.t_end) << ',' << fmt(g.spec.noise_ratio) << ',' << j << ','
              << fmt(m.bias2[j]) << ',' << fmt(m.variance[j]) << ',' << fmt(m.mse[j]) << ','
              << fmt(m.coverage[j]) << '\n';
        }
    }
}

void write_trajectory_csv(const std::string& path, const Vec& times, const Mat& states) {
    if (times.size() != states.rows())
        throw std::invalid_argument("trajectory csv: time and state sizes differ");
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f << 't';
    for (int d = 0; d < states.cols(); ++d) f << ",u" << (d + 1);
    f << '\n';
    for (int m = 0; m < times.size(); ++m) {
        f << fmt(times[m]);
        for (int d = 0; d < states.cols(); ++d) f << ',' << fmt(states(m, d));
        f << '\n';
    }
}

std::pair<Vec, Mat> read_trajectory_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::invalid_argument("cannot open data file: " + path);
    std::string line;
    if (!std::getline(f, line)) throw std::invalid_argument("empty data file: " + path);

    auto split = [](const std::string& s) {
        std::vector<std::string> parts;
        std::string cur;
        for (char c : s) {
            if (c == ',') {
                parts.push_back(cur);
                cur.clear();
            } else if (c != '\r') {
                cur += c;
            }
        }
        parts.push_back(cur);
        return parts;
    };

    const auto header = split(line);
    if (header.size() < 2 || header[0] != "t")
        throw std::invalid_argument("data file must start with header t,u1,...: " + path);
    const int D = static_cast<int>(header.size()) - 1;

    std::vector<double> ts;
    std::vector<double> us;
    int rows = 0;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto parts = split(line);
        if (static_cast<int>(parts.size()) != D + 1)
            throw std::invalid_argument("row " + std::to_string(rows + 1) +
                                        " has the wrong column count in " + path);
        try {
            ts.push_back(std::stod(parts[0]));
            for (int d = 0; d < D; ++d) us.push_back(std::stod(parts[d + 1]));
        } catch (const std::exception&) {
            throw std::invalid_argument("unparseable number at row " +
                                        std::to_string(rows + 1) + " in " + path);
        }
        ++rows;
    }
    if (rows < 2) throw std::invalid_argument("need at least 2 data rows in " + path);

    Vec times(rows);
    Mat states(rows, D);
    for (int m = 0; m < rows; ++m) {
        times[m] = ts[m];
        for (int d = 0; d < D; ++d) states(m, d) = us[static_cast<std::size_t>(m) * D + d];
    }
    return {times, states};
}

}  // namespace wendy
