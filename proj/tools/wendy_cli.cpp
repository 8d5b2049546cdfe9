#include "wendy/bench.hpp"
#include "wendy/integrate.hpp"
#include "wendy/model.hpp"
#include "wendy/solvers.hpp"
#include "wendy/testfn.hpp"
#include "wendy/weakform.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace {

constexpr const char* kVersion = "0.1.0";

using nlohmann::json;

// Minimal flat config reader: `key = value` lines with numbers, booleans,
// quoted or bare strings, and [a, b, c] arrays. Comments start with '#'.
json parse_flat_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::invalid_argument("cannot open config: " + path);

    auto trim = [](std::string s) {
        const char* ws = " \t";
        const auto b = s.find_first_not_of(ws);
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(ws);
        return s.substr(b, e - b + 1);
    };
    auto token_to_json = [&](std::string tok) -> json {
        tok = trim(tok);
        if (tok.size() >= 2 && tok.front() == '"' && tok.back() == '"')
            return tok.substr(1, tok.size() - 2);
        if (tok == "true") return true;
        if (tok == "false") return false;
        try {
            std::size_t used = 0;
            const double v = std::stod(tok, &used);
            if (used == tok.size()) {
                if (tok.find_first_of(".eE") == std::string::npos)
                    return static_cast<std::int64_t>(std::stoll(tok));
                return v;
            }
        } catch (const std::exception&) {
        }
        return tok;  // bare string
    };

    json out = json::object();
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        bool in_quote = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (line[i] == '"') in_quote = !in_quote;
            if (line[i] == '#' && !in_quote) {
                line = line.substr(0, i);
                break;
            }
        }
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[')
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": sections are not supported, use flat keys");
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (key.empty() || val.empty())
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": empty key or value");

        if (val.front() == '[') {
            if (val.back() != ']')
                throw std::invalid_argument("config line " + std::to_string(lineno) +
                                            ": unterminated array");
            json arr = json::array();
            std::string inner = val.substr(1, val.size() - 2);
            std::string cur;
            bool q = false;
            for (char c : inner) {
                if (c == '"') q = !q;
                if (c == ',' && !q) {
                    if (!trim(cur).empty()) arr.push_back(token_to_json(cur));
                    cur.clear();
                } else {
                    cur += c;
                }
            }
            if (!trim(cur).empty()) arr.push_back(token_to_json(cur));
            out[key] = arr;
        } else {
            out[key] = token_to_json(val);
        }
    }
    return out;
}

json load_config(const std::string& path) {
    if (path.size() >= 5 && path.substr(path.size() - 5) == ".json") {
        std::ifstream f(path);
        if (!f) throw std::invalid_argument("cannot open config: " + path);
        json j;
        try {
            f >> j;
        } catch (const std::exception& e) {
            throw std::invalid_argument("config parse error in " + path + ": " + e.what());
        }
        if (!j.is_object()) throw std::invalid_argument("config root must be an object");
        return j;
    }
    return parse_flat_config(path);
}

template <typename T>
std::vector<T> as_list(const json& j, const std::string& key) {
    std::vector<T> out;
    const json& v = j.at(key);
    if (v.is_array()) {
        for (const auto& e : v) out.push_back(e.get<T>());
    } else {
        out.push_back(v.get<T>());
    }
    return out;
}

struct BenchSetup {
    std::vector<wendy::SweepCase> cases;
    wendy::SweepOptions options;
    json echo;
};

BenchSetup build_bench_setup(const json& cfg) {
    static const std::vector<std::string> known = {
        "systems",   "subsamples", "noise_ratios", "horizons",
        "dt",        "trials",     "master_seed",  "estimators",
        "noise_variance_convention", "rank_cap",   "fixed_k",
        "svd_energy"};
    for (auto it = cfg.begin(); it != cfg.end(); ++it) {
        if (std::find(known.begin(), known.end(), it.key()) == known.end())
            throw std::invalid_argument("unknown config key: " + it.key());
    }
    if (!cfg.contains("systems")) throw std::invalid_argument("config needs a systems list");

    BenchSetup setup;
    const auto systems = as_list<std::string>(cfg, "systems");
    for (const std::string& s : systems) wendy::builtin_system(s);  // validate names

    std::vector<double> noise = {0.05};
    if (cfg.contains("noise_ratios")) noise = as_list<double>(cfg, "noise_ratios");

    if (cfg.contains("horizons")) {
        if (!cfg.contains("dt"))
            throw std::invalid_argument("horizons require a dt entry to size the grid");
        const double dt = cfg.at("dt").get<double>();
        if (dt <= 0.0) throw std::invalid_argument("dt must be positive");
        for (const std::string& s : systems)
            for (double T : as_list<double>(cfg, "horizons"))
                for (double nr : noise) {
                    wendy::SweepCase c;
                    c.system = s;
                    c.t_end = T;
                    c.M = static_cast<int>(std::lround(T / dt));
                    c.noise_ratio = nr;
                    setup.cases.push_back(c);
                }
    } else {
        std::vector<int> subs = {256};
        if (cfg.contains("subsamples")) subs = as_list<int>(cfg, "subsamples");
        for (const std::string& s : systems)
            for (int m : subs)
                for (double nr : noise) {
                    wendy::SweepCase c;
                    c.system = s;
                    c.M = m;
                    c.noise_ratio = nr;
                    setup.cases.push_back(c);
                }
    }

    if (cfg.contains("trials")) setup.options.trials = cfg.at("trials").get<int>();
    if (cfg.contains("master_seed"))
        setup.options.master_seed = cfg.at("master_seed").get<std::uint64_t>();
    if (cfg.contains("estimators"))
        setup.options.estimators = as_list<std::string>(cfg, "estimators");
    if (cfg.contains("noise_variance_convention")) {
        const std::string c = cfg.at("noise_variance_convention").get<std::string>();
        if (c == "linear")
            setup.options.convention = wendy::NoiseConvention::linear;
        else if (c == "squared")
            setup.options.convention = wendy::NoiseConvention::squared;
        else
            throw std::invalid_argument("noise_variance_convention must be linear or squared");
    }
    if (cfg.contains("rank_cap")) setup.options.svd.rank_cap = cfg.at("rank_cap").get<int>();
    if (cfg.contains("fixed_k")) setup.options.svd.fixed_k = cfg.at("fixed_k").get<int>();
    if (cfg.contains("svd_energy"))
        setup.options.svd.energy = cfg.at("svd_energy").get<double>();
    setup.echo = cfg;
    return setup;
}

void apply_bounds_option(wendy::OdeModel& model, const std::string& bounds) {
    if (bounds.empty() || bounds == "model") return;
    if (bounds == "none") {
        model.param_lower = wendy::Vec();
        model.param_upper = wendy::Vec();
        return;
    }
    std::vector<double> lo, hi;
    std::stringstream ss(bounds);
    std::string part;
    while (std::getline(ss, part, ',')) {
        const auto colon = part.find(':');
        if (colon == std::string::npos)
            throw std::invalid_argument("bounds must look like lo:hi,lo:hi,...");
        lo.push_back(std::stod(part.substr(0, colon)));
        hi.push_back(std::stod(part.substr(colon + 1)));
    }
    if (static_cast<int>(lo.size()) != model.dim_params)
        throw std::invalid_argument("bounds list length does not match the parameter count");
    model.param_lower = Eigen::Map<wendy::Vec>(lo.data(), lo.size());
    model.param_upper = Eigen::Map<wendy::Vec>(hi.data(), hi.size());
}

int run_simulate(const std::string& system, int m, double t_override,
                 const std::string& out_path) {
    const wendy::BenchmarkSystem sys = wendy::builtin_system(system);
    const double t1 = t_override > 0.0 ? t_override : sys.t_end;
    const wendy::Vec grid = wendy::uniform_grid(sys.t0, t1, m);
    const wendy::Trajectory traj = wendy::simulate(sys.model, sys.p_star, sys.u0, grid);
    if (traj.status != wendy::SimStatus::ok) {
        std::cerr << "simulation failed: " << wendy::to_string(traj.status) << "\n";
        return 3;
    }
    if (out_path.empty()) {
        std::cout << 't';
        for (int d = 0; d < traj.states.cols(); ++d) std::cout << ",u" << (d + 1);
        std::cout << '\n';
        char buf[40];
        for (int i = 0; i < grid.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.17g", grid[i]);
            std::cout << buf;
            for (int d = 0; d < traj.states.cols(); ++d) {
                std::snprintf(buf, sizeof buf, "%.17g", traj.states(i, d));
                std::cout << ',' << buf;
            }
            std::cout << '\n';
        }
    } else {
        wendy::write_trajectory_csv(out_path, grid, traj.states);
        std::cout << "wrote " << out_path << "\n";
    }
    return 0;
}

void dump_basis_csv(const wendy::TestFunctionBasis& basis, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f << "key,value\n";
    f << "num_test_functions," << basis.k << '\n';
    f << "min_radius," << basis.min_radius << '\n';
    f << "radii,";
    for (std::size_t i = 0; i < basis.radii_used.size(); ++i) {
        if (i) f << ';';
        f << basis.radii_used[i];
    }
    f << '\n';
    for (int i = 0; i < basis.singular_values.size(); ++i)
        f << "singular_value_" << i << ',' << basis.singular_values[i] << '\n';
}

int run_estimate(const std::string& target, const std::string& system_opt,
                 const std::string& method, double noise_ratio, std::uint64_t seed, int m,
                 double t_override, const std::string& bounds, const std::string& dump_basis,
                 const std::string& convention) {
    const bool is_csv = std::filesystem::exists(target) ||
                        (target.size() > 4 && target.substr(target.size() - 4) == ".csv");

    std::string system_name = is_csv ? system_opt : target;
    if (system_name.empty())
        throw std::invalid_argument("estimating from a data file needs --system <name>");
    wendy::BenchmarkSystem sys = wendy::builtin_system(system_name);
    apply_bounds_option(sys.model, bounds);

    wendy::Vec grid;
    wendy::Mat data;
    if (is_csv) {
        auto [times, states] = wendy::read_trajectory_csv(target);
        grid = times;
        data = states;
        if (data.cols() != sys.model.dim_state)
            throw std::invalid_argument("data file has " + std::to_string(data.cols()) +
                                        " states but the model needs " +
                                        std::to_string(sys.model.dim_state));
    } else {
        grid = wendy::benchmark_grid(sys, m, t_override);
        const wendy::Trajectory traj = wendy::simulate_truth(sys, grid);
        if (traj.status != wendy::SimStatus::ok) {
            std::cerr << "truth simulation failed: " << wendy::to_string(traj.status) << "\n";
            return 3;
        }
        std::mt19937_64 rng(
            wendy::trial_seed(seed, system_name, m, t_override, noise_ratio, 0));
        // Keep the benchmark draw order (guess first, then noise).
        wendy::Vec p0_unused(sys.model.dim_params);
        for (int j = 0; j < sys.model.dim_params; ++j) {
            std::uniform_real_distribution<double> u(sys.init_range(j, 0),
                                                     sys.init_range(j, 1));
            p0_unused[j] = u(rng);
        }
        const auto conv = convention == "squared" ? wendy::NoiseConvention::squared
                                                  : wendy::NoiseConvention::linear;
        data = wendy::corrupt(traj.states, sys.noise_kind, noise_ratio, rng, conv);
    }

    std::mt19937_64 rng(wendy::trial_seed(seed, system_name, static_cast<int>(grid.size()) - 1,
                                          t_override, noise_ratio, 0));
    wendy::Vec p0(sys.model.dim_params);
    for (int j = 0; j < sys.model.dim_params; ++j) {
        std::uniform_real_distribution<double> u(sys.init_range(j, 0), sys.init_range(j, 1));
        p0[j] = u(rng);
    }

    wendy::TestFunctionBasis basis = wendy::build_basis(data, grid);
    if (!dump_basis.empty()) dump_basis_csv(basis, dump_basis);

    wendy::NoiseModel noise;
    noise.kind = sys.noise_kind;
    wendy::WeakFormProblem problem(sys.model, basis, data, grid, noise);
    wendy::EstimationOptions opts;

    wendy::EstimationResult res;
    if (method == "wendy_mle")
        res = wendy::wendy_mle(problem, p0, opts);
    else if (method == "wls")
        res = wendy::wls(problem, p0, opts);
    else if (method == "wendy_irls")
        res = wendy::wendy_irls(problem, p0, opts);
    else if (method == "oe_ls")
        res = wendy::oe_ls(sys.model, data, grid, p0, opts);
    else if (method == "hybrid")
        res = wendy::hybrid(problem, data, p0, opts);
    else
        throw std::invalid_argument("unknown method: " + method);

    std::cout << "method: " << res.method << "\n";
    std::cout << "converged: " << (res.converged ? "yes" : "no") << " ("
              << wendy::to_string(res.termination) << ", " << res.iterations
              << " iterations)\n";
    std::cout << "objective: " << res.objective << "\n";
    if (res.fallback_used) std::cout << "fallback_used: yes\n";
    for (int j = 0; j < res.p.size(); ++j) {
        std::cout << "p[" << j << "] = " << res.p[j];
        if (res.uncertainty) std::cout << " +- " << res.uncertainty->standard_error[j];
        std::cout << "\n";
    }
    if (res.u0.size()) {
        std::cout << "u0:";
        for (int d = 0; d < res.u0.size(); ++d) std::cout << ' ' << res.u0[d];
        std::cout << "\n";
    }
    if (!res.message.empty()) std::cout << "note: " << res.message << "\n";
    return res.converged ? 0 : 3;
}

int run_benchmark(const std::string& config_path, int threads, const std::string& out_dir,
                  const std::string& convention_override) {
    json cfg = load_config(config_path);
    if (!convention_override.empty()) cfg["noise_variance_convention"] = convention_override;
    BenchSetup setup = build_bench_setup(cfg);
    setup.options.threads = threads;

    std::filesystem::create_directories(out_dir);
    const wendy::SweepResult result = wendy::run_sweep(setup.cases, setup.options);

    const auto path = [&](const char* name) {
        return (std::filesystem::path(out_dir) / name).string();
    };
    wendy::write_results_csv(result, path("results.csv"));
    wendy::write_timings_csv(result, path("timings.csv"));
    wendy::write_metrics_csv(result, path("metrics.csv"));
    wendy::write_metrics_per_param_csv(result, path("metrics_per_param.csv"));

    json manifest;
    manifest["version"] = kVersion;
    manifest["config"] = setup.echo;
    manifest["threads"] = threads;
    manifest["cases"] = setup.cases.size();
    manifest["records"] = result.records.size();
    std::ofstream mf(path("run_manifest.json"));
    mf << manifest.dump(2) << "\n";

    std::cout << "wrote " << result.records.size() << " records to " << out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Weak-form parameter estimation for ODE models"};
    app.require_subcommand(1);

    std::string sim_system, sim_out;
    int sim_m = 256;
    double sim_t = 0.0;
    auto* sim = app.add_subcommand("simulate", "Integrate a built-in system and write CSV");
    sim->add_option("system", sim_system, "System name")->required();
    sim->add_option("--M", sim_m, "Number of grid intervals");
    sim->add_option("--T", sim_t, "Horizon override (default: system setting)");
    sim->add_option("--out", sim_out, "Output CSV path (default: stdout)");

    std::string est_target, est_system, est_method = "wendy_mle", est_bounds = "model";
    std::string est_dump, est_convention = "linear";
    double est_noise = 0.05, est_t = 0.0;
    std::uint64_t est_seed = 1;
    int est_m = 256;
    auto* est = app.add_subcommand("estimate", "Estimate parameters for one data set");
    est->add_option("target", est_target, "System name, or a CSV data file")->required();
    est->add_option("--system", est_system, "Model to use when the target is a CSV file");
    est->add_option("--method", est_method,
                    "wendy_mle | wls | wendy_irls | oe_ls | hybrid");
    est->add_option("--noise-ratio", est_noise, "Noise ratio for synthetic data");
    est->add_option("--seed", est_seed, "Seed for the guess and the noise draw");
    est->add_option("--M", est_m, "Grid intervals for synthetic data");
    est->add_option("--T", est_t, "Horizon override for synthetic data");
    est->add_option("--bounds", est_bounds,
                    "Parameter box: 'model', 'none', or lo:hi,lo:hi,...");
    est->add_option("--dump-basis", est_dump, "Write test-function diagnostics to this CSV");
    est->add_option("--noise-variance-convention", est_convention, "linear | squared");

    std::string bench_config, bench_out = "bench_out", bench_convention;
    int bench_threads = 1;
    auto* ben = app.add_subcommand("benchmark", "Run a multi-trial estimator comparison");
    ben->add_option("--config", bench_config, "Flat TOML-style or JSON config")->required();
    ben->add_option("--threads", bench_threads, "Worker threads");
    ben->add_option("--out-dir", bench_out, "Output directory");
    ben->add_option("--noise-variance-convention", bench_convention,
                    "Override the config's linear/squared setting");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (sim->parsed()) return run_simulate(sim_system, sim_m, sim_t, sim_out);
        if (est->parsed())
            return run_estimate(est_target, est_system, est_method, est_noise, est_seed,
                                est_m, est_t, est_bounds, est_dump, est_convention);
        if (ben->parsed())
            return run_benchmark(bench_config, bench_threads, bench_out, bench_convention);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 2;
}
