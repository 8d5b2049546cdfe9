#include "wendy/integrate.hpp"

#include <boost/numeric/odeint/integrate/integrate_times.hpp>
#include <boost/numeric/odeint/stepper/generation.hpp>
#include <boost/numeric/odeint/stepper/runge_kutta_dopri5.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

namespace odeint = boost::numeric::odeint;

namespace wendy {

Vec uniform_grid(double t0, double t1, int num_intervals) {
    if (num_intervals < 1) throw std::invalid_argument("uniform_grid: need at least one interval");
    if (!(t1 > t0)) throw std::invalid_argument("uniform_grid: t1 must exceed t0");
    Vec t(num_intervals + 1);
    const double dt = (t1 - t0) / num_intervals;
    for (int m = 0; m <= num_intervals; ++m) t[m] = t0 + dt * m;
    t[num_intervals] = t1;  // avoid accumulated rounding at the endpoint
    return t;
}

const char* to_string(SimStatus s) {
    switch (s) {
        case SimStatus::ok: return "ok";
        case SimStatus::blew_up: return "blew_up";
        case SimStatus::nan: return "nan";
    }
    return "?";
}

namespace {

// Thrown out of the RHS functor to abort a diverging integration; odeint has
// no cooperative cancellation, and waiting for step-size underflow can spin
// forever.
struct BlowUpSignal {};
struct NanSignal {};

constexpr std::int64_t kMaxRhsCalls = 50'000'000;

void check_simulate_args(const OdeModel& model, const Vec& p, const Vec& u0, const Vec& times) {
    if (p.size() != model.dim_params)
        throw std::invalid_argument("simulate: parameter vector has wrong size");
    if (u0.size() != model.dim_state)
        throw std::invalid_argument("simulate: initial state has wrong size");
    if (times.size() < 2) throw std::invalid_argument("simulate: need at least two time points");
    for (int m = 1; m < times.size(); ++m)
        if (!(times[m] > times[m - 1]))
            throw std::invalid_argument("simulate: times must be strictly increasing");
    if (!model.rhs) throw std::invalid_argument("simulate: model has no rhs callback");
}

template <typename State>
void guard_state(const State& x, double blowup_norm) {
    for (double v : x) {
        if (!std::isfinite(v)) throw NanSignal{};
        if (std::abs(v) > blowup_norm) throw BlowUpSignal{};
    }
}

// Shared driver for the explicit path: adaptive dopri5 with dense output
// sampled exactly at the grid points.
template <typename System, typename Observer>
SimStatus run_explicit(System system, std::vector<double> x0, const Vec& times,
                       const IntegrateOptions& opts, Observer record) {
    using state_type = std::vector<double>;
    auto stepper =
        odeint::make_dense_output(opts.abs_tol, opts.rel_tol, odeint::runge_kutta_dopri5<state_type>());
    const double dt0 = (times[times.size() - 1] - times[0]) * 1e-4;
    try {
        odeint::integrate_times(stepper, system, x0, times.data(), times.data() + times.size(),
                                dt0, record);
    } catch (const BlowUpSignal&) {
        return SimStatus::blew_up;
    } catch (const NanSignal&) {
        return SimStatus::nan;
    } catch (const std::exception&) {
        return SimStatus::blew_up;  // step-size underflow and friends
    }
    return SimStatus::ok;
}

// Six-stage linearly implicit method of order 4 with an embedded order-3
// error estimate (the classic L-stable constants of Hairer and Wanner).
// One LU factorization of (I/(gamma*dt) - J) serves all stages.
struct RodasStep {
    static constexpr double gamma = 0.25;
    static constexpr double d1 = 0.25, d2 = -0.1043, d3 = 0.1035, d4 = 0.3620000000000023e-01;
    static constexpr double c2 = 0.386, c3 = 0.21, c4 = 0.63;
    static constexpr double a21 = 0.1544000000000000e+01;
    static constexpr double a31 = 0.9466785280815826e+00, a32 = 0.2557011698983284e+00;
    static constexpr double a41 = 0.3314825187068521e+01, a42 = 0.2896124015972201e+01,
                            a43 = 0.9986419139977817e+00;
    static constexpr double a51 = 0.1221224509226641e+01, a52 = 0.6019134481288629e+01,
                            a53 = 0.1253708332932087e+02, a54 = -0.6878860361058950e+00;
    static constexpr double c21 = -0.5668800000000000e+01;
    static constexpr double c31 = -0.2430093356833875e+01, c32 = -0.2063599157091915e+00;
    static constexpr double c41 = -0.1073529058151375e+00, c42 = -0.9594562251023355e+01,
                            c43 = -0.2047028614809616e+02;
    static constexpr double c51 = 0.7496443313967647e+01, c52 = -0.1024680431464352e+02,
                            c53 = -0.3399990352819905e+02, c54 = 0.1170890893206160e+02;
    static constexpr double c61 = 0.8083246795921522e+01, c62 = -0.7981132988064893e+01,
                            c63 = -0.3152159432874371e+02, c64 = 0.1631930543123136e+02,
                            c65 = -0.6058818238834054e+01;

    Mat e;
    Vec f, xt, g1, g2, g3, g4, g5;

    explicit RodasStep(int dim)
        : e(dim, dim), f(dim), xt(dim), g1(dim), g2(dim), g3(dim), g4(dim), g5(dim) {}

    // Advances one trial step; xerr holds the embedded error estimate.
    template <typename Rhs>
    void advance(const Vec& x, double t, double dt, Rhs&& rhs, const Mat& jac, const Vec& dfdt,
                 Vec& xout, Vec& xerr) {
        e = -jac;
        e.diagonal().array() += 1.0 / (gamma * dt);
        Eigen::PartialPivLU<Mat> lu(e);

        rhs(x, t, f);
        g1 = lu.solve(f + dt * d1 * dfdt);
        xt = x + a21 * g1;
        rhs(xt, t + c2 * dt, f);
        g2 = lu.solve(f + dt * d2 * dfdt + (c21 / dt) * g1);
        xt = x + a31 * g1 + a32 * g2;
        rhs(xt, t + c3 * dt, f);
        g3 = lu.solve(f + dt * d3 * dfdt + (c31 * g1 + c32 * g2) / dt);
        xt = x + a41 * g1 + a42 * g2 + a43 * g3;
        rhs(xt, t + c4 * dt, f);
        g4 = lu.solve(f + dt * d4 * dfdt + (c41 * g1 + c42 * g2 + c43 * g3) / dt);
        xt = x + a51 * g1 + a52 * g2 + a53 * g3 + a54 * g4;
        rhs(xt, t + dt, f);
        g5 = lu.solve(f + (c51 * g1 + c52 * g2 + c53 * g3 + c54 * g4) / dt);
        xt += g5;
        rhs(xt, t + dt, f);
        xerr = lu.solve(f + (c61 * g1 + c62 * g2 + c63 * g3 + c64 * g4 + c65 * g5) / dt);
        xout = xt + xerr;
    }
};

// Adaptive driver for the stiff path, landing exactly on every grid point.
template <typename Rhs, typename Jac, typename Observer>
SimStatus run_stiff(Rhs rhs, Jac jac_and_dfdt, Vec x, const Vec& times,
                    const IntegrateOptions& opts, Observer record) {
    const int dim = int(x.size());
    const double span = times[times.size() - 1] - times[0];
    const double dt_min = span * 1e-14;

    RodasStep step(dim);
    Mat jac(dim, dim);
    Vec dfdt(dim), xout(dim), xerr(dim);

    try {
        record(x, times[0]);
        double t = times[0];
        double dt = span * 1e-4;
        bool just_rejected = false;
        for (int i = 1; i < times.size(); ++i) {
            const double t_target = times[i];
            while (t < t_target) {
                const double h = std::min(dt, t_target - t);
                jac_and_dfdt(x, t, jac, dfdt);
                step.advance(x, t, h, rhs, jac, dfdt, xout, xerr);

                double err = 0.0;
                for (int d = 0; d < dim; ++d) {
                    const double sk =
                        opts.abs_tol + opts.rel_tol * std::max(std::abs(x[d]), std::abs(xout[d]));
                    err += (xerr[d] / sk) * (xerr[d] / sk);
                }
                err = std::sqrt(err / dim);

                if (std::isfinite(err) && err <= 1.0) {
                    t = (h == t_target - t) ? t_target : t + h;
                    x = xout;
                    guard_state(x, opts.blowup_norm);
                    double fac = 0.9 * std::pow(std::max(err, 1e-16), -0.25);
                    if (just_rejected) fac = std::min(fac, 1.0);
                    dt = h * std::clamp(fac, 0.2, 5.0);
                    just_rejected = false;
                } else {
                    const double fac =
                        std::isfinite(err) ? std::clamp(0.9 * std::pow(err, -0.25), 0.1, 0.5) : 0.1;
                    dt = h * fac;
                    just_rejected = true;
                    if (dt < dt_min) throw BlowUpSignal{};
                }
            }
            record(x, t_target);
        }
    } catch (const BlowUpSignal&) {
        return SimStatus::blew_up;
    } catch (const NanSignal&) {
        return SimStatus::nan;
    } catch (const std::exception&) {
        return SimStatus::blew_up;
    }
    return SimStatus::ok;
}

}  // namespace

Trajectory simulate(const OdeModel& model, const Vec& p, const Vec& u0, const Vec& times,
                    const IntegrateOptions& opts) {
    check_simulate_args(model, p, u0, times);
    const int D = model.dim_state;
    const int T = static_cast<int>(times.size());

    Trajectory out;
    out.times = times;
    out.states = Mat::Constant(T, D, std::numeric_limits<double>::quiet_NaN());

    std::int64_t rhs_calls = 0;
    Vec f(D), u(D);
    int next_row = 0;

    if (!model.stiff) {
        auto system = [&](const std::vector<double>& x, std::vector<double>& dxdt, double t) {
            if (++rhs_calls > kMaxRhsCalls) throw BlowUpSignal{};
            guard_state(x, opts.blowup_norm);
            for (int d = 0; d < D; ++d) u[d] = x[d];
            model.rhs(p, u, t, f);
            for (int d = 0; d < D; ++d) {
                if (!std::isfinite(f[d])) throw NanSignal{};
                dxdt[d] = f[d];
            }
        };
        auto record = [&](const std::vector<double>& x, double) {
            guard_state(x, opts.blowup_norm);
            for (int d = 0; d < D; ++d) out.states(next_row, d) = x[d];
            ++next_row;
        };
        std::vector<double> x0(u0.data(), u0.data() + D);
        out.status = run_explicit(system, std::move(x0), times, opts, record);
        return out;
    }

    // Stiff path: analytic state Jacobian; df/dt comes from a central
    // difference since the model carries no explicit time derivative.
    if (!model.jac_u) throw std::invalid_argument("simulate: stiff model needs jac_u");

    auto rhs = [&](const Vec& x, double t, Vec& dxdt) {
        if (++rhs_calls > kMaxRhsCalls) throw BlowUpSignal{};
        guard_state(x, opts.blowup_norm);
        model.rhs(p, x, t, dxdt);
        for (int d = 0; d < D; ++d)
            if (!std::isfinite(dxdt[d])) throw NanSignal{};
    };
    auto jac = [&](const Vec& x, double t, Mat& jout, Vec& dfdt) {
        model.jac_u(p, x, t, jout);
        const double ht = std::sqrt(std::numeric_limits<double>::epsilon()) * (1.0 + std::abs(t));
        Vec fplus(D), fminus(D);
        model.rhs(p, x, t + ht, fplus);
        model.rhs(p, x, t - ht, fminus);
        dfdt = (fplus - fminus) / (2.0 * ht);
    };
    auto record = [&](const Vec& x, double) {
        for (int d = 0; d < D; ++d) out.states(next_row, d) = x[d];
        ++next_row;
    };

    out.status = run_stiff(rhs, jac, u0, times, opts, record);
    return out;
}

SensitivityTrajectory simulate_with_sensitivities(const OdeModel& model, const Vec& p,
                                                  const Vec& u0, const Vec& times,
                                                  const IntegrateOptions& opts) {
    check_simulate_args(model, p, u0, times);
    if (!model.jac_u || !model.jac_p)
        throw std::invalid_argument("simulate_with_sensitivities: model needs jac_u and jac_p");
    const int D = model.dim_state;
    const int J = model.dim_params;
    const int T = static_cast<int>(times.size());
    const int N = D * (1 + J + D);

    SensitivityTrajectory out;
    out.traj.times = times;
    out.traj.states = Mat::Constant(T, D, std::numeric_limits<double>::quiet_NaN());
    out.dstate_dp.assign(T, Mat::Constant(D, J, std::numeric_limits<double>::quiet_NaN()));
    out.dstate_du0.assign(T, Mat::Constant(D, D, std::numeric_limits<double>::quiet_NaN()));

    std::int64_t rhs_calls = 0;
    Vec f(D), u(D);
    Mat Ju(D, D), Jp(D, J);
    int next_row = 0;

    // Layout: [u | dU/dp columns | dU/du0 columns], all column-major blocks.
    auto system = [&](const std::vector<double>& x, std::vector<double>& dxdt, double t) {
        if (++rhs_calls > kMaxRhsCalls) throw BlowUpSignal{};
        for (int d = 0; d < D; ++d) {
            if (!std::isfinite(x[d])) throw NanSignal{};
            if (std::abs(x[d]) > opts.blowup_norm) throw BlowUpSignal{};
            u[d] = x[d];
        }
        model.rhs(p, u, t, f);
        model.jac_u(p, u, t, Ju);
        model.jac_p(p, u, t, Jp);
        for (int d = 0; d < D; ++d) {
            if (!std::isfinite(f[d])) throw NanSignal{};
            dxdt[d] = f[d];
        }
        Eigen::Map<const Mat> Sp(x.data() + D, D, J);
        Eigen::Map<Mat> dSp(dxdt.data() + D, D, J);
        dSp = Ju * Sp + Jp;
        Eigen::Map<const Mat> S0(x.data() + D + D * J, D, D);
        Eigen::Map<Mat> dS0(dxdt.data() + D + D * J, D, D);
        dS0 = Ju * S0;
        for (int i = D; i < N; ++i)
            if (!std::isfinite(dxdt[i])) throw NanSignal{};
    };
    auto record = [&](const std::vector<double>& x, double) {
        guard_state(x, std::numeric_limits<double>::infinity());
        for (int d = 0; d < D; ++d) out.traj.states(next_row, d) = x[d];
        out.dstate_dp[next_row] = Eigen::Map<const Mat>(x.data() + D, D, J);
        out.dstate_du0[next_row] = Eigen::Map<const Mat>(x.data() + D + D * J, D, D);
        ++next_row;
    };

    std::vector<double> x0(N, 0.0);
    for (int d = 0; d < D; ++d) x0[d] = u0[d];
    for (int d = 0; d < D; ++d) x0[D + D * J + d * D + d] = 1.0;  // dU/du0 starts at identity

    out.traj.status = run_explicit(system, std::move(x0), times, opts, record);
    return out;
}

}  // namespace wendy
