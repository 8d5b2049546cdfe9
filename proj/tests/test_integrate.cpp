#include "wendy/integrate.hpp"
#include "wendy/model.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using wendy::Mat;
using wendy::Vec;

namespace {

wendy::OdeModel decay_model() {
    wendy::OdeModel m;
    m.dim_state = 1;
    m.dim_params = 1;
    m.name = "decay";
    m.rhs = [](const Vec& p, const Vec& u, double, Vec& f) { f[0] = -p[0] * u[0]; };
    m.jac_u = [](const Vec& p, const Vec&, double, Mat& J) { J(0, 0) = -p[0]; };
    m.jac_p = [](const Vec&, const Vec& u, double, Mat& J) { J(0, 0) = -u[0]; };
    return m;
}

wendy::OdeModel oscillator_model() {
    wendy::OdeModel m;
    m.dim_state = 2;
    m.dim_params = 1;
    m.name = "oscillator";
    m.rhs = [](const Vec& p, const Vec& u, double, Vec& f) {
        f[0] = u[1];
        f[1] = -p[0] * p[0] * u[0];
    };
    m.jac_u = [](const Vec& p, const Vec&, double, Mat& J) {
        J.setZero();
        J(0, 1) = 1.0;
        J(1, 0) = -p[0] * p[0];
    };
    m.jac_p = [](const Vec& p, const Vec& u, double, Mat& J) {
        J(0, 0) = 0.0;
        J(1, 0) = -2.0 * p[0] * u[0];
    };
    return m;
}

}  // namespace

TEST_CASE("exponential decay matches the closed form") {
    const auto m = decay_model();
    Vec p(1), u0(1);
    p << 1.3;
    u0 << 2.0;
    const Vec grid = wendy::uniform_grid(0.0, 5.0, 100);
    const auto traj = wendy::simulate(m, p, u0, grid);
    REQUIRE(traj.status == wendy::SimStatus::ok);
    REQUIRE(traj.states.rows() == grid.size());
    CHECK((traj.times.array() == grid.array()).all());
    for (int i = 0; i < grid.size(); ++i)
        CHECK(traj.states(i, 0) == Catch::Approx(2.0 * std::exp(-1.3 * grid[i])).epsilon(1e-6));
}

TEST_CASE("harmonic oscillator stays on the circle") {
    const auto m = oscillator_model();
    Vec p(1), u0(2);
    p << 2.0;
    u0 << 1.0, 0.0;
    const Vec grid = wendy::uniform_grid(0.0, 10.0, 400);
    const auto traj = wendy::simulate(m, p, u0, grid);
    REQUIRE(traj.status == wendy::SimStatus::ok);
    for (int i = 0; i < grid.size(); ++i) {
        CHECK(traj.states(i, 0) == Catch::Approx(std::cos(2.0 * grid[i])).margin(1e-6));
        CHECK(traj.states(i, 1) == Catch::Approx(-2.0 * std::sin(2.0 * grid[i])).margin(1e-6));
    }
}

TEST_CASE("finite-time blow-up is reported, not thrown") {
    wendy::OdeModel m;
    m.dim_state = 1;
    m.dim_params = 0;
    m.rhs = [](const Vec&, const Vec& u, double, Vec& f) { f[0] = u[0] * u[0]; };
    m.jac_u = [](const Vec&, const Vec& u, double, Mat& J) { J(0, 0) = 2.0 * u[0]; };
    m.jac_p = [](const Vec&, const Vec&, double, Mat&) {};
    Vec p(0), u0(1);
    u0 << 1.0;
    const Vec grid = wendy::uniform_grid(0.0, 2.0, 100);
    const auto traj = wendy::simulate(m, p, u0, grid);
    CHECK(traj.status != wendy::SimStatus::ok);
    CHECK(traj.states.rows() == grid.size());
}

TEST_CASE("stiff and non-stiff steppers agree on the goodwin system") {
    auto sys = wendy::builtin_system("goodwin");
    REQUIRE(sys.model.stiff);
    const Vec grid = wendy::uniform_grid(sys.t0, sys.t_end, 256);
    const auto stiff = wendy::simulate(sys.model, sys.p_star, sys.u0, grid);
    auto loose = sys.model;
    loose.stiff = false;
    const auto explicit_run = wendy::simulate(loose, sys.p_star, sys.u0, grid);
    REQUIRE(stiff.status == wendy::SimStatus::ok);
    REQUIRE(explicit_run.status == wendy::SimStatus::ok);
    const double scale = explicit_run.states.cwiseAbs().maxCoeff();
    CHECK((stiff.states - explicit_run.states).cwiseAbs().maxCoeff() / scale < 1e-4);
}

TEST_CASE("sensitivities match closed forms for exponential decay") {
    const auto m = decay_model();
    Vec p(1), u0(1);
    p << 0.8;
    u0 << 1.5;
    const Vec grid = wendy::uniform_grid(0.0, 4.0, 80);
    const auto sens = wendy::simulate_with_sensitivities(m, p, u0, grid);
    REQUIRE(sens.traj.status == wendy::SimStatus::ok);
    REQUIRE(sens.dstate_dp.size() == static_cast<std::size_t>(grid.size()));
    REQUIRE(sens.dstate_du0.size() == static_cast<std::size_t>(grid.size()));
    for (int i = 0; i < grid.size(); ++i) {
        const double t = grid[i];
        const double e = std::exp(-0.8 * t);
        CHECK(sens.dstate_dp[i](0, 0) == Catch::Approx(-1.5 * t * e).margin(1e-6));
        CHECK(sens.dstate_du0[i](0, 0) == Catch::Approx(e).margin(1e-7));
    }
}

TEST_CASE("sensitivities match finite differences on lorenz") {
    const auto sys = wendy::builtin_system("lorenz");
    const Vec grid = wendy::uniform_grid(0.0, 2.0, 100);
    const auto sens = wendy::simulate_with_sensitivities(sys.model, sys.p_star, sys.u0, grid);
    REQUIRE(sens.traj.status == wendy::SimStatus::ok);

    const int last = static_cast<int>(grid.size()) - 1;
    for (int j = 0; j < 3; ++j) {
        const double h = 1e-6;
        Vec pp = sys.p_star, pm = sys.p_star;
        pp[j] += h;
        pm[j] -= h;
        const auto tp = wendy::simulate(sys.model, pp, sys.u0, grid);
        const auto tm = wendy::simulate(sys.model, pm, sys.u0, grid);
        for (int d = 0; d < 3; ++d) {
            const double fd = (tp.states(last, d) - tm.states(last, d)) / (2.0 * h);
            CHECK(sens.dstate_dp[last](d, j) == Catch::Approx(fd).margin(2e-3).epsilon(1e-4));
        }
    }
}
