#include "wendy/model.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <random>
#include <sstream>
#include <stdexcept>

namespace wendy {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Vec vec_of(std::initializer_list<double> xs) {
    Vec v(static_cast<int>(xs.size()));
    int i = 0;
    for (double x : xs) v[i++] = x;
    return v;
}

// psi(a) = a / (e^a - 1) and its first two derivatives. The direct formulas
// cancel catastrophically near a = 0 (the init box allows a = p1*p2 ~ 1e-8),
// so small |a| switches to the Bernoulli series, exact to ~1e-11 at the
// 0.25 crossover.
struct Psi {
    double v, d1, d2;
};

Psi eval_psi(double a) {
    Psi out;
    if (std::abs(a) <= 0.25) {
        const double a2 = a * a;
        const double a4 = a2 * a2;
        const double a6 = a4 * a2;
        out.v = 1.0 - a / 2.0 + a2 / 12.0 - a4 / 720.0 + a6 / 30240.0 - a4 * a4 / 1209600.0;
        out.d1 = -0.5 + a / 6.0 - a * a2 / 180.0 + a * a4 / 5040.0 - a * a6 / 151200.0;
        out.d2 = 1.0 / 6.0 - a2 / 60.0 + a4 / 1008.0 - a6 / 21600.0;
        return out;
    }
    const double e = std::expm1(a);
    const double w = e + 1.0;  // e^a
    const double r = 1.0 / e;
    const double r2 = r * r;
    out.v = a * r;
    out.d1 = r - a * w * r2;
    out.d2 = -2.0 * w * r2 - a * w * r2 + 2.0 * a * w * w * r2 * r;
    return out;
}

OdeModel lorenz_model() {
    OdeModel m;
    m.dim_state = 3;
    m.dim_params = 3;
    m.name = "lorenz";
    m.linear_in_params = true;

    m.rhs = [](const Vec& p, const Vec& u, double, Vec& f) {
        f[0] = p[0] * (u[1] - u[0]);
        f[1] = u[0] * (p[1] - u[2]) - u[1];
        f[2] = u[0] * u[1] - p[2] * u[2];
    };
    m.jac_u = [](const Vec& p, const Vec& u, double, Mat& J) {
        J.setZero();
        J(0, 0) = -p[0];
        J(0, 1) = p[0];
        J(1, 0) = p[1] - u[2];
        J(1, 1) = -1.0;
        J(1, 2) = -u[0];
        J(2, 0) = u[1];
        J(2, 1) = u[0];
        J(2, 2) = -p[2];
    };
    m.jac_p = [](const Vec&, const Vec& u, double, Mat& J) {
        J.setZero();
        J(0, 0) = u[1] - u[0];
        J(1, 1) = u[0];
        J(2, 2) = -u[2];
    };
    m.jac_up = [](const Vec&, const Vec&, double, Tensor3& T) {
        T.set_zero();
        T(0, 0, 0) = -1.0;
        T(0, 1, 0) = 1.0;
        T(1, 0, 1) = 1.0;
        T(2, 2, 2) = -1.0;
    };
    m.hess_pp = [](const Vec&, const Vec&, double, Tensor3& T) { T.set_zero(); };
    m.hess_upp = [](const Vec&, const Vec&, double, Tensor4& T) { T.set_zero(); };

    m.param_lower = vec_of({-kInf, -kInf, -kInf});
    m.param_upper = vec_of({kInf, kInf, kInf});
    m.probe_param_lower = vec_of({0.0, 0.0, 0.0});
    m.probe_param_upper = vec_of({20.0, 35.0, 5.0});
    m.probe_state_lower = vec_of({-20.0, -25.0, 0.0});
    m.probe_state_upper = vec_of({20.0, 25.0, 50.0});
    m.probe_time_lower = 0.0;
    m.probe_time_upper = 30.0;
    return m;
}

OdeModel hindmarsh_rose_model() {
    OdeModel m;
    m.dim_state = 3;
    m.dim_params = 10;
    m.name = "hindmarsh_rose";
    m.linear_in_params = true;

    m.rhs = [](const Vec& p, const Vec& u, double, Vec& f) {
        const double u0sq = u[0] * u[0];
        f[0] = p[0] * u[1] - p[1] * u0sq * u[0] + p[2] * u0sq - p[3] * u[2];
        f[1] = p[4] - p[5] * u0sq - p[6] * u[1];
        f[2] = p[7] * u[0] + p[8] - p[9] * u[2];
    };
    m.jac_u = [](const Vec& p, const Vec& u, double, Mat& J) {
        J.setZero();
        J(0, 0) = -3.0 * p[1] * u[0] * u[0] + 2.0 * p[2] * u[0];
        J(0, 1) = p[0];
        J(0, 2) = -p[3];
        J(1, 0) = -2.0 * p[5] * u[0];
        J(1, 1) = -p[6];
        J(2, 0) = p[7];
        J(2, 2) = -p[9];
    };
    m.jac_p = [](const Vec&, const Vec& u, double, Mat& J) {
        J.setZero();
        const double u0sq = u[0] * u[0];
        J(0, 0) = u[1];
        J(0, 1) = -u0sq * u[0];
        J(0, 2) = u0sq;
        J(0, 3) = -u[2];
        J(1, 4) = 1.0;
        J(1, 5) = -u0sq;
        J(1, 6) = -u[1];
        J(2, 7) = u[0];
        J(2, 8) = 1.0;
        J(2, 9) = -u[2];
    };
    m.jac_up = [](const Vec&, const Vec& u, double, Tensor3& T) {
        T.set_zero();
        T(0, 0, 1) = -3.0 * u[0] * u[0];
        T(0, 0, 2) = 2.0 * u[0];
        T(0, 1, 0) = 1.0;
        T(0, 2, 3) = -1.0;
        T(1, 0, 5) = -2.0 * u[0];
        T(1, 1, 6) = -1.0;
        T(2, 0, 7) = 1.0;
        T(2, 2, 9) = -1.0;
    };
    m.hess_pp = [](const Vec&, const Vec&, double, Tensor3& T) { T.set_zero(); };
    m.hess_upp = [](const Vec&, const Vec&, double, Tensor4& T) { T.set_zero(); };

    m.param_lower = Vec::Constant(10, -kInf);
    m.param_upper = Vec::Constant(10, kInf);
    m.probe_param_lower = vec_of({0, 0, 0, 0, 0, 0, 0, 0, 0, 0});
    m.probe_param_upper = vec_of({20, 20, 60, 20, 20, 100, 20, 1, 1, 1});
    m.probe_state_lower = vec_of({-2.0, -12.0, -1.0});
    m.probe_state_upper = vec_of({2.0, 2.0, 3.0});
    m.probe_time_lower = 0.0;
    m.probe_time_upper = 10.0;
    return m;
}

// Goodwin negative-feedback loop. The Hill term p0 / (2.15 + p2 * u2^p3)
// drives everything nonlinear in (p2, p3); helper quantities:
//   h = u2^p3, L = log u2, R = 1/(2.15 + p2 h), h_u = dh/du2 = p3 h / u2.
OdeModel goodwin_model() {
    OdeModel m;
    m.dim_state = 3;
    m.dim_params = 8;
    m.name = "goodwin";
    m.linear_in_params = false;
    m.stiff = true;

    m.rhs = [](const Vec& p, const Vec& u, double, Vec& f) {
        const double h = std::pow(u[2], p[3]);
        const double R = 1.0 / (2.15 + p[2] * h);
        f[0] = p[0] * R - p[1] * u[0];
        f[1] = p[4] * u[0] - p[5] * u[1];
        f[2] = p[6] * u[1] - p[7] * u[2];
    };
    m.jac_u = [](const Vec& p, const Vec& u, double, Mat& J) {
        J.setZero();
        const double h = std::pow(u[2], p[3]);
        const double R = 1.0 / (2.15 + p[2] * h);
        const double h_u = p[3] * h / u[2];
        J(0, 0) = -p[1];
        J(0, 2) = -p[0] * p[2] * h_u * R * R;
        J(1, 0) = p[4];
        J(1, 1) = -p[5];
        J(2, 1) = p[6];
        J(2, 2) = -p[7];
    };
    m.jac_p = [](const Vec& p, const Vec& u, double, Mat& J) {
        J.setZero();
        const double h = std::pow(u[2], p[3]);
        const double L = std::log(u[2]);
        const double R = 1.0 / (2.15 + p[2] * h);
        const double R2 = R * R;
        J(0, 0) = R;
        J(0, 1) = -u[0];
        J(0, 2) = -p[0] * h * R2;
        J(0, 3) = -p[0] * p[2] * h * L * R2;
        J(1, 4) = u[0];
        J(1, 5) = -u[1];
        J(2, 6) = u[1];
        J(2, 7) = -u[2];
    };
    m.jac_up = [](const Vec& p, const Vec& u, double, Tensor3& T) {
        T.set_zero();
        const double h = std::pow(u[2], p[3]);
        const double L = std::log(u[2]);
        const double R = 1.0 / (2.15 + p[2] * h);
        const double R2 = R * R;
        const double R3 = R2 * R;
        const double h_u = p[3] * h / u[2];
        const double h_u3 = (h / u[2]) * (1.0 + p[3] * L);  // d(h_u)/dp3
        T(0, 0, 1) = -1.0;
        T(0, 2, 0) = -p[2] * h_u * R2;
        T(0, 2, 2) = p[0] * (-h_u * R2 + 2.0 * p[2] * h * h_u * R3);
        T(0, 2, 3) = p[0] * (-p[2] * h_u3 * R2 + 2.0 * p[2] * p[2] * h_u * h * L * R3);
        T(1, 0, 4) = 1.0;
        T(1, 1, 5) = -1.0;
        T(2, 1, 6) = 1.0;
        T(2, 2, 7) = -1.0;
    };
    m.hess_pp = [](const Vec& p, const Vec& u, double, Tensor3& T) {
        T.set_zero();
        const double h = std::pow(u[2], p[3]);
        const double L = std::log(u[2]);
        const double R = 1.0 / (2.15 + p[2] * h);
        const double R2 = R * R;
        const double R3 = R2 * R;
        const double R_p2 = -h * R2;
        const double R_p3 = -p[2] * h * L * R2;
        const double R_p2p2 = 2.0 * h * h * R3;
        const double R_p2p3 = -h * L * R2 + 2.0 * p[2] * h * h * L * R3;
        const double R_p3p3 = -p[2] * h * L * L * R2 + 2.0 * p[2] * p[2] * h * h * L * L * R3;
        T(0, 0, 2) = R_p2;
        T(0, 2, 0) = R_p2;
        T(0, 0, 3) = R_p3;
        T(0, 3, 0) = R_p3;
        T(0, 2, 2) = p[0] * R_p2p2;
        T(0, 2, 3) = p[0] * R_p2p3;
        T(0, 3, 2) = p[0] * R_p2p3;
        T(0, 3, 3) = p[0] * R_p3p3;
    };
    m.hess_upp = [](const Vec& p, const Vec& u, double, Tensor4& T) {
        T.set_zero();
        const double h = std::pow(u[2], p[3]);
        const double L = std::log(u[2]);
        const double R = 1.0 / (2.15 + p[2] * h);
        const double R2 = R * R;
        const double R3 = R2 * R;
        const double R4 = R3 * R;
        const double h_u = p[3] * h / u[2];
        const double h_u3 = (h / u[2]) * (1.0 + p[3] * L);
        const double h_u33 = (h * L / u[2]) * (2.0 + p[3] * L);  // d2(h_u)/dp3^2
        // d(jac_u(0,2))/dp with jac_u(0,2) = -p0 p2 h_u R^2
        const double Ru_p2 = -h_u * R2 + 2.0 * p[2] * h * h_u * R3;
        const double Ru_p3 = -p[2] * h_u3 * R2 + 2.0 * p[2] * p[2] * h_u * h * L * R3;
        const double Ru_p2p2 = 4.0 * h * h_u * R3 - 6.0 * p[2] * h * h * h_u * R4;
        const double Ru_p2p3 = -h_u3 * R2 + 4.0 * p[2] * h * h_u * L * R3 +
                               2.0 * p[2] * h * h_u3 * R3 -
                               6.0 * p[2] * p[2] * h * h * h_u * L * R4;
        const double Ru_p3p3 = -p[2] * h_u33 * R2 + 4.0 * p[2] * p[2] * h * L * h_u3 * R3 +
                               2.0 * p[2] * p[2] * h * h_u * L * L * R3 -
                               6.0 * p[2] * p[2] * p[2] * h * h * h_u * L * L * R4;
        T(0, 2, 0, 2) = Ru_p2;
        T(0, 2, 2, 0) = Ru_p2;
        T(0, 2, 0, 3) = Ru_p3;
        T(0, 2, 3, 0) = Ru_p3;
        T(0, 2, 2, 2) = p[0] * Ru_p2p2;
        T(0, 2, 2, 3) = p[0] * Ru_p2p3;
        T(0, 2, 3, 2) = p[0] * Ru_p2p3;
        T(0, 2, 3, 3) = p[0] * Ru_p3p3;
    };

    m.param_lower = Vec::Constant(8, -kInf);
    m.param_upper = Vec::Constant(8, kInf);
    m.probe_param_lower = vec_of({1.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 0.0});
    m.probe_param_upper = vec_of({5.0, 0.2, 2.0, 15.0, 0.2, 0.2, 0.2, 0.2});
    m.probe_state_lower = vec_of({0.05, 0.05, 0.05});
    m.probe_state_upper = vec_of({2.5, 2.5, 2.5});
    m.probe_time_lower = 0.0;
    m.probe_time_upper = 80.0;
    return m;
}

// SIR with time-delayed immunity. kappa(p0, p1) = p0 e^{-p0 p1}/(1 - e^{-p0 p1})
// is evaluated as psi(p0 p1)/p1 (see eval_psi); beta(t) = 1 - e^{-p4 t^2}.
OdeModel sir_tdi_model() {
    OdeModel m;
    m.dim_state = 3;
    m.dim_params = 5;
    m.name = "sir_tdi";
    m.linear_in_params = false;

    auto kappa_val = [](const Vec& p) { return eval_psi(p[0] * p[1]).v / p[1]; };

    m.rhs = [kappa_val](const Vec& p, const Vec& u, double t, Vec& f) {
        const double kappa = kappa_val(p);
        const double beta = 1.0 - std::exp(-p[4] * t * t);
        f[0] = -p[0] * u[0] + p[2] * u[1] + kappa * u[2];
        f[1] = p[0] * u[0] - p[2] * u[1] - p[3] * beta * u[1];
        f[2] = p[3] * beta * u[1] - kappa * u[2];
    };
    m.jac_u = [kappa_val](const Vec& p, const Vec&, double t, Mat& J) {
        J.setZero();
        const double kappa = kappa_val(p);
        const double beta = 1.0 - std::exp(-p[4] * t * t);
        J(0, 0) = -p[0];
        J(0, 1) = p[2];
        J(0, 2) = kappa;
        J(1, 0) = p[0];
        J(1, 1) = -p[2] - p[3] * beta;
        J(2, 1) = p[3] * beta;
        J(2, 2) = -kappa;
    };
    m.jac_p = [](const Vec& p, const Vec& u, double t, Mat& J) {
        J.setZero();
        const Psi ps = eval_psi(p[0] * p[1]);
        const double k_p0 = ps.d1;
        const double k_p1 = ps.d1 * p[0] / p[1] - ps.v / (p[1] * p[1]);
        const double ex = std::exp(-p[4] * t * t);
        const double beta = 1.0 - ex;
        const double beta_p4 = t * t * ex;
        J(0, 0) = -u[0] + k_p0 * u[2];
        J(0, 1) = k_p1 * u[2];
        J(0, 2) = u[1];
        J(1, 0) = u[0];
        J(1, 2) = -u[1];
        J(1, 3) = -beta * u[1];
        J(1, 4) = -p[3] * beta_p4 * u[1];
        J(2, 0) = -k_p0 * u[2];
        J(2, 1) = -k_p1 * u[2];
        J(2, 3) = beta * u[1];
        J(2, 4) = p[3] * beta_p4 * u[1];
    };
    m.jac_up = [](const Vec& p, const Vec&, double t, Tensor3& T) {
        T.set_zero();
        const Psi ps = eval_psi(p[0] * p[1]);
        const double k_p0 = ps.d1;
        const double k_p1 = ps.d1 * p[0] / p[1] - ps.v / (p[1] * p[1]);
        const double ex = std::exp(-p[4] * t * t);
        const double beta = 1.0 - ex;
        const double beta_p4 = t * t * ex;
        T(0, 0, 0) = -1.0;
        T(0, 1, 2) = 1.0;
        T(0, 2, 0) = k_p0;
        T(0, 2, 1) = k_p1;
        T(1, 0, 0) = 1.0;
        T(1, 1, 2) = -1.0;
        T(1, 1, 3) = -beta;
        T(1, 1, 4) = -p[3] * beta_p4;
        T(2, 1, 3) = beta;
        T(2, 1, 4) = p[3] * beta_p4;
        T(2, 2, 0) = -k_p0;
        T(2, 2, 1) = -k_p1;
    };
    m.hess_pp = [](const Vec& p, const Vec& u, double t, Tensor3& T) {
        T.set_zero();
        const Psi ps = eval_psi(p[0] * p[1]);
        const double k_00 = ps.d2 * p[1];
        const double k_01 = ps.d2 * p[0];
        const double k_11 = ps.d2 * p[0] * p[0] / p[1] - 2.0 * ps.d1 * p[0] / (p[1] * p[1]) +
                            2.0 * ps.v / (p[1] * p[1] * p[1]);
        const double ex = std::exp(-p[4] * t * t);
        const double beta_p4 = t * t * ex;
        const double beta_p4p4 = -t * t * t * t * ex;
        T(0, 0, 0) = k_00 * u[2];
        T(0, 0, 1) = k_01 * u[2];
        T(0, 1, 0) = k_01 * u[2];
        T(0, 1, 1) = k_11 * u[2];
        T(1, 3, 4) = -beta_p4 * u[1];
        T(1, 4, 3) = -beta_p4 * u[1];
        T(1, 4, 4) = -p[3] * beta_p4p4 * u[1];
        T(2, 0, 0) = -k_00 * u[2];
        T(2, 0, 1) = -k_01 * u[2];
        T(2, 1, 0) = -k_01 * u[2];
        T(2, 1, 1) = -k_11 * u[2];
        T(2, 3, 4) = beta_p4 * u[1];
        T(2, 4, 3) = beta_p4 * u[1];
        T(2, 4, 4) = p[3] * beta_p4p4 * u[1];
    };
    m.hess_upp = [](const Vec& p, const Vec&, double t, Tensor4& T) {
        T.set_zero();
        const Psi ps = eval_psi(p[0] * p[1]);
        const double k_00 = ps.d2 * p[1];
        const double k_01 = ps.d2 * p[0];
        const double k_11 = ps.d2 * p[0] * p[0] / p[1] - 2.0 * ps.d1 * p[0] / (p[1] * p[1]) +
                            2.0 * ps.v / (p[1] * p[1] * p[1]);
        const double ex = std::exp(-p[4] * t * t);
        const double beta_p4 = t * t * ex;
        const double beta_p4p4 = -t * t * t * t * ex;
        T(0, 2, 0, 0) = k_00;
        T(0, 2, 0, 1) = k_01;
        T(0, 2, 1, 0) = k_01;
        T(0, 2, 1, 1) = k_11;
        T(1, 1, 3, 4) = -beta_p4;
        T(1, 1, 4, 3) = -beta_p4;
        T(1, 1, 4, 4) = -p[3] * beta_p4p4;
        T(2, 1, 3, 4) = beta_p4;
        T(2, 1, 4, 3) = beta_p4;
        T(2, 1, 4, 4) = p[3] * beta_p4p4;
        T(2, 2, 0, 0) = -k_00;
        T(2, 2, 0, 1) = -k_01;
        T(2, 2, 1, 0) = -k_01;
        T(2, 2, 1, 1) = -k_11;
    };

    m.param_lower = vec_of({1e-4, 1e-4, 1e-4, 1e-4, 1e-4});
    m.param_upper = vec_of({2.0, 2.0, 1.0, 1.0, 1.0});
    m.probe_param_lower = vec_of({1e-4, 1e-4, 1e-4, 1e-4, 1e-4});
    m.probe_param_upper = vec_of({2.0, 2.0, 1.0, 1.0, 1.0});
    m.probe_state_lower = vec_of({1e-3, 1e-3, 1e-3});
    m.probe_state_upper = vec_of({1.0, 1.0, 1.0});
    m.probe_time_lower = 0.0;
    m.probe_time_upper = 50.0;
    return m;
}

Mat ranges_of(std::initializer_list<std::pair<double, double>> rs) {
    Mat out(static_cast<int>(rs.size()), 2);
    int i = 0;
    for (const auto& r : rs) {
        out(i, 0) = r.first;
        out(i, 1) = r.second;
        ++i;
    }
    return out;
}

}  // namespace

bool OdeModel::has_bounds() const {
    if (param_lower.size() == 0 && param_upper.size() == 0) return false;
    for (int j = 0; j < dim_params; ++j) {
        if (param_lower.size() > 0 && param_lower[j] > -kInf) return true;
        if (param_upper.size() > 0 && param_upper[j] < kInf) return true;
    }
    return false;
}

BenchmarkSystem builtin_system(const std::string& name) {
    BenchmarkSystem sys;
    if (name == "lorenz") {
        sys.model = lorenz_model();
        sys.p_star = vec_of({10.0, 28.0, 8.0 / 3.0});
        sys.u0 = vec_of({2.0, 1.0, 1.0});
        sys.t0 = 0.0;
        sys.t_end = 30.0;  // horizon experiments override with T in {3,6,...,30}
        sys.init_range = ranges_of({{0, 20}, {0, 35}, {0, 5}});
        sys.noise_kind = NoiseKind::gaussian;
    } else if (name == "hindmarsh_rose") {
        sys.model = hindmarsh_rose_model();
        sys.p_star = vec_of({10, 10, 30, 10, 10, 50, 10, 0.04, 0.0319, 0.01});
        sys.u0 = vec_of({-1.31, -7.6, -0.2});
        sys.t0 = 0.0;
        sys.t_end = 10.0;
        sys.init_range = ranges_of({{0, 20}, {0, 20}, {0, 60}, {0, 20}, {0, 20},
                                    {0, 100}, {0, 20}, {0, 1}, {0, 1}, {0, 1}});
        sys.noise_kind = NoiseKind::gaussian;
    } else if (name == "goodwin") {
        sys.model = goodwin_model();
        sys.p_star = vec_of({3.4884, 0.0969, 1.0, 10.0, 0.0969, 0.0581, 0.0969, 0.0775});
        sys.u0 = vec_of({0.3617, 0.9137, 1.3934});
        sys.t0 = 0.0;
        sys.t_end = 80.0;
        sys.init_range = ranges_of({{1, 5}, {0, 0.2}, {0, 2}, {5, 15},
                                    {0, 0.2}, {0, 0.2}, {0, 0.2}, {0, 0.2}});
        sys.noise_kind = NoiseKind::lognormal;
    } else if (name == "sir_tdi") {
        sys.model = sir_tdi_model();
        sys.p_star = vec_of({1.99, 1.5, 0.074, 0.113, 0.0024});
        sys.u0 = vec_of({1.0, 0.0, 0.0});
        sys.t0 = 0.0;
        sys.t_end = 50.0;
        sys.init_range = ranges_of({{1e-4, 2}, {1e-4, 2}, {1e-4, 1}, {1e-4, 1}, {1e-4, 1}});
        sys.noise_kind = NoiseKind::lognormal;
    } else {
        throw std::invalid_argument("unknown builtin system '" + name +
                                    "'; expected one of lorenz, hindmarsh_rose, goodwin, sir_tdi");
    }
    return sys;
}

std::vector<std::string> builtin_system_names() {
    return {"lorenz", "hindmarsh_rose", "goodwin", "sir_tdi"};
}

namespace {

// Relative mismatch with an absolute floor of 1 so near-zero entries are
// compared absolutely. The allowance is the difference's roundoff floor:
// central differences of a quantity of magnitude `mag` cannot resolve below
// eps*mag/h, so mismatch under that is indistinguishable from exact.
double rel_mismatch(double analytic, double fd, double allowance) {
    const double denom = std::max({1.0, std::abs(analytic), std::abs(fd)});
    return std::max(0.0, std::abs(analytic - fd) - allowance) / denom;
}

double fd_allowance(double mag, double h) {
    return 100.0 * std::numeric_limits<double>::epsilon() * mag / (2.0 * h);
}

void require_finite(const Vec& f, const char* what) {
    if (!f.allFinite()) {
        throw std::runtime_error(std::string("verify_derivatives: ") + what +
                                 " produced a non-finite value at a probe point");
    }
}

}  // namespace

DerivativeCheckReport verify_derivatives(const OdeModel& model, int probes, unsigned seed) {
    if (probes <= 0) throw std::invalid_argument("verify_derivatives: probes must be positive");
    const int D = model.dim_state;
    const int J = model.dim_params;

    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto draw_in = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

    DerivativeCheckReport rep;
    rep.ok = true;

    Vec f(D), fp(D), fm(D);
    Mat Ju(D, D), Jup_(D, D), Jum(D, D);
    Mat Jp(D, J), Jpp_(D, J), Jpm(D, J);
    Tensor3 Tup(D, D, J), Tup_p(D, D, J), Tup_m(D, D, J);
    Tensor3 Tpp(D, J, J);
    Tensor4 Tupp(D, D, J, J);

    auto record = [&](double err, const std::string& label) {
        if (err > rep.max_rel_error) {
            rep.max_rel_error = err;
            rep.worst_entry = label;
        }
    };

    // Steps follow the local coordinate scale so probes near a singular corner
    // (say a rate parameter drawn at 1e-4 when the box is [1e-4, 2]) keep the
    // relative step, and hence the truncation error, small.
    Vec pscale(J), uscale(D);
    for (int j = 0; j < J; ++j)
        pscale[j] = std::max(1e-2 * (model.probe_param_upper[j] - model.probe_param_lower[j]),
                             1e-6);
    for (int d = 0; d < D; ++d)
        uscale[d] = std::max(1e-2 * (model.probe_state_upper[d] - model.probe_state_lower[d]),
                             1e-6);

    for (int probe = 0; probe < probes; ++probe) {
        Vec p(J), u(D);
        for (int j = 0; j < J; ++j)
            p[j] = draw_in(model.probe_param_lower[j], model.probe_param_upper[j]);
        for (int d = 0; d < D; ++d)
            u[d] = draw_in(model.probe_state_lower[d], model.probe_state_upper[d]);
        const double t = draw_in(model.probe_time_lower, model.probe_time_upper);

        model.rhs(p, u, t, f);
        require_finite(f, "rhs");

        // jac_u vs FD of rhs in u
        model.jac_u(p, u, t, Ju);
        for (int dd = 0; dd < D; ++dd) {
            const double h = 1e-6 * (uscale[dd] + std::abs(u[dd]));
            Vec up = u, um = u;
            up[dd] += h;
            um[dd] -= h;
            model.rhs(p, up, t, fp);
            model.rhs(p, um, t, fm);
            require_finite(fp, "rhs");
            require_finite(fm, "rhs");
            const double allow = fd_allowance(std::max(fp.cwiseAbs().maxCoeff(),
                                                       fm.cwiseAbs().maxCoeff()), h);
            for (int d = 0; d < D; ++d) {
                const double fd = (fp[d] - fm[d]) / (2.0 * h);
                record(rel_mismatch(Ju(d, dd), fd, allow),
                       "jac_u(" + std::to_string(d) + "," + std::to_string(dd) + ")");
            }
        }

        // jac_p vs FD of rhs in p
        model.jac_p(p, u, t, Jp);
        for (int j = 0; j < J; ++j) {
            const double h = 1e-6 * (pscale[j] + std::abs(p[j]));
            Vec pp = p, pm = p;
            pp[j] += h;
            pm[j] -= h;
            model.rhs(pp, u, t, fp);
            model.rhs(pm, u, t, fm);
            require_finite(fp, "rhs");
            require_finite(fm, "rhs");
            const double allow = fd_allowance(std::max(fp.cwiseAbs().maxCoeff(),
                                                       fm.cwiseAbs().maxCoeff()), h);
            for (int d = 0; d < D; ++d) {
                const double fd = (fp[d] - fm[d]) / (2.0 * h);
                record(rel_mismatch(Jp(d, j), fd, allow),
                       "jac_p(" + std::to_string(d) + "," + std::to_string(j) + ")");
            }
        }

        // jac_up vs FD of jac_u in p; hess_pp vs FD of jac_p in p;
        // hess_upp vs FD of jac_up in p
        model.jac_up(p, u, t, Tup);
        model.hess_pp(p, u, t, Tpp);
        model.hess_upp(p, u, t, Tupp);
        for (int j = 0; j < J; ++j) {
            const double h = 1e-6 * (pscale[j] + std::abs(p[j]));
            Vec pp = p, pm = p;
            pp[j] += h;
            pm[j] -= h;

            model.jac_u(pp, u, t, Jup_);
            model.jac_u(pm, u, t, Jum);
            double allow = fd_allowance(std::max(Jup_.cwiseAbs().maxCoeff(),
                                                 Jum.cwiseAbs().maxCoeff()), h);
            for (int d = 0; d < D; ++d)
                for (int dd = 0; dd < D; ++dd) {
                    const double fd = (Jup_(d, dd) - Jum(d, dd)) / (2.0 * h);
                    record(rel_mismatch(Tup(d, dd, j), fd, allow),
                           "jac_up(" + std::to_string(d) + "," + std::to_string(dd) + "," +
                               std::to_string(j) + ")");
                }

            model.jac_p(pp, u, t, Jpp_);
            model.jac_p(pm, u, t, Jpm);
            allow = fd_allowance(std::max(Jpp_.cwiseAbs().maxCoeff(),
                                          Jpm.cwiseAbs().maxCoeff()), h);
            for (int d = 0; d < D; ++d)
                for (int i = 0; i < J; ++i) {
                    const double fd = (Jpp_(d, i) - Jpm(d, i)) / (2.0 * h);
                    record(rel_mismatch(Tpp(d, i, j), fd, allow),
                           "hess_pp(" + std::to_string(d) + "," + std::to_string(i) + "," +
                               std::to_string(j) + ")");
                }

            model.jac_up(pp, u, t, Tup_p);
            model.jac_up(pm, u, t, Tup_m);
            allow = 0.0;
            for (int d = 0; d < D; ++d)
                for (int dd = 0; dd < D; ++dd)
                    for (int i = 0; i < J; ++i)
                        allow = std::max({allow, std::abs(Tup_p(d, dd, i)),
                                          std::abs(Tup_m(d, dd, i))});
            allow = fd_allowance(allow, h);
            for (int d = 0; d < D; ++d)
                for (int dd = 0; dd < D; ++dd)
                    for (int i = 0; i < J; ++i) {
                        const double fd = (Tup_p(d, dd, i) - Tup_m(d, dd, i)) / (2.0 * h);
                        record(rel_mismatch(Tupp(d, dd, i, j), fd, allow),
                               "hess_upp(" + std::to_string(d) + "," + std::to_string(dd) + "," +
                                   std::to_string(i) + "," + std::to_string(j) + ")");
                    }
        }
    }

    rep.ok = rep.max_rel_error < 1e-5;
    return rep;
}

OdeModel log_transformed(const OdeModel& base) {
    const int D = base.dim_state;
    const int J = base.dim_params;
    auto b = std::make_shared<OdeModel>(base);

    OdeModel m;
    m.dim_state = D;
    m.dim_params = J;
    m.name = base.name + "_log";
    m.linear_in_params = base.linear_in_params;
    m.stiff = base.stiff;
    m.param_lower = base.param_lower;
    m.param_upper = base.param_upper;
    m.probe_param_lower = base.probe_param_lower;
    m.probe_param_upper = base.probe_param_upper;
    m.probe_time_lower = base.probe_time_lower;
    m.probe_time_upper = base.probe_time_upper;

    // Probe in log coordinates over the positive part of the base state box,
    // keeping the floor within three decades of the top so the exp() dynamic
    // range stays testable.
    m.probe_state_lower = Vec(D);
    m.probe_state_upper = Vec(D);
    for (int d = 0; d < D; ++d) {
        const double hi_base = base.probe_state_upper[d];
        const double lo =
            std::max({base.probe_state_lower[d], 1e-3 * hi_base, 1e-6});
        const double hi = std::max(hi_base, 2.0 * lo);
        m.probe_state_lower[d] = std::log(lo);
        m.probe_state_upper[d] = std::log(hi);
    }

    m.rhs = [b, D](const Vec& p, const Vec& x, double t, Vec& out) {
        const Vec u = x.array().exp().matrix();
        b->rhs(p, u, t, out);
        for (int d = 0; d < D; ++d) out[d] /= u[d];
    };
    m.jac_u = [b, D](const Vec& p, const Vec& x, double t, Mat& out) {
        const Vec u = x.array().exp().matrix();
        Vec f(D);
        b->rhs(p, u, t, f);
        b->jac_u(p, u, t, out);
        for (int d = 0; d < D; ++d) {
            for (int e = 0; e < D; ++e) out(d, e) *= u[e] / u[d];
            out(d, d) -= f[d] / u[d];
        }
    };
    m.jac_p = [b, D](const Vec& p, const Vec& x, double t, Mat& out) {
        const Vec u = x.array().exp().matrix();
        b->jac_p(p, u, t, out);
        for (int d = 0; d < D; ++d) out.row(d) /= u[d];
    };
    m.jac_up = [b, D, J](const Vec& p, const Vec& x, double t, Tensor3& out) {
        const Vec u = x.array().exp().matrix();
        Mat jp(D, J);
        b->jac_p(p, u, t, jp);
        b->jac_up(p, u, t, out);
        for (int d = 0; d < D; ++d)
            for (int e = 0; e < D; ++e)
                for (int j = 0; j < J; ++j) {
                    double v = out(d, e, j) * u[e] / u[d];
                    if (d == e) v -= jp(d, j) / u[d];
                    out(d, e, j) = v;
                }
    };
    m.hess_pp = [b, D, J](const Vec& p, const Vec& x, double t, Tensor3& out) {
        const Vec u = x.array().exp().matrix();
        b->hess_pp(p, u, t, out);
        for (int d = 0; d < D; ++d)
            for (int i = 0; i < J; ++i)
                for (int j = 0; j < J; ++j) out(d, i, j) /= u[d];
    };
    m.hess_upp = [b, D, J](const Vec& p, const Vec& x, double t, Tensor4& out) {
        const Vec u = x.array().exp().matrix();
        Tensor3 hpp(D, J, J);
        b->hess_pp(p, u, t, hpp);
        b->hess_upp(p, u, t, out);
        for (int d = 0; d < D; ++d)
            for (int e = 0; e < D; ++e)
                for (int i = 0; i < J; ++i)
                    for (int j = 0; j < J; ++j) {
                        double v = out(d, e, i, j) * u[e] / u[d];
                        if (d == e) v -= hpp(d, i, j) / u[d];
                        out(d, e, i, j) = v;
                    }
    };
    return m;
}

}  // namespace wendy
