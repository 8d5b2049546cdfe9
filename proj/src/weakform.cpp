#include "wendy/weakform.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>

namespace wendy {

namespace {

// Column layouts for the per-sample value tables.
inline int col_ju(int d, int e, int D) { return d + D * e; }
inline int col_jp(int d, int j, int D) { return d + D * j; }
inline int col_jup(int d, int e, int j, int D) { return d + D * (e + D * j); }
inline int col_hpp(int d, int i, int j, int D, int J) { return d + D * (i + J * j); }
inline int col_hupp(int d, int e, int i, int j, int D, int J) {
    return d + D * (e + D * (i + J * j));
}

std::vector<char> nonzero_columns(const Mat& table) {
    std::vector<char> nz(table.cols(), 0);
    for (int c = 0; c < table.cols(); ++c)
        nz[c] = (table.col(c).cwiseAbs().maxCoeff() > 0.0) ? 1 : 0;
    return nz;
}

}  // namespace

Vec estimate_noise_sigma(const Mat& data, NoiseKind kind) {
    const int n = static_cast<int>(data.rows());
    const int D = static_cast<int>(data.cols());
    if (n < 4)
        throw std::invalid_argument("estimate_noise_sigma: need at least 4 samples");
    if (!data.allFinite())
        throw std::invalid_argument("estimate_noise_sigma: data contains non-finite values");

    Mat w = data;
    if (kind == NoiseKind::lognormal) {
        if ((data.array() <= 0.0).any())
            throw std::invalid_argument(
                "estimate_noise_sigma: lognormal noise requires strictly positive data");
        w = data.array().log().matrix();
    }

    // Var of the centered second difference of iid noise is 6 sigma^2; the
    // smooth signal contributes O(dt^4) and is negligible at sane grids.
    Vec sigma2(D);
    for (int d = 0; d < D; ++d) {
        double acc = 0.0;
        for (int m = 1; m + 1 < n; ++m) {
            const double dd = w(m - 1, d) - 2.0 * w(m, d) + w(m + 1, d);
            acc += dd * dd;
        }
        sigma2[d] = acc / (6.0 * static_cast<double>(n - 2));
    }
    return sigma2;
}

double CovarianceFactor::logdet() const {
    return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

WeakFormProblem::WeakFormProblem(const OdeModel& model, TestFunctionBasis basis,
                                 const Mat& data, Vec grid, NoiseModel noise)
    : basis_(std::move(basis)), grid_(std::move(grid)), noise_(noise) {
    dim_state_ = model.dim_state;
    dim_params_ = model.dim_params;
    n_ = static_cast<int>(data.rows());
    k_ = static_cast<int>(basis_.phi.rows());

    if (dim_state_ <= 0 || dim_params_ <= 0)
        throw std::invalid_argument("weak form: model has empty state or parameter space");
    if (!model.rhs || !model.jac_u || !model.jac_p)
        throw std::invalid_argument("weak form: model must provide rhs, jac_u, and jac_p");
    if (data.cols() != dim_state_)
        throw std::invalid_argument("weak form: data column count does not match the model state");
    if (grid_.size() != n_)
        throw std::invalid_argument("weak form: grid length does not match the data");
    if (basis_.phi.cols() != n_ || basis_.phi_dot.cols() != n_)
        throw std::invalid_argument("weak form: basis was built on a different grid");
    if (k_ <= 0)
        throw std::invalid_argument("weak form: empty test function basis");
    if (!data.allFinite())
        throw std::invalid_argument("weak form: data contains non-finite values");

    original_model_ = model;
    if (noise_.kind == NoiseKind::lognormal) {
        if ((data.array() <= 0.0).any())
            throw std::invalid_argument("weak form: lognormal noise requires strictly positive data");
        w_ = data.array().log().matrix();
        model_ = log_transformed(model);
    } else {
        w_ = data;
        model_ = model;
    }

    if (noise_.sigma_diag.size() == 0) {
        noise_.sigma_diag = estimate_noise_sigma(data, noise_.kind);
    } else if (noise_.sigma_diag.size() != dim_state_) {
        throw std::invalid_argument("weak form: sigma_diag length does not match the state");
    }
    if (!noise_.sigma_diag.allFinite() || (noise_.sigma_diag.array() < 0.0).any())
        throw std::invalid_argument("weak form: noise variances must be finite and nonnegative");

    const int kd = k_ * dim_state_;
    b_ = Vec(kd);
    for (int d = 0; d < dim_state_; ++d)
        b_.segment(d * k_, k_) = -(basis_.phi_dot * w_.col(d));

    phidot_gram_.noalias() = basis_.phi_dot * basis_.phi_dot.transpose();
    scaled_.resize(k_, n_);

    const int D = dim_state_, J = dim_params_;
    tab_f_.resize(n_, D);
    tab_ju_.resize(n_, D * D);
    tab_jp_.resize(n_, D * J);
    tab_jup_.resize(n_, D * D * J);
    tab_hpp_.resize(n_, D * J * J);
    tab_hupp_.resize(n_, D * D * J * J);
}

void WeakFormProblem::refresh_tables(const Vec& p) {
    if (tables_ready_ && table_p_.size() == p.size() &&
        (table_p_.array() == p.array()).all())
        return;
    if (p.size() != dim_params_)
        throw std::invalid_argument("weak form: parameter vector has wrong length");

    const int D = dim_state_, J = dim_params_;
    tab_f_.setZero();
    tab_ju_.setZero();
    tab_jp_.setZero();
    tab_jup_.setZero();
    tab_hpp_.setZero();
    tab_hupp_.setZero();

    Vec f(D);
    Mat ju(D, D), jp(D, J);
    Tensor3 jup(D, D, J), hpp(D, J, J);
    Tensor4 hupp(D, D, J, J);

    for (int m = 0; m < n_; ++m) {
        const Vec u = w_.row(m).transpose();
        const double t = grid_[m];

        model_.rhs(p, u, t, f);
        if (!f.allFinite())
            throw std::runtime_error("weak residual: rhs returned a non-finite value at sample " +
                                     std::to_string(m));
        tab_f_.row(m) = f.transpose();

        model_.jac_u(p, u, t, ju);
        for (int d = 0; d < D; ++d)
            for (int e = 0; e < D; ++e) tab_ju_(m, col_ju(d, e, D)) = ju(d, e);

        model_.jac_p(p, u, t, jp);
        for (int d = 0; d < D; ++d)
            for (int j = 0; j < J; ++j) tab_jp_(m, col_jp(d, j, D)) = jp(d, j);

        if (model_.jac_up) {
            model_.jac_up(p, u, t, jup);
            for (int d = 0; d < D; ++d)
                for (int e = 0; e < D; ++e)
                    for (int j = 0; j < J; ++j)
                        tab_jup_(m, col_jup(d, e, j, D)) = jup(d, e, j);
        }
        if (model_.hess_pp) {
            model_.hess_pp(p, u, t, hpp);
            for (int d = 0; d < D; ++d)
                for (int i = 0; i < J; ++i)
                    for (int j = 0; j < J; ++j)
                        tab_hpp_(m, col_hpp(d, i, j, D, J)) = hpp(d, i, j);
        }
        if (model_.hess_upp) {
            model_.hess_upp(p, u, t, hupp);
            for (int d = 0; d < D; ++d)
                for (int e = 0; e < D; ++e)
                    for (int i = 0; i < J; ++i)
                        for (int j = 0; j < J; ++j)
                            tab_hupp_(m, col_hupp(d, e, i, j, D, J)) = hupp(d, e, i, j);
        }
    }

    if (!tab_ju_.allFinite() || !tab_jp_.allFinite() || !tab_jup_.allFinite() ||
        !tab_hpp_.allFinite() || !tab_hupp_.allFinite())
        throw std::runtime_error("weak residual: a model derivative returned non-finite values");

    nz_ju_ = nonzero_columns(tab_ju_);
    nz_jup_ = nonzero_columns(tab_jup_);
    nz_hpp_ = nonzero_columns(tab_hpp_);
    nz_hupp_ = nonzero_columns(tab_hupp_);

    table_p_ = p;
    tables_ready_ = true;
}

void WeakFormProblem::scale_columns(const Mat& src, const Vec& weights, Mat& dst) const {
    dst = src;
    dst.array().rowwise() *= weights.transpose().array();
}

Vec WeakFormProblem::g(const Vec& p) {
    refresh_tables(p);
    Vec out(size());
    for (int d = 0; d < dim_state_; ++d)
        out.segment(d * k_, k_).noalias() = basis_.phi * tab_f_.col(d);
    return out;
}

Vec WeakFormProblem::residual(const Vec& p) { return g(p) - b_; }

Mat WeakFormProblem::residual_jacobian_p(const Vec& p) {
    refresh_tables(p);
    const int D = dim_state_, J = dim_params_;
    Mat out(size(), J);
    for (int j = 0; j < J; ++j)
        for (int d = 0; d < D; ++d)
            out.col(j).segment(d * k_, k_).noalias() = basis_.phi * tab_jp_.col(col_jp(d, j, D));
    return out;
}

Vec WeakFormProblem::g_second_derivative(const Vec& p, int i, int j) {
    refresh_tables(p);
    const int D = dim_state_, J = dim_params_;
    Vec out = Vec::Zero(size());
    for (int d = 0; d < D; ++d) {
        const int c = col_hpp(d, i, j, D, J);
        if (nz_hpp_[c])
            out.segment(d * k_, k_).noalias() = basis_.phi * tab_hpp_.col(c);
    }
    return out;
}

Mat WeakFormProblem::covariance_matrix(const Vec& p) {
    refresh_tables(p);
    const int D = dim_state_;
    const Vec& s2 = noise_.sigma_diag;
    Mat s = Mat::Zero(size(), size());
    Vec wbuf(n_);

    for (int d = 0; d < D; ++d) {
        for (int dp = d; dp < D; ++dp) {
            auto blk = s.block(d * k_, dp * k_, k_, k_);

            wbuf.setZero();
            bool any = false;
            for (int e = 0; e < D; ++e) {
                const int cu = col_ju(d, e, D), cv = col_ju(dp, e, D);
                if (s2[e] > 0.0 && nz_ju_[cu] && nz_ju_[cv]) {
                    wbuf.array() +=
                        s2[e] * tab_ju_.col(cu).array() * tab_ju_.col(cv).array();
                    any = true;
                }
            }
            if (any) {
                scale_columns(basis_.phi, wbuf, scaled_);
                blk.noalias() += scaled_ * basis_.phi.transpose();
            }

            const int cb = col_ju(d, dp, D);
            if (s2[dp] > 0.0 && nz_ju_[cb]) {
                scale_columns(basis_.phi, (s2[dp] * tab_ju_.col(cb)).eval(), scaled_);
                blk.noalias() += scaled_ * basis_.phi_dot.transpose();
            }
            const int cc = col_ju(dp, d, D);
            if (s2[d] > 0.0 && nz_ju_[cc]) {
                scale_columns(basis_.phi_dot, (s2[d] * tab_ju_.col(cc)).eval(), scaled_);
                blk.noalias() += scaled_ * basis_.phi.transpose();
            }
            if (d == dp && s2[d] > 0.0) blk += s2[d] * phidot_gram_;
        }
    }

    for (int d = 0; d < D; ++d)
        for (int dp = d + 1; dp < D; ++dp)
            s.block(dp * k_, d * k_, k_, k_) = s.block(d * k_, dp * k_, k_, k_).transpose();

    Mat st = s.transpose();
    s = 0.5 * (s + st);
    return s;
}

CovarianceFactor WeakFormProblem::covariance(const Vec& p) {
    CovarianceFactor out;
    out.s = covariance_matrix(p);
    if (!out.s.allFinite())
        throw std::runtime_error("covariance: assembled matrix has non-finite entries");

    const double base = out.s.trace() / static_cast<double>(size());
    Mat stab = out.s;
    out.llt.compute(stab);
    if (out.llt.info() == Eigen::Success && base > 0.0) {
        out.jitter = 0.0;
        return out;
    }
    for (double c = 1e-12; c <= 1.0000001e-6; c *= 10.0) {
        const double jit = c * base;
        if (jit <= 0.0) break;
        stab = out.s;
        stab.diagonal().array() += jit;
        out.llt.compute(stab);
        if (out.llt.info() == Eigen::Success) {
            out.jitter = jit;
            return out;
        }
    }
    throw std::runtime_error(
        "covariance: Cholesky factorization failed at maximum jitter (degenerate noise model)");
}

std::vector<Mat> WeakFormProblem::covariance_derivatives(const Vec& p) {
    refresh_tables(p);
    const int D = dim_state_, J = dim_params_;
    const Vec& s2 = noise_.sigma_diag;
    std::vector<Mat> out(J);
    Vec wbuf(n_);

    for (int j = 0; j < J; ++j) {
        Mat& ds = out[j];
        ds = Mat::Zero(size(), size());

        for (int d = 0; d < D; ++d) {
            for (int dp = d; dp < D; ++dp) {
                auto blk = ds.block(d * k_, dp * k_, k_, k_);

                wbuf.setZero();
                bool any = false;
                for (int e = 0; e < D; ++e) {
                    const int a_d = col_ju(d, e, D), a_dp = col_ju(dp, e, D);
                    const int u_d = col_jup(d, e, j, D), u_dp = col_jup(dp, e, j, D);
                    if (s2[e] <= 0.0) continue;
                    if (nz_jup_[u_d] && nz_ju_[a_dp]) {
                        wbuf.array() +=
                            s2[e] * tab_jup_.col(u_d).array() * tab_ju_.col(a_dp).array();
                        any = true;
                    }
                    if (nz_jup_[u_dp] && nz_ju_[a_d]) {
                        wbuf.array() +=
                            s2[e] * tab_jup_.col(u_dp).array() * tab_ju_.col(a_d).array();
                        any = true;
                    }
                }
                if (any) {
                    scale_columns(basis_.phi, wbuf, scaled_);
                    blk.noalias() += scaled_ * basis_.phi.transpose();
                }

                const int cb = col_jup(d, dp, j, D);
                if (s2[dp] > 0.0 && nz_jup_[cb]) {
                    scale_columns(basis_.phi, (s2[dp] * tab_jup_.col(cb)).eval(), scaled_);
                    blk.noalias() += scaled_ * basis_.phi_dot.transpose();
                }
                const int cc = col_jup(dp, d, j, D);
                if (s2[d] > 0.0 && nz_jup_[cc]) {
                    scale_columns(basis_.phi_dot, (s2[d] * tab_jup_.col(cc)).eval(), scaled_);
                    blk.noalias() += scaled_ * basis_.phi.transpose();
                }
            }
        }

        for (int d = 0; d < D; ++d)
            for (int dp = d + 1; dp < D; ++dp)
                ds.block(dp * k_, d * k_, k_, k_) = ds.block(d * k_, dp * k_, k_, k_).transpose();
        Mat st = ds.transpose();
        ds = 0.5 * (ds + st);
    }
    return out;
}

Mat WeakFormProblem::covariance_second_derivative(const Vec& p, int i, int j) {
    refresh_tables(p);
    const int D = dim_state_, J = dim_params_;
    const Vec& s2 = noise_.sigma_diag;
    Mat d2s = Mat::Zero(size(), size());
    Vec wbuf(n_);

    for (int d = 0; d < D; ++d) {
        for (int dp = d; dp < D; ++dp) {
            auto blk = d2s.block(d * k_, dp * k_, k_, k_);

            wbuf.setZero();
            bool any = false;
            for (int e = 0; e < D; ++e) {
                if (s2[e] <= 0.0) continue;
                const int a_d = col_ju(d, e, D), a_dp = col_ju(dp, e, D);
                const int h_d = col_hupp(d, e, i, j, D, J), h_dp = col_hupp(dp, e, i, j, D, J);
                const int ui_d = col_jup(d, e, i, D), uj_d = col_jup(d, e, j, D);
                const int ui_dp = col_jup(dp, e, i, D), uj_dp = col_jup(dp, e, j, D);
                if (nz_hupp_[h_d] && nz_ju_[a_dp]) {
                    wbuf.array() += s2[e] * tab_hupp_.col(h_d).array() * tab_ju_.col(a_dp).array();
                    any = true;
                }
                if (nz_hupp_[h_dp] && nz_ju_[a_d]) {
                    wbuf.array() += s2[e] * tab_hupp_.col(h_dp).array() * tab_ju_.col(a_d).array();
                    any = true;
                }
                if (nz_jup_[ui_d] && nz_jup_[uj_dp]) {
                    wbuf.array() += s2[e] * tab_jup_.col(ui_d).array() * tab_jup_.col(uj_dp).array();
                    any = true;
                }
                if (nz_jup_[ui_dp] && nz_jup_[uj_d]) {
                    wbuf.array() += s2[e] * tab_jup_.col(ui_dp).array() * tab_jup_.col(uj_d).array();
                    any = true;
                }
            }
            if (any) {
                scale_columns(basis_.phi, wbuf, scaled_);
                blk.noalias() += scaled_ * basis_.phi.transpose();
            }

            const int cb = col_hupp(d, dp, i, j, D, J);
            if (s2[dp] > 0.0 && nz_hupp_[cb]) {
                scale_columns(basis_.phi, (s2[dp] * tab_hupp_.col(cb)).eval(), scaled_);
                blk.noalias() += scaled_ * basis_.phi_dot.transpose();
            }
            const int cc = col_hupp(dp, d, i, j, D, J);
            if (s2[d] > 0.0 && nz_hupp_[cc]) {
                scale_columns(basis_.phi_dot, (s2[d] * tab_hupp_.col(cc)).eval(), scaled_);
                blk.noalias() += scaled_ * basis_.phi.transpose();
            }
        }
    }

    for (int d = 0; d < D; ++d)
        for (int dp = d + 1; dp < D; ++dp)
            d2s.block(dp * k_, d * k_, k_, k_) = d2s.block(d * k_, dp * k_, k_, k_).transpose();
    Mat st = d2s.transpose();
    d2s = 0.5 * (d2s + st);
    return d2s;
}

EstimatorUncertainty estimator_covariance(WeakFormProblem& problem, const Vec& p) {
    const Mat g = problem.residual_jacobian_p(p);
    const CovarianceFactor cf = problem.covariance(p);
    const int J = static_cast<int>(g.cols());

    Eigen::JacobiSVD<Mat> svd(g, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vec& sv = svd.singularValues();
    const double tol =
        std::max<double>(g.rows(), g.cols()) * 1e-12 * (sv.size() > 0 ? sv[0] : 0.0);

    std::vector<int> deficient;
    for (int i = 0; i < sv.size(); ++i)
        if (!(sv[i] > tol)) {
            int worst = 0;
            svd.matrixV().col(i).cwiseAbs().maxCoeff(&worst);
            deficient.push_back(worst);
        }
    if (!deficient.empty() || sv.size() < J) {
        std::ostringstream msg;
        msg << "estimator covariance: residual Jacobian is rank deficient; "
               "unidentifiable parameter indices:";
        for (int idx : deficient) msg << " " << idx;
        throw std::runtime_error(msg.str());
    }

    const Mat su = cf.s * svd.matrixU();           // (K*D) x J
    Mat core = svd.matrixU().transpose() * su;     // J x J
    for (int a = 0; a < J; ++a)
        for (int b2 = 0; b2 < J; ++b2) core(a, b2) /= sv[a] * sv[b2];

    EstimatorUncertainty out;
    out.covariance = svd.matrixV() * core * svd.matrixV().transpose();
    out.covariance = 0.5 * (out.covariance + out.covariance.transpose()).eval();
    out.standard_error = out.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
    out.confidence_radius = 2.0 * out.standard_error;
    return out;
}

}  // namespace wendy
