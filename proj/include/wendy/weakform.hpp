#pragma once

#include "wendy/model.hpp"
#include "wendy/testfn.hpp"
#include "wendy/types.hpp"

#include <Eigen/Cholesky>

#include <vector>

namespace wendy {

// Additive noise description. sigma_diag holds per-state noise variances
// (the diagonal of the noise covariance); lognormal means the variances
// apply to log(u), where multiplicative noise becomes additive.
struct NoiseModel {
    NoiseKind kind = NoiseKind::gaussian;
    Vec sigma_diag;  // empty = estimate from the data
};

// Per-state noise variance estimate from centered second differences of the
// data (log-data when kind is lognormal). Needs at least 4 samples.
Vec estimate_noise_sigma(const Mat& data, NoiseKind kind);

// Residual covariance S at a parameter point together with its Cholesky
// factorization. `s` is the raw assembled matrix; the factor is of
// s + jitter*I, where jitter is the smallest diagonal boost (possibly zero)
// that made the factorization succeed.
struct CovarianceFactor {
    Mat s;
    Eigen::LLT<Mat> llt;
    double jitter = 0.0;

    double logdet() const;
};

// Weak-form reformulation of an ODE parameter estimation problem. Holds the
// data matrix W (raw, or log-data under lognormal noise), a test function
// basis, and the constant right side b = -vec(phi_dot * W). Exposes the weak
// residual r(p) = vec(phi * F(p)) - b, its parameter Jacobian, and the
// residual covariance S(p) with first and second parameter derivatives.
//
// Methods share value tables memoized on the last parameter point, so the
// instance is a single-session object: use one per estimation run and do not
// share across threads.
class WeakFormProblem {
public:
    WeakFormProblem(const OdeModel& model, TestFunctionBasis basis, const Mat& data,
                    Vec grid, NoiseModel noise);

    int dim_state() const { return dim_state_; }
    int dim_params() const { return dim_params_; }
    int num_test_functions() const { return k_; }
    int size() const { return k_ * dim_state_; }  // length of r and side of S
    int num_samples() const { return n_; }

    const OdeModel& model() const { return model_; }  // pipeline model (log form under lognormal)
    const OdeModel& original_model() const { return original_model_; }
    const Mat& working_data() const { return w_; }
    const Vec& grid() const { return grid_; }
    const TestFunctionBasis& basis() const { return basis_; }
    const NoiseModel& noise() const { return noise_; }
    const Vec& b() const { return b_; }

    Vec g(const Vec& p);
    Vec residual(const Vec& p);          // g(p) - b
    Mat residual_jacobian_p(const Vec& p);  // d g / d p, (K*D) x J
    Vec g_second_derivative(const Vec& p, int i, int j);  // d2 g / dp_i dp_j

    Mat covariance_matrix(const Vec& p);
    CovarianceFactor covariance(const Vec& p);
    std::vector<Mat> covariance_derivatives(const Vec& p);
    Mat covariance_second_derivative(const Vec& p, int i, int j);

private:
    void refresh_tables(const Vec& p);
    void scale_columns(const Mat& src, const Vec& weights, Mat& dst) const;

    OdeModel model_;
    OdeModel original_model_;
    TestFunctionBasis basis_;
    Mat w_;      // working data, (M+1) x D
    Vec grid_;
    NoiseModel noise_;

    int dim_state_ = 0, dim_params_ = 0, k_ = 0, n_ = 0;
    Vec b_;
    Mat phidot_gram_;  // phi_dot * phi_dot^T, K x K

    // Value tables at the memoized parameter point, one row per sample.
    Vec table_p_;
    bool tables_ready_ = false;
    Mat tab_f_;         // N x D
    Mat tab_ju_;        // N x (D*D),     col d + D*e        = df_d/du_e
    Mat tab_jp_;        // N x (D*J),     col d + D*j        = df_d/dp_j
    Mat tab_jup_;       // N x (D*D*J),   col d + D*(e+D*j)  = d2f_d/du_e dp_j
    Mat tab_hpp_;       // N x (D*J*J),   col d + D*(i+J*j)  = d2f_d/dp_i dp_j
    Mat tab_hupp_;      // N x (D*D*J*J), col d + D*(e+D*(i+J*j))
    std::vector<char> nz_ju_, nz_jup_, nz_hpp_, nz_hupp_;

    Mat scaled_;  // K x N workspace for diagonal-weighted products
};

// Parameter covariance of the weak estimator at a solution point:
// C = G^+ S (G^+)^T with G the residual Jacobian at p. Throws when G is
// rank deficient, naming the unidentifiable parameter directions.
struct EstimatorUncertainty {
    Mat covariance;           // J x J
    Vec standard_error;       // sqrt of the diagonal
    Vec confidence_radius;    // 2 * standard_error
};

EstimatorUncertainty estimator_covariance(WeakFormProblem& problem, const Vec& p);

}  // namespace wendy
