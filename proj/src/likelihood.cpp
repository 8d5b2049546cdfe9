#include "wendy/likelihood.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace wendy {

LikelihoodEvaluation nll(WeakFormProblem& problem, const Vec& p) {
    LikelihoodEvaluation out;
    const Vec r = problem.residual(p);
    auto cf = std::make_shared<CovarianceFactor>(problem.covariance(p));

    out.logdet = cf->logdet();
    const Vec w = cf->llt.solve(r);
    out.mahalanobis = r.dot(w);
    out.value = out.logdet + out.mahalanobis;
    out.factor = std::move(cf);
    if (!std::isfinite(out.value))
        throw std::runtime_error("likelihood: non-finite objective value");
    return out;
}

LikelihoodEvaluation nll_with_derivatives(WeakFormProblem& problem, const Vec& p,
                                          bool want_hessian) {
    LikelihoodEvaluation out;
    const int J = problem.dim_params();
    const int n = problem.size();

    const Vec r = problem.residual(p);
    const Mat gjac = problem.residual_jacobian_p(p);
    auto cf = std::make_shared<CovarianceFactor>(problem.covariance(p));
    const std::vector<Mat> ds = problem.covariance_derivatives(p);

    out.logdet = cf->logdet();
    const Vec w = cf->llt.solve(r);
    out.mahalanobis = r.dot(w);
    out.value = out.logdet + out.mahalanobis;
    if (!std::isfinite(out.value))
        throw std::runtime_error("likelihood: non-finite objective value");

    // One explicit inverse per point; the trace terms against dS and d2S then
    // reduce to cheap Frobenius products.
    const Mat sinv = cf->llt.solve(Mat::Identity(n, n));

    Mat v(n, J);   // dS_j * w
    Mat h(n, J);   // S^{-1} * dg_j
    out.gradient = Vec(J);
    for (int j = 0; j < J; ++j) {
        v.col(j).noalias() = ds[j] * w;
        h.col(j) = cf->llt.solve(gjac.col(j));
        out.gradient[j] = sinv.cwiseProduct(ds[j]).sum() + 2.0 * gjac.col(j).dot(w) -
                          w.dot(v.col(j));
    }

    if (want_hessian) {
        Mat q(n, J);  // S^{-1} * v_j
        for (int j = 0; j < J; ++j) q.col(j) = cf->llt.solve(v.col(j));

        // dfac_j = Lc^{-1} dS_j Lc^{-T}, so tr(S^{-1} dS_i S^{-1} dS_j) is the
        // Frobenius product of the factors.
        const auto lc = cf->llt.matrixL();
        std::vector<Mat> dfac(J);
        Mat tmp(n, n);
        for (int j = 0; j < J; ++j) {
            tmp = lc.solve(ds[j]);
            dfac[j] = lc.solve(tmp.transpose()).transpose();
        }

        out.hessian = Mat(J, J);
        for (int i = 0; i < J; ++i) {
            for (int j = i; j < J; ++j) {
                const Mat d2s = problem.covariance_second_derivative(p, i, j);
                const Vec d2g = problem.g_second_derivative(p, i, j);
                double hij = -dfac[i].cwiseProduct(dfac[j]).sum() +
                             sinv.cwiseProduct(d2s).sum();
                hij += 2.0 * d2g.dot(w);
                hij += 2.0 * gjac.col(j).dot(h.col(i));
                hij -= 2.0 * h.col(j).dot(v.col(i));
                hij -= 2.0 * h.col(i).dot(v.col(j));
                hij += v.col(i).dot(q.col(j)) + v.col(j).dot(q.col(i));
                hij -= w.dot(d2s * w);
                out.hessian(i, j) = hij;
                out.hessian(j, i) = hij;
            }
        }
    }

    out.factor = std::move(cf);
    return out;
}

}  // namespace wendy
