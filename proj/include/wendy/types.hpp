#pragma once

#include <Eigen/Dense>

#include <cassert>
#include <vector>

namespace wendy {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

enum class NoiseKind { gaussian, lognormal };

// Small dense value tables for higher-order model derivatives. These stay
// tiny (dims are state/parameter counts), so a flat vector with explicit
// strides beats dragging in a tensor library.
class Tensor3 {
public:
    Tensor3() = default;
    Tensor3(int n1, int n2, int n3)
        : n1_(n1), n2_(n2), n3_(n3), v_(static_cast<std::size_t>(n1) * n2 * n3, 0.0) {}

    double& operator()(int i, int j, int k) {
        assert(i >= 0 && i < n1_ && j >= 0 && j < n2_ && k >= 0 && k < n3_);
        return v_[(static_cast<std::size_t>(i) * n2_ + j) * n3_ + k];
    }
    double operator()(int i, int j, int k) const {
        assert(i >= 0 && i < n1_ && j >= 0 && j < n2_ && k >= 0 && k < n3_);
        return v_[(static_cast<std::size_t>(i) * n2_ + j) * n3_ + k];
    }

    void resize(int n1, int n2, int n3) {
        n1_ = n1; n2_ = n2; n3_ = n3;
        v_.assign(static_cast<std::size_t>(n1) * n2 * n3, 0.0);
    }
    void set_zero() { std::fill(v_.begin(), v_.end(), 0.0); }

    int n1() const { return n1_; }
    int n2() const { return n2_; }
    int n3() const { return n3_; }

private:
    int n1_ = 0, n2_ = 0, n3_ = 0;
    std::vector<double> v_;
};

class Tensor4 {
public:
    Tensor4() = default;
    Tensor4(int n1, int n2, int n3, int n4)
        : n1_(n1), n2_(n2), n3_(n3), n4_(n4),
          v_(static_cast<std::size_t>(n1) * n2 * n3 * n4, 0.0) {}

    double& operator()(int i, int j, int k, int l) {
        assert(i >= 0 && i < n1_ && j >= 0 && j < n2_ && k >= 0 && k < n3_ && l >= 0 && l < n4_);
        return v_[((static_cast<std::size_t>(i) * n2_ + j) * n3_ + k) * n4_ + l];
    }
    double operator()(int i, int j, int k, int l) const {
        assert(i >= 0 && i < n1_ && j >= 0 && j < n2_ && k >= 0 && k < n3_ && l >= 0 && l < n4_);
        return v_[((static_cast<std::size_t>(i) * n2_ + j) * n3_ + k) * n4_ + l];
    }

    void resize(int n1, int n2, int n3, int n4) {
        n1_ = n1; n2_ = n2; n3_ = n3; n4_ = n4;
        v_.assign(static_cast<std::size_t>(n1) * n2 * n3 * n4, 0.0);
    }
    void set_zero() { std::fill(v_.begin(), v_.end(), 0.0); }

    int n1() const { return n1_; }
    int n2() const { return n2_; }
    int n3() const { return n3_; }
    int n4() const { return n4_; }

private:
    int n1_ = 0, n2_ = 0, n3_ = 0, n4_ = 0;
    std::vector<double> v_;
};

// Uniform observation grid with M+1 points covering [t0, t1].
Vec uniform_grid(double t0, double t1, int num_intervals);

}  // namespace wendy
