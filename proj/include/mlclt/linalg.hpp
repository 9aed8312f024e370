#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mlclt/error.hpp"

namespace mlclt {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr int kMaxGaussianDim = 8;

// Symmetric positive definite matrix with cached spectral data.
class SpdMatrix {
public:
    explicit SpdMatrix(Matrix m) : m_(std::move(m))
    {
        require(m_.rows() == m_.cols(), "SpdMatrix: matrix not square");
        require(m_.rows() >= 1 && m_.rows() <= kMaxGaussianDim, "SpdMatrix: dimension outside [1, 8]");
        require(m_.allFinite(), "SpdMatrix: non-finite entry");
        require(m_ == m_.transpose(), "SpdMatrix: matrix not exactly symmetric");
        Eigen::LLT<Matrix> llt(m_);
        require(llt.info() == Eigen::Success, "SpdMatrix: Cholesky factorization failed");
        Eigen::SelfAdjointEigenSolver<Matrix> es(m_);
        evals_ = es.eigenvalues();
        evecs_ = es.eigenvectors();
        double top = evals_.cwiseAbs().maxCoeff();
        require(evals_.minCoeff() > 1e-12 * top, "SpdMatrix: smallest eigenvalue below 1e-12*|A|");
        inv_ = evecs_ * evals_.cwiseInverse().asDiagonal() * evecs_.transpose();
        inv_ = 0.5 * (inv_ + inv_.transpose()).eval();
        sqrt_ = evecs_ * evals_.cwiseSqrt().asDiagonal() * evecs_.transpose();
        sqrt_ = 0.5 * (sqrt_ + sqrt_.transpose()).eval();
        log_det_ = evals_.array().log().sum();
    }

    // Averages m with its transpose before validation.
    static SpdMatrix symmetrized(const Matrix& m) { return SpdMatrix(0.5 * (m + m.transpose())); }

    static SpdMatrix identity(int n, double scale = 1.0)
    {
        return SpdMatrix(scale * Matrix::Identity(n, n));
    }

    static SpdMatrix scalar(double v) { return SpdMatrix(Matrix::Constant(1, 1, v)); }

    int dim() const { return static_cast<int>(m_.rows()); }
    const Matrix& matrix() const { return m_; }
    const Matrix& inverse() const { return inv_; }
    const Matrix& sqrt() const { return sqrt_; }
    const Vector& eigenvalues() const { return evals_; }
    double log_det() const { return log_det_; }

    // Operator norms of the matrix functions Λ, Λ^{-1}, Λ^{1/2}, Λ^{-1/2}.
    double norm() const { return evals_.maxCoeff(); }
    double inverse_norm() const { return 1.0 / evals_.minCoeff(); }
    double sqrt_norm() const { return std::sqrt(evals_.maxCoeff()); }
    double inverse_sqrt_norm() const { return 1.0 / std::sqrt(evals_.minCoeff()); }

    SpdMatrix scaled(double t) const { return SpdMatrix(t * m_); }

private:
    Matrix m_;
    Matrix inv_;
    Matrix sqrt_;
    Vector evals_;
    Matrix evecs_;
    double log_det_ = 0.0;
};

// Operator norm of a symmetric matrix (max |eigenvalue|).
inline double matrix_norm(const Matrix& a)
{
    if (a.rows() == 1) return std::abs(a(0, 0));
    if (a.rows() == 2) {
        double m = 0.5 * (a(0, 0) + a(1, 1));
        double d = 0.5 * (a(0, 0) - a(1, 1));
        double r = std::hypot(d, 0.5 * (a(0, 1) + a(1, 0)));
        return std::abs(m) + r;
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(a, Eigen::EigenvaluesOnly);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

// Dense N×N×N tensor, row-major (i, j, k).
class Tensor3 {
public:
    Tensor3() = default;
    explicit Tensor3(int n) : n_(n), data_(static_cast<std::size_t>(n) * n * n, 0.0) {}

    int dim() const { return n_; }
    double& operator()(int i, int j, int k) { return data_[idx(i, j, k)]; }
    double operator()(int i, int j, int k) const { return data_[idx(i, j, k)]; }
    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    Tensor3& operator+=(const Tensor3& o)
    {
        for (std::size_t a = 0; a < data_.size(); ++a) data_[a] += o.data_[a];
        return *this;
    }
    Tensor3& operator*=(double s)
    {
        for (double& v : data_) v *= s;
        return *this;
    }
    friend Tensor3 operator-(Tensor3 a, const Tensor3& b)
    {
        for (std::size_t k = 0; k < a.data_.size(); ++k) a.data_[k] -= b.data_[k];
        return a;
    }

    // B(u, u, u)
    double cubic_form(const Vector& u) const
    {
        double s = 0.0;
        for (int i = 0; i < n_; ++i)
            for (int j = 0; j < n_; ++j)
                for (int k = 0; k < n_; ++k) s += (*this)(i, j, k) * u[i] * u[j] * u[k];
        return s;
    }

    // v_i = B(e_i, u, u)
    Vector contract2(const Vector& u) const
    {
        Vector v = Vector::Zero(n_);
        for (int i = 0; i < n_; ++i)
            for (int j = 0; j < n_; ++j)
                for (int k = 0; k < n_; ++k) v[i] += (*this)(i, j, k) * u[j] * u[k];
        return v;
    }

private:
    std::size_t idx(int i, int j, int k) const
    {
        return (static_cast<std::size_t>(i) * n_ + j) * n_ + k;
    }
    int n_ = 0;
    std::vector<double> data_;
};

namespace detail {

inline double golden_max(auto&& f, double a, double b)
{
    const double g = 0.5 * (std::sqrt(5.0) - 1.0);
    double c = b - g * (b - a), d = a + g * (b - a);
    double fc = f(c), fd = f(d);
    for (int it = 0; it < 80 && b - a > 1e-13; ++it) {
        if (fc > fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    return std::max(fc, fd);
}

} // namespace detail

// Norm max_{|u|=|v|=|w|=1} B(u,v,w) of a symmetric tensor, which equals
// max_{|u|=1} |B(u,u,u)|.
inline double tensor_norm(const Tensor3& b)
{
    const int n = b.dim();
    if (n == 1) return std::abs(b(0, 0, 0));
    if (n == 2) {
        // B(u,u,u) along u = (cos t, sin t) is a cubic trigonometric polynomial.
        const double c0 = b(0, 0, 0);
        const double c1 = b(0, 0, 1) + b(0, 1, 0) + b(1, 0, 0);
        const double c2 = b(0, 1, 1) + b(1, 0, 1) + b(1, 1, 0);
        const double c3 = b(1, 1, 1);
        auto g = [&](double t) {
            double c = std::cos(t), s = std::sin(t);
            return std::abs(c * c * (c0 * c + c1 * s) + s * s * (c2 * c + c3 * s));
        };
        constexpr int grid = 48;
        const double h = std::numbers::pi / grid;
        double best = 0.0;
        int arg = 0;
        for (int a = 0; a < grid; ++a) {
            double v = g(a * h);
            if (v > best) {
                best = v;
                arg = a;
            }
        }
        if (best == 0.0) return 0.0;
        return std::max(best, detail::golden_max(g, (arg - 1) * h, (arg + 1) * h));
    }

    double alpha = 0.0;
    for (double v : b.data()) alpha += std::abs(v);
    if (alpha == 0.0) return 0.0;
    // Shifted symmetric power iteration; the shift makes the ascent monotone.
    auto refine = [&](Vector u) {
        double val = b.cubic_form(u);
        if (val < 0) {
            u = -u;
            val = -val;
        }
        for (int it = 0; it < 2000; ++it) {
            Vector nu = (b.contract2(u) + alpha * u).normalized();
            double nv = b.cubic_form(nu);
            if (nv <= val * (1.0 + 1e-15)) {
                val = std::max(val, nv);
                break;
            }
            u = nu;
            val = nv;
        }
        return val;
    };
    std::vector<Vector> starts;
    for (int i = 0; i < n; ++i) starts.push_back(Vector::Unit(n, i));
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            Vector u = Vector::Zero(n);
            u[i] = 1.0;
            u[j] = 1.0;
            starts.push_back(u.normalized());
            u[j] = -1.0;
            starts.push_back(u.normalized());
        }
    for (int a = 1; a <= 24 * n; ++a) {
        Vector u(n);
        for (int k = 0; k < n; ++k) {
            double x = std::fmod(a * (0.6180339887498949 + 0.41421356237 * k), 1.0);
            u[k] = 2.0 * x - 1.0;
        }
        if (u.norm() > 1e-9) starts.push_back(u.normalized());
    }
    std::vector<std::pair<double, std::size_t>> ranked;
    for (std::size_t s = 0; s < starts.size(); ++s)
        ranked.emplace_back(std::abs(b.cubic_form(starts[s])), s);
    std::sort(ranked.begin(), ranked.end(), [](auto& x, auto& y) { return x.first > y.first; });
    double best = 0.0;
    std::size_t keep = std::min<std::size_t>(ranked.size(), 8);
    for (std::size_t r = 0; r < keep; ++r) best = std::max(best, refine(starts[ranked[r].second]));
    return best;
}

} // namespace mlclt
