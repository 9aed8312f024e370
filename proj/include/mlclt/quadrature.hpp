#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <tuple>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "mlclt/error.hpp"
#include "mlclt/linalg.hpp"

namespace mlclt {

struct Rule1D {
    std::vector<double> nodes;
    std::vector<double> weights;
    std::size_t size() const { return nodes.size(); }
};

namespace detail {

// Golub–Welsch start, Newton polish on the three-term recurrence.
// beta(k) is the k-th off-diagonal entry (k = 1..n-1); poly(x) returns
// {p_n(x), p_n'(x), p_{n-1}(x)} for the orthonormal family.
template <class Beta, class Poly, class Weight>
Rule1D golub_welsch(int n, Beta beta, Poly poly, Weight weight)
{
    Matrix j = Matrix::Zero(n, n);
    for (int k = 1; k < n; ++k) j(k, k - 1) = j(k - 1, k) = beta(k);
    Eigen::SelfAdjointEigenSolver<Matrix> es(j);
    Rule1D r;
    r.nodes.resize(n);
    r.weights.resize(n);
    for (int i = 0; i < n; ++i) {
        double x = es.eigenvalues()[i];
        for (int it = 0; it < 4; ++it) {
            auto [p, dp, pm] = poly(x);
            if (dp == 0.0) break;
            double step = p / dp;
            x -= step;
            if (std::abs(step) < 1e-16 * (1.0 + std::abs(x))) break;
        }
        r.nodes[i] = x;
        r.weights[i] = weight(x);
    }
    // Enforce exact symmetry of the rule about 0.
    for (int i = 0; i < n / 2; ++i) {
        double x = 0.5 * (r.nodes[n - 1 - i] - r.nodes[i]);
        double w = 0.5 * (r.weights[n - 1 - i] + r.weights[i]);
        r.nodes[i] = -x;
        r.nodes[n - 1 - i] = x;
        r.weights[i] = r.weights[n - 1 - i] = w;
    }
    if (n % 2 == 1) r.nodes[n / 2] = 0.0;
    return r;
}

} // namespace detail

// Gauss–Hermite rule for the standard normal law: E f(Z) ≈ Σ w_i f(x_i), Σ w_i = 1.
inline Rule1D gauss_hermite_normal(int n)
{
    require(n >= 1 && n <= 1024, "gauss_hermite_normal: node count outside [1, 1024]");
    // Orthonormal probabilists' Hermite: q_{k+1} = (x q_k - sqrt(k) q_{k-1}) / sqrt(k+1).
    auto poly = [n](double x) {
        double qm = 0.0, q = 1.0;
        for (int k = 0; k < n; ++k) {
            double qn = (x * q - std::sqrt(static_cast<double>(k)) * qm) / std::sqrt(k + 1.0);
            qm = q;
            q = qn;
        }
        return std::tuple<double, double, double>{q, std::sqrt(static_cast<double>(n)) * qm, qm};
    };
    auto weight = [&](double x) {
        auto [p, dp, pm] = poly(x);
        return 1.0 / (n * pm * pm);
    };
    return detail::golub_welsch(n, [](int k) { return std::sqrt(static_cast<double>(k)); }, poly, weight);
}

// Gauss–Legendre rule on [a, b].
inline Rule1D gauss_legendre(int n, double a, double b)
{
    require(n >= 1 && n <= 1024, "gauss_legendre: node count outside [1, 1024]");
    auto poly = [n](double x) {
        double pm = 0.0, p = 1.0;
        for (int k = 0; k < n; ++k) {
            double pn = ((2.0 * k + 1.0) * x * p - k * pm) / (k + 1.0);
            pm = p;
            p = pn;
        }
        double dp = n * (x * p - pm) / (x * x - 1.0);
        return std::tuple<double, double, double>{p, dp, pm};
    };
    auto weight = [&](double x) {
        auto [p, dp, pm] = poly(x);
        return 2.0 / ((1.0 - x * x) * dp * dp);
    };
    auto beta = [](int k) { return k / std::sqrt(4.0 * k * k - 1.0); };
    Rule1D r = detail::golub_welsch(n, beta, poly, weight);
    const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
    for (int i = 0; i < n; ++i) {
        r.nodes[i] = mid + half * r.nodes[i];
        r.weights[i] *= half;
    }
    return r;
}

// Cached standard-normal Gauss–Hermite rules (thread-safe).
inline const Rule1D& cached_gauss_hermite(int n)
{
    static std::mutex mu;
    static std::map<int, std::unique_ptr<Rule1D>> cache;
    std::lock_guard lk(mu);
    auto& slot = cache[n];
    if (!slot) slot = std::make_unique<Rule1D>(gauss_hermite_normal(n));
    return *slot;
}

// Tensor-product Gauss–Hermite grid for the centered Gaussian with covariance
// Λ, built on whitened coordinates z = Λ^{1/2} ζ. Product weights below
// `prune` are dropped.
class GaussianGrid {
public:
    GaussianGrid(const SpdMatrix& cov, int nodes_per_axis, double prune = 1e-22)
    {
        const int dim = cov.dim();
        require(dim <= 3, "GaussianGrid: tensor quadrature supports N <= 3");
        const Rule1D& r = cached_gauss_hermite(nodes_per_axis);
        const int n = static_cast<int>(r.size());
        std::size_t total = 1;
        for (int k = 0; k < dim; ++k) total *= n;
        for (std::size_t flat = 0; flat < total; ++flat) {
            std::size_t rem = flat;
            double w = 1.0;
            Vector zeta(dim);
            for (int k = 0; k < dim; ++k) {
                int i = static_cast<int>(rem % n);
                rem /= n;
                w *= r.weights[i];
                zeta[k] = r.nodes[i];
            }
            if (w < prune) continue;
            weights_.push_back(w);
            points_.push_back(cov.sqrt() * zeta);
        }
    }

    std::size_t size() const { return weights_.size(); }
    const std::vector<Vector>& points() const { return points_; }
    const std::vector<double>& weights() const { return weights_; }

    template <class F>
    double expect(F&& f) const
    {
        double s = 0.0;
        for (std::size_t q = 0; q < weights_.size(); ++q)
            s += weights_[q] * f(points_[q]);
        return s;
    }

private:
    std::vector<Vector> points_;
    std::vector<double> weights_;
};

// Adaptive Gauss–Kronrod (7/15) on a finite interval.
template <class F>
double integrate_adaptive(F&& f, double a, double b, double tol = 1e-13, double* error = nullptr)
{
    double err = 0.0;
    double v = boost::math::quadrature::gauss_kronrod<double, 15>::integrate(f, a, b, 30, tol, &err);
    if (error) *error = err;
    return v;
}

} // namespace mlclt
