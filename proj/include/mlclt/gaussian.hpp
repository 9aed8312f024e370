#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <variant>
#include <vector>

#include "mlclt/error.hpp"
#include "mlclt/linalg.hpp"
#include "mlclt/special.hpp"

namespace mlclt {

// Centered Gaussian law N_Λ.
class GaussianLaw {
public:
    explicit GaussianLaw(SpdMatrix cov)
        : cov_(std::move(cov)),
          log_norm_(-0.5 * cov_.dim() * std::log(2.0 * std::numbers::pi) - 0.5 * cov_.log_det())
    {
    }

    static GaussianLaw standard(int n) { return GaussianLaw(SpdMatrix::identity(n)); }

    int dim() const { return cov_.dim(); }
    const SpdMatrix& covariance() const { return cov_; }

    double pdf(const Vector& x) const
    {
        check(x);
        return std::exp(log_norm_ - 0.5 * x.dot(cov_.inverse() * x));
    }

    GaussianLaw scaled(double t) const { return GaussianLaw(cov_.scaled(t)); }

    void check(const Vector& x) const
    {
        if (x.size() != dim()) throw UsageError("GaussianLaw: dimension mismatch");
    }

private:
    SpdMatrix cov_;
    double log_norm_;
};

inline double gaussian_pdf(const GaussianLaw& law, const Vector& x) { return law.pdf(x); }

// Covariance of N_a * N_b.
inline SpdMatrix gaussian_convolve(const SpdMatrix& a, const SpdMatrix& b)
{
    require(a.dim() == b.dim(), "gaussian_convolve: dimension mismatch");
    return SpdMatrix(a.matrix() + b.matrix());
}

inline Vector gaussian_gradient(const GaussianLaw& law, const Vector& x)
{
    return -(law.covariance().inverse() * x) * law.pdf(x);
}

// (Λ^{-1}x ⊗ Λ^{-1}x − Λ^{-1}) N_Λ(x)
inline Matrix gaussian_hessian(const GaussianLaw& law, const Vector& x)
{
    const Matrix& p = law.covariance().inverse();
    Vector u = p * x;
    return (u * u.transpose() - p) * law.pdf(x);
}

// (P_ij u_k + P_ik u_j + P_jk u_i − u_i u_j u_k) N_Λ(x), u = Λ^{-1}x, P = Λ^{-1}
inline Tensor3 gaussian_third_derivative(const GaussianLaw& law, const Vector& x)
{
    const Matrix& p = law.covariance().inverse();
    Vector u = p * x;
    const double g = law.pdf(x);
    const int n = law.dim();
    Tensor3 t(n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            for (int k = 0; k < n; ++k)
                t(i, j, k) = (p(i, j) * u[k] + p(i, k) * u[j] + p(j, k) * u[i] - u[i] * u[j] * u[k]) * g;
    return t;
}

using DerivativeTensor = std::variant<Matrix, Tensor3>;

inline DerivativeTensor gaussian_derivative_tensor(const GaussianLaw& law, const Vector& x, int order)
{
    if (order == 2) return gaussian_hessian(law, x);
    if (order == 3) return gaussian_third_derivative(law, x);
    throw UsageError("gaussian_derivative_tensor: order must be 2 or 3");
}

inline double tensor_norm(const DerivativeTensor& t)
{
    return std::visit(
        [](const auto& v) {
            if constexpr (std::is_same_v<std::decay_t<decltype(v)>, Matrix>)
                return matrix_norm(v);
            else
                return tensor_norm(v);
        },
        t);
}

// Deterministic point set in the closed unit ball: the center followed by
// `m` points (axis points and a shell on the sphere, Halton points inside).
class BallSampler {
public:
    explicit BallSampler(int dim, int m = 256) : dim_(dim)
    {
        require(dim >= 1 && m >= 2 * dim, "BallSampler: invalid size");
        offsets_.push_back(Vector::Zero(dim));
        if (dim == 1) {
            for (int k = 0; k < m; ++k) offsets_.push_back(Vector::Constant(1, -1.0 + 2.0 * k / (m - 1)));
            return;
        }
        for (int i = 0; i < dim; ++i) {
            offsets_.push_back(Vector::Unit(dim, i));
            offsets_.push_back(-Vector::Unit(dim, i));
        }
        const int rest = m - 2 * dim;
        const int shell = rest / 2;
        for (int k = 0; k < rest; ++k) {
            Vector g(dim);
            for (int c = 0; c < dim; ++c) g[c] = normal_quantile(halton(k + 1, kPrimes[c]));
            double nrm = g.norm();
            if (nrm == 0.0) g = Vector::Unit(dim, 0), nrm = 1.0;
            double radius = k < shell ? 1.0 : std::pow(halton(k + 1, kPrimes[dim]), 1.0 / dim);
            offsets_.push_back(g * (radius / nrm));
        }
    }

    int dim() const { return dim_; }
    const std::vector<Vector>& offsets() const { return offsets_; }

    std::vector<Vector> points(const Vector& center, double r) const
    {
        std::vector<Vector> out;
        out.reserve(offsets_.size());
        for (const auto& o : offsets_) out.push_back(center + r * o);
        return out;
    }

private:
    static constexpr int kPrimes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29};
    static double halton(int index, int base)
    {
        double f = 1.0, r = 0.0;
        while (index > 0) {
            f /= base;
            r += f * (index % base);
            index /= base;
        }
        return r;
    }
    int dim_;
    std::vector<Vector> offsets_;
};

// Sampled osc_r f(x) = sup − inf over the ball (a lower bound of the true value).
template <class F>
double oscillation(F&& f, const Vector& x, double r, const BallSampler& sampler)
{
    double lo = f(x), hi = lo;
    for (const auto& o : sampler.offsets()) {
        double v = f(Vector(x + r * o));
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    return hi - lo;
}

// Sampled sup_{a,b} |F(a) − F(b)| for matrix- or tensor-valued F given the
// values at the sample points.
inline double pairwise_oscillation(const std::vector<Matrix>& vals)
{
    double best = 0.0;
    for (std::size_t a = 0; a < vals.size(); ++a)
        for (std::size_t b = a + 1; b < vals.size(); ++b) best = std::max(best, matrix_norm(vals[a] - vals[b]));
    return best;
}

inline double pairwise_oscillation(const std::vector<Tensor3>& vals)
{
    if (!vals.empty() && vals.front().dim() == 1) {
        double lo = vals.front()(0, 0, 0), hi = lo;
        for (const auto& t : vals) {
            lo = std::min(lo, t(0, 0, 0));
            hi = std::max(hi, t(0, 0, 0));
        }
        return hi - lo;
    }
    double best = 0.0;
    for (std::size_t a = 0; a < vals.size(); ++a)
        for (std::size_t b = a + 1; b < vals.size(); ++b) best = std::max(best, tensor_norm(vals[a] - vals[b]));
    return best;
}

struct BoundCertificateRow {
    Vector point;
    double second_ratio = 0.0; // |∇²N_Λ| / (3(1+τ)^{(N+2)/2} τ^{-1} |Λ^{-1}| N_{(1+τ)Λ})
    double third_ratio = 0.0;  // |∇³N_Λ| / (5(1+τ)^{(N+3)/2} τ^{-3/2} |Λ^{-1/2}|³ N_{(1+τ)Λ})
    double osc_ratio = 0.0;    // osc_r N_{δ²Λ} / ((r/δ) 20 τ^{-1/2} (1+τ)^{N/2} |Λ^{-1/2}| N_{(1+τ)δ²Λ})
};

struct BoundCertificateReport {
    double tau = 0.0;
    double delta = 0.0;
    double radius = 0.0; // r used for the oscillation bound
    std::vector<BoundCertificateRow> rows;
    double max_ratio = 0.0;
};

// Evaluates the three Gaussian bounds at each point. The oscillation radius is
// the largest admissible one, r = τδ|Λ^{-1}|^{-1/2}/4, unless `radius` > 0.
inline BoundCertificateReport gaussian_bound_certificates(const GaussianLaw& law, double tau,
                                                          const std::vector<Vector>& points,
                                                          double delta = 1.0, double radius = 0.0)
{
    require(tau > 0.0 && tau <= 1.0, "gaussian_bound_certificates: tau outside (0,1]");
    require(delta > 0.0, "gaussian_bound_certificates: delta must be positive");
    const SpdMatrix& cov = law.covariance();
    const double n = law.dim();
    const double r_max = 0.25 * tau * delta / std::sqrt(cov.inverse_norm());
    require(radius <= r_max * (1.0 + 1e-12), "gaussian_bound_certificates: radius above admissible bound");

    BoundCertificateReport rep;
    rep.tau = tau;
    rep.delta = delta;
    rep.radius = radius > 0.0 ? radius : r_max;
    if (points.empty()) return rep;

    const GaussianLaw wide = law.scaled(1.0 + tau);
    const GaussianLaw narrow = law.scaled(delta * delta);
    const GaussianLaw narrow_wide = law.scaled((1.0 + tau) * delta * delta);
    const double c2 = 3.0 * std::pow(1.0 + tau, (n + 2.0) / 2.0) / tau * cov.inverse_norm();
    const double c3 = 5.0 * std::pow(1.0 + tau, (n + 3.0) / 2.0) * std::pow(tau, -1.5)
                      * std::pow(cov.inverse_sqrt_norm(), 3);
    const double c_osc = rep.radius / delta * 20.0 / std::sqrt(tau) * std::pow(1.0 + tau, n / 2.0)
                         * cov.inverse_sqrt_norm();
    const BallSampler sampler(law.dim());

    for (const auto& z : points) {
        law.check(z);
        BoundCertificateRow row;
        row.point = z;
        const double base = wide.pdf(z);
        row.second_ratio = matrix_norm(gaussian_hessian(law, z)) / (c2 * base);
        row.third_ratio = tensor_norm(gaussian_third_derivative(law, z)) / (c3 * base);
        double osc = oscillation([&](const Vector& y) { return narrow.pdf(y); }, z, rep.radius, sampler);
        row.osc_ratio = osc / (c_osc * narrow_wide.pdf(z));
        rep.max_ratio = std::max({rep.max_ratio, row.second_ratio, row.third_ratio, row.osc_ratio});
        rep.rows.push_back(std::move(row));
    }
    return rep;
}

} // namespace mlclt
