#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <numbers>
#include <vector>

#include "mlclt/distance.hpp"
#include "mlclt/error.hpp"
#include "mlclt/gaussian.hpp"
#include "mlclt/linalg.hpp"
#include "mlclt/parallel.hpp"
#include "mlclt/quadrature.hpp"

namespace mlclt {

// s_nodes: Gauss–Legendre order per θ-panel (s = sin²θ); panels double in
// length away from θ0 = asin ε. z_nodes_per_axis: Gauss–Hermite order for
// the inner Gaussian integral.
struct QuadratureSpec {
    int s_nodes = 16;
    int z_nodes_per_axis = 32;
    int refinement_factor = 2;

    static QuadratureSpec for_dim(int n)
    {
        QuadratureSpec q;
        q.z_nodes_per_axis = n == 1 ? 48 : (n == 2 ? 24 : 16);
        return q;
    }
    QuadratureSpec refined() const
    {
        return {s_nodes * refinement_factor, z_nodes_per_axis * refinement_factor, refinement_factor};
    }
};

// f_ε together with its first three derivatives at one point.
struct SteinJet {
    double value = 0.0;
    Vector grad;
    Matrix hess;
    Tensor3 third;
};

// f_ε(x) = ½∫_{ε²}^1 (E φ(√(1−s)x − √s Z) − E φ(Z)) ds/(1−s), Z ~ N_Λ.
// With s = sin²θ and integration by parts in z:
//   f      = ∫ tanθ        (E φ(cosθ x − sinθ Z) − Eφ) dθ
//   ∇f     = ∫             ∫ φ(cosθ x − sinθ z) ∇N_Λ(z) dz dθ
//   ∇²f    = ∫ cotθ        ∫ φ(cosθ x − sinθ z) ∇²N_Λ(z) dz dθ
//   ∇³f    = ∫ cot²θ       ∫ φ(cosθ x − sinθ z) ∇³N_Λ(z) dz dθ
// over θ ∈ [asin ε, π/2].
class SteinSolution {
public:
    SteinSolution(TestFunction phi, GaussianLaw law, double eps, QuadratureSpec quad)
        : phi_(std::move(phi)), law_(std::move(law)), eps_(eps), quad_(quad)
    {
        require(eps > 0.0 && eps < 1.0, "SteinSolution: eps outside (0,1)");
        require(quad.s_nodes >= 16 && quad.z_nodes_per_axis >= 16, "SteinSolution: quadrature orders below 16");
        require(quad.refinement_factor == 2, "SteinSolution: refinement factor must be 2");
        const int n = law_.dim();
        require(n <= 3, "SteinSolution: N <= 3 supported");
        grid_ = std::make_shared<GaussianGrid>(law_.covariance(), quad.z_nodes_per_axis, 1e-18);

        const Matrix& p = law_.covariance().inverse();
        const std::size_t q = grid_->size();
        u_.resize(q);
        for (std::size_t k = 0; k < q; ++k) u_[k] = p * grid_->points()[k];

        mean_ = grid_->expect([&](const Vector& z) { return phi_(Vector(-z)); });
        require(std::isfinite(mean_), "SteinSolution: E[phi] not finite");

        const double theta0 = std::asin(eps);
        const double top = std::numbers::pi / 2;
        std::vector<double> edges{theta0};
        double len = theta0;
        while (edges.back() + 1.5 * len < top) {
            edges.push_back(edges.back() + len);
            len *= 2.0;
        }
        edges.push_back(top);
        for (std::size_t e = 0; e + 1 < edges.size(); ++e) {
            Rule1D r = gauss_legendre(quad.s_nodes, edges[e], edges[e + 1]);
            for (std::size_t k = 0; k < r.size(); ++k) {
                ThetaNode t;
                t.c = std::cos(r.nodes[k]);
                t.s = std::sin(r.nodes[k]);
                t.w0 = r.weights[k] * t.s / t.c;
                t.w1 = r.weights[k];
                t.w2 = r.weights[k] * t.c / t.s;
                t.w3 = r.weights[k] * (t.c * t.c) / (t.s * t.s);
                theta_.push_back(t);
            }
        }
    }

    SteinSolution(TestFunction phi, GaussianLaw law, double eps)
        : SteinSolution(std::move(phi), law, eps, QuadratureSpec::for_dim(law.dim()))
    {
    }

    const TestFunction& phi() const { return phi_; }
    const GaussianLaw& law() const { return law_; }
    double eps() const { return eps_; }
    const QuadratureSpec& quadrature() const { return quad_; }
    double phi_mean() const { return mean_; }

    SteinSolution refined() const { return SteinSolution(phi_, law_, eps_, quad_.refined()); }

    // φ_ε(x) on the same Gaussian grid.
    double mollified_phi(const Vector& x) const
    {
        law_.check(x);
        const double c = std::sqrt(1.0 - eps_ * eps_);
        Vector y(x.size());
        return grid_->expect([&](const Vector& z) {
            y = c * x - eps_ * z;
            return phi_(y);
        });
    }

    // order: highest derivative wanted (0..3).
    SteinJet jet(const Vector& x, int order = 3) const
    {
        law_.check(x);
        require(order >= 0 && order <= 3, "SteinSolution::jet: order outside [0,3]");
        const int n = law_.dim();
        const Matrix& p = law_.covariance().inverse();
        const auto& pts = grid_->points();
        const auto& wts = grid_->weights();
        const std::size_t q = pts.size();

        // Moments of φ against the polynomial factors of the kernels, per θ.
        double val = 0.0;
        Vector m1 = Vector::Zero(n);
        Matrix m2 = Matrix::Zero(n, n);
        Tensor3 m3(n);
        double m0_acc = 0.0;
        Vector y(n);
        std::vector<double> fv(q);

        for (const auto& t : theta_) {
            double s0 = 0.0;
            for (std::size_t k = 0; k < q; ++k) {
                y = t.c * x - t.s * pts[k];
                fv[k] = wts[k] * phi_(y);
                s0 += fv[k];
            }
            val += t.w0 * (s0 - mean_);
            m0_acc += t.w2 * s0;
            if (order >= 1) {
                Vector a1 = Vector::Zero(n);
                Matrix a2 = Matrix::Zero(n, n);
                for (std::size_t k = 0; k < q; ++k) {
                    a1.noalias() += fv[k] * u_[k];
                    if (order >= 2) a2.noalias() += fv[k] * (u_[k] * u_[k].transpose());
                }
                m1 -= t.w1 * a1;
                if (order >= 2) m2 += t.w2 * a2;
                if (order >= 3) {
                    // ∇³N/N = sym(P ⊗ u) − u⊗u⊗u
                    for (int i = 0; i < n; ++i)
                        for (int j = 0; j < n; ++j)
                            for (int l = 0; l < n; ++l) {
                                double cubic = 0.0;
                                for (std::size_t k = 0; k < q; ++k) cubic += fv[k] * u_[k][i] * u_[k][j] * u_[k][l];
                                m3(i, j, l) += t.w3 * (p(i, j) * a1[l] + p(i, l) * a1[j] + p(j, l) * a1[i] - cubic);
                            }
                }
            }
        }
        SteinJet out;
        out.value = val;
        out.grad = m1;
        out.hess = m2 - m0_acc * p;
        out.third = std::move(m3);
        return out;
    }

private:
    struct ThetaNode {
        double c, s, w0, w1, w2, w3;
    };
    TestFunction phi_;
    GaussianLaw law_;
    double eps_;
    QuadratureSpec quad_;
    std::shared_ptr<GaussianGrid> grid_;
    std::vector<Vector> u_;
    std::vector<ThetaNode> theta_;
    double mean_ = 0.0;
};

inline double stein_eval(const SteinSolution& sol, const Vector& x) { return sol.jet(x, 0).value; }

inline DerivativeTensor stein_derivative(const SteinSolution& sol, const Vector& x, int order)
{
    if (order == 2) return sol.jet(x, 2).hess;
    if (order == 3) return sol.jet(x, 3).third;
    throw UsageError("stein_derivative: order must be 2 or 3");
}

inline Vector stein_gradient(const SteinSolution& sol, const Vector& x) { return sol.jet(x, 1).grad; }

namespace detail {

inline double max_abs_diff(const SteinJet& a, const SteinJet& b, int order)
{
    double d = std::abs(a.value - b.value) / std::max(1.0, std::abs(b.value));
    if (order >= 1) d = std::max(d, (a.grad - b.grad).norm() / std::max(1.0, b.grad.norm()));
    if (order >= 2) d = std::max(d, matrix_norm(a.hess - b.hess) / std::max(1.0, matrix_norm(b.hess)));
    if (order >= 3) d = std::max(d, tensor_norm(a.third - b.third) / std::max(1.0, tensor_norm(b.third)));
    return d;
}

} // namespace detail

// As SteinSolution::jet, but repeats the evaluation with doubled node counts
// and throws NumericalError if any component moves by more than 1e-6·max(1, |v|).
inline SteinJet stein_jet_checked(const SteinSolution& sol, const Vector& x, int order = 3)
{
    SteinJet a = sol.jet(x, order);
    SteinJet b = sol.refined().jet(x, order);
    if (detail::max_abs_diff(a, b, order) > 1e-6)
        throw NumericalError("stein: node doubling changed the result by more than 1e-6");
    return b;
}

inline double stein_eval_checked(const SteinSolution& sol, const Vector& x) { return stein_jet_checked(sol, x, 0).value; }

// |−Λ:∇²f_ε + x·∇f_ε − φ_ε + ∫φ_ε dN_Λ| at x.
inline double stein_residual(const SteinSolution& sol, const Vector& x)
{
    SteinJet j = sol.jet(x, 2);
    double lap = (sol.law().covariance().matrix().cwiseProduct(j.hess)).sum();
    return std::abs(-lap + x.dot(j.grad) - sol.mollified_phi(x) + sol.phi_mean());
}

struct ThirdDerivativeReport {
    double bound = 0.0; // 15 |Λ^{-1}| ε^{-N}
    double max_norm = 0.0;
    double max_ratio = 0.0;
    Vector argmax;
};

inline ThirdDerivativeReport third_derivative_certificate(const SteinSolution& sol, const std::vector<Vector>& points,
                                                          unsigned threads = 1)
{
    ThirdDerivativeReport rep;
    const int n = sol.law().dim();
    rep.bound = 15.0 * sol.law().covariance().inverse_norm() * std::pow(sol.eps(), -n);
    std::vector<double> norms(points.size());
    parallel_for(points.size(), threads, [&](std::size_t b, std::size_t e) {
        for (std::size_t k = b; k < e; ++k) norms[k] = tensor_norm(sol.jet(points[k], 3).third);
    });
    for (std::size_t k = 0; k < points.size(); ++k)
        if (norms[k] > rep.max_norm || rep.argmax.size() == 0) {
            rep.max_norm = norms[k];
            rep.argmax = points[k];
        }
    rep.max_ratio = rep.max_norm / rep.bound;
    return rep;
}

enum class MajorantKind { H, Hprime };

// Gaussian convolution and ball sampling used for the majorants.
struct MajorantSpec {
    int conv_nodes = 0;   // Gauss–Hermite order per axis; 0 picks 12 for N = 1, 8 above
    int ball_points = 64; // ball sample size (plus the center)

    int nodes_for(int n) const { return conv_nodes > 0 ? conv_nodes : (n == 1 ? 12 : 8); }
};

namespace detail {

inline double sampled_derivative_oscillation(const SteinSolution& sol, MajorantKind kind, const Vector& x, double r,
                                             const BallSampler& ball)
{
    if (kind == MajorantKind::H) {
        std::vector<Matrix> vals;
        vals.push_back(sol.jet(x, 2).hess);
        for (const auto& o : ball.offsets()) vals.push_back(sol.jet(Vector(x + r * o), 2).hess);
        return pairwise_oscillation(vals);
    }
    std::vector<Tensor3> vals;
    vals.push_back(sol.jet(x, 3).third);
    for (const auto& o : ball.offsets()) vals.push_back(sol.jet(Vector(x + r * o), 3).third);
    return pairwise_oscillation(vals);
}

} // namespace detail

// H_δ^ε(x) = 2 (N_{δ²Id} * osc_{Kδ} ∇²f_ε)(x) and
// H'_{ε,δ}(x) = |∇³f_ε(x)| + 2 (N_{δ²Id} * osc_{Kδ} ∇³f_ε)(x), K = 2√N + 1.
inline double oscillation_majorant(const SteinSolution& sol, double delta, MajorantKind kind, const Vector& x,
                                   MajorantSpec spec = {})
{
    require(delta > 0.0, "oscillation_majorant: delta must be positive");
    const int n = sol.law().dim();
    const double k = 2.0 * std::sqrt(static_cast<double>(n)) + 1.0;
    const BallSampler ball(n, std::max(spec.ball_points, 2 * n));
    GaussianGrid conv(SpdMatrix::identity(n, delta * delta), spec.nodes_for(n), 1e-14);
    double avg = conv.expect([&](const Vector& w) {
        return detail::sampled_derivative_oscillation(sol, kind, Vector(x + w), k * delta, ball);
    });
    double out = 2.0 * avg;
    if (kind == MajorantKind::Hprime) out += tensor_norm(sol.jet(x, 3).third);
    return out;
}

struct MajorantAverageReport {
    double average = 0.0; // ∫ H dN_Λ (or ∫ H' dN_Λ)
    double bound = 0.0;
    double ratio = 0.0;
};

// ∫ H dN_Λ = 2 E[osc_{Kδ}∇²f_ε(Y)], Y ~ N(Λ + δ²Id); H' adds ∫|∇³f_ε| dN_Λ.
// Bounds: 10² N^{3/2}|Λ^{-1}||log ε|δ and 10² N³|Λ^{-1/2}|²(|log ε| + |Λ^{-1/2}|δ/ε).
inline MajorantAverageReport majorant_gaussian_average(const SteinSolution& sol, double delta, MajorantKind kind,
                                                       MajorantSpec spec = {}, unsigned threads = 1)
{
    require(delta > 0.0, "majorant_gaussian_average: delta must be positive");
    const GaussianLaw& law = sol.law();
    const int n = law.dim();
    const double k = 2.0 * std::sqrt(static_cast<double>(n)) + 1.0;
    const BallSampler ball(n, std::max(spec.ball_points, 2 * n));
    SpdMatrix wide(law.covariance().matrix() + delta * delta * Matrix::Identity(n, n));
    GaussianGrid grid(wide, spec.nodes_for(n), 1e-14);

    std::vector<double> osc(grid.size());
    parallel_for(grid.size(), threads, [&](std::size_t b, std::size_t e) {
        for (std::size_t q = b; q < e; ++q)
            osc[q] = detail::sampled_derivative_oscillation(sol, kind, grid.points()[q], k * delta, ball);
    });
    NeumaierSum acc;
    for (std::size_t q = 0; q < grid.size(); ++q) acc.add(grid.weights()[q] * osc[q]);

    MajorantAverageReport rep;
    rep.average = 2.0 * acc.value();
    const double le = std::abs(std::log(sol.eps()));
    if (kind == MajorantKind::H) {
        rep.bound = 100.0 * std::pow(n, 1.5) * law.covariance().inverse_norm() * le * delta;
    } else {
        GaussianGrid base(law.covariance(), spec.nodes_for(n), 1e-14);
        std::vector<double> t(base.size());
        parallel_for(base.size(), threads, [&](std::size_t b, std::size_t e) {
            for (std::size_t q = b; q < e; ++q) t[q] = tensor_norm(sol.jet(base.points()[q], 3).third);
        });
        NeumaierSum a3;
        for (std::size_t q = 0; q < base.size(); ++q) a3.add(base.weights()[q] * t[q]);
        rep.average += a3.value();
        const double is = law.covariance().inverse_sqrt_norm();
        rep.bound = 100.0 * std::pow(n, 3.0) * is * is * (le + is * delta / sol.eps());
    }
    rep.ratio = rep.average / rep.bound;
    return rep;
}

} // namespace mlclt
