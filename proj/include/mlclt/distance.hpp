#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mlclt/error.hpp"
#include "mlclt/gaussian.hpp"
#include "mlclt/linalg.hpp"
#include "mlclt/parallel.hpp"
#include "mlclt/quadrature.hpp"
#include "mlclt/rng.hpp"
#include "mlclt/special.hpp"

namespace mlclt {

inline constexpr double kUnbounded = std::numeric_limits<double>::infinity();

struct TestFunction {
    std::function<double(const Vector&)> eval;
    double lipschitz = kUnbounded;
    std::string label;

    double operator()(const Vector& x) const { return eval(x); }
};

// Finite-support law on R^N.
class DiscreteLaw {
public:
    struct Atom {
        Vector value;
        double prob;
    };

    explicit DiscreteLaw(std::vector<Atom> atoms) : atoms_(std::move(atoms))
    {
        require(!atoms_.empty(), "DiscreteLaw: no atoms");
        NeumaierSum total;
        for (const auto& a : atoms_) {
            require(a.prob >= 0.0, "DiscreteLaw: negative probability");
            require(a.value.size() == atoms_.front().value.size(), "DiscreteLaw: mixed dimensions");
            total.add(a.prob);
        }
        require(std::abs(total.value() - 1.0) <= 1e-12, "DiscreteLaw: probabilities do not sum to 1");
    }

    // Scalar law from values and probabilities; sorts and merges equal values.
    static DiscreteLaw scalar(std::vector<double> values, std::vector<double> probs)
    {
        require(values.size() == probs.size(), "DiscreteLaw: size mismatch");
        std::vector<std::size_t> order(values.size());
        for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
        std::sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
        std::vector<Atom> atoms;
        std::vector<NeumaierSum> mass;
        for (auto k : order) {
            if (atoms.empty() || atoms.back().value[0] != values[k]) {
                atoms.push_back({Vector::Constant(1, values[k]), 0.0});
                mass.emplace_back();
            }
            mass.back().add(probs[k]);
        }
        for (std::size_t a = 0; a < atoms.size(); ++a) atoms[a].prob = mass[a].value();
        return DiscreteLaw(std::move(atoms));
    }

    int dim() const { return static_cast<int>(atoms_.front().value.size()); }
    const std::vector<Atom>& atoms() const { return atoms_; }

    double mean_scalar() const
    {
        NeumaierSum s;
        for (const auto& a : atoms_) s.add(a.prob * a.value[0]);
        return s.value();
    }

private:
    std::vector<Atom> atoms_;
};

// n draws of an R^N-valued statistic, one per row.
struct SampleSet {
    Matrix values;
    std::uint64_t master_seed = 0;

    SampleSet() = default;
    SampleSet(Matrix v, std::uint64_t seed) : values(std::move(v)), master_seed(seed)
    {
        require(values.rows() >= 1, "SampleSet: empty");
        require(values.allFinite(), "SampleSet: non-finite entry");
    }

    static SampleSet scalar(const std::vector<double>& v, std::uint64_t seed = 0)
    {
        Matrix m(static_cast<Eigen::Index>(v.size()), 1);
        for (std::size_t k = 0; k < v.size(); ++k) m(static_cast<Eigen::Index>(k), 0) = v[k];
        return SampleSet(std::move(m), seed);
    }

    std::size_t n() const { return static_cast<std::size_t>(values.rows()); }
    int dim() const { return static_cast<int>(values.cols()); }
    std::vector<double> column(int c) const
    {
        std::vector<double> out(n());
        for (std::size_t k = 0; k < out.size(); ++k) out[k] = values(static_cast<Eigen::Index>(k), c);
        return out;
    }
};

// E f(Z), Z ~ N_Λ. Adaptive Gauss–Kronrod for N = 1, tensor Gauss–Hermite above.
template <class F>
double gaussian_expectation(const GaussianLaw& law, F&& f, int nodes = 64)
{
    if (law.dim() == 1) {
        const double sd = std::sqrt(law.covariance().matrix()(0, 0));
        Vector x(1);
        auto g = [&](double z) {
            x[0] = sd * z;
            return f(x) * normal_pdf(z);
        };
        return integrate_adaptive(g, -12.0, 12.0);
    }
    GaussianGrid grid(law.covariance(), nodes);
    return grid.expect(f);
}

// Canonical members: φ(x) = s·ρ_c(a·x − b) with the soft clip
// ρ_c(t) = (log cosh(t + c) − log cosh(t − c))/2, |a| = 1.
// ρ_c' = (tanh(t + c) − tanh(t − c))/2 ∈ (0, tanh c], so |∇φ| ≤ s and osc_r φ ≤ 2rs.
inline double log_cosh(double t)
{
    t = std::abs(t);
    return t + std::log1p(std::exp(-2.0 * t)) - std::numbers::ln2;
}

inline double soft_clip(double t, double c) { return 0.5 * (log_cosh(t + c) - log_cosh(t - c)); }

inline TestFunction soft_clip_function(const Vector& direction, double scale, double width, double offset)
{
    require(scale > 0.0 && width > 0.0, "soft_clip_function: scale and width must be positive");
    Vector a = direction.normalized();
    TestFunction f;
    f.eval = [a, scale, width, offset](const Vector& x) { return scale * soft_clip(a.dot(x) - offset, width); };
    f.lipschitz = scale * std::tanh(width);
    f.label = "softclip(s=" + std::to_string(scale) + ",c=" + std::to_string(width)
              + ",b=" + std::to_string(offset) + ")";
    return f;
}

inline TestFunction linear_function(const Vector& a)
{
    TestFunction f;
    f.eval = [a](const Vector& x) { return a.dot(x); };
    f.lipschitz = a.norm();
    f.label = "linear";
    return f;
}

inline TestFunction constant_function(double c)
{
    TestFunction f;
    f.eval = [c](const Vector&) { return c; };
    f.lipschitz = 0.0;
    f.label = "constant";
    return f;
}

// Soft clips with s = 1/2, c ∈ {1/2, 3/2}, b ∈ {0, 1/2}, along e_1 and, for
// N ≥ 2, along the diagonal (1, 1, 0, ...)/√2.
inline std::vector<TestFunction> canonical_family(int n)
{
    std::vector<Vector> dirs{Vector::Unit(n, 0)};
    if (n >= 2) {
        Vector v = Vector::Zero(n);
        v[0] = v[1] = 1.0;
        dirs.push_back(v.normalized());
    }
    std::vector<TestFunction> out;
    for (const auto& a : dirs)
        for (double c : {0.5, 1.5})
            for (double b : {0.0, 0.5}) out.push_back(soft_clip_function(a, 0.5, c, b));
    return out;
}

// φ_ε(x) = ∫ φ(√(1−ε²)x − εz) N_Λ(z) dz. Throws NumericalError when a node
// doubling at a few probe points moves the value by more than 1e-6.
inline TestFunction mollify(const TestFunction& phi, double eps, const GaussianLaw& law, int nodes = 64)
{
    require(eps > 0.0 && eps < 1.0, "mollify: eps outside (0,1)");
    const double c = std::sqrt(1.0 - eps * eps);
    const int n = law.dim();
    TestFunction out;
    out.lipschitz = phi.lipschitz * c;
    out.label = "mollified(" + phi.label + ")";

    if (n == 1) {
        const double sd = std::sqrt(law.covariance().matrix()(0, 0));
        auto f = phi.eval;
        out.eval = [f, c, eps, sd](const Vector& x) {
            require(x.size() == 1, "mollified function: dimension mismatch");
            Vector y(1);
            double err = 0.0;
            auto g = [&](double z) {
                y[0] = c * x[0] - eps * sd * z;
                return f(y) * normal_pdf(z);
            };
            double v = integrate_adaptive(g, -12.0, 12.0, 1e-13, &err);
            if (!(err <= 1e-6 * std::max(1.0, std::abs(v))))
                throw NumericalError("mollify: adaptive quadrature did not converge");
            return v;
        };
        return out;
    }

    auto grid = std::make_shared<GaussianGrid>(law.covariance(), nodes);
    auto f = phi.eval;
    auto eval_with = [f, c, eps](const GaussianGrid& g, const Vector& x) {
        Vector y(x.size());
        return g.expect([&](const Vector& z) {
            y = c * x - eps * z;
            return f(y);
        });
    };
    {
        GaussianGrid fine(law.covariance(), 2 * nodes);
        std::vector<Vector> probes{Vector::Zero(n)};
        for (int i = 0; i < n; ++i) probes.push_back(law.covariance().sqrt().col(i));
        for (const auto& p : probes) {
            double a = eval_with(*grid, p), b = eval_with(fine, p);
            if (std::abs(a - b) > 1e-6 * std::max(1.0, std::abs(b)))
                throw NumericalError("mollify: node doubling changed the value by more than 1e-6");
        }
    }
    out.eval = [grid, eval_with](const Vector& x) { return eval_with(*grid, x); };
    return out;
}

struct MembershipReport {
    bool pass = false;
    double worst_ratio = 0.0; // max over (r, x0) of ∫ osc_r φ N_Λ(· − x0) / r
    double worst_r = 0.0;
    Vector worst_x0;
    double max_gradient = 0.0; // finite-difference estimate over the probe points
    bool gradient_ok = true;
};

// Checks both requirements of the class Φ_Λ^{L̄} on the given grids. The
// oscillation is sampled, so a 5% margin is allowed on the integral condition.
inline MembershipReport class_membership_check(const TestFunction& phi, const GaussianLaw& law, double lbar,
                                               const std::vector<double>& r_grid,
                                               const std::vector<Vector>& x0_grid, int nodes = 0)
{
    require(!r_grid.empty() && !x0_grid.empty(), "class_membership_check: empty grid");
    const int n = law.dim();
    if (nodes <= 0) nodes = n == 1 ? 48 : (n == 2 ? 24 : 12);
    const BallSampler sampler(n);
    GaussianGrid grid(law.covariance(), nodes, 1e-16);
    MembershipReport rep;

    for (double r : r_grid) {
        require(r > 0.0, "class_membership_check: r must be positive");
        for (const auto& x0 : x0_grid) {
            law.check(x0);
            double integral = grid.expect([&](const Vector& z) { return oscillation(phi.eval, Vector(x0 + z), r, sampler); });
            double ratio = integral / r;
            if (ratio > rep.worst_ratio || rep.worst_x0.size() == 0) {
                rep.worst_ratio = ratio;
                rep.worst_r = r;
                rep.worst_x0 = x0;
            }
        }
    }

    const double h = 1e-5;
    for (const auto& x0 : x0_grid) {
        for (const auto& z : grid.points()) {
            Vector x = x0 + z, g(n);
            for (int i = 0; i < n; ++i) {
                Vector e = Vector::Unit(n, i) * h;
                g[i] = (phi(x + e) - phi(x - e)) / (2.0 * h);
            }
            rep.max_gradient = std::max(rep.max_gradient, g.norm());
        }
    }
    rep.gradient_ok = !(rep.max_gradient > lbar * (1.0 + 1e-6));
    rep.pass = rep.gradient_ok && rep.worst_ratio <= 1.05;
    return rep;
}

namespace detail {

// ∫_p^q |a − σΦ^{-1}(u)| du using ∫Φ^{-1} = −φ(Φ^{-1}(u)).
inline double quantile_gap(double a, double sigma, double p, double q)
{
    if (q <= p) return 0.0;
    auto prim = [sigma](double u) {
        if (u <= 0.0 || u >= 1.0) return 0.0;
        return -sigma * normal_pdf(normal_quantile(u));
    };
    double us = std::clamp(normal_cdf(a / sigma), p, q);
    double gp = prim(p), gs = prim(us), gq = prim(q);
    double left = a * (us - p) - (gs - gp);
    double right = (gq - gs) - a * (q - us);
    return std::max(0.0, left) + std::max(0.0, right);
}

} // namespace detail

// W1 between a scalar finite-support law and N(0, σ²), exact up to rounding.
inline double w1_discrete_vs_gaussian(const DiscreteLaw& law, double sigma2)
{
    require(sigma2 > 0.0, "w1_discrete_vs_gaussian: sigma2 must be positive");
    require(law.dim() == 1, "w1_discrete_vs_gaussian: scalar law required");
    const double sigma = std::sqrt(sigma2);
    std::vector<std::pair<double, double>> atoms;
    for (const auto& a : law.atoms()) atoms.emplace_back(a.value[0], a.prob);
    std::sort(atoms.begin(), atoms.end());
    NeumaierSum total, cum;
    double p = 0.0;
    for (std::size_t k = 0; k < atoms.size(); ++k) {
        cum.add(atoms[k].second);
        double q = k + 1 == atoms.size() ? 1.0 : std::min(1.0, cum.value());
        total.add(detail::quantile_gap(atoms[k].first, sigma, p, q));
        p = q;
    }
    return total.value();
}

// W1 between the empirical law of scalar samples and N(0, σ²).
inline double w1_empirical_gaussian(std::span<const double> samples, double sigma2)
{
    require(sigma2 > 0.0, "w1_empirical_gaussian: sigma2 must be positive");
    require(samples.size() >= 1, "w1_empirical_gaussian: no samples");
    std::vector<double> x(samples.begin(), samples.end());
    std::sort(x.begin(), x.end());
    const double sigma = std::sqrt(sigma2);
    const double n = static_cast<double>(x.size());
    NeumaierSum total;
    // Runs of equal values form one interval, matching the merged atom law.
    std::size_t i = 0;
    double p = 0.0;
    while (i < x.size()) {
        std::size_t j = i;
        while (j < x.size() && x[j] == x[i]) ++j;
        double q = j == x.size() ? 1.0 : j / n;
        total.add(detail::quantile_gap(x[i], sigma, p, q));
        p = q;
        i = j;
    }
    return total.value();
}

inline double w1_empirical_gaussian(const SampleSet& s, double sigma2)
{
    require(s.dim() == 1, "w1_empirical_gaussian: scalar samples required");
    auto col = s.column(0);
    return w1_empirical_gaussian(std::span<const double>(col), sigma2);
}

// W1 = ∫|F_a − F_b| between two scalar finite-support laws.
inline double w1_discrete(const DiscreteLaw& a, const DiscreteLaw& b)
{
    require(a.dim() == 1 && b.dim() == 1, "w1_discrete: scalar laws required");
    std::vector<std::pair<double, double>> ev; // value, signed mass
    for (const auto& x : a.atoms()) ev.emplace_back(x.value[0], x.prob);
    for (const auto& x : b.atoms()) ev.emplace_back(x.value[0], -x.prob);
    std::sort(ev.begin(), ev.end());
    NeumaierSum total;
    double diff = 0.0;
    for (std::size_t k = 0; k + 1 < ev.size(); ++k) {
        diff += ev[k].second;
        total.add(std::abs(diff) * (ev[k + 1].first - ev[k].first));
    }
    return total.value();
}

// Total variation ½ Σ |p − q| over exactly matching atom values.
inline double tv_discrete(const DiscreteLaw& a, const DiscreteLaw& b)
{
    require(a.dim() == 1 && b.dim() == 1, "tv_discrete: scalar laws required");
    std::map<double, double> m;
    for (const auto& x : a.atoms()) m[x.value[0]] += x.prob;
    for (const auto& x : b.atoms()) m[x.value[0]] -= x.prob;
    double s = 0.0;
    for (const auto& [v, p] : m) s += std::abs(p);
    return 0.5 * s;
}

// Mean over the given unit directions of the W1 distance between the projected
// samples and N(0, u·Λu).
inline double sliced_w1(const SampleSet& s, const GaussianLaw& law, const std::vector<Vector>& directions)
{
    require(s.dim() == law.dim(), "sliced_w1: dimension mismatch");
    require(!directions.empty(), "sliced_w1: no directions");
    double total = 0.0;
    std::vector<double> proj(s.n());
    for (const auto& d : directions) {
        Vector u = d.normalized();
        for (std::size_t k = 0; k < s.n(); ++k) proj[k] = s.values.row(static_cast<Eigen::Index>(k)).dot(u);
        total += w1_empirical_gaussian(std::span<const double>(proj), u.dot(law.covariance().matrix() * u));
    }
    return total / directions.size();
}

inline std::vector<Vector> random_directions(int n, int count, std::uint64_t seed)
{
    if (n == 1) return {Vector::Ones(1)};
    Rng rng(seed);
    std::vector<Vector> out;
    while (static_cast<int>(out.size()) < count) {
        Vector u(n);
        for (int i = 0; i < n; ++i) u[i] = rng.normal();
        if (u.norm() > 1e-12) out.push_back(u.normalized());
    }
    return out;
}

inline double sliced_w1(const SampleSet& s, const GaussianLaw& law, int n_directions, std::uint64_t seed)
{
    require(n_directions >= 1, "sliced_w1: n_directions must be positive");
    return sliced_w1(s, law, random_directions(law.dim(), n_directions, seed));
}

// Sample mean of f over the rows; fixed-size blocks make the result
// independent of the thread count.
template <class F>
double sample_mean(const SampleSet& s, F&& f, unsigned threads = 1)
{
    constexpr std::size_t block = 4096;
    const std::size_t nb = (s.n() + block - 1) / block;
    std::vector<double> partial(nb, 0.0);
    parallel_for(nb, threads, [&](std::size_t b0, std::size_t b1) {
        Vector x(s.dim());
        for (std::size_t b = b0; b < b1; ++b) {
            NeumaierSum acc;
            for (std::size_t k = b * block; k < std::min(s.n(), (b + 1) * block); ++k) {
                x = s.values.row(static_cast<Eigen::Index>(k)).transpose();
                acc.add(f(x));
            }
            partial[b] = acc.value();
        }
    });
    return pairwise_sum(partial) / static_cast<double>(s.n());
}

// max over the family of E_samples[φ] − ∫φ dN_Λ, with φ replaced by φ_ε when
// ε > 0. A lower bound for the distance restricted to the family's class.
inline double restricted_distance(const SampleSet& s, const GaussianLaw& law, const std::vector<TestFunction>& family,
                                  double eps = 0.0, unsigned threads = 1)
{
    require(!family.empty(), "restricted_distance: empty family");
    require(eps >= 0.0 && eps < 1.0, "restricted_distance: eps outside [0,1)");
    require(s.dim() == law.dim(), "restricted_distance: dimension mismatch");
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& phi : family) {
        TestFunction f = eps > 0.0 ? mollify(phi, eps, law) : phi;
        // ∫φ_ε dN_Λ = ∫φ dN_Λ since √(1−ε²)X − εZ ~ N_Λ.
        double target = gaussian_expectation(law, phi.eval);
        best = std::max(best, sample_mean(s, f.eval, threads) - target);
    }
    return best;
}

} // namespace mlclt
