#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "mlclt/distance.hpp"
#include "mlclt/error.hpp"
#include "mlclt/fields.hpp"
#include "mlclt/format.hpp"
#include "mlclt/multilevel.hpp"
#include "mlclt/special.hpp"

namespace mlclt {

struct StretchedNorm {
    double gamma = 0.0;
    double value = 0.0;
    double argmax_p = 1.0;
    double p_max = 0.0; // cap log(n)/2 actually applied
    std::vector<double> p_grid;
    bool constant = false; // |X| constant: value is the analytic limit c
};

inline const std::vector<double>& default_p_grid()
{
    static const std::vector<double> g{1, 1.5, 2, 3, 4, 6, 8, 12, 16};
    return g;
}

// max over the p-grid of p^{-1/γ} (mean |x|^p)^{1/p}.
inline StretchedNorm stretched_norm(std::span<const double> x, double gamma)
{
    require(gamma > 0.0, "stretched_norm: gamma must be positive");
    require(x.size() >= 100, "stretched_norm: need at least 100 samples");
    StretchedNorm out;
    out.gamma = gamma;
    out.p_max = std::max(1.0, std::log(static_cast<double>(x.size())) / 2.0);

    double lo = std::abs(x[0]), hi = lo;
    for (double v : x) {
        lo = std::min(lo, std::abs(v));
        hi = std::max(hi, std::abs(v));
    }
    if (hi == lo) {
        out.constant = true;
        out.value = hi;
        out.argmax_p = kUnbounded;
        for (double p : default_p_grid())
            if (p <= out.p_max) out.p_grid.push_back(p);
        return out;
    }

    std::vector<double> pw(x.size());
    for (double p : default_p_grid()) {
        if (p > out.p_max) break;
        out.p_grid.push_back(p);
        // Scale by the max to keep high powers finite.
        for (std::size_t k = 0; k < x.size(); ++k) pw[k] = std::pow(std::abs(x[k]) / hi, p);
        double moment = pairwise_sum(pw) / static_cast<double>(x.size());
        double v = std::pow(p, -1.0 / gamma) * hi * std::pow(moment, 1.0 / p);
        if (v > out.value) {
            out.value = v;
            out.argmax_p = p;
        }
    }
    return out;
}

inline StretchedNorm stretched_norm(const SampleSet& s, double gamma, int component = 0)
{
    auto col = s.column(component);
    return stretched_norm(std::span<const double>(col), gamma);
}

// Exact normal moments E|Z|^p = 2^{p/2} Γ((p+1)/2)/√π over the same grid.
inline double normal_stretched_norm(double gamma, double p_max)
{
    double best = 0.0;
    for (double p : default_p_grid()) {
        if (p > p_max) break;
        double m = std::exp(p / 2.0 * std::log(2.0) + std::lgamma((p + 1.0) / 2.0)) / std::sqrt(std::numbers::pi);
        best = std::max(best, std::pow(p, -1.0 / gamma) * std::pow(m, 1.0 / p));
    }
    return best;
}

enum class BennettForm { exact, simplified };

inline double bennett_h(double x) { return (1.0 + x) * std::log1p(x) - x; }

// P[Σ X_i ≥ r] for independent, centered X_i ≤ A with Σ Var X_i ≤ σ².
inline double bennett_bound(double sigma2, double A, double r, BennettForm form = BennettForm::exact)
{
    require(sigma2 > 0.0 && A > 0.0 && r >= 0.0, "bennett_bound: parameters must be positive");
    if (form == BennettForm::exact) return std::exp(-sigma2 / (A * A) * bennett_h(A * r / sigma2));
    return std::exp(-std::min(r * r / (3.0 * sigma2), r / (3.0 * A)));
}

struct TailBound {
    double bound = 1.0;
    bool valid = false;
};

// Largest r for which 3 exp(−r²/10V) is asserted.
inline double iid_tail_radius(double b, double gamma0, double V, double M)
{
    require(b > 0.0 && gamma0 > 0.0 && V >= 0.0 && M >= 1.0, "iid_tail_radius: bad parameters");
    const double sv = std::sqrt(V);
    return sv * std::min(sv / (b * std::pow(2.0 * std::log(2.0 * M), 1.0 / gamma0)),
                         std::pow(sv / b, gamma0 / (2.0 + gamma0)));
}

inline TailBound iid_tail_bound(double b, double gamma0, double V, double M, double r)
{
    require(V >= 0.0, "iid_tail_bound: V must be nonnegative");
    TailBound t;
    t.bound = V > 0.0 ? 3.0 * std::exp(-r * r / (10.0 * V)) : (r > 0.0 ? 0.0 : 3.0);
    t.valid = r <= iid_tail_radius(b, gamma0, V, M);
    return t;
}

struct SumNormCertificate {
    double budget = 0.0;
    double gamma_tilde = 0.0;
};

inline SumNormCertificate sum_norm_certificate(std::span<const double> component_norms, double gamma0,
                                               const PolicyTable& policy = {})
{
    require(!component_norms.empty(), "sum_norm_certificate: need at least one component");
    require(gamma0 > 0.0, "sum_norm_certificate: gamma0 must be positive");
    SumNormCertificate c;
    c.gamma_tilde = gamma0 / (gamma0 + 1.0);
    const double mx = *std::max_element(component_norms.begin(), component_norms.end());
    c.budget = policy.get("sum_norm") * std::sqrt(static_cast<double>(component_norms.size())) * mx;
    return c;
}

// Intermediate-scale grouping: G_i collects levels m ≤ m0 over
// j ∈ 2^m Z^d ∩ [2^{p(m)}, ℓ − 2^{p(m)})^d around i ∈ ℓZ^d; everything else
// goes to the level remainders R^m. With ℓ = L there is a single translate,
// no gaps are needed and the levels m ≤ m0 form one group.
struct Grouping {
    std::int64_t ell = 0;
    int m0 = -1;     // last grouped level; −1 when no level is grouped
    int m0_raw = -1; // ⌊log₂(ℓ/(4K log₂L))⌋ before clamping
    bool degenerate = false;
    std::string warning;
    std::vector<int> p;                                // p(m) per level
    std::vector<std::array<std::int64_t, kMaxLatticeDim>> origins; // i ∈ ℓZ^d ∩ [0, L)^d
    std::vector<std::vector<LevelIndex>> groups;       // parallel to origins
    std::vector<std::vector<LevelIndex>> remainders;   // per level 0..max_level
};

inline Grouping moderate_grouping(const DependenceStructure& s, std::int64_t ell)
{
    require(ell >= 1 && std::has_single_bit(static_cast<std::uint64_t>(ell)), "moderate_grouping: ell must be a power of two");
    require(ell <= s.L(), "moderate_grouping: ell above L");
    require(std::has_single_bit(static_cast<std::uint64_t>(s.L())), "moderate_grouping: L must be a power of two");
    require(s.L() % ell == 0, "moderate_grouping: ell must divide L");
    Grouping g;
    g.ell = ell;
    const double klog = s.K() * s.log_l();
    g.m0_raw = static_cast<int>(std::floor(std::log2(static_cast<double>(ell) / (4.0 * klog))));
    g.m0 = std::min(g.m0_raw, s.max_level());
    if (g.m0_raw < 0) {
        g.degenerate = true;
        g.m0 = -1;
        g.warning = "ell <= 4 K log2 L: no level is grouped, every index is a remainder";
    }
    const int cap = static_cast<int>(std::lround(s.log_l()));
    for (int m = 0; m <= s.max_level(); ++m) {
        int p = static_cast<int>(std::ceil(std::log2(std::ldexp(4.0 * klog, m)) - 1e-12));
        g.p.push_back(std::min(std::max(p, 0), cap));
    }

    const std::int64_t per_axis = s.L() / ell;
    std::size_t n_groups = 1;
    for (int c = 0; c < s.d(); ++c) n_groups *= static_cast<std::size_t>(per_axis);
    for (std::size_t t = 0; t < n_groups; ++t) {
        std::array<std::int64_t, kMaxLatticeDim> o{};
        std::size_t rem = t;
        for (int c = s.d() - 1; c >= 0; --c) {
            o[c] = static_cast<std::int64_t>(rem % per_axis) * ell;
            rem /= per_axis;
        }
        g.origins.push_back(o);
    }
    g.groups.resize(n_groups);
    g.remainders.resize(s.max_level() + 1);

    const bool single = ell == s.L();
    for (std::size_t f = 0; f < s.size(); ++f) {
        LevelIndex i = s.at(f);
        if (i.m > g.m0) {
            g.remainders[i.m].push_back(i);
            continue;
        }
        const std::int64_t gap = std::int64_t{1} << g.p[i.m];
        bool inside = true;
        std::size_t gid = 0;
        for (int c = 0; c < s.d(); ++c) {
            std::int64_t j = i.y[c] % ell;
            gid = gid * per_axis + static_cast<std::size_t>(i.y[c] / ell);
            if (!single && (j < gap || j >= ell - gap)) inside = false;
        }
        if (inside)
            g.groups[gid].push_back(i);
        else
            g.remainders[i.m].push_back(i);
    }
    return g;
}

struct GroupedValues {
    std::vector<Vector> groups;     // G_i
    std::vector<Vector> remainders; // R^m
    Vector total_grouped;           // Σ G_i
    Vector total_low;               // Σ_{m ≤ m0} R^m
    Vector total_high;              // Σ_{m > m0} R^m
};

inline GroupedValues grouped_values(const MultilevelSample& x, const Grouping& g)
{
    const DependenceStructure& s = *x.structure;
    const int n = static_cast<int>(x.values.front().size());
    GroupedValues out;
    auto sum = [&](const std::vector<LevelIndex>& idx) {
        Vector v = Vector::Zero(n);
        for (const auto& i : idx) v += x[i];
        return v;
    };
    out.total_grouped = Vector::Zero(n);
    for (const auto& grp : g.groups) {
        out.groups.push_back(sum(grp));
        out.total_grouped += out.groups.back();
    }
    out.total_low = Vector::Zero(n);
    out.total_high = Vector::Zero(n);
    for (int m = 0; m <= s.max_level(); ++m) {
        out.remainders.push_back(sum(g.remainders[m]));
        (m <= g.m0 ? out.total_low : out.total_high) += out.remainders.back();
    }
    return out;
}

// Displayed shapes of the remainder estimates with C(d, γ) = 1:
// high levels B (K log L)^d ℓ^{-d/2} L^{-d/2}, low levels B (K log L)^{(d+3)/2} ℓ^{-1/2} L^{-d/2}.
inline double remainder_high_budget(const DependenceStructure& s, std::int64_t ell)
{
    const double d = s.d(), klog = s.K() * s.log_l();
    return s.B() * std::pow(klog, d) * std::pow(static_cast<double>(ell), -d / 2.0)
           * std::pow(static_cast<double>(s.L()), -d / 2.0);
}

inline double remainder_low_budget(const DependenceStructure& s, std::int64_t ell)
{
    const double d = s.d(), klog = s.K() * s.log_l();
    return s.B() * std::pow(klog, (d + 3.0) / 2.0) / std::sqrt(static_cast<double>(ell))
           * std::pow(static_cast<double>(s.L()), -d / 2.0);
}

// Aggregate Gaussian and the tail bound for Z in X = Y + Z.
struct GaussianSplit {
    SpdMatrix lambda = SpdMatrix::identity(1);
    int N = 1;
    int M = 0;
    double tau = 0.0, b = 0.0, gamma0 = 0.0;
    double scale = 0.0; // N τ |log τ|^{1/γ0} M b²
    double r_max = 0.0; // validity radius
    std::vector<double> group_w1;
    bool hypotheses_ok = true; // every group within τ b of its Gaussian

    double bound(double r) const { return 3.0 * N * std::exp(-r * r / (10.0 * scale)); }
    bool valid(double r) const { return r <= r_max; }
    bool vacuous(double r) const { return bound(r) >= 1.0; }
};

inline GaussianSplit close_to_gaussian_split(const std::vector<SampleSet>& groups,
                                             const std::vector<SpdMatrix>& lambdas, double tau, double b,
                                             double gamma0)
{
    require(tau > 0.0, "close_to_gaussian_split: tau must be positive");
    if (tau > 0.5) throw UsageError("close_to_gaussian_split: tau above 1/2");
    require(!groups.empty() && groups.size() == lambdas.size(), "close_to_gaussian_split: size mismatch");
    require(b > 0.0 && gamma0 > 0.0, "close_to_gaussian_split: b and gamma0 must be positive");
    GaussianSplit out;
    out.N = groups.front().dim();
    out.M = static_cast<int>(groups.size());
    out.tau = tau;
    out.b = b;
    out.gamma0 = gamma0;
    Matrix sum = Matrix::Zero(out.N, out.N);
    for (std::size_t k = 0; k < groups.size(); ++k) {
        require(groups[k].dim() == out.N && lambdas[k].dim() == out.N, "close_to_gaussian_split: dimension mismatch");
        sum += lambdas[k].matrix();
        double w = out.N == 1
                       ? w1_empirical_gaussian(groups[k], lambdas[k].matrix()(0, 0))
                       : sliced_w1(groups[k], GaussianLaw(lambdas[k]), 64, 0x5eed);
        out.group_w1.push_back(w);
        if (w > tau * b) out.hypotheses_ok = false;
    }
    out.lambda = SpdMatrix(sum);
    const double tl = tau * std::pow(std::abs(std::log(tau)), 1.0 / gamma0);
    const double M = out.M;
    out.scale = out.N * tl * M * b * b;
    out.r_max = std::sqrt(out.N * tl) * std::sqrt(M) * b
                * std::min(std::sqrt(M * tl) / std::pow(2.0 * std::log(2.0 * M), 1.0 / gamma0),
                           std::pow(tl * M, gamma0 / (4.0 + 2.0 * gamma0)));
    return out;
}

// Residuals Z = X − Y for scalar X. N = 1 pairs order statistics with Gaussian
// quantiles (monotone coupling); this is a proxy, the optimal coupling is not built.
inline std::vector<double> coupling_residuals(std::span<const double> x, double variance)
{
    require(variance > 0.0, "coupling_residuals: variance must be positive");
    std::vector<double> s(x.begin(), x.end());
    std::sort(s.begin(), s.end());
    const double sd = std::sqrt(variance), n = static_cast<double>(s.size());
    for (std::size_t k = 0; k < s.size(); ++k) s[k] -= sd * normal_quantile((k + 0.5) / n);
    return s;
}

struct TailRow {
    double r = 0.0;
    double empirical_tail = 0.0;
    double bound = 0.0;
    bool valid = false;
    double slack = 0.0; // 3 √(p̂(1−p̂)/n)
};

inline double empirical_tail(std::span<const double> x, double r)
{
    std::size_t c = 0;
    for (double v : x)
        if (std::abs(v) >= r) ++c;
    return static_cast<double>(c) / static_cast<double>(x.size());
}

inline double mc_slack(double p, std::size_t n) { return 3.0 * std::sqrt(p * (1.0 - p) / static_cast<double>(n)); }

// True when every valid row satisfies empirical ≤ bound + slack.
inline bool tails_dominated(const std::vector<TailRow>& rows)
{
    for (const auto& r : rows)
        if (r.valid && r.empirical_tail > r.bound + r.slack) return false;
    return true;
}

inline void write_tail_csv(std::ostream& os, const std::vector<TailRow>& rows)
{
    os << "r,empirical_tail,bound,valid_flag,slack\n";
    for (const auto& t : rows)
        os << format_double(t.r) << ',' << format_double(t.empirical_tail) << ',' << format_double(t.bound) << ','
           << (t.valid ? 1 : 0) << ',' << format_double(t.slack) << '\n';
}

} // namespace mlclt
