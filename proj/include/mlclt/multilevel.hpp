#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mlclt/error.hpp"
#include "mlclt/linalg.hpp"

namespace mlclt {

inline constexpr int kMaxLatticeDim = 3;

// (m, y) with y ∈ 2^m Z^d ∩ [0, L)^d.
struct LevelIndex {
    int m = 0;
    std::array<std::int64_t, kMaxLatticeDim> y{};

    friend bool operator==(const LevelIndex&, const LevelIndex&) = default;
    friend auto operator<=>(const LevelIndex&, const LevelIndex&) = default;
};

// Multilevel local dependence geometry. Logarithms of L are base 2.
class DependenceStructure {
public:
    DependenceStructure(int d, std::int64_t L, double K = 2.0, double gamma = 1.0, double B = 1.0,
                        bool periodic = true)
        : d_(d), L_(L), K_(K), gamma_(gamma), B_(B), periodic_(periodic)
    {
        require(d >= 1 && d <= kMaxLatticeDim, "DependenceStructure: d outside [1, 3]");
        require(L >= 2, "DependenceStructure: L must be at least 2");
        require(L <= (std::int64_t{1} << 20), "DependenceStructure: L above 2^20");
        require(K >= 2.0, "DependenceStructure: K must be at least 2");
        require(gamma > 0.0 && gamma <= 2.0, "DependenceStructure: gamma outside (0, 2]");
        require(B >= 1.0, "DependenceStructure: B must be at least 1");
        log_l_ = std::log2(static_cast<double>(L));
        max_level_ = 1 + static_cast<int>(std::floor(log_l_ + 1e-12));
        offsets_.push_back(0);
        for (int m = 0; m <= max_level_; ++m) {
            double c = std::pow(static_cast<double>(side_count(m)), d);
            require(offsets_.back() + c <= double(std::int64_t{1} << 40), "DependenceStructure: index set too large");
            offsets_.push_back(offsets_.back() + static_cast<std::size_t>(c));
        }
    }

    int d() const { return d_; }
    std::int64_t L() const { return L_; }
    double K() const { return K_; }
    double gamma() const { return gamma_; }
    double B() const { return B_; }
    bool periodic() const { return periodic_; }
    double log_l() const { return log_l_; }
    int max_level() const { return max_level_; }

    // Lattice points per axis on level m: |2^m Z ∩ [0, L)|.
    std::int64_t side_count(int m) const
    {
        std::int64_t step = std::int64_t{1} << m;
        return (L_ + step - 1) / step;
    }
    std::size_t level_size(int m) const { return offsets_[m + 1] - offsets_[m]; }
    std::size_t size() const { return offsets_.back(); }

    // Half-width K log L 2^m of the support box around y.
    double half_width(int m) const { return K_ * log_l_ * std::ldexp(1.0, m); }

    bool valid(const LevelIndex& i) const
    {
        if (i.m < 0 || i.m > max_level_) return false;
        const std::int64_t step = std::int64_t{1} << i.m;
        for (int c = 0; c < kMaxLatticeDim; ++c) {
            if (c >= d_) {
                if (i.y[c] != 0) return false;
                continue;
            }
            if (i.y[c] < 0 || i.y[c] >= L_ || i.y[c] % step != 0) return false;
        }
        return true;
    }

    // Position of i in the level-major, lexicographic enumeration.
    std::size_t flat(const LevelIndex& i) const
    {
        const std::int64_t step = std::int64_t{1} << i.m, n = side_count(i.m);
        std::size_t pos = 0;
        for (int c = 0; c < d_; ++c) pos = pos * n + static_cast<std::size_t>(i.y[c] / step);
        return offsets_[i.m] + pos;
    }

    LevelIndex at(std::size_t flat_index) const
    {
        int m = 0;
        while (flat_index >= offsets_[m + 1]) ++m;
        std::size_t pos = flat_index - offsets_[m];
        const std::int64_t step = std::int64_t{1} << m, n = side_count(m);
        LevelIndex i;
        i.m = m;
        for (int c = d_ - 1; c >= 0; --c) {
            i.y[c] = static_cast<std::int64_t>(pos % n) * step;
            pos /= n;
        }
        return i;
    }

    // Per-coordinate distance between lattice points (periodic if requested).
    double coord_distance(std::int64_t a, std::int64_t b) const
    {
        std::int64_t delta = a > b ? a - b : b - a;
        if (periodic_) delta = std::min(delta, L_ - delta % L_);
        return static_cast<double>(delta);
    }

    // dist∞ between the support boxes of i and j.
    double box_distance(const LevelIndex& i, const LevelIndex& j) const
    {
        const double reach = half_width(i.m) + half_width(j.m);
        double gap = 0.0;
        for (int c = 0; c < d_; ++c) gap = std::max(gap, coord_distance(i.y[c], j.y[c]) - reach);
        return std::max(gap, 0.0);
    }

    double threshold(int m) const { return 2.0 * std::ldexp(1.0, m) * K_ * log_l_; }

private:
    int d_;
    std::int64_t L_;
    double K_, gamma_, B_;
    bool periodic_;
    double log_l_ = 0.0;
    int max_level_ = 0;
    std::vector<std::size_t> offsets_;
};

inline std::vector<LevelIndex> build_index_set(const DependenceStructure& s)
{
    std::vector<LevelIndex> out(s.size());
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = s.at(k);
    return out;
}

inline int chi(const DependenceStructure& s, const LevelIndex& i, const LevelIndex& j)
{
    return s.box_distance(i, j) <= s.threshold(std::max(i.m, j.m)) ? 1 : 0;
}

inline int chi3(const DependenceStructure& s, const LevelIndex& i, const LevelIndex& j, const LevelIndex& k)
{
    const double thr = s.threshold(std::max({i.m, j.m, k.m}));
    return (s.box_distance(i, k) <= thr || s.box_distance(j, k) <= thr) ? 1 : 0;
}

// i^n(j) = (n, 2^n ⌊y_j / 2^n⌋).
inline LevelIndex lift(const DependenceStructure& s, const LevelIndex& j, int n)
{
    require(n > j.m, "lift: target level must exceed m(j)");
    require(n <= s.max_level(), "lift: target level above the level cap");
    LevelIndex out;
    out.m = n;
    const std::int64_t step = std::int64_t{1} << n;
    for (int c = 0; c < s.d(); ++c) out.y[c] = (j.y[c] / step) * step;
    return out;
}

// One realization: values[flat(i)] = X_i ∈ R^N.
struct MultilevelSample {
    const DependenceStructure* structure = nullptr;
    std::vector<Vector> values;

    Vector total() const
    {
        require(!values.empty(), "MultilevelSample: empty");
        Vector t = Vector::Zero(values.front().size());
        for (const auto& v : values) t += v;
        return t;
    }
    const Vector& operator[](const LevelIndex& i) const { return values[structure->flat(i)]; }
};

struct Aggregates {
    Vector Z_i;
    Vector Z_ij;
    Matrix Y_il;
    Matrix W_ij;
};

using CrossMoment = std::function<Matrix(const LevelIndex&, const LevelIndex&)>;

// Z_i = Σ_{χ_ij=1} X_j, Z_ij = Σ_{χ_ijk=1} X_k, W_ij = X_i⊗X_j − E[X_i⊗X_j],
// Y_il = Σ_{m(j)<m(i), i^{m(i)}(j)=l, χ_ij=1} (X_i⊗X_j − E[X_i⊗X_j]).
// `j` serves as the partner for Z_ij, W_ij and as l for Y_il. A null `moment`
// means zero cross moments.
inline Aggregates aggregates(const MultilevelSample& x, const LevelIndex& i, const LevelIndex& j,
                             const CrossMoment& moment = {})
{
    const DependenceStructure& s = *x.structure;
    require(s.valid(i) && s.valid(j), "aggregates: invalid index");
    require(x.values.size() == s.size(), "aggregates: sample does not match structure");
    const int n = static_cast<int>(x.values.front().size());
    auto e = [&](const LevelIndex& a, const LevelIndex& b) -> Matrix {
        return moment ? moment(a, b) : Matrix::Zero(n, n);
    };
    Aggregates out;
    out.Z_i = Vector::Zero(n);
    out.Z_ij = Vector::Zero(n);
    out.Y_il = Matrix::Zero(n, n);
    const Vector& xi = x[i];
    for (std::size_t f = 0; f < s.size(); ++f) {
        LevelIndex k = s.at(f);
        const Vector& xk = x.values[f];
        if (chi(s, i, k)) {
            out.Z_i += xk;
            if (k.m < i.m && lift(s, k, i.m) == j) out.Y_il += xi * xk.transpose() - e(i, k);
        }
        if (chi3(s, i, j, k)) out.Z_ij += xk;
    }
    out.W_ij = xi * x[j].transpose() - e(i, j);
    return out;
}

// Unnamed constants, all 1 unless overridden, except "variance_norm" which is the
// value of the geometric-series count over levels in the variance-norm budget.
class PolicyTable {
public:
    PolicyTable() = default;

    double get(const std::string& key) const
    {
        auto it = values_.find(key);
        return it == values_.end() ? 1.0 : it->second;
    }
    void set(const std::string& key, double v)
    {
        require(std::isfinite(v) && v > 0.0, "PolicyTable: constants must be positive and finite");
        values_[key] = v;
    }
    bool has(const std::string& key) const { return values_.count(key) > 0; }
    const std::map<std::string, double>& overrides() const { return values_; }

    // Keys: bar, eps, ell, condition, estimate, lowlevel, alllevel, tail, variance_norm, sum_norm.
    static std::vector<std::string> keys()
    {
        return {"bar", "eps", "ell", "condition", "estimate", "lowlevel", "alllevel", "tail", "variance_norm", "sum_norm"};
    }

    double variance_norm(const DependenceStructure& s) const
    {
        if (has("variance_norm")) return get("variance_norm");
        const double d = s.d();
        return std::pow(4.0, d) * std::pow(s.K(), d / 2.0) / (1.0 - std::pow(2.0, -d / 2.0));
    }

private:
    std::map<std::string, double> values_;
};

// Bar constants: X̄, W̄ are level independent; Z̄_i = z[m(i)], Z̄_ij = z[max(m(i), m(j))],
// Ȳ_il = y[m(i)].
struct BarConstants {
    double S = 1.0;
    double gamma1 = 0.0, gamma2 = 0.0;
    double x = 0.0, w = 0.0;
    std::vector<double> z, y;

    BarConstants scaled_z(double t) const
    {
        BarConstants b = *this;
        for (double& v : b.z) v *= t;
        return b;
    }
};

inline BarConstants bar_constants(const DependenceStructure& s, double S, const PolicyTable& policy = {})
{
    require(S >= 1.0, "bar_constants: S must be at least 1");
    const double c = policy.get("bar");
    const double g = s.gamma(), lg = s.log_l(), d = s.d(), B = s.B(), L = static_cast<double>(s.L());
    BarConstants b;
    b.S = S;
    b.gamma1 = g / (g + 1.0);
    b.gamma2 = g / (g + 2.0);
    const double sl = S * lg;
    b.x = c * B * std::pow(sl, 1.0 / g) * std::pow(L, -d);
    b.w = c * B * B * std::pow(sl, 2.0 / g) * std::pow(L, -2.0 * d);
    for (int m = 0; m <= s.max_level(); ++m) {
        const double lev = std::pow(2.0, m * d / 2.0);
        b.z.push_back(c * B * std::pow(sl, 1.0 / b.gamma1) * std::pow(s.K() * lg, d + 1.0) * lev * std::pow(L, -d));
        b.y.push_back(c * B * B * std::pow(sl, 1.0 / b.gamma2) * std::pow(s.K() * lg, d) * lev
                      * std::pow(L, -2.0 * d));
    }
    return b;
}

// Per level: number of indices and number of same-level pairs with χ = 1.
struct LevelTerms {
    int level = 0;
    double count = 0.0;
    double pair_count = 0.0;
};

inline std::vector<LevelTerms> level_terms(const DependenceStructure& s)
{
    std::vector<LevelTerms> out;
    for (int m = 0; m <= s.max_level(); ++m) {
        const std::int64_t step = std::int64_t{1} << m, n = s.side_count(m);
        // χ_ij = 1 at equal levels iff every coordinate distance is within the
        // reach below, so the pair count factorizes over coordinates.
        const double reach = s.threshold(m) + 2.0 * s.half_width(m);
        double per_axis = 0.0;
        for (std::int64_t a = 0; a < n; ++a)
            for (std::int64_t b = 0; b < n; ++b)
                if (s.coord_distance(a * step, b * step) <= reach) per_axis += 1.0;
        LevelTerms t;
        t.level = m;
        t.count = std::pow(static_cast<double>(n), s.d());
        t.pair_count = std::pow(per_axis, s.d());
        out.push_back(t);
    }
    return out;
}

struct EpsEll {
    double eps = 0.0;     // clamped to (0, 1/2]
    double eps_raw = 0.0; // before clamping
    bool eps_clamped = false;
    int ell = 0;
    bool ell_clamped = false;
};

// ε = C B³ S^{1/γ2+1/γ1} K^{3d+2} (log L)^{3d+2+1/γ2+1/γ1} |Λ^{-1/2}|³ L^{-2d};
// ℓ the smallest integer ≥ 0 with
// (2^ℓ)^{d/2} ≥ C B² S^{1/γ2} K^{2d} |Λ^{-1}| |log(B³|Λ^{-1/2}|³L^{-2d})| (log L)^{2d+1/γ2} L^{-d}.
inline EpsEll choose_eps_ell(const DependenceStructure& s, const SpdMatrix& lambda, const BarConstants& bars,
                             const PolicyTable& policy = {})
{
    const double d = s.d(), B = s.B(), K = s.K(), lg = s.log_l(), L = static_cast<double>(s.L());
    const double g1 = bars.gamma1, g2 = bars.gamma2, S = bars.S;
    const double is3 = std::pow(lambda.inverse_sqrt_norm(), 3);
    EpsEll out;
    out.eps_raw = policy.get("eps") * B * B * B * std::pow(S, 1.0 / g2 + 1.0 / g1) * std::pow(K, 3.0 * d + 2.0)
                  * std::pow(lg, 3.0 * d + 2.0 + 1.0 / g2 + 1.0 / g1) * is3 * std::pow(L, -2.0 * d);
    out.eps = std::min(out.eps_raw, 0.5);
    out.eps_clamped = out.eps_raw > 0.5;
    const double rhs = policy.get("ell") * B * B * std::pow(S, 1.0 / g2) * std::pow(K, 2.0 * d)
                       * lambda.inverse_norm() * std::abs(std::log2(B * B * B * is3 * std::pow(L, -2.0 * d)))
                       * std::pow(lg, 2.0 * d + 1.0 / g2) * std::pow(L, -d);
    int ell = 0;
    while (std::pow(2.0, ell * d / 2.0) < rhs && ell <= s.max_level()) ++ell;
    out.ell_clamped = ell > s.max_level();
    out.ell = std::min(ell, s.max_level());
    return out;
}

struct TheoremBound {
    double total = 0.0;
    double leading = 0.0; // C √N |Λ^{1/2}| ε
    double r_lowlevel = 0.0;
    double r_alllevel = 0.0;
    double r_tail = 0.0;
    double condition_lhs = 0.0;
    double condition_rhs = 0.0; // 1/C
    bool condition_satisfied = false;
};

// Condition, leading term and remainders of the normal approximation estimate
// for a structure given per level. R_tail is replaced by a surrogate: each
// truncated moment E[|A||B|1{|B| > B̄}] is bounded through Hölder by
// moment factors times √P, with P ≤ 2 exp(−S log L) for bars of the form
// (S log L)^{1/γ}·norm.
inline TheoremBound theorem_bound(const std::vector<LevelTerms>& levels, int n_dim, const SpdMatrix& lambda,
                                  const BarConstants& bars, double eps, int ell, double log_l, double gamma,
                                  const PolicyTable& policy = {})
{
    require(eps > 0.0, "theorem_bound: eps must be positive");
    const double N = n_dim;
    const double is = lambda.inverse_sqrt_norm();
    const double le = std::abs(std::log2(eps));
    const double low_pref = std::pow(N, 4.5) * is * is * is / eps;
    TheoremBound out;

    double low = 0.0, all = 0.0, cond_low = 0.0, cond_high = 0.0, tail = 0.0;
    const double sl = bars.S * log_l;
    const double p_tail = 2.0 * std::exp(-sl);
    const double g = gamma, g1 = bars.gamma1, g2 = bars.gamma2;
    for (const auto& t : levels) {
        require(t.level >= 0 && t.level < static_cast<int>(bars.z.size()), "theorem_bound: level outside bars");
        const double z = bars.z[t.level], y = bars.y[t.level];
        const double pair2 = t.pair_count * (bars.w * z + 2.0 * y * z);
        const double single2 = t.count * bars.x * z * z;
        all += pair2 + single2;
        if (t.level <= ell) {
            low += t.pair_count * (bars.w * z * z + 2.0 * y * z * z) + t.count * bars.x * z * z * z;
            cond_low += pair2 + single2;
        } else {
            cond_high += t.pair_count * (bars.w + 2.0 * y) + t.count * bars.x * z;
        }
        // Norms implied by the bars, and L^4 / L^6 moment factors p^{1/γ}.
        const double nx = bars.x / std::pow(sl, 1.0 / g), nw = bars.w / std::pow(sl, 2.0 / g);
        const double nz = z / std::pow(sl, 1.0 / g1), ny = y / std::pow(sl, 1.0 / g2);
        const double wz = nw * nz * std::pow(4.0, 2.0 / g + 1.0 / g1);
        const double yz = ny * nz * std::pow(4.0, 1.0 / g2 + 1.0 / g1);
        const double xz = nx * nz * nz * std::pow(6.0, 1.0 / g + 2.0 / g1);
        tail += t.pair_count * 2.0 * (wz + yz) + t.count * 2.0 * xz;
    }
    out.r_lowlevel = policy.get("lowlevel") * low_pref * low;
    out.r_alllevel = policy.get("alllevel") * std::pow(N, 4.5) * is * is * le * all;
    out.r_tail = policy.get("tail") * lambda.inverse_norm() * std::pow(N, 1.5) * std::pow(eps, -N) * tail
                 * std::sqrt(p_tail);
    out.leading = policy.get("estimate") * std::sqrt(N) * lambda.sqrt_norm() * eps;
    out.condition_lhs = low_pref * cond_low + std::pow(N, 4.0) * lambda.inverse_norm() * le * cond_high;
    out.condition_rhs = 1.0 / policy.get("condition");
    out.condition_satisfied = out.condition_lhs <= out.condition_rhs;
    out.total = out.leading + out.r_lowlevel + out.r_alllevel + out.r_tail;
    return out;
}

inline TheoremBound theorem_bound(const DependenceStructure& s, const SpdMatrix& lambda, const BarConstants& bars,
                                  double eps, int ell, const PolicyTable& policy = {})
{
    return theorem_bound(level_terms(s), lambda.dim(), lambda, bars, eps, ell, s.log_l(), s.gamma(), policy);
}

// C B (log L)^{d/2} L^{-d/2}: budget for ||X − E X||_{exp^γ̃}, γ̃ = γ/(γ+1).
inline double variance_norm_bound(const DependenceStructure& s, const PolicyTable& policy = {})
{
    const double d = s.d();
    return policy.variance_norm(s) * s.B() * std::pow(s.log_l(), d / 2.0) * std::pow(static_cast<double>(s.L()), -d / 2.0);
}

inline nlohmann::json to_json(const DependenceStructure& s)
{
    return {{"d", s.d()},           {"L", s.L()},
            {"K", s.K()},           {"gamma", s.gamma()},
            {"B", s.B()},           {"periodic", s.periodic()},
            {"log_base", 2},        {"max_level", s.max_level()},
            {"index_count", s.size()},
            {"level_cap", "1+floor(log2 L)"},
            {"grouping_cap", "log2 L"}};
}

inline nlohmann::json to_json(const PolicyTable& p)
{
    nlohmann::json j = nlohmann::json::object();
    for (const auto& k : PolicyTable::keys()) j[k] = p.get(k);
    return j;
}

inline nlohmann::json bound_report(const DependenceStructure& s, const SpdMatrix& lambda, const PolicyTable& policy,
                                   const BarConstants& bars, const EpsEll& ee, const TheoremBound& tb)
{
    nlohmann::json j;
    j["structure"] = to_json(s);
    j["policy"] = to_json(policy);
    j["policy"]["variance_norm"] = policy.variance_norm(s);
    j["lambda_inverse_sqrt_norm"] = lambda.inverse_sqrt_norm();
    j["lambda_sqrt_norm"] = lambda.sqrt_norm();
    j["S"] = bars.S;
    j["gamma1"] = bars.gamma1;
    j["gamma2"] = bars.gamma2;
    j["eps"] = ee.eps;
    j["eps_raw"] = ee.eps_raw;
    j["eps_clamped"] = ee.eps_clamped;
    j["ell"] = ee.ell;
    j["ell_clamped"] = ee.ell_clamped;
    j["total"] = tb.total;
    j["leading"] = tb.leading;
    j["R_lowlevel"] = tb.r_lowlevel;
    j["R_alllevel"] = tb.r_alllevel;
    j["R_tail"] = tb.r_tail;
    j["condition_lhs"] = tb.condition_lhs;
    j["condition_rhs"] = tb.condition_rhs;
    j["condition_satisfied"] = tb.condition_satisfied;
    return j;
}

} // namespace mlclt
