#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "mlclt/distance.hpp"
#include "mlclt/error.hpp"
#include "mlclt/multilevel.hpp"
#include "mlclt/parallel.hpp"
#include "mlclt/rng.hpp"
#include "mlclt/special.hpp"

namespace mlclt {

enum class NoiseDist { rademacher, uniform, laplace, gaussian };

inline NoiseDist parse_noise(const std::string& s)
{
    if (s == "rademacher") return NoiseDist::rademacher;
    if (s == "uniform") return NoiseDist::uniform;
    if (s == "laplace" || s == "centered-exponential-tail") return NoiseDist::laplace;
    if (s == "gaussian") return NoiseDist::gaussian;
    throw UsageError("unknown noise distribution: " + s);
}

inline std::string to_string(NoiseDist d)
{
    switch (d) {
    case NoiseDist::rademacher: return "rademacher";
    case NoiseDist::uniform: return "uniform";
    case NoiseDist::laplace: return "laplace";
    case NoiseDist::gaussian: return "gaussian";
    }
    return "?";
}

inline double draw(NoiseDist d, Rng& rng)
{
    switch (d) {
    case NoiseDist::rademacher: return rng.rademacher();
    case NoiseDist::uniform: return rng.uniform_symmetric_unit_variance();
    case NoiseDist::laplace: return rng.laplace();
    case NoiseDist::gaussian: return rng.normal();
    }
    return 0.0;
}

// Periodic lattice {0..L-1}^d, flat index with the last coordinate fastest.
struct Lattice {
    int d = 1;
    std::int64_t L = 2;

    std::size_t size() const
    {
        std::size_t n = 1;
        for (int c = 0; c < d; ++c) n *= static_cast<std::size_t>(L);
        return n;
    }
    std::array<std::int64_t, kMaxLatticeDim> coords(std::size_t f) const
    {
        std::array<std::int64_t, kMaxLatticeDim> x{};
        for (int c = d - 1; c >= 0; --c) {
            x[c] = static_cast<std::int64_t>(f % L);
            f /= L;
        }
        return x;
    }
    std::size_t flat(const std::array<std::int64_t, kMaxLatticeDim>& x) const
    {
        std::size_t f = 0;
        for (int c = 0; c < d; ++c) f = f * L + static_cast<std::size_t>(((x[c] % L) + L) % L);
        return f;
    }
    std::size_t stride(int c) const
    {
        std::size_t s = 1;
        for (int k = c + 1; k < d; ++k) s *= static_cast<std::size_t>(L);
        return s;
    }
};

// i.i.d. unit-variance noise on the lattice; `channels` independent copies
// stored one after another.
struct NoiseLattice {
    Lattice geom;
    NoiseDist dist = NoiseDist::rademacher;
    std::uint64_t seed = 0;
    int channels = 1;
    std::vector<double> values;

    const double* channel(int c) const { return values.data() + static_cast<std::size_t>(c) * geom.size(); }
    double* channel(int c) { return values.data() + static_cast<std::size_t>(c) * geom.size(); }
};

inline NoiseLattice draw_noise(int d, std::int64_t L, NoiseDist dist, std::uint64_t seed, int channels = 1)
{
    NoiseLattice n;
    n.geom = {d, L};
    require(d >= 1 && d <= kMaxLatticeDim && L >= 1, "draw_noise: bad geometry");
    require(channels >= 1, "draw_noise: channels must be positive");
    n.dist = dist;
    n.seed = seed;
    n.channels = channels;
    n.values.resize(n.geom.size() * channels);
    Rng rng(seed);
    for (double& v : n.values) v = draw(dist, rng);
    return n;
}

enum class PointwiseMap { identity, tanh, sign, clip };

inline PointwiseMap parse_map(const std::string& s)
{
    if (s == "identity") return PointwiseMap::identity;
    if (s == "tanh") return PointwiseMap::tanh;
    if (s == "sign") return PointwiseMap::sign;
    if (s == "clip") return PointwiseMap::clip;
    throw UsageError("unknown pointwise map: " + s);
}

inline double apply(PointwiseMap m, double v)
{
    switch (m) {
    case PointwiseMap::identity: return v;
    case PointwiseMap::tanh: return std::tanh(v);
    case PointwiseMap::sign: return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0);
    case PointwiseMap::clip: return std::clamp(v, -1.0, 1.0);
    }
    return v;
}

// a(x) = map(noise(x)) for radius 0; for radius 1/2, map of the mean of the
// noise over the 2^d sites x + {0,1}^d. Sites at periodic distance > 1 then
// read disjoint noise. ξ ≡ 1.
struct FieldModel {
    double kernel_radius = 0.0;
    PointwiseMap map = PointwiseMap::identity;
};

// Noise sites read by a(x).
inline std::vector<std::size_t> noise_support(const FieldModel& model, const Lattice& g, std::size_t x)
{
    if (model.kernel_radius == 0.0) return {x};
    auto base = g.coords(x);
    std::vector<std::size_t> out;
    for (int mask = 0; mask < (1 << g.d); ++mask) {
        auto y = base;
        for (int c = 0; c < g.d; ++c) y[c] += (mask >> c) & 1;
        out.push_back(g.flat(y));
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

inline std::vector<double> sample_field(const FieldModel& model, const NoiseLattice& noise)
{
    require(model.kernel_radius == 0.0 || model.kernel_radius == 0.5, "sample_field: kernel radius must be 0 or 1/2");
    const Lattice& g = noise.geom;
    std::vector<double> a(g.size());
    for (std::size_t x = 0; x < a.size(); ++x) {
        if (model.kernel_radius == 0.0) {
            a[x] = apply(model.map, noise.values[x]);
            continue;
        }
        auto sup = noise_support(model, g, x);
        double s = 0.0;
        for (auto k : sup) s += noise.values[k];
        a[x] = apply(model.map, s / static_cast<double>(1 << g.d));
    }
    return a;
}

namespace detail {

// Periodic sums over windows [x + lo, x + lo + side) along axis c, side ≤ L.
inline std::vector<double> axis_window_sum(const std::vector<double>& f, const Lattice& g, int c, std::int64_t lo,
                                           std::int64_t side)
{
    const std::int64_t L = g.L;
    const std::size_t st = g.stride(c);
    std::vector<double> out(f.size());
    std::vector<double> line(L), pre(2 * L + 1);
    for (std::size_t base = 0; base < f.size(); ++base) {
        if ((base / st) % static_cast<std::size_t>(L) != 0) continue;
        for (std::int64_t k = 0; k < L; ++k) line[k] = f[base + k * st];
        pre[0] = 0.0;
        for (std::int64_t k = 0; k < 2 * L; ++k) pre[k + 1] = pre[k] + line[k % L];
        for (std::int64_t k = 0; k < L; ++k) {
            std::int64_t s = ((k + lo) % L + L) % L;
            out[base + k * st] = pre[s + side] - pre[s];
        }
    }
    return out;
}

} // namespace detail

// v_r(x): mean of a over the periodic cube x + [−⌊r/2⌋, r − ⌊r/2⌋)^d of side
// min(r, L). v_1 = a and v_L is the global mean.
inline std::vector<double> local_average(const std::vector<double>& a, const Lattice& g, std::int64_t r)
{
    require(r >= 1, "local_average: r must be at least 1");
    require(a.size() == g.size(), "local_average: field size mismatch");
    const std::int64_t side = std::min(r, g.L);
    if (side == 1) return a;
    std::vector<double> v = a;
    for (int c = 0; c < g.d; ++c) v = detail::axis_window_sum(v, g, c, -(side / 2), side);
    const double vol = std::pow(static_cast<double>(side), g.d);
    if (side == g.L) {
        // Exactly the global mean everywhere.
        NeumaierSum s;
        for (double x : a) s.add(x);
        std::fill(v.begin(), v.end(), s.value() / vol);
        return v;
    }
    for (double& x : v) x /= vol;
    return v;
}

namespace detail {

// C² quintic smoothstep, 0 for t ≤ −1/2 and 1 for t ≥ 1/2.
inline double smoothstep(double t)
{
    if (t <= -0.5) return 0.0;
    if (t >= 0.5) return 1.0;
    double u = t + 0.5;
    return u * u * u * (u * (u * 6.0 - 15.0) + 10.0);
}

// 1D partition of unity on the periodic lattice for cells [k 2^m, (k+1) 2^m):
// boundaries at k 2^m − 1/2, transitions of width 2^{m−1}. Returns up to two
// (cell, weight) pairs for coordinate x.
struct CellWeight {
    std::int64_t cell;
    double w;
};

inline int cell_weights(std::int64_t x, int m, std::int64_t L, CellWeight out[2])
{
    const std::int64_t size = std::int64_t{1} << m;
    if (size >= L) {
        out[0] = {0, 1.0};
        return 1;
    }
    const std::int64_t n = L / size;
    const std::int64_t k = x / size;
    const double width = std::ldexp(1.0, m - 1);
    // Signed distance to the nearest boundary of cell k.
    const double left = static_cast<double>(x - k * size) + 0.5;
    const double right = static_cast<double>((k + 1) * size - x) - 0.5;
    if (m >= 1 && left < 0.5 * width) {
        double s = smoothstep(left / width);
        out[0] = {k, s};
        out[1] = {(k + n - 1) % n, 1.0 - s};
        return 2;
    }
    if (m >= 1 && right < 0.5 * width) {
        double s = smoothstep(-right / width);
        out[0] = {(k + 1) % n, s};
        out[1] = {k, 1.0 - s};
        return 2;
    }
    out[0] = {k, 1.0};
    return 1;
}

} // namespace detail

// η_y^m(x) for all cells y of level m at one lattice site, tensorized.
inline void partition_weights(const Lattice& g, std::size_t x, int m,
                              std::vector<std::pair<std::array<std::int64_t, kMaxLatticeDim>, double>>& out)
{
    out.clear();
    auto xc = g.coords(x);
    detail::CellWeight w[kMaxLatticeDim][2];
    int cnt[kMaxLatticeDim];
    for (int c = 0; c < g.d; ++c) cnt[c] = detail::cell_weights(xc[c], m, g.L, w[c]);
    int total = 1;
    for (int c = 0; c < g.d; ++c) total *= cnt[c];
    const std::int64_t size = std::int64_t{1} << m;
    for (int t = 0; t < total; ++t) {
        int rem = t;
        std::array<std::int64_t, kMaxLatticeDim> y{};
        double weight = 1.0;
        for (int c = 0; c < g.d; ++c) {
            int pick = rem % cnt[c];
            rem /= cnt[c];
            y[c] = w[c][pick].cell * size;
            weight *= w[c][pick].w;
        }
        out.emplace_back(y, weight);
    }
}

// Telescoping decomposition: X_y^0 = L^{-d} Σ v_1 η_y^0,
// X_y^m = L^{-d} Σ (v_{2^m} − v_{2^{m−1}}) η_y^m, with v_r = v_L for r ≥ L, so
// the levels telescope to L^{-d} Σ v_L = L^{-d} Σ a.
inline MultilevelSample multilevel_decompose(const FieldModel& model, const NoiseLattice& noise,
                                             const DependenceStructure& s)
{
    const Lattice& g = noise.geom;
    require(g.d == s.d() && g.L == s.L(), "multilevel_decompose: geometry mismatch");
    require(std::has_single_bit(static_cast<std::uint64_t>(g.L)), "multilevel_decompose: L must be a power of two");
    std::vector<double> a = sample_field(model, noise);
    const double inv_vol = 1.0 / static_cast<double>(g.size());

    MultilevelSample out;
    out.structure = &s;
    out.values.assign(s.size(), Vector::Zero(1));
    std::vector<double> prev = a; // v_1
    std::vector<std::pair<std::array<std::int64_t, kMaxLatticeDim>, double>> pw;
    for (int m = 0; m <= s.max_level(); ++m) {
        std::vector<double> diff;
        if (m == 0) {
            diff = a;
        } else {
            std::vector<double> cur = local_average(a, g, std::int64_t{1} << m);
            diff.resize(cur.size());
            for (std::size_t x = 0; x < cur.size(); ++x) diff[x] = cur[x] - prev[x];
            prev = std::move(cur);
        }
        for (std::size_t x = 0; x < g.size(); ++x) {
            if (diff[x] == 0.0) continue;
            partition_weights(g, x, m, pw);
            for (const auto& [y, w] : pw) {
                LevelIndex i;
                i.m = m;
                i.y = y;
                out.values[s.flat(i)][0] += inv_vol * diff[x] * w;
            }
        }
    }
    return out;
}

// Direct functional L^{-d} Σ ξ a with ξ ≡ 1.
inline double field_functional(const FieldModel& model, const NoiseLattice& noise)
{
    auto a = sample_field(model, noise);
    NeumaierSum s;
    for (double v : a) s.add(v);
    return s.value() / static_cast<double>(a.size());
}

enum class Nonlinearity { identity, cube, signed_sqrt };
enum class Window { cell, box };

inline Nonlinearity parse_nonlinearity(const std::string& s)
{
    if (s == "identity") return Nonlinearity::identity;
    if (s == "cube") return Nonlinearity::cube;
    if (s == "signed-sqrt") return Nonlinearity::signed_sqrt;
    throw UsageError("unknown nonlinearity: " + s);
}

inline double apply(Nonlinearity g, double v)
{
    switch (g) {
    case Nonlinearity::identity: return v;
    case Nonlinearity::cube: return v * v * v;
    case Nonlinearity::signed_sqrt: return v < 0 ? -std::sqrt(-v) : std::sqrt(v);
    }
    return v;
}

// X_y^m = w_m L^{-d} g(S_y^m), S_y^m the noise sum over the window of (m, y)
// divided by √(window size). Window "cell" is y + [0, 2^m)^d, "box" the full
// support box y + K log L [−2^m, 2^m]^d. Every g is odd and every noise law
// symmetric, so E X_y^m = 0 exactly and no centering correction is needed.
// Component 0 uses noise channel 0; component c ≥ 1 uses (S⁰ + S^c)/√2.
struct SyntheticSpec {
    std::string name = "custom";
    std::vector<double> level_weights; // empty: all ones
    Nonlinearity g = Nonlinearity::identity;
    NoiseDist noise = NoiseDist::rademacher;
    Window window = Window::cell;
    int N = 1;
    double B = 1.0;     // budget for ||g(S)||_{exp^γ}
    double gamma = 2.0; // tail exponent of g(S)

    double weight(int m) const
    {
        if (level_weights.empty()) return 1.0;
        return m < static_cast<int>(level_weights.size()) ? level_weights[m] : 0.0;
    }
};

inline std::vector<std::string> preset_names()
{
    return {"identity-gaussian", "identity-rademacher", "identity-laplace", "cube-rademacher", "signed-sqrt-laplace"};
}

inline SyntheticSpec preset(const std::string& name)
{
    SyntheticSpec s;
    s.name = name;
    if (name == "identity-gaussian") {
        s.noise = NoiseDist::gaussian;
    } else if (name == "identity-rademacher") {
        s.noise = NoiseDist::rademacher;
    } else if (name == "identity-laplace") {
        s.noise = NoiseDist::laplace;
        s.gamma = 1.0;
    } else if (name == "cube-rademacher") {
        s.g = Nonlinearity::cube;
        s.B = 2.0;
        s.gamma = 2.0 / 3.0;
    } else if (name == "signed-sqrt-laplace") {
        s.g = Nonlinearity::signed_sqrt;
        s.noise = NoiseDist::laplace;
    } else {
        throw UsageError("unknown preset: " + name);
    }
    return s;
}

class SyntheticGenerator {
public:
    SyntheticGenerator(SyntheticSpec spec, const DependenceStructure& s) : spec_(std::move(spec)), s_(&s)
    {
        require(spec_.N >= 1 && spec_.N <= kMaxGaussianDim, "SyntheticGenerator: N outside [1, 8]");
        for (int m = 0; m <= s.max_level(); ++m)
            require(std::isfinite(spec_.weight(m)) && spec_.weight(m) >= 0.0, "SyntheticGenerator: bad level weight");
        geom_ = {s.d(), s.L()};
    }

    const SyntheticSpec& spec() const { return spec_; }
    const DependenceStructure& structure() const { return *s_; }
    const Lattice& geometry() const { return geom_; }

    NoiseLattice draw(std::uint64_t seed) const { return draw_noise(geom_.d, geom_.L, spec_.noise, seed, spec_.N); }

    // Per-level normalized window sums S_y^m, one vector per channel, in the
    // level's lexicographic order.
    std::vector<std::vector<double>> window_sums(const NoiseLattice& noise, int m) const
    {
        std::vector<std::vector<double>> out(noise.channels);
        const std::int64_t L = geom_.L, step = std::int64_t{1} << m;
        std::int64_t lo, side;
        if (spec_.window == Window::cell) {
            lo = 0;
            side = std::min(step, L);
        } else {
            std::int64_t h = static_cast<std::int64_t>(std::floor(s_->half_width(m)));
            side = std::min<std::int64_t>(2 * h + 1, L);
            lo = side == L ? 0 : -h;
        }
        const double norm = 1.0 / std::sqrt(std::pow(static_cast<double>(side), geom_.d));
        for (int c = 0; c < noise.channels; ++c) {
            std::vector<double> f(noise.channel(c), noise.channel(c) + geom_.size());
            for (int a = 0; a < geom_.d; ++a) f = detail::axis_window_sum(f, geom_, a, lo, side);
            const std::int64_t n = s_->side_count(m);
            std::vector<double>& v = out[c];
            v.resize(s_->level_size(m));
            for (std::size_t k = 0; k < v.size(); ++k) {
                std::size_t pos = k;
                std::array<std::int64_t, kMaxLatticeDim> y{};
                for (int a = geom_.d - 1; a >= 0; --a) {
                    y[a] = static_cast<std::int64_t>(pos % n) * step;
                    pos /= n;
                }
                v[k] = f[geom_.flat(y)] * norm;
            }
        }
        return out;
    }

    MultilevelSample decompose(const NoiseLattice& noise) const
    {
        check(noise);
        MultilevelSample out;
        out.structure = s_;
        out.values.assign(s_->size(), Vector::Zero(spec_.N));
        const double inv_vol = 1.0 / static_cast<double>(geom_.size());
        for (int m = 0; m <= s_->max_level(); ++m) {
            const double w = spec_.weight(m);
            if (w == 0.0) continue;
            auto sums = window_sums(noise, m);
            LevelIndex first;
            first.m = m;
            const std::size_t off = s_->flat(first);
            for (std::size_t k = 0; k < s_->level_size(m); ++k) {
                Vector& x = out.values[off + k];
                x[0] = w * inv_vol * apply(spec_.g, sums[0][k]);
                for (int c = 1; c < spec_.N; ++c)
                    x[c] = w * inv_vol * apply(spec_.g, (sums[0][k] + sums[c][k]) / std::numbers::sqrt2);
            }
        }
        return out;
    }

    Vector total(const NoiseLattice& noise) const
    {
        check(noise);
        Vector t = Vector::Zero(spec_.N);
        const double inv_vol = 1.0 / static_cast<double>(geom_.size());
        for (int c = 0; c < spec_.N; ++c) {
            NeumaierSum acc;
            for (int m = 0; m <= s_->max_level(); ++m) {
                const double w = spec_.weight(m);
                if (w == 0.0) continue;
                auto sums = window_sums(noise, m);
                for (std::size_t k = 0; k < sums[0].size(); ++k) {
                    double v = c == 0 ? sums[0][k] : (sums[0][k] + sums[c][k]) / std::numbers::sqrt2;
                    acc.add(w * inv_vol * apply(spec_.g, v));
                }
            }
            t[c] = acc.value();
        }
        return t;
    }

    // Noise sites read by X_y^m (structural locality check).
    std::vector<std::size_t> support(const LevelIndex& i) const
    {
        const std::int64_t L = geom_.L, step = std::int64_t{1} << i.m;
        std::int64_t lo, side;
        if (spec_.window == Window::cell) {
            lo = 0;
            side = std::min(step, L);
        } else {
            std::int64_t h = static_cast<std::int64_t>(std::floor(s_->half_width(i.m)));
            side = std::min<std::int64_t>(2 * h + 1, L);
            lo = side == L ? 0 : -h;
        }
        std::vector<std::size_t> out;
        std::size_t total = 1;
        for (int a = 0; a < geom_.d; ++a) total *= static_cast<std::size_t>(side);
        for (std::size_t t = 0; t < total; ++t) {
            std::size_t rem = t;
            std::array<std::int64_t, kMaxLatticeDim> x{};
            for (int a = 0; a < geom_.d; ++a) {
                x[a] = i.y[a] + lo + static_cast<std::int64_t>(rem % side);
                rem /= side;
            }
            out.push_back(geom_.flat(x));
        }
        std::sort(out.begin(), out.end());
        return out;
    }

private:
    void check(const NoiseLattice& noise) const
    {
        require(noise.geom.d == geom_.d && noise.geom.L == geom_.L, "SyntheticGenerator: geometry mismatch");
        require(noise.channels >= spec_.N, "SyntheticGenerator: too few noise channels");
    }
    SyntheticSpec spec_;
    const DependenceStructure* s_;
    Lattice geom_;
};

// Exact law of component 0 of X over all 2^{L^d} Rademacher configurations.
inline DiscreteLaw brute_force_law(const SyntheticGenerator& gen)
{
    require(gen.spec().noise == NoiseDist::rademacher, "brute_force_law: Rademacher noise required");
    require(gen.spec().N == 1, "brute_force_law: scalar statistic required");
    const std::size_t sites = gen.geometry().size();
    require(sites <= 20, "brute_force_law: state space too large (L^d > 20)");
    const std::size_t configs = std::size_t{1} << sites;
    NoiseLattice noise;
    noise.geom = gen.geometry();
    noise.dist = NoiseDist::rademacher;
    noise.values.resize(sites);
    std::vector<double> vals(configs), probs(configs, std::ldexp(1.0, -static_cast<int>(sites)));
    for (std::size_t k = 0; k < configs; ++k) {
        for (std::size_t x = 0; x < sites; ++x) noise.values[x] = ((k >> x) & 1) ? 1.0 : -1.0;
        vals[k] = gen.total(noise)[0];
    }
    return DiscreteLaw::scalar(std::move(vals), std::move(probs));
}

// n realizations of X; realization k uses noise seeded by stream_seed(master, k).
inline SampleSet monte_carlo(const SyntheticGenerator& gen, std::size_t n, std::uint64_t master_seed,
                             unsigned threads = 1)
{
    require(n >= 1, "monte_carlo: n must be positive");
    Matrix out(static_cast<Eigen::Index>(n), gen.spec().N);
    parallel_for(n, threads, [&](std::size_t b, std::size_t e) {
        for (std::size_t k = b; k < e; ++k)
            out.row(static_cast<Eigen::Index>(k)) = gen.total(gen.draw(stream_seed(master_seed, k))).transpose();
    });
    return SampleSet(std::move(out), master_seed);
}

// Field-model variant: X = L^{-d} Σ a.
inline SampleSet monte_carlo(const FieldModel& model, const Lattice& g, NoiseDist dist, std::size_t n,
                             std::uint64_t master_seed, unsigned threads = 1)
{
    require(n >= 1, "monte_carlo: n must be positive");
    Matrix out(static_cast<Eigen::Index>(n), 1);
    parallel_for(n, threads, [&](std::size_t b, std::size_t e) {
        for (std::size_t k = b; k < e; ++k)
            out(static_cast<Eigen::Index>(k), 0)
                = field_functional(model, draw_noise(g.d, g.L, dist, stream_seed(master_seed, k)));
    });
    return SampleSet(std::move(out), master_seed);
}

// Flat little-endian dump: int64 header (d, L, N, n), then n·N doubles row by row.
inline void write_dump(const std::string& path, const SampleSet& s, int d, std::int64_t L)
{
    static_assert(std::endian::native == std::endian::little, "dump layout assumes a little-endian host");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw UsageError("cannot open dump file: " + path);
    std::int64_t hdr[4] = {d, L, s.dim(), static_cast<std::int64_t>(s.n())};
    f.write(reinterpret_cast<const char*>(hdr), sizeof hdr);
    for (std::size_t k = 0; k < s.n(); ++k)
        for (int c = 0; c < s.dim(); ++c) {
            double v = s.values(static_cast<Eigen::Index>(k), c);
            f.write(reinterpret_cast<const char*>(&v), sizeof v);
        }
    if (!f) throw UsageError("write failed: " + path);
}

} // namespace mlclt
