#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mlclt/concentration.hpp"
#include "mlclt/distance.hpp"
#include "mlclt/error.hpp"
#include "mlclt/fields.hpp"
#include "mlclt/format.hpp"
#include "mlclt/multilevel.hpp"
#include "mlclt/rng.hpp"
#include "mlclt/stein.hpp"

namespace mlclt {

inline constexpr const char* kVersion = "1.0.0";
inline constexpr const char* kSchemaVersion = "v1";

// Config grammar: one `key = value` per line, `#` starts a comment, lists are
// comma separated, policy constants are written `policy.NAME = value`.
struct ExperimentConfig {
    std::string experiment = "clt-rate";
    int d = 1;
    int N = 1;
    std::optional<double> gamma; // defaults to the preset's
    double K = 2.0;
    std::optional<double> B; // defaults to the preset's
    std::optional<std::vector<std::int64_t>> L_list;
    std::size_t n_samples = 100000;
    std::string preset = "cube-rademacher";
    std::string window = "cell";
    std::vector<std::string> presets; // tails; empty means all
    std::uint64_t master_seed = 1;
    unsigned threads = 1;
    std::string output_path;
    std::vector<double> eps_list{0.25, 0.5};
    double delta = 0.1;
    std::size_t third_points = 1000;
    bool majorant_all = false;
    std::int64_t ell = 0; // moderate; 0 means 2^{round(log2 √L)}
    double S = 1.0;
    double lambda = 1.0; // bound-calc: Λ = lambda·Id
    PolicyTable policy;

    std::vector<std::int64_t> levels() const
    {
        if (L_list) return *L_list;
        if (experiment == "clt-rate") return {16, 32, 64, 128, 256, 512};
        if (experiment == "bound-calc") return {16, 32, 64, 128, 256, 512, 1024, 2048, 4096};
        if (experiment == "tails") return {256};
        if (experiment == "moderate") return {64, 256};
        if (experiment == "oracle") return {2};
        return {};
    }
};

inline const std::vector<std::string>& experiment_names()
{
    static const std::vector<std::string> v{"clt-rate", "stein-certify", "bound-calc", "tails", "moderate", "oracle"};
    return v;
}

namespace detail {

inline std::string trim(const std::string& s)
{
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s)
{
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

inline double parse_real(const std::string& key, const std::string& v)
{
    try {
        std::size_t pos = 0;
        double x = std::stod(v, &pos);
        if (pos != v.size() || !std::isfinite(x)) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw UsageError("config: " + key + " expects a number, got '" + v + "'");
    }
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v)
{
    try {
        std::size_t pos = 0;
        if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
        unsigned long long x = std::stoull(v, &pos, 0);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw UsageError("config: " + key + " expects a nonnegative integer, got '" + v + "'");
    }
}

} // namespace detail

inline void apply_setting(ExperimentConfig& c, const std::string& key_in, const std::string& value_in)
{
    using namespace detail;
    const std::string key = trim(key_in), v = trim(value_in);
    if (key.rfind("policy.", 0) == 0) {
        c.policy.set(key.substr(7), parse_real(key, v));
    } else if (key == "experiment") {
        c.experiment = v == "bound-calculator" ? "bound-calc" : v;
    } else if (key == "d") {
        c.d = static_cast<int>(parse_u64(key, v));
    } else if (key == "N") {
        c.N = static_cast<int>(parse_u64(key, v));
    } else if (key == "gamma") {
        c.gamma = parse_real(key, v);
    } else if (key == "K") {
        c.K = parse_real(key, v);
    } else if (key == "B") {
        c.B = parse_real(key, v);
    } else if (key == "L_list") {
        std::vector<std::int64_t> l;
        for (const auto& s : split_list(v)) l.push_back(static_cast<std::int64_t>(parse_u64(key, s)));
        c.L_list = l;
    } else if (key == "n_samples") {
        c.n_samples = parse_u64(key, v);
    } else if (key == "preset") {
        c.preset = v;
    } else if (key == "presets") {
        c.presets = split_list(v);
    } else if (key == "window") {
        c.window = v;
    } else if (key == "master_seed" || key == "seed") {
        c.master_seed = parse_u64(key, v);
    } else if (key == "threads") {
        c.threads = static_cast<unsigned>(parse_u64(key, v));
    } else if (key == "output_path" || key == "out") {
        c.output_path = v;
    } else if (key == "eps_list") {
        c.eps_list.clear();
        for (const auto& s : split_list(v)) c.eps_list.push_back(parse_real(key, s));
    } else if (key == "delta") {
        c.delta = parse_real(key, v);
    } else if (key == "third_points") {
        c.third_points = parse_u64(key, v);
    } else if (key == "majorant_all") {
        c.majorant_all = parse_u64(key, v) != 0;
    } else if (key == "ell") {
        c.ell = static_cast<std::int64_t>(parse_u64(key, v));
    } else if (key == "S") {
        c.S = parse_real(key, v);
    } else if (key == "lambda") {
        c.lambda = parse_real(key, v);
    } else {
        throw UsageError("config: unknown key '" + key + "'");
    }
}

inline void apply_config_text(ExperimentConfig& c, const std::string& text)
{
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw UsageError("config line " + std::to_string(lineno) + ": expected key = value");
        apply_setting(c, line.substr(0, eq), line.substr(eq + 1));
    }
}

inline void apply_config_file(ExperimentConfig& c, const std::string& path)
{
    std::ifstream f(path);
    if (!f) throw UsageError("cannot read config file: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    apply_config_text(c, ss.str());
}

inline bool statistical(const std::string& e) { return e == "clt-rate" || e == "tails" || e == "moderate" || e == "oracle"; }

inline void validate(const ExperimentConfig& c)
{
    if (std::find(experiment_names().begin(), experiment_names().end(), c.experiment) == experiment_names().end())
        throw UsageError("unknown experiment: " + c.experiment);
    require(c.d >= 1 && c.d <= kMaxLatticeDim, "config: d outside [1, 3]");
    require(c.N >= 1 && c.N <= kMaxGaussianDim, "config: N outside [1, 8]");
    auto l = c.levels();
    for (std::size_t k = 1; k < l.size(); ++k)
        require(l[k] > l[k - 1], "config: L_list must be strictly increasing");
    if (statistical(c.experiment)) require(c.n_samples >= 1000, "config: n_samples must be at least 1000");
    require(c.window == "cell" || c.window == "box", "config: window must be cell or box");
    require(c.S >= 1.0, "config: S must be at least 1");
    require(c.lambda > 0.0, "config: lambda must be positive");
    for (double e : c.eps_list) require(e > 0.0 && e <= 0.5, "config: eps values must lie in (0, 1/2]");
    if (c.experiment == "clt-rate" || c.experiment == "moderate") preset(c.preset);
    for (const auto& p : c.presets) preset(p);
}

inline nlohmann::json to_json(const ExperimentConfig& c)
{
    nlohmann::json j;
    j["experiment"] = c.experiment;
    j["d"] = c.d;
    j["N"] = c.N;
    j["gamma"] = c.gamma ? nlohmann::json(*c.gamma) : nlohmann::json("preset");
    j["K"] = c.K;
    j["B"] = c.B ? nlohmann::json(*c.B) : nlohmann::json("preset");
    j["L_list"] = c.levels();
    j["n_samples"] = c.n_samples;
    j["preset"] = c.preset;
    j["presets"] = c.presets;
    j["window"] = c.window;
    j["master_seed"] = c.master_seed;
    j["threads"] = c.threads;
    j["output_path"] = c.output_path;
    j["eps_list"] = c.eps_list;
    j["delta"] = c.delta;
    j["third_points"] = c.third_points;
    j["majorant_all"] = c.majorant_all;
    j["ell"] = c.ell;
    j["S"] = c.S;
    j["lambda"] = c.lambda;
    j["policy"] = nlohmann::json::object();
    for (const auto& [k, v] : c.policy.overrides()) j["policy"][k] = v;
    return j;
}

// A CSV table whose first column is the schema hash of its header.
struct ResultTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<double> row_seconds;

    std::string schema_hash() const
    {
        std::string joined = kSchemaVersion;
        for (const auto& h : header) joined += "," + h;
        std::ostringstream os;
        os << std::hex << std::setw(16) << std::setfill('0') << fnv1a(joined);
        return os.str();
    }
    std::string header_line() const
    {
        std::string s = "schema_hash";
        for (const auto& h : header) s += "," + h;
        return s;
    }
    std::string row_line(const std::vector<std::string>& r) const
    {
        std::string s = schema_hash();
        for (const auto& v : r) s += "," + v;
        return s;
    }
    std::string to_csv() const
    {
        std::string s = header_line() + "\n";
        for (const auto& r : rows) s += row_line(r) + "\n";
        return s;
    }
};

// Streams rows as they are produced, flushing each one.
class CsvSink {
public:
    explicit CsvSink(std::ostream* os = nullptr) : os_(os) {}
    void begin(const ResultTable& t)
    {
        if (os_) *os_ << t.header_line() << '\n' << std::flush;
    }
    void row(const ResultTable& t, const std::vector<std::string>& r)
    {
        if (os_) *os_ << t.row_line(r) << '\n' << std::flush;
    }

private:
    std::ostream* os_;
};

struct ExperimentResult {
    ResultTable table;
    nlohmann::json details = nlohmann::json::object();
    std::vector<std::string> warnings;
    double wallclock = 0.0;
};

inline std::string fmt(double v) { return format_double(v); }
inline std::string fmt(std::int64_t v) { return std::to_string(v); }
inline std::string fmt(std::size_t v) { return std::to_string(v); }
inline std::string fmt(int v) { return std::to_string(v); }
inline std::string fmt(bool v) { return v ? "1" : "0"; }
inline std::string fmt_u64(std::uint64_t v) { return std::to_string(v); }

inline std::string sanitize(std::string s)
{
    for (char& ch : s)
        if (ch == ',' || ch == '\n' || ch == '\r' || ch == '"') ch = ';';
    return s;
}

struct SampleStats {
    Vector mean;
    Matrix cov;
};

inline SampleStats sample_stats(const SampleSet& s)
{
    const int N = s.dim();
    SampleStats st;
    st.mean = Vector::Zero(N);
    st.cov = Matrix::Zero(N, N);
    std::vector<double> col;
    for (int a = 0; a < N; ++a) {
        col = s.column(a);
        st.mean[a] = pairwise_sum(col) / static_cast<double>(s.n());
    }
    std::vector<double> prod(s.n());
    for (int a = 0; a < N; ++a)
        for (int b = a; b < N; ++b) {
            for (std::size_t k = 0; k < s.n(); ++k) {
                auto i = static_cast<Eigen::Index>(k);
                prod[k] = (s.values(i, a) - st.mean[a]) * (s.values(i, b) - st.mean[b]);
            }
            st.cov(a, b) = st.cov(b, a) = pairwise_sum(prod) / static_cast<double>(s.n() - 1);
        }
    return st;
}

// Centers and whitens by the sample mean and covariance.
inline SampleSet normalize_samples(const SampleSet& s, const SampleStats& st)
{
    Eigen::LLT<Matrix> llt(st.cov);
    if (llt.info() != Eigen::Success) throw NumericalError("normalize_samples: sample covariance not positive definite");
    Matrix centered = s.values.rowwise() - st.mean.transpose();
    Matrix z = llt.matrixL().solve(centered.transpose()).transpose();
    return SampleSet(std::move(z), s.master_seed);
}

// W1 (N = 1) or sliced W1 (N > 1) of normalized samples to the standard Gaussian.
inline double normalized_distance(const SampleSet& z, std::uint64_t seed)
{
    if (z.dim() == 1) return w1_empirical_gaussian(z, 1.0);
    return sliced_w1(z, GaussianLaw::standard(z.dim()), 64, seed);
}

// Monte Carlo floor: the same distance for an equally sized Gaussian sample.
inline double gaussian_floor(std::size_t n, int N, std::uint64_t seed)
{
    Matrix g(static_cast<Eigen::Index>(n), N);
    for (std::size_t k = 0; k < n; ++k) {
        Rng rng(stream_seed(seed, k));
        for (int c = 0; c < N; ++c) g(static_cast<Eigen::Index>(k), c) = rng.normal();
    }
    SampleSet s(std::move(g), seed);
    return normalized_distance(normalize_samples(s, sample_stats(s)), stream_seed(seed, 0xd1));
}

struct RatePoint {
    double L = 0.0;
    double w1 = 0.0;
    double floor = 0.0;
};

struct RateFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
    std::size_t used = 0;
    std::vector<std::string> warnings;
};

// Least squares of log₂ w1 on log₂ L, dropping nonpositive distances and rows
// below twice the Monte Carlo floor.
inline RateFit fit_rate(const std::vector<RatePoint>& rows)
{
    RateFit f;
    std::vector<double> xs, ys;
    for (const auto& r : rows) {
        if (!(r.w1 > 0.0) || !(r.L > 0.0)) {
            f.warnings.push_back("dropped L=" + format_double(r.L) + ": nonpositive distance");
            continue;
        }
        if (r.w1 < 2.0 * r.floor) {
            f.warnings.push_back("dropped L=" + format_double(r.L) + ": below twice the Monte Carlo floor");
            continue;
        }
        xs.push_back(std::log2(r.L));
        ys.push_back(std::log2(r.w1));
    }
    if (xs.size() < 3) throw UsageError("fit_rate: fewer than 3 usable rows");
    const double n = static_cast<double>(xs.size());
    double mx = 0, my = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) mx += xs[k], my += ys[k];
    mx /= n;
    my /= n;
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        sxx += (xs[k] - mx) * (xs[k] - mx);
        sxy += (xs[k] - mx) * (ys[k] - my);
        syy += (ys[k] - my) * (ys[k] - my);
    }
    require(sxx > 0.0, "fit_rate: need at least two distinct L");
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    f.r2 = syy > 0.0 ? sxy * sxy / (sxx * syy) : 1.0;
    f.used = xs.size();
    return f;
}

inline SyntheticSpec configured_preset(const ExperimentConfig& c, const std::string& name)
{
    SyntheticSpec s = preset(name);
    s.N = c.N;
    s.window = c.window == "box" ? Window::box : Window::cell;
    if (c.gamma) s.gamma = *c.gamma;
    if (c.B) s.B = *c.B;
    return s;
}

inline DependenceStructure configured_structure(const ExperimentConfig& c, const SyntheticSpec& s, std::int64_t L)
{
    return DependenceStructure(c.d, L, c.K, s.gamma, std::max(1.0, s.B));
}

namespace detail {

template <class F>
double timed(F&& f)
{
    auto t0 = std::chrono::steady_clock::now();
    f();
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// E h(g(ξ)) for one noise site; h must be even in its argument's sign.
template <class H>
double site_expectation(const SyntheticSpec& spec, H&& h)
{
    auto hv = [&](double x) { return h(apply(spec.g, x)); };
    switch (spec.noise) {
    case NoiseDist::rademacher: return hv(1.0);
    case NoiseDist::uniform: {
        const double a = std::sqrt(3.0);
        return integrate_adaptive([&](double x) { return hv(x); }, 0.0, a) / a;
    }
    case NoiseDist::laplace: {
        const double s = 1.0 / std::numbers::sqrt2;
        return integrate_adaptive([&](double x) { return hv(x) * std::exp(-x / s) / s; }, 0.0, 80.0);
    }
    case NoiseDist::gaussian:
        return integrate_adaptive([&](double x) { return 2.0 * hv(x) * normal_pdf(x); }, 0.0, 40.0);
    }
    return 0.0;
}

} // namespace detail

// Var g(ξ) of a level-0 cell variable (its mean is 0 by symmetry).
inline double site_variance(const SyntheticSpec& spec)
{
    return detail::site_expectation(spec, [](double v) { return v * v; });
}

// Smallest b with E exp(|g(ξ)|^γ0 / b^γ0) ≤ 2, by bisection.
inline double exp_moment_scale(const SyntheticSpec& spec, double gamma0)
{
    auto moment = [&](double b) {
        double m = detail::site_expectation(spec, [&](double v) { return std::exp(std::pow(std::abs(v) / b, gamma0)); });
        return std::isfinite(m) ? m : std::numeric_limits<double>::infinity();
    };
    double lo = 1e-3, hi = 1.0;
    while (moment(hi) > 2.0) hi *= 2.0;
    for (int it = 0; it < 100; ++it) {
        double mid = std::sqrt(lo * hi);
        (moment(mid) > 2.0 ? lo : hi) = mid;
    }
    return hi;
}

// sup |g(ξ)|, infinite for unbounded noise.
inline double site_bound(const SyntheticSpec& spec)
{
    switch (spec.noise) {
    case NoiseDist::rademacher: return std::abs(apply(spec.g, 1.0));
    case NoiseDist::uniform: return std::abs(apply(spec.g, std::sqrt(3.0)));
    default: return kUnbounded;
    }
}

// ---------------------------------------------------------------- clt-rate

inline ExperimentResult run_clt_rate(const ExperimentConfig& c, CsvSink& sink)
{
    ExperimentResult res;
    auto& t = res.table;
    t.header = {"experiment",       "preset",          "d",
                "N",                "L",               "n",
                "seed",             "status",          "estimated_variance",
                "normalized_w1",    "sliced_w1",       "w1_floor",
                "bound_eps",        "bound_eps_clamped", "bound_ell",
                "bound_leading",    "bound_r_lowlevel", "bound_r_alllevel",
                "bound_r_tail",     "bound_total",     "condition_lhs",
                "condition_satisfied"};
    sink.begin(t);
    const SyntheticSpec spec = configured_preset(c, c.preset);
    std::vector<RatePoint> pts;
    for (std::int64_t L : c.levels()) {
        const std::uint64_t seed = stream_seed(c.master_seed, static_cast<std::uint64_t>(L));
        std::vector<std::string> row{c.experiment, spec.name, fmt(c.d), fmt(c.N), fmt(L), fmt(c.n_samples), fmt_u64(seed)};
        double secs = detail::timed([&] {
            try {
                DependenceStructure s = configured_structure(c, spec, L);
                SyntheticGenerator gen(spec, s);
                SampleSet x = monte_carlo(gen, c.n_samples, seed, c.threads);
                SampleStats st = sample_stats(x);
                SampleSet z = normalize_samples(x, st);
                const double dist = normalized_distance(z, stream_seed(seed, 0xd1));
                const double sliced = c.N == 1 ? dist : sliced_w1(z, GaussianLaw::standard(c.N), 64, stream_seed(seed, 0xd2));
                const double floor = gaussian_floor(c.n_samples, c.N, stream_seed(seed, 0xf1));
                SpdMatrix lambda(st.cov);
                BarConstants bars = bar_constants(s, c.S, c.policy);
                EpsEll ee = choose_eps_ell(s, lambda, bars, c.policy);
                TheoremBound tb = theorem_bound(s, lambda, bars, ee.eps, ee.ell, c.policy);
                row.insert(row.end(), {"ok", fmt(st.cov(0, 0)), fmt(dist), fmt(sliced), fmt(floor), fmt(ee.eps),
                                       fmt(ee.eps_clamped), fmt(ee.ell), fmt(tb.leading), fmt(tb.r_lowlevel),
                                       fmt(tb.r_alllevel), fmt(tb.r_tail), fmt(tb.total), fmt(tb.condition_lhs),
                                       fmt(tb.condition_satisfied)});
                pts.push_back({static_cast<double>(L), dist, floor});
            } catch (const std::exception& e) {
                row.push_back("error: " + sanitize(e.what()));
                while (row.size() < t.header.size()) row.push_back("nan");
                res.warnings.push_back("L=" + std::to_string(L) + ": " + e.what());
            }
        });
        t.rows.push_back(row);
        t.row_seconds.push_back(secs);
        sink.row(t, row);
    }
    if (pts.size() >= 3) {
        try {
            RateFit f = fit_rate(pts);
            res.details["fit"] = {{"slope", f.slope}, {"intercept", f.intercept}, {"r2", f.r2}, {"used", f.used},
                                  {"warnings", f.warnings}};
        } catch (const std::exception& e) {
            res.warnings.push_back(std::string("fit_rate: ") + e.what());
        }
    }
    return res;
}

// ------------------------------------------------------------ bound-calc

inline ExperimentResult run_bound_calc(const ExperimentConfig& c, CsvSink& sink)
{
    ExperimentResult res;
    auto& t = res.table;
    t.header = {"experiment", "d",          "N",          "L",           "log2_L",         "K",
                "gamma",      "B",          "S",          "lambda",      "eps_raw",        "eps",
                "eps_clamped", "ell",       "ell_clamped", "leading",    "r_lowlevel",     "r_alllevel",
                "r_tail",     "total",      "condition_lhs", "condition_rhs", "condition_satisfied",
                "variance_norm_bound"};
    sink.begin(t);
    const double gamma = c.gamma.value_or(1.0), B = c.B.value_or(1.0);
    for (std::int64_t L : c.levels()) {
        std::vector<std::string> row;
        double secs = detail::timed([&] {
            DependenceStructure s(c.d, L, c.K, gamma, B);
            SpdMatrix lambda = SpdMatrix::identity(c.N, c.lambda);
            BarConstants bars = bar_constants(s, c.S, c.policy);
            EpsEll ee = choose_eps_ell(s, lambda, bars, c.policy);
            TheoremBound tb = theorem_bound(s, lambda, bars, ee.eps, ee.ell, c.policy);
            row = {c.experiment,     fmt(c.d),          fmt(c.N),          fmt(L),
                   fmt(s.log_l()),   fmt(c.K),          fmt(gamma),        fmt(B),
                   fmt(c.S),         fmt(c.lambda),     fmt(ee.eps_raw),   fmt(ee.eps),
                   fmt(ee.eps_clamped), fmt(ee.ell),    fmt(ee.ell_clamped), fmt(tb.leading),
                   fmt(tb.r_lowlevel), fmt(tb.r_alllevel), fmt(tb.r_tail), fmt(tb.total),
                   fmt(tb.condition_lhs), fmt(tb.condition_rhs), fmt(tb.condition_satisfied),
                   fmt(variance_norm_bound(s, c.policy))};
        });
        t.rows.push_back(row);
        t.row_seconds.push_back(secs);
        sink.row(t, row);
    }
    res.details["log_base"] = 2;
    return res;
}

// ------------------------------------------------------------------ tails

struct TailExperimentRow {
    std::string preset;
    std::string kind; // bennett (one-sided) or iid (two-sided)
    TailRow tail;
};

// Sums of the L^d independent level-0 cell variables g(ξ_x), n trials.
inline std::vector<double> cell_sums(const SyntheticSpec& spec, int d, std::int64_t L, std::size_t n,
                                     std::uint64_t seed, unsigned threads)
{
    std::vector<double> out(n);
    parallel_for(n, threads, [&](std::size_t b, std::size_t e) {
        for (std::size_t k = b; k < e; ++k) {
            NoiseLattice z = draw_noise(d, L, spec.noise, stream_seed(seed, k));
            NeumaierSum s;
            for (double v : z.values) s.add(apply(spec.g, v));
            out[k] = s.value();
        }
    });
    return out;
}

inline std::vector<TailExperimentRow> tail_comparison(const SyntheticSpec& spec, int d, std::int64_t L,
                                                      std::size_t n, std::uint64_t seed, unsigned threads,
                                                      int points = 20)
{
    const double M = std::pow(static_cast<double>(L), d);
    const double var = site_variance(spec), V = M * var;
    const double gamma0 = spec.gamma;
    const double b = exp_moment_scale(spec, gamma0);
    const double A = site_bound(spec);
    std::vector<double> x = cell_sums(spec, d, L, n, seed, threads);
    std::vector<TailExperimentRow> rows;
    for (int k = 1; k <= points; ++k) {
        const double r = 4.0 * std::sqrt(V) * k / points;
        TailRow t;
        t.r = r;
        t.empirical_tail = empirical_tail(x, r);
        TailBound tb = iid_tail_bound(b, gamma0, V, M, r);
        t.bound = tb.bound;
        t.valid = tb.valid;
        t.slack = mc_slack(t.empirical_tail, n);
        rows.push_back({spec.name, "iid", t});
    }
    if (std::isfinite(A)) {
        for (int k = 1; k <= points; ++k) {
            const double r = 4.0 * std::sqrt(V) * k / points;
            std::size_t cnt = 0;
            for (double v : x)
                if (v >= r) ++cnt;
            TailRow t;
            t.r = r;
            t.empirical_tail = static_cast<double>(cnt) / static_cast<double>(n);
            t.bound = bennett_bound(V, A, r);
            t.valid = true;
            t.slack = mc_slack(t.empirical_tail, n);
            rows.push_back({spec.name, "bennett", t});
        }
    }
    return rows;
}

inline ExperimentResult run_tails(const ExperimentConfig& c, CsvSink& sink)
{
    ExperimentResult res;
    auto& t = res.table;
    t.header = {"experiment", "preset", "L", "n", "kind", "r", "empirical_tail", "bound", "valid_flag", "slack",
                "dominated"};
    sink.begin(t);
    std::vector<std::string> names = c.presets.empty() ? preset_names() : c.presets;
    for (std::int64_t L : c.levels()) {
        for (std::size_t p = 0; p < names.size(); ++p) {
            SyntheticSpec spec = configured_preset(c, names[p]);
            std::vector<TailExperimentRow> rows;
            double secs = detail::timed([&] {
                rows = tail_comparison(spec, c.d, L, c.n_samples,
                                       stream_seed(c.master_seed, static_cast<std::uint64_t>(L) * 64 + p), c.threads);
            });
            for (const auto& r : rows) {
                bool dom = !r.tail.valid || r.tail.empirical_tail <= r.tail.bound + r.tail.slack;
                std::vector<std::string> row{c.experiment, r.preset, fmt(L), fmt(c.n_samples), r.kind, fmt(r.tail.r),
                                             fmt(r.tail.empirical_tail), fmt(r.tail.bound), fmt(r.tail.valid),
                                             fmt(r.tail.slack), fmt(dom)};
                t.rows.push_back(row);
                t.row_seconds.push_back(secs / rows.size());
                sink.row(t, row);
            }
        }
    }
    return res;
}

// --------------------------------------------------------------- moderate

struct ModerateSamples {
    std::vector<double> total, high, low, reassembly_error;
};

inline ModerateSamples moderate_samples(const SyntheticGenerator& gen, const Grouping& g, std::size_t n,
                                        std::uint64_t seed, unsigned threads)
{
    ModerateSamples out;
    out.total.resize(n);
    out.high.resize(n);
    out.low.resize(n);
    out.reassembly_error.resize(n);
    parallel_for(n, threads, [&](std::size_t b, std::size_t e) {
        for (std::size_t k = b; k < e; ++k) {
            MultilevelSample ms = gen.decompose(gen.draw(stream_seed(seed, k)));
            GroupedValues gv = grouped_values(ms, g);
            const double x = ms.total()[0];
            out.total[k] = x;
            out.high[k] = gv.total_high[0];
            out.low[k] = gv.total_low[0];
            out.reassembly_error[k] = std::abs(gv.total_grouped[0] + gv.total_low[0] + gv.total_high[0] - x);
        }
    });
    return out;
}

inline std::int64_t default_ell(std::int64_t L)
{
    return std::int64_t{1} << static_cast<int>(std::lround(std::log2(std::sqrt(static_cast<double>(L)))));
}

inline ExperimentResult run_moderate(const ExperimentConfig& c, CsvSink& sink)
{
    ExperimentResult res;
    auto& t = res.table;
    t.header = {"experiment", "preset", "L",        "ell",   "m0",    "degenerate", "kind",
                "label",      "x",      "measured", "bound", "ratio", "valid_flag", "slack"};
    sink.begin(t);
    SyntheticSpec spec = configured_preset(c, c.preset);
    spec.N = 1;
    const double beta = 0.125;
    double worst_reassembly = 0.0;
    for (std::int64_t L : c.levels()) {
        std::vector<std::vector<std::string>> rows;
        double secs = detail::timed([&] {
            DependenceStructure s = configured_structure(c, spec, L);
            SyntheticGenerator gen(spec, s);
            const std::int64_t ell = c.ell > 0 ? std::min(c.ell, L) : default_ell(L);
            Grouping g = moderate_grouping(s, ell);
            if (g.degenerate) res.warnings.push_back("L=" + std::to_string(L) + ": " + g.warning);
            ModerateSamples ms = moderate_samples(gen, g, c.n_samples,
                                                  stream_seed(c.master_seed, static_cast<std::uint64_t>(L)), c.threads);
            for (double e : ms.reassembly_error) worst_reassembly = std::max(worst_reassembly, e);
            const double gt = s.gamma() / (s.gamma() + 1.0);
            const double mean = pairwise_sum(ms.total) / static_cast<double>(c.n_samples);
            std::vector<double> centered(ms.total);
            for (double& v : centered) v -= mean;
            std::vector<std::string> head{c.experiment, spec.name, fmt(L), fmt(ell), fmt(g.m0), fmt(g.degenerate)};
            auto emit = [&](const std::string& kind, const std::string& label, double x, double m, double b,
                            bool valid, double slack) {
                std::vector<std::string> row = head;
                row.insert(row.end(), {kind, label, fmt(x), fmt(m), fmt(b), fmt(b > 0 ? m / b : 0.0), fmt(valid),
                                       fmt(slack)});
                rows.push_back(row);
            };
            emit("norm", "remainder_high", gt, stretched_norm(ms.high, gt).value, remainder_high_budget(s, ell), true, 0.0);
            if (g.m0 >= 0)
                emit("norm", "remainder_low", gt, stretched_norm(ms.low, gt).value, remainder_low_budget(s, ell), true,
                     0.0);
            emit("norm", "total", gt, stretched_norm(centered, gt).value, variance_norm_bound(s, c.policy), true, 0.0);
            // Moderate-deviation shape with β = 1/8 and unit constants:
            // P[|X − EX| ≥ r] ≤ P[|Y| ≥ r − L^{-β}L^{-d/2}] + exp(−L^{2β}/B^8), Y ~ N(0, Var X).
            double var = 0.0;
            for (double v : centered) var += v * v;
            const double sd = std::sqrt(var / static_cast<double>(c.n_samples - 1));
            const double shift = std::pow(static_cast<double>(L), -beta - c.d / 2.0);
            const double additive = std::exp(-std::pow(static_cast<double>(L), 2.0 * beta) / std::pow(s.B(), 8.0));
            for (int k = 1; k <= 10; ++k) {
                const double r = 0.5 * k * sd;
                const double p = empirical_tail(centered, r);
                const double gauss = r > shift ? 2.0 * (1.0 - normal_cdf((r - shift) / sd)) : 1.0;
                emit("tail", "moderate_deviation", r, p, std::min(1.0, gauss + additive), true,
                     mc_slack(p, c.n_samples));
            }
        });
        for (auto& row : rows) {
            t.rows.push_back(row);
            t.row_seconds.push_back(secs / rows.size());
            sink.row(t, row);
        }
    }
    res.details["max_reassembly_error"] = worst_reassembly;
    res.details["beta"] = beta;
    return res;
}

// ----------------------------------------------------------------- oracle

inline ExperimentResult run_oracle(const ExperimentConfig& c, CsvSink& sink)
{
    ExperimentResult res;
    auto& t = res.table;
    t.header = {"experiment", "preset", "d", "L", "n", "atoms", "w1_empirical_vs_exact", "tv_empirical_vs_exact",
                "w1_gauss_empirical", "w1_gauss_discrete", "w1_gauss_diff"};
    sink.begin(t);
    SyntheticSpec spec = configured_preset(c, c.preset);
    spec.N = 1;
    for (std::int64_t L : c.levels()) {
        std::vector<std::string> row;
        double secs = detail::timed([&] {
            DependenceStructure s = configured_structure(c, spec, L);
            SyntheticGenerator gen(spec, s);
            DiscreteLaw exact = brute_force_law(gen);
            SampleSet x = monte_carlo(gen, c.n_samples, stream_seed(c.master_seed, static_cast<std::uint64_t>(L)),
                                      c.threads);
            auto col = x.column(0);
            DiscreteLaw emp = DiscreteLaw::scalar(col, std::vector<double>(col.size(), 1.0 / col.size()));
            double var = 0.0;
            for (const auto& a : exact.atoms()) var += a.prob * a.value[0] * a.value[0];
            if (!(var > 0.0)) var = 1.0;
            const double ge = w1_empirical_gaussian(std::span<const double>(col), var);
            const double gd = w1_discrete_vs_gaussian(emp, var);
            row = {c.experiment, spec.name, fmt(c.d), fmt(L), fmt(c.n_samples), fmt(exact.atoms().size()),
                   fmt(w1_discrete(emp, exact)), fmt(tv_discrete(emp, exact)), fmt(ge), fmt(gd), fmt(std::abs(ge - gd))};
        });
        t.rows.push_back(row);
        t.row_seconds.push_back(secs);
        sink.row(t, row);
    }
    return res;
}

// ---------------------------------------------------------- stein-certify

inline std::vector<Vector> residual_grid(int n)
{
    std::vector<Vector> pts;
    if (n == 1) {
        for (int k = 0; k < 9; ++k) pts.push_back(Vector::Constant(1, -2.0 + 0.5 * k));
        return pts;
    }
    const double v[3] = {-1.5, 0.0, 1.5};
    for (double a : v)
        for (double b : v) {
            Vector x = Vector::Zero(n);
            x[0] = a;
            x[1] = b;
            pts.push_back(x);
        }
    return pts;
}

inline std::vector<Vector> uniform_points(int n, std::size_t count, double half, std::uint64_t seed)
{
    std::vector<Vector> pts;
    Rng rng(seed);
    for (std::size_t k = 0; k < count; ++k) {
        Vector x(n);
        for (int c = 0; c < n; ++c) x[c] = half * (2.0 * rng.uniform() - 1.0);
        pts.push_back(x);
    }
    return pts;
}

inline ExperimentResult run_stein_certify(const ExperimentConfig& c, CsvSink& sink)
{
    ExperimentResult res;
    auto& t = res.table;
    t.header = {"experiment", "N", "eps", "label", "kind", "value", "bound", "ratio", "pass"};
    sink.begin(t);
    const GaussianLaw law = GaussianLaw::standard(c.N);
    const auto family = canonical_family(c.N);
    for (double eps : c.eps_list) {
        for (std::size_t f = 0; f < family.size(); ++f) {
            std::vector<std::vector<std::string>> rows;
            double secs = detail::timed([&] {
                SteinSolution sol(family[f], law, eps);
                auto emit = [&](const std::string& kind, double v, double b) {
                    rows.push_back({c.experiment, fmt(c.N), fmt(eps), family[f].label, kind, fmt(v), fmt(b),
                                    fmt(v / b), fmt(v <= b)});
                };
                auto grid = residual_grid(c.N);
                std::vector<double> r(grid.size());
                parallel_for(grid.size(), c.threads, [&](std::size_t b, std::size_t e) {
                    for (std::size_t k = b; k < e; ++k) r[k] = stein_residual(sol, grid[k]);
                });
                emit("residual", *std::max_element(r.begin(), r.end()), 1e-3);
                auto pts = uniform_points(c.N, c.third_points, 4.0, stream_seed(c.master_seed, f));
                auto td = third_derivative_certificate(sol, pts, c.threads);
                emit("third_derivative", td.max_norm, td.bound);
                if (f == 0 || c.majorant_all) {
                    auto h = majorant_gaussian_average(sol, c.delta, MajorantKind::H, {}, c.threads);
                    emit("majorant_H", h.average, h.bound);
                    auto hp = majorant_gaussian_average(sol, c.delta, MajorantKind::Hprime, {}, c.threads);
                    emit("majorant_Hprime", hp.average, hp.bound);
                }
            });
            for (auto& row : rows) {
                t.rows.push_back(row);
                t.row_seconds.push_back(secs / rows.size());
                sink.row(t, row);
            }
        }
    }
    return res;
}

// --------------------------------------------------------------- dispatch

inline ExperimentResult run_experiment(const ExperimentConfig& c, std::ostream* csv = nullptr)
{
    validate(c);
    CsvSink sink(csv);
    ExperimentResult r;
    double secs = detail::timed([&] {
        if (c.experiment == "clt-rate")
            r = run_clt_rate(c, sink);
        else if (c.experiment == "bound-calc")
            r = run_bound_calc(c, sink);
        else if (c.experiment == "tails")
            r = run_tails(c, sink);
        else if (c.experiment == "moderate")
            r = run_moderate(c, sink);
        else if (c.experiment == "oracle")
            r = run_oracle(c, sink);
        else
            r = run_stein_certify(c, sink);
    });
    r.wallclock = secs;
    return r;
}

inline nlohmann::json manifest(const ExperimentConfig& c, const ExperimentResult& r)
{
    nlohmann::json j;
    j["config"] = to_json(c);
    j["version"] = kVersion;
    j["schema_version"] = kSchemaVersion;
    j["schema_hash"] = r.table.schema_hash();
    j["columns"] = r.table.header;
    j["rows"] = r.table.rows.size();
    j["compiler"] = __VERSION__;
    j["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "."
                 + std::to_string(EIGEN_MINOR_VERSION);
    j["log_base"] = 2;
    j["wallclock_seconds"] = r.wallclock;
    j["row_wallclock_seconds"] = r.table.row_seconds;
    j["warnings"] = r.warnings;
    j["details"] = r.details;
    return j;
}

} // namespace mlclt
