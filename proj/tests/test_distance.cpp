#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mlclt/distance.hpp"

using namespace mlclt;

namespace {

const double kMeanAbs = std::sqrt(2.0 / std::numbers::pi);

Vector x1(double v) { return Vector::Constant(1, v); }

std::vector<double> normal_samples(std::size_t n, std::uint64_t seed, double mu = 0.0)
{
    Rng rng(seed);
    std::vector<double> v(n);
    for (auto& x : v) x = mu + rng.normal();
    return v;
}

std::vector<double> coin_samples(std::size_t n, std::uint64_t seed)
{
    Rng rng(seed);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.rademacher();
    return v;
}

// ∫|F(x) − Φ(x/σ)| dx by adaptive quadrature, F a step function.
double w1_by_cdf_quadrature(const std::vector<std::pair<double, double>>& atoms, double sigma)
{
    auto F = [&](double x) {
        double s = 0;
        for (auto [v, p] : atoms)
            if (v <= x) s += p;
        return s;
    };
    std::vector<double> cuts{-14.0 * sigma};
    for (auto [v, p] : atoms) cuts.push_back(v);
    cuts.push_back(14.0 * sigma);
    std::sort(cuts.begin(), cuts.end());
    double total = 0;
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
        if (cuts[k + 1] <= cuts[k]) continue;
        double mid = 0.5 * (cuts[k] + cuts[k + 1]);
        double f = F(mid);
        total += integrate_adaptive([&](double x) { return std::abs(f - normal_cdf(x / sigma)); }, cuts[k], cuts[k + 1]);
    }
    return total;
}

} // namespace

TEST(Mollify, LinearFunction)
{
    GaussianLaw g = GaussianLaw::standard(1);
    for (double eps : {0.1, 0.25, 0.5}) {
        auto f = mollify(linear_function(x1(1.0)), eps, g);
        for (double x : {-2.0, 0.3, 1.7}) EXPECT_NEAR(f(x1(x)), std::sqrt(1 - eps * eps) * x, 1e-12);
    }
}

TEST(Mollify, Quadratic)
{
    GaussianLaw g = GaussianLaw::standard(1);
    TestFunction sq{[](const Vector& x) { return x[0] * x[0]; }, kUnbounded, "square"};
    auto f = mollify(sq, 0.5, g);
    for (double x : {-1.0, 0.0, 2.0}) EXPECT_NEAR(f(x1(x)), 0.75 * x * x + 0.25, 1e-10);
}

TEST(Mollify, AbsoluteValueAtZero)
{
    GaussianLaw g = GaussianLaw::standard(1);
    TestFunction ab{[](const Vector& x) { return std::abs(x[0]); }, 1.0, "abs"};
    const double eps = 0.3;
    double ref = integrate_adaptive([&](double z) { return std::abs(eps * z) * normal_pdf(z); }, -12.0, 12.0);
    EXPECT_NEAR(mollify(ab, eps, g)(x1(0.0)), ref, 1e-8);
    EXPECT_NEAR(ref, eps * kMeanAbs, 1e-12);
}

TEST(Mollify, TwoDimLinear)
{
    GaussianLaw g = GaussianLaw::standard(2);
    Vector a(2);
    a << 1.0, -2.0;
    auto f = mollify(linear_function(a), 0.25, g);
    Vector x(2);
    x << 0.4, 1.1;
    EXPECT_NEAR(f(x), std::sqrt(1 - 0.0625) * a.dot(x), 1e-10);
}

TEST(Mollify, RejectsEps)
{
    GaussianLaw g = GaussianLaw::standard(1);
    EXPECT_THROW(mollify(constant_function(1.0), 0.0, g), UsageError);
    EXPECT_THROW(mollify(constant_function(1.0), 1.0, g), UsageError);
}

TEST(Membership, LinearCases)
{
    GaussianLaw g = GaussianLaw::standard(1);
    std::vector<double> rs{0.1, 0.5, 1.0};
    std::vector<Vector> x0s{x1(0.0), x1(1.0)};

    auto full = class_membership_check(linear_function(x1(1.0)), g, 1.0, rs, x0s);
    EXPECT_FALSE(full.pass);
    EXPECT_NEAR(full.worst_ratio, 2.0, 1e-9);

    auto half = class_membership_check(linear_function(x1(0.5)), g, 1.0, rs, x0s);
    EXPECT_TRUE(half.pass);
    EXPECT_NEAR(half.worst_ratio, 1.0, 1e-9);

    auto c = class_membership_check(constant_function(3.0), g, 1.0, rs, x0s);
    EXPECT_TRUE(c.pass);
    EXPECT_EQ(c.worst_ratio, 0.0);
}

TEST(Membership, CanonicalFamilyPasses)
{
    for (int n : {1, 2}) {
        GaussianLaw g = GaussianLaw::standard(n);
        std::vector<Vector> x0s{Vector::Zero(n), Vector::Constant(n, 0.8)};
        for (const auto& phi : canonical_family(n)) {
            auto rep = class_membership_check(phi, g, 1.0, {0.2, 1.0}, x0s);
            EXPECT_TRUE(rep.pass) << phi.label << " ratio " << rep.worst_ratio;
        }
    }
}

TEST(W1, PointMass)
{
    auto law = DiscreteLaw::scalar({0.0}, {1.0});
    EXPECT_NEAR(w1_discrete_vs_gaussian(law, 1.0), kMeanAbs, 1e-14);
    std::vector<double> zeros(1000, 0.0);
    EXPECT_NEAR(w1_empirical_gaussian(std::span<const double>(zeros), 1.0), kMeanAbs, 1e-14);
}

TEST(W1, CoinAgainstCdfQuadrature)
{
    auto coin = DiscreteLaw::scalar({-1.0, 1.0}, {0.5, 0.5});
    double ref = w1_by_cdf_quadrature({{-1.0, 0.5}, {1.0, 0.5}}, 1.0);
    EXPECT_NEAR(w1_discrete_vs_gaussian(coin, 1.0), ref, 1e-9);

    auto skew = DiscreteLaw::scalar({-0.5, 0.2, 2.0}, {0.3, 0.6, 0.1});
    auto mirror = DiscreteLaw::scalar({0.5, -0.2, -2.0}, {0.3, 0.6, 0.1});
    double ref2 = w1_by_cdf_quadrature({{-0.5, 0.3}, {0.2, 0.6}, {2.0, 0.1}}, 1.5);
    EXPECT_NEAR(w1_discrete_vs_gaussian(skew, 2.25), ref2, 1e-9);
    EXPECT_NEAR(w1_discrete_vs_gaussian(mirror, 2.25), w1_discrete_vs_gaussian(skew, 2.25), 1e-14);
}

TEST(W1, GaussianSamplesAreClose)
{
    auto v = normal_samples(1000000, 42);
    EXPECT_LE(w1_empirical_gaussian(std::span<const double>(v), 1.0), 0.005);
}

TEST(W1, EmpiricalMatchesDiscreteOnAtoms)
{
    auto v = coin_samples(1000000, 7);
    auto emp = DiscreteLaw::scalar(v, std::vector<double>(v.size(), 1.0 / v.size()));
    EXPECT_NEAR(w1_empirical_gaussian(std::span<const double>(v), 1.0), w1_discrete_vs_gaussian(emp, 1.0), 1e-9);
}

TEST(W1, PermutationInvarianceAndHomogeneity)
{
    auto v = normal_samples(5000, 3, 0.2);
    double w = w1_empirical_gaussian(std::span<const double>(v), 1.3);
    std::reverse(v.begin(), v.end());
    EXPECT_EQ(w1_empirical_gaussian(std::span<const double>(v), 1.3), w);
    for (auto& x : v) x *= 3.0;
    EXPECT_NEAR(w1_empirical_gaussian(std::span<const double>(v), 9.0 * 1.3), 3.0 * w, 1e-12);
}

TEST(W1, DiscreteLawBasics)
{
    auto a = DiscreteLaw::scalar({0.0, 1.0}, {0.5, 0.5});
    auto b = DiscreteLaw::scalar({0.0, 2.0}, {0.5, 0.5});
    EXPECT_NEAR(w1_discrete(a, b), 0.5, 1e-15);
    EXPECT_NEAR(tv_discrete(a, b), 0.5, 1e-15);
    EXPECT_EQ(w1_discrete(a, a), 0.0);
    EXPECT_EQ(tv_discrete(a, a), 0.0);
    EXPECT_THROW(DiscreteLaw::scalar({0.0}, {0.5}), UsageError);
    EXPECT_THROW(w1_empirical_gaussian(std::span<const double>(), 1.0), UsageError);
}

TEST(SlicedW1, OneDimEqualsW1)
{
    auto v = normal_samples(2000, 9, 0.1);
    auto s = SampleSet::scalar(v);
    EXPECT_NEAR(sliced_w1(s, GaussianLaw::standard(1), 8, 1), w1_empirical_gaussian(s, 1.0), 1e-15);
}

TEST(SlicedW1, TwoDimSelfDistance)
{
    const std::size_t n = 100000;
    Matrix m(n, 2);
    Rng rng(21);
    for (std::size_t k = 0; k < n; ++k) m(k, 0) = rng.normal(), m(k, 1) = rng.normal();
    SampleSet s(m, 21);
    EXPECT_LE(sliced_w1(s, GaussianLaw::standard(2), 32, 5), 0.01);
}

TEST(SlicedW1, RotationEquivariance)
{
    const std::size_t n = 3000;
    Matrix m(n, 2);
    Rng rng(4);
    for (std::size_t k = 0; k < n; ++k) m(k, 0) = rng.normal() + 0.3, m(k, 1) = rng.laplace();
    Matrix cov(2, 2);
    cov << 1.5, 0.3, 0.3, 0.8;
    const double t = 0.7;
    Matrix rot(2, 2);
    rot << std::cos(t), -std::sin(t), std::sin(t), std::cos(t);
    auto dirs = random_directions(2, 16, 8);
    std::vector<Vector> rdirs;
    for (const auto& d : dirs) rdirs.push_back(rot * d);
    Matrix rc = rot * cov * rot.transpose();
    rc = 0.5 * (rc + rc.transpose()).eval();
    double a = sliced_w1(SampleSet(m, 0), GaussianLaw(SpdMatrix(cov)), dirs);
    double b = sliced_w1(SampleSet(m * rot.transpose(), 0), GaussianLaw(SpdMatrix(rc)), rdirs);
    EXPECT_NEAR(a, b, 1e-10);
}

TEST(RestrictedDistance, ConstantFamilyIsZero)
{
    auto s = SampleSet::scalar(normal_samples(1000, 1, 3.0));
    EXPECT_NEAR(restricted_distance(s, GaussianLaw::standard(1), {constant_function(2.0)}), 0.0, 1e-12);
}

TEST(RestrictedDistance, GaussianSamplesWithinSlack)
{
    const std::size_t n = 20000;
    auto s = SampleSet::scalar(normal_samples(n, 17));
    // each member is 1/2-Lipschitz, so its sample mean has sd ≤ 1/2 / √n
    double d = restricted_distance(s, GaussianLaw::standard(1), canonical_family(1));
    EXPECT_LE(std::abs(d), 4.0 * 0.5 / std::sqrt(static_cast<double>(n)));
    double de = restricted_distance(s, GaussianLaw::standard(1), canonical_family(1), 0.25);
    EXPECT_LE(std::abs(de), 4.0 * 0.5 / std::sqrt(static_cast<double>(n)));
}

TEST(RestrictedDistance, ShiftedMean)
{
    auto s = SampleSet::scalar(normal_samples(100000, 23, 0.5));
    std::vector<TestFunction> fam{linear_function(x1(0.5)), linear_function(x1(-0.5))};
    EXPECT_NEAR(restricted_distance(s, GaussianLaw::standard(1), fam), 0.25, 0.01);
}

TEST(SampleMean, IndependentOfThreadCount)
{
    auto s = SampleSet::scalar(normal_samples(50000, 2));
    auto f = [](const Vector& x) { return std::sin(x[0]); };
    EXPECT_EQ(sample_mean(s, f, 1), sample_mean(s, f, 4));
}
