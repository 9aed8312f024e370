#include <gtest/gtest.h>

#include <cmath>

#include "mlclt/stein.hpp"

using namespace mlclt;

namespace {

Vector x1(double v) { return Vector::Constant(1, v); }

TestFunction half_linear() { return linear_function(x1(0.5)); }

TestFunction clip(double c = 1.5, double b = 0.0) { return soft_clip_function(x1(1.0), 0.5, c, b); }

} // namespace

TEST(SteinSolution, ConstantIsZero)
{
    SteinSolution sol(constant_function(2.0), GaussianLaw::standard(1), 0.25);
    for (double x : {-1.0, 0.0, 2.5}) {
        EXPECT_NEAR(stein_eval(sol, x1(x)), 0.0, 1e-14);
        EXPECT_NEAR(stein_residual(sol, x1(x)), 0.0, 1e-12);
    }
}

TEST(SteinSolution, HalfLinearClosedForm)
{
    for (double eps : {0.25, 0.5}) {
        SteinSolution sol(half_linear(), GaussianLaw::standard(1), eps);
        for (double x : {-2.0, 0.4, 1.0, 3.0}) {
            EXPECT_NEAR(stein_eval(sol, x1(x)), 0.5 * x * std::sqrt(1 - eps * eps), 1e-8);
            EXPECT_NEAR(std::get<Matrix>(stein_derivative(sol, x1(x), 2))(0, 0), 0.0, 1e-8);
            EXPECT_LE(stein_residual(sol, x1(x)), 1e-6);
        }
    }
}

TEST(SteinSolution, HalfLinearResidualPieces)
{
    // −f'' + x f' = φ_ε(x) − E φ_ε with φ_ε(x) = √(1−ε²) x / 2
    const double eps = 0.25, x = 1.0;
    SteinSolution sol(half_linear(), GaussianLaw::standard(1), eps);
    SteinJet j = sol.jet(x1(x), 2);
    EXPECT_NEAR(-j.hess(0, 0) + x * j.grad[0], std::sqrt(1 - eps * eps) * x / 2, 1e-6);
    EXPECT_NEAR(sol.mollified_phi(x1(x)), std::sqrt(1 - eps * eps) * x / 2, 1e-12);
}

TEST(SteinSolution, EvenFunctionThirdDerivativeVanishesAtZero)
{
    TestFunction lc{[](const Vector& x) { return log_cosh(x[0]); }, 1.0, "logcosh"};
    SteinSolution sol(lc, GaussianLaw::standard(1), 0.5);
    EXPECT_NEAR(std::get<Tensor3>(stein_derivative(sol, x1(0.0), 3))(0, 0, 0), 0.0, 1e-12);
}

TEST(SteinSolution, DerivativesMatchFiniteDifferences)
{
    SteinSolution sol(clip(), GaussianLaw::standard(1), 0.25);
    const double h = 1e-3, x = 0.7;
    double fd2 = (stein_eval(sol, x1(x + h)) - 2 * stein_eval(sol, x1(x)) + stein_eval(sol, x1(x - h))) / (h * h);
    EXPECT_NEAR(std::get<Matrix>(stein_derivative(sol, x1(x), 2))(0, 0), fd2, 1e-4);

    double fd1 = (stein_eval(sol, x1(x + h)) - stein_eval(sol, x1(x - h))) / (2 * h);
    EXPECT_NEAR(stein_gradient(sol, x1(x))[0], fd1, 1e-6);

    auto hess = [&](double y) { return sol.jet(x1(y), 2).hess(0, 0); };
    double fd3 = (hess(x + h) - hess(x - h)) / (2 * h);
    EXPECT_NEAR(std::get<Tensor3>(stein_derivative(sol, x1(x), 3))(0, 0, 0), fd3, 1e-3);
}

TEST(SteinSolution, TwoDimDerivativesMatchFiniteDifferences)
{
    Vector dir(2);
    dir << 1.0, 1.0;
    SteinSolution sol(soft_clip_function(dir, 0.5, 0.5, 0.5), GaussianLaw::standard(2), 0.5);
    Vector x(2);
    x << 0.3, -0.6;
    const double h = 1e-3;
    SteinJet j = sol.jet(x, 3);
    for (int k = 0; k < 2; ++k) {
        Vector e = Vector::Unit(2, k) * h;
        Vector dg = (sol.jet(Vector(x + e), 1).grad - sol.jet(Vector(x - e), 1).grad) / (2 * h);
        Matrix dh = (sol.jet(Vector(x + e), 2).hess - sol.jet(Vector(x - e), 2).hess) / (2 * h);
        for (int i = 0; i < 2; ++i) {
            EXPECT_NEAR(j.hess(i, k), dg[i], 1e-4);
            for (int l = 0; l < 2; ++l) EXPECT_NEAR(j.third(i, l, k), dh(i, l), 1e-3);
        }
    }
}

TEST(SteinSolution, SoftClipResidual)
{
    SteinSolution sol(clip(), GaussianLaw::standard(1), 0.25);
    for (double x : {-2.0, 0.0, 2.0}) EXPECT_LE(stein_residual(sol, x1(x)), 1e-3);
}

TEST(SteinSolution, NodeDoublingIsStable)
{
    SteinSolution sol(clip(0.5, 0.5), GaussianLaw::standard(1), 0.25);
    EXPECT_NO_THROW(stein_jet_checked(sol, x1(0.9)));
    EXPECT_NEAR(stein_eval_checked(sol, x1(0.9)), stein_eval(sol, x1(0.9)), 1e-6);
}

TEST(SteinSolution, Linearity)
{
    GaussianLaw g = GaussianLaw::standard(1);
    TestFunction a = clip(1.5, 0.0), b = clip(0.5, 0.5);
    TestFunction comb{[a, b](const Vector& x) { return 2.0 * a(x) - 0.5 * b(x); }, 1.25, "comb"};
    SteinSolution sa(a, g, 0.25), sb(b, g, 0.25), sc(comb, g, 0.25);
    for (double x : {-1.3, 0.2, 2.2})
        EXPECT_NEAR(stein_eval(sc, x1(x)), 2.0 * stein_eval(sa, x1(x)) - 0.5 * stein_eval(sb, x1(x)), 1e-10);
}

TEST(SteinSolution, RejectsBadParameters)
{
    GaussianLaw g = GaussianLaw::standard(1);
    EXPECT_THROW(SteinSolution(clip(), g, 0.0), UsageError);
    EXPECT_THROW(SteinSolution(clip(), g, 0.25, QuadratureSpec{8, 32, 2}), UsageError);
    SteinSolution sol(clip(), g, 0.25);
    EXPECT_THROW(stein_derivative(sol, x1(0.0), 1), UsageError);
}

TEST(ThirdDerivativeCertificate, Constant)
{
    SteinSolution sol(constant_function(1.0), GaussianLaw::standard(1), 0.5);
    auto rep = third_derivative_certificate(sol, {x1(0.0), x1(1.0)});
    EXPECT_NEAR(rep.max_ratio, 0.0, 1e-15);
}

TEST(ThirdDerivativeCertificate, SoftClip)
{
    std::vector<Vector> pts;
    for (int k = 0; k < 100; ++k) pts.push_back(x1(-4.0 + 8.0 * k / 99));
    SteinSolution sol(clip(), GaussianLaw::standard(1), 0.5);
    auto rep = third_derivative_certificate(sol, pts);
    EXPECT_DOUBLE_EQ(rep.bound, 30.0);
    EXPECT_LE(rep.max_ratio, 1.0);
    EXPECT_GT(rep.max_norm, 0.0);

    SteinSolution wide(clip(), GaussianLaw(SpdMatrix::scalar(4.0)), 0.5);
    auto rw = third_derivative_certificate(wide, pts);
    EXPECT_DOUBLE_EQ(rw.bound, 7.5);
    EXPECT_LE(rw.max_ratio, 1.0);
}

TEST(Majorant, ConstantIsZero)
{
    SteinSolution sol(constant_function(1.0), GaussianLaw::standard(1), 0.5);
    MajorantSpec spec{6, 16};
    EXPECT_NEAR(oscillation_majorant(sol, 0.1, MajorantKind::H, x1(0.3), spec), 0.0, 1e-12);
    EXPECT_NEAR(oscillation_majorant(sol, 0.1, MajorantKind::Hprime, x1(0.3), spec), 0.0, 1e-12);
}

TEST(Majorant, DominatesSampledOscillation)
{
    SteinSolution sol(clip(), GaussianLaw::standard(1), 0.25);
    Rng rng(19);
    MajorantSpec spec{8, 24};
    const BallSampler fine(1, 64);
    for (int k = 0; k < 50; ++k) {
        Vector x = x1(4.0 * rng.uniform() - 2.0);
        double delta = 0.02 + 0.2 * rng.uniform();
        double osc = detail::sampled_derivative_oscillation(sol, MajorantKind::H, x, delta, fine);
        EXPECT_LE(osc, oscillation_majorant(sol, delta, MajorantKind::H, x, spec)) << "x=" << x[0] << " delta=" << delta;
    }
}

TEST(Majorant, GaussianAverageBound)
{
    SteinSolution sol(clip(), GaussianLaw::standard(1), 0.25);
    auto h = majorant_gaussian_average(sol, 0.1, MajorantKind::H);
    EXPECT_GT(h.average, 0.0);
    EXPECT_NEAR(h.bound, 100.0 * std::abs(std::log(0.25)) * 0.1, 1e-12);
    EXPECT_LE(h.ratio, 1.0);
    auto hp = majorant_gaussian_average(sol, 0.1, MajorantKind::Hprime);
    EXPECT_LE(hp.ratio, 1.0);
}

TEST(CanonicalFamily, SizesAndLipschitz)
{
    EXPECT_EQ(canonical_family(1).size(), 4u);
    EXPECT_EQ(canonical_family(2).size(), 8u);
    for (const auto& f : canonical_family(2)) EXPECT_LE(f.lipschitz, 0.5);
    EXPECT_NEAR(soft_clip(0.0, 1.0), 0.0, 1e-15);
    EXPECT_NEAR(soft_clip(50.0, 1.0), 1.0, 1e-12);
}
