// Normalized W1 of the cube preset against N(0,1) for a few lattice sizes,
// with the Gaussian-sample floor alongside.
#include <cstdio>

#include "mlclt/mlclt.hpp"

int main()
{
    using namespace mlclt;
    const std::size_t n = 20000;
    std::vector<RatePoint> pts;
    std::printf("%6s %12s %12s %12s\n", "L", "var", "w1", "floor");
    for (std::int64_t L : {16, 32, 64, 128}) {
        SyntheticSpec spec = preset("cube-rademacher");
        DependenceStructure s(1, L, 2.0, spec.gamma, spec.B);
        SyntheticGenerator gen(spec, s);
        SampleSet x = monte_carlo(gen, n, stream_seed(7, L));
        SampleStats st = sample_stats(x);
        double w = normalized_distance(normalize_samples(x, st), 0);
        double fl = gaussian_floor(n, 1, stream_seed(8, L));
        pts.push_back({double(L), w, fl});
        std::printf("%6lld %12.5g %12.5g %12.5g\n", static_cast<long long>(L), st.cov(0, 0), w, fl);
    }
    RateFit f = fit_rate(pts);
    std::printf("slope %.3f  r2 %.3f  (%zu rows)\n", f.slope, f.r2, f.used);
}
