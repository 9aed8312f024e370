// Stein solution for one soft clip: values, derivatives and the residual of
// the mollified equation along a line.
#include <cstdio>

#include "mlclt/mlclt.hpp"

int main()
{
    using namespace mlclt;
    const GaussianLaw law = GaussianLaw::standard(1);
    TestFunction phi = soft_clip_function(Vector::Ones(1), 0.5, 1.5, 0.0);
    SteinSolution sol(phi, law, 0.25);
    std::printf("%6s %12s %12s %12s %12s %10s\n", "x", "f", "f'", "f''", "f'''", "residual");
    for (double x = -3.0; x <= 3.0; x += 0.75) {
        Vector p = Vector::Constant(1, x);
        SteinJet j = sol.jet(p, 3);
        std::printf("%6.2f %12.6f %12.6f %12.6f %12.6f %10.2e\n", x, j.value, j.grad[0], j.hess(0, 0),
                    j.third(0, 0, 0), stein_residual(sol, p));
    }
}
