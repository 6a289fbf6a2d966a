#ifndef CHARDIFF_TESTS_FD_HPP
#define CHARDIFF_TESTS_FD_HPP

// Central finite-difference oracle for gradient checks. Test-only; must
// stay independent of the tape's backward pass.

#include <cmath>
#include <functional>

#include "chardiff/tensor.hpp"

namespace chardiff::testing {

using ScalarFn = std::function<double(const Tensor&)>;

inline Tensor fd_grad(Tensor x, const ScalarFn& f, double h = 1e-5) {
    Tensor g(x.shape);
    for (size_t i = 0; i < x.v.size(); ++i) {
        double orig = x.v[i];
        double step = h * std::max(1.0, std::fabs(orig));
        x.v[i] = orig + step;
        double fp = f(x);
        x.v[i] = orig - step;
        double fm = f(x);
        x.v[i] = orig;
        g.v[i] = (fp - fm) / (2.0 * step);
    }
    return g;
}

// max mixed absolute/relative error between analytic and fd gradients
inline double grad_err(const Tensor& analytic, const Tensor& fd) {
    double worst = 0.0;
    for (size_t i = 0; i < analytic.v.size(); ++i) {
        double a = analytic.v[i], b = fd.v[i];
        double denom = std::max({1.0, std::fabs(a), std::fabs(b)});
        worst = std::max(worst, std::fabs(a - b) / denom);
    }
    return worst;
}

}  // namespace chardiff::testing

#endif
