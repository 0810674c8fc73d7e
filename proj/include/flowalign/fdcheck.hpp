#pragma once

#include <cmath>
#include <functional>
#include <span>

#include "flowalign/vecmath.hpp"

namespace flowalign {

// Central finite differences of a scalar function of a flat parameter vector.
// Evaluates only f, never any analytic gradient path, so it serves as an
// independent check on reverse-mode results.
inline Vec finite_difference_grad(const std::function<double(const Vec&)>& f, Vec theta,
                                  double h = 1e-5) {
    Vec grad(theta.size(), 0.0);
    for (size_t i = 0; i < theta.size(); ++i) {
        const double saved = theta[i];
        theta[i] = saved + h;
        const double fp = f(theta);
        theta[i] = saved - h;
        const double fm = f(theta);
        theta[i] = saved;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

// max_i |a_i - b_i| / max(1, |a_i|, |b_i|)
inline double max_relative_error(std::span<const double> a, std::span<const double> b) {
    double worst = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double denom = std::max({1.0, std::abs(a[i]), std::abs(b[i])});
        worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
    }
    return worst;
}

}  // namespace flowalign
