#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace flowalign {

using Vec = std::vector<double>;

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

inline double sum_sq(std::span<const double> a) {
    double s = 0.0;
    for (double v : a) {
        s += v * v;
    }
    return s;
}

inline double nrm2(std::span<const double> a) { return std::sqrt(sum_sq(a)); }

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

inline bool all_finite(std::span<const double> a) {
    for (double v : a) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

// y += a * x
inline void axpy(double a, std::span<const double> x, std::span<double> y) {
    for (size_t i = 0; i < x.size(); ++i) {
        y[i] += a * x[i];
    }
}

inline void scale(std::span<double> x, double a) {
    for (double& v : x) {
        v *= a;
    }
}

inline double stable_sigmoid(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// log(1 + e^z) without overflow
inline double softplus(double z) {
    if (z > 0.0) {
        return z + std::log1p(std::exp(-z));
    }
    return std::log1p(std::exp(z));
}

inline double mean_of(std::span<const double> a) {
    if (a.empty()) {
        return 0.0;
    }
    double s = 0.0;
    for (double v : a) {
        s += v;
    }
    return s / static_cast<double>(a.size());
}

// population standard deviation (divide by N)
inline double pop_std(std::span<const double> a) {
    const double m = mean_of(a);
    double s = 0.0;
    for (double v : a) {
        s += (v - m) * (v - m);
    }
    return std::sqrt(s / static_cast<double>(a.size()));
}

}  // namespace flowalign
