#include "flowalign/mixture.hpp"

#include <cmath>
#include <numbers>

#include "flowalign/errors.hpp"

namespace flowalign {

std::vector<double> cholesky(std::span<const double> cov, int dim) {
    if (static_cast<int>(cov.size()) != dim * dim) {
        throw ContractError("cholesky: covariance size mismatch");
    }
    std::vector<double> L(static_cast<size_t>(dim) * dim, 0.0);
    for (int i = 0; i < dim; ++i) {
        for (int j = 0; j <= i; ++j) {
            double s = cov[static_cast<size_t>(i) * dim + j];
            for (int k = 0; k < j; ++k) {
                s -= L[static_cast<size_t>(i) * dim + k] * L[static_cast<size_t>(j) * dim + k];
            }
            if (i == j) {
                if (s <= 0.0) {
                    throw ConfigError("covariance is not positive definite");
                }
                L[static_cast<size_t>(i) * dim + i] = std::sqrt(s);
            } else {
                L[static_cast<size_t>(i) * dim + j] = s / L[static_cast<size_t>(j) * dim + j];
            }
        }
    }
    return L;
}

void validate(const GaussianMixture& mix) {
    if (mix.components.empty()) {
        throw ConfigError("mixture: no components");
    }
    if (mix.weights.size() != mix.components.size()) {
        throw ConfigError("mixture: weight count mismatch");
    }
    double total = 0.0;
    for (double w : mix.weights) {
        if (w < 0.0) {
            throw ConfigError("mixture: negative weight");
        }
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-9) {
        throw ConfigError("mixture: weights must sum to 1");
    }
    const int d = mix.dim();
    for (const auto& comp : mix.components) {
        if (static_cast<int>(comp.mean.size()) != d) {
            throw ConfigError("mixture: inconsistent dimensions");
        }
        cholesky(comp.cov, d);  // PD check
    }
}

Vec sample(const GaussianMixture& mix, Rng& rng) {
    const size_t k = rng.categorical(mix.weights);
    const auto& comp = mix.components[k];
    const int d = static_cast<int>(comp.mean.size());
    const std::vector<double> L = cholesky(comp.cov, d);
    const Vec z = rng.normal_vec(static_cast<size_t>(d));
    Vec x = comp.mean;
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j <= i; ++j) {
            x[static_cast<size_t>(i)] += L[static_cast<size_t>(i) * d + j] * z[static_cast<size_t>(j)];
        }
    }
    return x;
}

namespace {

// density of one component via its Cholesky factor
double component_density(const GaussianMixture::Component& comp, std::span<const double> x) {
    const int d = static_cast<int>(comp.mean.size());
    const std::vector<double> L = cholesky(comp.cov, d);
    // solve L y = (x - mean); quad = |y|^2, logdet = 2*sum(log L_ii)
    Vec y(static_cast<size_t>(d));
    for (int i = 0; i < d; ++i) {
        double s = x[static_cast<size_t>(i)] - comp.mean[static_cast<size_t>(i)];
        for (int j = 0; j < i; ++j) {
            s -= L[static_cast<size_t>(i) * d + j] * y[static_cast<size_t>(j)];
        }
        y[static_cast<size_t>(i)] = s / L[static_cast<size_t>(i) * d + i];
    }
    double quad = sum_sq(y);
    double logdet = 0.0;
    for (int i = 0; i < d; ++i) {
        logdet += 2.0 * std::log(L[static_cast<size_t>(i) * d + i]);
    }
    const double log_p = -0.5 * (d * std::log(2.0 * std::numbers::pi) + logdet + quad);
    return std::exp(log_p);
}

}  // namespace

double density(const GaussianMixture& mix, std::span<const double> x) {
    double p = 0.0;
    for (size_t k = 0; k < mix.components.size(); ++k) {
        p += mix.weights[k] * component_density(mix.components[k], x);
    }
    return p;
}

double peak_density(const GaussianMixture& mix) {
    double best = 0.0;
    for (const auto& comp : mix.components) {
        best = std::max(best, density(mix, comp.mean));
    }
    return best;
}

double mahalanobis_sq(const GaussianMixture::Component& comp, std::span<const double> x) {
    const int d = static_cast<int>(comp.mean.size());
    const std::vector<double> L = cholesky(comp.cov, d);
    Vec y(static_cast<size_t>(d));
    for (int i = 0; i < d; ++i) {
        double s = x[static_cast<size_t>(i)] - comp.mean[static_cast<size_t>(i)];
        for (int j = 0; j < i; ++j) {
            s -= L[static_cast<size_t>(i) * d + j] * y[static_cast<size_t>(j)];
        }
        y[static_cast<size_t>(i)] = s / L[static_cast<size_t>(i) * d + i];
    }
    return sum_sq(y);
}

}  // namespace flowalign
