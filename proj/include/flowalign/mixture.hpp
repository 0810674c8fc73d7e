#pragma once

#include <span>
#include <vector>

#include "flowalign/rng.hpp"
#include "flowalign/vecmath.hpp"

namespace flowalign {

// Mixture of full-covariance Gaussians. Shared between the synthetic task
// targets and the density-based reward.
struct GaussianMixture {
    struct Component {
        Vec mean;
        std::vector<double> cov;  // row-major dim x dim, positive definite
    };
    std::vector<Component> components;
    std::vector<double> weights;

    int dim() const { return components.empty() ? 0 : static_cast<int>(components.front().mean.size()); }
};

// Throws ConfigError unless weights sum to 1 (1e-9) and every covariance is
// positive definite.
void validate(const GaussianMixture& mix);

// Lower-triangular Cholesky factor; throws ConfigError if not positive definite.
std::vector<double> cholesky(std::span<const double> cov, int dim);

Vec sample(const GaussianMixture& mix, Rng& rng);

double density(const GaussianMixture& mix, std::span<const double> x);

// Largest density over the component means; the normalizer for density ratios.
double peak_density(const GaussianMixture& mix);

// Squared Mahalanobis distance of x from one component's mean.
double mahalanobis_sq(const GaussianMixture::Component& comp, std::span<const double> x);

}  // namespace flowalign
