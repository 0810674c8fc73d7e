#include "flowalign/rewards.hpp"

#include <algorithm>
#include <cmath>

#include "flowalign/errors.hpp"

namespace flowalign::rewards {

double region_reward(std::span<const double> x, const RegionSpec& spec) {
    if (!(spec.temperature > 0.0)) {
        throw ContractError("region_reward: temperature must be positive");
    }
    if (x.size() != spec.normal.size()) {
        throw ContractError("region_reward: dimension mismatch");
    }
    return stable_sigmoid((dot(spec.normal, x) - spec.offset) / spec.temperature);
}

double mode_proximity_reward(std::span<const double> x, const ModeProximitySpec& spec) {
    if (x.size() != spec.target.size()) {
        throw ContractError("mode_proximity_reward: dimension mismatch");
    }
    return std::exp(-squared_distance(x, spec.target) / (2.0 * spec.scale * spec.scale));
}

double realism_reward(std::span<const double> x, const RealismSpec& spec) {
    GaussianMixture mix = spec.mixture;
    if (spec.bandwidth != 1.0) {
        const double b2 = spec.bandwidth * spec.bandwidth;
        for (auto& comp : mix.components) {
            for (double& c : comp.cov) {
                c *= b2;
            }
        }
    }
    const double peak = peak_density(mix);
    if (!(peak > 0.0)) {
        return 0.0;
    }
    return std::clamp(density(mix, x) / peak, 0.0, 1.0);
}

double evaluate_reward(const RewardSpec& spec, std::span<const double> x, int /*condition*/) {
    return std::visit(
        [&](const auto& s) {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, RegionSpec>) {
                return region_reward(x, s);
            } else if constexpr (std::is_same_v<T, ModeProximitySpec>) {
                return mode_proximity_reward(x, s);
            } else {
                return realism_reward(x, s);
            }
        },
        spec);
}

void validate(const EnsembleSpec& spec) {
    if (spec.members.empty() || spec.members.size() != spec.weights.size()) {
        throw ConfigError("ensemble: members and weights must be non-empty and matched");
    }
    double total = 0.0;
    for (double w : spec.weights) {
        if (w < 0.0) {
            throw ConfigError("ensemble: negative weight");
        }
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-9) {
        throw ConfigError("ensemble: weights must sum to 1");
    }
}

double ensemble_reward(std::span<const double> x, int condition, const EnsembleSpec& spec) {
    double r = 0.0;
    for (size_t i = 0; i < spec.members.size(); ++i) {
        r += spec.weights[i] * evaluate_reward(spec.members[i], x, condition);
    }
    return r;
}

int noisy_score(double reward, Rng& rng) {
    const double noisy = std::clamp(reward + 0.1 * rng.normal(), 0.0, 1.0);
    return static_cast<int>(std::lround(1.0 + 4.0 * noisy));
}

}  // namespace flowalign::rewards
