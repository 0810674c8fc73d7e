#pragma once

#include <functional>
#include <span>
#include <variant>
#include <vector>

#include "flowalign/mixture.hpp"
#include "flowalign/rng.hpp"
#include "flowalign/vecmath.hpp"

namespace flowalign::rewards {

// Analytic stand-ins for the learned reward ensemble. Every reward maps a
// sample (and condition id) to [0, 1] and is deterministic.

// sigmoid((<normal, x> - offset) / temperature): a soft half-plane preference.
struct RegionSpec {
    Vec normal;
    double offset = 0.0;
    double temperature = 1.0;
};

// exp(-|x - target|^2 / (2 scale^2))
struct ModeProximitySpec {
    Vec target;
    double scale = 1.0;
};

// Density under a reference mixture, normalized by the peak mode density.
// bandwidth > 1 widens every covariance by bandwidth^2.
struct RealismSpec {
    GaussianMixture mixture;
    double bandwidth = 1.0;
};

using RewardSpec = std::variant<RegionSpec, ModeProximitySpec, RealismSpec>;

double region_reward(std::span<const double> x, const RegionSpec& spec);
double mode_proximity_reward(std::span<const double> x, const ModeProximitySpec& spec);
double realism_reward(std::span<const double> x, const RealismSpec& spec);

double evaluate_reward(const RewardSpec& spec, std::span<const double> x, int condition);

struct EnsembleSpec {
    std::vector<RewardSpec> members;
    std::vector<double> weights;  // nonnegative, sum to 1
};

void validate(const EnsembleSpec& spec);

// Convex combination of member rewards; stays inside [min member, max member].
double ensemble_reward(std::span<const double> x, int condition, const EnsembleSpec& spec);

// Continuous reward -> the 1..5 annotation scale with labeler noise:
// round(1 + 4 * clamp(r + N(0, 0.1), 0, 1)).
int noisy_score(double reward, Rng& rng);

// Shared signature for handing a bound reward model to the RL loops.
using RewardFn = std::function<double(std::span<const double> x, int condition)>;

}  // namespace flowalign::rewards
