#pragma once

#include <span>
#include <utility>
#include <vector>

#include "flowalign/net.hpp"
#include "flowalign/rewards.hpp"
#include "flowalign/rng.hpp"
#include "flowalign/sde.hpp"

namespace flowalign::grpo {

struct Group {
    int condition = 0;
    std::vector<sde::Trajectory> trajectories;
    std::vector<double> rewards;
    std::vector<double> advantages;
};

struct GrpoConfig {
    int group_size = 8;  // G, must be >= 2
    double clip_eps = 0.2;
    int inner_epochs = 1;
    int sampler_steps = 12;
    double t_min = flow::kDefaultTMin;
};

void validate(const GrpoConfig& cfg);

// (r_i - mean) / population std. Degenerate groups (std < 1e-8) get all-zero
// advantages instead of NaNs.
std::vector<double> group_advantages(std::span<const double> rewards);

// min(ratio*advantage, clip(ratio, 1-eps, 1+eps)*advantage)
double clipped_term(double ratio, double advantage, double clip_eps);

struct SurrogateStats {
    double objective = 0.0;      // maximized; the optimizer receives its negation
    double mean_ratio = 0.0;
    double clip_fraction = 0.0;  // fraction of steps with |ratio - 1| > clip_eps
};

// Clipped surrogate over all (group, trajectory, step) triples with nested
// means, plus its exact theta-gradient. Ratios come from step_logprob_under
// against both policies; trajectories must have been sampled with sigma > 0.
std::pair<SurrogateStats, net::ParamVector> objective_and_grad(const net::NetworkSpec& spec,
                                                               const net::ParamVector& theta,
                                                               const net::ParamVector& theta_old,
                                                               std::span<const Group> groups,
                                                               const GrpoConfig& cfg);

struct IterationMetrics {
    double mean_reward = 0.0;
    double std_reward = 0.0;
    double mean_ratio = 0.0;
    double clip_fraction = 0.0;
    double grad_norm = 0.0;
};

// One GRPO iteration: snapshot theta, roll G trajectories per condition under
// the snapshot, score the final states, form group advantages, then take
// inner_epochs ascent steps on the surrogate. Rollout randomness is keyed by
// (iteration, condition, trajectory index), so results are identical for any
// worker count; reductions stay order-fixed.
IterationMetrics train_iteration(const net::NetworkSpec& spec, net::ParamVector& theta,
                                 net::OptimizerState& opt, const GrpoConfig& cfg,
                                 std::span<const int> conditions, const rewards::RewardFn& reward,
                                 double sigma, long iteration, const Rng& run_rng,
                                 int workers = 1);

}  // namespace flowalign::grpo
