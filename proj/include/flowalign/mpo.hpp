#pragma once

#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "flowalign/net.hpp"
#include "flowalign/rewards.hpp"
#include "flowalign/rng.hpp"
#include "flowalign/sde.hpp"

namespace flowalign::mpo {

// Per-condition Gaussian reward belief.
struct ValueTrackerEntry {
    double mu = 0.5;
    double var = 1.0;
    long n = 0;
};

struct TrackerConfig {
    double obs_var = 0.25;  // observation noise for rewards normalized to [0, 1]
    double alpha = 1.0;     // KL scale for the process noise
    double init_mu = 0.5;
    double init_var = 1.0;
};

void validate(const TrackerConfig& cfg);

// Kalman cycle with process noise q injected after the measurement update:
//   K = var/(var + obs_var);  mu' = mu + K(r - mu);  var' = (1-K)var + q;  n' = n+1
ValueTrackerEntry tracker_update(const ValueTrackerEntry& entry, double r, double q,
                                 const TrackerConfig& cfg);

// q = alpha * trajectory KL between the policies before and after the update,
// evaluated on the trajectory that produced the observation.
double kl_process_noise(const net::NetworkSpec& spec, const net::ParamVector& theta_before,
                        const net::ParamVector& theta_after, const sde::Trajectory& traj,
                        double alpha, double t_min = flow::kDefaultTMin);

// EMA statistics for global advantage normalization. The normalized value
// uses the pre-update statistics; the update then folds the raw advantage in.
struct AdvantageNormalizer {
    double mu_a = 0.0;
    double var_a = 1.0;
    double lambda = 0.99;
    double eps = 1e-8;
};

double normalize_advantage(AdvantageNormalizer& norm, double advantage);

// p(c) proportional to sqrt(var_c) + eta/sqrt(n_c + 1); uniform when every
// weight is zero.
std::vector<double> curriculum_probabilities(std::span<const ValueTrackerEntry> entries,
                                             double eta);
int curriculum_sample(std::span<const ValueTrackerEntry> entries, double eta, Rng& rng);

// w = 1 + gamma * |r - mu| / (sigma_c + eps), sigma_c = sqrt(var)
double surprise_weight(double r, const ValueTrackerEntry& entry, double gamma, double eps = 1e-8);

// Advantage-weighted regression onto the trajectory's own endpoint:
//   loss = weight * mean over stored steps of |v(z_t, t, c) - (z_t - z_0)/t|^2
// with z_0 = traj.x_final and the weight treated as a constant.
std::pair<double, net::ParamVector> loss_and_grad(const net::NetworkSpec& spec,
                                                  const net::ParamVector& theta,
                                                  const sde::Trajectory& traj, int condition,
                                                  double weight,
                                                  double t_min = flow::kDefaultTMin);

struct MpoConfig {
    double gamma = 0.5;     // surprise factor
    double adv_clip = 3.0;  // normalized advantage clipped to +/- adv_clip
    int sampler_steps = 12;
    sde::SigmaSchedule sigma{0.1, 1e-4, 1};
    TrackerConfig tracker;
    double lambda = 0.99;  // normalizer EMA decay
    double eta = 1.0;      // curriculum balance
    double t_min = flow::kDefaultTMin;
};

struct MpoState {
    std::vector<ValueTrackerEntry> tracker;  // indexed by condition id
    AdvantageNormalizer normalizer;
    long iteration = 0;
    long trajectories_sampled = 0;
    long optimizer_steps = 0;
};

MpoState make_state(int condition_count, const MpoConfig& cfg);

struct IterationMetrics {
    long iteration = 0;
    int condition = 0;
    double reward = 0.0;
    double raw_advantage = 0.0;
    double norm_advantage = 0.0;
    double surprise = 0.0;
    double process_noise = 0.0;
    double mu_c = 0.0;   // belief after the update
    double var_c = 0.0;
    double grad_norm = 0.0;
    double g_t = 0.0;
};

// One MPO iteration: exactly one trajectory and one optimizer step.
// Order: curriculum draw -> rollout -> reward -> raw advantage against the
// pre-update belief -> EMA normalization (clipped) -> surprise weight ->
// gradient step -> process noise from the just-applied policy change ->
// tracker update for the sampled condition.
IterationMetrics train_iteration(const net::NetworkSpec& spec, net::ParamVector& theta,
                                 net::OptimizerState& opt, MpoState& state, const MpoConfig& cfg,
                                 const rewards::RewardFn& reward, const Rng& run_rng);

// Tracker table checkpoint: JSON {condition_id: {mu, var, n}}
void save_tracker(const std::filesystem::path& path, std::span<const ValueTrackerEntry> entries);
std::vector<ValueTrackerEntry> load_tracker(const std::filesystem::path& path);

}  // namespace flowalign::mpo
