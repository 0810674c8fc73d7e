#include "flowalign/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>

#include "flowalign/errors.hpp"
#include "flowalign/parallel.hpp"

namespace flowalign::grpo {

void validate(const GrpoConfig& cfg) {
    if (cfg.group_size < 2) {
        throw ConfigError("grpo: group_size must be >= 2");
    }
    if (!(cfg.clip_eps > 0.0)) {
        throw ConfigError("grpo: clip_eps must be positive");
    }
    if (cfg.inner_epochs < 1) {
        throw ConfigError("grpo: inner_epochs must be >= 1");
    }
    if (cfg.sampler_steps < 1) {
        throw ConfigError("grpo: sampler_steps must be >= 1");
    }
}

std::vector<double> group_advantages(std::span<const double> rewards) {
    if (rewards.size() < 2) {
        throw ContractError("group_advantages: need at least 2 rewards");
    }
    const double mean = mean_of(rewards);
    const double std = pop_std(rewards);
    std::vector<double> adv(rewards.size(), 0.0);
    if (std < 1e-8) {
        return adv;  // degenerate group
    }
    for (size_t i = 0; i < rewards.size(); ++i) {
        adv[i] = (rewards[i] - mean) / std;
    }
    return adv;
}

double clipped_term(double ratio, double advantage, double clip_eps) {
    const double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
    return std::min(ratio * advantage, clipped * advantage);
}

std::pair<SurrogateStats, net::ParamVector> objective_and_grad(const net::NetworkSpec& spec,
                                                               const net::ParamVector& theta,
                                                               const net::ParamVector& theta_old,
                                                               std::span<const Group> groups,
                                                               const GrpoConfig& cfg) {
    if (groups.empty()) {
        throw ContractError("grpo objective: no groups");
    }
    SurrogateStats stats;
    net::ParamVector grad(theta.size(), 0.0);
    long step_count = 0;
    net::ForwardCache cache;

    for (const Group& group : groups) {
        if (group.trajectories.size() != group.advantages.size()) {
            throw ContractError("grpo objective: group advantage count mismatch");
        }
        const double group_w =
            1.0 / (static_cast<double>(groups.size()) * static_cast<double>(group.trajectories.size()));
        for (size_t i = 0; i < group.trajectories.size(); ++i) {
            const sde::Trajectory& traj = group.trajectories[i];
            const double advantage = group.advantages[i];
            const double step_w = group_w / static_cast<double>(traj.steps.size());
            for (const sde::StepRecord& rec : traj.steps) {
                if (rec.sigma <= 0.0) {
                    throw KernelError("grpo objective: sigma = 0 trajectory");
                }
                // recompute the policy's transition mean (the old policy's
                // log-prob uses step_logprob_under for symmetry)
                const Vec v = net::forward(spec, theta, rec.x, rec.t, group.condition, &cache);
                const double score_coef = rec.sigma * rec.sigma / (2.0 * rec.t);
                const double var = rec.sigma * rec.sigma * std::abs(rec.dt);
                Vec mean(v.size());
                double quad = 0.0;
                for (size_t k = 0; k < v.size(); ++k) {
                    const double drift_k = v[k] + score_coef * (rec.x[k] + (1.0 - rec.t) * v[k]);
                    mean[k] = rec.x[k] + drift_k * rec.dt;
                    const double r = rec.x_next[k] - mean[k];
                    quad += r * r;
                }
                const double d = static_cast<double>(v.size());
                const double logp =
                    -0.5 * d * std::log(2.0 * std::numbers::pi * var) - quad / (2.0 * var);
                const double logp_old =
                    sde::step_logprob_under(spec, theta_old, rec, group.condition, cfg.t_min);
                const double ratio = std::exp(logp - logp_old);

                const double clipped = std::clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
                const double s1 = ratio * advantage;
                const double s2 = clipped * advantage;
                stats.objective += step_w * std::min(s1, s2);
                stats.mean_ratio += ratio;
                stats.clip_fraction += (std::abs(ratio - 1.0) > cfg.clip_eps) ? 1.0 : 0.0;
                ++step_count;

                // gradient flows only through the unclipped branch
                if (s1 <= s2 && advantage != 0.0) {
                    // d term/d mean_k = A * ratio * (x_next_k - mean_k)/var;
                    // d mean_k/d v_k = dt * (1 + sigma^2 (1-t)/(2t))
                    const double vcoef = rec.dt * (1.0 + score_coef * (1.0 - rec.t));
                    Vec upstream(v.size());
                    for (size_t k = 0; k < v.size(); ++k) {
                        upstream[k] = step_w * advantage * ratio *
                                      ((rec.x_next[k] - mean[k]) / var) * vcoef;
                    }
                    const net::ParamVector g = net::backward(spec, theta, cache, upstream);
                    axpy(1.0, g, grad);
                }
            }
        }
    }
    stats.mean_ratio /= static_cast<double>(step_count);
    stats.clip_fraction /= static_cast<double>(step_count);
    return {stats, std::move(grad)};
}

IterationMetrics train_iteration(const net::NetworkSpec& spec, net::ParamVector& theta,
                                 net::OptimizerState& opt, const GrpoConfig& cfg,
                                 std::span<const int> conditions, const rewards::RewardFn& reward,
                                 double sigma, long iteration, const Rng& run_rng, int workers) {
    validate(cfg);
    if (!(sigma > 0.0)) {
        throw KernelError("grpo: sigma schedule must stay positive");
    }
    if (conditions.empty()) {
        throw ContractError("grpo: no conditions");
    }
    const net::ParamVector theta_old = theta;  // frozen snapshot for this iteration

    // rollouts over the flattened (condition, index) grid; slots are
    // independent, so the worker count cannot change the result
    const int total = static_cast<int>(conditions.size()) * cfg.group_size;
    std::vector<sde::Trajectory> slots(static_cast<size_t>(total));
    std::vector<double> slot_rewards(static_cast<size_t>(total), 0.0);
    std::exception_ptr failure;
    std::mutex failure_mutex;
    parallel_for(total, workers, [&](int k) {
        try {
            const int c = conditions[static_cast<size_t>(k) / cfg.group_size];
            const int i = k % cfg.group_size;
            Rng traj_rng = run_rng.fork(static_cast<uint64_t>(iteration), static_cast<uint64_t>(c),
                                        static_cast<uint64_t>(i));
            sde::Trajectory traj = sde::sde_rollout(spec, theta_old, c, cfg.sampler_steps, sigma,
                                                    traj_rng, cfg.t_min);
            const double r = reward(traj.x_final, c);
            traj.reward = r;
            slot_rewards[static_cast<size_t>(k)] = r;
            slots[static_cast<size_t>(k)] = std::move(traj);
        } catch (...) {
            const std::lock_guard<std::mutex> lock(failure_mutex);
            if (!failure) {
                failure = std::current_exception();
            }
        }
    });
    if (failure) {
        std::rethrow_exception(failure);
    }

    std::vector<Group> groups;
    groups.reserve(conditions.size());
    std::vector<double> all_rewards;
    for (size_t ci = 0; ci < conditions.size(); ++ci) {
        Group group;
        group.condition = conditions[ci];
        for (int i = 0; i < cfg.group_size; ++i) {
            const size_t k = ci * static_cast<size_t>(cfg.group_size) + static_cast<size_t>(i);
            group.rewards.push_back(slot_rewards[k]);
            all_rewards.push_back(slot_rewards[k]);
            group.trajectories.push_back(std::move(slots[k]));
        }
        group.advantages = group_advantages(group.rewards);
        groups.push_back(std::move(group));
    }

    IterationMetrics metrics;
    metrics.mean_reward = mean_of(all_rewards);
    metrics.std_reward = pop_std(all_rewards);
    for (int epoch = 0; epoch < cfg.inner_epochs; ++epoch) {
        auto [stats, grad] = objective_and_grad(spec, theta, theta_old, groups, cfg);
        metrics.mean_ratio = stats.mean_ratio;
        metrics.clip_fraction = stats.clip_fraction;
        metrics.grad_norm = nrm2(grad);
        scale(grad, -1.0);  // ascent on the surrogate
        net::adamw_step(theta, opt, std::move(grad));
    }
    return metrics;
}

}  // namespace flowalign::grpo
