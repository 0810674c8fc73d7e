#include "flowalign/mpo.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <json.hpp>

#include "flowalign/errors.hpp"
#include "flowalign/jsonio.hpp"

namespace flowalign::mpo {

void validate(const TrackerConfig& cfg) {
    if (!(cfg.obs_var > 0.0)) {
        throw ConfigError("tracker: obs_var must be positive");
    }
    if (cfg.alpha < 0.0) {
        throw ConfigError("tracker: alpha must be >= 0");
    }
    if (!(cfg.init_var > 0.0)) {
        throw ConfigError("tracker: init_var must be positive");
    }
}

ValueTrackerEntry tracker_update(const ValueTrackerEntry& entry, double r, double q,
                                 const TrackerConfig& cfg) {
    if (!std::isfinite(r)) {
        throw NumericError("tracker_update: non-finite reward");
    }
    if (q < 0.0) {
        throw ContractError("tracker_update: negative process noise");
    }
    const double gain = entry.var / (entry.var + cfg.obs_var);
    ValueTrackerEntry out;
    out.mu = entry.mu + gain * (r - entry.mu);
    out.var = (1.0 - gain) * entry.var + q;
    out.n = entry.n + 1;
    return out;
}

double kl_process_noise(const net::NetworkSpec& spec, const net::ParamVector& theta_before,
                        const net::ParamVector& theta_after, const sde::Trajectory& traj,
                        double alpha, double t_min) {
    if (alpha == 0.0) {
        return 0.0;
    }
    return alpha * sde::trajectory_kl(spec, theta_before, theta_after, traj, t_min);
}

double normalize_advantage(AdvantageNormalizer& norm, double advantage) {
    if (!std::isfinite(advantage)) {
        throw NumericError("normalize_advantage: non-finite advantage");
    }
    const double normalized = (advantage - norm.mu_a) / (std::sqrt(norm.var_a) + norm.eps);
    norm.mu_a = norm.lambda * norm.mu_a + (1.0 - norm.lambda) * advantage;
    const double centered = advantage - norm.mu_a;
    norm.var_a = norm.lambda * norm.var_a + (1.0 - norm.lambda) * centered * centered;
    norm.var_a = std::max(norm.var_a, norm.eps * norm.eps);
    return normalized;
}

std::vector<double> curriculum_probabilities(std::span<const ValueTrackerEntry> entries,
                                             double eta) {
    if (entries.empty()) {
        throw ContractError("curriculum: no conditions");
    }
    std::vector<double> w(entries.size());
    double total = 0.0;
    for (size_t i = 0; i < entries.size(); ++i) {
        w[i] = std::sqrt(entries[i].var) + eta / std::sqrt(static_cast<double>(entries[i].n) + 1.0);
        total += w[i];
    }
    if (total <= 0.0) {
        // all-zero weights: fall back to uniform
        std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(entries.size()));
        return w;
    }
    for (double& v : w) {
        v /= total;
    }
    return w;
}

int curriculum_sample(std::span<const ValueTrackerEntry> entries, double eta, Rng& rng) {
    const std::vector<double> p = curriculum_probabilities(entries, eta);
    return static_cast<int>(rng.categorical(p));
}

double surprise_weight(double r, const ValueTrackerEntry& entry, double gamma, double eps) {
    return 1.0 + gamma * std::abs(r - entry.mu) / (std::sqrt(entry.var) + eps);
}

std::pair<double, net::ParamVector> loss_and_grad(const net::NetworkSpec& spec,
                                                  const net::ParamVector& theta,
                                                  const sde::Trajectory& traj, int condition,
                                                  double weight, double t_min) {
    if (traj.steps.empty()) {
        throw ContractError("mpo loss: empty trajectory");
    }
    const Vec& z0 = traj.x_final;
    const double inv_steps = 1.0 / static_cast<double>(traj.steps.size());
    double residual_sum = 0.0;
    net::ParamVector grad(theta.size(), 0.0);
    if (weight == 0.0) {
        // stop-grad weight of zero: loss and gradient are identically zero,
        // skip the forward passes (the t guard below still applies)
        for (const sde::StepRecord& rec : traj.steps) {
            if (rec.t < t_min) {
                throw ContractError("mpo loss: stored step below t_min");
            }
        }
        return {0.0, std::move(grad)};
    }
    net::ForwardCache cache;
    for (const sde::StepRecord& rec : traj.steps) {
        if (rec.t < t_min) {
            throw ContractError("mpo loss: stored step below t_min");
        }
        const Vec v = net::forward(spec, theta, rec.x, rec.t, condition, &cache);
        Vec residual(v.size());
        for (size_t i = 0; i < v.size(); ++i) {
            const double target = (rec.x[i] - z0[i]) / rec.t;
            residual[i] = v[i] - target;
        }
        residual_sum += sum_sq(residual) * inv_steps;
        for (double& rr : residual) {
            rr *= 2.0 * weight * inv_steps;
        }
        const net::ParamVector g = net::backward(spec, theta, cache, residual);
        axpy(1.0, g, grad);
    }
    return {weight * residual_sum, std::move(grad)};
}

MpoState make_state(int condition_count, const MpoConfig& cfg) {
    validate(cfg.tracker);
    MpoState state;
    state.tracker.assign(static_cast<size_t>(condition_count),
                         ValueTrackerEntry{cfg.tracker.init_mu, cfg.tracker.init_var, 0});
    state.normalizer.lambda = cfg.lambda;
    return state;
}

IterationMetrics train_iteration(const net::NetworkSpec& spec, net::ParamVector& theta,
                                 net::OptimizerState& opt, MpoState& state, const MpoConfig& cfg,
                                 const rewards::RewardFn& reward, const Rng& run_rng) {
    const long iter = state.iteration;
    const double sigma = cfg.sigma.at(iter);
    if (!(sigma > 0.0)) {
        throw KernelError("mpo: sigma schedule must stay positive");
    }

    Rng iter_rng = run_rng.fork(static_cast<uint64_t>(iter));
    const int condition = curriculum_sample(state.tracker, cfg.eta, iter_rng);

    Rng traj_rng = run_rng.fork(static_cast<uint64_t>(iter), static_cast<uint64_t>(condition), 1);
    sde::Trajectory traj =
        sde::sde_rollout(spec, theta, condition, cfg.sampler_steps, sigma, traj_rng, cfg.t_min);
    state.trajectories_sampled += 1;

    const double r = reward(traj.x_final, condition);
    traj.reward = r;

    const ValueTrackerEntry entry = state.tracker[static_cast<size_t>(condition)];
    const double raw_advantage = r - entry.mu;  // baseline sees only past outcomes
    double norm_advantage = normalize_advantage(state.normalizer, raw_advantage);
    norm_advantage = std::clamp(norm_advantage, -cfg.adv_clip, cfg.adv_clip);
    const double surprise = surprise_weight(r, entry, cfg.gamma);
    const double weight = surprise * norm_advantage;

    auto [loss, grad] = loss_and_grad(spec, theta, traj, condition, weight, cfg.t_min);
    (void)loss;
    const double grad_norm = nrm2(grad);
    const net::ParamVector theta_before = theta;
    net::adamw_step(theta, opt, std::move(grad));
    state.optimizer_steps += 1;

    const double q = kl_process_noise(spec, theta_before, theta, traj, cfg.tracker.alpha, cfg.t_min);
    state.tracker[static_cast<size_t>(condition)] = tracker_update(entry, r, q, cfg.tracker);
    state.iteration += 1;

    IterationMetrics m;
    m.iteration = iter;
    m.condition = condition;
    m.reward = r;
    m.raw_advantage = raw_advantage;
    m.norm_advantage = norm_advantage;
    m.surprise = surprise;
    m.process_noise = q;
    m.mu_c = state.tracker[static_cast<size_t>(condition)].mu;
    m.var_c = state.tracker[static_cast<size_t>(condition)].var;
    m.grad_norm = grad_norm;
    m.g_t = sigma;
    return m;
}

void save_tracker(const std::filesystem::path& path, std::span<const ValueTrackerEntry> entries) {
    nlohmann::json j = nlohmann::json::object();
    for (size_t i = 0; i < entries.size(); ++i) {
        j[std::to_string(i)] =
            nlohmann::json{{"mu", entries[i].mu}, {"var", entries[i].var}, {"n", entries[i].n}};
    }
    atomic_write_text(path, j.dump());
}

std::vector<ValueTrackerEntry> load_tracker(const std::filesystem::path& path) {
    const nlohmann::json j = load_json_file(path);
    std::vector<ValueTrackerEntry> entries(j.size());
    try {
        for (const auto& [key, value] : j.items()) {
            const size_t idx = std::stoul(key);
            if (idx >= entries.size()) {
                throw ConfigError("tracker checkpoint: non-contiguous condition ids");
            }
            entries[idx] = {value.at("mu").get<double>(), value.at("var").get<double>(),
                            value.at("n").get<long>()};
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("tracker checkpoint " + path.string() + ": " + e.what());
    }
    return entries;
}

}  // namespace flowalign::mpo
