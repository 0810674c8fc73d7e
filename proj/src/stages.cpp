#include "flowalign/stages.hpp"

#include <cmath>
#include <cstdlib>
#include <limits>

#include "flowalign/dpo.hpp"
#include "flowalign/errors.hpp"
#include "flowalign/fdcheck.hpp"
#include "flowalign/grpo.hpp"
#include "flowalign/metrics.hpp"
#include "flowalign/mpo.hpp"
#include "flowalign/parallel.hpp"
#include "flowalign/prompttok.hpp"
#include "flowalign/sde.hpp"

namespace flowalign::runner {

namespace {

std::filesystem::path resolve_out_dir(const ExperimentConfig& config) {
    std::filesystem::path dir = config.out_dir;
    if (dir.empty()) {
        const char* root = std::getenv("FLOWALIGN_OUT");
        dir = std::filesystem::path(root ? root : "runs") /
              (std::string(to_string(config.stage)) + "-seed" + std::to_string(config.seed));
    }
    std::filesystem::create_directories(dir);
    return dir;
}

net::OptimizerState make_optimizer(const net::NetworkSpec& spec, const ExperimentConfig& config,
                                   double lr) {
    net::OptimizerState opt = net::make_adamw_state(spec, lr);
    opt.beta1 = config.optimizer.beta1;
    opt.beta2 = config.optimizer.beta2;
    opt.eps = config.optimizer.eps;
    opt.weight_decay = config.optimizer.weight_decay;
    opt.clip_norm = config.optimizer.clip_norm;
    return opt;
}

net::Checkpoint load_upstream(const std::string& path, const ExperimentConfig& config,
                              const char* stage_name) {
    if (path.empty()) {
        throw DependencyError(std::string(stage_name) +
                              ": an upstream 'checkpoint' path is required");
    }
    net::Checkpoint ck = net::load_checkpoint(path);
    if (ck.spec.condition_count != static_cast<int>(config.conditions.size())) {
        throw ConfigError(std::string(stage_name) +
                          ": checkpoint condition count does not match the task");
    }
    if (ck.spec.data_dim != 2) {
        throw ConfigError(std::string(stage_name) + ": checkpoint is not a 2D model");
    }
    return ck;
}

std::vector<int> condition_ids(const ExperimentConfig& config) {
    std::vector<int> ids;
    ids.reserve(config.conditions.size());
    for (const auto& c : config.conditions) {
        ids.push_back(c.id);
    }
    return ids;
}

// shared fm training loop for pretrain and sft
StageResult fm_train(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                     net::NetworkSpec spec, net::ParamVector theta, long start_step, long steps,
                     int batch_size, double lr, const flow::TimestepSampler& sampler,
                     long log_every,
                     const std::function<flow::BatchItem(Rng&)>& draw_item) {
    net::OptimizerState opt = make_optimizer(spec, config, lr);
    Rng rng(config.seed);
    MetricsCsv csv(out_dir / "metrics.csv", {"iteration", "loss", "grad_norm"});
    const std::filesystem::path ck_path = out_dir / "checkpoint.json";

    for (long step = 0; step < steps; ++step) {
        std::vector<flow::BatchItem> batch;
        batch.reserve(static_cast<size_t>(batch_size));
        for (int i = 0; i < batch_size; ++i) {
            batch.push_back(draw_item(rng));
        }
        const auto [loss, grad] = flow::fm_loss_and_grad(spec, theta, batch, sampler, rng);
        if (!std::isfinite(loss)) {
            csv.flush();
            throw DivergenceError("fm training diverged at step " + std::to_string(step) +
                                  "; last saved checkpoint retained");
        }
        const double gnorm = nrm2(grad);
        net::adamw_step(theta, opt, grad);
        if (step % log_every == 0 || step + 1 == steps) {
            csv.row({static_cast<double>(step), loss, gnorm});
        }
    }
    csv.flush();
    net::save_checkpoint(ck_path, spec, theta, start_step + steps);
    return {ck_path, csv.path(), true, ""};
}

StageResult run_pretrain(const ExperimentConfig& config) {
    const auto out_dir = resolve_out_dir(config);
    const net::NetworkSpec spec = config.network;
    net::ParamVector theta = net::init_params(spec, config.seed);
    const int n_cond = static_cast<int>(config.conditions.size());
    const auto& conditions = config.conditions;
    const auto draw = [&conditions, n_cond](Rng& rng) {
        const int c = static_cast<int>(rng.below(static_cast<uint64_t>(n_cond)));
        Rng sub = rng.split();
        return flow::BatchItem{worldgen::sample_data(conditions[static_cast<size_t>(c)], 1, sub)[0],
                               c};
    };
    return fm_train(config, out_dir, spec, std::move(theta), 0, config.pretrain.steps,
                    config.pretrain.batch, config.pretrain.lr, config.pretrain.sampler,
                    config.pretrain.log_every, draw);
}

StageResult run_sft(const ExperimentConfig& config) {
    const auto out_dir = resolve_out_dir(config);

    net::Checkpoint ck;
    if (!config.sft.init_checkpoints.empty()) {
        // model weight averaging: merge specialist checkpoints into the init
        std::vector<net::ParamVector> models;
        for (const std::string& path : config.sft.init_checkpoints) {
            net::Checkpoint part = load_upstream(path, config, "sft");
            if (!models.empty() && part.spec != ck.spec) {
                throw ConfigError("sft: init checkpoints disagree on the network spec");
            }
            ck.spec = part.spec;
            ck.step_count = std::max(ck.step_count, part.step_count);
            models.push_back(std::move(part.params));
        }
        ck.params = net::average_params(models, config.sft.init_weights);
    } else {
        ck = load_upstream(config.sft.checkpoint, config, "sft");
    }

    // curated pool: keep target samples that clear the reward threshold
    const rewards::RewardFn reward = make_reward_fn(config);
    Rng pool_rng(Rng(config.seed).fork(0x5F7));
    std::vector<flow::BatchItem> pool;
    for (const auto& cond : config.conditions) {
        const auto samples =
            worldgen::sample_data(cond, config.sft.pool_per_condition, pool_rng);
        for (const Vec& x : samples) {
            if (reward(x, cond.id) >= config.sft.curation_threshold) {
                pool.push_back({x, cond.id});
            }
        }
    }
    if (pool.empty()) {
        throw ConfigError("sft: curation kept no samples; lower curation_threshold");
    }

    flow::TimestepSampler uniform{flow::TimestepSampler::Kind::Uniform};
    uniform.t_min = config.t_min;
    const auto draw = [&pool](Rng& rng) { return pool[rng.below(pool.size())]; };
    return fm_train(config, out_dir, ck.spec, std::move(ck.params), ck.step_count,
                    config.sft.steps, config.sft.batch, config.sft.lr, uniform,
                    config.sft.log_every, draw);
}

StageResult run_dpo(const ExperimentConfig& config) {
    const auto out_dir = resolve_out_dir(config);
    net::Checkpoint ck = load_upstream(config.dpo.checkpoint, config, "dpo");
    const net::NetworkSpec& spec = ck.spec;
    net::ParamVector theta = std::move(ck.params);

    dpo::DpoConfig dpo_cfg;
    dpo_cfg.beta_eff = config.dpo.beta_eff;
    dpo_cfg.t_sampler = config.dpo.t_sampler;
    dpo_cfg.reference = theta;  // frozen for the whole run, across rounds
    dpo_cfg.skip_factor = config.dpo.skip_factor;

    const rewards::RewardFn reward = make_reward_fn(config);
    net::OptimizerState opt = make_optimizer(spec, config, config.dpo.lr);
    Rng rng(config.seed);
    MetricsCsv csv(out_dir / "metrics.csv", {"iteration", "round", "loss", "grad_norm"});
    const std::filesystem::path ck_path = out_dir / "checkpoint.json";

    long global_step = 0;
    for (int round = 0; round < config.dpo.rounds; ++round) {
        // offline snapshot: sample candidates from the current policy, score
        // them with labeler noise, keep winner/loser pairs
        std::vector<dpo::ScoredCandidate> candidates;
        for (const auto& cond : config.conditions) {
            for (int i = 0; i < config.dpo.candidates_per_condition; ++i) {
                Rng cr = rng.fork(static_cast<uint64_t>(round), static_cast<uint64_t>(cond.id),
                                  static_cast<uint64_t>(i));
                const flow::OdePath path =
                    flow::ode_sample(spec, theta, cond.id, config.dpo.sample_steps, cr, config.t_min);
                const int score = rewards::noisy_score(reward(path.x_final(), cond.id), cr);
                candidates.push_back({cond.id, path.x_final(), score});
            }
        }
        const std::vector<dpo::PreferencePair> pairs = dpo::build_pairs(candidates);
        if (pairs.empty()) {
            throw ConfigError("dpo: snapshot round " + std::to_string(round) +
                              " produced no preference pairs; raise candidates_per_condition");
        }
        if (!config.dpo.pairs_file.empty()) {
            std::filesystem::path pf = config.dpo.pairs_file;
            if (config.dpo.rounds > 1) {
                pf += "." + std::to_string(round);
            }
            dpo::write_pairs(pf, pairs);
        }

        for (long step = 0; step < config.dpo.steps; ++step, ++global_step) {
            std::vector<dpo::PreferencePair> batch;
            batch.reserve(static_cast<size_t>(config.dpo.batch));
            for (int i = 0; i < config.dpo.batch; ++i) {
                batch.push_back(pairs[rng.below(pairs.size())]);
            }
            const auto [loss, grad] = dpo::dpo_loss_and_grad(spec, theta, dpo_cfg, batch, rng);
            if (!std::isfinite(loss)) {
                csv.flush();
                throw DivergenceError("dpo diverged at step " + std::to_string(global_step));
            }
            const double gnorm = nrm2(grad);
            net::adamw_step(theta, opt, grad);
            if (step % config.dpo.log_every == 0 || step + 1 == config.dpo.steps) {
                csv.row({static_cast<double>(global_step), static_cast<double>(round), loss, gnorm});
            }
        }
    }
    csv.flush();
    net::save_checkpoint(ck_path, spec, theta, ck.step_count + global_step);
    return {ck_path, csv.path(), true, ""};
}

StageResult run_grpo(const ExperimentConfig& config) {
    const auto out_dir = resolve_out_dir(config);
    net::Checkpoint ck = load_upstream(config.grpo.checkpoint, config, "grpo");
    const net::NetworkSpec& spec = ck.spec;
    net::ParamVector theta = std::move(ck.params);

    grpo::GrpoConfig cfg;
    cfg.group_size = config.grpo.group_size;
    cfg.clip_eps = config.grpo.clip_eps;
    cfg.inner_epochs = config.grpo.inner_epochs;
    cfg.sampler_steps = config.grpo.sampler_steps;
    cfg.t_min = config.t_min;
    grpo::validate(cfg);

    const sde::SigmaSchedule schedule{config.grpo.sigma0, config.grpo.sigma_floor,
                                      config.grpo.iterations};
    const rewards::RewardFn reward = make_reward_fn(config);
    net::OptimizerState opt = make_optimizer(spec, config, config.grpo.lr);
    const std::vector<int> ids = condition_ids(config);
    const Rng run_rng(config.seed);

    MetricsCsv csv(out_dir / "metrics.csv",
                   {"iteration", "mean_reward", "std_reward", "mean_ratio", "clip_fraction",
                    "grad_norm"});
    const std::filesystem::path ck_path = out_dir / "checkpoint.json";
    for (long iter = 0; iter < config.grpo.iterations; ++iter) {
        const auto m = grpo::train_iteration(spec, theta, opt, cfg, ids, reward,
                                             schedule.at(iter), iter, run_rng, config.workers);
        csv.row({static_cast<double>(iter), m.mean_reward, m.std_reward, m.mean_ratio,
                 m.clip_fraction, m.grad_norm});
    }
    csv.flush();
    net::save_checkpoint(ck_path, spec, theta, ck.step_count + config.grpo.iterations);
    return {ck_path, csv.path(), true, ""};
}

StageResult run_mpo(const ExperimentConfig& config) {
    const auto out_dir = resolve_out_dir(config);
    net::Checkpoint ck = load_upstream(config.mpo.checkpoint, config, "mpo");
    const net::NetworkSpec& spec = ck.spec;
    net::ParamVector theta = std::move(ck.params);

    mpo::MpoConfig cfg;
    cfg.gamma = config.mpo.gamma;
    cfg.adv_clip = config.mpo.adv_clip;
    cfg.sampler_steps = config.mpo.sampler_steps;
    cfg.sigma = {config.mpo.sigma0, config.mpo.sigma_floor, config.mpo.iterations};
    cfg.tracker = {config.mpo.obs_var, config.mpo.alpha, config.mpo.init_mu, config.mpo.init_var};
    cfg.lambda = config.mpo.lambda;
    cfg.eta = config.mpo.eta;
    cfg.t_min = config.t_min;

    const rewards::RewardFn reward = make_reward_fn(config);
    net::OptimizerState opt = make_optimizer(spec, config, config.mpo.lr);
    mpo::MpoState state = mpo::make_state(static_cast<int>(config.conditions.size()), cfg);
    const Rng run_rng(config.seed);

    MetricsCsv csv(out_dir / "metrics.csv",
                   {"iteration", "condition", "reward", "raw_A", "norm_A", "w_c", "Q", "mu_c",
                    "var_c", "grad_norm", "g_t"});
    const std::filesystem::path ck_path = out_dir / "checkpoint.json";
    for (long iter = 0; iter < config.mpo.iterations; ++iter) {
        const auto m = mpo::train_iteration(spec, theta, opt, state, cfg, reward, run_rng);
        csv.row({static_cast<double>(m.iteration), static_cast<double>(m.condition), m.reward,
                 m.raw_advantage, m.norm_advantage, m.surprise, m.process_noise, m.mu_c, m.var_c,
                 m.grad_norm, m.g_t});
    }
    csv.flush();
    mpo::save_tracker(out_dir / "tracker.json", state.tracker);
    net::save_checkpoint(ck_path, spec, theta, ck.step_count + config.mpo.iterations);
    return {ck_path, csv.path(), true, ""};
}

StageResult run_eval(const ExperimentConfig& config) {
    const auto out_dir = resolve_out_dir(config);
    net::Checkpoint ck = load_upstream(config.eval.checkpoint, config, "eval");
    Rng rng(config.seed);
    const EvalResult result =
        evaluate(ck.spec, ck.params, config.conditions, config.reward_table,
                 config.eval.samples_per_condition, config.eval.ode_steps, config.t_min, rng,
                 config.workers);

    MetricsCsv summary(out_dir / "eval_summary.csv",
                       {"condition", "any_mode_coverage", "mean_reward", "mean_realism"});
    MetricsCsv coverage(out_dir / "eval_coverage.csv", {"condition", "mode", "coverage"});
    for (const ConditionEval& ce : result.per_condition) {
        summary.row({static_cast<double>(ce.condition), ce.any_mode_coverage, ce.mean_reward,
                     ce.mean_realism});
        for (size_t m = 0; m < ce.mode_coverage.size(); ++m) {
            coverage.row({static_cast<double>(ce.condition), static_cast<double>(m),
                          ce.mode_coverage[m]});
        }
    }
    summary.flush();
    coverage.flush();
    return {{}, summary.path(), true, ""};
}

StageResult run_gradcheck(const ExperimentConfig& config) {
    const auto out_dir = resolve_out_dir(config);
    const GradcheckReport report = gradient_check_suite(config.gradcheck.trials, config.seed);
    const bool ok = report.max_rel_error < config.gradcheck.tolerance;
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "gradcheck %s: max relative error %.3e over %d trials "
                  "(fm %.3e, dpo %.3e, grpo %.3e, mpo %.3e)",
                  ok ? "passed" : "FAILED", report.max_rel_error, report.trials, report.fm_error,
                  report.dpo_error, report.grpo_error, report.mpo_error);
    atomic_write_text(out_dir / "gradcheck.txt", std::string(buf) + "\n");
    return {{}, out_dir / "gradcheck.txt", ok, buf};
}

StageResult run_tokenize(const ExperimentConfig& config) {
    if (config.tokenize.text.empty()) {
        throw ConfigError("tokenize: provide text via --text or the tokenize.text config field");
    }
    const auto spans = prompttok::segment_prompt(config.tokenize.text);
    StageResult result;
    result.message = prompttok::spans_to_json(spans);
    return result;
}

}  // namespace

StageResult run_stage(const ExperimentConfig& config) {
    switch (config.stage) {
        case Stage::pretrain: return run_pretrain(config);
        case Stage::sft: return run_sft(config);
        case Stage::dpo: return run_dpo(config);
        case Stage::grpo: return run_grpo(config);
        case Stage::mpo: return run_mpo(config);
        case Stage::eval: return run_eval(config);
        case Stage::gradcheck: return run_gradcheck(config);
        case Stage::tokenize: return run_tokenize(config);
    }
    throw ContractError("run_stage: unknown stage");
}

EvalResult evaluate(const net::NetworkSpec& spec, const net::ParamVector& theta,
                    const std::vector<worldgen::ConditionSpec>& conditions,
                    const std::vector<rewards::EnsembleSpec>& reward_table,
                    int samples_per_condition, int ode_steps, double t_min, Rng& rng, int workers,
                    const SampleFn& sampler) {
    if (samples_per_condition < 1) {
        throw ContractError("evaluate: need at least one sample");
    }
    const SampleFn draw = sampler ? sampler : SampleFn([&](int condition, Rng& r) {
        return flow::ode_sample(spec, theta, condition, ode_steps, r, t_min).x_final();
    });
    const Rng base = rng.split();

    EvalResult result;
    double reward_acc = 0.0;
    double coverage_acc = 0.0;
    for (const auto& cond : conditions) {
        std::vector<Vec> samples(static_cast<size_t>(samples_per_condition));
        parallel_for(samples_per_condition, workers, [&](int i) {
            Rng sr = base.fork(static_cast<uint64_t>(cond.id), static_cast<uint64_t>(i));
            samples[static_cast<size_t>(i)] = draw(cond.id, sr);
        });

        ConditionEval ce;
        ce.condition = cond.id;
        const auto* mix = std::get_if<GaussianMixture>(&cond.target);
        if (mix) {
            ce.mode_coverage.assign(mix->components.size(), 0.0);
            for (const Vec& x : samples) {
                bool any = false;
                for (size_t m = 0; m < mix->components.size(); ++m) {
                    if (mahalanobis_sq(mix->components[m], x) <= 9.0) {
                        ce.mode_coverage[m] += 1.0;
                        any = true;
                    }
                }
                ce.any_mode_coverage += any ? 1.0 : 0.0;
            }
            for (double& c : ce.mode_coverage) {
                c /= samples_per_condition;
            }
            ce.any_mode_coverage /= samples_per_condition;

            rewards::RealismSpec realism{*mix, 1.0};
            double real_acc = 0.0;
            for (const Vec& x : samples) {
                real_acc += rewards::realism_reward(x, realism);
            }
            ce.mean_realism = real_acc / samples_per_condition;
        } else {
            ce.mean_realism = std::numeric_limits<double>::quiet_NaN();
        }

        if (!reward_table.empty()) {
            double acc = 0.0;
            for (const Vec& x : samples) {
                acc += rewards::ensemble_reward(x, cond.id,
                                                reward_table[static_cast<size_t>(cond.id)]);
            }
            ce.mean_reward = acc / samples_per_condition;
        } else {
            ce.mean_reward = std::numeric_limits<double>::quiet_NaN();
        }

        reward_acc += ce.mean_reward;
        coverage_acc += ce.any_mode_coverage;
        result.per_condition.push_back(std::move(ce));
    }
    result.mean_reward = reward_acc / static_cast<double>(conditions.size());
    result.any_mode_coverage = coverage_acc / static_cast<double>(conditions.size());
    return result;
}

GradcheckReport gradient_check_suite(int trials, uint64_t seed) {
    if (trials < 1) {
        throw ContractError("gradient_check_suite: trials must be >= 1");
    }
    GradcheckReport report;
    report.trials = trials;
    Rng rng(Rng::mix(seed ^ 0x6AD0));

    for (int trial = 0; trial < trials; ++trial) {
        net::NetworkSpec spec;
        spec.data_dim = 2;
        switch (trial % 3) {
            case 0: spec.hidden_widths = {}; break;
            case 1: spec.hidden_widths = {4}; break;
            default: spec.hidden_widths = {5, 3}; break;
        }
        spec.time_embed_dim = 2 * static_cast<int>(rng.below(3));
        spec.condition_count = 2;
        spec.condition_embed_dim = static_cast<int>(rng.below(3));
        net::ParamVector theta = net::init_params(spec, rng.next_u64());
        for (double& v : theta) {
            v += 0.05 * rng.normal();
        }

        const int family = trial % 4;
        double err = 0.0;
        if (family == 0) {
            std::vector<flow::BatchItem> batch;
            for (int i = 0; i < 3; ++i) {
                batch.push_back({rng.normal_vec(2), static_cast<int>(rng.below(2))});
            }
            flow::TimestepSampler sampler;
            const uint64_t loss_seed = rng.next_u64();
            Rng lr(loss_seed);
            const auto [loss, grad] = flow::fm_loss_and_grad(spec, theta, batch, sampler, lr);
            (void)loss;
            const auto f = [&](const net::ParamVector& p) {
                Rng r(loss_seed);
                return flow::fm_loss_and_grad(spec, p, batch, sampler, r).first;
            };
            err = max_relative_error(grad, finite_difference_grad(f, theta));
            report.fm_error = std::max(report.fm_error, err);
        } else if (family == 1) {
            dpo::DpoConfig cfg;
            cfg.beta_eff = 3.0;
            cfg.reference = net::init_params(spec, rng.next_u64());
            cfg.skip_factor = 0.0;
            std::vector<dpo::PreferencePair> pairs;
            for (int i = 0; i < 2; ++i) {
                pairs.push_back({static_cast<int>(rng.below(2)), rng.normal_vec(2),
                                 rng.normal_vec(2)});
            }
            const uint64_t loss_seed = rng.next_u64();
            Rng lr(loss_seed);
            const auto [loss, grad] = dpo::dpo_loss_and_grad(spec, theta, cfg, pairs, lr);
            (void)loss;
            const auto f = [&](const net::ParamVector& p) {
                Rng r(loss_seed);
                return dpo::dpo_loss_and_grad(spec, p, cfg, pairs, r).first;
            };
            err = max_relative_error(grad, finite_difference_grad(f, theta));
            report.dpo_error = std::max(report.dpo_error, err);
        } else if (family == 2) {
            // trajectories under a slightly different snapshot so ratios != 1
            net::ParamVector theta_old = theta;
            for (double& v : theta_old) {
                v += 0.01 * rng.normal();
            }
            grpo::GrpoConfig cfg;
            cfg.clip_eps = 0.5;
            std::vector<grpo::Group> groups(1);
            groups[0].condition = static_cast<int>(rng.below(2));
            Rng tr = rng.split();
            for (int i = 0; i < 3; ++i) {
                groups[0].trajectories.push_back(
                    sde::sde_rollout(spec, theta_old, groups[0].condition, 3, 0.2, tr));
                groups[0].rewards.push_back(tr.uniform());
            }
            groups[0].advantages = grpo::group_advantages(groups[0].rewards);
            const auto [stats, grad] = grpo::objective_and_grad(spec, theta, theta_old, groups, cfg);
            (void)stats;
            const auto f = [&](const net::ParamVector& p) {
                return grpo::objective_and_grad(spec, p, theta_old, groups, cfg).first.objective;
            };
            err = max_relative_error(grad, finite_difference_grad(f, theta, 1e-6));
            report.grpo_error = std::max(report.grpo_error, err);
        } else {
            Rng tr = rng.split();
            const sde::Trajectory traj =
                sde::sde_rollout(spec, theta, static_cast<int>(rng.below(2)), 4, 0.1, tr);
            const double weight = 0.5 + rng.uniform();
            const auto [loss, grad] = mpo::loss_and_grad(spec, theta, traj, traj.condition, weight);
            (void)loss;
            const auto f = [&](const net::ParamVector& p) {
                return mpo::loss_and_grad(spec, p, traj, traj.condition, weight).first;
            };
            err = max_relative_error(grad, finite_difference_grad(f, theta));
            report.mpo_error = std::max(report.mpo_error, err);
        }
        report.max_rel_error = std::max(report.max_rel_error, err);
    }
    return report;
}

}  // namespace flowalign::runner
