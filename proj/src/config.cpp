#include "flowalign/config.hpp"

#include <algorithm>
#include <set>

#include "flowalign/errors.hpp"
#include "flowalign/jsonio.hpp"

namespace flowalign::runner {

using nlohmann::json;

const char* to_string(Stage stage) {
    switch (stage) {
        case Stage::pretrain: return "pretrain";
        case Stage::sft: return "sft";
        case Stage::dpo: return "dpo";
        case Stage::grpo: return "grpo";
        case Stage::mpo: return "mpo";
        case Stage::eval: return "eval";
        case Stage::gradcheck: return "gradcheck";
        case Stage::tokenize: return "tokenize";
    }
    return "unknown";
}

Stage stage_from_string(const std::string& name) {
    for (Stage s : {Stage::pretrain, Stage::sft, Stage::dpo, Stage::grpo, Stage::mpo, Stage::eval,
                    Stage::gradcheck, Stage::tokenize}) {
        if (name == to_string(s)) {
            return s;
        }
    }
    throw ConfigError("unknown stage: " + name);
}

Preset preset_from_string(const std::string& name) {
    if (name == "rl-text") {
        return Preset::rl_text;
    }
    if (name == "table1") {
        return Preset::table1;
    }
    throw ConfigError("unknown preset: " + name + " (expected rl-text or table1)");
}

namespace {

void expect_keys(const json& j, const std::string& ctx, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) {
        throw ConfigError(ctx + ": expected an object");
    }
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (std::find_if(allowed.begin(), allowed.end(),
                         [&](const char* a) { return key == a; }) == allowed.end()) {
            throw ConfigError(ctx + ": unknown key '" + key + "'");
        }
    }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) {
        out = j.at(key).get<T>();
    }
}

flow::TimestepSampler parse_sampler(const json& j, const std::string& ctx) {
    expect_keys(j, ctx, {"kind", "m", "s", "t_min"});
    flow::TimestepSampler sampler;
    std::string kind = "logit_normal";
    read(j, "kind", kind);
    if (kind == "uniform") {
        sampler.kind = flow::TimestepSampler::Kind::Uniform;
    } else if (kind == "logit_normal") {
        sampler.kind = flow::TimestepSampler::Kind::LogitNormal;
    } else {
        throw ConfigError(ctx + ": unknown sampler kind '" + kind + "'");
    }
    read(j, "m", sampler.m);
    read(j, "s", sampler.s);
    read(j, "t_min", sampler.t_min);
    flow::validate(sampler);
    return sampler;
}

GaussianMixture parse_mixture(const json& j, const std::string& ctx) {
    expect_keys(j, ctx, {"means", "covs", "weights"});
    GaussianMixture mix;
    const auto means = j.at("means").get<std::vector<Vec>>();
    mix.weights = j.at("weights").get<std::vector<double>>();
    std::vector<std::vector<std::vector<double>>> covs;
    read(j, "covs", covs);
    for (size_t k = 0; k < means.size(); ++k) {
        GaussianMixture::Component comp;
        comp.mean = means[k];
        const int d = static_cast<int>(comp.mean.size());
        if (k < covs.size()) {
            for (const auto& row : covs[k]) {
                comp.cov.insert(comp.cov.end(), row.begin(), row.end());
            }
        } else {
            comp.cov.assign(static_cast<size_t>(d) * d, 0.0);
            for (int i = 0; i < d; ++i) {
                comp.cov[static_cast<size_t>(i) * d + i] = 1.0;
            }
        }
        mix.components.push_back(std::move(comp));
    }
    validate(mix);
    return mix;
}

std::vector<worldgen::ConditionSpec> parse_task(const json& j) {
    expect_keys(j, "task", {"conditions"});
    std::vector<worldgen::ConditionSpec> conditions;
    const json& arr = j.at("conditions");
    if (!arr.is_array() || arr.empty()) {
        throw ConfigError("task.conditions: expected a non-empty array");
    }
    for (const json& cj : arr) {
        expect_keys(cj, "task.conditions[]", {"id", "category", "mixture", "two_moons"});
        worldgen::ConditionSpec spec;
        spec.id = cj.at("id").get<int>();
        read(cj, "category", spec.category);
        if (cj.contains("mixture") == cj.contains("two_moons")) {
            throw ConfigError("condition " + std::to_string(spec.id) +
                              ": exactly one of 'mixture' or 'two_moons' is required");
        }
        if (cj.contains("mixture")) {
            spec.target = parse_mixture(cj.at("mixture"), "condition mixture");
        } else {
            const json& mj = cj.at("two_moons");
            expect_keys(mj, "two_moons", {"radius", "noise"});
            worldgen::TwoMoons moons;
            read(mj, "radius", moons.radius);
            read(mj, "noise", moons.noise);
            spec.target = moons;
        }
        worldgen::validate(spec);
        conditions.push_back(std::move(spec));
    }
    std::set<int> ids;
    for (const auto& c : conditions) {
        ids.insert(c.id);
    }
    if (static_cast<int>(ids.size()) != static_cast<int>(conditions.size()) ||
        *ids.begin() != 0 || *ids.rbegin() != static_cast<int>(conditions.size()) - 1) {
        throw ConfigError("task.conditions: ids must be contiguous from 0");
    }
    std::sort(conditions.begin(), conditions.end(),
              [](const auto& a, const auto& b) { return a.id < b.id; });
    return conditions;
}

net::NetworkSpec parse_network(const json& j, int condition_count) {
    expect_keys(j, "network", {"hidden", "time_embed_dim", "condition_embed_dim"});
    net::NetworkSpec spec;
    spec.data_dim = 2;
    spec.hidden_widths = {64, 64};
    spec.time_embed_dim = 8;
    spec.condition_embed_dim = 4;
    read(j, "hidden", spec.hidden_widths);
    read(j, "time_embed_dim", spec.time_embed_dim);
    read(j, "condition_embed_dim", spec.condition_embed_dim);
    spec.condition_count = condition_count;
    net::validate_spec(spec);
    return spec;
}

std::vector<rewards::EnsembleSpec> parse_rewards(
    const json& j, const std::vector<worldgen::ConditionSpec>& conditions) {
    expect_keys(j, "rewards", {"members"});
    const json& arr = j.at("members");
    if (!arr.is_array() || arr.empty()) {
        throw ConfigError("rewards.members: expected a non-empty array");
    }
    std::vector<rewards::EnsembleSpec> table(conditions.size());
    for (const json& mj : arr) {
        expect_keys(mj, "rewards.members[]",
                    {"kind", "weight", "normal", "offset", "temperature", "target", "scale",
                     "bandwidth"});
        const std::string kind = mj.at("kind").get<std::string>();
        const double weight = mj.at("weight").get<double>();
        for (size_t c = 0; c < conditions.size(); ++c) {
            rewards::RewardSpec spec;
            if (kind == "region") {
                rewards::RegionSpec region;
                region.normal = mj.at("normal").get<Vec>();
                read(mj, "offset", region.offset);
                read(mj, "temperature", region.temperature);
                if (!(region.temperature > 0.0)) {
                    throw ConfigError("region reward: temperature must be positive");
                }
                spec = region;
            } else if (kind == "mode_proximity") {
                rewards::ModeProximitySpec prox;
                prox.target = mj.at("target").get<Vec>();
                read(mj, "scale", prox.scale);
                if (!(prox.scale > 0.0)) {
                    throw ConfigError("mode_proximity reward: scale must be positive");
                }
                spec = prox;
            } else if (kind == "realism") {
                const auto* mix = std::get_if<GaussianMixture>(&conditions[c].target);
                if (!mix) {
                    throw ConfigError(
                        "realism reward requires a mixture target (condition " +
                        std::to_string(conditions[c].id) + " uses two_moons)");
                }
                rewards::RealismSpec realism;
                realism.mixture = *mix;
                read(mj, "bandwidth", realism.bandwidth);
                spec = realism;
            } else {
                throw ConfigError("rewards: unknown kind '" + kind + "'");
            }
            table[c].members.push_back(std::move(spec));
            table[c].weights.push_back(weight);
        }
    }
    for (auto& ensemble : table) {
        rewards::validate(ensemble);
    }
    return table;
}

void apply_preset(ExperimentConfig& config, Preset preset) {
    if (preset == Preset::rl_text) {
        config.dpo.lr = 5e-6;
        config.dpo.batch = 64;
        config.grpo.lr = 5e-6;
        config.mpo.lr = 5e-6;
    } else {
        config.dpo.lr = 1e-5;
        config.dpo.batch = 64;
        config.dpo.steps = 4000;
        config.grpo.lr = 1e-5;
        config.grpo.iterations = 300;
        config.grpo.group_size = 32;
        config.mpo.lr = 1e-5;
    }
}

}  // namespace

ExperimentConfig parse_config(const json& doc, Preset preset, std::optional<Stage> stage_override) {
    expect_keys(doc, "config",
                {"stage", "seed", "out_dir", "workers", "t_min", "task", "network", "rewards",
                 "optimizer", "pretrain", "sft", "dpo", "grpo", "mpo", "eval", "gradcheck",
                 "tokenize"});
    ExperimentConfig config;
    apply_preset(config, preset);

    if (doc.contains("stage")) {
        config.stage = stage_from_string(doc.at("stage").get<std::string>());
        if (stage_override && *stage_override != config.stage) {
            throw ConfigError(std::string("config stage '") + to_string(config.stage) +
                              "' does not match the requested stage '" +
                              to_string(*stage_override) + "'");
        }
    } else if (stage_override) {
        config.stage = *stage_override;
    } else {
        throw ConfigError("config: missing 'stage'");
    }

    read(doc, "seed", config.seed);
    if (doc.contains("out_dir")) {
        config.out_dir = doc.at("out_dir").get<std::string>();
    }
    read(doc, "workers", config.workers);
    if (config.workers < 1) {
        throw ConfigError("config: workers must be >= 1");
    }
    read(doc, "t_min", config.t_min);
    if (!(config.t_min > 0.0 && config.t_min <= 0.1)) {
        throw ConfigError("config: t_min must lie in (0, 0.1]");
    }

    const bool needs_task = config.stage != Stage::gradcheck && config.stage != Stage::tokenize;
    if (doc.contains("task")) {
        config.conditions = parse_task(doc.at("task"));
    } else if (needs_task) {
        throw ConfigError("config: missing 'task'");
    }
    const int condition_count = std::max<int>(1, static_cast<int>(config.conditions.size()));
    config.network = parse_network(doc.contains("network") ? doc.at("network") : json::object(),
                                   condition_count);
    if (doc.contains("rewards")) {
        if (config.conditions.empty()) {
            throw ConfigError("config: rewards given without a task");
        }
        config.reward_table = parse_rewards(doc.at("rewards"), config.conditions);
    }

    if (doc.contains("optimizer")) {
        const json& oj = doc.at("optimizer");
        expect_keys(oj, "optimizer", {"beta1", "beta2", "eps", "weight_decay", "clip_norm"});
        read(oj, "beta1", config.optimizer.beta1);
        read(oj, "beta2", config.optimizer.beta2);
        read(oj, "eps", config.optimizer.eps);
        read(oj, "weight_decay", config.optimizer.weight_decay);
        read(oj, "clip_norm", config.optimizer.clip_norm);
    }

    if (doc.contains("pretrain")) {
        const json& pj = doc.at("pretrain");
        expect_keys(pj, "pretrain", {"steps", "batch", "lr", "sampler", "log_every"});
        read(pj, "steps", config.pretrain.steps);
        read(pj, "batch", config.pretrain.batch);
        read(pj, "lr", config.pretrain.lr);
        read(pj, "log_every", config.pretrain.log_every);
        if (pj.contains("sampler")) {
            config.pretrain.sampler = parse_sampler(pj.at("sampler"), "pretrain.sampler");
        }
    }
    config.pretrain.sampler.t_min = config.t_min;

    if (doc.contains("sft")) {
        const json& sj = doc.at("sft");
        expect_keys(sj, "sft",
                    {"steps", "batch", "lr", "curation_threshold", "pool_per_condition",
                     "log_every", "checkpoint", "init_checkpoints", "init_weights"});
        read(sj, "steps", config.sft.steps);
        read(sj, "batch", config.sft.batch);
        read(sj, "lr", config.sft.lr);
        read(sj, "curation_threshold", config.sft.curation_threshold);
        read(sj, "pool_per_condition", config.sft.pool_per_condition);
        read(sj, "log_every", config.sft.log_every);
        read(sj, "checkpoint", config.sft.checkpoint);
        read(sj, "init_checkpoints", config.sft.init_checkpoints);
        read(sj, "init_weights", config.sft.init_weights);
    }

    if (doc.contains("dpo")) {
        const json& dj = doc.at("dpo");
        expect_keys(dj, "dpo",
                    {"steps", "batch", "lr", "beta_eff", "candidates_per_condition", "rounds",
                     "sample_steps", "skip_factor", "kl_weight", "t_sampler", "log_every",
                     "checkpoint", "pairs_file"});
        read(dj, "steps", config.dpo.steps);
        read(dj, "batch", config.dpo.batch);
        read(dj, "lr", config.dpo.lr);
        read(dj, "beta_eff", config.dpo.beta_eff);
        read(dj, "candidates_per_condition", config.dpo.candidates_per_condition);
        read(dj, "rounds", config.dpo.rounds);
        read(dj, "sample_steps", config.dpo.sample_steps);
        read(dj, "skip_factor", config.dpo.skip_factor);
        read(dj, "kl_weight", config.dpo.kl_weight);
        read(dj, "log_every", config.dpo.log_every);
        read(dj, "checkpoint", config.dpo.checkpoint);
        read(dj, "pairs_file", config.dpo.pairs_file);
        if (dj.contains("t_sampler")) {
            config.dpo.t_sampler = parse_sampler(dj.at("t_sampler"), "dpo.t_sampler");
        }
        if (config.dpo.kl_weight != 0.0) {
            throw ConfigError(
                "dpo.kl_weight: KL-constrained DPO is not implemented; the field must stay 0");
        }
    }
    config.dpo.t_sampler.t_min = config.t_min;

    if (doc.contains("grpo")) {
        const json& gj = doc.at("grpo");
        expect_keys(gj, "grpo",
                    {"iterations", "group_size", "clip_eps", "inner_epochs", "sampler_steps",
                     "sigma0", "sigma_floor", "lr", "checkpoint"});
        read(gj, "iterations", config.grpo.iterations);
        read(gj, "group_size", config.grpo.group_size);
        read(gj, "clip_eps", config.grpo.clip_eps);
        read(gj, "inner_epochs", config.grpo.inner_epochs);
        read(gj, "sampler_steps", config.grpo.sampler_steps);
        read(gj, "sigma0", config.grpo.sigma0);
        read(gj, "sigma_floor", config.grpo.sigma_floor);
        read(gj, "lr", config.grpo.lr);
        read(gj, "checkpoint", config.grpo.checkpoint);
    }

    if (doc.contains("mpo")) {
        const json& mj = doc.at("mpo");
        expect_keys(mj, "mpo",
                    {"iterations", "sampler_steps", "sigma0", "sigma_floor", "gamma", "adv_clip",
                     "lambda", "eta", "alpha", "obs_var", "init_mu", "init_var", "lr",
                     "checkpoint"});
        read(mj, "iterations", config.mpo.iterations);
        read(mj, "sampler_steps", config.mpo.sampler_steps);
        read(mj, "sigma0", config.mpo.sigma0);
        read(mj, "sigma_floor", config.mpo.sigma_floor);
        read(mj, "gamma", config.mpo.gamma);
        read(mj, "adv_clip", config.mpo.adv_clip);
        read(mj, "lambda", config.mpo.lambda);
        read(mj, "eta", config.mpo.eta);
        read(mj, "alpha", config.mpo.alpha);
        read(mj, "obs_var", config.mpo.obs_var);
        read(mj, "init_mu", config.mpo.init_mu);
        read(mj, "init_var", config.mpo.init_var);
        read(mj, "lr", config.mpo.lr);
        read(mj, "checkpoint", config.mpo.checkpoint);
    }

    if (doc.contains("eval")) {
        const json& ej = doc.at("eval");
        expect_keys(ej, "eval", {"samples_per_condition", "ode_steps", "checkpoint"});
        read(ej, "samples_per_condition", config.eval.samples_per_condition);
        read(ej, "ode_steps", config.eval.ode_steps);
        read(ej, "checkpoint", config.eval.checkpoint);
    }

    if (doc.contains("gradcheck")) {
        const json& gj = doc.at("gradcheck");
        expect_keys(gj, "gradcheck", {"trials", "tolerance"});
        read(gj, "trials", config.gradcheck.trials);
        read(gj, "tolerance", config.gradcheck.tolerance);
    }

    if (doc.contains("tokenize")) {
        const json& tj = doc.at("tokenize");
        expect_keys(tj, "tokenize", {"text"});
        read(tj, "text", config.tokenize.text);
    }

    return config;
}

ExperimentConfig load_config_file(const std::filesystem::path& path, Preset preset,
                                  std::optional<Stage> stage_override) {
    return parse_config(load_json_file(path), preset, stage_override);
}

rewards::RewardFn make_reward_fn(const ExperimentConfig& config) {
    if (config.reward_table.empty()) {
        throw ConfigError("this stage needs a 'rewards' section");
    }
    const auto table = config.reward_table;  // owned copy keeps the fn self-contained
    return [table](std::span<const double> x, int condition) {
        if (condition < 0 || condition >= static_cast<int>(table.size())) {
            throw ContractError("reward: condition id out of range");
        }
        return rewards::ensemble_reward(x, condition, table[static_cast<size_t>(condition)]);
    };
}

}  // namespace flowalign::runner
