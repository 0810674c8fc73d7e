#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "flowalign/flow.hpp"
#include "flowalign/net.hpp"
#include "flowalign/rewards.hpp"
#include "flowalign/worldgen.hpp"

namespace flowalign::runner {

enum class Stage { pretrain, sft, dpo, grpo, mpo, eval, gradcheck, tokenize };

const char* to_string(Stage stage);
Stage stage_from_string(const std::string& name);

// Hyperparameter presets for the RL stages. "rl-text" follows the narrative
// defaults (lr 5e-6, batch 64); "table1" follows the training-recipe table
// (lr 1e-5, DPO 4k steps, GRPO 300 iterations with 32 rollouts per group).
enum class Preset { rl_text, table1 };

Preset preset_from_string(const std::string& name);

struct OptimizerConfig {
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.01;
    double clip_norm = 1.0;
};

struct PretrainConfig {
    long steps = 20000;
    int batch = 128;
    double lr = 1e-3;
    flow::TimestepSampler sampler;  // logit-normal by default
    long log_every = 100;
};

struct SftConfig {
    long steps = 5000;
    int batch = 128;
    double lr = 5e-4;
    double curation_threshold = 0.8;  // keep samples with ensemble reward >= this
    int pool_per_condition = 4096;
    long log_every = 100;
    std::string checkpoint;                        // single upstream checkpoint
    std::vector<std::string> init_checkpoints;     // optional: averaged instead
    std::vector<double> init_weights;              // optional averaging weights
};

struct DpoStageConfig {
    long steps = 2000;
    int batch = 64;
    double lr = 5e-6;
    double beta_eff = 100.0;
    int candidates_per_condition = 6;
    int rounds = 1;
    int sample_steps = 12;  // ODE steps for candidate snapshots
    double skip_factor = 10.0;
    double kl_weight = 0.0;  // accepted for forward compatibility; must stay 0
    flow::TimestepSampler t_sampler{flow::TimestepSampler::Kind::Uniform};
    long log_every = 100;
    std::string checkpoint;
    std::string pairs_file;  // optional dump of the constructed pairs
};

struct GrpoStageConfig {
    long iterations = 300;
    int group_size = 8;
    double clip_eps = 0.2;
    int inner_epochs = 1;
    int sampler_steps = 12;
    double sigma0 = 0.1;
    double sigma_floor = 1e-4;
    double lr = 5e-6;
    std::string checkpoint;
};

struct MpoStageConfig {
    long iterations = 2400;
    int sampler_steps = 12;
    double sigma0 = 0.1;
    double sigma_floor = 1e-4;
    double gamma = 0.5;
    double adv_clip = 3.0;
    double lambda = 0.99;
    double eta = 1.0;
    double alpha = 1.0;
    double obs_var = 0.25;
    double init_mu = 0.5;
    double init_var = 1.0;
    double lr = 5e-6;
    std::string checkpoint;
};

struct EvalConfig {
    int samples_per_condition = 1000;
    int ode_steps = 12;
    std::string checkpoint;
};

struct GradcheckConfig {
    int trials = 20;
    double tolerance = 1e-5;
};

struct TokenizeConfig {
    std::string text;
};

struct ExperimentConfig {
    Stage stage = Stage::pretrain;
    uint64_t seed = 0;
    std::filesystem::path out_dir;
    int workers = 1;
    double t_min = flow::kDefaultTMin;

    std::vector<worldgen::ConditionSpec> conditions;
    net::NetworkSpec network;
    // one ensemble per condition; realism members bind each condition's own
    // target mixture
    std::vector<rewards::EnsembleSpec> reward_table;

    OptimizerConfig optimizer;
    PretrainConfig pretrain;
    SftConfig sft;
    DpoStageConfig dpo;
    GrpoStageConfig grpo;
    MpoStageConfig mpo;
    EvalConfig eval;
    GradcheckConfig gradcheck;
    TokenizeConfig tokenize;
};

// Parses and validates a config document. Unknown keys are rejected at every
// level. `stage_override` comes from the CLI subcommand; when the document
// also names a stage the two must agree.
ExperimentConfig parse_config(const nlohmann::json& doc, Preset preset,
                              std::optional<Stage> stage_override = {});

ExperimentConfig load_config_file(const std::filesystem::path& path, Preset preset,
                                  std::optional<Stage> stage_override = {});

// Bound per-condition reward model over the config's reward table.
rewards::RewardFn make_reward_fn(const ExperimentConfig& config);

}  // namespace flowalign::runner
