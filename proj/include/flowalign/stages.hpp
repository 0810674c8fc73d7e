#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "flowalign/config.hpp"
#include "flowalign/net.hpp"
#include "flowalign/rng.hpp"

namespace flowalign::runner {

struct StageResult {
    std::filesystem::path checkpoint;  // empty for stages without one
    std::filesystem::path metrics;
    bool ok = true;
    std::string message;  // gradcheck verdict, tokenizer JSON, ...
};

// Runs the configured stage end to end, writing its artifacts under
// config.out_dir. Deterministic for a fixed config and seed. Throws
// DependencyError when an upstream checkpoint is missing and DivergenceError
// (after flushing metrics; the last saved checkpoint stays intact) when a
// loss goes non-finite.
StageResult run_stage(const ExperimentConfig& config);

// ---- evaluation ----

struct ConditionEval {
    int condition = 0;
    std::vector<double> mode_coverage;  // per mixture component (empty for two-moons)
    double any_mode_coverage = 0.0;
    double mean_reward = 0.0;   // NaN when no reward table is configured
    double mean_realism = 0.0;  // NaN for two-moons targets
};

struct EvalResult {
    std::vector<ConditionEval> per_condition;
    double mean_reward = 0.0;
    double any_mode_coverage = 0.0;
};

using SampleFn = std::function<Vec(int condition, Rng& rng)>;

// Coverage counts a sample for a mode when its Mahalanobis distance is at
// most 3. The sampler defaults to the 12-step ODE sampler over theta; tests
// can inject an oracle sampler.
EvalResult evaluate(const net::NetworkSpec& spec, const net::ParamVector& theta,
                    const std::vector<worldgen::ConditionSpec>& conditions,
                    const std::vector<rewards::EnsembleSpec>& reward_table, int samples_per_condition,
                    int ode_steps, double t_min, Rng& rng, int workers = 1,
                    const SampleFn& sampler = {});

// ---- gradient fidelity ----

struct GradcheckReport {
    double max_rel_error = 0.0;
    double fm_error = 0.0;
    double dpo_error = 0.0;
    double grpo_error = 0.0;
    double mpo_error = 0.0;
    int trials = 0;
};

// Random small configurations across the fm, DPO, GRPO-surrogate and MPO
// losses, each checked against central finite differences.
GradcheckReport gradient_check_suite(int trials, uint64_t seed);

}  // namespace flowalign::runner
