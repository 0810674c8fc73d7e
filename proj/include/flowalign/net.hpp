#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "flowalign/vecmath.hpp"

namespace flowalign::net {

// Dense tanh feedforward velocity field v(x, t, c). The input is the data
// point concatenated with a sinusoidal embedding of t and a learned embedding
// row for the condition id. Hidden layers use tanh, the output layer is
// linear; hidden_widths may be empty (single linear map).
struct NetworkSpec {
    int data_dim = 2;
    std::vector<int> hidden_widths;
    int time_embed_dim = 8;  // even; emits time_embed_dim/2 (sin, cos) pairs
    int condition_count = 1;
    int condition_embed_dim = 0;

    int input_dim() const { return data_dim + time_embed_dim + condition_embed_dim; }
    int output_dim() const { return data_dim; }

    bool operator==(const NetworkSpec&) const = default;
};

void validate_spec(const NetworkSpec& spec);

// Flat parameter store. Layout: for each layer in order (hidden layers, then
// the output layer) the weight matrix row-major [out][in] followed by its
// bias [out]; after all layers, the condition-embedding table row-major
// [condition_count][condition_embed_dim].
using ParamVector = std::vector<double>;

long param_count(const NetworkSpec& spec);

// Weights uniform in +/- sqrt(6 / (fan_in + fan_out)), biases zero.
// Embedding rows use the same rule with fan_in 1 per embedding channel.
ParamVector init_params(const NetworkSpec& spec, uint64_t seed);

// time_embed_dim/2 pairs sin(2*pi*f_i*t), cos(2*pi*f_i*t) with f_i = 2^i.
std::vector<double> time_embedding(const NetworkSpec& spec, double t);

struct ForwardCache {
    int condition = 0;
    std::vector<double> input;                 // assembled feature vector
    std::vector<std::vector<double>> hidden;   // post-tanh activations, one per hidden layer
};

// Velocity evaluation. Pure; fills *cache (when given) for backward().
Vec forward(const NetworkSpec& spec, const ParamVector& theta, std::span<const double> x,
            double t, int condition, ForwardCache* cache = nullptr);

// Exact gradient of <upstream_grad, forward(theta, ...)> with respect to theta.
ParamVector backward(const NetworkSpec& spec, const ParamVector& theta, const ForwardCache& cache,
                     std::span<const double> upstream_grad);

struct OptimizerState {
    Vec first_moment;
    Vec second_moment;
    long step_count = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.01;
    double clip_norm = 1.0;  // global-norm clip applied to the gradient; <= 0 disables
};

OptimizerState make_adamw_state(const NetworkSpec& spec, double lr);

// Scales grad in place to max_norm when its global norm exceeds it. Returns
// the pre-clip norm.
double clip_global_norm(std::span<double> grad, double max_norm);

// AdamW with decoupled weight decay: theta is scaled by (1 - lr*wd) before the
// bias-corrected Adam update; the gradient is global-norm clipped before the
// moment updates.
void adamw_step(ParamVector& theta, OptimizerState& state, ParamVector grad);

// Elementwise convex combination. Weights must sum to 1 within 1e-12;
// uniform when omitted.
ParamVector average_params(std::span<const ParamVector> models, std::span<const double> weights = {});

struct Checkpoint {
    NetworkSpec spec;
    ParamVector params;
    long step_count = 0;
};

// JSON object {spec, values, step_count}; doubles round-trip value-exact.
// Written atomically (temp file + rename).
void save_checkpoint(const std::filesystem::path& path, const NetworkSpec& spec,
                     const ParamVector& params, long step_count);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace flowalign::net
