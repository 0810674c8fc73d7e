#include "flowalign/net.hpp"

#include <cmath>
#include <numbers>

#include <json.hpp>

#include "flowalign/errors.hpp"
#include "flowalign/jsonio.hpp"
#include "flowalign/rng.hpp"

namespace flowalign::net {

namespace {

// widths of the full layer stack: input, hidden..., output
std::vector<int> layer_widths(const NetworkSpec& spec) {
    std::vector<int> w;
    w.reserve(spec.hidden_widths.size() + 2);
    w.push_back(spec.input_dim());
    for (int h : spec.hidden_widths) {
        w.push_back(h);
    }
    w.push_back(spec.output_dim());
    return w;
}

long embedding_offset(const NetworkSpec& spec) {
    const auto widths = layer_widths(spec);
    long off = 0;
    for (size_t l = 0; l + 1 < widths.size(); ++l) {
        off += static_cast<long>(widths[l + 1]) * widths[l] + widths[l + 1];
    }
    return off;
}

}  // namespace

void validate_spec(const NetworkSpec& spec) {
    if (spec.data_dim < 1) {
        throw ConfigError("network spec: data_dim must be >= 1");
    }
    for (int h : spec.hidden_widths) {
        if (h < 1) {
            throw ConfigError("network spec: hidden widths must be >= 1");
        }
    }
    if (spec.time_embed_dim < 0 || spec.time_embed_dim % 2 != 0) {
        throw ConfigError("network spec: time_embed_dim must be even and >= 0");
    }
    if (spec.condition_count < 1) {
        throw ConfigError("network spec: condition_count must be >= 1");
    }
    if (spec.condition_embed_dim < 0) {
        throw ConfigError("network spec: condition_embed_dim must be >= 0");
    }
}

long param_count(const NetworkSpec& spec) {
    return embedding_offset(spec) +
           static_cast<long>(spec.condition_count) * spec.condition_embed_dim;
}

ParamVector init_params(const NetworkSpec& spec, uint64_t seed) {
    validate_spec(spec);
    Rng rng(seed);
    ParamVector theta(static_cast<size_t>(param_count(spec)), 0.0);
    const auto widths = layer_widths(spec);
    size_t off = 0;
    for (size_t l = 0; l + 1 < widths.size(); ++l) {
        const int fan_in = widths[l];
        const int fan_out = widths[l + 1];
        const double bound = std::sqrt(6.0 / (fan_in + fan_out));
        for (int i = 0; i < fan_out * fan_in; ++i) {
            theta[off + i] = rng.uniform(-bound, bound);
        }
        off += static_cast<size_t>(fan_out) * fan_in;
        off += static_cast<size_t>(fan_out);  // biases stay zero
    }
    const double emb_bound = std::sqrt(6.0 / (1 + spec.condition_embed_dim));
    for (long i = 0; i < static_cast<long>(spec.condition_count) * spec.condition_embed_dim; ++i) {
        theta[off + i] = rng.uniform(-emb_bound, emb_bound);
    }
    return theta;
}

std::vector<double> time_embedding(const NetworkSpec& spec, double t) {
    std::vector<double> e(static_cast<size_t>(spec.time_embed_dim));
    double freq = 1.0;
    for (int i = 0; i < spec.time_embed_dim / 2; ++i) {
        const double phase = 2.0 * std::numbers::pi * freq * t;
        e[2 * i] = std::sin(phase);
        e[2 * i + 1] = std::cos(phase);
        freq *= 2.0;
    }
    return e;
}

Vec forward(const NetworkSpec& spec, const ParamVector& theta, std::span<const double> x,
            double t, int condition, ForwardCache* cache) {
    if (static_cast<long>(theta.size()) != param_count(spec)) {
        throw ContractError("forward: parameter vector does not match spec");
    }
    if (static_cast<int>(x.size()) != spec.data_dim) {
        throw ContractError("forward: input dimension mismatch");
    }
    if (!all_finite(x) || !std::isfinite(t)) {
        throw NumericError("forward: non-finite input");
    }
    if (!(t > 0.0 && t <= 1.0)) {
        throw DomainError("forward: t must lie in (0, 1]");
    }
    if (condition < 0 || condition >= spec.condition_count) {
        throw ContractError("forward: condition id out of range");
    }

    std::vector<double> input;
    input.reserve(static_cast<size_t>(spec.input_dim()));
    input.insert(input.end(), x.begin(), x.end());
    const auto te = time_embedding(spec, t);
    input.insert(input.end(), te.begin(), te.end());
    const size_t emb_off = static_cast<size_t>(embedding_offset(spec)) +
                           static_cast<size_t>(condition) * spec.condition_embed_dim;
    input.insert(input.end(), theta.begin() + static_cast<long>(emb_off),
                 theta.begin() + static_cast<long>(emb_off) + spec.condition_embed_dim);

    if (cache) {
        cache->condition = condition;
        cache->input = input;
        cache->hidden.clear();
        cache->hidden.reserve(spec.hidden_widths.size());
    }

    const auto widths = layer_widths(spec);
    std::vector<double> act = std::move(input);
    size_t off = 0;
    for (size_t l = 0; l + 1 < widths.size(); ++l) {
        const int n_in = widths[l];
        const int n_out = widths[l + 1];
        std::vector<double> z(static_cast<size_t>(n_out));
        const double* w = theta.data() + off;
        const double* b = theta.data() + off + static_cast<size_t>(n_out) * n_in;
        for (int o = 0; o < n_out; ++o) {
            double acc = b[o];
            const double* row = w + static_cast<size_t>(o) * n_in;
            for (int i = 0; i < n_in; ++i) {
                acc += row[i] * act[static_cast<size_t>(i)];
            }
            z[static_cast<size_t>(o)] = acc;
        }
        off += static_cast<size_t>(n_out) * n_in + static_cast<size_t>(n_out);
        const bool is_output = (l + 2 == widths.size());
        if (!is_output) {
            for (double& v : z) {
                v = std::tanh(v);
            }
            if (cache) {
                cache->hidden.push_back(z);
            }
        }
        act = std::move(z);
    }
    return act;
}

ParamVector backward(const NetworkSpec& spec, const ParamVector& theta, const ForwardCache& cache,
                     std::span<const double> upstream_grad) {
    if (static_cast<long>(theta.size()) != param_count(spec)) {
        throw ContractError("backward: parameter vector does not match spec");
    }
    if (static_cast<int>(cache.input.size()) != spec.input_dim() ||
        cache.hidden.size() != spec.hidden_widths.size()) {
        throw ContractError("backward: cache does not match spec");
    }
    for (size_t l = 0; l < cache.hidden.size(); ++l) {
        if (static_cast<int>(cache.hidden[l].size()) != spec.hidden_widths[l]) {
            throw ContractError("backward: cache layer width mismatch");
        }
    }
    if (static_cast<int>(upstream_grad.size()) != spec.output_dim()) {
        throw ContractError("backward: upstream gradient dimension mismatch");
    }

    const auto widths = layer_widths(spec);
    const size_t n_layers = widths.size() - 1;

    // per-layer parameter offsets
    std::vector<size_t> offs(n_layers);
    size_t off = 0;
    for (size_t l = 0; l < n_layers; ++l) {
        offs[l] = off;
        off += static_cast<size_t>(widths[l + 1]) * widths[l] + static_cast<size_t>(widths[l + 1]);
    }

    ParamVector grad(theta.size(), 0.0);
    std::vector<double> delta(upstream_grad.begin(), upstream_grad.end());

    for (size_t l = n_layers; l-- > 0;) {
        const int n_in = widths[l];
        const int n_out = widths[l + 1];
        const std::vector<double>& below =
            (l == 0) ? cache.input : cache.hidden[l - 1];
        double* gw = grad.data() + offs[l];
        double* gb = gw + static_cast<size_t>(n_out) * n_in;
        const double* w = theta.data() + offs[l];
        for (int o = 0; o < n_out; ++o) {
            const double d = delta[static_cast<size_t>(o)];
            double* grow = gw + static_cast<size_t>(o) * n_in;
            for (int i = 0; i < n_in; ++i) {
                grow[i] += d * below[static_cast<size_t>(i)];
            }
            gb[o] += d;
        }
        std::vector<double> delta_prev(static_cast<size_t>(n_in), 0.0);
        for (int o = 0; o < n_out; ++o) {
            const double d = delta[static_cast<size_t>(o)];
            const double* row = w + static_cast<size_t>(o) * n_in;
            for (int i = 0; i < n_in; ++i) {
                delta_prev[static_cast<size_t>(i)] += row[i] * d;
            }
        }
        if (l > 0) {
            // through the tanh of the hidden layer below
            const auto& a = cache.hidden[l - 1];
            for (int i = 0; i < n_in; ++i) {
                delta_prev[static_cast<size_t>(i)] *= 1.0 - a[static_cast<size_t>(i)] * a[static_cast<size_t>(i)];
            }
        }
        delta = std::move(delta_prev);
    }

    // scatter the input gradient's embedding block into the table row
    if (spec.condition_embed_dim > 0) {
        const size_t emb_off = static_cast<size_t>(embedding_offset(spec)) +
                               static_cast<size_t>(cache.condition) * spec.condition_embed_dim;
        const size_t block = static_cast<size_t>(spec.data_dim + spec.time_embed_dim);
        for (int i = 0; i < spec.condition_embed_dim; ++i) {
            grad[emb_off + static_cast<size_t>(i)] += delta[block + static_cast<size_t>(i)];
        }
    }
    return grad;
}

OptimizerState make_adamw_state(const NetworkSpec& spec, double lr) {
    OptimizerState st;
    st.first_moment.assign(static_cast<size_t>(param_count(spec)), 0.0);
    st.second_moment.assign(static_cast<size_t>(param_count(spec)), 0.0);
    st.lr = lr;
    return st;
}

double clip_global_norm(std::span<double> grad, double max_norm) {
    const double n = nrm2(grad);
    if (max_norm > 0.0 && n > max_norm) {
        scale(grad, max_norm / n);
    }
    return n;
}

void adamw_step(ParamVector& theta, OptimizerState& state, ParamVector grad) {
    if (theta.size() != grad.size() || theta.size() != state.first_moment.size() ||
        theta.size() != state.second_moment.size()) {
        throw ContractError("adamw_step: shape mismatch");
    }
    if (!all_finite(grad)) {
        throw DivergenceError("adamw_step: non-finite gradient");
    }
    clip_global_norm(grad, state.clip_norm);
    state.step_count += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
    const double decay = 1.0 - state.lr * state.weight_decay;
    for (size_t i = 0; i < theta.size(); ++i) {
        theta[i] *= decay;
        const double g = grad[i];
        state.first_moment[i] = state.beta1 * state.first_moment[i] + (1.0 - state.beta1) * g;
        state.second_moment[i] = state.beta2 * state.second_moment[i] + (1.0 - state.beta2) * g * g;
        const double m_hat = state.first_moment[i] / bc1;
        const double v_hat = state.second_moment[i] / bc2;
        theta[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
}

ParamVector average_params(std::span<const ParamVector> models, std::span<const double> weights) {
    if (models.empty()) {
        throw ContractError("average_params: empty model list");
    }
    const size_t n = models.front().size();
    for (const auto& m : models) {
        if (m.size() != n) {
            throw ContractError("average_params: length mismatch");
        }
    }
    std::vector<double> w(weights.begin(), weights.end());
    if (w.empty()) {
        w.assign(models.size(), 1.0 / static_cast<double>(models.size()));
    }
    if (w.size() != models.size()) {
        throw ContractError("average_params: weight count mismatch");
    }
    double total = 0.0;
    for (double v : w) {
        total += v;
    }
    if (std::abs(total - 1.0) > 1e-12) {
        throw ContractError("average_params: weights must sum to 1");
    }
    ParamVector out(n, 0.0);
    for (size_t k = 0; k < models.size(); ++k) {
        axpy(w[k], models[k], out);
    }
    return out;
}

namespace {

nlohmann::json spec_to_json(const NetworkSpec& spec) {
    return nlohmann::json{{"data_dim", spec.data_dim},
                          {"hidden", spec.hidden_widths},
                          {"time_embed_dim", spec.time_embed_dim},
                          {"condition_count", spec.condition_count},
                          {"condition_embed_dim", spec.condition_embed_dim},
                          {"activation", "tanh"}};
}

NetworkSpec spec_from_json(const nlohmann::json& j) {
    NetworkSpec spec;
    spec.data_dim = j.at("data_dim").get<int>();
    spec.hidden_widths = j.at("hidden").get<std::vector<int>>();
    spec.time_embed_dim = j.at("time_embed_dim").get<int>();
    spec.condition_count = j.at("condition_count").get<int>();
    spec.condition_embed_dim = j.at("condition_embed_dim").get<int>();
    if (j.contains("activation") && j.at("activation").get<std::string>() != "tanh") {
        throw ConfigError("checkpoint: unsupported activation");
    }
    validate_spec(spec);
    return spec;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const NetworkSpec& spec,
                     const ParamVector& params, long step_count) {
    if (static_cast<long>(params.size()) != param_count(spec)) {
        throw ContractError("save_checkpoint: parameter vector does not match spec");
    }
    nlohmann::json j{{"spec", spec_to_json(spec)}, {"values", params}, {"step_count", step_count}};
    atomic_write_text(path, j.dump());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const nlohmann::json j = load_json_file(path);
    Checkpoint ck;
    try {
        ck.spec = spec_from_json(j.at("spec"));
        ck.params = j.at("values").get<ParamVector>();
        ck.step_count = j.at("step_count").get<long>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("checkpoint " + path.string() + ": " + e.what());
    }
    if (static_cast<long>(ck.params.size()) != param_count(ck.spec)) {
        throw ConfigError("checkpoint " + path.string() + ": value count does not match spec");
    }
    if (!all_finite(ck.params)) {
        throw ConfigError("checkpoint " + path.string() + ": non-finite values");
    }
    return ck;
}

}  // namespace flowalign::net
