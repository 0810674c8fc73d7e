#include "flowalign/flow.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "flowalign/errors.hpp"

namespace flowalign::flow {

FlowSample interpolate(Vec x0, Vec eps, double t) {
    if (x0.size() != eps.size()) {
        throw ContractError("interpolate: dimension mismatch");
    }
    if (!all_finite(x0) || !all_finite(eps) || !std::isfinite(t)) {
        throw NumericError("interpolate: non-finite input");
    }
    if (!(t > 0.0 && t <= 1.0)) {
        throw DomainError("interpolate: t must lie in (0, 1]");
    }
    FlowSample s;
    s.t = t;
    s.xt.resize(x0.size());
    s.u.resize(x0.size());
    for (size_t i = 0; i < x0.size(); ++i) {
        s.xt[i] = (1.0 - t) * x0[i] + t * eps[i];
        s.u[i] = eps[i] - x0[i];
    }
    s.x0 = std::move(x0);
    s.eps = std::move(eps);
    return s;
}

void validate(const TimestepSampler& sampler) {
    if (!(sampler.t_min > 0.0 && sampler.t_min <= 0.1)) {
        throw ConfigError("timestep sampler: t_min must lie in (0, 0.1]");
    }
    if (sampler.kind == TimestepSampler::Kind::LogitNormal && !(sampler.s > 0.0)) {
        throw ConfigError("timestep sampler: logit-normal scale must be positive");
    }
}

double sample_timestep(const TimestepSampler& sampler, Rng& rng) {
    switch (sampler.kind) {
        case TimestepSampler::Kind::Uniform:
            return rng.uniform(sampler.t_min, 1.0);
        case TimestepSampler::Kind::LogitNormal: {
            const double z = sampler.m + sampler.s * rng.normal();
            const double t = stable_sigmoid(z);
            return std::clamp(t, sampler.t_min, 1.0 - 1e-6);
        }
    }
    throw ContractError("sample_timestep: unknown sampler kind");
}

std::pair<double, net::ParamVector> fm_loss_on_samples(const net::NetworkSpec& spec,
                                                       const net::ParamVector& theta,
                                                       std::span<const DrawnSample> samples) {
    if (samples.empty()) {
        throw ContractError("fm_loss_on_samples: empty batch");
    }
    const double inv_n = 1.0 / static_cast<double>(samples.size());
    double loss = 0.0;
    net::ParamVector grad(theta.size(), 0.0);
    net::ForwardCache cache;
    for (const DrawnSample& s : samples) {
        const Vec v = net::forward(spec, theta, s.fs.xt, s.fs.t, s.condition, &cache);
        Vec residual(v.size());
        for (size_t i = 0; i < v.size(); ++i) {
            residual[i] = v[i] - s.fs.u[i];
        }
        loss += sum_sq(residual) * inv_n;
        for (double& r : residual) {
            r *= 2.0 * inv_n;
        }
        const net::ParamVector g = net::backward(spec, theta, cache, residual);
        axpy(1.0, g, grad);
    }
    return {loss, std::move(grad)};
}

std::pair<double, net::ParamVector> fm_loss_and_grad(const net::NetworkSpec& spec,
                                                     const net::ParamVector& theta,
                                                     std::span<const BatchItem> batch,
                                                     const TimestepSampler& sampler, Rng& rng) {
    if (batch.empty()) {
        throw ContractError("fm_loss_and_grad: empty batch");
    }
    Rng base = rng.split();
    std::vector<DrawnSample> samples;
    samples.reserve(batch.size());
    for (size_t k = 0; k < batch.size(); ++k) {
        Rng member = base.fork(k);
        const double t = sample_timestep(sampler, member);
        Vec eps = member.normal_vec(batch[k].x0.size());
        samples.push_back({interpolate(batch[k].x0, std::move(eps), t), batch[k].condition});
    }
    return fm_loss_on_samples(spec, theta, samples);
}

OdePath ode_sample_from(const net::NetworkSpec& spec, const net::ParamVector& theta, int condition,
                        int steps, Vec eps, double t_min) {
    if (steps < 1) {
        throw ContractError("ode_sample: steps must be >= 1");
    }
    if (!(t_min > 0.0 && t_min < 1.0)) {
        throw ConfigError("ode_sample: t_min must lie in (0, 1)");
    }
    const double dt = -(1.0 - t_min) / steps;
    OdePath path;
    path.times.reserve(static_cast<size_t>(steps) + 1);
    path.states.reserve(static_cast<size_t>(steps) + 1);
    path.times.push_back(1.0);
    path.states.push_back(std::move(eps));
    for (int k = 0; k < steps; ++k) {
        const double t = 1.0 + k * dt;
        const Vec& x = path.states.back();
        const Vec v = net::forward(spec, theta, x, t, condition);
        Vec next(x.size());
        for (size_t i = 0; i < x.size(); ++i) {
            next[i] = x[i] + v[i] * dt;
        }
        if (!all_finite(next)) {
            throw DivergenceError("ode_sample: non-finite state at step " + std::to_string(k));
        }
        path.times.push_back(k + 1 == steps ? t_min : 1.0 + (k + 1) * dt);
        path.states.push_back(std::move(next));
    }
    return path;
}

OdePath ode_sample(const net::NetworkSpec& spec, const net::ParamVector& theta, int condition,
                   int steps, Rng& rng, double t_min) {
    return ode_sample_from(spec, theta, condition, steps,
                           rng.normal_vec(static_cast<size_t>(spec.data_dim)), t_min);
}

}  // namespace flowalign::flow
