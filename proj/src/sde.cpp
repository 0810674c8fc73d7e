#include "flowalign/sde.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <string>

#include "flowalign/errors.hpp"

namespace flowalign::sde {

namespace {

double gaussian_logpdf_isotropic(std::span<const double> x, std::span<const double> mean,
                                 double variance) {
    const double d = static_cast<double>(x.size());
    double quad = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        const double r = x[i] - mean[i];
        quad += r * r;
    }
    return -0.5 * d * std::log(2.0 * std::numbers::pi * variance) - quad / (2.0 * variance);
}

}  // namespace

Vec drift(const net::NetworkSpec& spec, const net::ParamVector& theta, std::span<const double> x,
          double t, int condition, double sigma, double t_min) {
    if (t < t_min) {
        throw DomainError("drift: t below t_min");
    }
    if (sigma < 0.0) {
        throw ContractError("drift: sigma must be >= 0");
    }
    Vec v = net::forward(spec, theta, x, t, condition);
    if (sigma == 0.0) {
        return v;  // skip the score term so the degenerate case is bitwise the ODE field
    }
    const double coef = sigma * sigma / (2.0 * t);
    Vec out(v.size());
    for (size_t i = 0; i < v.size(); ++i) {
        out[i] = v[i] + coef * (x[i] + (1.0 - t) * v[i]);
    }
    return out;
}

StepRecord sde_step_with_noise(const net::NetworkSpec& spec, const net::ParamVector& theta,
                               Vec x, double t, int condition, double sigma, double dt, Vec noise,
                               double t_min) {
    if (noise.size() != x.size()) {
        throw ContractError("sde_step: noise dimension mismatch");
    }
    StepRecord rec;
    rec.t = t;
    rec.sigma = sigma;
    rec.dt = dt;
    rec.drift = drift(spec, theta, x, t, condition, sigma, t_min);
    rec.x_next.resize(x.size());
    if (sigma == 0.0) {
        for (size_t i = 0; i < x.size(); ++i) {
            rec.x_next[i] = x[i] + rec.drift[i] * dt;
        }
        rec.logprob = 0.0;  // Dirac kernel, excluded from ratios by convention
    } else {
        const double scale = sigma * std::sqrt(std::abs(dt));
        Vec mean(x.size());
        for (size_t i = 0; i < x.size(); ++i) {
            mean[i] = x[i] + rec.drift[i] * dt;
            rec.x_next[i] = mean[i] + scale * noise[i];
        }
        rec.logprob = gaussian_logpdf_isotropic(rec.x_next, mean, sigma * sigma * std::abs(dt));
    }
    if (!all_finite(rec.x_next)) {
        throw DivergenceError("sde_step: non-finite state");
    }
    rec.x = std::move(x);
    rec.noise = std::move(noise);
    return rec;
}

StepRecord sde_step(const net::NetworkSpec& spec, const net::ParamVector& theta, Vec x, double t,
                    int condition, double sigma, double dt, Rng& rng, double t_min) {
    Vec noise = rng.normal_vec(x.size());
    return sde_step_with_noise(spec, theta, std::move(x), t, condition, sigma, dt,
                               std::move(noise), t_min);
}

Trajectory sde_rollout(const net::NetworkSpec& spec, const net::ParamVector& theta, int condition,
                       int steps, double sigma, Rng& rng, double t_min) {
    if (steps < 1) {
        throw ContractError("sde_rollout: steps must be >= 1");
    }
    const double dt = -(1.0 - t_min) / steps;
    Trajectory traj;
    traj.condition = condition;
    traj.steps.reserve(static_cast<size_t>(steps));
    Vec x = rng.normal_vec(static_cast<size_t>(spec.data_dim));
    for (int k = 0; k < steps; ++k) {
        const double t = 1.0 + k * dt;
        try {
            traj.steps.push_back(sde_step(spec, theta, std::move(x), t, condition, sigma, dt, rng, t_min));
        } catch (const DivergenceError&) {
            throw DivergenceError("sde_rollout: diverged at step " + std::to_string(k));
        }
        x = traj.steps.back().x_next;
    }
    traj.x_final = std::move(x);
    return traj;
}

double total_logprob(const Trajectory& traj) {
    double s = 0.0;
    for (const StepRecord& rec : traj.steps) {
        s += rec.logprob;
    }
    return s;
}

double step_logprob_under(const net::NetworkSpec& spec, const net::ParamVector& theta,
                          const StepRecord& record, int condition, double t_min) {
    if (record.sigma <= 0.0) {
        throw KernelError("step_logprob_under: sigma = 0 has no density");
    }
    const Vec d = drift(spec, theta, record.x, record.t, condition, record.sigma, t_min);
    Vec mean(d.size());
    for (size_t i = 0; i < d.size(); ++i) {
        mean[i] = record.x[i] + d[i] * record.dt;
    }
    return gaussian_logpdf_isotropic(record.x_next, mean,
                                     record.sigma * record.sigma * std::abs(record.dt));
}

double trajectory_kl(const net::NetworkSpec& spec, const net::ParamVector& theta_old,
                     const net::ParamVector& theta_new, const Trajectory& traj, double t_min) {
    if (traj.steps.empty()) {
        throw ContractError("trajectory_kl: empty trajectory");
    }
    double total = 0.0;
    for (const StepRecord& rec : traj.steps) {
        if (rec.sigma <= 0.0) {
            throw KernelError("trajectory_kl: sigma = 0 step has no kernel");
        }
        const Vec d_old = drift(spec, theta_old, rec.x, rec.t, traj.condition, rec.sigma, t_min);
        const Vec d_new = drift(spec, theta_new, rec.x, rec.t, traj.condition, rec.sigma, t_min);
        double diff_sq = 0.0;
        for (size_t i = 0; i < d_old.size(); ++i) {
            const double m = (d_old[i] - d_new[i]) * rec.dt;
            diff_sq += m * m;
        }
        total += diff_sq / (2.0 * rec.sigma * rec.sigma * std::abs(rec.dt));
    }
    return total / static_cast<double>(traj.steps.size());
}

namespace {

void append_vec(std::string& out, const char* key, const Vec& v) {
    char buf[40];
    out += '"';
    out += key;
    out += "\":[";
    for (size_t i = 0; i < v.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", v[i]);
        if (i > 0) {
            out += ',';
        }
        out += buf;
    }
    out += ']';
}

void append_num(std::string& out, const char* key, double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out += '"';
    out += key;
    out += "\":";
    out += buf;
}

}  // namespace

void dump_trajectory(std::ostream& out, const Trajectory& traj) {
    for (const StepRecord& rec : traj.steps) {
        std::string line = "{";
        append_num(line, "t", rec.t);
        line += ',';
        append_vec(line, "x", rec.x);
        line += ',';
        append_vec(line, "drift", rec.drift);
        line += ',';
        append_num(line, "sigma", rec.sigma);
        line += ',';
        append_num(line, "dt", rec.dt);
        line += ',';
        append_vec(line, "noise", rec.noise);
        line += ',';
        append_vec(line, "x_next", rec.x_next);
        line += ',';
        append_num(line, "logprob", rec.logprob);
        line += "}\n";
        out << line;
    }
}

}  // namespace flowalign::sde
