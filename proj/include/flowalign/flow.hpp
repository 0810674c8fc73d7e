#pragma once

#include <span>
#include <utility>
#include <vector>

#include "flowalign/net.hpp"
#include "flowalign/rng.hpp"
#include "flowalign/vecmath.hpp"

namespace flowalign::flow {

// Time convention: t = 1 is pure noise, t = 0 is data. The interpolant is
// x_t = (1-t)*x0 + t*eps with constant target velocity u = eps - x0, so
// sampling integrates from t = 1 down to t_min.
constexpr double kDefaultTMin = 1e-3;

struct FlowSample {
    Vec x0;
    Vec eps;
    double t = 0.0;
    Vec xt;  // (1-t)*x0 + t*eps
    Vec u;   // eps - x0
};

// t in (0, 1]; t = 0 is reserved for the data endpoint and rejected.
FlowSample interpolate(Vec x0, Vec eps, double t);

struct TimestepSampler {
    enum class Kind { LogitNormal, Uniform };
    Kind kind = Kind::LogitNormal;
    double m = 0.0;  // logit-normal location
    double s = 1.0;  // logit-normal scale
    double t_min = kDefaultTMin;
};

void validate(const TimestepSampler& sampler);

// Uniform draws land in [t_min, 1); logit-normal returns sigmoid(m + s*z),
// z ~ N(0,1), clamped to [t_min, 1 - 1e-6].
double sample_timestep(const TimestepSampler& sampler, Rng& rng);

struct BatchItem {
    Vec x0;
    int condition = 0;
};

struct DrawnSample {
    FlowSample fs;
    int condition = 0;
};

// mean over samples of |v(xt, t, c) - u|^2 and its exact theta-gradient,
// on pre-drawn interpolants. Deterministic core behind fm_loss_and_grad.
std::pair<double, net::ParamVector> fm_loss_on_samples(const net::NetworkSpec& spec,
                                                       const net::ParamVector& theta,
                                                       std::span<const DrawnSample> samples);

// Draws one (t, eps) per batch item from keyed substreams, then delegates to
// fm_loss_on_samples. Accumulation order is fixed by batch position.
std::pair<double, net::ParamVector> fm_loss_and_grad(const net::NetworkSpec& spec,
                                                     const net::ParamVector& theta,
                                                     std::span<const BatchItem> batch,
                                                     const TimestepSampler& sampler, Rng& rng);

struct OdePath {
    std::vector<double> times;   // steps+1 values from 1 down to t_min
    std::vector<Vec> states;     // matching states; front() is the initial noise
    const Vec& x_final() const { return states.back(); }
};

// Euler integration x <- x + v(x, t, c)*dt from t = 1 down to t_min with
// dt = -(1 - t_min)/steps. Deterministic given eps.
OdePath ode_sample_from(const net::NetworkSpec& spec, const net::ParamVector& theta, int condition,
                        int steps, Vec eps, double t_min = kDefaultTMin);

// Draws eps ~ N(0, I) then integrates.
OdePath ode_sample(const net::NetworkSpec& spec, const net::ParamVector& theta, int condition,
                   int steps, Rng& rng, double t_min = kDefaultTMin);

}  // namespace flowalign::flow
