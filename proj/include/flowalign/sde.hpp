#pragma once

#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "flowalign/flow.hpp"
#include "flowalign/net.hpp"
#include "flowalign/rng.hpp"

namespace flowalign::sde {

// One Euler-Maruyama step. Exact relations:
//   x_next  = x + drift*dt + sigma*sqrt(|dt|)*noise
//   logprob = Gaussian log-density of x_next under mean x + drift*dt with
//             per-coordinate variance sigma^2*|dt|   (0 by convention when sigma = 0)
struct StepRecord {
    double t = 0.0;
    Vec x;
    Vec drift;
    double sigma = 0.0;
    double dt = 0.0;  // negative: integration runs from t = 1 down to t_min
    Vec noise;
    Vec x_next;
    double logprob = 0.0;
};

struct Trajectory {
    int condition = 0;
    std::vector<StepRecord> steps;
    Vec x_final;
    std::optional<double> reward;
};

// Stochastic reformulation of the flow ODE:
//   drift = v + sigma^2/(2t) * (x + (1-t)*v),   v = forward(theta, x, t, c).
// With sigma = 0 the score term is skipped entirely so the result is bitwise
// the plain velocity.
Vec drift(const net::NetworkSpec& spec, const net::ParamVector& theta, std::span<const double> x,
          double t, int condition, double sigma, double t_min = flow::kDefaultTMin);

// Deterministic step core with an explicit noise draw.
StepRecord sde_step_with_noise(const net::NetworkSpec& spec, const net::ParamVector& theta,
                               Vec x, double t, int condition, double sigma, double dt, Vec noise,
                               double t_min = flow::kDefaultTMin);

StepRecord sde_step(const net::NetworkSpec& spec, const net::ParamVector& theta, Vec x, double t,
                    int condition, double sigma, double dt, Rng& rng,
                    double t_min = flow::kDefaultTMin);

// Full rollout from x ~ N(0, I) at t = 1 down to t_min. sigma is constant
// within a trajectory (the training schedule supplies the per-iteration value).
Trajectory sde_rollout(const net::NetworkSpec& spec, const net::ParamVector& theta, int condition,
                       int steps, double sigma, Rng& rng, double t_min = flow::kDefaultTMin);

double total_logprob(const Trajectory& traj);

// Log-density of record.x_next under the transition kernel induced by theta
// at (record.x, record.t) with the record's sigma and dt.
double step_logprob_under(const net::NetworkSpec& spec, const net::ParamVector& theta,
                          const StepRecord& record, int condition,
                          double t_min = flow::kDefaultTMin);

// KL between the per-step Gaussian kernels of two policies on the stored
// states: mean over steps of |(drift_old - drift_new)*dt|^2 / (2*sigma^2*|dt|).
// Depends only on the stored states, not on which noise was drawn.
double trajectory_kl(const net::NetworkSpec& spec, const net::ParamVector& theta_old,
                     const net::ParamVector& theta_new, const Trajectory& traj,
                     double t_min = flow::kDefaultTMin);

// Debug dump: one StepRecord JSON object per line, full double precision.
void dump_trajectory(std::ostream& out, const Trajectory& traj);

// Linear anneal of the diffusion coefficient from g0 toward 0 over `total`
// iterations, floored so log-probabilities stay defined.
struct SigmaSchedule {
    double g0 = 0.1;
    double floor = 1e-4;
    long total = 1;

    double at(long iteration) const {
        const double frac = total > 0 ? static_cast<double>(iteration) / static_cast<double>(total) : 1.0;
        const double g = g0 * (1.0 - frac);
        return g > floor ? g : floor;
    }
};

}  // namespace flowalign::sde
