#pragma once

#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "flowalign/flow.hpp"
#include "flowalign/net.hpp"
#include "flowalign/rng.hpp"

namespace flowalign::dpo {

struct ScoredCandidate {
    int condition = 0;
    Vec x0;
    int score = 3;  // 1..5
};

struct PreferencePair {
    int condition = 0;
    Vec winner_x0;
    Vec loser_x0;
};

// Cartesian product of high-quality (4-5) against low-quality (1-2)
// candidates within each condition; neutral (3) candidates are dropped.
// Pair order follows candidate encounter order, so the result is
// deterministic for a given input.
std::vector<PreferencePair> build_pairs(std::span<const ScoredCandidate> candidates);

struct DpoConfig {
    double beta_eff = 100.0;  // absorbs beta*T*omega(lambda_t)
    flow::TimestepSampler t_sampler{flow::TimestepSampler::Kind::Uniform};
    net::ParamVector reference;  // frozen for the whole run
    // A pair whose gradient norm exceeds skip_factor * batch median is
    // dropped from the batch mean; <= 0 disables the filter.
    double skip_factor = 10.0;
};

// -log sigmoid(logit), stable for large |logit|
double pair_loss_from_logit(double logit);

// One shared timestep per pair; independent noises for winner and loser.
struct PairDraw {
    double t = 0.5;
    Vec eps_winner;
    Vec eps_loser;
};

struct PairEval {
    double logit = 0.0;  // -beta_eff * (delta_w - delta_l)
    double loss = 0.0;
    net::ParamVector grad;
};

// Deterministic core: evaluates one pair on explicit draws. delta_w is the
// policy-vs-reference winner residual gap |u_w - v_theta|^2 - |u_w - v_ref|^2
// and likewise for the loser; the reference is detached from the gradient.
PairEval eval_pair(const net::NetworkSpec& spec, const net::ParamVector& theta,
                   const DpoConfig& cfg, const PreferencePair& pair, const PairDraw& draw);

// Batch loss (mean of -log sigmoid over kept pairs) and its exact gradient.
// Per-pair randomness is keyed by pair content and the reduction runs in
// sorted key order, so the batch behaves as a multiset: permuting it changes
// nothing, bitwise.
std::pair<double, net::ParamVector> dpo_loss_and_grad(const net::NetworkSpec& spec,
                                                      const net::ParamVector& theta,
                                                      const DpoConfig& cfg,
                                                      std::span<const PreferencePair> pairs,
                                                      Rng& rng);

// JSON lines {condition, winner:[...], loser:[...]}
void write_pairs(const std::filesystem::path& path, std::span<const PreferencePair> pairs);
std::vector<PreferencePair> read_pairs(const std::filesystem::path& path);

}  // namespace flowalign::dpo
