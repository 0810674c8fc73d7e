#include "flowalign/dpo.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

#include "flowalign/errors.hpp"
#include "flowalign/jsonio.hpp"

namespace flowalign::dpo {

std::vector<PreferencePair> build_pairs(std::span<const ScoredCandidate> candidates) {
    // group per condition in encounter order
    std::vector<int> order;
    std::map<int, std::pair<std::vector<const ScoredCandidate*>, std::vector<const ScoredCandidate*>>> by_cond;
    for (const ScoredCandidate& c : candidates) {
        if (c.score < 1 || c.score > 5) {
            throw ContractError("build_pairs: score outside 1..5");
        }
        if (!by_cond.count(c.condition)) {
            order.push_back(c.condition);
        }
        auto& bucket = by_cond[c.condition];
        if (c.score >= 4) {
            bucket.first.push_back(&c);
        } else if (c.score <= 2) {
            bucket.second.push_back(&c);
        }
        // score 3 dropped
    }
    std::vector<PreferencePair> pairs;
    for (int cond : order) {
        const auto& [winners, losers] = by_cond[cond];
        for (const ScoredCandidate* w : winners) {
            for (const ScoredCandidate* l : losers) {
                pairs.push_back({cond, w->x0, l->x0});
            }
        }
    }
    return pairs;
}

double pair_loss_from_logit(double logit) { return softplus(-logit); }

namespace {

// |u - v_theta(xt, t, c)|^2 and the theta-gradient upstream seed 2*(v - u)
struct Residual {
    double value = 0.0;
    Vec upstream;
    net::ForwardCache cache;
};

Residual policy_residual(const net::NetworkSpec& spec, const net::ParamVector& theta,
                         const flow::FlowSample& fs, int condition) {
    Residual r;
    const Vec v = net::forward(spec, theta, fs.xt, fs.t, condition, &r.cache);
    r.upstream.resize(v.size());
    for (size_t i = 0; i < v.size(); ++i) {
        const double d = v[i] - fs.u[i];
        r.value += d * d;
        r.upstream[i] = 2.0 * d;
    }
    return r;
}

double reference_residual(const net::NetworkSpec& spec, const net::ParamVector& ref,
                          const flow::FlowSample& fs, int condition) {
    const Vec v = net::forward(spec, ref, fs.xt, fs.t, condition);
    double s = 0.0;
    for (size_t i = 0; i < v.size(); ++i) {
        const double d = v[i] - fs.u[i];
        s += d * d;
    }
    return s;
}

uint64_t fnv64(const void* data, size_t n, uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

uint64_t pair_content_key(const PreferencePair& pair) {
    uint64_t h = 0xcbf29ce484222325ULL;
    h = fnv64(&pair.condition, sizeof pair.condition, h);
    h = fnv64(pair.winner_x0.data(), pair.winner_x0.size() * sizeof(double), h);
    h = fnv64(pair.loser_x0.data(), pair.loser_x0.size() * sizeof(double), h);
    return h;
}

}  // namespace

PairEval eval_pair(const net::NetworkSpec& spec, const net::ParamVector& theta,
                   const DpoConfig& cfg, const PreferencePair& pair, const PairDraw& draw) {
    if (!(cfg.beta_eff > 0.0)) {
        throw ContractError("dpo: beta_eff must be positive");
    }
    if (cfg.reference.size() != theta.size()) {
        throw ContractError("dpo: reference/policy size mismatch");
    }
    const flow::FlowSample fw = flow::interpolate(pair.winner_x0, draw.eps_winner, draw.t);
    const flow::FlowSample fl = flow::interpolate(pair.loser_x0, draw.eps_loser, draw.t);

    Residual rw = policy_residual(spec, theta, fw, pair.condition);
    Residual rl = policy_residual(spec, theta, fl, pair.condition);
    const double delta_w = rw.value - reference_residual(spec, cfg.reference, fw, pair.condition);
    const double delta_l = rl.value - reference_residual(spec, cfg.reference, fl, pair.condition);

    PairEval out;
    out.logit = -cfg.beta_eff * (delta_w - delta_l);
    out.loss = pair_loss_from_logit(out.logit);
    if (!std::isfinite(out.loss)) {
        throw DivergenceError("dpo: non-finite pair loss");
    }

    // d loss / d delta_w = beta_eff * sigmoid(-logit); d/d delta_l is its negation
    const double coef = cfg.beta_eff * stable_sigmoid(-out.logit);
    scale(rw.upstream, coef);
    scale(rl.upstream, -coef);
    out.grad = net::backward(spec, theta, rw.cache, rw.upstream);
    const net::ParamVector gl = net::backward(spec, theta, rl.cache, rl.upstream);
    axpy(1.0, gl, out.grad);
    return out;
}

std::pair<double, net::ParamVector> dpo_loss_and_grad(const net::NetworkSpec& spec,
                                                      const net::ParamVector& theta,
                                                      const DpoConfig& cfg,
                                                      std::span<const PreferencePair> pairs,
                                                      Rng& rng) {
    if (pairs.empty()) {
        throw ContractError("dpo_loss_and_grad: empty batch");
    }
    Rng base = rng.split();

    struct Entry {
        uint64_t key;
        double loss;
        double grad_norm;
        net::ParamVector grad;
    };
    std::vector<Entry> entries;
    entries.reserve(pairs.size());
    for (const PreferencePair& pair : pairs) {
        const uint64_t key = pair_content_key(pair);
        Rng pr = base.fork(key);
        PairDraw draw;
        draw.t = flow::sample_timestep(cfg.t_sampler, pr);
        draw.eps_winner = pr.normal_vec(pair.winner_x0.size());
        draw.eps_loser = pr.normal_vec(pair.loser_x0.size());
        PairEval ev = eval_pair(spec, theta, cfg, pair, draw);
        entries.push_back({key, ev.loss, nrm2(ev.grad), std::move(ev.grad)});
    }

    // drop pairs whose gradient norm dwarfs the batch median
    std::vector<bool> keep(entries.size(), true);
    if (cfg.skip_factor > 0.0 && entries.size() >= 2) {
        std::vector<double> norms;
        norms.reserve(entries.size());
        for (const Entry& e : entries) {
            norms.push_back(e.grad_norm);
        }
        std::nth_element(norms.begin(), norms.begin() + norms.size() / 2, norms.end());
        const double median = norms[norms.size() / 2];
        for (size_t i = 0; i < entries.size(); ++i) {
            keep[i] = entries[i].grad_norm <= cfg.skip_factor * median;
        }
    }

    // reduce in sorted key order so the batch is a multiset
    std::vector<size_t> idx(entries.size());
    for (size_t i = 0; i < idx.size(); ++i) {
        idx[i] = i;
    }
    std::stable_sort(idx.begin(), idx.end(),
                     [&](size_t a, size_t b) { return entries[a].key < entries[b].key; });

    double loss = 0.0;
    net::ParamVector grad(theta.size(), 0.0);
    size_t kept = 0;
    for (size_t i : idx) {
        if (!keep[i]) {
            continue;
        }
        loss += entries[i].loss;
        axpy(1.0, entries[i].grad, grad);
        ++kept;
    }
    const double inv = 1.0 / static_cast<double>(kept);
    loss *= inv;
    scale(grad, inv);
    return {loss, std::move(grad)};
}

void write_pairs(const std::filesystem::path& path, std::span<const PreferencePair> pairs) {
    std::string out;
    for (const PreferencePair& p : pairs) {
        nlohmann::json j{{"condition", p.condition}, {"winner", p.winner_x0}, {"loser", p.loser_x0}};
        out += j.dump();
        out += '\n';
    }
    atomic_write_text(path, out);
}

std::vector<PreferencePair> read_pairs(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DependencyError("missing preference dataset: " + path.string());
    }
    std::vector<PreferencePair> pairs;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        try {
            const nlohmann::json j = nlohmann::json::parse(line);
            pairs.push_back({j.at("condition").get<int>(), j.at("winner").get<Vec>(),
                             j.at("loser").get<Vec>()});
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("bad preference record in " + path.string() + ": " + e.what());
        }
    }
    return pairs;
}

}  // namespace flowalign::dpo
