#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "flowalign/dpo.hpp"
#include "flowalign/errors.hpp"
#include "flowalign/fdcheck.hpp"
#include "flowalign/rng.hpp"

using namespace flowalign;
using namespace flowalign::dpo;

namespace {

net::NetworkSpec toy_spec() {
    net::NetworkSpec s;
    s.data_dim = 2;
    s.hidden_widths = {5};
    s.time_embed_dim = 4;
    s.condition_count = 2;
    s.condition_embed_dim = 2;
    return s;
}

std::vector<PreferencePair> toy_pairs(int n, Rng& rng) {
    std::vector<PreferencePair> pairs;
    for (int i = 0; i < n; ++i) {
        pairs.push_back({i % 2, rng.normal_vec(2), rng.normal_vec(2)});
    }
    return pairs;
}

}  // namespace

TEST_CASE("build_pairs: scores [5,4,3,2,1,1] give 6 pairs, none with the 3") {
    std::vector<ScoredCandidate> cands;
    const int scores[] = {5, 4, 3, 2, 1, 1};
    for (int i = 0; i < 6; ++i) {
        cands.push_back({0, Vec{static_cast<double>(i), 0.0}, scores[i]});
    }
    const auto pairs = build_pairs(cands);
    CHECK(pairs.size() == 6);
    for (const auto& p : pairs) {
        CHECK(p.winner_x0[0] != 2.0);  // candidate with score 3
        CHECK(p.loser_x0[0] != 2.0);
    }
}

TEST_CASE("build_pairs: all-neutral and single-pair cases") {
    std::vector<ScoredCandidate> neutral{{0, Vec{0.0}, 3}, {0, Vec{1.0}, 3}, {0, Vec{2.0}, 3}};
    CHECK(build_pairs(neutral).empty());

    std::vector<ScoredCandidate> two{{0, Vec{1.0}, 4}, {0, Vec{2.0}, 2}};
    const auto pairs = build_pairs(two);
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0].winner_x0[0] == 1.0);
    CHECK(pairs[0].loser_x0[0] == 2.0);
}

TEST_CASE("build_pairs groups by condition") {
    std::vector<ScoredCandidate> cands{
        {0, Vec{1.0}, 5}, {1, Vec{2.0}, 1}, {0, Vec{3.0}, 2}, {1, Vec{4.0}, 4}};
    const auto pairs = build_pairs(cands);
    REQUIRE(pairs.size() == 2);
    for (const auto& p : pairs) {
        CHECK(p.winner_x0.size() == 1);
    }
    CHECK(pairs[0].condition == 0);
    CHECK(pairs[1].condition == 1);
}

TEST_CASE("dpo anchor: policy equal to reference gives loss ln 2") {
    const net::NetworkSpec s = toy_spec();
    const net::ParamVector theta = net::init_params(s, 5);
    DpoConfig cfg;
    cfg.reference = theta;
    Rng rng(7);
    const auto pairs = toy_pairs(6, rng);
    const auto [loss, grad] = dpo_loss_and_grad(s, theta, cfg, pairs, rng);
    CHECK(loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("pair loss arithmetic: logit 2 gives -log sigmoid(2)") {
    CHECK(pair_loss_from_logit(2.0) == doctest::Approx(0.126928).epsilon(1e-5));
    CHECK(pair_loss_from_logit(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("pair loss is monotone in the winner residual gap") {
    // smaller delta_w (better winner fit vs reference) must lower the loss
    const double beta = 100.0;
    const double delta_l = 0.3;
    double prev = 1e300;
    for (double delta_w : {0.5, 0.3, 0.1, -0.1, -0.3}) {
        const double loss = pair_loss_from_logit(-beta * (delta_w - delta_l));
        CHECK(loss < prev);
        prev = loss;
    }
}

TEST_CASE("swapping winner and loser negates the logit exactly") {
    const net::NetworkSpec s = toy_spec();
    const net::ParamVector theta = net::init_params(s, 8);
    DpoConfig cfg;
    cfg.reference = net::init_params(s, 9);
    Rng rng(11);
    PreferencePair pair{1, rng.normal_vec(2), rng.normal_vec(2)};
    PairDraw draw{0.4, rng.normal_vec(2), rng.normal_vec(2)};

    const PairEval fwd = eval_pair(s, theta, cfg, pair, draw);
    PreferencePair swapped{1, pair.loser_x0, pair.winner_x0};
    PairDraw swapped_draw{draw.t, draw.eps_loser, draw.eps_winner};
    const PairEval rev = eval_pair(s, theta, cfg, swapped, swapped_draw);
    CHECK(rev.logit == -fwd.logit);
}

TEST_CASE("permuting the batch leaves loss and gradient unchanged bitwise") {
    const net::NetworkSpec s = toy_spec();
    const net::ParamVector theta = net::init_params(s, 12);
    DpoConfig cfg;
    cfg.reference = net::init_params(s, 13);
    Rng data_rng(21);
    auto pairs = toy_pairs(8, data_rng);

    Rng r1(5000), r2(5000);
    const auto [loss1, grad1] = dpo_loss_and_grad(s, theta, cfg, pairs, r1);
    std::reverse(pairs.begin(), pairs.end());
    const auto [loss2, grad2] = dpo_loss_and_grad(s, theta, cfg, pairs, r2);
    CHECK(loss1 == loss2);
    CHECK(grad1 == grad2);
}

TEST_CASE("dpo gradient matches finite differences") {
    net::NetworkSpec s = toy_spec();
    s.hidden_widths = {4};
    REQUIRE(net::param_count(s) <= 200);
    const net::ParamVector theta = net::init_params(s, 31);
    DpoConfig cfg;
    cfg.beta_eff = 5.0;  // keep the logits in a smooth range for differencing
    cfg.reference = net::init_params(s, 32);
    cfg.skip_factor = 0.0;
    Rng data_rng(41);
    const auto pairs = toy_pairs(3, data_rng);

    const auto eval = [&](const net::ParamVector& p) {
        Rng r(777);
        return dpo_loss_and_grad(s, p, cfg, pairs, r).first;
    };
    Rng r(777);
    const auto [loss, analytic] = dpo_loss_and_grad(s, theta, cfg, pairs, r);
    (void)loss;
    const Vec fd = finite_difference_grad(eval, theta, 1e-5);
    CHECK(max_relative_error(analytic, fd) < 1e-5);
}

TEST_CASE("dirty-data skipping drops only extreme-gradient pairs") {
    const net::NetworkSpec s = toy_spec();
    const net::ParamVector theta = net::init_params(s, 51);
    DpoConfig cfg;
    cfg.reference = net::init_params(s, 52);
    Rng data_rng(61);
    auto pairs = toy_pairs(6, data_rng);
    // an absurd outlier pair: gigantic x0 values produce a huge residual gradient
    pairs.push_back({0, Vec{400.0, -400.0}, Vec{-400.0, 400.0}});

    cfg.skip_factor = 10.0;
    Rng r1(99);
    const auto [loss_filtered, grad_filtered] = dpo_loss_and_grad(s, theta, cfg, pairs, r1);
    cfg.skip_factor = 0.0;
    Rng r2(99);
    const auto [loss_raw, grad_raw] = dpo_loss_and_grad(s, theta, cfg, pairs, r2);
    CHECK(nrm2(grad_filtered) < nrm2(grad_raw));
    CHECK(std::isfinite(loss_filtered));
    CHECK(std::isfinite(loss_raw));
}

TEST_CASE("empty batch is rejected") {
    const net::NetworkSpec s = toy_spec();
    const net::ParamVector theta = net::init_params(s, 5);
    DpoConfig cfg;
    cfg.reference = theta;
    Rng rng(1);
    std::vector<PreferencePair> empty;
    CHECK_THROWS_AS(dpo_loss_and_grad(s, theta, cfg, empty, rng), ContractError);
}

TEST_CASE("preference dataset round-trips through JSON lines") {
    Rng rng(71);
    const auto pairs = toy_pairs(5, rng);
    const auto path = std::filesystem::temp_directory_path() / "flowalign_pairs_test.jsonl";
    write_pairs(path, pairs);
    const auto loaded = read_pairs(path);
    REQUIRE(loaded.size() == pairs.size());
    for (size_t i = 0; i < pairs.size(); ++i) {
        CHECK(loaded[i].condition == pairs[i].condition);
        CHECK(loaded[i].winner_x0 == pairs[i].winner_x0);
        CHECK(loaded[i].loser_x0 == pairs[i].loser_x0);
    }
    std::filesystem::remove(path);
}
