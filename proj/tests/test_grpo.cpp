#include <doctest.h>

#include <cmath>

#include "flowalign/errors.hpp"
#include "flowalign/fdcheck.hpp"
#include "flowalign/grpo.hpp"
#include "flowalign/rng.hpp"

using namespace flowalign;
using namespace flowalign::grpo;

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

Group make_group(const net::NetworkSpec& s, const net::ParamVector& theta, int condition, int g,
                 int steps, double sigma, uint64_t seed, const rewards::RewardFn& reward) {
    Group group;
    group.condition = condition;
    Rng rng(seed);
    for (int i = 0; i < g; ++i) {
        Rng tr = rng.fork(static_cast<uint64_t>(i));
        sde::Trajectory traj = sde::sde_rollout(s, theta, condition, steps, sigma, tr);
        group.rewards.push_back(reward(traj.x_final, condition));
        group.trajectories.push_back(std::move(traj));
    }
    group.advantages = group_advantages(group.rewards);
    return group;
}

rewards::RewardFn right_half_reward() {
    return [](std::span<const double> x, int) { return stable_sigmoid(x[0] / 0.5); };
}

}  // namespace

TEST_CASE("group advantages: [1,2,3] standardized by population std") {
    const std::vector<double> r{1.0, 2.0, 3.0};
    const auto adv = group_advantages(r);
    CHECK(adv[0] == doctest::Approx(-1.224745).epsilon(1e-6));
    CHECK(adv[1] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(adv[2] == doctest::Approx(1.224745).epsilon(1e-6));
}

TEST_CASE("group advantages: constant rewards hit the guard") {
    const std::vector<double> r{5.0, 5.0, 5.0};
    const auto adv = group_advantages(r);
    for (double a : adv) CHECK(a == 0.0);
}

TEST_CASE("group advantages: [0,1] gives [-1,1]") {
    const std::vector<double> r{0.0, 1.0};
    const auto adv = group_advantages(r);
    CHECK(adv[0] == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(adv[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("group advantages reject tiny groups") {
    const std::vector<double> r{1.0};
    CHECK_THROWS_AS(group_advantages(r), ContractError);
}

TEST_CASE("advantages sum to zero with unit population variance") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> r(8);
        for (double& v : r) v = rng.uniform();
        const auto adv = group_advantages(r);
        double sum = 0.0, sq = 0.0;
        for (double a : adv) {
            sum += a;
            sq += a * a;
        }
        CHECK(std::abs(sum) < 1e-9);
        CHECK(sq / 8.0 == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("advantages are invariant to reward shift and positive scale") {
    Rng rng(4);
    std::vector<double> r(6);
    for (double& v : r) v = rng.uniform();
    const auto base = group_advantages(r);

    std::vector<double> shifted = r, scaled = r;
    for (double& v : shifted) v += 3.7;
    for (double& v : scaled) v *= 2.5;
    const auto adv_shift = group_advantages(shifted);
    const auto adv_scale = group_advantages(scaled);
    for (size_t i = 0; i < r.size(); ++i) {
        CHECK(adv_shift[i] == doctest::Approx(base[i]).epsilon(1e-9));
        CHECK(adv_scale[i] == doctest::Approx(base[i]).epsilon(1e-9));
    }
}

TEST_CASE("clipped term arithmetic") {
    CHECK(clipped_term(1.5, 1.0, 0.2) == doctest::Approx(1.2).epsilon(1e-12));
    CHECK(clipped_term(0.5, 1.0, 0.2) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(clipped_term(1.5, -1.0, 0.2) == doctest::Approx(-1.5).epsilon(1e-12));
    CHECK(clipped_term(1.0, 0.7, 0.2) == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("surrogate at the snapshot policy: unit ratios, zero objective") {
    const net::NetworkSpec s = toy_spec();
    const net::ParamVector theta = net::init_params(s, 5);
    GrpoConfig cfg;
    const auto group = make_group(s, theta, 0, 6, 4, 0.1, 99, right_half_reward());
    const std::vector<Group> groups{group};
    const auto [stats, grad] = objective_and_grad(s, theta, theta, groups, cfg);
    CHECK(stats.mean_ratio == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(stats.objective) < 1e-9);
    CHECK(stats.clip_fraction == 0.0);
}

TEST_CASE("surrogate gradient matches finite differences on a small case") {
    net::NetworkSpec s = toy_spec();
    s.hidden_widths = {4};
    REQUIRE(net::param_count(s) <= 200);
    const net::ParamVector theta_old = net::init_params(s, 6);
    net::ParamVector theta = theta_old;
    Rng perturb(7);
    for (double& v : theta) v += 0.01 * perturb.normal();  // modest policy gap

    GrpoConfig cfg;
    cfg.clip_eps = 0.5;  // keep every step on the smooth branch for differencing
    const auto g0 = make_group(s, theta_old, 0, 3, 3, 0.2, 11, right_half_reward());
    const auto g1 = make_group(s, theta_old, 1, 3, 3, 0.2, 12, right_half_reward());
    const std::vector<Group> groups{g0, g1};

    const auto [stats, analytic] = objective_and_grad(s, theta, theta_old, groups, cfg);
    (void)stats;
    const auto eval = [&](const net::ParamVector& p) {
        return objective_and_grad(s, p, theta_old, groups, cfg).first.objective;
    };
    const Vec fd = finite_difference_grad(eval, theta, 1e-6);
    CHECK(max_relative_error(analytic, fd) < 1e-5);
}

TEST_CASE("sigma = 0 trajectories are rejected") {
    const net::NetworkSpec s = toy_spec();
    const net::ParamVector theta = net::init_params(s, 8);
    Group group;
    group.condition = 0;
    Rng rng(1);
    group.trajectories.push_back(sde::sde_rollout(s, theta, 0, 3, 0.0, rng));
    group.rewards.push_back(0.5);
    group.trajectories.push_back(sde::sde_rollout(s, theta, 0, 3, 0.0, rng));
    group.rewards.push_back(0.7);
    group.advantages = group_advantages(group.rewards);
    const std::vector<Group> groups{group};
    CHECK_THROWS_AS(objective_and_grad(s, theta, theta, groups, GrpoConfig{}), KernelError);
}

TEST_CASE("train iteration: first pass has unit ratios; constant reward freezes theta") {
    const net::NetworkSpec s = toy_spec();
    net::ParamVector theta = net::init_params(s, 9);
    net::OptimizerState opt = net::make_adamw_state(s, 1e-3);
    opt.weight_decay = 0.0;
    GrpoConfig cfg;
    cfg.group_size = 4;
    cfg.sampler_steps = 4;
    const std::vector<int> conditions{0, 1};
    const Rng run_rng(321);

    SUBCASE("inner_epochs = 1 evaluates at the snapshot") {
        const auto metrics = train_iteration(s, theta, opt, cfg, conditions, right_half_reward(),
                                             0.1, 0, run_rng);
        CHECK(metrics.mean_ratio == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(metrics.clip_fraction == 0.0);
    }

    SUBCASE("constant reward model leaves theta unchanged") {
        const net::ParamVector before = theta;
        const rewards::RewardFn constant = [](std::span<const double>, int) { return 0.5; };
        train_iteration(s, theta, opt, cfg, conditions, constant, 0.1, 0, run_rng);
        CHECK(theta == before);
    }
}

TEST_CASE("train iteration is reproducible for a fixed run seed") {
    const net::NetworkSpec s = toy_spec();
    GrpoConfig cfg;
    cfg.group_size = 3;
    cfg.sampler_steps = 4;
    const std::vector<int> conditions{0, 1};

    net::ParamVector t1 = net::init_params(s, 10);
    net::ParamVector t2 = t1;
    net::OptimizerState o1 = net::make_adamw_state(s, 1e-3);
    net::OptimizerState o2 = net::make_adamw_state(s, 1e-3);
    const Rng rng(555);
    const auto m1 = train_iteration(s, t1, o1, cfg, conditions, right_half_reward(), 0.1, 3, rng);
    const auto m2 = train_iteration(s, t2, o2, cfg, conditions, right_half_reward(), 0.1, 3, rng);
    CHECK(t1 == t2);
    CHECK(m1.mean_reward == m2.mean_reward);
    CHECK(m1.grad_norm == m2.grad_norm);
}

TEST_CASE("config validation") {
    GrpoConfig bad;
    bad.group_size = 1;
    CHECK_THROWS_AS(validate(bad), ConfigError);
    bad.group_size = 2;
    bad.clip_eps = 0.0;
    CHECK_THROWS_AS(validate(bad), ConfigError);
}
