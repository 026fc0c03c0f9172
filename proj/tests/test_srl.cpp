#include "evrec/error.hpp"
#include "evrec/srl.hpp"
#include "oracles.hpp"
#include "toy_envs.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>

using namespace evrec;
using namespace evrec::srl;

namespace {

Scenario const& reduced() {
    static Scenario const s = load_scenario(EVREC_DATA_DIR "/scenarios/reduced_two_station.json");
    return s;
}

std::vector<double> random_vec(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

/// Probability of the paying action in each bandit state after `updates` learning rounds.
std::pair<double, double> bandit_probs(Method m, int updates) {
    toy::Bandit env;
    TrainConfig c;
    c.actor_lr = 1e-3;
    c.critic_lr = 1e-3;
    auto agent = make_agent(m, env, c, 1);
    if (m == Method::Ppo || m == Method::PpoLag) {
        c.epochs = updates;
        (void)train(env, *agent, c, 3);
    } else {
        for (int i = 0; i < updates; ++i) (void)run_episode(env, *agent, episode_seed(3, i), true, true);
    }
    return {agent->action_probs({1, 0})[0], agent->action_probs({0, 1})[1]};
}

}  // namespace

TEST_CASE("GAE matches the brute-force double sum") {
    Rng rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        auto const r = random_vec(rng, 20, -2.0, 2.0);
        auto v = random_vec(rng, 21, -5.0, 5.0);
        if (trial % 2 == 0) v.back() = 0.0;
        double const gamma = rng.uniform(0.5, 1.0), eta = rng.uniform(0.0, 1.0);
        auto const a = compute_gae(r, v, gamma, eta);
        auto const ref = oracle::brute_gae(r, v, gamma, eta);
        for (std::size_t t = 0; t < r.size(); ++t) REQUIRE(std::abs(a[t] - ref[t]) < 1e-10);
    }
}

TEST_CASE("GAE edge cases") {
    auto const one = compute_gae({2.0}, {0.5, 1.5}, 0.9, 0.95);
    CHECK(one[0] == doctest::Approx(2.0 + 0.9 * 1.5 - 0.5));
    std::vector<double> r{1, -1, 3}, v{0.2, 0.4, -0.3, 0.0};
    auto const td = compute_gae(r, v, 0.97, 0.0);
    for (std::size_t t = 0; t < r.size(); ++t) CHECK(td[t] == doctest::Approx(r[t] + 0.97 * v[t + 1] - v[t]));
    CHECK_THROWS_AS((void)compute_gae(r, r, 0.97, 0.95), ShapeError);
}

TEST_CASE("combined advantage arithmetic") {
    std::vector<double> ar{2.0, -1.0}, ac{1.0, 3.0};
    CHECK(combined_advantage(ar, ac, 0.0) == ar);
    CHECK(combined_advantage(ar, ar, 1.0) == std::vector<double>{0.0, 0.0});
    CHECK(combined_advantage({2.0}, {1.0}, 0.5)[0] == doctest::Approx(1.5));
}

TEST_CASE("multiplier update and projection") {
    CHECK(lagrangian_update(0.5, 1.0, 0.0, 0.035) == doctest::Approx(0.535));
    CHECK(lagrangian_update(0.5, 0.0, 0.0, 0.035) == 0.5);
    CHECK(lagrangian_update(0.01, 0.0, 1.0, 0.035) == 0.0);
}

TEST_CASE("clipped surrogate arithmetic and bound") {
    CHECK(clipped_surrogate(1.5, 1.0, 0.2) == doctest::Approx(1.2));
    CHECK(clipped_surrogate(0.5, -1.0, 0.2) == doctest::Approx(-0.8));
    CHECK(clipped_surrogate(1.0, 0.7, 0.2) == doctest::Approx(0.7));
    Rng rng(3);
    for (int i = 0; i < 1000; ++i) {
        double const z = rng.uniform(0.0, 3.0), a = rng.uniform(-2.0, 2.0);
        double const s = clipped_surrogate(z, a, 0.2);
        CHECK(s <= 1.2 * std::abs(a) + 1e-15);
        CHECK(s == doctest::Approx(std::min(z * a, std::clamp(z, 0.8, 1.2) * a)));
    }
}

TEST_CASE("normalization and discounted returns") {
    std::vector<double> xs{1, 2, 3, 4};
    normalize(xs);
    double m = 0, s = 0;
    for (double x : xs) m += x / 4;
    for (double x : xs) s += (x - m) * (x - m) / 4;
    CHECK(m == doctest::Approx(0.0));
    CHECK(s == doctest::Approx(1.0));
    auto const g = discounted_returns({1, 1, 1}, 0.5);
    CHECK(g == std::vector<double>{1.75, 1.5, 1.0});
}

TEST_CASE("multiplier grows by alpha times J_c each epoch under constant cost") {
    auto const tr = toy::constant_cost_lambda(10, 0.5, 4);
    double expect = 0.0;
    for (std::size_t k = 0; k < tr.lambda.size(); ++k) {
        CHECK(tr.cost_return[k] == 2.0);
        expect = std::max(0.0, expect + 0.035 * 2.0);
        CHECK(tr.lambda[k] == expect);
        if (k > 0) CHECK(tr.lambda[k] > tr.lambda[k - 1]);
    }
    // zero cost against a positive bound drives λ down to the floor and keeps it there
    auto const down = toy::constant_cost_lambda(5, 0.0, 4, 0.1, 1.0);
    for (double l : down.lambda) CHECK(l >= 0.0);
    CHECK(down.lambda.back() == 0.0);
}

TEST_CASE("policy-gradient agents solve the two-state bandit") {
    for (auto m : {Method::Ppo, Method::PpoLag, Method::Reinforce, Method::ActorCritic}) {
        CAPTURE(method_name(m));
        auto const [p0, p1] = bandit_probs(m, 200);
        CHECK(p0 >= 0.95);
        CHECK(p1 >= 0.95);
    }
}

TEST_CASE("first actor minibatch sees the collection policy") {
    toy::ConstantCost env;
    env.length = 30;
    TrainConfig c;
    c.epochs = 5;
    c.hidden = {16};
    PpoAgent agent(env.state_dim(), env.action_count(), c, PpoMode::Lagrangian, 2);
    auto const run = train(env, agent, c, 4);
    for (auto const& r : run.curve) CHECK(r.stats.ratio_dev_first < 1e-6);
}

TEST_CASE("penalty PPO with zero cost is PPO on min-max scaled reward") {
    toy::Bandit raw;
    raw.lo = 2.0;
    raw.hi = 5.0;
    toy::Bandit unit;
    TrainConfig c;
    c.epochs = 6;
    PpoAgent penalty(2, 2, c, PpoMode::Penalty, 8);
    PpoAgent plain(2, 2, c, PpoMode::RewardOnly, 8);
    (void)train(raw, penalty, c, 2);
    (void)train(unit, plain, c, 2);
    auto const a = penalty.params();
    auto const b = plain.params();
    for (std::size_t k = 0; k < a.size(); ++k) {
        if (a[k]->name.starts_with("actor") || a[k]->name.starts_with("reward")) {
            CHECK(a[k]->value == b[k]->value);
        }
    }
    auto const cal = std::find_if(a.begin(), a.end(), [](auto* p) { return p->name == "penalty_calibration"; });
    REQUIRE(cal != a.end());
    CHECK((*cal)->value(0, 0) == 1.0);
    CHECK((*cal)->value(0, 1) == 2.0);
    CHECK((*cal)->value(0, 2) == 5.0);
}

TEST_CASE("DQN with epsilon one acts uniformly") {
    TrainConfig c;
    DqnAgent agent(4, 5, c, 3);
    agent.set_epsilon_override(1.0);
    std::array<int, 5> counts{};
    int const n = 10000;
    for (int i = 0; i < n; ++i) ++counts[agent.act({0.1, 0.2, 0.3, 0.4}, true)];
    double chi2 = 0.0;
    for (int k : counts) chi2 += std::pow(k - n / 5.0, 2) / (n / 5.0);
    CHECK(chi2 < 18.47);  // df 4, p = 0.001
}

TEST_CASE("DQN epsilon anneals over half of all training episodes") {
    toy::Bandit env;
    TrainConfig c;
    c.epochs = 4;
    c.episodes_per_epoch = 5;
    c.batch_size = 8;
    DqnAgent agent(2, 2, c, 1);
    CHECK(agent.epsilon() == 1.0);
    for (int i = 0; i < 5; ++i) (void)run_episode(env, agent, episode_seed(0, i), true, true);
    CHECK(agent.epsilon() == doctest::Approx(1.0 - 0.95 * 0.5));
    for (int i = 5; i < 20; ++i) (void)run_episode(env, agent, episode_seed(0, i), true, true);
    CHECK(agent.epsilon() == doctest::Approx(0.05));
    CHECK(agent.updates() > 0);
}

TEST_CASE("method names round trip") {
    for (auto m : all_methods()) CHECK(parse_method(method_name(m)) == m);
    CHECK(all_methods().size() == 8);
    CHECK_THROWS_AS((void)parse_method("sarsa"), ValidationError);
    CHECK_FALSE(is_learned(Method::Greedy));
    CHECK(episode_seed(1, 0) != episode_seed(1, 1));
    CHECK(episode_seed(1, 0) != episode_seed(2, 0));
}

TEST_CASE("training errors name the epoch and seed") {
    struct Failing final : Environment {
        int episodes = 0;
        std::vector<double> reset(std::uint64_t) override {
            if (++episodes > 7) throw StateError("boom");
            return {0.0};
        }
        Transition step(int) override { return {0.0, 0.0, true, {}}; }
        [[nodiscard]] std::size_t state_dim() const override { return 1; }
        [[nodiscard]] int action_count() const override { return 2; }
    } env;
    TrainConfig c;
    c.epochs = 3;
    PpoAgent agent(1, 2, c, PpoMode::RewardOnly, 0);
    try {
        (void)train(env, agent, c, 9);
        FAIL("expected a training error");
    } catch (StateError const& e) {
        CHECK(std::string(e.what()) == "training failed in epoch 2 (seed 9)");
        try {
            std::rethrow_if_nested(e);
            FAIL("expected a nested cause");
        } catch (StateError const& inner) {
            CHECK(std::string(inner.what()) == "boom");
        }
    }
}

TEST_CASE("OP-SRL without a predictor trains exactly like PPO-Lagrangian") {
    auto cfg = reduced().config;
    cfg.predictor.enabled = false;
    auto const no_pred = materialize(cfg);
    Policy a(no_pred, Method::OpSrl, 1, 2);
    Policy b(reduced(), Method::PpoLag, 1, 2);
    CHECK(a.predictor() == nullptr);
    auto const ra = a.train();
    auto const rb = b.train();
    REQUIRE(ra.curve.size() == 2);
    for (std::size_t i = 0; i < ra.curve.size(); ++i) {
        CHECK(ra.curve[i].mean_ttt_s == rb.curve[i].mean_ttt_s);
        CHECK(ra.curve[i].mean_cvv == rb.curve[i].mean_cvv);
        CHECK(ra.curve[i].lambda == rb.curve[i].lambda);
    }
    auto const pa = a.agent().params();
    auto const pb = b.agent().params();
    for (std::size_t k = 0; k < pa.size(); ++k) CHECK(pa[k]->value == pb[k]->value);
}

TEST_CASE("OP-SRL state carries a decoder_len x stations forecast tail") {
    auto const& sc = reduced();
    env::ChargingEnv raw(sc);
    std::vector<int> piles;
    for (auto const& s : sc.config.stations) piles.push_back(s.piles);
    predictor::OnlinePredictor p(2, piles, sc.config.predictor, 1);
    CmdpAdapter adapter(raw, &p);
    CHECK(adapter.state_dim() == raw.state_dim() + 5 * 2);
    auto const s = adapter.reset(0);
    CHECK(s.size() == adapter.state_dim());
    CmdpAdapter bare(raw, nullptr);
    auto const z = bare.reset(0);
    REQUIRE(z.size() == adapter.state_dim());
    for (std::size_t i = raw.state_dim(); i < z.size(); ++i) CHECK(z[i] == 0.0);
}

TEST_CASE("checkpoint save and load reproduce evaluation") {
    auto const& sc = reduced();
    Policy a(sc, Method::OpSrl, 2, 1);
    (void)a.train();
    auto const path = std::filesystem::temp_directory_path() / "evrec_policy.ckpt";
    a.save(path);
    Policy b(sc, Method::OpSrl, 2, 1);
    b.load(path);
    auto const ea = a.evaluate(5);
    auto const eb = b.evaluate(5);
    CHECK(ea.actions == eb.actions);
    CHECK(ea.metrics.ttt_s == eb.metrics.ttt_s);
    CHECK(ea.metrics.cvv == eb.metrics.cvv);
    Policy wrong(sc, Method::Dqn, 2, 1);
    CHECK_THROWS_AS(wrong.load(path), ShapeError);
}

TEST_CASE("evaluation at zero compliance is the greedy policy") {
    auto const& sc = reduced();
    Policy learned(sc, Method::PpoLag, 0, 1);
    (void)learned.train();
    Policy greedy(sc, Method::Greedy, 0);
    auto const a = learned.evaluate(13, 0.0);
    auto const b = greedy.evaluate(13);
    CHECK(a.metrics.ttt_s == b.metrics.ttt_s);
    CHECK(a.metrics.cvv == b.metrics.cvv);
    CHECK(a.metrics.wct_min == b.metrics.wct_min);
}
