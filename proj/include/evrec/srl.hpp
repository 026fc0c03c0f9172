#pragma once

#include "evrec/config.hpp"
#include "evrec/env.hpp"
#include "evrec/nn.hpp"
#include "evrec/predictor.hpp"
#include "evrec/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace evrec::srl {

// ---------------------------------------------------------------------------
// Advantage arithmetic

/// GAE over one complete episode. `values` has one more entry than `rewards`
/// (the bootstrap value after the last step, 0 at a terminal state).
[[nodiscard]] std::vector<double> compute_gae(std::vector<double> const& rewards,
                                              std::vector<double> const& values, double gamma,
                                              double eta);

/// Â = Â^r − λ·Â^c
[[nodiscard]] std::vector<double> combined_advantage(std::vector<double> const& reward_adv,
                                                     std::vector<double> const& cost_adv,
                                                     double lambda);

/// λ' = max(0, λ + α·(J_c − b))
[[nodiscard]] double lagrangian_update(double lambda, double cost_return, double limit,
                                       double lr);

/// Per-sample clipped surrogate min(ζÂ, clip(ζ, 1−ε, 1+ε)Â).
[[nodiscard]] double clipped_surrogate(double ratio, double advantage, double clip);

/// In-place standardization to zero mean and unit (population) variance.
void normalize(std::vector<double>& xs);

/// Σ γ^k x_{t+k} for every t.
[[nodiscard]] std::vector<double> discounted_returns(std::vector<double> const& xs, double gamma);

// ---------------------------------------------------------------------------
// Environments

struct Transition {
    double reward = 0.0;
    double cost = 0.0;
    bool done = false;
    std::vector<double> state;  ///< next state; empty when done
};

class Environment {
public:
    virtual ~Environment() = default;
    virtual std::vector<double> reset(std::uint64_t seed) = 0;
    virtual Transition step(int action) = 0;
    [[nodiscard]] virtual std::size_t state_dim() const = 0;
    [[nodiscard]] virtual int action_count() const = 0;
    /// Shortest-distance fallback action for the current request.
    [[nodiscard]] virtual int greedy_action() const { return 0; }
    /// Traffic metrics of the finished episode, when the environment has them.
    [[nodiscard]] virtual std::optional<env::EpisodeMetrics> episode_metrics() const {
        return std::nullopt;
    }
    /// Wall-clock seconds of model inference spent building the current state.
    [[nodiscard]] virtual double last_inference_s() const { return 0.0; }
};

/// Charging environment with the demand-forecast tail appended to every state.
/// Without a predictor the tail has the same width and is all zeros.
class CmdpAdapter final : public Environment {
public:
    CmdpAdapter(env::ChargingEnv& env, predictor::OnlinePredictor* predictor);

    std::vector<double> reset(std::uint64_t seed) override;
    Transition step(int action) override;
    [[nodiscard]] std::size_t state_dim() const override;
    [[nodiscard]] int action_count() const override { return env_->action_count(); }
    [[nodiscard]] int greedy_action() const override { return env_->greedy_action(); }
    [[nodiscard]] std::optional<env::EpisodeMetrics> episode_metrics() const override;
    [[nodiscard]] double last_inference_s() const override { return inference_s_; }

    /// When off, the predictor only serves forecasts.
    void set_predictor_training(bool on);
    [[nodiscard]] env::ChargingEnv& env() noexcept { return *env_; }
    /// Predictor train-step losses emitted since the last reset.
    [[nodiscard]] std::vector<double> const& episode_losses() const noexcept { return losses_; }

private:
    std::vector<double> augment(std::vector<double> state);
    void feed_snapshots();

    env::ChargingEnv* env_;
    predictor::OnlinePredictor* predictor_;
    std::size_t tail_;
    std::size_t fed_ = 0;
    double inference_s_ = 0.0;
    std::vector<double> losses_;
};

// ---------------------------------------------------------------------------
// Agents

struct EpochStats {
    double lambda = 0.0;
    double cost_return = 0.0;      ///< J_c used for the multiplier update
    double surrogate_first = 0.0;  ///< surrogate on the first actor minibatch
    double ratio_dev_first = 0.0;  ///< mean |ζ − 1| on the first actor minibatch
    double actor_loss = 0.0;
    double reward_critic_loss = 0.0;
    double cost_critic_loss = 0.0;
    double entropy = 0.0;
};

class Agent {
public:
    virtual ~Agent() = default;
    /// Picks an action. `explore` samples (or ε-greedy); otherwise the mode is taken.
    virtual int act(std::vector<double> const& state, bool explore) = 0;
    /// Called after every step taken with the last action returned by act().
    virtual void observe(std::vector<double> const& state, int action, Transition const& tr) = 0;
    virtual void end_episode() {}
    virtual EpochStats end_epoch() { return {}; }

    [[nodiscard]] virtual std::string name() const = 0;
    [[nodiscard]] virtual std::vector<nn::Param const*> params() const = 0;
    [[nodiscard]] virtual std::vector<nn::Param*> params() = 0;
    /// Policy action probabilities; empty for value-based or fixed policies.
    [[nodiscard]] virtual std::vector<double> action_probs(std::vector<double> const&) const {
        return {};
    }
    [[nodiscard]] virtual double lambda() const { return 0.0; }
};

enum class PpoMode { RewardOnly, Lagrangian, Penalty };

/// PPO with an actor, a reward critic and a cost critic. The multiplier only moves
/// in Lagrangian mode; penalty mode trains on min–max normalized r − c calibrated
/// on the first epoch.
class PpoAgent final : public Agent {
public:
    PpoAgent(std::size_t state_dim, int actions, TrainConfig const& config, PpoMode mode,
             std::uint64_t seed);

    int act(std::vector<double> const& state, bool explore) override;
    void observe(std::vector<double> const& state, int action, Transition const& tr) override;
    void end_episode() override;
    EpochStats end_epoch() override;

    [[nodiscard]] std::string name() const override;
    [[nodiscard]] std::vector<nn::Param const*> params() const override;
    [[nodiscard]] std::vector<nn::Param*> params() override;
    [[nodiscard]] std::vector<double> action_probs(std::vector<double> const& state) const override;
    [[nodiscard]] double lambda() const override { return lambda_.value(0, 0); }
    void set_lambda(double v) { lambda_.value(0, 0) = v; }
    [[nodiscard]] PpoMode mode() const noexcept { return mode_; }
    [[nodiscard]] nn::DenseNet const& actor() const noexcept { return actor_; }

private:
    struct Episode {
        std::vector<std::vector<double>> states;
        std::vector<int> actions;
        std::vector<double> logp;
        std::vector<double> rewards;
        std::vector<double> costs;
    };

    [[nodiscard]] double value(nn::DenseNet const& net, std::vector<double> const& s) const;
    double fit_critic(nn::DenseNet& net, nn::Adam& opt, nn::Matrix const& states,
                      std::vector<double> const& targets);

    TrainConfig config_;
    PpoMode mode_;
    int actions_;
    Rng rng_;
    nn::DenseNet actor_;
    nn::DenseNet reward_critic_;
    nn::DenseNet cost_critic_;
    nn::Adam actor_opt_;
    nn::Adam reward_opt_;
    nn::Adam cost_opt_;
    nn::Param lambda_{"lambda", nn::Matrix::Zero(1, 1)};
    nn::Param calibration_{"penalty_calibration", nn::Matrix::Zero(1, 5)};  ///< flag, rmin, rmax, cmin, cmax
    double last_logp_ = 0.0;
    Episode current_;
    std::vector<Episode> episodes_;
};

struct DqnParams {
    std::size_t replay_capacity = 10000;
    int target_sync = 200;
    double eps_start = 1.0;
    double eps_end = 0.05;
    double anneal_fraction = 0.5;  ///< share of all training episodes spent annealing ε
};

class DqnAgent final : public Agent {
public:
    DqnAgent(std::size_t state_dim, int actions, TrainConfig const& config, std::uint64_t seed,
             DqnParams params = {});

    int act(std::vector<double> const& state, bool explore) override;
    void observe(std::vector<double> const& state, int action, Transition const& tr) override;
    void end_episode() override;

    [[nodiscard]] std::string name() const override { return "dqn"; }
    [[nodiscard]] std::vector<nn::Param const*> params() const override;
    [[nodiscard]] std::vector<nn::Param*> params() override;
    [[nodiscard]] double epsilon() const;
    void set_epsilon_override(std::optional<double> eps) { eps_override_ = eps; }
    [[nodiscard]] long long updates() const noexcept { return updates_; }

private:
    struct Sample {
        std::vector<double> state;
        int action = 0;
        double reward = 0.0;
        bool done = false;
        std::vector<double> next;
    };

    void learn();

    TrainConfig config_;
    DqnParams dqn_;
    int actions_;
    Rng rng_;
    nn::DenseNet q_;
    nn::DenseNet target_;
    nn::Adam opt_;
    std::vector<Sample> replay_;
    std::size_t replay_next_ = 0;
    long long updates_ = 0;
    long long episodes_seen_ = 0;
    std::optional<double> eps_override_;
};

/// Monte-Carlo policy gradient against a running-mean return baseline.
class ReinforceAgent final : public Agent {
public:
    ReinforceAgent(std::size_t state_dim, int actions, TrainConfig const& config,
                   std::uint64_t seed);

    int act(std::vector<double> const& state, bool explore) override;
    void observe(std::vector<double> const& state, int action, Transition const& tr) override;
    void end_episode() override;

    [[nodiscard]] std::string name() const override { return "reinforce"; }
    [[nodiscard]] std::vector<nn::Param const*> params() const override;
    [[nodiscard]] std::vector<nn::Param*> params() override;
    [[nodiscard]] std::vector<double> action_probs(std::vector<double> const& state) const override;

private:
    TrainConfig config_;
    int actions_;
    Rng rng_;
    nn::DenseNet policy_;
    nn::Adam opt_;
    std::vector<std::vector<double>> states_;
    std::vector<int> actions_taken_;
    std::vector<double> rewards_;
    double baseline_ = 0.0;
    bool baseline_set_ = false;
};

/// One-step TD actor-critic, updated after every transition.
class ActorCriticAgent final : public Agent {
public:
    ActorCriticAgent(std::size_t state_dim, int actions, TrainConfig const& config,
                     std::uint64_t seed);

    int act(std::vector<double> const& state, bool explore) override;
    void observe(std::vector<double> const& state, int action, Transition const& tr) override;

    [[nodiscard]] std::string name() const override { return "actorcritic"; }
    [[nodiscard]] std::vector<nn::Param const*> params() const override;
    [[nodiscard]] std::vector<nn::Param*> params() override;
    [[nodiscard]] std::vector<double> action_probs(std::vector<double> const& state) const override;

private:
    TrainConfig config_;
    int actions_;
    Rng rng_;
    nn::DenseNet actor_;
    nn::DenseNet critic_;
    nn::Adam actor_opt_;
    nn::Adam critic_opt_;
};

/// Always the closest station.
class GreedyAgent final : public Agent {
public:
    explicit GreedyAgent(Environment const& env) : env_(&env) {}

    int act(std::vector<double> const&, bool) override { return env_->greedy_action(); }
    void observe(std::vector<double> const&, int, Transition const&) override {}

    [[nodiscard]] std::string name() const override { return "greedy"; }
    [[nodiscard]] std::vector<nn::Param const*> params() const override { return {}; }
    [[nodiscard]] std::vector<nn::Param*> params() override { return {}; }

private:
    Environment const* env_;
};

// ---------------------------------------------------------------------------
// Training

enum class Method { OpSrl, PpoLag, Ppo, PpoPenalty, Dqn, Reinforce, ActorCritic, Greedy };

[[nodiscard]] Method parse_method(std::string const& name);
[[nodiscard]] std::string method_name(Method m);
[[nodiscard]] bool is_learned(Method m);
[[nodiscard]] std::vector<Method> all_methods();

[[nodiscard]] std::unique_ptr<Agent> make_agent(Method method, Environment const& env,
                                                TrainConfig const& config, std::uint64_t seed);

/// Seed of training episode `index` of a run; shared by every method so runs see the same demand.
[[nodiscard]] std::uint64_t episode_seed(std::uint64_t run_seed, long long index);

struct EpochRecord {
    int epoch = 0;
    double mean_ttt_s = 0.0;
    double mean_cvv = 0.0;
    double mean_return = 0.0;
    double mean_cost = 0.0;
    double lambda = 0.0;
    double predictor_loss = 0.0;  ///< latest train-step loss, NaN before the first
    bool predictor_converged = false;
    EpochStats stats;
};

struct EpisodeResult {
    env::EpisodeMetrics metrics;
    double reward_sum = 0.0;
    double cost_sum = 0.0;
    std::vector<int> actions;
    double decision_s = 0.0;  ///< total wall-clock of action selection and forecast inference
    int decisions = 0;
};

/// Runs one episode. Learning hooks fire only when `learn` is set.
EpisodeResult run_episode(Environment& env, Agent& agent, std::uint64_t seed, bool explore,
                          bool learn);

struct TrainRun {
    std::vector<EpochRecord> curve;
    std::optional<int> predictor_converged_epoch;
};

/// Epoch loop for any environment and agent.
TrainRun train(Environment& env, Agent& agent, TrainConfig const& config, std::uint64_t run_seed,
               predictor::OnlinePredictor const* predictor = nullptr);

/// Everything a learned charging policy needs, owned together.
class Policy {
public:
    /// `epochs` overrides the scenario's epoch count when positive.
    Policy(Scenario const& scenario, Method method, std::uint64_t seed, int epochs = 0);
    Policy(Policy const&) = delete;
    Policy& operator=(Policy const&) = delete;

    TrainRun train();
    EpisodeResult evaluate(std::uint64_t seed, double compliance = 1.0, bool trace = false);

    void save(std::filesystem::path const& path) const;
    void load(std::filesystem::path const& path);

    [[nodiscard]] Method method() const noexcept { return method_; }
    [[nodiscard]] env::ChargingEnv& env() noexcept { return env_; }
    [[nodiscard]] Agent& agent() noexcept { return *agent_; }
    [[nodiscard]] predictor::OnlinePredictor* predictor() noexcept { return predictor_.get(); }

private:
    [[nodiscard]] std::vector<nn::Param const*> checkpoint_params() const;

    Scenario const* scenario_;
    Method method_;
    std::uint64_t seed_;
    TrainConfig config_;
    env::ChargingEnv env_;
    std::unique_ptr<predictor::OnlinePredictor> predictor_;
    CmdpAdapter adapter_;
    std::unique_ptr<Agent> agent_;
};

}  // namespace evrec::srl
