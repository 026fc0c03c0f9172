#include "evrec/srl.hpp"

#include "evrec/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <utility>

namespace evrec::srl {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

nn::Matrix column(std::vector<double> const& x) {
    return Eigen::Map<nn::Vector const>(x.data(), static_cast<Eigen::Index>(x.size()));
}

std::vector<int> net_sizes(std::size_t in, std::vector<int> const& hidden, int out) {
    std::vector<int> sizes{static_cast<int>(in)};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(out);
    return sizes;
}

void append(std::vector<nn::Param const*>& out, std::vector<nn::Param> const& ps) {
    for (auto const& p : ps) out.push_back(&p);
}

void append(std::vector<nn::Param*>& out, std::vector<nn::Param>& ps) {
    for (auto& p : ps) out.push_back(&p);
}

int pick(nn::Vector const& logits, Rng& rng, bool explore) {
    if (!explore) return nn::argmax(logits);
    return nn::sample(nn::categorical(logits), rng);
}

std::vector<double> probs_of(nn::DenseNet const& net, std::vector<double> const& state) {
    auto const d = nn::categorical(net.forward(column(state)).col(0));
    return {d.probs.data(), d.probs.data() + d.probs.size()};
}

/// Gradient of −(g·log π(a) + β·H) with respect to the logits of one sample.
nn::Vector policy_logit_grad(nn::Vector const& log_probs, int action, double g, double beta) {
    nn::Vector const p = log_probs.array().exp();
    double const entropy = -(p.array() * log_probs.array()).sum();
    nn::Vector d_logp = -p;
    d_logp[action] += 1.0;
    nn::Vector const d_entropy = -(p.array() * (log_probs.array() + entropy)).matrix();
    return -(g * d_logp + beta * d_entropy);
}

}  // namespace

std::vector<double> compute_gae(std::vector<double> const& rewards,
                                std::vector<double> const& values, double gamma, double eta) {
    if (values.size() != rewards.size() + 1) {
        throw ShapeError("compute_gae: expected " + std::to_string(rewards.size() + 1) +
                         " values, got " + std::to_string(values.size()));
    }
    std::vector<double> adv(rewards.size());
    double acc = 0.0;
    for (std::size_t i = rewards.size(); i-- > 0;) {
        double const delta = rewards[i] + gamma * values[i + 1] - values[i];
        acc = delta + gamma * eta * acc;
        adv[i] = acc;
    }
    return adv;
}

std::vector<double> combined_advantage(std::vector<double> const& reward_adv,
                                       std::vector<double> const& cost_adv, double lambda) {
    if (reward_adv.size() != cost_adv.size()) throw ShapeError("combined_advantage: length mismatch");
    std::vector<double> out(reward_adv.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = reward_adv[i] - lambda * cost_adv[i];
    return out;
}

double lagrangian_update(double lambda, double cost_return, double limit, double lr) {
    return std::max(0.0, lambda + lr * (cost_return - limit));
}

double clipped_surrogate(double ratio, double advantage, double clip) {
    double const clipped = std::clamp(ratio, 1.0 - clip, 1.0 + clip);
    return std::min(ratio * advantage, clipped * advantage);
}

void normalize(std::vector<double>& xs) {
    if (xs.empty()) return;
    double const mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size());
    double const sd = std::sqrt(var);
    for (double& x : xs) x = sd > 1e-8 ? (x - mean) / sd : x - mean;
}

std::vector<double> discounted_returns(std::vector<double> const& xs, double gamma) {
    std::vector<double> out(xs.size());
    double acc = 0.0;
    for (std::size_t i = xs.size(); i-- > 0;) {
        acc = xs[i] + gamma * acc;
        out[i] = acc;
    }
    return out;
}

// ---------------------------------------------------------------------------

CmdpAdapter::CmdpAdapter(env::ChargingEnv& env, predictor::OnlinePredictor* predictor)
    : env_(&env), predictor_(predictor),
      tail_(static_cast<std::size_t>(env.scenario().config.predictor.decoder_len) *
            env.scenario().station_count()) {
    if (predictor_ && predictor_->augmentation_dim() != tail_) {
        throw ShapeError("predictor output width does not match the scenario");
    }
}

void CmdpAdapter::set_predictor_training(bool on) {
    if (predictor_) predictor_->set_training(on);
}

std::size_t CmdpAdapter::state_dim() const { return env_->state_dim() + tail_; }

std::vector<double> CmdpAdapter::reset(std::uint64_t seed) {
    if (predictor_) predictor_->begin_episode();
    fed_ = 0;
    losses_.clear();
    auto state = env_->reset(seed);
    feed_snapshots();
    return augment(std::move(state));
}

Transition CmdpAdapter::step(int action) {
    auto out = env_->step(action);
    feed_snapshots();
    Transition tr{out.reward, out.cost, out.done, {}};
    if (!out.done) tr.state = augment(std::move(out.state));
    return tr;
}

std::optional<env::EpisodeMetrics> CmdpAdapter::episode_metrics() const {
    if (!env_->done()) return std::nullopt;
    return env_->metrics();
}

void CmdpAdapter::feed_snapshots() {
    auto const& snaps = env_->snapshots();
    for (; fed_ < snaps.size(); ++fed_) {
        if (!predictor_) continue;
        if (auto loss = predictor_->add_snapshot(snaps[fed_].features, snaps[fed_].demand)) {
            losses_.push_back(*loss);
        }
    }
}

std::vector<double> CmdpAdapter::augment(std::vector<double> state) {
    auto const t0 = Clock::now();
    if (predictor_) {
        auto const tail = predictor_->augmentation();
        state.insert(state.end(), tail.begin(), tail.end());
    } else {
        state.resize(state.size() + tail_, 0.0);
    }
    inference_s_ = predictor_ ? seconds_since(t0) : 0.0;
    return state;
}

// ---------------------------------------------------------------------------

PpoAgent::PpoAgent(std::size_t state_dim, int actions, TrainConfig const& config, PpoMode mode,
                   std::uint64_t seed)
    : config_(config), mode_(mode), actions_(actions), rng_(stream_seed(seed, 1)) {
    Rng init(stream_seed(seed, 2));
    actor_ = nn::DenseNet(net_sizes(state_dim, config.hidden, actions), init, "actor");
    reward_critic_ = nn::DenseNet(net_sizes(state_dim, config.hidden, 1), init, "reward_critic");
    cost_critic_ = nn::DenseNet(net_sizes(state_dim, config.hidden, 1), init, "cost_critic");
    actor_opt_ = nn::Adam(actor_.params(), {config.actor_lr});
    reward_opt_ = nn::Adam(reward_critic_.params(), {config.critic_lr});
    cost_opt_ = nn::Adam(cost_critic_.params(), {config.critic_lr});
    lambda_.value(0, 0) = mode == PpoMode::Lagrangian ? config.lambda_init : 0.0;
}

std::string PpoAgent::name() const {
    switch (mode_) {
        case PpoMode::RewardOnly: return "ppo";
        case PpoMode::Lagrangian: return "ppo-lagrangian";
        case PpoMode::Penalty: return "ppo-penalty";
    }
    return "ppo";
}

std::vector<nn::Param const*> PpoAgent::params() const {
    std::vector<nn::Param const*> out;
    append(out, actor_.params());
    append(out, reward_critic_.params());
    append(out, cost_critic_.params());
    out.push_back(&lambda_);
    out.push_back(&calibration_);
    return out;
}

std::vector<nn::Param*> PpoAgent::params() {
    std::vector<nn::Param*> out;
    append(out, actor_.params());
    append(out, reward_critic_.params());
    append(out, cost_critic_.params());
    out.push_back(&lambda_);
    out.push_back(&calibration_);
    return out;
}

std::vector<double> PpoAgent::action_probs(std::vector<double> const& state) const {
    return probs_of(actor_, state);
}

int PpoAgent::act(std::vector<double> const& state, bool explore) {
    nn::Vector const logits = actor_.forward(column(state)).col(0);
    int const a = pick(logits, rng_, explore);
    last_logp_ = nn::categorical(logits).log_probs[a];
    return a;
}

void PpoAgent::observe(std::vector<double> const& state, int action, Transition const& tr) {
    current_.states.push_back(state);
    current_.actions.push_back(action);
    current_.logp.push_back(last_logp_);
    current_.rewards.push_back(tr.reward);
    current_.costs.push_back(tr.cost);
}

void PpoAgent::end_episode() {
    if (!current_.states.empty()) episodes_.push_back(std::move(current_));
    current_ = {};
}

double PpoAgent::value(nn::DenseNet const& net, std::vector<double> const& s) const {
    return net.forward(column(s))(0, 0);
}

double PpoAgent::fit_critic(nn::DenseNet& net, nn::Adam& opt, nn::Matrix const& states,
                            std::vector<double> const& targets) {
    auto const n = static_cast<std::size_t>(states.cols());
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    auto const b = std::min<std::size_t>(n, static_cast<std::size_t>(config_.batch_size));
    double total = 0.0;
    for (int it = 0; it < config_.update_iters; ++it) {
        rng_.shuffle(idx.begin(), idx.end());
        nn::Matrix x(states.rows(), static_cast<Eigen::Index>(b));
        nn::Matrix y(1, static_cast<Eigen::Index>(b));
        for (std::size_t j = 0; j < b; ++j) {
            x.col(static_cast<Eigen::Index>(j)) = states.col(static_cast<Eigen::Index>(idx[j]));
            y(0, static_cast<Eigen::Index>(j)) = targets[idx[j]];
        }
        nn::DenseNet::Cache cache;
        nn::Matrix const diff = net.forward(x, &cache) - y;
        double const loss = diff.squaredNorm() / static_cast<double>(b);
        if (!std::isfinite(loss)) throw ValidationError(net.params().front().name + ": critic loss is not finite");
        auto grads = nn::zero_grads(net.params());
        net.backward(cache, 2.0 * diff / static_cast<double>(b), grads);
        opt.step(net.params(), grads);
        total += loss;
    }
    return total / config_.update_iters;
}

EpochStats PpoAgent::end_epoch() {
    end_episode();
    EpochStats stats;
    if (episodes_.empty()) {
        stats.lambda = lambda();
        return stats;
    }

    if (mode_ == PpoMode::Penalty && calibration_.value(0, 0) == 0.0) {
        double rmin = std::numeric_limits<double>::infinity(), rmax = -rmin;
        double cmin = rmin, cmax = -rmin;
        for (auto const& ep : episodes_) {
            for (double r : ep.rewards) rmin = std::min(rmin, r), rmax = std::max(rmax, r);
            for (double c : ep.costs) cmin = std::min(cmin, c), cmax = std::max(cmax, c);
        }
        calibration_.value << 1.0, rmin, rmax, cmin, cmax;
    }
    auto scaled = [](double x, double lo, double hi) { return hi > lo ? (x - lo) / (hi - lo) : 0.0; };

    double cost_sum = 0.0;
    for (auto const& ep : episodes_) {
        cost_sum += config_.discounted_cost ? discounted_returns(ep.costs, config_.gamma).front()
                                            : std::accumulate(ep.costs.begin(), ep.costs.end(), 0.0);
    }
    stats.cost_return = cost_sum / static_cast<double>(episodes_.size());
    if (mode_ == PpoMode::Lagrangian) {
        set_lambda(lagrangian_update(lambda(), stats.cost_return, config_.cost_limit, config_.lambda_lr));
    }
    stats.lambda = lambda();

    std::size_t n = 0;
    for (auto const& ep : episodes_) n += ep.states.size();
    auto const dim = static_cast<Eigen::Index>(episodes_.front().states.front().size());
    nn::Matrix states(dim, static_cast<Eigen::Index>(n));
    std::vector<int> actions;
    std::vector<double> old_logp, adv_r, adv_c, ret_r, ret_c;
    for (auto const& ep : episodes_) {
        auto const t0 = static_cast<Eigen::Index>(actions.size());
        auto const len = static_cast<Eigen::Index>(ep.states.size());
        for (Eigen::Index i = 0; i < len; ++i) states.col(t0 + i) = column(ep.states[i]);
        nn::Matrix const block = states.middleCols(t0, len);
        nn::Matrix const vr_m = reward_critic_.forward(block);
        nn::Matrix const vc_m = cost_critic_.forward(block);
        std::vector<double> vr(vr_m.data(), vr_m.data() + len), vc(vc_m.data(), vc_m.data() + len);
        vr.push_back(0.0);
        vc.push_back(0.0);

        std::vector<double> rewards = ep.rewards;
        if (mode_ == PpoMode::Penalty) {
            auto const& c = calibration_.value;
            for (std::size_t i = 0; i < rewards.size(); ++i) {
                rewards[i] = scaled(ep.rewards[i], c(0, 1), c(0, 2)) - scaled(ep.costs[i], c(0, 3), c(0, 4));
            }
        }
        auto const ar = compute_gae(rewards, vr, config_.gamma, config_.gae_lambda);
        auto const ac = compute_gae(ep.costs, vc, config_.gamma, config_.gae_lambda);
        for (Eigen::Index i = 0; i < len; ++i) {
            ret_r.push_back(ar[i] + vr[i]);
            ret_c.push_back(ac[i] + vc[i]);
        }
        adv_r.insert(adv_r.end(), ar.begin(), ar.end());
        adv_c.insert(adv_c.end(), ac.begin(), ac.end());
        actions.insert(actions.end(), ep.actions.begin(), ep.actions.end());
        old_logp.insert(old_logp.end(), ep.logp.begin(), ep.logp.end());
    }
    episodes_.clear();

    if (config_.normalize_advantages) {
        normalize(adv_r);
        normalize(adv_c);
    }
    auto const adv = mode_ == PpoMode::Lagrangian ? combined_advantage(adv_r, adv_c, lambda()) : adv_r;

    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    auto const b = std::min<std::size_t>(n, static_cast<std::size_t>(config_.batch_size));
    double const eps = config_.clip;
    double actor_total = 0.0, entropy_total = 0.0;
    for (int it = 0; it < config_.update_iters; ++it) {
        rng_.shuffle(idx.begin(), idx.end());
        nn::Matrix x(dim, static_cast<Eigen::Index>(b));
        for (std::size_t j = 0; j < b; ++j) {
            x.col(static_cast<Eigen::Index>(j)) = states.col(static_cast<Eigen::Index>(idx[j]));
        }
        nn::DenseNet::Cache cache;
        nn::Matrix const lp = nn::log_softmax(actor_.forward(x, &cache));
        nn::Matrix d(lp.rows(), lp.cols());
        double surrogate = 0.0, entropy = 0.0, ratio_dev = 0.0;
        for (std::size_t j = 0; j < b; ++j) {
            auto const col = static_cast<Eigen::Index>(j);
            auto const k = idx[j];
            double const ratio = std::exp(lp(actions[k], col) - old_logp[k]);
            double const a = adv[k];
            surrogate += clipped_surrogate(ratio, a, eps);
            ratio_dev += std::abs(ratio - 1.0);
            nn::Vector const lpc = lp.col(col);
            entropy -= (lpc.array().exp() * lpc.array()).sum();
            bool const unclipped = ratio * a <= std::clamp(ratio, 1.0 - eps, 1.0 + eps) * a;
            double const g = unclipped ? a * ratio : 0.0;
            d.col(col) = policy_logit_grad(lpc, actions[k], g, config_.entropy_coef) / static_cast<double>(b);
        }
        surrogate /= static_cast<double>(b);
        entropy /= static_cast<double>(b);
        double const loss = -surrogate - config_.entropy_coef * entropy;
        if (!std::isfinite(loss)) {
            throw ValidationError("actor loss is not finite (surrogate " + std::to_string(surrogate) +
                                  ", entropy " + std::to_string(entropy) + ")");
        }
        if (it == 0) {
            stats.surrogate_first = surrogate;
            stats.ratio_dev_first = ratio_dev / static_cast<double>(b);
        }
        auto grads = nn::zero_grads(actor_.params());
        actor_.backward(cache, d, grads);
        actor_opt_.step(actor_.params(), grads);
        actor_total += loss;
        entropy_total += entropy;
    }
    stats.actor_loss = actor_total / config_.update_iters;
    stats.entropy = entropy_total / config_.update_iters;
    stats.reward_critic_loss = fit_critic(reward_critic_, reward_opt_, states, ret_r);
    if (mode_ != PpoMode::RewardOnly && mode_ != PpoMode::Penalty) {
        stats.cost_critic_loss = fit_critic(cost_critic_, cost_opt_, states, ret_c);
    }
    return stats;
}

// ---------------------------------------------------------------------------

DqnAgent::DqnAgent(std::size_t state_dim, int actions, TrainConfig const& config,
                   std::uint64_t seed, DqnParams params)
    : config_(config), dqn_(params), actions_(actions), rng_(stream_seed(seed, 1)) {
    Rng init(stream_seed(seed, 2));
    q_ = nn::DenseNet(net_sizes(state_dim, config.hidden, actions), init, "q");
    target_ = q_;
    opt_ = nn::Adam(q_.params(), {config.critic_lr});
}

std::vector<nn::Param const*> DqnAgent::params() const {
    std::vector<nn::Param const*> out;
    append(out, q_.params());
    return out;
}

std::vector<nn::Param*> DqnAgent::params() {
    std::vector<nn::Param*> out;
    append(out, q_.params());
    return out;
}

double DqnAgent::epsilon() const {
    if (eps_override_) return *eps_override_;
    double const total = dqn_.anneal_fraction * config_.epochs * config_.episodes_per_epoch;
    double const frac = total > 0 ? std::min(1.0, static_cast<double>(episodes_seen_) / total) : 1.0;
    return dqn_.eps_start + (dqn_.eps_end - dqn_.eps_start) * frac;
}

int DqnAgent::act(std::vector<double> const& state, bool explore) {
    if (explore && rng_.uniform() < epsilon()) {
        return static_cast<int>(rng_.below(static_cast<std::uint64_t>(actions_)));
    }
    return nn::argmax(q_.forward(column(state)).col(0));
}

void DqnAgent::observe(std::vector<double> const& state, int action, Transition const& tr) {
    Sample s{state, action, tr.reward, tr.done, tr.state};
    if (replay_.size() < dqn_.replay_capacity) {
        replay_.push_back(std::move(s));
    } else {
        replay_[replay_next_] = std::move(s);
    }
    replay_next_ = (replay_next_ + 1) % dqn_.replay_capacity;
    if (replay_.size() >= static_cast<std::size_t>(config_.batch_size)) learn();
}

void DqnAgent::end_episode() { ++episodes_seen_; }

void DqnAgent::learn() {
    auto const b = static_cast<Eigen::Index>(config_.batch_size);
    auto const dim = static_cast<Eigen::Index>(replay_.front().state.size());
    nn::Matrix x(dim, b);
    nn::Matrix next = nn::Matrix::Zero(dim, b);
    std::vector<Sample const*> batch;
    for (Eigen::Index j = 0; j < b; ++j) {
        auto const& s = replay_[rng_.below(replay_.size())];
        batch.push_back(&s);
        x.col(j) = column(s.state);
        if (!s.done) next.col(j) = column(s.next);
    }
    nn::Matrix const q_next = target_.forward(next);
    nn::DenseNet::Cache cache;
    nn::Matrix const q = q_.forward(x, &cache);
    nn::Matrix d = nn::Matrix::Zero(q.rows(), q.cols());
    for (Eigen::Index j = 0; j < b; ++j) {
        auto const& s = *batch[j];
        double const y = s.reward + (s.done ? 0.0 : config_.gamma * q_next.col(j).maxCoeff());
        d(s.action, j) = 2.0 * (q(s.action, j) - y) / static_cast<double>(b);
    }
    auto grads = nn::zero_grads(q_.params());
    q_.backward(cache, d, grads);
    opt_.step(q_.params(), grads);
    if (++updates_ % dqn_.target_sync == 0) target_ = q_;
}

// ---------------------------------------------------------------------------

ReinforceAgent::ReinforceAgent(std::size_t state_dim, int actions, TrainConfig const& config,
                               std::uint64_t seed)
    : config_(config), actions_(actions), rng_(stream_seed(seed, 1)) {
    Rng init(stream_seed(seed, 2));
    policy_ = nn::DenseNet(net_sizes(state_dim, config.hidden, actions), init, "policy");
    opt_ = nn::Adam(policy_.params(), {config.actor_lr});
}

std::vector<nn::Param const*> ReinforceAgent::params() const {
    std::vector<nn::Param const*> out;
    append(out, policy_.params());
    return out;
}

std::vector<nn::Param*> ReinforceAgent::params() {
    std::vector<nn::Param*> out;
    append(out, policy_.params());
    return out;
}

std::vector<double> ReinforceAgent::action_probs(std::vector<double> const& state) const {
    return probs_of(policy_, state);
}

int ReinforceAgent::act(std::vector<double> const& state, bool explore) {
    return pick(policy_.forward(column(state)).col(0), rng_, explore);
}

void ReinforceAgent::observe(std::vector<double> const& state, int action, Transition const& tr) {
    states_.push_back(state);
    actions_taken_.push_back(action);
    rewards_.push_back(tr.reward);
}

void ReinforceAgent::end_episode() {
    if (states_.empty()) return;
    auto const returns = discounted_returns(rewards_, config_.gamma);
    double const mean_return =
        std::accumulate(returns.begin(), returns.end(), 0.0) / static_cast<double>(returns.size());
    if (!baseline_set_) {
        baseline_ = mean_return;
        baseline_set_ = true;
    }

    auto const n = static_cast<Eigen::Index>(states_.size());
    nn::Matrix x(static_cast<Eigen::Index>(states_.front().size()), n);
    for (Eigen::Index i = 0; i < n; ++i) x.col(i) = column(states_[i]);
    nn::DenseNet::Cache cache;
    nn::Matrix const lp = nn::log_softmax(policy_.forward(x, &cache));
    nn::Matrix d(lp.rows(), n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double const g = returns[i] - baseline_;
        d.col(i) = policy_logit_grad(lp.col(i), actions_taken_[i], g, config_.entropy_coef) /
                   static_cast<double>(n);
    }
    auto grads = nn::zero_grads(policy_.params());
    policy_.backward(cache, d, grads);
    opt_.step(policy_.params(), grads);

    baseline_ += 0.05 * (mean_return - baseline_);
    states_.clear();
    actions_taken_.clear();
    rewards_.clear();
}

// ---------------------------------------------------------------------------

ActorCriticAgent::ActorCriticAgent(std::size_t state_dim, int actions, TrainConfig const& config,
                                   std::uint64_t seed)
    : config_(config), actions_(actions), rng_(stream_seed(seed, 1)) {
    Rng init(stream_seed(seed, 2));
    actor_ = nn::DenseNet(net_sizes(state_dim, config.hidden, actions), init, "actor");
    critic_ = nn::DenseNet(net_sizes(state_dim, config.hidden, 1), init, "critic");
    actor_opt_ = nn::Adam(actor_.params(), {config.actor_lr});
    critic_opt_ = nn::Adam(critic_.params(), {config.critic_lr});
}

std::vector<nn::Param const*> ActorCriticAgent::params() const {
    std::vector<nn::Param const*> out;
    append(out, actor_.params());
    append(out, critic_.params());
    return out;
}

std::vector<nn::Param*> ActorCriticAgent::params() {
    std::vector<nn::Param*> out;
    append(out, actor_.params());
    append(out, critic_.params());
    return out;
}

std::vector<double> ActorCriticAgent::action_probs(std::vector<double> const& state) const {
    return probs_of(actor_, state);
}

int ActorCriticAgent::act(std::vector<double> const& state, bool explore) {
    return pick(actor_.forward(column(state)).col(0), rng_, explore);
}

void ActorCriticAgent::observe(std::vector<double> const& state, int action, Transition const& tr) {
    nn::Matrix const x = column(state);
    double const next_v = tr.done ? 0.0 : critic_.forward(column(tr.state))(0, 0);
    nn::DenseNet::Cache ccache;
    double const v = critic_.forward(x, &ccache)(0, 0);
    double const target = tr.reward + config_.gamma * next_v;
    double const delta = target - v;

    auto cgrads = nn::zero_grads(critic_.params());
    critic_.backward(ccache, nn::Matrix::Constant(1, 1, -2.0 * delta), cgrads);
    critic_opt_.step(critic_.params(), cgrads);

    nn::DenseNet::Cache acache;
    nn::Matrix const lp = nn::log_softmax(actor_.forward(x, &acache));
    nn::Matrix const d = policy_logit_grad(lp.col(0), action, delta, config_.entropy_coef);
    auto agrads = nn::zero_grads(actor_.params());
    actor_.backward(acache, d, agrads);
    actor_opt_.step(actor_.params(), agrads);
}

// ---------------------------------------------------------------------------

Method parse_method(std::string const& name) {
    for (auto m : all_methods()) {
        if (method_name(m) == name) return m;
    }
    throw ValidationError("unknown method '" + name +
                          "' (expected opsrl, ppolag, ppo, ppopenalty, dqn, reinforce, actorcritic or greedy)");
}

std::string method_name(Method m) {
    switch (m) {
        case Method::OpSrl: return "opsrl";
        case Method::PpoLag: return "ppolag";
        case Method::Ppo: return "ppo";
        case Method::PpoPenalty: return "ppopenalty";
        case Method::Dqn: return "dqn";
        case Method::Reinforce: return "reinforce";
        case Method::ActorCritic: return "actorcritic";
        case Method::Greedy: return "greedy";
    }
    return "unknown";
}

bool is_learned(Method m) { return m != Method::Greedy; }

std::vector<Method> all_methods() {
    return {Method::OpSrl, Method::PpoLag, Method::Ppo,         Method::PpoPenalty,
            Method::Dqn,   Method::Reinforce, Method::ActorCritic, Method::Greedy};
}

std::unique_ptr<Agent> make_agent(Method method, Environment const& env, TrainConfig const& config,
                                  std::uint64_t seed) {
    auto const dim = env.state_dim();
    int const a = env.action_count();
    switch (method) {
        case Method::OpSrl:
        case Method::PpoLag: return std::make_unique<PpoAgent>(dim, a, config, PpoMode::Lagrangian, seed);
        case Method::Ppo: return std::make_unique<PpoAgent>(dim, a, config, PpoMode::RewardOnly, seed);
        case Method::PpoPenalty: return std::make_unique<PpoAgent>(dim, a, config, PpoMode::Penalty, seed);
        case Method::Dqn: return std::make_unique<DqnAgent>(dim, a, config, seed);
        case Method::Reinforce: return std::make_unique<ReinforceAgent>(dim, a, config, seed);
        case Method::ActorCritic: return std::make_unique<ActorCriticAgent>(dim, a, config, seed);
        case Method::Greedy: return std::make_unique<GreedyAgent>(env);
    }
    throw ValidationError("unknown method");
}

std::uint64_t episode_seed(std::uint64_t run_seed, long long index) {
    return stream_seed(run_seed, 1000 + static_cast<std::uint64_t>(index));
}

EpisodeResult run_episode(Environment& env, Agent& agent, std::uint64_t seed, bool explore,
                          bool learn) {
    EpisodeResult res;
    auto state = env.reset(seed);
    while (true) {
        auto const t0 = Clock::now();
        int const a = agent.act(state, explore);
        res.decision_s += seconds_since(t0) + env.last_inference_s();
        ++res.decisions;
        res.actions.push_back(a);
        auto tr = env.step(a);
        res.reward_sum += tr.reward;
        res.cost_sum += tr.cost;
        if (learn) agent.observe(state, a, tr);
        if (tr.done) break;
        state = std::move(tr.state);
    }
    if (learn) agent.end_episode();
    if (auto m = env.episode_metrics()) res.metrics = *m;
    return res;
}

TrainRun train(Environment& env, Agent& agent, TrainConfig const& config, std::uint64_t run_seed,
               predictor::OnlinePredictor const* predictor) {
    config.validate();
    TrainRun run;
    long long index = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        EpochRecord rec;
        rec.epoch = epoch + 1;
        try {
            for (int ep = 0; ep < config.episodes_per_epoch; ++ep) {
                auto const res = run_episode(env, agent, episode_seed(run_seed, index++), true, true);
                rec.mean_ttt_s += res.metrics.ttt_s;
                rec.mean_cvv += res.metrics.cvv;
                rec.mean_return += res.reward_sum;
                rec.mean_cost += res.cost_sum;
            }
            rec.stats = agent.end_epoch();
        } catch (std::exception const&) {
            std::throw_with_nested(StateError("training failed in epoch " + std::to_string(epoch + 1) +
                                              " (seed " + std::to_string(run_seed) + ")"));
        }
        double const k = config.episodes_per_epoch;
        rec.mean_ttt_s /= k;
        rec.mean_cvv /= k;
        rec.mean_return /= k;
        rec.mean_cost /= k;
        rec.lambda = agent.lambda();
        rec.predictor_loss = std::numeric_limits<double>::quiet_NaN();
        if (predictor) {
            if (!predictor->losses().empty()) rec.predictor_loss = predictor->losses().back();
            rec.predictor_converged = predictor->converged();
            if (rec.predictor_converged && !run.predictor_converged_epoch) {
                run.predictor_converged_epoch = rec.epoch;
            }
        }
        run.curve.push_back(rec);
    }
    return run;
}

// ---------------------------------------------------------------------------

namespace {

std::unique_ptr<predictor::OnlinePredictor> make_predictor(Scenario const& scenario, Method method,
                                                           std::uint64_t seed) {
    if (method != Method::OpSrl || !scenario.config.predictor.enabled) return nullptr;
    std::vector<int> piles;
    for (auto const& s : scenario.config.stations) piles.push_back(s.piles);
    return std::make_unique<predictor::OnlinePredictor>(static_cast<int>(piles.size()), piles,
                                                        scenario.config.predictor, stream_seed(seed, 3));
}

}  // namespace

Policy::Policy(Scenario const& scenario, Method method, std::uint64_t seed, int epochs)
    : scenario_(&scenario), method_(method), seed_(seed), config_(scenario.config.srl),
      env_(scenario), predictor_(make_predictor(scenario, method, seed)),
      adapter_(env_, predictor_.get()) {
    if (epochs > 0) config_.epochs = epochs;
    agent_ = make_agent(method, adapter_, config_, stream_seed(seed, 4));
}

TrainRun Policy::train() {
    if (!is_learned(method_)) return {};
    env_.set_compliance(1.0);
    env_.set_event_log(false);
    adapter_.set_predictor_training(true);
    return srl::train(adapter_, *agent_, config_, seed_, predictor_.get());
}

EpisodeResult Policy::evaluate(std::uint64_t seed, double compliance, bool trace) {
    env_.set_compliance(compliance);
    env_.set_event_log(trace);
    adapter_.set_predictor_training(false);
    return run_episode(adapter_, *agent_, seed, false, false);
}

std::vector<nn::Param const*> Policy::checkpoint_params() const {
    auto out = std::as_const(*agent_).params();
    if (predictor_) {
        for (auto const* p : std::as_const(*predictor_).model().all_params()) out.push_back(p);
    }
    return out;
}

void Policy::save(std::filesystem::path const& path) const {
    nn::save_checkpoint(path, checkpoint_params());
}

void Policy::load(std::filesystem::path const& path) {
    auto params = agent_->params();
    if (predictor_) {
        for (auto* p : predictor_->model().all_params()) params.push_back(p);
    }
    nn::load_checkpoint(path, params);
}

}  // namespace evrec::srl
