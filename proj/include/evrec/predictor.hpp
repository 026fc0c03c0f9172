#pragma once

#include "evrec/config.hpp"
#include "evrec/nn.hpp"
#include "evrec/rng.hpp"

#include <optional>
#include <vector>

namespace evrec::predictor {

using nn::Matrix;
using nn::Vector;

/// One supervised example: L_e feature vectors in, L_d demand vectors out.
struct Pair {
    std::vector<Vector> inputs;
    Vector last_demand;  ///< demand observed at the last input step; first decoder input
    std::vector<Vector> targets;
};

/// LSTM encoder-decoder with a linear output head.
class Seq2Seq {
public:
    Seq2Seq() = default;
    Seq2Seq(int feature_dim, int demand_dim, PredictorConfig const& config, Rng& rng);

    /// Autoregressive forecast of `decoder_len` demand vectors. Dropout is off.
    [[nodiscard]] std::vector<Vector> predict(std::vector<Vector> const& history,
                                              Vector const& last_demand) const;

    /// Teacher-forced mean squared error over a batch.
    [[nodiscard]] double loss(std::vector<Pair const*> const& batch) const;

    /// Loss and parameter gradients (encoder, decoder, head) for a batch.
    double loss_and_grads(std::vector<Pair const*> const& batch, nn::Grads& enc, nn::Grads& dec,
                          nn::Grads& head, Rng* dropout_rng) const;

    [[nodiscard]] nn::LstmStack& encoder() noexcept { return encoder_; }
    [[nodiscard]] nn::LstmStack& decoder() noexcept { return decoder_; }
    [[nodiscard]] nn::DenseNet& head() noexcept { return head_; }
    [[nodiscard]] nn::LstmStack const& encoder() const noexcept { return encoder_; }
    [[nodiscard]] nn::LstmStack const& decoder() const noexcept { return decoder_; }
    [[nodiscard]] nn::DenseNet const& head() const noexcept { return head_; }
    [[nodiscard]] int encoder_len() const noexcept { return encoder_len_; }
    [[nodiscard]] int decoder_len() const noexcept { return decoder_len_; }
    [[nodiscard]] int demand_dim() const noexcept { return demand_dim_; }

    [[nodiscard]] std::vector<nn::Param*> all_params();
    [[nodiscard]] std::vector<nn::Param const*> all_params() const;

private:
    int feature_dim_ = 0;
    int demand_dim_ = 0;
    int encoder_len_ = 0;
    int decoder_len_ = 0;
    nn::LstmStack encoder_;
    nn::LstmStack decoder_;
    nn::DenseNet head_;
};

/// Adam over the three parameter groups of a Seq2Seq model.
class Seq2SeqTrainer {
public:
    Seq2SeqTrainer() = default;
    Seq2SeqTrainer(Seq2Seq const& model, double lr);
    /// One minibatch update; returns the batch loss before the update.
    double step(Seq2Seq& model, std::vector<Pair const*> const& batch, Rng* dropout_rng);

private:
    nn::Adam enc_;
    nn::Adam dec_;
    nn::Adam head_;
};

/// True when the smoothed loss changed by less than `tol` (relative) over the last `window` values.
[[nodiscard]] bool converged(std::vector<double> const& losses, int window = 10, double tol = 0.02);

/// Exponential moving average used by the convergence check.
[[nodiscard]] std::vector<double> smooth(std::vector<double> const& xs, double alpha = 0.3);

/// Pair assembled from an episode's slow-timescale history, indexed by step `k`.
/// Requires k >= decoder_len + encoder_len - 1.
[[nodiscard]] Pair make_pair(std::vector<Vector> const& features, std::vector<Vector> const& demand,
                             std::size_t k, int encoder_len, int decoder_len);

/// Online forecaster: collects snapshots, trains on its trigger, and produces the
/// augmentation vector for the agent state.
class OnlinePredictor {
public:
    OnlinePredictor(int stations, std::vector<int> piles, PredictorConfig const& config,
                    std::uint64_t seed);

    void begin_episode();
    /// When off, snapshots only feed inference: no pairs are stored and no training runs.
    void set_training(bool on) noexcept { training_ = on; }
    /// Adds one slow-timescale observation; may assemble a pair and run a train step.
    /// Returns the train-step loss when training happened.
    std::optional<double> add_snapshot(std::vector<double> const& features,
                                       std::vector<double> const& demand);

    /// Flattened L_d x stations forecast, clipped at 0 and divided by pile count.
    /// Zeros until L_e snapshots exist in the current episode.
    [[nodiscard]] std::vector<double> augmentation() const;
    [[nodiscard]] std::size_t augmentation_dim() const;

    [[nodiscard]] bool converged() const;
    [[nodiscard]] std::vector<double> const& losses() const noexcept { return losses_; }
    [[nodiscard]] std::size_t buffer_size() const noexcept { return buffer_.size(); }
    [[nodiscard]] Seq2Seq& model() noexcept { return model_; }
    [[nodiscard]] Seq2Seq const& model() const noexcept { return model_; }

    /// Runs one train step (config.iters minibatch updates) on the buffer.
    double train_step();

private:
    int stations_;
    std::vector<int> piles_;
    PredictorConfig config_;
    Rng rng_;
    Seq2Seq model_;
    Seq2SeqTrainer trainer_;
    std::vector<Vector> features_;
    std::vector<Vector> demand_;  ///< normalized by piles
    std::vector<Pair> buffer_;
    std::vector<double> losses_;
    bool training_ = true;
    mutable std::optional<std::vector<double>> cached_;
};

}  // namespace evrec::predictor
