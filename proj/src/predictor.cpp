#include "evrec/predictor.hpp"

#include "evrec/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace evrec::predictor {

Seq2Seq::Seq2Seq(int feature_dim, int demand_dim, PredictorConfig const& config, Rng& rng)
    : feature_dim_(feature_dim), demand_dim_(demand_dim), encoder_len_(config.encoder_len),
      decoder_len_(config.decoder_len),
      encoder_(feature_dim, config.hidden, config.layers, config.dropout, rng, "predictor.enc"),
      decoder_(demand_dim, config.hidden, config.layers, config.dropout, rng, "predictor.dec"),
      head_({config.hidden, demand_dim}, rng, "predictor.head") {}

std::vector<nn::Param*> Seq2Seq::all_params() {
    std::vector<nn::Param*> out;
    for (auto* group : {&encoder_.params(), &decoder_.params(), &head_.params()}) {
        for (auto& p : *group) out.push_back(&p);
    }
    return out;
}

std::vector<nn::Param const*> Seq2Seq::all_params() const {
    std::vector<nn::Param const*> out;
    for (auto const* group : {&encoder_.params(), &decoder_.params(), &head_.params()}) {
        for (auto const& p : *group) out.push_back(&p);
    }
    return out;
}

std::vector<Vector> Seq2Seq::predict(std::vector<Vector> const& history,
                                     Vector const& last_demand) const {
    if (static_cast<int>(history.size()) != encoder_len_) {
        throw ShapeError("predict: history must hold exactly " + std::to_string(encoder_len_) +
                         " steps, got " + std::to_string(history.size()));
    }
    if (last_demand.size() != demand_dim_) throw ShapeError("predict: demand dimension");
    std::vector<Matrix> xs;
    for (auto const& h : history) {
        if (h.size() != feature_dim_) throw ShapeError("predict: feature dimension");
        xs.push_back(h);
    }
    nn::LstmStack::State state;
    (void)encoder_.forward(xs, encoder_.zero_state(1), state);
    std::vector<Vector> out;
    Matrix input = last_demand;
    for (int t = 0; t < decoder_len_; ++t) {
        auto const h = decoder_.forward({input}, state, state);
        Matrix const y = head_.forward(h.back());
        out.emplace_back(y.col(0));
        input = y;
    }
    return out;
}

double Seq2Seq::loss(std::vector<Pair const*> const& batch) const {
    nn::Grads enc, dec, head;
    enc = nn::zero_grads(encoder_.params());
    dec = nn::zero_grads(decoder_.params());
    head = nn::zero_grads(head_.params());
    return loss_and_grads(batch, enc, dec, head, nullptr);
}

double Seq2Seq::loss_and_grads(std::vector<Pair const*> const& batch, nn::Grads& enc,
                               nn::Grads& dec, nn::Grads& head, Rng* dropout_rng) const {
    if (batch.empty()) throw ShapeError("loss: empty batch");
    auto const B = static_cast<Eigen::Index>(batch.size());
    std::vector<Matrix> enc_in(encoder_len_, Matrix(feature_dim_, B));
    std::vector<Matrix> dec_in(decoder_len_, Matrix(demand_dim_, B));
    Matrix target(demand_dim_, decoder_len_ * B);
    for (Eigen::Index b = 0; b < B; ++b) {
        auto const& p = *batch[b];
        if (static_cast<int>(p.inputs.size()) != encoder_len_ ||
            static_cast<int>(p.targets.size()) != decoder_len_) {
            throw ShapeError("loss: pair lengths do not match the model");
        }
        for (int t = 0; t < encoder_len_; ++t) enc_in[t].col(b) = p.inputs[t];
        for (int t = 0; t < decoder_len_; ++t) {
            dec_in[t].col(b) = t == 0 ? p.last_demand : p.targets[t - 1];
            target.col(t * B + b) = p.targets[t];
        }
    }

    nn::LstmStack::Cache enc_cache, dec_cache;
    nn::LstmStack::State enc_final, dec_final;
    (void)encoder_.forward(enc_in, encoder_.zero_state(B), enc_final, &enc_cache, dropout_rng);
    auto const hs = decoder_.forward(dec_in, enc_final, dec_final, &dec_cache, dropout_rng);
    Matrix h_all(hs.front().rows(), decoder_len_ * B);
    for (int t = 0; t < decoder_len_; ++t) h_all.middleCols(t * B, B) = hs[t];
    nn::DenseNet::Cache head_cache;
    Matrix const y = head_.forward(h_all, &head_cache);
    Matrix const diff = y - target;
    double const n = static_cast<double>(diff.size());
    double const loss = diff.squaredNorm() / n;

    Matrix const dy = 2.0 * diff / n;
    Matrix const dh_all = head_.backward(head_cache, dy, head);
    std::vector<Matrix> dh(decoder_len_);
    for (int t = 0; t < decoder_len_; ++t) dh[t] = dh_all.middleCols(t * B, B);
    nn::LstmStack::State d_init;
    decoder_.backward(dec_cache, dh, nullptr, dec, nullptr, &d_init);
    std::vector<Matrix> none(encoder_len_);
    encoder_.backward(enc_cache, none, &d_init, enc);
    return loss;
}

Seq2SeqTrainer::Seq2SeqTrainer(Seq2Seq const& model, double lr)
    : enc_(model.encoder().params(), nn::AdamConfig{lr}),
      dec_(model.decoder().params(), nn::AdamConfig{lr}),
      head_(model.head().params(), nn::AdamConfig{lr}) {}

double Seq2SeqTrainer::step(Seq2Seq& model, std::vector<Pair const*> const& batch,
                            Rng* dropout_rng) {
    auto enc = nn::zero_grads(model.encoder().params());
    auto dec = nn::zero_grads(model.decoder().params());
    auto head = nn::zero_grads(model.head().params());
    double const loss = model.loss_and_grads(batch, enc, dec, head, dropout_rng);
    if (!std::isfinite(loss)) throw ValidationError("predictor loss is not finite");
    for (auto const* g : {&enc, &dec, &head}) {
        for (auto const& m : *g) {
            if (!m.allFinite()) throw ValidationError("non-finite gradient in predictor");
        }
    }
    enc_.step(model.encoder().params(), enc);
    dec_.step(model.decoder().params(), dec);
    head_.step(model.head().params(), head);
    return loss;
}

std::vector<double> smooth(std::vector<double> const& xs, double alpha) {
    std::vector<double> out;
    out.reserve(xs.size());
    for (double x : xs) out.push_back(out.empty() ? x : alpha * x + (1.0 - alpha) * out.back());
    return out;
}

bool converged(std::vector<double> const& losses, int window, double tol) {
    if (window < 2 || static_cast<int>(losses.size()) < window) return false;
    auto const s = smooth(losses);
    double const last = s.back();
    double const first = s[s.size() - static_cast<std::size_t>(window)];
    double const scale = std::max(std::abs(first), 1e-12);
    return std::abs(last - first) / scale < tol;
}

Pair make_pair(std::vector<Vector> const& features, std::vector<Vector> const& demand,
               std::size_t k, int encoder_len, int decoder_len) {
    auto const le = static_cast<std::size_t>(encoder_len);
    auto const ld = static_cast<std::size_t>(decoder_len);
    if (k + 1 < le + ld || k >= features.size() || k >= demand.size()) {
        throw StateError("make_pair: not enough history for step " + std::to_string(k));
    }
    Pair p;
    std::size_t const last_in = k - ld;
    for (std::size_t i = last_in + 1 - le; i <= last_in; ++i) p.inputs.push_back(features[i]);
    p.last_demand = demand[last_in];
    for (std::size_t i = last_in + 1; i <= k; ++i) p.targets.push_back(demand[i]);
    return p;
}

OnlinePredictor::OnlinePredictor(int stations, std::vector<int> piles,
                                 PredictorConfig const& config, std::uint64_t seed)
    : stations_(stations), piles_(std::move(piles)), config_(config), rng_(seed) {
    if (static_cast<int>(piles_.size()) != stations) throw ShapeError("predictor: pile count list");
    Rng init(mix_seed(seed));
    model_ = Seq2Seq(9 * stations, stations, config_, init);
    trainer_ = Seq2SeqTrainer(model_, config_.lr);
}

void OnlinePredictor::begin_episode() {
    features_.clear();
    demand_.clear();
    cached_.reset();
}

std::optional<double> OnlinePredictor::add_snapshot(std::vector<double> const& features,
                                                    std::vector<double> const& demand) {
    if (static_cast<int>(demand.size()) != stations_ ||
        static_cast<int>(features.size()) != 9 * stations_) {
        throw ShapeError("predictor snapshot has the wrong dimension");
    }
    features_.emplace_back(Eigen::Map<Vector const>(features.data(),
                                                    static_cast<Eigen::Index>(features.size())));
    Vector d(stations_);
    for (int m = 0; m < stations_; ++m) d[m] = demand[m] / piles_[m];
    demand_.push_back(std::move(d));
    cached_.reset();
    if (!training_) return std::nullopt;

    auto const k = features_.size() - 1;
    if (k + 1 < static_cast<std::size_t>(config_.encoder_len + config_.decoder_len)) {
        return std::nullopt;
    }
    buffer_.push_back(make_pair(features_, demand_, k, config_.encoder_len, config_.decoder_len));
    auto const n = static_cast<int>(buffer_.size());
    if (converged() || n < config_.min_pairs || n % config_.train_every != 0) return std::nullopt;
    return train_step();
}

double OnlinePredictor::train_step() {
    if (buffer_.empty()) throw StateError("predictor train step with an empty buffer");
    std::vector<std::size_t> idx(buffer_.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    auto const batch_size = std::min<std::size_t>(idx.size(), static_cast<std::size_t>(config_.batch_size));
    double total = 0.0;
    for (int it = 0; it < config_.iters; ++it) {
        rng_.shuffle(idx.begin(), idx.end());
        std::vector<Pair const*> batch;
        for (std::size_t i = 0; i < batch_size; ++i) batch.push_back(&buffer_[idx[i]]);
        total += trainer_.step(model_, batch, &rng_);
    }
    double const mean = total / config_.iters;
    losses_.push_back(mean);
    cached_.reset();
    return mean;
}

bool OnlinePredictor::converged() const {
    return predictor::converged(losses_, config_.converge_window, config_.converge_tol);
}

std::size_t OnlinePredictor::augmentation_dim() const {
    return static_cast<std::size_t>(config_.decoder_len * stations_);
}

std::vector<double> OnlinePredictor::augmentation() const {
    if (cached_) return *cached_;
    std::vector<double> out(augmentation_dim(), 0.0);
    auto const le = static_cast<std::size_t>(config_.encoder_len);
    if (features_.size() >= le) {
        std::vector<Vector> history(features_.end() - static_cast<long>(le), features_.end());
        auto const pred = model_.predict(history, demand_.back());
        for (int t = 0; t < config_.decoder_len; ++t) {
            for (int m = 0; m < stations_; ++m) {
                out[static_cast<std::size_t>(t * stations_ + m)] = std::max(0.0, pred[t][m]);
            }
        }
    }
    cached_ = out;
    return out;
}

}  // namespace evrec::predictor
