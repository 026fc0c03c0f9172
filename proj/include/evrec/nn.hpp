#pragma once

#include "evrec/rng.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace evrec::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Named parameter block. Batched tensors keep one sample per column.
struct Param {
    std::string name;
    Matrix value;
};

using Grads = std::vector<Matrix>;

/// Zero gradients shaped like `params`.
[[nodiscard]] Grads zero_grads(std::vector<Param> const& params);

/// Multilayer perceptron: tanh on hidden layers, identity on the output layer.
class DenseNet {
public:
    struct Cache {
        std::vector<Matrix> acts;  ///< acts[0] is the input, acts[l] the output of layer l
    };

    DenseNet() = default;
    /// `sizes` = {input, hidden..., output}. Weights uniform in ±1/sqrt(fan_in), biases zero.
    DenseNet(std::vector<int> sizes, Rng& rng, std::string const& prefix);

    [[nodiscard]] Matrix forward(Matrix const& x, Cache* cache = nullptr) const;
    /// Adds parameter gradients into `grads` and returns the input gradient.
    Matrix backward(Cache const& cache, Matrix const& d_out, Grads& grads) const;

    [[nodiscard]] std::vector<Param>& params() noexcept { return params_; }
    [[nodiscard]] std::vector<Param> const& params() const noexcept { return params_; }
    [[nodiscard]] int input_size() const noexcept { return sizes_.front(); }
    [[nodiscard]] int output_size() const noexcept { return sizes_.back(); }
    [[nodiscard]] std::vector<int> const& sizes() const noexcept { return sizes_; }

private:
    std::vector<int> sizes_;
    std::vector<Param> params_;  ///< W0, b0, W1, b1, ...
};

/// Multi-layer LSTM. Gate rows are ordered input, forget, cell, output.
class LstmStack {
public:
    struct State {
        std::vector<Matrix> h;  ///< per layer, hidden x batch
        std::vector<Matrix> c;
    };

    struct Cache {
        std::vector<std::vector<Matrix>> x;      ///< [layer][t] layer input after dropout
        std::vector<std::vector<Matrix>> gates;  ///< [layer][t] activated i,f,g,o stacked
        std::vector<std::vector<Matrix>> c;      ///< [layer][t] cell state
        std::vector<std::vector<Matrix>> h;      ///< [layer][t] hidden state
        std::vector<std::vector<Matrix>> mask;   ///< [layer][t] dropout mask (layers > 0)
        State init;
    };

    LstmStack() = default;
    /// Input weights uniform in ±1/sqrt(input), recurrent weights orthogonal per gate,
    /// biases zero except the forget gate at 1.
    LstmStack(int input, int hidden, int layers, double dropout, Rng& rng,
              std::string const& prefix);

    [[nodiscard]] State zero_state(Eigen::Index batch) const;

    /// Runs the sequence and returns the top-layer hidden state per step.
    /// Dropout between layers is active only when `dropout_rng` is given.
    std::vector<Matrix> forward(std::vector<Matrix> const& xs, State const& init, State& final,
                                Cache* cache = nullptr, Rng* dropout_rng = nullptr) const;

    /// Backpropagation through time. `d_out` holds top-layer output gradients per step
    /// (empty matrices count as zero); `d_final` optional gradients of the final state.
    void backward(Cache const& cache, std::vector<Matrix> const& d_out, State const* d_final,
                  Grads& grads, std::vector<Matrix>* d_inputs = nullptr,
                  State* d_init = nullptr) const;

    [[nodiscard]] std::vector<Param>& params() noexcept { return params_; }
    [[nodiscard]] std::vector<Param> const& params() const noexcept { return params_; }
    [[nodiscard]] int input_size() const noexcept { return input_; }
    [[nodiscard]] int hidden_size() const noexcept { return hidden_; }
    [[nodiscard]] int layers() const noexcept { return layers_; }
    [[nodiscard]] double dropout() const noexcept { return dropout_; }

private:
    int input_ = 0;
    int hidden_ = 0;
    int layers_ = 0;
    double dropout_ = 0.0;
    std::vector<Param> params_;  ///< per layer: Wx, Wh, b
};

struct Categorical {
    Vector probs;
    Vector log_probs;
    double entropy = 0.0;
};

/// Softmax distribution of one logit vector, computed with log-sum-exp.
[[nodiscard]] Categorical categorical(Vector const& logits);
/// Column-wise log-softmax.
[[nodiscard]] Matrix log_softmax(Matrix const& logits);
/// Inverse-CDF draw from `probs`.
[[nodiscard]] int sample(Categorical const& dist, Rng& rng);
[[nodiscard]] int argmax(Vector const& v);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    Adam() = default;
    Adam(std::vector<Param> const& params, AdamConfig config);

    /// One bias-corrected update. Throws ValidationError naming the block on
    /// non-finite gradients, before any parameter changes.
    void step(std::vector<Param>& params, Grads const& grads);

    [[nodiscard]] long long steps() const noexcept { return t_; }
    [[nodiscard]] Grads const& first_moment() const noexcept { return m_; }
    [[nodiscard]] Grads const& second_moment() const noexcept { return v_; }
    [[nodiscard]] AdamConfig const& config() const noexcept { return config_; }

private:
    AdamConfig config_;
    Grads m_;
    Grads v_;
    long long t_ = 0;
};

/// Central finite-difference gradient of `loss` with respect to one parameter block.
[[nodiscard]] Matrix finite_difference(std::function<double()> const& loss, Param& param,
                                       double h = 1e-5);

/// Binary checkpoint: "EVRCKPT\0", u32 version, u32 count, then per block the name
/// (u32 length + bytes), u64 rows, u64 cols and little-endian f64 values in column-major order.
void save_checkpoint(std::filesystem::path const& path, std::vector<Param const*> const& params);
/// Loads into existing blocks; names and shapes must match exactly.
void load_checkpoint(std::filesystem::path const& path, std::vector<Param*> const& params);

}  // namespace evrec::nn
