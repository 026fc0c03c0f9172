#include "evrec/nn.hpp"

#include "evrec/error.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace evrec::nn {

namespace {

Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.uniform(-bound, bound);
    }
    return m;
}

Matrix orthogonal(Eigen::Index n, Rng& rng) {
    Matrix a(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        for (Eigen::Index i = 0; i < n; ++i) a(i, j) = rng.normal();
    }
    Eigen::HouseholderQR<Matrix> qr(a);
    Matrix q = qr.householderQ();
    Matrix const r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Eigen::Index i = 0; i < n; ++i) {
        if (r(i, i) < 0.0) q.col(i) = -q.col(i);
    }
    return q;
}

Matrix sigmoid(Matrix const& z) {
    return z.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

void check_rows(Matrix const& x, Eigen::Index rows, char const* what) {
    if (x.rows() != rows) {
        throw ShapeError(std::string(what) + ": expected " + std::to_string(rows) +
                         " rows, got " + std::to_string(x.rows()));
    }
}

}  // namespace

Grads zero_grads(std::vector<Param> const& params) {
    Grads g;
    g.reserve(params.size());
    for (auto const& p : params) g.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    return g;
}

DenseNet::DenseNet(std::vector<int> sizes, Rng& rng, std::string const& prefix)
    : sizes_(std::move(sizes)) {
    if (sizes_.size() < 2) throw ShapeError("DenseNet needs at least input and output sizes");
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
        double const bound = 1.0 / std::sqrt(static_cast<double>(sizes_[l]));
        params_.push_back({prefix + ".W" + std::to_string(l),
                           uniform_matrix(sizes_[l + 1], sizes_[l], bound, rng)});
        params_.push_back({prefix + ".b" + std::to_string(l), Matrix::Zero(sizes_[l + 1], 1)});
    }
}

Matrix DenseNet::forward(Matrix const& x, Cache* cache) const {
    check_rows(x, sizes_.front(), "DenseNet::forward");
    std::size_t const layers = sizes_.size() - 1;
    Matrix a = x;
    if (cache) {
        cache->acts.clear();
        cache->acts.push_back(x);
    }
    for (std::size_t l = 0; l < layers; ++l) {
        Matrix z = params_[2 * l].value * a;
        z.colwise() += params_[2 * l + 1].value.col(0);
        if (l + 1 < layers) z = z.array().tanh().matrix();
        a = std::move(z);
        if (cache) cache->acts.push_back(a);
    }
    return a;
}

Matrix DenseNet::backward(Cache const& cache, Matrix const& d_out, Grads& grads) const {
    std::size_t const layers = sizes_.size() - 1;
    if (cache.acts.size() != layers + 1) throw ShapeError("DenseNet::backward: stale cache");
    if (grads.size() != params_.size()) throw ShapeError("DenseNet::backward: gradient count");
    check_rows(d_out, sizes_.back(), "DenseNet::backward");
    Matrix d = d_out;
    for (std::size_t l = layers; l-- > 0;) {
        if (l + 1 < layers) {
            d = (d.array() * (1.0 - cache.acts[l + 1].array().square())).matrix();
        }
        grads[2 * l] += d * cache.acts[l].transpose();
        grads[2 * l + 1] += d.rowwise().sum();
        d = params_[2 * l].value.transpose() * d;
    }
    return d;
}

LstmStack::LstmStack(int input, int hidden, int layers, double dropout, Rng& rng,
                     std::string const& prefix)
    : input_(input), hidden_(hidden), layers_(layers), dropout_(dropout) {
    if (input < 1 || hidden < 1 || layers < 1) throw ShapeError("LstmStack: sizes must be > 0");
    for (int l = 0; l < layers; ++l) {
        int const in = l == 0 ? input : hidden;
        std::string const tag = prefix + ".l" + std::to_string(l);
        params_.push_back({tag + ".Wx",
                           uniform_matrix(4 * hidden, in, 1.0 / std::sqrt(static_cast<double>(in)), rng)});
        Matrix wh(4 * hidden, hidden);
        for (int g = 0; g < 4; ++g) wh.middleRows(g * hidden, hidden) = orthogonal(hidden, rng);
        params_.push_back({tag + ".Wh", std::move(wh)});
        Matrix b = Matrix::Zero(4 * hidden, 1);
        b.middleRows(hidden, hidden).setConstant(1.0);
        params_.push_back({tag + ".b", std::move(b)});
    }
}

LstmStack::State LstmStack::zero_state(Eigen::Index batch) const {
    State s;
    for (int l = 0; l < layers_; ++l) {
        s.h.push_back(Matrix::Zero(hidden_, batch));
        s.c.push_back(Matrix::Zero(hidden_, batch));
    }
    return s;
}

std::vector<Matrix> LstmStack::forward(std::vector<Matrix> const& xs, State const& init,
                                       State& final, Cache* cache, Rng* dropout_rng) const {
    if (xs.empty()) throw ShapeError("LstmStack::forward: empty sequence");
    if (init.h.size() != static_cast<std::size_t>(layers_) || init.c.size() != init.h.size()) {
        throw ShapeError("LstmStack::forward: initial state has wrong layer count");
    }
    auto const batch = xs.front().cols();
    auto const H = hidden_;
    std::size_t const T = xs.size();
    if (cache) {
        cache->x.assign(layers_, {});
        cache->gates.assign(layers_, {});
        cache->c.assign(layers_, {});
        cache->h.assign(layers_, {});
        cache->mask.assign(layers_, {});
        cache->init = init;
    }
    final = init;
    std::vector<Matrix> below = xs;
    for (int l = 0; l < layers_; ++l) {
        auto const& wx = params_[3 * l].value;
        auto const& wh = params_[3 * l + 1].value;
        auto const& b = params_[3 * l + 2].value;
        Matrix h = init.h[l];
        Matrix c = init.c[l];
        check_rows(h, H, "LstmStack::forward initial h");
        std::vector<Matrix> out;
        out.reserve(T);
        for (std::size_t t = 0; t < T; ++t) {
            Matrix x = below[t];
            check_rows(x, wx.cols(), "LstmStack::forward input");
            if (x.cols() != batch) throw ShapeError("LstmStack::forward: batch size changes");
            if (l > 0 && dropout_rng && dropout_ > 0.0) {
                Matrix mask(x.rows(), x.cols());
                double const keep = 1.0 - dropout_;
                for (Eigen::Index j = 0; j < mask.cols(); ++j) {
                    for (Eigen::Index i = 0; i < mask.rows(); ++i) {
                        mask(i, j) = dropout_rng->uniform() < keep ? 1.0 / keep : 0.0;
                    }
                }
                x = (x.array() * mask.array()).matrix();
                if (cache) cache->mask[l].push_back(std::move(mask));
            }
            Matrix z = wx * x + wh * h;
            z.colwise() += b.col(0);
            Matrix gates(4 * H, batch);
            gates.middleRows(0, H) = sigmoid(z.middleRows(0, H));
            gates.middleRows(H, H) = sigmoid(z.middleRows(H, H));
            gates.middleRows(2 * H, H) = z.middleRows(2 * H, H).array().tanh().matrix();
            gates.middleRows(3 * H, H) = sigmoid(z.middleRows(3 * H, H));
            c = (gates.middleRows(H, H).array() * c.array() +
                 gates.middleRows(0, H).array() * gates.middleRows(2 * H, H).array())
                    .matrix();
            h = (gates.middleRows(3 * H, H).array() * c.array().tanh()).matrix();
            if (cache) {
                cache->x[l].push_back(std::move(x));
                cache->gates[l].push_back(std::move(gates));
                cache->c[l].push_back(c);
                cache->h[l].push_back(h);
            }
            out.push_back(h);
        }
        final.h[l] = h;
        final.c[l] = c;
        below = std::move(out);
    }
    return below;
}

void LstmStack::backward(Cache const& cache, std::vector<Matrix> const& d_out,
                         State const* d_final, Grads& grads, std::vector<Matrix>* d_inputs,
                         State* d_init) const {
    if (grads.size() != params_.size()) throw ShapeError("LstmStack::backward: gradient count");
    std::size_t const T = cache.x.empty() ? 0 : cache.x[0].size();
    if (T == 0) throw ShapeError("LstmStack::backward: empty cache");
    if (d_out.size() != T) throw ShapeError("LstmStack::backward: d_out length");
    auto const H = hidden_;
    auto const batch = cache.h[0][0].cols();
    if (d_init) *d_init = zero_state(batch);

    std::vector<Matrix> d_above = d_out;
    for (auto& d : d_above) {
        if (d.size() == 0) d = Matrix::Zero(H, batch);
    }
    for (int l = layers_; l-- > 0;) {
        auto const& wx = params_[3 * l].value;
        auto const& wh = params_[3 * l + 1].value;
        Matrix dh_next = d_final ? d_final->h[l] : Matrix::Zero(H, batch);
        Matrix dc_next = d_final ? d_final->c[l] : Matrix::Zero(H, batch);
        std::vector<Matrix> d_below(T);
        for (std::size_t t = T; t-- > 0;) {
            auto const& g = cache.gates[l][t];
            auto const i = g.middleRows(0, H).array();
            auto const f = g.middleRows(H, H).array();
            auto const gg = g.middleRows(2 * H, H).array();
            auto const o = g.middleRows(3 * H, H).array();
            Matrix const& c = cache.c[l][t];
            Matrix const& c_prev = t == 0 ? cache.init.c[l] : cache.c[l][t - 1];
            Matrix const& h_prev = t == 0 ? cache.init.h[l] : cache.h[l][t - 1];
            Eigen::ArrayXXd const tc = c.array().tanh();

            Eigen::ArrayXXd const dh = (d_above[t] + dh_next).array();
            Eigen::ArrayXXd const dc = dc_next.array() + dh * o * (1.0 - tc.square());
            Matrix dz(4 * H, batch);
            dz.middleRows(0, H) = (dc * gg * i * (1.0 - i)).matrix();
            dz.middleRows(H, H) = (dc * c_prev.array() * f * (1.0 - f)).matrix();
            dz.middleRows(2 * H, H) = (dc * i * (1.0 - gg.square())).matrix();
            dz.middleRows(3 * H, H) = (dh * tc * o * (1.0 - o)).matrix();

            grads[3 * l] += dz * cache.x[l][t].transpose();
            grads[3 * l + 1] += dz * h_prev.transpose();
            grads[3 * l + 2] += dz.rowwise().sum();
            Matrix dx = wx.transpose() * dz;
            if (!cache.mask[l].empty()) dx = (dx.array() * cache.mask[l][t].array()).matrix();
            d_below[t] = std::move(dx);
            dh_next = wh.transpose() * dz;
            dc_next = (dc * f).matrix();
        }
        if (d_init) {
            d_init->h[l] = dh_next;
            d_init->c[l] = dc_next;
        }
        d_above = std::move(d_below);
    }
    if (d_inputs) *d_inputs = std::move(d_above);
}

Categorical categorical(Vector const& logits) {
    if (logits.size() == 0) throw ShapeError("categorical: empty logits");
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
        if (std::isnan(logits[i])) throw ValidationError("categorical: NaN logit");
    }
    Categorical d;
    double const mx = logits.maxCoeff();
    double const lse = mx + std::log((logits.array() - mx).exp().sum());
    d.log_probs = (logits.array() - lse).matrix();
    d.probs = d.log_probs.array().exp().matrix();
    d.entropy = 0.0;
    for (Eigen::Index i = 0; i < d.probs.size(); ++i) {
        if (d.probs[i] > 0.0) d.entropy -= d.probs[i] * d.log_probs[i];
    }
    return d;
}

Matrix log_softmax(Matrix const& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
        double const mx = logits.col(j).maxCoeff();
        double const lse = mx + std::log((logits.col(j).array() - mx).exp().sum());
        out.col(j) = (logits.col(j).array() - lse).matrix();
    }
    return out;
}

int sample(Categorical const& dist, Rng& rng) {
    double const u = rng.uniform();
    double acc = 0.0;
    for (Eigen::Index i = 0; i < dist.probs.size(); ++i) {
        acc += dist.probs[i];
        if (u < acc) return static_cast<int>(i);
    }
    for (Eigen::Index i = dist.probs.size(); i-- > 0;) {
        if (dist.probs[i] > 0.0) return static_cast<int>(i);
    }
    return 0;
}

int argmax(Vector const& v) {
    Eigen::Index idx = 0;
    v.maxCoeff(&idx);
    return static_cast<int>(idx);
}

Adam::Adam(std::vector<Param> const& params, AdamConfig config)
    : config_(config), m_(zero_grads(params)), v_(zero_grads(params)) {}

void Adam::step(std::vector<Param>& params, Grads const& grads) {
    if (grads.size() != params.size() || m_.size() != params.size()) {
        throw ShapeError("Adam::step: parameter/gradient count mismatch");
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
        if (grads[k].rows() != params[k].value.rows() || grads[k].cols() != params[k].value.cols()) {
            throw ShapeError("Adam::step: gradient shape mismatch for " + params[k].name);
        }
        if (!grads[k].allFinite()) {
            throw ValidationError("non-finite gradient in parameter block " + params[k].name);
        }
    }
    ++t_;
    double const bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    double const bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
        m_[k] = config_.beta1 * m_[k] + (1.0 - config_.beta1) * grads[k];
        v_[k] = config_.beta2 * v_[k] + (1.0 - config_.beta2) * grads[k].cwiseProduct(grads[k]);
        params[k].value.array() -=
            config_.lr * (m_[k].array() / bc1) / ((v_[k].array() / bc2).sqrt() + config_.eps);
    }
}

Matrix finite_difference(std::function<double()> const& loss, Param& param, double h) {
    Matrix g(param.value.rows(), param.value.cols());
    for (Eigen::Index j = 0; j < g.cols(); ++j) {
        for (Eigen::Index i = 0; i < g.rows(); ++i) {
            double const orig = param.value(i, j);
            param.value(i, j) = orig + h;
            double const up = loss();
            param.value(i, j) = orig - h;
            double const down = loss();
            param.value(i, j) = orig;
            g(i, j) = (up - down) / (2.0 * h);
        }
    }
    return g;
}

namespace {

constexpr char kMagic[8] = {'E', 'V', 'R', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    if constexpr (std::endian::native == std::endian::big) {
        auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(value);
        std::reverse(bytes.begin(), bytes.end());
        out.write(bytes.data(), sizeof(T));
    } else {
        out.write(reinterpret_cast<char const*>(&value), sizeof(T));
    }
}

template <class T>
T get(std::istream& in, std::string const& source) {
    std::array<char, sizeof(T)> bytes{};
    if (!in.read(bytes.data(), sizeof(T))) throw ParseError(source, 0, "truncated checkpoint");
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
}

}  // namespace

void save_checkpoint(std::filesystem::path const& path, std::vector<Param const*> const& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
    for (auto const* p : params) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(p->name.size()));
        out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        put<std::uint64_t>(out, static_cast<std::uint64_t>(p->value.rows()));
        put<std::uint64_t>(out, static_cast<std::uint64_t>(p->value.cols()));
        for (Eigen::Index k = 0; k < p->value.size(); ++k) put<double>(out, p->value.data()[k]);
    }
    if (!out) throw Error("failed writing checkpoint " + path.string());
}

void load_checkpoint(std::filesystem::path const& path, std::vector<Param*> const& params) {
    std::ifstream in(path, std::ios::binary);
    auto const source = path.string();
    if (!in) throw ParseError(source, 0, "cannot open checkpoint");
    char magic[8];
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
        throw ParseError(source, 0, "not a checkpoint file (bad magic)");
    }
    auto const version = get<std::uint32_t>(in, source);
    if (version != kVersion) {
        throw ParseError(source, 0, "unsupported checkpoint version " + std::to_string(version));
    }
    auto const count = get<std::uint32_t>(in, source);
    if (count != params.size()) {
        throw ShapeError(source + ": checkpoint has " + std::to_string(count) + " blocks, expected " +
                         std::to_string(params.size()));
    }
    for (auto* p : params) {
        auto const len = get<std::uint32_t>(in, source);
        std::string name(len, '\0');
        if (!in.read(name.data(), len)) throw ParseError(source, 0, "truncated checkpoint");
        if (name != p->name) {
            throw ShapeError(source + ": expected block " + p->name + ", found " + name);
        }
        auto const rows = get<std::uint64_t>(in, source);
        auto const cols = get<std::uint64_t>(in, source);
        if (rows != static_cast<std::uint64_t>(p->value.rows()) ||
            cols != static_cast<std::uint64_t>(p->value.cols())) {
            throw ShapeError(source + ": shape mismatch for block " + name);
        }
        for (Eigen::Index k = 0; k < p->value.size(); ++k) p->value.data()[k] = get<double>(in, source);
    }
}

}  // namespace evrec::nn
