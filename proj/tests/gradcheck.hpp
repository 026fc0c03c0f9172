#pragma once

// Randomized backward-vs-finite-difference checks shared by the unit and acceptance tests.

#include "evrec/nn.hpp"
#include "oracles.hpp"

#include <algorithm>

namespace gradcheck {

using evrec::Rng;
using evrec::nn::Matrix;

inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
    Matrix m(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
        for (Eigen::Index i = 0; i < r; ++i) m(i, j) = scale * rng.uniform(-1.0, 1.0);
    return m;
}

inline int pick(Rng& rng, int lo, int hi) { return lo + static_cast<int>(rng.below(hi - lo + 1)); }

/// Worst relative error over all parameter blocks and the input, for one random MLP.
inline double dense(Rng& rng) {
    std::vector<int> sizes{pick(rng, 1, 6)};
    int const hidden = pick(rng, 0, 3);
    for (int l = 0; l < hidden; ++l) sizes.push_back(pick(rng, 1, 8));
    sizes.push_back(pick(rng, 1, 4));
    evrec::nn::DenseNet net(sizes, rng, "net");
    auto const batch = pick(rng, 1, 4);
    Matrix x = random_matrix(sizes.front(), batch, rng);
    Matrix const w = random_matrix(sizes.back(), batch, rng);
    auto loss = [&] { return net.forward(x).cwiseProduct(w).sum(); };

    evrec::nn::DenseNet::Cache cache;
    (void)net.forward(x, &cache);
    auto grads = evrec::nn::zero_grads(net.params());
    Matrix const dx = net.backward(cache, w, grads);

    double worst = oracle::block_rel_error(dx, oracle::central_difference(x, loss));
    for (std::size_t k = 0; k < grads.size(); ++k) {
        worst = std::max(worst, oracle::block_rel_error(
                                    grads[k], oracle::central_difference(net.params()[k].value, loss)));
    }
    return worst;
}

/// Same for one random LSTM stack, including input and initial-state gradients.
inline double lstm(Rng& rng) {
    int const in = pick(rng, 1, 4);
    int const hid = pick(rng, 1, 5);
    int const layers = pick(rng, 1, 2);
    double const dropout = layers > 1 && rng.bernoulli(0.5) ? 0.3 : 0.0;
    evrec::nn::LstmStack net(in, hid, layers, dropout, rng, "lstm");
    auto const batch = pick(rng, 1, 3);
    auto const steps = pick(rng, 1, 5);
    std::uint64_t const mask_seed = rng.next();

    std::vector<Matrix> xs, ws;
    for (int t = 0; t < steps; ++t) {
        xs.push_back(random_matrix(in, batch, rng));
        ws.push_back(random_matrix(hid, batch, rng));
    }
    auto init = net.zero_state(batch);
    for (int l = 0; l < layers; ++l) {
        init.h[l] = random_matrix(hid, batch, rng, 0.5);
        init.c[l] = random_matrix(hid, batch, rng, 0.5);
    }
    evrec::nn::LstmStack::State wf;
    for (int l = 0; l < layers; ++l) {
        wf.h.push_back(random_matrix(hid, batch, rng));
        wf.c.push_back(random_matrix(hid, batch, rng));
    }

    auto run = [&](evrec::nn::LstmStack::Cache* cache) {
        Rng mask(mask_seed);
        evrec::nn::LstmStack::State fin;
        auto const hs = net.forward(xs, init, fin, cache, dropout > 0.0 ? &mask : nullptr);
        double s = 0.0;
        for (int t = 0; t < steps; ++t) s += hs[t].cwiseProduct(ws[t]).sum();
        for (int l = 0; l < layers; ++l) {
            s += fin.h[l].cwiseProduct(wf.h[l]).sum() + fin.c[l].cwiseProduct(wf.c[l]).sum();
        }
        return s;
    };
    auto loss = [&] { return run(nullptr); };

    evrec::nn::LstmStack::Cache cache;
    (void)run(&cache);
    auto grads = evrec::nn::zero_grads(net.params());
    std::vector<Matrix> dxs;
    evrec::nn::LstmStack::State d_init;
    net.backward(cache, ws, &wf, grads, &dxs, &d_init);

    double worst = 0.0;
    for (std::size_t k = 0; k < grads.size(); ++k) {
        worst = std::max(worst, oracle::block_rel_error(
                                    grads[k], oracle::central_difference(net.params()[k].value, loss)));
    }
    for (int t = 0; t < steps; ++t) {
        worst = std::max(worst, oracle::block_rel_error(dxs[t], oracle::central_difference(xs[t], loss)));
    }
    for (int l = 0; l < layers; ++l) {
        worst = std::max(worst, oracle::block_rel_error(d_init.h[l], oracle::central_difference(init.h[l], loss)));
        worst = std::max(worst, oracle::block_rel_error(d_init.c[l], oracle::central_difference(init.c[l], loss)));
    }
    return worst;
}

}  // namespace gradcheck
