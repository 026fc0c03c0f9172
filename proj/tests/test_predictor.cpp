#include "evrec/error.hpp"
#include "evrec/predictor.hpp"
#include "oracles.hpp"
#include "synthetic.hpp"

#include <doctest.h>

using namespace evrec;
using namespace evrec::predictor;

namespace {

PredictorConfig small_config() {
    PredictorConfig c;
    c.hidden = 4;
    c.layers = 2;
    c.dropout = 0.0;
    c.encoder_len = 3;
    c.decoder_len = 2;
    return c;
}

Vector constant(Eigen::Index n, double v) { return Vector::Constant(n, v); }

Pair random_pair(int feat, int dem, PredictorConfig const& c, Rng& rng) {
    Pair p;
    for (int t = 0; t < c.encoder_len; ++t) p.inputs.push_back(Vector::NullaryExpr(feat, [&] { return rng.uniform(-1, 1); }));
    p.last_demand = Vector::NullaryExpr(dem, [&] { return rng.uniform(0, 1); });
    for (int t = 0; t < c.decoder_len; ++t) p.targets.push_back(Vector::NullaryExpr(dem, [&] { return rng.uniform(0, 1); }));
    return p;
}

void zero_all(Seq2Seq& model) {
    for (auto* p : model.all_params()) p->value.setZero();
}

}  // namespace

TEST_CASE("pairs use strictly past inputs for strictly future targets") {
    std::vector<Vector> f, d;
    for (int i = 0; i < 20; ++i) {
        f.push_back(constant(1, i));
        d.push_back(constant(1, 100 + i));
    }
    int const le = 5, ld = 5;
    CHECK_THROWS_AS((void)make_pair(f, d, 8, le, ld), StateError);
    auto const p = make_pair(f, d, 12, le, ld);
    REQUIRE(p.inputs.size() == 5);
    REQUIRE(p.targets.size() == 5);
    for (int i = 0; i < 5; ++i) {
        CHECK(p.inputs[i][0] == 3 + i);
        CHECK(p.targets[i][0] == 108 + i);
    }
    CHECK(p.last_demand[0] == 107);
    CHECK(p.inputs.back()[0] + 100 < p.targets.front()[0]);
}

TEST_CASE("convergence check on loss histories") {
    CHECK(converged(std::vector<double>(10, 0.3)));
    std::vector<double> halving{1.0};
    for (int i = 0; i < 15; ++i) halving.push_back(halving.back() / 2);
    CHECK_FALSE(converged(halving));
    CHECK_FALSE(converged(std::vector<double>(9, 0.3)));
    auto const s = smooth({1.0, 0.0, 0.0});
    CHECK(s[1] == doctest::Approx(0.7));
    CHECK(s[2] == doctest::Approx(0.49));
}

TEST_CASE("zero-weight model forecasts the head bias at every step") {
    Rng rng(1);
    auto const c = small_config();
    Seq2Seq model(6, 2, c, rng);
    zero_all(model);
    Vector bias(2);
    bias << 0.25, 0.75;
    model.head().params()[1].value = bias;
    std::vector<Vector> history(3, constant(6, 0.4));
    auto const out = model.predict(history, constant(2, 0.1));
    REQUIRE(out.size() == 2);
    for (auto const& y : out) CHECK((y - bias).norm() < 1e-15);

    Pair p;
    p.inputs = history;
    p.last_demand = constant(2, 0.3);
    p.targets = {bias, bias};
    CHECK(model.loss({&p}) == 0.0);
    CHECK_THROWS_AS((void)model.predict({constant(6, 0)}, constant(2, 0)), ShapeError);
}

TEST_CASE("forecasts are deterministic and shaped L_d x stations") {
    Rng rng(2);
    auto c = small_config();
    c.dropout = 0.5;
    Seq2Seq model(6, 2, c, rng);
    std::vector<Vector> history(3, constant(6, 0.2));
    auto const a = model.predict(history, constant(2, 0.5));
    auto const b = model.predict(history, constant(2, 0.5));
    REQUIRE(a.size() == 2);
    for (std::size_t t = 0; t < a.size(); ++t) {
        CHECK(a[t].size() == 2);
        CHECK(a[t] == b[t]);
    }
}

TEST_CASE("teacher-forced loss gradients match central differences") {
    Rng rng(3);
    auto const c = small_config();
    Seq2Seq model(5, 2, c, rng);
    std::vector<Pair> pairs;
    for (int i = 0; i < 3; ++i) pairs.push_back(random_pair(5, 2, c, rng));
    std::vector<Pair const*> batch;
    for (auto const& p : pairs) batch.push_back(&p);

    auto enc = nn::zero_grads(model.encoder().params());
    auto dec = nn::zero_grads(model.decoder().params());
    auto head = nn::zero_grads(model.head().params());
    (void)model.loss_and_grads(batch, enc, dec, head, nullptr);
    auto loss = [&] { return model.loss(batch); };

    std::vector<nn::Matrix const*> analytic;
    for (auto const* g : {&enc, &dec, &head})
        for (auto const& m : *g) analytic.push_back(&m);
    auto params = model.all_params();
    REQUIRE(params.size() == analytic.size());
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto const fd = oracle::central_difference(params[k]->value, loss);
        CHECK(oracle::block_rel_error(*analytic[k], fd) < 1e-5);
    }
}

TEST_CASE("online predictor: pair formation, augmentation and the training switch") {
    auto c = small_config();
    c.min_pairs = 4;
    c.train_every = 2;
    c.iters = 2;
    c.batch_size = 4;
    OnlinePredictor p(2, {10, 5}, c, 7);
    p.begin_episode();
    CHECK(p.augmentation_dim() == 4);
    CHECK(p.augmentation() == std::vector<double>(4, 0.0));

    std::vector<double> f(18, 0.1), d{5.0, 2.5};
    int trained = 0;
    for (int k = 0; k < 10; ++k) {
        if (k == 2) CHECK(p.augmentation() == std::vector<double>(4, 0.0));
        if (p.add_snapshot(f, d)) ++trained;
        CHECK(p.buffer_size() == static_cast<std::size_t>(std::max(0, k + 1 - (c.encoder_len + c.decoder_len - 1))));
    }
    // buffer sizes 1..6 over the run; trains at 4 and 6
    CHECK(trained == 2);
    CHECK(p.losses().size() == 2);
    for (double a : p.augmentation()) CHECK(a >= 0.0);

    p.set_training(false);
    p.begin_episode();
    for (int k = 0; k < 10; ++k) CHECK_FALSE(p.add_snapshot(f, d));
    CHECK(p.buffer_size() == 6);
    CHECK(p.augmentation().size() == 4);

    CHECK_THROWS_AS((void)p.add_snapshot({1.0}, d), ShapeError);
    CHECK_THROWS_AS(OnlinePredictor(2, {10}, c, 1), ShapeError);
}

TEST_CASE("constant demand is learned") {
    auto c = small_config();
    c.hidden = 8;
    c.layers = 1;
    c.lr = 1e-2;
    c.iters = 20;
    c.min_pairs = 8;
    c.train_every = 4;
    c.batch_size = 8;
    OnlinePredictor p(1, {4}, c, 11);
    p.begin_episode();
    std::vector<double> f(9, 0.0);
    f[0] = 0.6;
    for (int k = 0; k < 400; ++k) (void)p.add_snapshot(f, {2.4});
    for (double a : p.augmentation()) CHECK(a == doctest::Approx(0.6).epsilon(0.02));
}

TEST_CASE("periodic demand: forecasts beat the mean and early loss falls") {
    auto const fit = synthetic::fit_periodic(0);
    CHECK(fit.converged);
    CHECK(fit.model_mse < fit.baseline_mse);
    auto const s = smooth(fit.losses);
    REQUIRE(s.size() >= 5);
    for (int i = 1; i < 5; ++i) CHECK(s[i] < s[i - 1]);
}
