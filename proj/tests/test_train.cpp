#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cace/data.hpp"
#include "cace/ops.hpp"
#include "cace/rng.hpp"
#include "cace/train.hpp"

using namespace cace;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.base_width = 4;
    cfg.reduction_ratio = 2;
    cfg.input_h = 16;
    cfg.input_w = 16;
    cfg.rmp_windows = {1};
    return cfg;
}

std::vector<SegmentationSample> tiny_dataset(long count) {
    SynthSpec spec;
    spec.h = 16;
    spec.w = 16;
    spec.dip_depth = 0.1;
    spec.smoothness_amp = 0.03;
    spec.seed = 77;
    return generate(spec, count);
}

}  // namespace

TEST_CASE("bce loss closed forms") {
    Tensor half = Tensor::full(1, 1, 2, 2, 0.5);
    Tensor ones = Tensor::full(1, 1, 2, 2, 1.0);
    CHECK(ops::bce_loss(half, ones, 1e-7) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    Tensor nearly = Tensor::full(1, 1, 2, 2, 1.0 - 1e-7);
    CHECK(ops::bce_loss(nearly, ones, 1e-7) < 1e-6);
}

TEST_CASE("bce loss matches a scalar-loop oracle") {
    Rng rng(8);
    Tensor pred = rng.uniform_tensor(2, 1, 5, 5, 0.01, 0.99);
    Tensor y(2, 1, 5, 5);
    for (long i = 0; i < y.numel(); ++i) y.set(i, rng.uniform() < 0.5 ? 0.0 : 1.0);
    const double eps = 1e-7;
    double want = 0;
    for (long i = 0; i < y.numel(); ++i) {
        double d = std::min(std::max(pred.get(i), eps), 1.0 - eps);
        want += -(y.get(i) * std::log(d) + (1.0 - y.get(i)) * std::log(1.0 - d));
    }
    want /= double(y.numel());
    CHECK(ops::bce_loss(pred, y, eps) == doctest::Approx(want).epsilon(1e-12));

    // loss against the true labels beats loss against the flipped labels
    Tensor flipped = y;
    for (long i = 0; i < y.numel(); ++i) flipped.set(i, 1.0 - y.get(i));
    Tensor as_prob = y;
    CHECK(ops::bce_loss(as_prob, y, eps) < ops::bce_loss(as_prob, flipped, eps));
    CHECK(ops::bce_loss(pred, y, eps) >= 0.0);
}

TEST_CASE("bce rejects shape mismatch and non-binary targets") {
    Tensor p = Tensor::full(1, 1, 2, 2, 0.5);
    CHECK_THROWS_AS(ops::bce_loss(p, Tensor::full(1, 1, 2, 3, 1.0), 1e-7), ShapeError);
    CHECK_THROWS_AS(ops::bce_loss(p, Tensor::full(1, 1, 2, 2, 0.3), 1e-7), ConfigError);
}

TEST_CASE("poly schedule values") {
    TrainConfig cfg;
    cfg.initial_lr = 0.001;
    cfg.poly_power = 0.9;
    cfg.max_iter = 300;
    CHECK(poly_lr(0, cfg) == 0.001);
    CHECK(poly_lr(300, cfg) == 0.0);
    CHECK(poly_lr(150, cfg) == doctest::Approx(0.001 * std::pow(0.5, 0.9)).epsilon(1e-15));
    CHECK_THROWS_AS(poly_lr(301, cfg), ConfigError);
}

TEST_CASE("poly schedule is monotone non-increasing") {
    TrainConfig cfg;
    cfg.max_iter = 1000;
    double prev = poly_lr(0, cfg);
    for (long it = 1; it <= 1000; ++it) {
        double cur = poly_lr(it, cfg);
        CHECK(cur <= prev);
        prev = cur;
    }
}

TEST_CASE("sgd closed-form updates") {
    auto one_step = [](double p, double g, double lr, double wd) {
        Tensor pt = Tensor::full(1, 1, 1, 1, p);
        Tensor gt = Tensor::full(1, 1, 1, 1, g);
        std::vector<std::pair<std::string, Tensor*>> params{{"p", &pt}};
        sgd_step(params, {gt}, lr, wd);
        return pt.get(0);
    };
    CHECK(one_step(1.0, 0.0, 0.1, 0.0) == 1.0);
    CHECK(one_step(1.0, 1.0, 0.1, 0.0) == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(one_step(1.0, 0.0, 0.001, 0.0001) == doctest::Approx(0.9999999).epsilon(1e-15));
    CHECK(one_step(0.8, 0.5, 0.0, 0.3) == 0.8);  // lr = 0 leaves params bit-exact
}

TEST_CASE("two-parameter logistic toy problem reaches the analytic optimum") {
    // p(x) = sigmoid(w x + b); empirical frequencies 2/3 at x=+1, 1/3 at x=-1,
    // so the optimum is w = ln 2, b = 0.
    const double xs[6] = {1, 1, 1, -1, -1, -1};
    const double ys[6] = {1, 1, 0, 0, 0, 1};
    Tensor w = Tensor::zeros(1, 1, 1, 1);
    Tensor b = Tensor::zeros(1, 1, 1, 1);
    std::vector<std::pair<std::string, Tensor*>> params{{"w", &w}, {"b", &b}};

    TrainConfig cfg;
    cfg.initial_lr = 0.5;
    cfg.poly_power = 0.9;
    cfg.max_iter = 4000;
    for (long it = 0; it < cfg.max_iter; ++it) {
        double gw = 0, gb = 0;
        for (int i = 0; i < 6; ++i) {
            double p = 1.0 / (1.0 + std::exp(-(w.get(0) * xs[i] + b.get(0))));
            gw += (p - ys[i]) * xs[i] / 6.0;
            gb += (p - ys[i]) / 6.0;
        }
        std::vector<Tensor> grads{Tensor::full(1, 1, 1, 1, gw), Tensor::full(1, 1, 1, 1, gb)};
        sgd_step(params, grads, poly_lr(it, cfg), 0.0);
    }
    CHECK(w.get(0) == doctest::Approx(std::log(2.0)).epsilon(1e-3));
    CHECK(std::abs(b.get(0)) < 1e-3);
}

TEST_CASE("train config validation") {
    TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    TrainConfig bad = cfg;
    bad.initial_lr = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.bce_epsilon = 0.7;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("max_iter zero leaves the net unchanged") {
    CaceNet net(tiny_config(), 55);
    Tensor final_w = net.param("final.w");
    TrainConfig cfg;
    cfg.max_iter = 0;
    TrainResult res = train(net, tiny_dataset(2), cfg);
    CHECK(res.history.empty());
    CHECK(net.param("final.w").same_values(final_w));
}

TEST_CASE("training runs and is deterministic per seed") {
    TrainConfig cfg;
    cfg.max_iter = 8;
    cfg.batch_size = 2;
    cfg.seed = 99;

    CaceNet a(tiny_config(), 60);
    TrainResult ra = train(a, tiny_dataset(3), cfg);
    CaceNet b(tiny_config(), 60);
    TrainResult rb = train(b, tiny_dataset(3), cfg);

    REQUIRE(ra.history.size() == 8);
    REQUIRE(rb.history.size() == 8);
    for (size_t i = 0; i < 8; ++i) {
        CHECK(ra.history[i].iter == long(i));
        CHECK(ra.history[i].lr == poly_lr(long(i), cfg));
        CHECK(std::isfinite(ra.history[i].loss));
        CHECK(ra.history[i].loss == rb.history[i].loss);
        CHECK(ra.history[i].loss >= 0.0);
    }
    for (auto& [name, t] : a.parameters()) CHECK(b.param(name).same_values(*t));
}

TEST_CASE("checkpoint callback fires on schedule and at the end") {
    TrainConfig cfg;
    cfg.max_iter = 6;
    cfg.batch_size = 1;
    cfg.checkpoint_every = 2;
    CaceNet net(tiny_config(), 61);
    std::vector<long> calls;
    train(net, tiny_dataset(1), cfg, [&](long iter, const CaceNet&) { calls.push_back(iter); });
    REQUIRE(!calls.empty());
    CHECK(calls.back() == 6);
    for (size_t i = 0; i + 1 < calls.size(); ++i) CHECK(calls[i] % 2 == 0);
}

TEST_CASE("loss csv is byte-stable") {
    std::vector<TrainRecord> hist{{0, 0.001, 0.6931471805599453},
                                  {1, 0.000997, 0.5123456789012345}};
    auto path1 = std::filesystem::temp_directory_path() / "cace_loss_a.csv";
    auto path2 = std::filesystem::temp_directory_path() / "cace_loss_b.csv";
    write_loss_csv(path1.string(), hist);
    write_loss_csv(path2.string(), hist);
    std::ifstream f1(path1), f2(path2);
    std::stringstream s1, s2;
    s1 << f1.rdbuf();
    s2 << f2.rdbuf();
    CHECK(s1.str() == s2.str());
    CHECK(s1.str().rfind("iter,lr,loss\n", 0) == 0);
    std::filesystem::remove(path1);
    std::filesystem::remove(path2);
}
