#include "cace/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "cace/ops.hpp"
#include "cace/rng.hpp"

namespace cace {

void TrainConfig::validate() const {
    if (max_iter < 0) throw ConfigError("train.max_iter must be >= 0");
    if (initial_lr <= 0) throw ConfigError("train.initial_lr must be > 0");
    if (weight_decay < 0) throw ConfigError("train.weight_decay must be >= 0");
    if (poly_power < 0) throw ConfigError("train.poly_power must be >= 0");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
    if (bce_epsilon <= 0 || bce_epsilon >= 0.5)
        throw ConfigError("train.bce_epsilon must be in (0, 0.5)");
}

double poly_lr(long iteration, const TrainConfig& cfg) {
    if (iteration < 0 || iteration > cfg.max_iter)
        throw ConfigError("poly_lr iteration " + std::to_string(iteration) +
                          " outside [0, max_iter=" + std::to_string(cfg.max_iter) + "]");
    if (cfg.max_iter == 0) return cfg.initial_lr;
    const double base = 1.0 - double(iteration) / double(cfg.max_iter);
    return cfg.initial_lr * std::pow(base, cfg.poly_power);
}

void sgd_step(std::vector<std::pair<std::string, Tensor*>>& params,
              const std::vector<Tensor>& grads, double lr, double weight_decay) {
    if (params.size() != grads.size())
        throw ConfigError("sgd_step: gradient count does not match parameter count");
    for (size_t p = 0; p < params.size(); ++p) {
        Tensor& t = *params[p].second;
        const Tensor& g = grads[p];
        if (g.shape() != t.shape())
            throw ShapeError("sgd_step: gradient shape mismatch for " + params[p].first);
        for (long i = 0; i < t.numel(); ++i)
            t.set(i, t.get(i) - lr * (g.get(i) + weight_decay * t.get(i)));
    }
}

namespace {

Tensor stack_samples(const std::vector<SegmentationSample>& dataset,
                     const std::vector<long>& ids, bool masks, DType dt) {
    const Tensor& first = masks ? dataset[size_t(ids[0])].mask : dataset[size_t(ids[0])].image;
    Tensor out(long(ids.size()), first.c(), first.h(), first.w(), dt);
    long off = 0;
    for (long id : ids) {
        const Tensor& s = masks ? dataset[size_t(id)].mask : dataset[size_t(id)].image;
        if (s.shape() != first.shape())
            throw DataError("dataset samples disagree on shape: " + s.shape().str() + " vs " +
                            first.shape().str());
        for (long i = 0; i < s.numel(); ++i) out.set(off + i, s.get(i));
        off += s.numel();
    }
    return out;
}

double grad_norm(const Tensor& g) {
    double s = 0;
    for (long i = 0; i < g.numel(); ++i) s += g.get(i) * g.get(i);
    return std::sqrt(s);
}

}  // namespace

TrainResult train(CaceNet& net, const std::vector<SegmentationSample>& dataset,
                  const TrainConfig& cfg,
                  const std::function<void(long, const CaceNet&)>& checkpoint_fn) {
    cfg.validate();
    if (dataset.empty()) throw DataError("training dataset is empty");

    const DType dt = net.config().dtype;
    auto params = net.parameters();
    Rng shuffle_rng(cfg.seed, "shuffle");
    std::vector<long> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    size_t cursor = order.size();  // forces a shuffle before the first batch
    const long batch = std::min<long>(cfg.batch_size, long(dataset.size()));

    TrainResult result;
    for (long iter = 0; iter < cfg.max_iter; ++iter) {
        std::vector<long> ids;
        while (long(ids.size()) < batch) {
            if (cursor == order.size()) {
                std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
                cursor = 0;
            }
            ids.push_back(order[cursor++]);
        }
        Tensor images = stack_samples(dataset, ids, false, dt);
        Tensor masks = stack_samples(dataset, ids, true, dt);

        const double lr = poly_lr(iter, cfg);
        Tape tape;
        Variable in = tape.leaf(std::move(images), false);
        Variable pred = net.forward_on(tape, in, RunMode::train);
        Variable loss = tape.bce_loss(pred, std::move(masks), cfg.bce_epsilon);
        const double loss_value = tape.value(loss).get(0);
        tape.backward(loss);

        std::vector<Tensor> grads;
        grads.reserve(params.size());
        const auto& leaves = net.param_leaves();
        for (const auto& [name, tensor] : params) {
            auto it = leaves.find(name);
            if (it == leaves.end() || !tape.has_grad(it->second))
                throw NumericError("missing gradient for parameter " + name);
            grads.push_back(tape.grad(it->second));
        }

        if (!std::isfinite(loss_value)) {
            double gmax = 0;
            for (const Tensor& g : grads) gmax = std::max(gmax, grad_norm(g));
            throw NumericError("non-finite loss at iteration " + std::to_string(iter) +
                               " (lr=" + std::to_string(lr) +
                               ", max grad norm=" + std::to_string(gmax) + ")");
        }

        result.history.push_back({iter, lr, loss_value});
        sgd_step(params, grads, lr, cfg.weight_decay);
        result.final_loss = loss_value;

        if (checkpoint_fn && cfg.checkpoint_every > 0 && (iter + 1) % cfg.checkpoint_every == 0)
            checkpoint_fn(iter + 1, net);
    }
    if (checkpoint_fn && cfg.max_iter > 0) checkpoint_fn(cfg.max_iter, net);
    return result;
}

void write_loss_csv(const std::string& path, const std::vector<TrainRecord>& history) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot open loss csv for writing: " + path);
    os << "iter,lr,loss\n";
    char buf[96];
    for (const TrainRecord& r : history) {
        std::snprintf(buf, sizeof(buf), "%ld,%.17g,%.17g\n", r.iter, r.lr, r.loss);
        os << buf;
    }
}

}  // namespace cace
