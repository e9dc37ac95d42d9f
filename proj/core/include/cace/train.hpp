#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cace/data.hpp"
#include "cace/model.hpp"

namespace cace {

struct TrainConfig {
    double initial_lr = 0.001;
    double weight_decay = 0.0001;
    double poly_power = 0.9;
    long max_iter = 300;
    long batch_size = 4;
    uint64_t seed = 0;
    long checkpoint_every = 0;  // 0 disables periodic checkpoints
    double bce_epsilon = 1e-7;

    void validate() const;
};

struct TrainRecord {
    long iter;
    double lr;
    double loss;
};

// lr(iter) = initial_lr * (1 - iter/max_iter)^poly_power.
double poly_lr(long iteration, const TrainConfig& cfg);

// p <- p - lr * (g + weight_decay * p). Batch-norm running stats are not
// parameters and never pass through here.
void sgd_step(std::vector<std::pair<std::string, Tensor*>>& params,
              const std::vector<Tensor>& grads, double lr, double weight_decay);

struct TrainResult {
    std::vector<TrainRecord> history;
    double final_loss = 0.0;
};

// Shuffled minibatch SGD for max_iter iterations, deterministic per seed.
// checkpoint_fn, when given, is called at the configured cadence and once at
// the end. Aborts with NumericError on a non-finite loss.
TrainResult train(CaceNet& net, const std::vector<SegmentationSample>& dataset,
                  const TrainConfig& cfg,
                  const std::function<void(long iter, const CaceNet&)>& checkpoint_fn = nullptr);

void write_loss_csv(const std::string& path, const std::vector<TrainRecord>& history);

}  // namespace cace
