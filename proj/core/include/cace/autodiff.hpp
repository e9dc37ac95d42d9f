#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "cace/ops.hpp"
#include "cace/tensor.hpp"

namespace cace {

class Tape;

struct Variable {
    int id = -1;
    Tape* tape = nullptr;
    bool valid() const { return id >= 0 && tape != nullptr; }
};

// Reverse-mode tape. Recording order is topological order; backward walks it
// strictly in reverse, accumulating additively across fan-out.
class Tape {
public:
    Variable leaf(Tensor value, bool requires_grad = false);

    // Process-unique identity; outlives address reuse when tapes are
    // stack-allocated in a loop.
    uint64_t uid() const { return uid_; }

    const Tensor& value(const Variable& v) const;
    const Tensor& grad(const Variable& v) const;
    bool has_grad(const Variable& v) const;
    void backward(const Variable& loss);
    void reset_grads();
    size_t size() const { return nodes_.size(); }

    Variable add(Variable a, Variable b);
    Variable relu(Variable x);
    Variable sigmoid(Variable x);
    Variable conv2d(Variable x, Variable w, Variable b, const ConvSpec& spec);
    Variable transposed_conv2d(Variable x, Variable w, Variable b, const ConvSpec& spec);
    Variable maxpool2d(Variable x, long kh, long kw, long sh, long sw);
    Variable global_avg_pool(Variable x);
    Variable batch_norm(Variable x, Variable gamma, Variable beta, Tensor& running_mean,
                        Tensor& running_var, ops::BnMode mode, double momentum, double epsilon);
    Variable concat_channels(const std::vector<Variable>& parts);
    Variable scale_channels(Variable x, Variable s);
    Variable linear(Variable x, Variable w, Variable b);
    Variable bilinear_upsample(Variable x, long target_h, long target_w);
    Variable mean_all(Variable x);
    Variable bce_loss(Variable prediction, Tensor target, double epsilon);

private:
    struct Node {
        Tensor value;
        std::vector<int> inputs;
        std::function<void(Tape&, const Tensor&)> backward;
        bool requires_grad = false;
    };

    int check(const Variable& v) const;
    bool any_requires(const std::vector<int>& ids) const;
    int push(Tensor value, std::vector<int> inputs,
             std::function<void(Tape&, const Tensor&)> backward);
    void accum(int id, const Tensor& g);

    static uint64_t next_uid();

    uint64_t uid_ = next_uid();
    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
    std::vector<char> grad_set_;
};

// --- finite-difference oracle ----------------------------------------------

struct FdEntry {
    std::string name;
    double max_rel_err = 0.0;
    long checked = 0;
};

struct FdReport {
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool pass = false;
    std::string worst;  // "param[coord]" of the worst coordinate
    std::vector<FdEntry> per_param;
};

// Central differences (f(p+eps) - f(p-eps)) / (2 eps) per coordinate against
// the supplied analytic gradients. Parameters with more than
// max_coords_per_param elements are checked on a seeded random subset.
// Relative error is |a - n| / max(|a|, |n|, denom_floor). Deep graphs need a
// larger denom_floor: the difference quotient carries the loss's accumulated
// f64 rounding divided by 2*epsilon, which swamps gradient coordinates near
// the default 1e-8 floor.
FdReport finite_diff_check(const std::function<double()>& loss,
                           const std::vector<std::pair<std::string, Tensor*>>& params,
                           const std::vector<Tensor>& analytic_grads, double epsilon = 1e-5,
                           double tolerance = 1e-4, uint64_t seed = 0,
                           long max_coords_per_param = 200, double denom_floor = 1e-8);

}  // namespace cace
