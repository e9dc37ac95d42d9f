#include "cace/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#include "cace/rng.hpp"

namespace cace {

uint64_t Tape::next_uid() {
    static std::atomic<uint64_t> counter{0};
    return ++counter;
}

int Tape::check(const Variable& v) const {
    if (!v.valid()) throw ConfigError("use of an uninitialized Variable");
    if (v.tape != this) throw ConfigError("Variable belongs to a different tape");
    if (v.id >= int(nodes_.size())) throw ConfigError("Variable id out of range");
    return v.id;
}

bool Tape::any_requires(const std::vector<int>& ids) const {
    for (int id : ids)
        if (nodes_[size_t(id)].requires_grad) return true;
    return false;
}

int Tape::push(Tensor value, std::vector<int> inputs,
               std::function<void(Tape&, const Tensor&)> backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = any_requires(inputs);
    n.inputs = std::move(inputs);
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return int(nodes_.size()) - 1;
}

Variable Tape::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Variable{int(nodes_.size()) - 1, this};
}

const Tensor& Tape::value(const Variable& v) const { return nodes_[size_t(check(v))].value; }

bool Tape::has_grad(const Variable& v) const {
    int id = check(v);
    return id < int(grad_set_.size()) && grad_set_[size_t(id)];
}

const Tensor& Tape::grad(const Variable& v) const {
    int id = check(v);
    if (id >= int(grad_set_.size()) || !grad_set_[size_t(id)])
        throw ConfigError("gradient not computed for this Variable");
    return grads_[size_t(id)];
}

void Tape::reset_grads() {
    grads_.clear();
    grad_set_.clear();
}

void Tape::accum(int id, const Tensor& g) {
    if (!nodes_[size_t(id)].requires_grad) return;
    if (g.shape() != nodes_[size_t(id)].value.shape())
        throw ShapeError("gradient shape " + g.shape().str() + " != value shape " +
                         nodes_[size_t(id)].value.shape().str());
    if (grad_set_[size_t(id)])
        grads_[size_t(id)] += g;
    else {
        grads_[size_t(id)] = g;
        grad_set_[size_t(id)] = 1;
    }
}

void Tape::backward(const Variable& loss) {
    int lid = check(loss);
    const Tensor& lv = nodes_[size_t(lid)].value;
    if (lv.numel() != 1)
        throw ShapeError("backward requires a scalar loss, got shape " + lv.shape().str());
    reset_grads();
    grads_.resize(nodes_.size());
    grad_set_.assign(nodes_.size(), 0);
    grads_[size_t(lid)] = Tensor::full(1, 1, 1, 1, 1.0, lv.dtype());
    grad_set_[size_t(lid)] = 1;
    for (int i = lid; i >= 0; --i) {
        Node& n = nodes_[size_t(i)];
        if (!grad_set_[size_t(i)] || !n.backward) continue;
        n.backward(*this, grads_[size_t(i)]);
    }
}

Variable Tape::add(Variable a, Variable b) {
    int ia = check(a), ib = check(b);
    Tensor out = ops::add(nodes_[size_t(ia)].value, nodes_[size_t(ib)].value);
    int id = push(std::move(out), {ia, ib}, [ia, ib](Tape& t, const Tensor& g) {
        t.accum(ia, g);
        t.accum(ib, g);
    });
    return {id, this};
}

Variable Tape::relu(Variable x) {
    int ix = check(x);
    int id = push(ops::relu(nodes_[size_t(ix)].value), {ix}, [ix](Tape& t, const Tensor& g) {
        t.accum(ix, ops::relu_backward(t.nodes_[size_t(ix)].value, g));
    });
    return {id, this};
}

Variable Tape::sigmoid(Variable x) {
    int ix = check(x);
    int id = push(ops::sigmoid(nodes_[size_t(ix)].value), {ix}, nullptr);
    // backward uses the cached forward output, not the input
    nodes_[size_t(id)].backward = nodes_[size_t(id)].requires_grad
        ? std::function<void(Tape&, const Tensor&)>([ix, id](Tape& t, const Tensor& g) {
              t.accum(ix, ops::sigmoid_backward(t.nodes_[size_t(id)].value, g));
          })
        : nullptr;
    return {id, this};
}

Variable Tape::conv2d(Variable x, Variable w, Variable b, const ConvSpec& spec) {
    int ix = check(x), iw = check(w), ib = check(b);
    Tensor out = ops::conv2d(nodes_[size_t(ix)].value, nodes_[size_t(iw)].value,
                             nodes_[size_t(ib)].value, spec);
    int id = push(std::move(out), {ix, iw, ib}, [ix, iw, ib, spec](Tape& t, const Tensor& g) {
        Tensor gi, gw, gb;
        ops::conv2d_backward(t.nodes_[size_t(ix)].value, t.nodes_[size_t(iw)].value, spec, g, gi,
                             gw, gb);
        t.accum(ix, gi);
        t.accum(iw, gw);
        t.accum(ib, gb);
    });
    return {id, this};
}

Variable Tape::transposed_conv2d(Variable x, Variable w, Variable b, const ConvSpec& spec) {
    int ix = check(x), iw = check(w), ib = check(b);
    Tensor out = ops::transposed_conv2d(nodes_[size_t(ix)].value, nodes_[size_t(iw)].value,
                                        nodes_[size_t(ib)].value, spec);
    int id = push(std::move(out), {ix, iw, ib}, [ix, iw, ib, spec](Tape& t, const Tensor& g) {
        Tensor gi, gw, gb;
        ops::transposed_conv2d_backward(t.nodes_[size_t(ix)].value, t.nodes_[size_t(iw)].value,
                                        spec, g, gi, gw, gb);
        t.accum(ix, gi);
        t.accum(iw, gw);
        t.accum(ib, gb);
    });
    return {id, this};
}

Variable Tape::maxpool2d(Variable x, long kh, long kw, long sh, long sw) {
    int ix = check(x);
    ops::PoolResult r = ops::maxpool2d(nodes_[size_t(ix)].value, kh, kw, sh, sw);
    Shape in_shape = nodes_[size_t(ix)].value.shape();
    DType dt = nodes_[size_t(ix)].value.dtype();
    int id = push(std::move(r.value), {ix},
                  [ix, in_shape, dt, argmax = std::move(r.argmax)](Tape& t, const Tensor& g) {
                      t.accum(ix, ops::maxpool2d_backward(in_shape, dt, argmax, g));
                  });
    return {id, this};
}

Variable Tape::global_avg_pool(Variable x) {
    int ix = check(x);
    Shape in_shape = nodes_[size_t(ix)].value.shape();
    int id = push(ops::global_avg_pool(nodes_[size_t(ix)].value), {ix},
                  [ix, in_shape](Tape& t, const Tensor& g) {
                      t.accum(ix, ops::global_avg_pool_backward(in_shape, g));
                  });
    return {id, this};
}

Variable Tape::batch_norm(Variable x, Variable gamma, Variable beta, Tensor& running_mean,
                          Tensor& running_var, ops::BnMode mode, double momentum, double epsilon) {
    int ix = check(x), ig = check(gamma), ib = check(beta);
    ops::BnResult r = ops::batch_norm(nodes_[size_t(ix)].value, nodes_[size_t(ig)].value,
                                      nodes_[size_t(ib)].value, running_mean, running_var, mode,
                                      momentum, epsilon);
    int id = push(std::move(r.value), {ix, ig, ib},
                  [ix, ig, ib, mode, mean = std::move(r.mean),
                   invstd = std::move(r.invstd)](Tape& t, const Tensor& g) {
                      Tensor gi, gg, gb;
                      ops::batch_norm_backward(t.nodes_[size_t(ix)].value,
                                               t.nodes_[size_t(ig)].value, mean, invstd, mode, g,
                                               gi, gg, gb);
                      t.accum(ix, gi);
                      t.accum(ig, gg);
                      t.accum(ib, gb);
                  });
    return {id, this};
}

Variable Tape::concat_channels(const std::vector<Variable>& parts) {
    std::vector<int> ids;
    std::vector<Tensor> values;
    std::vector<long> widths;
    for (const Variable& p : parts) {
        ids.push_back(check(p));
        values.push_back(nodes_[size_t(ids.back())].value);
        widths.push_back(values.back().c());
    }
    int id = push(ops::concat_channels(values), ids,
                  [ids, widths](Tape& t, const Tensor& g) {
                      long off = 0;
                      for (size_t k = 0; k < ids.size(); ++k) {
                          t.accum(ids[k], ops::slice_channels(g, off, widths[k]));
                          off += widths[k];
                      }
                  });
    return {id, this};
}

Variable Tape::scale_channels(Variable x, Variable s) {
    int ix = check(x), is = check(s);
    Tensor out = ops::scale_channels(nodes_[size_t(ix)].value, nodes_[size_t(is)].value);
    int id = push(std::move(out), {ix, is}, [ix, is](Tape& t, const Tensor& g) {
        Tensor gi, gs;
        ops::scale_channels_backward(t.nodes_[size_t(ix)].value, t.nodes_[size_t(is)].value, g, gi,
                                     gs);
        t.accum(ix, gi);
        t.accum(is, gs);
    });
    return {id, this};
}

Variable Tape::linear(Variable x, Variable w, Variable b) {
    int ix = check(x), iw = check(w), ib = check(b);
    Tensor out = ops::linear(nodes_[size_t(ix)].value, nodes_[size_t(iw)].value,
                             nodes_[size_t(ib)].value);
    int id = push(std::move(out), {ix, iw, ib}, [ix, iw, ib](Tape& t, const Tensor& g) {
        Tensor gi, gw, gb;
        ops::linear_backward(t.nodes_[size_t(ix)].value, t.nodes_[size_t(iw)].value, g, gi, gw, gb);
        t.accum(ix, gi);
        t.accum(iw, gw);
        t.accum(ib, gb);
    });
    return {id, this};
}

Variable Tape::bilinear_upsample(Variable x, long target_h, long target_w) {
    int ix = check(x);
    Shape in_shape = nodes_[size_t(ix)].value.shape();
    DType dt = nodes_[size_t(ix)].value.dtype();
    int id = push(ops::bilinear_upsample(nodes_[size_t(ix)].value, target_h, target_w), {ix},
                  [ix, in_shape, dt](Tape& t, const Tensor& g) {
                      t.accum(ix, ops::bilinear_upsample_backward(in_shape, dt, g));
                  });
    return {id, this};
}

Variable Tape::mean_all(Variable x) {
    int ix = check(x);
    Shape in_shape = nodes_[size_t(ix)].value.shape();
    DType dt = nodes_[size_t(ix)].value.dtype();
    int id = push(ops::mean_all(nodes_[size_t(ix)].value), {ix},
                  [ix, in_shape, dt](Tape& t, const Tensor& g) {
                      t.accum(ix, ops::mean_all_backward(in_shape, dt, g));
                  });
    return {id, this};
}

Variable Tape::bce_loss(Variable prediction, Tensor target, double epsilon) {
    int ip = check(prediction);
    double loss = ops::bce_loss(nodes_[size_t(ip)].value, target, epsilon);
    Tensor out = Tensor::full(1, 1, 1, 1, loss, nodes_[size_t(ip)].value.dtype());
    int id = push(std::move(out), {ip},
                  [ip, target = std::move(target), epsilon](Tape& t, const Tensor& g) {
                      t.accum(ip, ops::bce_loss_backward(t.nodes_[size_t(ip)].value, target,
                                                         epsilon, g.get(0)));
                  });
    return {id, this};
}

FdReport finite_diff_check(const std::function<double()>& loss,
                           const std::vector<std::pair<std::string, Tensor*>>& params,
                           const std::vector<Tensor>& analytic_grads, double epsilon,
                           double tolerance, uint64_t seed, long max_coords_per_param,
                           double denom_floor) {
    FdReport report;
    report.tolerance = tolerance;
    Rng rng(seed, "finite_diff_subsample");
    for (size_t p = 0; p < params.size(); ++p) {
        Tensor& t = *params[p].second;
        const Tensor& a = analytic_grads[p];
        std::vector<long> coords;
        if (t.numel() <= max_coords_per_param) {
            coords.resize(size_t(t.numel()));
            for (long i = 0; i < t.numel(); ++i) coords[size_t(i)] = i;
        } else {
            for (long i = 0; i < max_coords_per_param; ++i)
                coords.push_back(rng.uniform_int(0, t.numel() - 1));
        }
        FdEntry entry{params[p].first, 0.0, long(coords.size())};
        for (long i : coords) {
            const double orig = t.get(i);
            t.set(i, orig + epsilon);
            const double fp = loss();
            t.set(i, orig - epsilon);
            const double fm = loss();
            t.set(i, orig);
            const double numeric = (fp - fm) / (2.0 * epsilon);
            const double analytic = a.get(i);
            const double rel = std::abs(analytic - numeric) /
                               std::max({std::abs(analytic), std::abs(numeric), denom_floor});
            if (rel > entry.max_rel_err) entry.max_rel_err = rel;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst = params[p].first + "[" + std::to_string(i) + "]";
            }
        }
        report.per_param.push_back(std::move(entry));
    }
    report.pass = report.max_rel_err <= tolerance;
    return report;
}

}  // namespace cace
