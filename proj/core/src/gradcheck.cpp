#include "cace/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "cace/model.hpp"
#include "cace/rng.hpp"

namespace cace {

namespace {

using Builder = std::function<Variable(Tape&, std::vector<Variable>&)>;

// One instance: params are perturbed in place by the checker, so the loss
// closure rebuilds the graph from the stores on every call.
void run_instance(std::vector<Tensor*> stores, const Builder& build, double eps, double tol,
                  uint64_t seed, GradCheckRow& row, long max_coords = 200) {
    auto loss = [&]() {
        Tape tape;
        std::vector<Variable> vars;
        for (Tensor* s : stores) vars.push_back(tape.leaf(*s, true));
        Variable l = build(tape, vars);
        return tape.value(l).get(0);
    };
    Tape tape;
    std::vector<Variable> vars;
    for (Tensor* s : stores) vars.push_back(tape.leaf(*s, true));
    Variable l = build(tape, vars);
    tape.backward(l);
    std::vector<std::pair<std::string, Tensor*>> params;
    std::vector<Tensor> grads;
    for (size_t i = 0; i < stores.size(); ++i) {
        params.emplace_back("p" + std::to_string(i), stores[i]);
        grads.push_back(tape.has_grad(vars[i]) ? tape.grad(vars[i])
                                               : Tensor(stores[i]->shape(), stores[i]->dtype()));
    }
    FdReport r = finite_diff_check(loss, params, grads, eps, tol, seed, max_coords);
    row.max_rel_err = std::max(row.max_rel_err, r.max_rel_err);
    for (const FdEntry& e : r.per_param) row.checked += e.checked;
}

Tensor distinct_tensor(Rng& rng, long n, long c, long h, long w) {
    // values spaced well apart so +-eps perturbations cannot flip an argmax
    Tensor t(n, c, h, w);
    std::vector<long> perm(size_t(t.numel()));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    for (long i = 0; i < t.numel(); ++i)
        t.set(i, 0.01 * double(perm[size_t(i)]) + rng.uniform(-1e-3, 1e-3));
    return t;
}

Tensor away_from_zero(Rng& rng, long n, long c, long h, long w) {
    Tensor t = rng.normal_tensor(n, c, h, w, 1.0);
    for (long i = 0; i < t.numel(); ++i)
        if (std::abs(t.get(i)) < 1e-2) t.set(i, t.get(i) < 0 ? -1e-2 : 1e-2);
    return t;
}

}  // namespace

std::vector<GradCheckRow> run_gradcheck_suite(uint64_t seed, long instances_per_op,
                                              bool include_full_net) {
    std::vector<GradCheckRow> rows;
    const double kTol = 1e-4, kTolBn = 1e-3, kEps = 1e-5;

    auto add_case = [&](const std::string& name, double tol,
                        const std::function<void(Rng&, GradCheckRow&)>& instance) {
        GradCheckRow row{name, 0.0, tol, 0, false};
        for (long i = 0; i < instances_per_op; ++i) {
            Rng rng(seed, name + "#" + std::to_string(i));
            instance(rng, row);
        }
        row.pass = row.max_rel_err <= tol;
        rows.push_back(row);
    };

    add_case("conv2d", kTol, [&](Rng& rng, GradCheckRow& row) {
        ConvSpec spec{.kh = 3, .kw = 3, .sh = 2, .sw = 1, .ph = 1, .pw = 1,
                      .in_channels = 3, .out_channels = 2};
        Tensor x = rng.normal_tensor(2, 3, 6, 7, 1.0);
        Tensor w = rng.normal_tensor(2, 3, 3, 3, 0.5);
        Tensor b = rng.normal_tensor(1, 2, 1, 1, 0.5);
        run_instance({&x, &w, &b},
                     [&](Tape& t, std::vector<Variable>& v) {
                         return t.mean_all(t.conv2d(v[0], v[1], v[2], spec));
                     },
                     kEps, kTol, rng.engine()(), row);
    });

    add_case("conv2d_dilated", kTol, [&](Rng& rng, GradCheckRow& row) {
        ConvSpec spec{.kh = 3, .kw = 3, .ph = 2, .pw = 2, .dh = 2, .dw = 2,
                      .in_channels = 2, .out_channels = 2};
        Tensor x = rng.normal_tensor(1, 2, 6, 6, 1.0);
        Tensor w = rng.normal_tensor(2, 2, 3, 3, 0.5);
        Tensor b = rng.normal_tensor(1, 2, 1, 1, 0.5);
        run_instance({&x, &w, &b},
                     [&](Tape& t, std::vector<Variable>& v) {
                         return t.mean_all(t.conv2d(v[0], v[1], v[2], spec));
                     },
                     kEps, kTol, rng.engine()(), row);
    });

    add_case("transposed_conv2d", kTol, [&](Rng& rng, GradCheckRow& row) {
        ConvSpec spec{.kh = 3, .kw = 3, .sh = 2, .sw = 2, .ph = 1, .pw = 1, .oph = 1, .opw = 1,
                      .in_channels = 2, .out_channels = 3};
        Tensor x = rng.normal_tensor(1, 2, 3, 3, 1.0);
        Tensor w = rng.normal_tensor(2, 3, 3, 3, 0.5);
        Tensor b = rng.normal_tensor(1, 3, 1, 1, 0.5);
        run_instance({&x, &w, &b},
                     [&](Tape& t, std::vector<Variable>& v) {
                         return t.mean_all(t.transposed_conv2d(v[0], v[1], v[2], spec));
                     },
                     kEps, kTol, rng.engine()(), row);
    });

    add_case("maxpool2d", kTol, [&](Rng& rng, GradCheckRow& row) {
        Tensor x = distinct_tensor(rng, 1, 2, 6, 6);
        run_instance({&x},
                     [&](Tape& t, std::vector<Variable>& v) {
                         return t.mean_all(t.maxpool2d(v[0], 3, 3, 3, 3));
                     },
                     kEps, kTol, rng.engine()(), row);
    });

    add_case("global_avg_pool", kTol, [&](Rng& rng, GradCheckRow& row) {
        Tensor x = rng.normal_tensor(2, 3, 4, 4, 1.0);
        run_instance({&x},
                     [&](Tape& t, std::vector<Variable>& v) {
                         return t.mean_all(t.global_avg_pool(v[0]));
                     },
                     kEps, kTol, rng.engine()(), row);
    });

    add_case("batch_norm_train", kTolBn, [&](Rng& rng, GradCheckRow& row) {
        Tensor x = rng.normal_tensor(3, 2, 4, 4, 1.0);
        Tensor gamma = rng.normal_tensor(1, 2, 1, 1, 0.5);
        Tensor beta = rng.normal_tensor(1, 2, 1, 1, 0.5);
        run_instance({&x, &gamma, &beta},
                     [&](Tape& t, std::vector<Variable>& v) {
                         Tensor rm = Tensor::zeros(1, 2, 1, 1);
                         Tensor rv = Tensor::full(1, 2, 1, 1, 1.0);
                         Variable y = t.batch_norm(v[0], v[1], v[2], rm, rv, ops::BnMode::train,
                                                   0.1, 1e-5);
                         // rescale by a statistic of the output so the
                         // mean-zero constraint does not hide the input grad
                         return t.mean_all(t.scale_channels(
                             y, t.global_avg_pool(t.sigmoid(y))));
                     },
                     kEps, kTolBn, rng.engine()(), row);
    });

    add_case("batch_norm_eval", kTol, [&](Rng& rng, GradCheckRow& row) {
        Tensor x = rng.normal_tensor(2, 2, 4, 4, 1.0);
        Tensor gamma = rng.normal_tensor(1, 2, 1, 1, 0.5);
        Tensor beta = rng.normal_tensor(1, 2, 1, 1, 0.5);
        Tensor rm = rng.normal_tensor(1, 2, 1, 1, 0.3);
        Tensor rv = rng.uniform_tensor(1, 2, 1, 1, 0.5, 2.0);
        run_instance({&x, &gamma, &beta},
                     [&](Tape& t, std::vector<Variable>& v) {
                         Tensor m = rm, s = rv;
                         return t.mean_all(t.relu(t.batch_norm(v[0], v[1], v[2], m, s,
                                                               ops::BnMode::eval, 0.1, 1e-5)));
                     },
                     kEps, kTol, rng.engine()(), row);
    });

    add_case("relu", kTol, [&](Rng& rng, GradCheckRow& row) {
        Tensor x = away_from_zero(rng, 2, 2, 3, 3);
        run_instance({&x},
                     [&](Tape& t, std::vector<Variable>& v) { return t.mean_all(t.relu(v[0])); },
                     kEps, kTol, rng.engine()(), row);
    });

    add_case("sigmoid", kTol, [&](Rng& rng, GradCheckRow& row) {
        Tensor x = rng.normal_tensor(2, 2, 3, 3, 2.0);
        run_instance({&x},
                     [&](Tape& t, std::vector<Variable>& v) {
                         return t.mean_all(t.sigmoid(v[0]));
                     },
                     kEps, kTol, rng.engine()(), row);
    });

    add_case("add_fanout", kTol, [&](Rng& rng, GradCheckRow& row) {
        Tensor x = rng.normal_tensor(1, 2, 3, 3, 1.0);
        Tensor y = rng.normal_tensor(1, 2, 3, 3, 1.0);
        run_instance({&x, &y},
                     [&](Tape& t, std::vector<Variable>& v) {
                         // x used twice: accumulation across fan-out
                         return t.mean_all(t.add(t.add(v[0], v[1]), t.sigmoid(v[0])));
                     },
                     kEps, kTol, rng.engine()(), row);
    });

    add_case("concat_channels", kTol, [&](Rng& rng, GradCheckRow& row) {
        Tensor x = rng.normal_tensor(1, 2, 3, 3, 1.0);
        Tensor y = rng.normal_tensor(1, 3, 3, 3, 1.0);
        run_instance({&x, &y},
                     [&](Tape& t, std::vector<Variable>& v) {
                         return t.mean_all(t.sigmoid(t.concat_channels({v[0], v[1]})));
                     },
                     kEps, kTol, rng.engine()(), row);
    });

    add_case("scale_channels", kTol, [&](Rng& rng, GradCheckRow& row) {
        Tensor x = rng.normal_tensor(2, 3, 4, 4, 1.0);
        Tensor s = rng.normal_tensor(2, 3, 1, 1, 1.0);
        run_instance({&x, &s},
                     [&](Tape& t, std::vector<Variable>& v) {
                         return t.mean_all(t.sigmoid(t.scale_channels(v[0], v[1])));
                     },
                     kEps, kTol, rng.engine()(), row);
    });

    add_case("linear", kTol, [&](Rng& rng, GradCheckRow& row) {
        Tensor x = rng.normal_tensor(2, 5, 1, 1, 1.0);
        Tensor w = rng.normal_tensor(3, 5, 1, 1, 0.5);
        Tensor b = rng.normal_tensor(1, 3, 1, 1, 0.5);
        run_instance({&x, &w, &b},
                     [&](Tape& t, std::vector<Variable>& v) {
                         return t.mean_all(t.sigmoid(t.linear(v[0], v[1], v[2])));
                     },
                     kEps, kTol, rng.engine()(), row);
    });

    add_case("bilinear_upsample", kTol, [&](Rng& rng, GradCheckRow& row) {
        Tensor x = rng.normal_tensor(1, 2, 3, 4, 1.0);
        run_instance({&x},
                     [&](Tape& t, std::vector<Variable>& v) {
                         return t.mean_all(t.bilinear_upsample(v[0], 7, 9));
                     },
                     kEps, kTol, rng.engine()(), row);
    });

    add_case("bce_loss", kTol, [&](Rng& rng, GradCheckRow& row) {
        Tensor x = rng.normal_tensor(1, 1, 4, 4, 1.5);
        Tensor target(1, 1, 4, 4);
        for (long i = 0; i < target.numel(); ++i)
            target.set(i, rng.uniform() < 0.5 ? 0.0 : 1.0);
        run_instance({&x},
                     [&](Tape& t, std::vector<Variable>& v) {
                         return t.bce_loss(t.sigmoid(v[0]), target, 1e-7);
                     },
                     kEps, kTol, rng.engine()(), row);
    });

    add_case("conv_relu_pool_chain", kTol, [&](Rng& rng, GradCheckRow& row) {
        ConvSpec spec{.kh = 3, .kw = 3, .ph = 1, .pw = 1, .in_channels = 1, .out_channels = 2};
        Tensor x = distinct_tensor(rng, 1, 1, 6, 6);
        Tensor w = rng.normal_tensor(2, 1, 3, 3, 0.5);
        Tensor b = rng.normal_tensor(1, 2, 1, 1, 0.5);
        run_instance({&x, &w, &b},
                     [&](Tape& t, std::vector<Variable>& v) {
                         Variable y = t.relu(t.conv2d(v[0], v[1], v[2], spec));
                         return t.mean_all(t.global_avg_pool(t.maxpool2d(y, 2, 2, 2, 2)));
                     },
                     kEps, kTol, rng.engine()(), row);
    });

    if (include_full_net) {
        GradCheckRow row{"full_net_bce", 0.0, kTolBn, 0, false};
        ModelConfig cfg;
        cfg.base_width = 4;
        cfg.reduction_ratio = 2;
        cfg.input_h = cfg.input_w = 16;
        cfg.rmp_windows = {1};
        CaceNet net(cfg, derive_seed(seed, "full_net"));
        Rng rng(seed, "full_net_data");
        Tensor image = rng.uniform_tensor(2, 1, 16, 16, 0.0, 1.0);
        Tensor target(2, 1, 16, 16);
        for (long i = 0; i < target.numel(); ++i)
            target.set(i, rng.uniform() < 0.5 ? 0.0 : 1.0);

        auto loss = [&]() {
            Tape tape;
            Variable in = tape.leaf(image, false);
            Variable pred = net.forward_on(tape, in, RunMode::train);
            Variable l = tape.bce_loss(pred, target, 1e-7);
            return tape.value(l).get(0);
        };
        Tape tape;
        Variable in = tape.leaf(image, false);
        Variable pred = net.forward_on(tape, in, RunMode::train);
        Variable l = tape.bce_loss(pred, target, 1e-7);
        tape.backward(l);
        auto params = net.parameters();
        std::vector<Tensor> grads;
        const auto& leaves = net.param_leaves();
        for (const auto& [name, t] : params) grads.push_back(tape.grad(leaves.at(name)));
        // ~20 layers of f64 accumulation leave the loss with rounding noise on
        // the order of 1e-13; divided by 2*eps that is ~5e-9, so gradient
        // coordinates near the default 1e-8 floor cannot be resolved by the
        // difference quotient. A 1e-4 floor keeps a true relative check for
        // every coordinate of typical magnitude and bounds the absolute error
        // at tol * floor = 1e-7 for the tiny ones.
        FdReport r = finite_diff_check(loss, params, grads, kEps, kTolBn,
                                       derive_seed(seed, "full_net_fd"), 50, 1e-4);
        row.max_rel_err = r.max_rel_err;
        for (const FdEntry& e : r.per_param) row.checked += e.checked;
        row.pass = row.max_rel_err <= row.tolerance;
        rows.push_back(row);
    }
    return rows;
}

std::string format_gradcheck_table(const std::vector<GradCheckRow>& rows) {
    std::ostringstream os;
    os << "op                    max_rel_err   tolerance  coords  result\n";
    char buf[128];
    for (const GradCheckRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%-20s  %11.3e  %10.0e  %6ld  %s\n", r.op.c_str(),
                      r.max_rel_err, r.tolerance, r.checked, r.pass ? "pass" : "FAIL");
        os << buf;
    }
    return os.str();
}

bool gradcheck_passed(const std::vector<GradCheckRow>& rows) {
    for (const GradCheckRow& r : rows)
        if (!r.pass) return false;
    return true;
}

}  // namespace cace
