#include "cace/model.hpp"

#include <algorithm>
#include <cmath>

#include "cace/rng.hpp"

namespace cace {

void ModelConfig::validate() const {
    if (input_channels < 1) throw ConfigError("model.input_channels must be >= 1");
    if (base_width < 1) throw ConfigError("model.base_width must be >= 1");
    if (reduction_ratio < 1) throw ConfigError("model.reduction_ratio must be >= 1");
    if (bottleneck_channels() < reduction_ratio)
        throw ConfigError("model.base_width*8 must be >= model.reduction_ratio");
    if (input_h < 16 || input_w < 16 || input_h % 16 != 0 || input_w % 16 != 0)
        throw ConfigError("model.input_size must be divisible by 16, got " +
                          std::to_string(input_h) + "x" + std::to_string(input_w));
    if (dac_dilations.empty()) throw ConfigError("model.dac_dilations must not be empty");
    for (const auto& cascade : dac_dilations) {
        if (cascade.empty()) throw ConfigError("model.dac_dilations cascade must not be empty");
        for (long d : cascade)
            if (d < 1) throw ConfigError("model.dac_dilations entries must be >= 1");
    }
    if (rmp_windows.empty()) throw ConfigError("model.rmp_windows must not be empty");
    const long bhw = std::min(bottleneck_h(), bottleneck_w());
    for (long k : rmp_windows) {
        if (k < 1) throw ConfigError("model.rmp_windows entries must be >= 1");
        if (k > bhw)
            throw ConfigError("model.rmp_windows entry " + std::to_string(k) +
                              " exceeds bottleneck size " + std::to_string(bhw));
    }
}

bool ModelConfig::compatible_with(const ModelConfig& o) const {
    return input_channels == o.input_channels && base_width == o.base_width &&
           reduction_ratio == o.reduction_ratio && dac_dilations == o.dac_dilations &&
           rmp_windows == o.rmp_windows && attention_enabled == o.attention_enabled &&
           input_h == o.input_h && input_w == o.input_w;
}

ModelConfig ModelConfig::desk() {
    ModelConfig c;
    c.base_width = 16;
    c.reduction_ratio = 16;
    c.rmp_windows = {1, 2, 3, 4};  // 64x64 input gives a 4x4 bottleneck
    c.input_h = c.input_w = 64;
    return c;
}

ModelConfig ModelConfig::paper_scale() {
    ModelConfig c;
    c.base_width = 64;
    c.reduction_ratio = 16;
    c.rmp_windows = {2, 3, 5, 6};
    c.input_h = c.input_w = 448;
    return c;
}

CaceNet::CaceNet(ModelConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    init_params(seed);
}

Tensor& CaceNet::add_param(const std::string& name, Tensor t) {
    auto [it, fresh] = params_.emplace(name, std::move(t));
    if (!fresh) throw ConfigError("duplicate parameter name " + name);
    return it->second;
}

Tensor& CaceNet::add_running(const std::string& name, Tensor t) {
    auto [it, fresh] = running_.emplace(name, std::move(t));
    if (!fresh) throw ConfigError("duplicate running stat name " + name);
    return it->second;
}

namespace {

Tensor he_normal(Rng& rng, long n, long c, long h, long w, DType dt) {
    const double stddev = std::sqrt(2.0 / double(c * h * w));
    return rng.normal_tensor(n, c, h, w, stddev, dt);
}

}  // namespace

void CaceNet::init_params(uint64_t seed) {
    Rng rng(seed, "model_init");
    const DType dt = cfg_.dtype;
    const long b = cfg_.base_width;
    const long C = cfg_.bottleneck_channels();

    auto add_bn = [&](const std::string& prefix, long ch) {
        add_param(prefix + ".gamma", Tensor::full(1, ch, 1, 1, 1.0, dt));
        add_param(prefix + ".beta", Tensor::zeros(1, ch, 1, 1, dt));
        add_running(prefix + ".running_mean", Tensor::zeros(1, ch, 1, 1));
        add_running(prefix + ".running_var", Tensor::full(1, ch, 1, 1, 1.0));
    };
    auto add_conv = [&](const std::string& name, long out, long in, long k, bool bias) {
        add_param(name + ".w", he_normal(rng, out, in, k, k, dt));
        if (bias) add_param(name + ".b", Tensor::zeros(1, out, 1, 1, dt));
    };

    // encoder: four residual units, each followed by 2x2 max-pooling
    long in_c = cfg_.input_channels;
    for (int i = 1; i <= 4; ++i) {
        const long out_c = b << (i - 1);
        const std::string p = "enc" + std::to_string(i);
        add_conv(p + ".conv1", out_c, in_c, 3, false);
        add_bn(p + ".bn1", out_c);
        add_conv(p + ".conv2", out_c, out_c, 3, false);
        add_bn(p + ".bn2", out_c);
        if (in_c != out_c) {
            add_conv(p + ".proj", out_c, in_c, 1, false);
            add_bn(p + ".bnp", out_c);
        }
        in_c = out_c;
    }

    // context module: atrous cascades, per-branch attention, multi-kernel pooling
    for (size_t j = 0; j < cfg_.dac_dilations.size(); ++j) {
        const std::string p = "dac.b" + std::to_string(j + 1);
        for (size_t k = 0; k < cfg_.dac_dilations[j].size(); ++k)
            add_conv(p + ".conv" + std::to_string(k + 1), C, C, 3, true);
        if (j + 1 == cfg_.dac_dilations.size()) add_conv(p + ".conv1x1", C, C, 1, true);
        if (cfg_.attention_enabled) {
            const long cr = std::max<long>(1, C / cfg_.reduction_ratio);
            add_param(p + ".att.w1", he_normal(rng, cr, C, 1, 1, dt));
            add_param(p + ".att.b1", Tensor::zeros(1, cr, 1, 1, dt));
            add_param(p + ".att.w2", he_normal(rng, C, cr, 1, 1, dt));
            add_param(p + ".att.b2", Tensor::zeros(1, C, 1, 1, dt));
        }
    }
    for (size_t k = 0; k < cfg_.rmp_windows.size(); ++k)
        add_conv("rmp.k" + std::to_string(k + 1), 1, C, 1, true);

    // decoder: three skip-connected blocks plus one final upsampling block
    const long widths[5] = {C + long(cfg_.rmp_windows.size()), 4 * b, 2 * b, b, b};
    for (int i = 1; i <= 4; ++i) {
        const std::string p = "dec" + std::to_string(i);
        const long din = widths[i - 1], dout = widths[i];
        const long mid = std::max<long>(1, dout / 4);
        add_conv(p + ".conv1", mid, din, 1, false);
        add_bn(p + ".bn1", mid);
        add_param(p + ".tconv.w", he_normal(rng, mid, mid, 3, 3, dt));  // (in, out, kh, kw)
        add_bn(p + ".bn2", mid);
        add_conv(p + ".conv2", dout, mid, 1, false);
        add_bn(p + ".bn3", dout);
    }
    add_conv("final", 1, b, 1, true);
}

Variable CaceNet::pvar(Tape& tape, const std::string& name) {
    if (active_tape_uid_ != tape.uid()) {
        active_tape_uid_ = tape.uid();
        leaves_.clear();
    }
    auto it = leaves_.find(name);
    if (it != leaves_.end()) return it->second;
    Variable v = tape.leaf(params_.at(name), true);
    leaves_.emplace(name, v);
    return v;
}

Variable CaceNet::conv_bn_relu(Tape& tape, Variable x, const std::string& prefix,
                               const ConvSpec& spec, RunMode mode, bool relu_after) {
    Variable zb = tape.leaf(Tensor::zeros(1, spec.out_channels, 1, 1, cfg_.dtype), false);
    Variable y = tape.conv2d(x, pvar(tape, prefix + ".w"), zb, spec);
    const std::string bn = prefix.substr(0, prefix.rfind('.')) + "." +
                           (prefix.ends_with("conv1")   ? "bn1"
                            : prefix.ends_with("conv2") ? "bn2"
                                                        : "bnp");
    y = tape.batch_norm(y, pvar(tape, bn + ".gamma"), pvar(tape, bn + ".beta"),
                        running_.at(bn + ".running_mean"), running_.at(bn + ".running_var"),
                        mode == RunMode::train ? ops::BnMode::train : ops::BnMode::eval,
                        kBnMomentum, kBnEpsilon);
    return relu_after ? tape.relu(y) : y;
}

Variable CaceNet::residual_unit(Tape& tape, Variable x, const std::string& prefix, long in_c,
                                long out_c, RunMode mode) {
    ConvSpec c3{.kh = 3, .kw = 3, .ph = 1, .pw = 1, .in_channels = in_c, .out_channels = out_c};
    Variable y = conv_bn_relu(tape, x, prefix + ".conv1", c3, mode);
    ConvSpec c3b = c3;
    c3b.in_channels = out_c;
    y = conv_bn_relu(tape, y, prefix + ".conv2", c3b, mode, /*relu_after=*/false);
    Variable shortcut = x;
    if (in_c != out_c) {
        ConvSpec c1{.kh = 1, .kw = 1, .in_channels = in_c, .out_channels = out_c};
        shortcut = conv_bn_relu(tape, x, prefix + ".proj", c1, mode, /*relu_after=*/false);
    }
    return tape.relu(tape.add(y, shortcut));
}

Variable CaceNet::channel_attention_on(Tape& tape, Variable features, const std::string& prefix) {
    Variable z = tape.global_avg_pool(features);
    Variable a = tape.relu(tape.linear(z, pvar(tape, prefix + ".w1"), pvar(tape, prefix + ".b1")));
    Variable s = tape.sigmoid(tape.linear(a, pvar(tape, prefix + ".w2"), pvar(tape, prefix + ".b2")));
    return tape.scale_channels(features, s);
}

Variable CaceNet::context_module_on(Tape& tape, Variable bottleneck, RunMode) {
    const long C = cfg_.bottleneck_channels();
    const Tensor& bt = tape.value(bottleneck);
    const long bh = bt.h(), bw = bt.w();

    // atrous branches, residual sum with the input
    Variable acc = bottleneck;
    for (size_t j = 0; j < cfg_.dac_dilations.size(); ++j) {
        const std::string p = "dac.b" + std::to_string(j + 1);
        Variable y = bottleneck;
        for (size_t k = 0; k < cfg_.dac_dilations[j].size(); ++k) {
            const long d = cfg_.dac_dilations[j][k];
            ConvSpec spec{.kh = 3, .kw = 3, .ph = d, .pw = d, .dh = d, .dw = d,
                          .in_channels = C, .out_channels = C};
            const std::string cn = p + ".conv" + std::to_string(k + 1);
            y = tape.relu(tape.conv2d(y, pvar(tape, cn + ".w"), pvar(tape, cn + ".b"), spec));
        }
        if (j + 1 == cfg_.dac_dilations.size()) {
            ConvSpec c1{.kh = 1, .kw = 1, .in_channels = C, .out_channels = C};
            y = tape.relu(
                tape.conv2d(y, pvar(tape, p + ".conv1x1.w"), pvar(tape, p + ".conv1x1.b"), c1));
        }
        if (cfg_.attention_enabled) y = channel_attention_on(tape, y, p + ".att");
        acc = tape.add(acc, y);
    }

    // multi-kernel pooling, compressed to one channel each and restored
    std::vector<Variable> parts{acc};
    for (size_t k = 0; k < cfg_.rmp_windows.size(); ++k) {
        const long win = cfg_.rmp_windows[k];
        Variable p = tape.maxpool2d(acc, win, win, win, win);
        ConvSpec c1{.kh = 1, .kw = 1, .in_channels = C, .out_channels = 1};
        const std::string rn = "rmp.k" + std::to_string(k + 1);
        p = tape.conv2d(p, pvar(tape, rn + ".w"), pvar(tape, rn + ".b"), c1);
        parts.push_back(tape.bilinear_upsample(p, bh, bw));
    }
    return tape.concat_channels(parts);
}

Variable CaceNet::decoder_block(Tape& tape, Variable x, Variable skip, const std::string& prefix,
                                long in_c, long out_c, RunMode mode) {
    const long mid = std::max<long>(1, out_c / 4);
    ConvSpec c1{.kh = 1, .kw = 1, .in_channels = in_c, .out_channels = mid};
    Variable y = conv_bn_relu(tape, x, prefix + ".conv1", c1, mode);

    ConvSpec up{.kh = 3, .kw = 3, .sh = 2, .sw = 2, .ph = 1, .pw = 1, .oph = 1, .opw = 1,
                .in_channels = mid, .out_channels = mid};
    Variable zb = tape.leaf(Tensor::zeros(1, mid, 1, 1, cfg_.dtype), false);
    y = tape.transposed_conv2d(y, pvar(tape, prefix + ".tconv.w"), zb, up);
    y = tape.batch_norm(y, pvar(tape, prefix + ".bn2.gamma"), pvar(tape, prefix + ".bn2.beta"),
                        running_.at(prefix + ".bn2.running_mean"),
                        running_.at(prefix + ".bn2.running_var"),
                        mode == RunMode::train ? ops::BnMode::train : ops::BnMode::eval,
                        kBnMomentum, kBnEpsilon);
    y = tape.relu(y);

    ConvSpec c2{.kh = 1, .kw = 1, .in_channels = mid, .out_channels = out_c};
    Variable zb2 = tape.leaf(Tensor::zeros(1, out_c, 1, 1, cfg_.dtype), false);
    Variable z = tape.conv2d(y, pvar(tape, prefix + ".conv2.w"), zb2, c2);
    z = tape.batch_norm(z, pvar(tape, prefix + ".bn3.gamma"), pvar(tape, prefix + ".bn3.beta"),
                        running_.at(prefix + ".bn3.running_mean"),
                        running_.at(prefix + ".bn3.running_var"),
                        mode == RunMode::train ? ops::BnMode::train : ops::BnMode::eval,
                        kBnMomentum, kBnEpsilon);
    z = tape.relu(z);
    if (skip.valid()) z = tape.add(z, skip);
    return z;
}

Variable CaceNet::forward_on(Tape& tape, Variable images, RunMode mode) {
    const Tensor& img = tape.value(images);
    if (img.c() != cfg_.input_channels)
        throw ShapeError("input channel count " + std::to_string(img.c()) +
                         " != model input_channels " + std::to_string(cfg_.input_channels));
    if (img.h() % 16 != 0 || img.w() % 16 != 0)
        throw ShapeError("input h,w must be divisible by 16, got " + img.shape().str());
    const long bh = img.h() / 16, bw = img.w() / 16;
    for (long k : cfg_.rmp_windows)
        if (k > std::min(bh, bw))
            throw ShapeError("input " + img.shape().str() + " gives bottleneck " +
                             std::to_string(bh) + "x" + std::to_string(bw) +
                             " smaller than rmp window " + std::to_string(k));

    const long b = cfg_.base_width;
    Variable x = images;
    Variable skips[4];
    long in_c = cfg_.input_channels;
    for (int i = 1; i <= 4; ++i) {
        const long out_c = b << (i - 1);
        x = residual_unit(tape, x, "enc" + std::to_string(i), in_c, out_c, mode);
        x = tape.maxpool2d(x, 2, 2, 2, 2);
        skips[i - 1] = x;
        in_c = out_c;
    }

    x = context_module_on(tape, x, mode);

    const long C = cfg_.bottleneck_channels();
    const long widths[5] = {C + long(cfg_.rmp_windows.size()), 4 * b, 2 * b, b, b};
    x = decoder_block(tape, x, skips[2], "dec1", widths[0], widths[1], mode);
    x = decoder_block(tape, x, skips[1], "dec2", widths[1], widths[2], mode);
    x = decoder_block(tape, x, skips[0], "dec3", widths[2], widths[3], mode);
    x = decoder_block(tape, x, Variable{}, "dec4", widths[3], widths[4], mode);

    ConvSpec head{.kh = 1, .kw = 1, .in_channels = b, .out_channels = 1};
    x = tape.conv2d(x, pvar(tape, "final.w"), pvar(tape, "final.b"), head);
    return tape.sigmoid(x);
}

Tensor CaceNet::forward(const Tensor& images) const {
    // eval mode leaves all stored state untouched; the tape cache is per-call
    CaceNet& self = const_cast<CaceNet&>(*this);
    Tape tape;
    Variable in = tape.leaf(images.astype(cfg_.dtype), false);
    Variable out = self.forward_on(tape, in, RunMode::eval);
    Tensor result = tape.value(out);
    self.active_tape_uid_ = 0;
    self.leaves_.clear();
    return result;
}

std::vector<std::pair<std::string, Tensor*>> CaceNet::parameters() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (auto& [k, v] : params_) out.emplace_back(k, &v);
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> CaceNet::parameters() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    for (const auto& [k, v] : params_) out.emplace_back(k, &v);
    return out;
}

std::vector<std::pair<std::string, Tensor*>> CaceNet::running_stats() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (auto& [k, v] : running_) out.emplace_back(k, &v);
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> CaceNet::running_stats() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    for (const auto& [k, v] : running_) out.emplace_back(k, &v);
    return out;
}

Tensor& CaceNet::param(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter " + name);
    return it->second;
}

const Tensor& CaceNet::param(const std::string& name) const {
    return const_cast<CaceNet*>(this)->param(name);
}

}  // namespace cace
