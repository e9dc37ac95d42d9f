#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cace/autodiff.hpp"
#include "cace/tensor.hpp"

namespace cace {

// Architecture hyperparameters. Encoder widths are base_width * {1,2,4,8};
// input h,w must be divisible by 16 (four 2x downsamplings) and every RMP
// window must fit the 16x-downsampled bottleneck.
struct ModelConfig {
    long input_channels = 1;
    long base_width = 16;
    long reduction_ratio = 16;
    std::vector<std::vector<long>> dac_dilations = {{1}, {1, 3}, {1, 3, 5}, {1, 3, 5}};
    std::vector<long> rmp_windows = {2, 3, 5, 6};
    bool attention_enabled = true;
    long input_h = 64;
    long input_w = 64;
    DType dtype = DType::f64;

    long bottleneck_channels() const { return base_width * 8; }
    long bottleneck_h() const { return input_h / 16; }
    long bottleneck_w() const { return input_w / 16; }

    void validate() const;
    bool compatible_with(const ModelConfig& other) const;  // ignores dtype

    // 64x64 grayscale, base width 16, windows sized for the 4x4 bottleneck.
    static ModelConfig desk();
    // 448x448, base width 64, windows {2,3,5,6}.
    static ModelConfig paper_scale();
};

enum class RunMode { train, eval };

// The assembled network: a named parameter store plus the wiring that records
// the forward graph on a tape. Parameter names are stable across save/load.
class CaceNet {
public:
    CaceNet(ModelConfig cfg, uint64_t seed);

    const ModelConfig& config() const { return cfg_; }

    // Records the full forward pass; images must already be n x in_c x h x w
    // with h,w divisible by 16. Train mode updates batch-norm running stats.
    Variable forward_on(Tape& tape, Variable images, RunMode mode);

    // Convenience eval-mode forward on a private tape.
    Tensor forward(const Tensor& images) const;

    // Exposed pieces, used directly by tests and the gradcheck harness.
    Variable channel_attention_on(Tape& tape, Variable features, const std::string& prefix);
    Variable context_module_on(Tape& tape, Variable bottleneck, RunMode mode);

    // Tape leaves created by the most recent forward_on, keyed by parameter
    // name; used to read per-parameter gradients after backward.
    const std::map<std::string, Variable>& param_leaves() const { return leaves_; }

    std::vector<std::pair<std::string, Tensor*>> parameters();
    std::vector<std::pair<std::string, const Tensor*>> parameters() const;
    std::vector<std::pair<std::string, Tensor*>> running_stats();
    std::vector<std::pair<std::string, const Tensor*>> running_stats() const;
    Tensor& param(const std::string& name);
    const Tensor& param(const std::string& name) const;
    bool has_param(const std::string& name) const { return params_.count(name) > 0; }

    void save(const std::string& path) const;
    static CaceNet load(const std::string& path);
    static CaceNet load(const std::string& path, const ModelConfig& expected);

private:
    struct ParamVars;  // per-forward map from parameter name to tape Variable

    void init_params(uint64_t seed);
    Tensor& add_param(const std::string& name, Tensor t);
    Tensor& add_running(const std::string& name, Tensor t);

    Variable pvar(Tape& tape, const std::string& name);
    Variable conv_bn_relu(Tape& tape, Variable x, const std::string& prefix, const ConvSpec& spec,
                          RunMode mode, bool relu_after = true);
    Variable residual_unit(Tape& tape, Variable x, const std::string& prefix, long in_c, long out_c,
                           RunMode mode);
    Variable decoder_block(Tape& tape, Variable x, Variable skip, const std::string& prefix,
                           long in_c, long out_c, RunMode mode);

    ModelConfig cfg_;
    std::map<std::string, Tensor> params_;
    std::map<std::string, Tensor> running_;
    // per-forward cache; maps parameter names to leaves on the current tape
    uint64_t active_tape_uid_ = 0;
    std::map<std::string, Variable> leaves_;

    friend void save_checkpoint(const CaceNet& net, const std::string& path);
};

// Batch-norm hyperparameters are fixed architecture-wide.
inline constexpr double kBnMomentum = 0.1;
inline constexpr double kBnEpsilon = 1e-5;

}  // namespace cace
