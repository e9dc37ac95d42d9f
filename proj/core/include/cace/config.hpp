#pragma once

#include <map>
#include <string>
#include <vector>

#include "cace/data.hpp"
#include "cace/model.hpp"
#include "cace/train.hpp"

namespace cace {

enum class Provenance { def, file, flag };

// Flat key=value configuration with dotted section names. Every key has a
// recorded default; unknown keys are rejected. The resolved copy written next
// to every output records each value's provenance.
class RunConfig {
public:
    RunConfig();

    void load_file(const std::string& path);
    void set_flag(const std::string& key, const std::string& value);
    void set_flag_assignment(const std::string& keyval);  // "key=value"

    const std::string& get(const std::string& key) const;
    long get_long(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    Provenance provenance(const std::string& key) const;

    ModelConfig model_config() const;
    TrainConfig train_config() const;
    SynthSpec synth_spec() const;
    uint64_t seed() const { return uint64_t(get_long("seed")); }
    uint64_t sub_seed(const std::string& name) const;

    void write_resolved(const std::string& path) const;
    std::string resolved_text() const;

private:
    void assign(const std::string& key, const std::string& value, Provenance p);

    std::vector<std::string> order_;
    std::map<std::string, std::string> values_;
    std::map<std::string, Provenance> prov_;
};

}  // namespace cace
