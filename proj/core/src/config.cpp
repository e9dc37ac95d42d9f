#include "cace/config.hpp"

#include <fstream>
#include <sstream>

#include "cace/rng.hpp"

namespace cace {

namespace {

const char* provenance_name(Provenance p) {
    switch (p) {
        case Provenance::def: return "default";
        case Provenance::file: return "file";
        case Provenance::flag: return "flag";
    }
    return "?";
}

std::vector<long> parse_long_list(const std::string& s, char sep) {
    std::vector<long> out;
    std::istringstream is(s);
    std::string tok;
    while (std::getline(is, tok, sep))
        if (!tok.empty()) out.push_back(std::stol(tok));
    return out;
}

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

}  // namespace

RunConfig::RunConfig() {
    auto def = [this](const std::string& k, const std::string& v) {
        order_.push_back(k);
        values_[k] = v;
        prov_[k] = Provenance::def;
    };
    def("seed", "0");

    def("model.input_channels", "1");
    def("model.base_width", "16");
    def("model.reduction_ratio", "16");
    def("model.dac_dilations", "1;1,3;1,3,5;1,3,5");
    def("model.rmp_windows", "1,2,3,4");
    def("model.attention", "on");
    def("model.input_h", "64");
    def("model.input_w", "64");
    def("model.dtype", "f64");

    def("train.initial_lr", "0.001");
    def("train.weight_decay", "0.0001");
    def("train.poly_power", "0.9");
    def("train.max_iter", "300");
    def("train.batch_size", "4");
    def("train.checkpoint_every", "0");
    def("train.bce_epsilon", "1e-7");

    def("synth.count", "20");
    def("synth.train_fraction", "0.5");
    def("synth.h", "64");
    def("synth.w", "64");
    def("synth.boundary_depth", "0.35");
    def("synth.dip_center", "0.5");
    def("synth.dip_width", "0.12");
    def("synth.dip_depth", "0.18");
    def("synth.smoothness_amp", "0.04");
    def("synth.speckle_sigma", "0.08");
    def("synth.vitreous_mean", "0.15");
    def("synth.retina_mean", "0.75");

    def("eval.threshold", "0.5");
    def("eval.min_area", "-1");  // -1 selects 0.1% of the image area
}

void RunConfig::assign(const std::string& key, const std::string& value, Provenance p) {
    if (!values_.count(key)) throw ConfigError("unknown configuration key: " + key);
    values_[key] = value;
    prov_[key] = p;
}

void RunConfig::load_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    std::string line;
    long lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
        assign(trim(line.substr(0, eq)), trim(line.substr(eq + 1)), Provenance::file);
    }
}

void RunConfig::set_flag(const std::string& key, const std::string& value) {
    assign(key, value, Provenance::flag);
}

void RunConfig::set_flag_assignment(const std::string& keyval) {
    auto eq = keyval.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got: " + keyval);
    assign(trim(keyval.substr(0, eq)), trim(keyval.substr(eq + 1)), Provenance::flag);
}

const std::string& RunConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown configuration key: " + key);
    return it->second;
}

long RunConfig::get_long(const std::string& key) const {
    try {
        return std::stol(get(key));
    } catch (const std::logic_error&) {
        throw ConfigError("configuration key " + key + " is not an integer: " + get(key));
    }
}

double RunConfig::get_double(const std::string& key) const {
    try {
        return std::stod(get(key));
    } catch (const std::logic_error&) {
        throw ConfigError("configuration key " + key + " is not a number: " + get(key));
    }
}

bool RunConfig::get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "on" || v == "true" || v == "1") return true;
    if (v == "off" || v == "false" || v == "0") return false;
    throw ConfigError("configuration key " + key + " is not a boolean: " + v);
}

Provenance RunConfig::provenance(const std::string& key) const { return prov_.at(key); }

ModelConfig RunConfig::model_config() const {
    ModelConfig c;
    c.input_channels = get_long("model.input_channels");
    c.base_width = get_long("model.base_width");
    c.reduction_ratio = get_long("model.reduction_ratio");
    c.dac_dilations.clear();
    {
        std::istringstream bs(get("model.dac_dilations"));
        std::string branch;
        while (std::getline(bs, branch, ';'))
            c.dac_dilations.push_back(parse_long_list(branch, ','));
    }
    c.rmp_windows = parse_long_list(get("model.rmp_windows"), ',');
    c.attention_enabled = get_bool("model.attention");
    c.input_h = get_long("model.input_h");
    c.input_w = get_long("model.input_w");
    const std::string& dt = get("model.dtype");
    if (dt == "f64") c.dtype = DType::f64;
    else if (dt == "f32") c.dtype = DType::f32;
    else throw ConfigError("model.dtype must be f64 or f32, got " + dt);
    c.validate();
    return c;
}

TrainConfig RunConfig::train_config() const {
    TrainConfig c;
    c.initial_lr = get_double("train.initial_lr");
    c.weight_decay = get_double("train.weight_decay");
    c.poly_power = get_double("train.poly_power");
    c.max_iter = get_long("train.max_iter");
    c.batch_size = get_long("train.batch_size");
    c.seed = sub_seed("train");
    c.checkpoint_every = get_long("train.checkpoint_every");
    c.bce_epsilon = get_double("train.bce_epsilon");
    c.validate();
    return c;
}

SynthSpec RunConfig::synth_spec() const {
    SynthSpec s;
    s.h = get_long("synth.h");
    s.w = get_long("synth.w");
    s.boundary_depth = get_double("synth.boundary_depth");
    s.dip_center = get_double("synth.dip_center");
    s.dip_width = get_double("synth.dip_width");
    s.dip_depth = get_double("synth.dip_depth");
    s.smoothness_amp = get_double("synth.smoothness_amp");
    s.speckle_sigma = get_double("synth.speckle_sigma");
    s.vitreous_mean = get_double("synth.vitreous_mean");
    s.retina_mean = get_double("synth.retina_mean");
    s.seed = sub_seed("data");
    s.validate();
    return s;
}

uint64_t RunConfig::sub_seed(const std::string& name) const {
    return derive_seed(seed(), name);
}

std::string RunConfig::resolved_text() const {
    std::ostringstream os;
    os << "# resolved configuration (value provenance in trailing comment)\n";
    for (const std::string& k : order_)
        os << k << "=" << values_.at(k) << "  # " << provenance_name(prov_.at(k)) << "\n";
    return os.str();
}

void RunConfig::write_resolved(const std::string& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot write resolved config: " + path);
    os << resolved_text();
}

}  // namespace cace
