#include <array>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cace/model.hpp"

namespace cace {

namespace {

constexpr char kMagic[8] = {'C', 'A', 'C', 'E', 'N', 'E', 'T', '1'};
constexpr uint32_t kVersion = 1;

uint32_t crc32(const uint8_t* data, size_t len) {
    static const auto table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    uint32_t c = 0xFFFFFFFFu;
    for (size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xFF] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

template <class T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw DataError("checkpoint truncated");
    return v;
}

void write_string(std::ostream& os, const std::string& s) {
    write_pod<uint32_t>(os, uint32_t(s.size()));
    os.write(s.data(), long(s.size()));
}

std::string read_string(std::istream& is) {
    uint32_t len = read_pod<uint32_t>(is);
    if (len > (1u << 20)) throw DataError("checkpoint corrupt: unreasonable string length");
    std::string s(len, '\0');
    is.read(s.data(), long(len));
    if (!is) throw DataError("checkpoint truncated");
    return s;
}

std::string serialize_config(const ModelConfig& c) {
    std::ostringstream os;
    os << "input_channels=" << c.input_channels << "\n";
    os << "base_width=" << c.base_width << "\n";
    os << "reduction_ratio=" << c.reduction_ratio << "\n";
    os << "dac_dilations=";
    for (size_t j = 0; j < c.dac_dilations.size(); ++j) {
        if (j) os << ";";
        for (size_t k = 0; k < c.dac_dilations[j].size(); ++k)
            os << (k ? "," : "") << c.dac_dilations[j][k];
    }
    os << "\n";
    os << "rmp_windows=";
    for (size_t k = 0; k < c.rmp_windows.size(); ++k) os << (k ? "," : "") << c.rmp_windows[k];
    os << "\n";
    os << "attention_enabled=" << (c.attention_enabled ? 1 : 0) << "\n";
    os << "input_h=" << c.input_h << "\n";
    os << "input_w=" << c.input_w << "\n";
    os << "dtype=" << dtype_name(c.dtype) << "\n";
    return os.str();
}

std::vector<long> parse_long_list(const std::string& s, char sep) {
    std::vector<long> out;
    std::istringstream is(s);
    std::string tok;
    while (std::getline(is, tok, sep))
        if (!tok.empty()) out.push_back(std::stol(tok));
    return out;
}

ModelConfig parse_config(const std::string& text) {
    ModelConfig c;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string key = line.substr(0, eq), val = line.substr(eq + 1);
        if (key == "input_channels") c.input_channels = std::stol(val);
        else if (key == "base_width") c.base_width = std::stol(val);
        else if (key == "reduction_ratio") c.reduction_ratio = std::stol(val);
        else if (key == "dac_dilations") {
            c.dac_dilations.clear();
            std::istringstream bs(val);
            std::string branch;
            while (std::getline(bs, branch, ';'))
                c.dac_dilations.push_back(parse_long_list(branch, ','));
        } else if (key == "rmp_windows") c.rmp_windows = parse_long_list(val, ',');
        else if (key == "attention_enabled") c.attention_enabled = val == "1";
        else if (key == "input_h") c.input_h = std::stol(val);
        else if (key == "input_w") c.input_w = std::stol(val);
        else if (key == "dtype") c.dtype = val == "f32" ? DType::f32 : DType::f64;
        else throw DataError("checkpoint carries unknown config key " + key);
    }
    return c;
}

void write_tensor_record(std::ostream& os, const std::string& name, uint8_t kind,
                         const Tensor& t) {
    write_string(os, name);
    write_pod<uint8_t>(os, kind);
    write_pod<uint8_t>(os, uint8_t(t.dtype()));
    const Shape s = t.shape();
    write_pod<uint64_t>(os, uint64_t(s.n));
    write_pod<uint64_t>(os, uint64_t(s.c));
    write_pod<uint64_t>(os, uint64_t(s.h));
    write_pod<uint64_t>(os, uint64_t(s.w));
    const size_t elem = t.dtype() == DType::f64 ? 8 : 4;
    const size_t bytes = size_t(t.numel()) * elem;
    const uint8_t* raw = t.dtype() == DType::f64
                             ? reinterpret_cast<const uint8_t*>(t.data<double>())
                             : reinterpret_cast<const uint8_t*>(t.data<float>());
    os.write(reinterpret_cast<const char*>(raw), long(bytes));
    write_pod<uint32_t>(os, crc32(raw, bytes));
}

struct TensorRecord {
    std::string name;
    uint8_t kind;
    Tensor value;
};

TensorRecord read_tensor_record(std::istream& is) {
    TensorRecord r;
    r.name = read_string(is);
    r.kind = read_pod<uint8_t>(is);
    const DType dt = DType(read_pod<uint8_t>(is));
    const long n = long(read_pod<uint64_t>(is));
    const long c = long(read_pod<uint64_t>(is));
    const long h = long(read_pod<uint64_t>(is));
    const long w = long(read_pod<uint64_t>(is));
    r.value = Tensor(n, c, h, w, dt);
    const size_t elem = dt == DType::f64 ? 8 : 4;
    const size_t bytes = size_t(r.value.numel()) * elem;
    uint8_t* raw = dt == DType::f64 ? reinterpret_cast<uint8_t*>(r.value.data<double>())
                                    : reinterpret_cast<uint8_t*>(r.value.data<float>());
    is.read(reinterpret_cast<char*>(raw), long(bytes));
    if (!is) throw DataError("checkpoint truncated inside tensor " + r.name);
    const uint32_t stored = read_pod<uint32_t>(is);
    if (stored != crc32(raw, bytes))
        throw DataError("checkpoint checksum failure for tensor " + r.name);
    return r;
}

}  // namespace

void CaceNet::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open checkpoint for writing: " + path);
    os.write(kMagic, sizeof(kMagic));
    write_pod<uint32_t>(os, kVersion);
    write_string(os, serialize_config(cfg_));
    write_pod<uint64_t>(os, uint64_t(params_.size() + running_.size()));
    for (const auto& [name, t] : params_) write_tensor_record(os, name, 0, t);
    for (const auto& [name, t] : running_) write_tensor_record(os, name, 1, t);
    if (!os) throw DataError("write failure for checkpoint: " + path);
}

CaceNet CaceNet::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw DataError("not a checkpoint file (bad magic): " + path);
    const uint32_t version = read_pod<uint32_t>(is);
    if (version != kVersion)
        throw DataError("checkpoint version " + std::to_string(version) + " unsupported");
    ModelConfig cfg = parse_config(read_string(is));
    CaceNet net(cfg, /*seed=*/0);
    const uint64_t count = read_pod<uint64_t>(is);
    size_t seen_params = 0, seen_running = 0;
    for (uint64_t i = 0; i < count; ++i) {
        TensorRecord r = read_tensor_record(is);
        auto& store = r.kind == 0 ? net.params_ : net.running_;
        auto it = store.find(r.name);
        if (it == store.end())
            throw DataError("checkpoint carries unexpected tensor " + r.name);
        if (it->second.shape() != r.value.shape())
            throw DataError("checkpoint tensor " + r.name + " has shape " +
                            r.value.shape().str() + ", expected " + it->second.shape().str());
        it->second = std::move(r.value);
        (r.kind == 0 ? seen_params : seen_running)++;
    }
    if (seen_params != net.params_.size() || seen_running != net.running_.size())
        throw DataError("checkpoint is missing parameters (" + std::to_string(seen_params) + "/" +
                        std::to_string(net.params_.size()) + " present)");
    return net;
}

CaceNet CaceNet::load(const std::string& path, const ModelConfig& expected) {
    CaceNet net = load(path);
    if (!net.config().compatible_with(expected))
        throw ConfigError("checkpoint model config does not match the requested config");
    return net;
}

}  // namespace cace
