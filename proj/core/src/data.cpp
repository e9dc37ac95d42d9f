#include "cace/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "cace/ops.hpp"
#include "cace/rng.hpp"

namespace fs = std::filesystem;

namespace cace {

void SynthSpec::validate() const {
    if (h < 8 || w < 8) throw ConfigError("synth.size must be at least 8x8");
    if (boundary_depth <= 0 || boundary_depth >= 1)
        throw ConfigError("synth.boundary_depth must be in (0, 1)");
    if (dip_center < 0 || dip_center > 1)
        throw ConfigError("synth.dip_center must be in [0, 1]");
    if (dip_width <= 0) throw ConfigError("synth.dip_width must be > 0");
    if (dip_depth < 0) throw ConfigError("synth.dip_depth must be >= 0");
    if (smoothness_amp < 0) throw ConfigError("synth.smoothness_amp must be >= 0");
    if (speckle_sigma < 0) throw ConfigError("synth.speckle_sigma must be >= 0");
    if (retina_mean <= vitreous_mean)
        throw ConfigError("synth.retina_mean must exceed synth.vitreous_mean");
    if (vitreous_mean < 0 || retina_mean > 1)
        throw ConfigError("synth intensity means must lie in [0, 1]");
    // the deepest possible boundary must still leave rows [1, h-2] reachable
    const double deepest = boundary_depth + dip_depth + smoothness_amp;
    if (deepest >= 1.5) throw ConfigError("synth boundary parameters push the curve off the image");
}

std::vector<SegmentationSample> generate(const SynthSpec& spec, long count) {
    spec.validate();
    std::vector<SegmentationSample> out;
    out.reserve(size_t(count));
    for (long idx = 0; idx < count; ++idx) {
        Rng rng(spec.seed, "sample_" + std::to_string(idx));
        const long h = spec.h, w = spec.w;

        // boundary: low-frequency wiggle plus a localized downward dip
        BoundaryCurve curve{size_t(w)};
        double amp[3], phase[3];
        for (int k = 0; k < 3; ++k) {
            amp[k] = spec.smoothness_amp * double(h) * rng.uniform(0.3, 1.0) / double(k + 1);
            phase[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
        }
        const double depth = spec.dip_depth * double(h) * rng.uniform(0.7, 1.0);
        const double center = spec.dip_center * double(w);
        const double width = std::max(1.0, spec.dip_width * double(w));
        for (long c = 0; c < w; ++c) {
            double row = spec.boundary_depth * double(h);
            for (int k = 0; k < 3; ++k)
                row += amp[k] * std::sin(2.0 * std::numbers::pi * double(k + 1) * double(c) /
                                             double(w) +
                                         phase[k]);
            const double dc = (double(c) - center) / width;
            row += depth * std::exp(-0.5 * dc * dc);
            long r = std::lround(row);
            r = std::clamp<long>(r, 1, h - 2);
            curve.rows[size_t(c)] = double(r);
            curve.valid[size_t(c)] = 1;
        }

        SegmentationSample s;
        s.gt_boundary = curve;
        s.mask = Tensor(1, 1, h, w);
        s.image = Tensor(1, 1, h, w);
        Tensor base(1, 1, h, w);
        for (long c = 0; c < w; ++c) {
            const long b = long(curve.rows[size_t(c)]);
            for (long r = 0; r < h; ++r) {
                s.mask.at(0, 0, r, c, r >= b ? 1.0 : 0.0);
                base.at(0, 0, r, c, r >= b ? spec.retina_mean : spec.vitreous_mean);
            }
        }
        // narrow vertical blur band at the edge, then multiplicative speckle
        for (long c = 0; c < w; ++c)
            for (long r = 0; r < h; ++r) {
                const double up = base.at(0, 0, std::max<long>(0, r - 1), c);
                const double mid = base.at(0, 0, r, c);
                const double dn = base.at(0, 0, std::min<long>(h - 1, r + 1), c);
                double v = 0.25 * up + 0.5 * mid + 0.25 * dn;
                if (spec.speckle_sigma > 0) v *= 1.0 + spec.speckle_sigma * rng.normal();
                s.image.at(0, 0, r, c, std::clamp(v, 0.0, 1.0));
            }
        out.push_back(std::move(s));
    }
    return out;
}

std::pair<std::vector<long>, std::vector<long>> split_indices(long count, double train_fraction,
                                                              uint64_t seed) {
    if (count < 2) throw DataError("split needs at least 2 samples");
    if (train_fraction <= 0 || train_fraction >= 1)
        throw ConfigError("train fraction must be in (0, 1)");
    std::vector<long> ids(size_t(count), 0);
    std::iota(ids.begin(), ids.end(), 0);
    Rng rng(seed, "split");
    std::shuffle(ids.begin(), ids.end(), rng.engine());
    long n_train = std::clamp<long>(std::lround(train_fraction * double(count)), 1, count - 1);
    std::vector<long> train(ids.begin(), ids.begin() + n_train);
    std::vector<long> test(ids.begin() + n_train, ids.end());
    std::sort(train.begin(), train.end());
    std::sort(test.begin(), test.end());
    return {std::move(train), std::move(test)};
}

Tensor resize_bilinear(const Tensor& image, long target_h, long target_w) {
    if (target_h < 1 || target_w < 1) throw ConfigError("resize target must be >= 1");
    return ops::bilinear_upsample(image, target_h, target_w);
}

Tensor resize_mask_nearest(const Tensor& mask, long target_h, long target_w) {
    if (target_h < 1 || target_w < 1) throw ConfigError("resize target must be >= 1");
    Tensor out(mask.n(), mask.c(), target_h, target_w, mask.dtype());
    for (long i = 0; i < target_h; ++i) {
        long si = std::clamp<long>(long((double(i) + 0.5) * double(mask.h()) / double(target_h)),
                                   0, mask.h() - 1);
        for (long j = 0; j < target_w; ++j) {
            long sj = std::clamp<long>(
                long((double(j) + 0.5) * double(mask.w()) / double(target_w)), 0, mask.w() - 1);
            for (long n = 0; n < mask.n(); ++n)
                for (long c = 0; c < mask.c(); ++c) out.at(n, c, i, j, mask.at(n, c, si, sj));
        }
    }
    return out;
}

namespace {

int next_header_token(std::istream& is) {
    int ch = is.get();
    while (ch == '#' || std::isspace(ch)) {
        if (ch == '#')
            while (ch != '\n' && ch != EOF) ch = is.get();
        ch = is.get();
    }
    return ch;
}

long read_header_number(std::istream& is) {
    int ch = next_header_token(is);
    if (!std::isdigit(ch)) throw DataError("malformed PGM/PPM header");
    long v = 0;
    while (std::isdigit(ch)) {
        v = v * 10 + (ch - '0');
        ch = is.get();
    }
    return v;
}

}  // namespace

Tensor read_pgm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open image: " + path);
    char m0 = char(is.get()), m1 = char(is.get());
    if (m0 != 'P' || m1 != '5') throw DataError("unsupported image format (want binary PGM P5): " + path);
    const long w = read_header_number(is);
    const long h = read_header_number(is);
    const long maxval = read_header_number(is);
    if (maxval != 255) throw DataError("only 8-bit PGM supported: " + path);
    std::vector<uint8_t> raw(size_t(h * w));
    is.read(reinterpret_cast<char*>(raw.data()), long(raw.size()));
    if (!is) throw DataError("truncated PGM: " + path);
    Tensor t(1, 1, h, w);
    for (long i = 0; i < h * w; ++i) t.set(i, double(raw[size_t(i)]) / 255.0);
    return t;
}

void write_pgm(const std::string& path, const Tensor& image) {
    if (image.n() != 1 || image.c() != 1)
        throw ConfigError("write_pgm expects a 1x1xHxW tensor, got " + image.shape().str());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open image for writing: " + path);
    os << "P5\n" << image.w() << " " << image.h() << "\n255\n";
    std::vector<uint8_t> raw(size_t(image.numel()));
    for (long i = 0; i < image.numel(); ++i)
        raw[size_t(i)] = uint8_t(std::clamp(std::lround(image.get(i) * 255.0), 0l, 255l));
    os.write(reinterpret_cast<const char*>(raw.data()), long(raw.size()));
    if (!os) throw DataError("write failure: " + path);
}

void write_overlay(const std::string& path, const Tensor& image,
                   const std::vector<OverlayCurve>& curves) {
    if (image.n() != 1 || image.c() != 1)
        throw ConfigError("write_overlay expects a 1x1xHxW tensor");
    const long h = image.h(), w = image.w();
    std::vector<uint8_t> rgb(size_t(3 * h * w));
    for (long i = 0; i < h * w; ++i) {
        uint8_t g = uint8_t(std::clamp(std::lround(image.get(i) * 255.0), 0l, 255l));
        rgb[size_t(3 * i)] = rgb[size_t(3 * i + 1)] = rgb[size_t(3 * i + 2)] = g;
    }
    for (const OverlayCurve& oc : curves) {
        if (long(oc.curve->width()) != w)
            throw ConfigError("overlay curve width does not match image");
        for (long c = 0; c < w; ++c) {
            if (!oc.curve->valid[size_t(c)]) continue;
            long r = std::clamp<long>(std::lround(oc.curve->rows[size_t(c)]), 0, h - 1);
            const size_t p = size_t(3 * (r * w + c));
            rgb[p] = oc.r;
            rgb[p + 1] = oc.g;
            rgb[p + 2] = oc.b;
        }
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open overlay for writing: " + path);
    os << "P6\n" << w << " " << h << "\n255\n";
    os.write(reinterpret_cast<const char*>(rgb.data()), long(rgb.size()));
    if (!os) throw DataError("write failure: " + path);
}

void write_boundary_csv(const std::string& path, const BoundaryCurve& curve) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot open boundary csv for writing: " + path);
    os << "column,row\n";
    char buf[64];
    for (size_t c = 0; c < curve.width(); ++c) {
        if (!curve.valid[c]) continue;
        std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", c, curve.rows[c]);
        os << buf;
    }
}

BoundaryCurve read_boundary_csv(const std::string& path, size_t width) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open boundary csv: " + path);
    BoundaryCurve curve(width);
    std::string line;
    std::getline(is, line);  // header
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto comma = line.find(',');
        if (comma == std::string::npos) throw DataError("malformed boundary csv line: " + line);
        size_t col = size_t(std::stoul(line.substr(0, comma)));
        if (col >= width) throw DataError("boundary csv column out of range: " + line);
        curve.rows[col] = std::stod(line.substr(comma + 1));
        curve.valid[col] = 1;
    }
    return curve;
}

namespace {

std::string id_name(long id) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04ld", id);
    return buf;
}

}  // namespace

void write_dataset(const std::string& dir, const std::vector<SegmentationSample>& samples,
                   const std::vector<DatasetEntry>& manifest) {
    if (samples.size() != manifest.size())
        throw ConfigError("dataset manifest size does not match sample count");
    fs::create_directories(fs::path(dir) / "images");
    fs::create_directories(fs::path(dir) / "masks");
    fs::create_directories(fs::path(dir) / "boundaries");
    for (size_t i = 0; i < samples.size(); ++i) {
        const std::string name = id_name(manifest[i].id);
        write_pgm((fs::path(dir) / "images" / (name + ".pgm")).string(), samples[i].image);
        write_pgm((fs::path(dir) / "masks" / (name + ".pgm")).string(), samples[i].mask);
        write_boundary_csv((fs::path(dir) / "boundaries" / (name + ".csv")).string(),
                           samples[i].gt_boundary);
    }
    std::ofstream os((fs::path(dir) / "manifest.csv").string(), std::ios::trunc);
    if (!os) throw DataError("cannot write manifest in " + dir);
    os << "id,split\n";
    for (const DatasetEntry& e : manifest) os << e.id << "," << e.split << "\n";
}

std::vector<DatasetEntry> read_manifest(const std::string& dir) {
    std::ifstream is((fs::path(dir) / "manifest.csv").string());
    if (!is) throw DataError("cannot open manifest in " + dir);
    std::vector<DatasetEntry> out;
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto comma = line.find(',');
        if (comma == std::string::npos) throw DataError("malformed manifest line: " + line);
        out.push_back({std::stol(line.substr(0, comma)), line.substr(comma + 1)});
    }
    if (out.empty()) throw DataError("manifest is empty in " + dir);
    return out;
}

SegmentationSample read_sample(const std::string& dir, long id) {
    const std::string name = id_name(id);
    SegmentationSample s;
    s.image = read_pgm((fs::path(dir) / "images" / (name + ".pgm")).string());
    s.mask = read_pgm((fs::path(dir) / "masks" / (name + ".pgm")).string());
    for (long i = 0; i < s.mask.numel(); ++i) s.mask.set(i, s.mask.get(i) >= 0.5 ? 1.0 : 0.0);
    s.gt_boundary = read_boundary_csv((fs::path(dir) / "boundaries" / (name + ".csv")).string(),
                                      size_t(s.image.w()));
    return s;
}

std::vector<SegmentationSample> read_split(const std::string& dir, const std::string& split) {
    std::vector<SegmentationSample> out;
    for (const DatasetEntry& e : read_manifest(dir))
        if (e.split == split) out.push_back(read_sample(dir, e.id));
    if (out.empty()) throw DataError("no samples with split '" + split + "' in " + dir);
    return out;
}

}  // namespace cace
