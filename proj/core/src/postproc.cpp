#include "cace/postproc.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <queue>
#include <sstream>

namespace cace {

Tensor binarize(const Tensor& prob_map, double threshold) {
    Tensor out(prob_map.shape(), prob_map.dtype());
    for (long i = 0; i < prob_map.numel(); ++i)
        out.set(i, prob_map.get(i) >= threshold ? 1.0 : 0.0);
    return out;
}

namespace {

struct Labels {
    std::vector<long> label;      // -1 where polarity does not match
    std::vector<long> area;       // per label
    long count = 0;
};

// 4-connected labeling of cells equal to `polarity`.
Labels label_components(const Tensor& mask, double polarity) {
    const long h = mask.h(), w = mask.w();
    Labels out;
    out.label.assign(size_t(h * w), -1);
    std::vector<long> stack;
    for (long start = 0; start < h * w; ++start) {
        if (mask.get(start) != polarity || out.label[size_t(start)] >= 0) continue;
        const long id = out.count++;
        out.area.push_back(0);
        stack.push_back(start);
        out.label[size_t(start)] = id;
        while (!stack.empty()) {
            const long p = stack.back();
            stack.pop_back();
            out.area[size_t(id)]++;
            const long r = p / w, c = p % w;
            const long nbr[4] = {r > 0 ? p - w : -1, r < h - 1 ? p + w : -1,
                                 c > 0 ? p - 1 : -1, c < w - 1 ? p + 1 : -1};
            for (long q : nbr) {
                if (q < 0 || out.label[size_t(q)] >= 0 || mask.get(q) != polarity) continue;
                out.label[size_t(q)] = id;
                stack.push_back(q);
            }
        }
    }
    return out;
}

}  // namespace

Tensor remove_small_components(const Tensor& mask, long min_area, bool* warned) {
    if (mask.n() != 1 || mask.c() != 1)
        throw ConfigError("remove_small_components expects a 1x1xHxW mask");
    if (warned) *warned = false;
    bool any_fg = false;
    for (long i = 0; i < mask.numel() && !any_fg; ++i) any_fg = mask.get(i) == 1.0;
    if (!any_fg) {
        if (warned) *warned = true;
        return mask;
    }

    Tensor out = mask;
    {
        Labels fg = label_components(out, 1.0);
        long largest = 0;
        for (long id = 1; id < fg.count; ++id)
            if (fg.area[size_t(id)] > fg.area[size_t(largest)]) largest = id;
        for (long i = 0; i < out.numel(); ++i) {
            const long id = fg.label[size_t(i)];
            if (id >= 0 && id != largest && fg.area[size_t(id)] < min_area) out.set(i, 0.0);
        }
    }
    {
        Labels bg = label_components(out, 0.0);
        for (long i = 0; i < out.numel(); ++i) {
            const long id = bg.label[size_t(i)];
            if (id >= 0 && bg.area[size_t(id)] < min_area) out.set(i, 1.0);
        }
    }
    return out;
}

BoundaryCurve boundary_of(const Tensor& mask) {
    if (mask.n() != 1 || mask.c() != 1) throw ConfigError("boundary_of expects a 1x1xHxW mask");
    BoundaryCurve curve(size_t(mask.w()));
    for (long c = 0; c < mask.w(); ++c)
        for (long r = 0; r < mask.h(); ++r)
            if (mask.at(0, 0, r, c) == 1.0) {
                curve.rows[size_t(c)] = double(r);
                curve.valid[size_t(c)] = 1;
                break;
            }
    return curve;
}

double mae(const BoundaryCurve& pred, const BoundaryCurve& gt) {
    if (pred.width() != gt.width())
        throw ConfigError("mae: curve lengths differ (" + std::to_string(pred.width()) + " vs " +
                          std::to_string(gt.width()) + ")");
    double acc = 0;
    long n = 0;
    for (size_t c = 0; c < pred.width(); ++c) {
        if (!pred.valid[c] || !gt.valid[c]) continue;
        acc += std::abs(pred.rows[c] - gt.rows[c]);
        ++n;
    }
    if (n == 0) throw DataError("mae: no mutually valid columns");
    return acc / double(n);
}

EvalReport aggregate_curves(const std::vector<BoundaryCurve>& preds,
                            const std::vector<const BoundaryCurve*>& gts) {
    EvalReport report;
    for (size_t i = 0; i < preds.size(); ++i) {
        for (uint8_t v : preds[i].valid)
            if (!v) report.invalid_columns++;
        try {
            report.per_image_mae.push_back(mae(preds[i], *gts[i]));
        } catch (const DataError& e) {
            report.failures.push_back("image " + std::to_string(i) + ": " + e.what());
        }
    }
    const auto& m = report.per_image_mae;
    if (!m.empty()) {
        double s = 0;
        for (double v : m) s += v;
        report.mean = s / double(m.size());
        double sq = 0;
        for (double v : m) sq += (v - report.mean) * (v - report.mean);
        report.stddev = std::sqrt(sq / double(m.size()));
    }
    return report;
}

EvalReport evaluate(const CaceNet& net, const std::vector<SegmentationSample>& test_set,
                    double threshold, long min_area) {
    if (test_set.empty()) throw DataError("evaluate: test set is empty");
    std::vector<BoundaryCurve> preds;
    std::vector<const BoundaryCurve*> gts;
    for (const SegmentationSample& s : test_set) {
        if (min_area < 0) min_area = default_min_area(s.image.h(), s.image.w());
        Tensor prob = net.forward(s.image);
        Tensor mask = remove_small_components(binarize(prob, threshold), min_area);
        preds.push_back(boundary_of(mask));
        gts.push_back(&s.gt_boundary);
    }
    EvalReport report = aggregate_curves(preds, gts);
    report.method = net.config().attention_enabled ? "cace" : "ce-ablation";
    return report;
}

void write_eval_csv(const std::string& path, const std::vector<EvalReport>& reports) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot open eval csv for writing: " + path);
    os << "method,mean_mae,std_mae,images,failed_images,invalid_columns\n";
    char buf[160];
    for (const EvalReport& r : reports) {
        std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%zu,%zu,%ld\n", r.method.c_str(), r.mean,
                      r.stddev, r.per_image_mae.size(), r.failures.size(), r.invalid_columns);
        os << buf;
    }
}

std::string format_eval_table(const std::vector<EvalReport>& reports) {
    std::ostringstream os;
    char buf[160];
    os << "method        mean_mae   std_mae    images  failed  invalid_cols\n";
    for (const EvalReport& r : reports) {
        std::snprintf(buf, sizeof(buf), "%-12s  %9.4f  %9.4f  %6zu  %6zu  %12ld\n",
                      r.method.c_str(), r.mean, r.stddev, r.per_image_mae.size(),
                      r.failures.size(), r.invalid_columns);
        os << buf;
    }
    return os.str();
}

}  // namespace cace
