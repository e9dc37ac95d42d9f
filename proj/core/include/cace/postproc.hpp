#pragma once

#include <string>
#include <vector>

#include "cace/curve.hpp"
#include "cace/data.hpp"
#include "cace/model.hpp"
#include "cace/tensor.hpp"

namespace cace {

// Threshold is boundary-inclusive: values >= threshold map to 1.
Tensor binarize(const Tensor& prob_map, double threshold = 0.5);

// Removes 4-connected foreground components with area < min_area (the largest
// foreground component is always kept) and fills background components with
// area < min_area. Idempotent. An empty mask is returned unchanged; *warned is
// set when given.
Tensor remove_small_components(const Tensor& mask, long min_area, bool* warned = nullptr);

inline long default_min_area(long h, long w) { return std::max<long>(1, h * w / 1000); }

// Per column, the smallest row index holding a 1; columns without foreground
// are marked invalid.
BoundaryCurve boundary_of(const Tensor& mask);

// Mean absolute row distance over columns valid in both curves. Throws
// DataError when no column is valid in both.
double mae(const BoundaryCurve& pred, const BoundaryCurve& gt);

struct EvalReport {
    std::vector<double> per_image_mae;
    double mean = 0.0;
    double stddev = 0.0;
    long invalid_columns = 0;          // pred-invalid columns across all images
    std::vector<std::string> failures; // per-image failures, recorded not fatal
    std::string method;
};

EvalReport evaluate(const CaceNet& net, const std::vector<SegmentationSample>& test_set,
                    double threshold = 0.5, long min_area = -1);

// Aggregation used by evaluate(), exposed so oracle predictions can reuse it.
EvalReport aggregate_curves(const std::vector<BoundaryCurve>& preds,
                            const std::vector<const BoundaryCurve*>& gts);

void write_eval_csv(const std::string& path, const std::vector<EvalReport>& reports);
std::string format_eval_table(const std::vector<EvalReport>& reports);

}  // namespace cace
