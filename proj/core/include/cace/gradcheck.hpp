#pragma once

#include <string>
#include <vector>

#include "cace/autodiff.hpp"

namespace cace {

struct GradCheckRow {
    std::string op;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    long checked = 0;
    bool pass = false;
};

// Central-difference check of every differentiable op on small random
// instances, plus the full network (base width 4, 16x16 input, reduction 2)
// under the segmentation loss. Train-mode batch norm rows use the looser
// 1e-3 tolerance; everything else 1e-4.
std::vector<GradCheckRow> run_gradcheck_suite(uint64_t seed, long instances_per_op = 20,
                                              bool include_full_net = true);

std::string format_gradcheck_table(const std::vector<GradCheckRow>& rows);
bool gradcheck_passed(const std::vector<GradCheckRow>& rows);

}  // namespace cace
