#pragma once

#include <cstdint>
#include <vector>

namespace cace {

// Per-column row index of a layer boundary. Columns with no foreground carry
// valid = 0 and no meaningful row value.
struct BoundaryCurve {
    std::vector<double> rows;
    std::vector<uint8_t> valid;

    BoundaryCurve() = default;
    explicit BoundaryCurve(size_t width) : rows(width, 0.0), valid(width, 0) {}
    size_t width() const { return rows.size(); }
    long valid_count() const {
        long n = 0;
        for (uint8_t v : valid) n += v;
        return n;
    }
};

}  // namespace cace
