#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cace/curve.hpp"
#include "cace/tensor.hpp"

namespace cace {

// Geometry and intensity model for the synthetic OCT-like slices: a smooth
// bright-below/dark-above boundary with a localized cup-shaped dip, optional
// multiplicative speckle.
struct SynthSpec {
    long h = 64, w = 64;
    double boundary_depth = 0.35;   // base boundary row as fraction of h
    double dip_center = 0.5;        // dip center column as fraction of w
    double dip_width = 0.12;        // Gaussian width as fraction of w
    double dip_depth = 0.18;        // dip depth as fraction of h
    double smoothness_amp = 0.04;   // low-frequency wiggle amplitude, fraction of h
    double speckle_sigma = 0.08;
    double vitreous_mean = 0.15;
    double retina_mean = 0.75;
    uint64_t seed = 0;

    void validate() const;
};

struct SegmentationSample {
    Tensor image;  // 1 x 1 x h x w, values in [0, 1]
    Tensor mask;   // 1 x 1 x h x w, binary; 1 = at or below the boundary (retina side)
    BoundaryCurve gt_boundary;
};

// Deterministic per (spec.seed, index). Boundary rows are integral and within
// [1, h-2]; mask columns have exactly one 0->1 transition at the boundary row.
std::vector<SegmentationSample> generate(const SynthSpec& spec, long count);

// Disjoint, exhaustive, seeded split of sample indices.
std::pair<std::vector<long>, std::vector<long>> split_indices(long count, double train_fraction,
                                                              uint64_t seed);

Tensor resize_bilinear(const Tensor& image, long target_h, long target_w);
Tensor resize_mask_nearest(const Tensor& mask, long target_h, long target_w);

// 8-bit binary PGM (P5); values map linearly [0,255] <-> [0,1].
Tensor read_pgm(const std::string& path);
void write_pgm(const std::string& path, const Tensor& image);

// P6 PPM with one color per curve drawn over the grayscale image.
struct OverlayCurve {
    const BoundaryCurve* curve;
    uint8_t r, g, b;
};
void write_overlay(const std::string& path, const Tensor& image,
                   const std::vector<OverlayCurve>& curves);

void write_boundary_csv(const std::string& path, const BoundaryCurve& curve);
BoundaryCurve read_boundary_csv(const std::string& path, size_t width);

// Dataset directory layout: images/NNNN.pgm, masks/NNNN.pgm,
// boundaries/NNNN.csv, manifest.csv (id,split).
struct DatasetEntry {
    long id;
    std::string split;  // "train" or "test"
};
void write_dataset(const std::string& dir, const std::vector<SegmentationSample>& samples,
                   const std::vector<DatasetEntry>& manifest);
std::vector<DatasetEntry> read_manifest(const std::string& dir);
SegmentationSample read_sample(const std::string& dir, long id);
std::vector<SegmentationSample> read_split(const std::string& dir, const std::string& split);

}  // namespace cace
