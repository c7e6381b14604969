#pragma once

#include "ltp/nn.hpp"

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace ltp {

struct CdfPoint {
    double w_sq = 0.0;
    double cdf = 0.0;
};

// Sorted w^2 with the empirical CDF i/n.
std::vector<CdfPoint> empirical_cdf(std::span<const double> w);

struct LayerAnalysis {
    std::string name;
    double tau = 0.0;
    std::vector<CdfPoint> original_cdf;
    std::vector<CdfPoint> pruned_cdf;
    std::vector<double> w_sq_original;
    std::vector<double> w_sq_pruned;
    // weights on opposite sides of tau before and after pruning
    std::size_t kept_though_small = 0;
    std::size_t pruned_though_large = 0;

    std::size_t crossings() const { return kept_though_small + pruned_though_large; }
};

// Compares one registry layer across two models with the same architecture.
// tau is taken from `pruned`.
LayerAnalysis analyze_layer(const Model& original, const Model& pruned, std::size_t layer_id);

// cdf.csv:     series,w_sq,cdf          plus a "threshold,<tau>," row
// scatter.csv: kind,w_sq_original,w_sq_pruned  plus a "threshold,<tau>,<tau>" row
std::string cdf_csv(const LayerAnalysis& a);
std::string scatter_csv(const LayerAnalysis& a);
void write_layer_analysis(const LayerAnalysis& a, const std::filesystem::path& dir);

} // namespace ltp
