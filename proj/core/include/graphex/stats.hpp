#pragma once

#include <optional>
#include <span>
#include <vector>

namespace graphex::stats {

// 1-based ranks; tied values share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> values);

double pearson(std::span<const double> x, std::span<const double> y);

// Pearson correlation of average ranks. nullopt when either side is constant
// or fewer than two points are given.
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);

}  // namespace graphex::stats
