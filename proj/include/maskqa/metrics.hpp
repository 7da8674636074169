#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "maskqa/voxelgrid.hpp"

namespace maskqa {

struct ScoredCase {
  std::string case_id;
  std::string organ;
  double score = 0.0;  // higher = more suspect
  int label = 0;       // 1 = inaccurate
  std::optional<double> true_dice;
};

/// 2|a∩b| / (|a|+|b|); both empty gives 1.
double dice(const VoxelMask& a, const VoxelMask& b);
double dice(const MultiChannelVolume& a, int channel_a, const MultiChannelVolume& b, int channel_b);

/// Mean over channels of 1 - (2 Σ r t) / (Σ r + Σ t). A channel with both
/// sums zero contributes 0.
double mean_dice_loss(const MultiChannelVolume& recon, const MultiChannelVolume& target);

/// Mann-Whitney estimate of P(score_pos > score_neg), ties count 0.5.
double auroc(const std::vector<ScoredCase>& cases);

/// Average precision with tied scores processed as one block.
double aupr(const std::vector<ScoredCase>& cases);

enum class Metric { Auroc, Aupr };

const char* metric_name(Metric m);
double evaluate_metric(Metric m, const std::vector<ScoredCase>& cases);

/// True when the metric is defined on `cases` (AUROC needs both classes,
/// AUPR needs a positive).
bool metric_defined(Metric m, const std::vector<ScoredCase>& cases);

struct BootstrapResult {
  double point = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  int used = 0;     // resamples with a defined metric
  int skipped = 0;  // degenerate resamples
};

/// Resample index lists, drawn upfront from a single seeded stream.
std::vector<std::vector<std::size_t>> bootstrap_indices(std::size_t n, int resamples,
                                                        std::uint64_t seed);

/// Linear-interpolation percentile (q in [0,1]) of unsorted values.
double percentile(std::vector<double> values, double q);

/// Percentile bootstrap; degenerate resamples are skipped.
BootstrapResult bootstrap_ci(const std::vector<ScoredCase>& cases, Metric metric,
                             int resamples = 1000, std::uint64_t seed = 0,
                             double confidence = 0.95);

// CSV: case_id,organ,score,true_dice,label
void write_scored_cases_csv(const std::vector<ScoredCase>& cases, const std::filesystem::path& path);
std::vector<ScoredCase> read_scored_cases_csv(const std::filesystem::path& path);

/// Shortest round-trip decimal text for a double ("inf" / "-inf" / "nan" for
/// non-finite values).
std::string format_real(double v);
double parse_real(const std::string& text);

}  // namespace maskqa
