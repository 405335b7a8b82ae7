#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace vst {

enum class ScoreKind : std::uint8_t { logits = 0, probabilities = 1 };

using ScoreMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Per-sample class scores from one model or one fusion.
struct PredictionSet {
  std::vector<std::string> sample_ids;
  ScoreMatrix scores;
  ScoreKind kind = ScoreKind::logits;
  std::vector<std::int32_t> labels;  // one per sample, -1 when unknown
  std::string provenance;            // e.g. "rgb/base" or "fused(rgb/large,rgb/base)"

  std::size_t size() const { return sample_ids.size(); }
  std::size_t num_classes() const { return static_cast<std::size_t>(scores.cols()); }

  /// Unique ids, matching row/label counts, labels in range, probability rows
  /// summing to 1 within `tolerance`. Throws ContractError.
  void validate(double tolerance = 1e-9) const;
};

/// Ratio weights; normalized before use.
struct EnsembleWeights {
  std::vector<double> size_weights{0.4, 0.4, 0.2};      // large, base, small
  std::array<double, 2> modality_weights{0.65, 0.35};  // rgb, depth
};

/// Scales nonnegative ratios to sum 1. ContractError on negative, non-finite
/// or all-zero input.
std::vector<double> normalize_weights(std::span<const double> ratios);

/// Row-wise softmax of logits; probability sets pass through unchanged.
PredictionSet to_probabilities(const PredictionSet& set);

/// Row-sum tolerance for probabilities that went through f32 storage.
inline constexpr double kStoredProbabilityTolerance = 1e-5;

/// sum_i w_i * P_i over sets of one modality. Throws AlignmentError when ids
/// or labels differ, ContractError on count or class mismatches.
PredictionSet single_modal_ensemble(std::span<const PredictionSet> sets, std::span<const double> weights);

/// w_r * P_rgb + w_d * P_depth.
PredictionSet multimodal_ensemble(const PredictionSet& rgb, const PredictionSet& depth,
                                  std::array<double, 2> weights = {0.65, 0.35});

/// Index of the row maximum; ties go to the lowest class index.
std::vector<std::size_t> argmax_predict(const PredictionSet& set);

/// "PRED", u32 samples, u32 classes, u8 score kind, then per sample a
/// u32-prefixed id, i32 label and the f32 scores.
void write_predictions(std::ostream& os, const PredictionSet& set);
PredictionSet read_predictions(std::istream& is);

void save_predictions(const std::filesystem::path& path, const PredictionSet& set);
/// Provenance is set to the file name.
PredictionSet load_predictions(const std::filesystem::path& path);

}  // namespace vst
