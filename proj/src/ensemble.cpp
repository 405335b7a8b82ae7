#include "vst/ensemble.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <unordered_set>

#include "vst/errors.hpp"
#include "vst/io.hpp"

namespace vst {

void PredictionSet::validate(double tolerance) const {
  if (static_cast<std::size_t>(scores.rows()) != sample_ids.size()) {
    throw ContractError("prediction set has " + std::to_string(scores.rows()) + " score rows for " +
                        std::to_string(sample_ids.size()) + " ids");
  }
  if (labels.size() != sample_ids.size()) throw ContractError("prediction set label count differs from id count");
  std::unordered_set<std::string> seen;
  for (const auto& id : sample_ids) {
    if (!seen.insert(id).second) throw ContractError("duplicate sample id '" + id + "'");
  }
  for (auto l : labels) {
    if (l < -1 || l >= static_cast<std::int64_t>(num_classes())) {
      throw ContractError("label " + std::to_string(l) + " outside [0, " + std::to_string(num_classes()) + ")");
    }
  }
  if (kind == ScoreKind::probabilities) {
    for (Eigen::Index r = 0; r < scores.rows(); ++r) {
      if (std::abs(scores.row(r).sum() - 1.0) > tolerance || (scores.row(r).array() < 0.0).any()) {
        throw ContractError("probability row for '" + sample_ids[static_cast<std::size_t>(r)] +
                            "' is not a distribution");
      }
    }
  }
}

std::vector<double> normalize_weights(std::span<const double> ratios) {
  if (ratios.empty()) throw ContractError("empty weight list");
  double total = 0.0;
  for (double r : ratios) {
    if (!std::isfinite(r) || r < 0.0) throw ContractError("weights must be finite and nonnegative");
    total += r;
  }
  if (total <= 0.0) throw ContractError("weights sum to zero");
  std::vector<double> out(ratios.begin(), ratios.end());
  for (double& w : out) w /= total;
  return out;
}

PredictionSet to_probabilities(const PredictionSet& set) {
  if (set.kind == ScoreKind::probabilities) return set;
  if (!set.scores.allFinite()) throw NumericError("non-finite logits in '" + set.provenance + "'");
  PredictionSet out = set;
  out.kind = ScoreKind::probabilities;
  for (Eigen::Index r = 0; r < out.scores.rows(); ++r) {
    auto row = out.scores.row(r);
    row = (row.array() - row.maxCoeff()).exp().matrix();
    row /= row.sum();
  }
  return out;
}

namespace {

void check_aligned(const PredictionSet& a, const PredictionSet& b) {
  if (a.num_classes() != b.num_classes()) {
    throw ContractError("class count mismatch: " + std::to_string(a.num_classes()) + " vs " +
                        std::to_string(b.num_classes()));
  }
  if (a.sample_ids != b.sample_ids) {
    throw AlignmentError("sample ids of '" + a.provenance + "' and '" + b.provenance + "' do not match");
  }
  for (std::size_t i = 0; i < a.labels.size(); ++i) {
    if (a.labels[i] != b.labels[i] && a.labels[i] >= 0 && b.labels[i] >= 0) {
      throw AlignmentError("labels disagree for sample '" + a.sample_ids[i] + "'");
    }
  }
}

// Labels known to any input.
std::vector<std::int32_t> merged_labels(std::span<const PredictionSet> sets) {
  auto labels = sets.front().labels;
  for (const auto& s : sets.subspan(1))
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] < 0) labels[i] = s.labels[i];
  return labels;
}

}  // namespace

PredictionSet single_modal_ensemble(std::span<const PredictionSet> sets, std::span<const double> weights) {
  if (sets.empty()) throw ContractError("ensemble of zero prediction sets");
  if (weights.size() != sets.size()) {
    throw ContractError(std::to_string(weights.size()) + " weights for " + std::to_string(sets.size()) +
                        " prediction sets");
  }
  for (const auto& s : sets) {
    s.validate(kStoredProbabilityTolerance);
    check_aligned(sets.front(), s);
  }
  const auto w = normalize_weights(weights);

  PredictionSet out;
  out.sample_ids = sets.front().sample_ids;
  out.labels = merged_labels(sets);
  out.kind = ScoreKind::probabilities;
  out.scores = ScoreMatrix::Zero(sets.front().scores.rows(), sets.front().scores.cols());
  out.provenance = "fused(";
  for (std::size_t i = 0; i < sets.size(); ++i) {
    out.scores += w[i] * to_probabilities(sets[i]).scores;
    out.provenance += (i ? "," : "") + sets[i].provenance;
  }
  out.provenance += ")";
  return out;
}

PredictionSet multimodal_ensemble(const PredictionSet& rgb, const PredictionSet& depth, std::array<double, 2> weights) {
  const std::array<PredictionSet, 2> sets{rgb, depth};
  return single_modal_ensemble(sets, weights);
}

std::vector<std::size_t> argmax_predict(const PredictionSet& set) {
  if (set.num_classes() == 0) throw ContractError("argmax over empty score rows");
  std::vector<std::size_t> out(set.size());
  for (std::size_t r = 0; r < set.size(); ++r) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < set.num_classes(); ++k) {
      if (set.scores(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) >
          set.scores(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(best))) {
        best = k;
      }
    }
    out[r] = best;
  }
  return out;
}

void write_predictions(std::ostream& os, const PredictionSet& set) {
  set.validate(kStoredProbabilityTolerance);
  write_bytes(os, "PRED");
  write_u32(os, static_cast<std::uint32_t>(set.size()));
  write_u32(os, static_cast<std::uint32_t>(set.num_classes()));
  write_u8(os, static_cast<std::uint8_t>(set.kind));
  for (std::size_t r = 0; r < set.size(); ++r) {
    write_string(os, set.sample_ids[r]);
    write_i32(os, set.labels[r]);
    for (std::size_t k = 0; k < set.num_classes(); ++k) {
      write_f32(os, static_cast<float>(set.scores(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k))));
    }
  }
}

PredictionSet read_predictions(std::istream& is) {
  expect_magic(is, "PRED");
  const std::uint32_t n = read_u32(is);
  const std::uint32_t k = read_u32(is);
  const std::uint8_t kind = read_u8(is);
  if (kind > 1) throw FormatError("unknown score kind " + std::to_string(kind));
  if (k == 0) throw FormatError("prediction file with zero classes");
  if (n > (1u << 24) || k > (1u << 20)) throw FormatError("implausible prediction file dimensions");
  PredictionSet set;
  set.kind = static_cast<ScoreKind>(kind);
  set.scores.resize(n, k);
  set.sample_ids.reserve(n);
  set.labels.reserve(n);
  for (std::uint32_t r = 0; r < n; ++r) {
    set.sample_ids.push_back(read_string(is, 4096));
    set.labels.push_back(read_i32(is));
    for (std::uint32_t c = 0; c < k; ++c) set.scores(r, c) = read_f32(is);
  }
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after prediction records");
  try {
    set.validate(kStoredProbabilityTolerance);
  } catch (const ContractError& e) {
    throw FormatError(e.what());
  }
  return set;
}

void save_predictions(const std::filesystem::path& path, const PredictionSet& set) {
  auto os = open_for_write(path);
  write_predictions(os, set);
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

PredictionSet load_predictions(const std::filesystem::path& path) {
  auto is = open_for_read(path);
  try {
    auto set = read_predictions(is);
    set.provenance = path.filename().string();
    return set;
  } catch (const Error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace vst
