#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vst/checkpoint.hpp"
#include "vst/data.hpp"
#include "vst/ensemble.hpp"
#include "vst/model.hpp"

namespace vst {

struct TrainConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
  std::size_t batch_size = 8;
  std::size_t epochs = 30;
  std::uint64_t seed = 0;
  std::optional<double> grad_clip_norm;
  bool cosine_schedule = false;  // decays the rate to 0 over all steps

  /// ContractError unless rates are positive and betas lie in [0,1).
  void validate() const;
};

/// -log softmax(logits)[target] for a single score vector.
Tensor cross_entropy(const Tensor& logits, std::size_t target);

using GradMap = std::map<std::string, std::vector<double>>;

struct AdamWState {
  GradMap m;
  GradMap v;
};

/// One AdamW update at `step` (1-based, used for bias correction):
/// theta <- theta - lr*wd*theta - lr*m_hat/(sqrt(v_hat)+eps).
/// Parameters without a gradient entry are left alone. ContractError on shape mismatch.
void adamw_step(VstParams& params, const GradMap& grads, AdamWState& state, const TrainConfig& cfg, std::size_t step);

/// Learning rate at 1-based `step` of `total_steps`.
double scheduled_learning_rate(const TrainConfig& cfg, std::size_t step, std::size_t total_steps);

/// Scales all gradients so their global L2 norm is at most `max_norm`; returns the norm before scaling.
double clip_grad_norm(GradMap& grads, double max_norm);

struct TrainResult {
  VstParams params;
  std::vector<double> epoch_loss;  // sample-weighted mean loss per epoch
};

using EpochCallback = std::function<void(std::size_t epoch, double mean_loss)>;

/// Mini-batch training from `initial` on in-memory clips.
TrainResult train(const VstConfig& cfg, const VstParams& initial, const std::vector<VideoClip>& clips,
                  const std::vector<std::size_t>& labels, const TrainConfig& tc, const EpochCallback& on_epoch = {});

struct TrainedModel {
  Checkpoint checkpoint;
  std::vector<double> epoch_loss;
};

/// Loads the train split of `manifest` for one modality and trains a fresh model
/// (initialized from tc.seed). Checkpoint meta records size, modality and seed.
TrainedModel train_on_manifest(const VstConfig& cfg, const DatasetManifest& manifest, Modality modality,
                               const std::string& size_tag, const TrainConfig& tc, const EpochCallback& on_epoch = {});

/// "epoch<TAB>mean_loss" lines, epochs counted from 1.
void write_loss_curve(const std::filesystem::path& path, const std::vector<double>& losses);

std::vector<VideoClip> load_clips(const std::vector<ManifestRecord>& records, Modality modality);

/// Logits for every record, in record order. `jobs` > 1 spreads fixed-size
/// batches over threads; the output does not depend on it.
PredictionSet predict(const Checkpoint& ckpt, const std::vector<ManifestRecord>& records, Modality modality,
                      std::size_t jobs = 1);

struct Tally {
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

struct EvalReport {
  std::string source;
  Tally overall;
  std::map<View, Tally> per_view;
  std::vector<Tally> per_class;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

/// Top-1 accuracy of `pred` against the records' labels. Every prediction
/// must match a record and vice versa (AlignmentError otherwise).
EvalReport evaluate(const PredictionSet& pred, const std::vector<ManifestRecord>& records, std::size_t num_classes);

/// "key: value" lines, a per-view table, per-class accuracy and the confusion matrix.
std::string format_report(const EvalReport& report);

}  // namespace vst
