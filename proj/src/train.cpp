#include "vst/train.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "vst/errors.hpp"
#include "vst/io.hpp"
#include "vst/ops.hpp"
#include "vst/rng.hpp"

namespace vst {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !(eps > 0.0) || !(weight_decay >= 0.0)) {
    throw ContractError("learning rate and eps must be positive, weight decay nonnegative");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ContractError("betas must lie in [0,1)");
  if (batch_size == 0 || epochs == 0) throw ContractError("batch size and epochs must be positive");
  if (grad_clip_norm && !(*grad_clip_norm > 0.0)) throw ContractError("gradient clip norm must be positive");
}

Tensor cross_entropy(const Tensor& logits, std::size_t target) {
  if (logits.rank() != 1) throw DimensionError("cross_entropy expects a score vector, got " + to_string(logits.shape()));
  const std::size_t t[] = {target};
  return softmax_cross_entropy(reshape(logits, {1, logits.size()}), t);
}

void adamw_step(VstParams& params, const GradMap& grads, AdamWState& state, const TrainConfig& cfg, std::size_t step) {
  if (step == 0) throw ContractError("adamw_step: steps count from 1");
  const double lr = cfg.learning_rate;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (auto& [name, tensor] : params.tensors()) {
    auto g = grads.find(name);
    if (g == grads.end()) continue;
    const std::size_t n = tensor.size();
    if (g->second.size() != n) {
      throw ContractError("gradient for '" + name + "' has " + std::to_string(g->second.size()) + " entries, parameter has " +
                          std::to_string(n));
    }
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.empty()) m.assign(n, 0.0);
    if (v.empty()) v.assign(n, 0.0);
    if (m.size() != n || v.size() != n) throw ContractError("optimizer state for '" + name + "' has the wrong size");
    auto theta = tensor.values();
    std::vector<double> next(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = g->second[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double m_hat = m[i] / c1, v_hat = v[i] / c2;
      next[i] = theta[i] - lr * cfg.weight_decay * theta[i] - lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
    tensor = Tensor(tensor.shape(), std::move(next), tensor.requires_grad());
  }
}

double scheduled_learning_rate(const TrainConfig& cfg, std::size_t step, std::size_t total_steps) {
  if (!cfg.cosine_schedule || total_steps <= 1) return cfg.learning_rate;
  const double progress = static_cast<double>(step - 1) / static_cast<double>(total_steps - 1);
  return 0.5 * cfg.learning_rate * (1.0 + std::cos(std::numbers::pi * progress));
}

double clip_grad_norm(GradMap& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [_, g] : grads)
    for (double x : g) sq += x * x;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& [_, g] : grads)
      for (double& x : g) x *= s;
  }
  return norm;
}

TrainResult train(const VstConfig& cfg, const VstParams& initial, const std::vector<VideoClip>& clips,
                  const std::vector<std::size_t>& labels, const TrainConfig& tc, const EpochCallback& on_epoch) {
  tc.validate();
  cfg.validate();
  if (clips.empty()) throw ContractError("training set is empty");
  if (clips.size() != labels.size()) throw ContractError("clip and label counts differ");
  for (const auto& c : clips) {
    if (c.geometry() != cfg.geometry) {
      throw GeometryError("clip geometry " + to_string(c.geometry()) + " does not match model geometry " +
                          to_string(cfg.geometry));
    }
  }
  for (auto l : labels) {
    if (l >= cfg.num_classes) throw ContractError("label " + std::to_string(l) + " outside the model's classes");
  }

  TrainResult result{initial.detached(true), {}};
  AdamWState state;
  const std::size_t n = clips.size();
  const std::size_t batches_per_epoch = (n + tc.batch_size - 1) / tc.batch_size;
  const std::size_t total_steps = batches_per_epoch * tc.epochs;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    const auto order = CounterRng{tc.seed, hash_string("shuffle"), epoch}.permutation(n);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += tc.batch_size) {
      ++step;
      const std::size_t end = std::min(n, start + tc.batch_size);
      std::vector<VideoClip> batch;
      std::vector<std::size_t> targets;
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(clips[order[i]]);
        targets.push_back(labels[order[i]]);
      }
      for (auto& [_, p] : result.params.tensors()) p.zero_grad();
      const ForwardOptions opts{true, hash_key({tc.seed, hash_string("drop-path"), step})};
      auto loss = softmax_cross_entropy(forward(stack_clips(batch), cfg, result.params, opts), targets);
      loss_sum += loss.item() * static_cast<double>(end - start);
      backward(loss);

      GradMap grads;
      for (const auto& [name, p] : result.params.tensors()) grads.emplace(name, p.grad());
      if (tc.grad_clip_norm) clip_grad_norm(grads, *tc.grad_clip_norm);
      TrainConfig step_cfg = tc;
      step_cfg.learning_rate = scheduled_learning_rate(tc, step, total_steps);
      adamw_step(result.params, grads, state, step_cfg, step);
    }
    const double mean = loss_sum / static_cast<double>(n);
    if (!std::isfinite(mean)) throw NumericError("training loss diverged in epoch " + std::to_string(epoch + 1));
    result.epoch_loss.push_back(mean);
    if (on_epoch) on_epoch(epoch + 1, mean);
  }
  result.params = result.params.detached(false);
  return result;
}

std::vector<VideoClip> load_clips(const std::vector<ManifestRecord>& records, Modality modality) {
  std::vector<VideoClip> clips;
  clips.reserve(records.size());
  for (const auto& r : records) clips.push_back(load_clip(r.path_for(modality), modality, r.view));
  return clips;
}

TrainedModel train_on_manifest(const VstConfig& cfg, const DatasetManifest& manifest, Modality modality,
                               const std::string& size_tag, const TrainConfig& tc, const EpochCallback& on_epoch) {
  const auto records = manifest.split("train");
  if (records.empty()) throw ContractError("manifest has no train split");
  if (manifest.geometry != cfg.geometry) {
    throw GeometryError("dataset geometry " + to_string(manifest.geometry) + " does not match model geometry " +
                        to_string(cfg.geometry));
  }
  std::vector<std::size_t> labels;
  for (const auto& r : records) labels.push_back(r.gloss_id);
  auto clips = load_clips(records, modality);
  auto result = train(cfg, init_params(cfg, tc.seed), clips, labels, tc, on_epoch);
  Checkpoint ckpt{cfg, std::move(result.params),
                  {{"size", size_tag}, {"modality", std::string(to_string(modality))}, {"seed", std::to_string(tc.seed)},
                   {"epochs", std::to_string(tc.epochs)}}};
  return {std::move(ckpt), std::move(result.epoch_loss)};
}

void write_loss_curve(const std::filesystem::path& path, const std::vector<double>& losses) {
  std::string text;
  char buf[64];
  for (std::size_t i = 0; i < losses.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu\t%.9g\n", i + 1, losses[i]);
    text += buf;
  }
  auto f = open_for_write(path);
  f << text;
  if (!f) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace vst
