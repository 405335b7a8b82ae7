#include <algorithm>
#include <cstdio>
#include <thread>
#include <unordered_map>

#include "vst/errors.hpp"
#include "vst/train.hpp"

namespace vst {

namespace {

// Fixed so that outputs do not depend on the thread count.
constexpr std::size_t kPredictBatch = 16;

}  // namespace

PredictionSet predict(const Checkpoint& ckpt, const std::vector<ManifestRecord>& records, Modality modality,
                      std::size_t jobs) {
  const auto& cfg = ckpt.config;
  const auto params = ckpt.params.detached(false);
  const std::size_t n = records.size();
  PredictionSet set;
  set.kind = ScoreKind::logits;
  set.scores = ScoreMatrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cfg.num_classes));
  auto size = ckpt.meta.find("size");
  set.provenance = std::string(to_string(modality)) + "/" + (size == ckpt.meta.end() ? "model" : size->second);
  for (const auto& r : records) {
    set.sample_ids.push_back(r.sample_id);
    set.labels.push_back(static_cast<std::int32_t>(r.gloss_id));
  }

  const std::size_t chunks = (n + kPredictBatch - 1) / kPredictBatch;
  auto run_chunk = [&](std::size_t c) {
    const std::size_t begin = c * kPredictBatch, end = std::min(n, begin + kPredictBatch);
    std::vector<VideoClip> clips;
    for (std::size_t i = begin; i < end; ++i) clips.push_back(load_clip(records[i].path_for(modality), modality, records[i].view));
    const auto logits = forward(stack_clips(clips), cfg, params);
    for (std::size_t i = begin; i < end; ++i)
      for (std::size_t k = 0; k < cfg.num_classes; ++k) {
        set.scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = logits[(i - begin) * cfg.num_classes + k];
      }
  };

  jobs = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(chunks, 1));
  if (jobs == 1) {
    for (std::size_t c = 0; c < chunks; ++c) run_chunk(c);
    return set;
  }
  std::vector<std::exception_ptr> errors(jobs);
  std::vector<std::thread> workers;
  for (std::size_t j = 0; j < jobs; ++j) {
    workers.emplace_back([&, j] {
      try {
        for (std::size_t c = j; c < chunks; c += jobs) run_chunk(c);
      } catch (...) {
        errors[j] = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return set;
}

EvalReport evaluate(const PredictionSet& pred, const std::vector<ManifestRecord>& records, std::size_t num_classes) {
  pred.validate(kStoredProbabilityTolerance);
  if (pred.num_classes() != num_classes) {
    throw ContractError("predictions have " + std::to_string(pred.num_classes()) + " classes, dataset has " +
                        std::to_string(num_classes));
  }
  std::unordered_map<std::string, const ManifestRecord*> by_id;
  for (const auto& r : records) by_id.emplace(r.sample_id, &r);
  if (pred.size() != records.size()) {
    throw AlignmentError(std::to_string(pred.size()) + " predictions for " + std::to_string(records.size()) +
                         " records");
  }

  EvalReport report;
  report.source = pred.provenance;
  report.per_class.assign(num_classes, {});
  report.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  const auto top = argmax_predict(pred);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    auto it = by_id.find(pred.sample_ids[i]);
    if (it == by_id.end()) throw AlignmentError("prediction for unknown sample '" + pred.sample_ids[i] + "'");
    const auto& r = *it->second;
    if (pred.labels[i] >= 0 && static_cast<std::size_t>(pred.labels[i]) != r.gloss_id) {
      throw AlignmentError("label of '" + r.sample_id + "' disagrees with the manifest");
    }
    const bool hit = top[i] == r.gloss_id;
    for (Tally* t : {&report.overall, &report.per_view[r.view], &report.per_class[r.gloss_id]}) {
      t->correct += hit;
      ++t->total;
    }
    ++report.confusion[r.gloss_id][top[i]];
  }
  return report;
}

std::string format_report(const EvalReport& r) {
  std::string out;
  char buf[128];
  auto line = [&](const char* fmt, auto... args) {
    std::snprintf(buf, sizeof buf, fmt, args...);
    out += buf;
  };
  out += "source: " + r.source + "\n";
  line("samples: %zu\n", r.overall.total);
  line("correct: %zu\n", r.overall.correct);
  line("acc@1: %.6f\n", r.overall.accuracy());
  out += "\nview\tcorrect\ttotal\tacc@1\n";
  for (const auto& [view, t] : r.per_view) {
    line("%s\t%zu\t%zu\t%.6f\n", std::string(to_string(view)).c_str(), t.correct, t.total, t.accuracy());
  }
  out += "\nclass\tcorrect\ttotal\tacc@1\n";
  for (std::size_t k = 0; k < r.per_class.size(); ++k) {
    line("%zu\t%zu\t%zu\t%.6f\n", k, r.per_class[k].correct, r.per_class[k].total, r.per_class[k].accuracy());
  }
  out += "\nconfusion (rows: true class, columns: predicted)\n";
  for (const auto& row : r.confusion) {
    for (std::size_t k = 0; k < row.size(); ++k) line(k ? "\t%zu" : "%zu", row[k]);
    out += "\n";
  }
  return out;
}

}  // namespace vst
