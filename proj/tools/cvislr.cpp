// cvislr: synthetic data, VST training, prediction, ensembling and evaluation.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vst/checkpoint.hpp"
#include "vst/data.hpp"
#include "vst/ensemble.hpp"
#include "vst/errors.hpp"
#include "vst/train.hpp"

namespace fs = std::filesystem;
using namespace vst;

namespace {

std::vector<double> parse_ratios(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  for (std::string part; std::getline(ss, part, ',');) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(part, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != part.size()) throw CLI::ValidationError("weights", "bad number '" + part + "'");
    out.push_back(v);
  }
  try {
    normalize_weights(out);
  } catch (const ContractError& e) {
    throw CLI::ValidationError("weights", e.what());
  }
  return out;
}

std::string join(const std::vector<double>& v) {
  std::string s;
  char buf[32];
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.6g", v[i]);
    s += (i ? "," : "") + std::string(buf);
  }
  return s;
}

// Accepts a manifest file or the directory holding manifest.tsv.
fs::path manifest_path(const fs::path& data) { return fs::is_directory(data) ? data / "manifest.tsv" : data; }

// Writes through a temporary sibling so failed runs leave no partial file.
template <typename Writer>
void write_atomically(const fs::path& path, Writer&& write) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".partial";
  try {
    write(tmp);
    fs::rename(tmp, path);
  } catch (...) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw;
  }
}

void echo(const std::string& command, const std::vector<std::pair<std::string, std::string>>& settings) {
  std::cout << "[" << command << "]\n";
  for (const auto& [k, v] : settings) std::cout << "  " << k << ": " << v << "\n";
  std::cout.flush();
}

struct GenDataArgs {
  std::size_t classes = 8;
  std::size_t signers = 6;
  std::string geometry = "8x32x32";
  std::uint64_t seed = 7;
  std::string out;
};

void run_gen_data(const GenDataArgs& a) {
  DatasetOptions opts{a.classes, a.signers, parse_geometry(a.geometry), a.seed};
  echo("gen-data", {{"classes", std::to_string(a.classes)},
                    {"signers", std::to_string(a.signers)},
                    {"geometry", to_string(opts.geometry)},
                    {"seed", std::to_string(a.seed)},
                    {"out", a.out}});
  fs::create_directories(a.out);
  auto m = generate_dataset(opts, a.out);
  std::cout << "wrote " << m.records.size() << " samples (" << m.split("train").size() << " train, "
            << m.split("val").size() << " val, " << m.split("test").size() << " test) to "
            << (fs::path(a.out) / "manifest.tsv").string() << "\n";
}

struct TrainArgs {
  std::string size = "base";
  std::string modality = "rgb";
  std::string scale = "full";
  std::string data;
  std::string out;
  std::string loss_curve;
  TrainConfig tc;
  double grad_clip = 0.0;
  double drop_path = 0.0;
  bool dry_run = false;
};

void run_train(TrainArgs a) {
  const auto size = parse_model_size(a.size);
  const auto modality = parse_modality(a.modality);
  if (a.grad_clip > 0.0) a.tc.grad_clip_norm = a.grad_clip;
  a.tc.validate();
  if (a.loss_curve.empty()) a.loss_curve = a.out + ".loss.tsv";

  std::optional<DatasetManifest> manifest;
  Geometry geometry{32, 224, 224};
  std::size_t classes = 2;
  if (!a.dry_run || !a.data.empty()) {
    manifest = load_manifest(manifest_path(a.data));
    geometry = manifest->geometry;
    classes = manifest->num_classes;
  }
  auto cfg = a.scale == "toy" ? make_toy_config(size, classes, geometry) : make_config(size, classes, geometry);
  cfg.drop_path_rate = a.drop_path;
  cfg.validate();

  std::vector<std::pair<std::string, std::string>> settings{
      {"size", a.size},
      {"modality", a.modality},
      {"scale", a.scale},
      {"data", a.data},
      {"out", a.out},
      {"loss_curve", a.loss_curve},
      {"epochs", std::to_string(a.tc.epochs)},
      {"batch_size", std::to_string(a.tc.batch_size)},
      {"lr", join({a.tc.learning_rate})},
      {"betas", join({a.tc.beta1, a.tc.beta2})},
      {"eps", join({a.tc.eps})},
      {"weight_decay", join({a.tc.weight_decay})},
      {"grad_clip", a.tc.grad_clip_norm ? join({*a.tc.grad_clip_norm}) : "none"},
      {"cosine", a.tc.cosine_schedule ? "on" : "off"},
      {"seed", std::to_string(a.tc.seed)}};
  std::istringstream header(encode_config_header(cfg, {}));
  for (std::string line; std::getline(header, line);) {
    const auto eq = line.find('=');
    settings.emplace_back("model." + line.substr(0, eq), line.substr(eq + 1));
  }
  echo("train", settings);
  if (a.dry_run) return;

  auto model = train_on_manifest(cfg, *manifest, modality, a.size, a.tc, [&](std::size_t epoch, double loss) {
    std::printf("epoch %zu/%zu  loss %.6f\n", epoch, a.tc.epochs, loss);
    std::fflush(stdout);
  });
  model.checkpoint.meta["scale"] = a.scale;
  write_atomically(a.out, [&](const fs::path& p) { save_checkpoint(p, model.checkpoint); });
  write_atomically(a.loss_curve, [&](const fs::path& p) { write_loss_curve(p, model.epoch_loss); });
  std::cout << "wrote " << a.out << "\n";
}

struct PredictArgs {
  std::string checkpoint;
  std::string data;
  std::string split = "test";
  std::string modality;  // default: the checkpoint's
  std::string out;
  std::size_t jobs = 1;
};

void run_predict(const PredictArgs& a) {
  auto ckpt = load_checkpoint(a.checkpoint);
  std::string modality = a.modality;
  if (modality.empty()) {
    auto it = ckpt.meta.find("modality");
    if (it == ckpt.meta.end()) throw ContractError("checkpoint has no modality; pass --modality");
    modality = it->second;
  }
  const auto m = parse_modality(modality);
  echo("predict", {{"checkpoint", a.checkpoint},
                   {"data", a.data},
                   {"split", a.split},
                   {"modality", modality},
                   {"out", a.out},
                   {"jobs", std::to_string(a.jobs)}});
  const auto manifest = load_manifest(manifest_path(a.data));
  if (manifest.geometry != ckpt.config.geometry) {
    throw GeometryError("checkpoint geometry " + to_string(ckpt.config.geometry) + " does not match data geometry " +
                        to_string(manifest.geometry));
  }
  const auto records = manifest.split(a.split);
  if (records.empty()) throw ContractError("split '" + a.split + "' is empty");
  auto pred = predict(ckpt, records, m, a.jobs);
  write_atomically(a.out, [&](const fs::path& p) { save_predictions(p, pred); });
  std::cout << "wrote " << pred.size() << " predictions to " << a.out << "\n";
}

struct EnsembleArgs {
  std::vector<std::string> inputs;
  std::string weights;
  std::string rgb;
  std::string depth;
  std::string modality_weights;
  std::string out;
};

void run_ensemble(const EnsembleArgs& a) {
  const EnsembleWeights defaults;
  PredictionSet fused;
  if (!a.inputs.empty()) {
    std::vector<double> w = a.weights.empty() ? defaults.size_weights : parse_ratios(a.weights);
    if (w.size() != a.inputs.size()) {
      throw ContractError(std::to_string(w.size()) + " weights for " + std::to_string(a.inputs.size()) +
                          " inputs (defaults apply to three inputs ordered large, base, small)");
    }
    std::string list;
    for (const auto& in : a.inputs) list += (list.empty() ? "" : ",") + in;
    echo("ensemble", {{"inputs", list}, {"weights", join(w)}, {"normalized", join(normalize_weights(w))}, {"out", a.out}});
    std::vector<PredictionSet> sets;
    for (const auto& in : a.inputs) sets.push_back(load_predictions(in));
    fused = single_modal_ensemble(sets, w);
  } else {
    std::vector<double> w = a.modality_weights.empty()
                                ? std::vector<double>(defaults.modality_weights.begin(), defaults.modality_weights.end())
                                : parse_ratios(a.modality_weights);
    if (w.size() != 2) throw ContractError("--modality-weights takes two ratios (rgb, depth)");
    echo("ensemble", {{"rgb", a.rgb},
                      {"depth", a.depth},
                      {"modality_weights", join(w)},
                      {"normalized", join(normalize_weights(w))},
                      {"out", a.out}});
    fused = multimodal_ensemble(load_predictions(a.rgb), load_predictions(a.depth), {w[0], w[1]});
  }
  write_atomically(a.out, [&](const fs::path& p) { save_predictions(p, fused); });
  std::cout << "wrote " << fused.size() << " fused predictions to " << a.out << "\n";
}

struct EvaluateArgs {
  std::string predictions;
  std::string data;
  std::string split = "test";
  std::string out;
};

void run_evaluate(const EvaluateArgs& a) {
  echo("evaluate", {{"predictions", a.predictions}, {"data", a.data}, {"split", a.split}, {"out", a.out.empty() ? "-" : a.out}});
  const auto manifest = load_manifest(manifest_path(a.data));
  auto report = evaluate(load_predictions(a.predictions), manifest.split(a.split), manifest.num_classes);
  const auto text = format_report(report);
  std::cout << text;
  if (!a.out.empty()) {
    write_atomically(a.out, [&](const fs::path& p) {
      auto f = std::ofstream(p, std::ios::binary);
      f << text;
      if (!f) throw IoError("write failed for '" + p.string() + "'");
    });
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-view sign recognition with video Swin transformers: data, training, ensembling"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* g = app.add_subcommand("gen-data", "Render the synthetic multi-view RGB-D dataset");
  g->add_option("--classes", gen.classes, "Number of glosses")->check(CLI::PositiveNumber)->capture_default_str();
  g->add_option("--signers", gen.signers, "Signers per class and split")->check(CLI::PositiveNumber)->capture_default_str();
  g->add_option("--geometry", gen.geometry, "Clip extents TxHxW")->capture_default_str();
  g->add_option("--seed", gen.seed, "Dataset seed")->capture_default_str();
  g->add_option("--out", gen.out, "Output directory")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train one VST model on the train split");
  t->add_option("--size", tr.size, "Model size")->check(CLI::IsMember({"small", "base", "large"}))->capture_default_str();
  t->add_option("--modality", tr.modality, "Input modality")->check(CLI::IsMember({"rgb", "depth"}))->capture_default_str();
  t->add_option("--scale", tr.scale, "full: C=96/128/192, depths 2,2,18,2; toy: C=12/16/24, depths 1,1,2,1")
      ->check(CLI::IsMember({"full", "toy"}))
      ->capture_default_str();
  t->add_option("--data", tr.data, "Manifest file or dataset directory");
  t->add_option("--out", tr.out, "Checkpoint path");
  t->add_option("--loss-curve", tr.loss_curve, "Loss curve path (default: <out>.loss.tsv)");
  t->add_option("--epochs", tr.tc.epochs, "Epochs")->check(CLI::PositiveNumber)->capture_default_str();
  t->add_option("--batch-size", tr.tc.batch_size, "Mini-batch size")->check(CLI::PositiveNumber)->capture_default_str();
  t->add_option("--lr", tr.tc.learning_rate, "AdamW learning rate")->check(CLI::PositiveNumber)->capture_default_str();
  t->add_option("--weight-decay", tr.tc.weight_decay, "Decoupled weight decay")->check(CLI::NonNegativeNumber)->capture_default_str();
  t->add_option("--grad-clip", tr.grad_clip, "Global gradient norm limit (0 = off)")->check(CLI::NonNegativeNumber);
  t->add_option("--drop-path", tr.drop_path, "Maximum stochastic depth rate")->check(CLI::Range(0.0, 0.99));
  t->add_flag("--cosine", tr.tc.cosine_schedule, "Cosine learning-rate decay");
  t->add_option("--seed", tr.tc.seed, "Initialization, shuffling and drop-path seed")->capture_default_str();
  t->add_flag("--dry-run", tr.dry_run, "Resolve and print the configuration only");

  PredictArgs pr;
  auto* p = app.add_subcommand("predict", "Write class logits for one split");
  p->add_option("--checkpoint", pr.checkpoint, "Checkpoint path")->required();
  p->add_option("--data", pr.data, "Manifest file or dataset directory")->required();
  p->add_option("--split", pr.split, "Split")->check(CLI::IsMember({"train", "val", "test"}))->capture_default_str();
  p->add_option("--modality", pr.modality, "Override the checkpoint's modality")->check(CLI::IsMember({"rgb", "depth"}));
  p->add_option("--out", pr.out, "Prediction file")->required();
  p->add_option("--jobs", pr.jobs, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();

  EnsembleArgs en;
  auto* e = app.add_subcommand("ensemble", "Fuse prediction files");
  auto* in_opt = e->add_option("--inputs", en.inputs, "Same-modality prediction files (large, base, small)");
  auto* w_opt = e->add_option("--weights", en.weights, "Ratios for --inputs (default 0.4,0.4,0.2)");
  auto* rgb_opt = e->add_option("--rgb", en.rgb, "RGB prediction file");
  auto* depth_opt = e->add_option("--depth", en.depth, "Depth prediction file");
  auto* mw_opt = e->add_option("--modality-weights", en.modality_weights, "RGB, depth ratios (default 0.65,0.35)");
  e->add_option("--out", en.out, "Fused prediction file")->required();
  w_opt->needs(in_opt);
  mw_opt->needs(rgb_opt);
  rgb_opt->needs(depth_opt);
  depth_opt->needs(rgb_opt);
  in_opt->excludes(rgb_opt)->excludes(depth_opt)->excludes(mw_opt);

  EvaluateArgs ev;
  auto* v = app.add_subcommand("evaluate", "Top-1 accuracy report");
  v->add_option("--predictions", ev.predictions, "Prediction file")->required();
  v->add_option("--data", ev.data, "Manifest file or dataset directory")->required();
  v->add_option("--split", ev.split, "Split")->check(CLI::IsMember({"train", "val", "test"}))->capture_default_str();
  v->add_option("--out", ev.out, "Report path");

  try {
    app.parse(argc, argv);
    if (t->parsed() && !tr.dry_run && (tr.data.empty() || tr.out.empty())) {
      throw CLI::RequiredError("train needs --data and --out");
    }
    if (e->parsed()) {
      if (en.inputs.empty() && en.rgb.empty()) throw CLI::RequiredError("ensemble needs --inputs or --rgb/--depth");
      if (!en.weights.empty()) parse_ratios(en.weights);
      if (!en.modality_weights.empty()) parse_ratios(en.modality_weights);
    }
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return 2;
  }

  try {
    if (g->parsed()) run_gen_data(gen);
    if (t->parsed()) run_train(tr);
    if (p->parsed()) run_predict(pr);
    if (e->parsed()) run_ensemble(en);
    if (v->parsed()) run_evaluate(ev);
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 0;
}
