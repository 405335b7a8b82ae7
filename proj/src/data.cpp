#include "vst/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "vst/errors.hpp"
#include "vst/io.hpp"
#include "vst/rng.hpp"

namespace vst {

namespace {

constexpr double kBlobSigma = 1.5;  // pixels
constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr std::array<Vec3, 2> kHandColor{Vec3{0.8, 0.25, 0.1}, Vec3{0.1, 0.3, 0.7}};
constexpr Vec3 kAmplitude{0.6, 0.9, 0.6};
constexpr std::array<double, 2> kHandCentre{-0.4, 0.4};

struct PathParams {
  std::array<Vec3, 2> freq;
  std::array<Vec3, 2> phase;
};

PathParams path_params(std::uint64_t world_seed, std::size_t gloss_id) {
  // Each gloss gets two distinct frequency triples from {1,2,3}^3, so paths
  // differ by shape, not only by phase.
  auto order = CounterRng{world_seed, hash_string("gloss-frequencies")}.permutation(27);
  PathParams p{};
  CounterRng rng{world_seed, hash_string("gloss-phases"), gloss_id};
  for (std::size_t h = 0; h < 2; ++h) {
    const std::size_t code = order[(2 * gloss_id + h) % 27];
    p.freq[h] = {double(1 + code % 3), double(1 + (code / 3) % 3), double(1 + code / 9)};
    for (auto& ph : p.phase[h]) ph = rng.uniform(0.0, kTwoPi);
  }
  return p;
}

struct SignerStyle {
  double scale = 1.0;
  double phase = 0.0;
  Vec3 offset{};
  Vec3 background{};
};

SignerStyle signer_style(std::uint64_t signer) {
  CounterRng rng{signer, hash_string("signer-style")};
  SignerStyle s;
  s.scale = rng.uniform(0.9, 1.1);
  s.phase = rng.uniform(-0.3, 0.3);
  for (auto& o : s.offset) o = rng.uniform(-0.1, 0.1);
  for (auto& b : s.background) b = rng.uniform(0.0, 0.1);
  return s;
}

std::vector<std::array<Vec3, 2>> trace(const PathParams& p, const SignerStyle& s, std::size_t frames) {
  std::vector<std::array<Vec3, 2>> out(frames);
  for (std::size_t t = 0; t < frames; ++t) {
    const double tau = static_cast<double>(t) / static_cast<double>(frames);
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t a = 0; a < 3; ++a) {
        const double centre = a == 0 ? kHandCentre[h] : 0.0;
        out[t][h][a] = centre + s.offset[a] +
                       s.scale * kAmplitude[a] * std::sin(kTwoPi * p.freq[h][a] * tau + p.phase[h][a] + s.phase);
      }
  }
  return out;
}

// Camera-frame depth mapped to [0,1], larger = nearer.
double nearness(double z) { return std::clamp(0.5 + z / 3.0, 0.0, 1.0); }

std::size_t split_index(const std::string& split) {
  if (split == "train") return 0;
  if (split == "val") return 1;
  if (split == "test") return 2;
  throw ContractError("unknown split '" + split + "'");
}

std::string two_digits(std::size_t v) { return (v < 10 ? "0" : "") + std::to_string(v); }

}  // namespace

double view_azimuth(View v) {
  switch (v) {
    case View::front: return 0.0;
    case View::left: return std::numbers::pi / 4;
    case View::right: return -std::numbers::pi / 4;
  }
  throw ContractError("unknown view");
}

Vec3 to_camera(const Vec3& p, View v) {
  const double a = view_azimuth(v), c = std::cos(a), s = std::sin(a);
  return {c * p[0] - s * p[2], p[1], s * p[0] + c * p[2]};
}

Vec3 from_camera(const Vec3& p, View v) {
  const double a = view_azimuth(v), c = std::cos(a), s = std::sin(a);
  return {c * p[0] + s * p[2], p[1], -s * p[0] + c * p[2]};
}

std::array<double, 2> project(const Vec3& camera, const Geometry& g) {
  const double scale = static_cast<double>(std::min(g.height, g.width)) / 8.0;
  return {static_cast<double>(g.width) / 2 + scale * camera[0], static_cast<double>(g.height) / 2 - scale * camera[1]};
}

std::vector<std::array<Vec3, 2>> scene_trajectory(const SceneSpec& spec) {
  return trace(path_params(spec.world_seed, spec.gloss_id), signer_style(spec.signer_seed), spec.geometry.frames);
}

std::vector<std::array<Vec3, 2>> gloss_template(std::uint64_t world_seed, std::size_t gloss_id, std::size_t frames) {
  return trace(path_params(world_seed, gloss_id), SignerStyle{}, frames);
}

ClipPair render_clip(const SceneSpec& spec) {
  const auto& g = spec.geometry;
  if (g.frames == 0 || g.height == 0 || g.width == 0) throw ContractError("render_clip: empty geometry");
  const auto path = scene_trajectory(spec);
  const auto style = signer_style(spec.signer_seed);
  const std::size_t plane = g.height * g.width * 3;
  std::vector<double> rgb(g.frames * plane), depth(g.frames * plane);
  const double inv = 1.0 / (2.0 * kBlobSigma * kBlobSigma);

  for (std::size_t t = 0; t < g.frames; ++t) {
    std::array<std::array<double, 2>, 2> uv;
    std::array<double, 2> near;
    for (std::size_t h = 0; h < 2; ++h) {
      const auto cam = to_camera(path[t][h], spec.view);
      uv[h] = project(cam, g);
      near[h] = nearness(cam[2]);
    }
    for (std::size_t i = 0; i < g.height; ++i)
      for (std::size_t j = 0; j < g.width; ++j) {
        const double x = static_cast<double>(j) + 0.5, y = static_cast<double>(i) + 0.5;
        Vec3 colour = style.background;
        double d = 0.0;
        for (std::size_t h = 0; h < 2; ++h) {
          const double dx = x - uv[h][0], dy = y - uv[h][1];
          const double blob = std::exp(-(dx * dx + dy * dy) * inv);
          for (std::size_t c = 0; c < 3; ++c) colour[c] += blob * kHandColor[h][c];
          d = std::max(d, blob * near[h]);
        }
        const std::size_t base = t * plane + (i * g.width + j) * 3;
        for (std::size_t c = 0; c < 3; ++c) {
          rgb[base + c] = std::min(colour[c], 1.0);
          depth[base + c] = d;
        }
      }
  }
  const Shape shape{g.frames, g.height, g.width, 3};
  return {VideoClip{Tensor(shape, std::move(rgb)), Modality::rgb, spec.view},
          VideoClip{Tensor(shape, std::move(depth)), Modality::depth, spec.view}};
}

void save_clip(const std::filesystem::path& path, const VideoClip& clip) { save_tensor(path, clip.volume); }

VideoClip load_clip(const std::filesystem::path& path, Modality modality, View view) {
  auto t = load_tensor(path);
  if (t.rank() != 4 || t.extent(3) != 3) {
    throw FormatError(path.string() + ": expected a (T,H,W,3) clip, got " + to_string(t.shape()));
  }
  return {std::move(t), modality, view};
}

std::vector<ManifestRecord> DatasetManifest::split(const std::string& name) const {
  std::vector<ManifestRecord> out;
  for (const auto& r : records)
    if (r.split == name) out.push_back(r);
  return out;
}

std::uint64_t signer_seed(std::uint64_t seed, const std::string& split, std::size_t gloss_id, std::size_t index) {
  // Top bits carry the split, so signers can never be shared between splits.
  const std::uint64_t h = hash_key({seed, hash_string("signer"), gloss_id, index}) >> 2;
  return (static_cast<std::uint64_t>(split_index(split)) << 62) | h;
}

DatasetManifest generate_dataset(const DatasetOptions& opts, const std::filesystem::path& out_dir) {
  if (opts.num_classes == 0 || opts.signers_per_class == 0) {
    throw ContractError("dataset needs at least one class and one signer per class");
  }
  DatasetManifest manifest;
  manifest.num_classes = opts.num_classes;
  manifest.geometry = opts.geometry;
  manifest.seed = opts.seed;

  const std::vector<std::pair<std::string, std::vector<View>>> splits{
      {"train", {View::front}}, {"val", {View::left}}, {"test", {View::left, View::right}}};
  for (const auto& [split, views] : splits)
    for (std::size_t g = 0; g < opts.num_classes; ++g)
      for (std::size_t i = 0; i < opts.signers_per_class; ++i)
        for (View v : views) {
          SceneSpec spec{g, signer_seed(opts.seed, split, g, i), v, opts.geometry, opts.seed};
          const auto clips = render_clip(spec);
          ManifestRecord r;
          r.split = split;
          r.sample_id = split + "_g" + two_digits(g) + "_s" + two_digits(i) + "_" + std::string(to_string(v));
          r.gloss_id = g;
          r.view = v;
          r.rgb_path = out_dir / "rgb" / split / (r.sample_id + ".tnsr");
          r.depth_path = out_dir / "depth" / split / (r.sample_id + ".tnsr");
          std::error_code ec;
          std::filesystem::create_directories(r.rgb_path.parent_path(), ec);
          std::filesystem::create_directories(r.depth_path.parent_path(), ec);
          save_clip(r.rgb_path, clips.rgb);
          save_clip(r.depth_path, clips.depth);
          manifest.records.push_back(std::move(r));
        }
  write_manifest(out_dir / "manifest.tsv", manifest);
  return manifest;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  const auto root = path.parent_path();
  std::ostringstream os;
  os << "# classes=" << m.num_classes << '\n'
     << "# geometry=" << to_string(m.geometry) << '\n'
     << "# seed=" << m.seed << '\n';
  for (const auto& r : m.records) {
    os << r.split << '\t' << r.sample_id << '\t' << r.gloss_id << '\t' << to_string(r.view) << '\t'
       << r.rgb_path.lexically_relative(root).generic_string() << '\t'
       << r.depth_path.lexically_relative(root).generic_string() << '\n';
  }
  auto f = open_for_write(path);
  f << os.str();
  if (!f) throw IoError("write failed for '" + path.string() + "'");
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  auto f = open_for_read(path);
  const auto root = path.parent_path();
  DatasetManifest m;
  bool have_classes = false, have_geometry = false;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) {
    throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      auto key = line.substr(1, eq - 1);
      key.erase(0, key.find_first_not_of(' '));
      const auto value = line.substr(eq + 1);
      try {
        if (key == "classes") {
          m.num_classes = std::stoul(value);
          have_classes = true;
        } else if (key == "geometry") {
          m.geometry = parse_geometry(value);
          have_geometry = true;
        } else if (key == "seed") {
          m.seed = std::stoull(value);
        }
      } catch (const std::exception&) {
        fail("bad header value for '" + key + "'");
      }
      continue;
    }
    std::vector<std::string> fields;
    std::istringstream ls(line);
    for (std::string field; std::getline(ls, field, '\t');) fields.push_back(field);
    if (fields.size() != 6) fail("expected 6 tab-separated fields, got " + std::to_string(fields.size()));
    ManifestRecord r;
    r.split = fields[0];
    r.sample_id = fields[1];
    try {
      std::size_t used = 0;
      r.gloss_id = std::stoul(fields[2], &used);
      if (used != fields[2].size()) throw std::invalid_argument("gloss");
      r.view = parse_view(fields[3]);
    } catch (const std::exception&) {
      fail("bad gloss id or view");
    }
    r.rgb_path = root / fields[4];
    r.depth_path = root / fields[5];
    m.records.push_back(std::move(r));
  }
  if (!have_classes || !have_geometry) {
    line_no = 0;
    fail("manifest header must declare classes and geometry");
  }
  for (const auto& r : m.records) {
    if (r.gloss_id >= m.num_classes) fail("gloss id " + std::to_string(r.gloss_id) + " out of range");
  }
  return m;
}

}  // namespace vst
