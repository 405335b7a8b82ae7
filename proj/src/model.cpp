#include "vst/model.hpp"

#include <cmath>
#include <limits>

#include "vst/errors.hpp"
#include "vst/ops.hpp"
#include "vst/rng.hpp"

namespace vst {

std::string to_string(const Extent3& e) {
  return "(" + std::to_string(e[0]) + "," + std::to_string(e[1]) + "," + std::to_string(e[2]) + ")";
}

std::string_view to_string(ModelSize s) {
  switch (s) {
    case ModelSize::small: return "small";
    case ModelSize::base: return "base";
    case ModelSize::large: return "large";
  }
  return "?";
}

ModelSize parse_model_size(std::string_view s) {
  if (s == "small") return ModelSize::small;
  if (s == "base") return ModelSize::base;
  if (s == "large") return ModelSize::large;
  throw ContractError("unknown model size '" + std::string(s) + "'");
}

std::size_t VstConfig::stage_channels(std::size_t stage) const { return embed_dim << stage; }

Extent3 VstConfig::stage_tokens(std::size_t stage) const {
  return {geometry.frames / kPatch[0], (geometry.height / kPatch[1]) >> stage,
          (geometry.width / kPatch[2]) >> stage};
}

std::size_t VstConfig::total_blocks() const { return depths[0] + depths[1] + depths[2] + depths[3]; }

void VstConfig::validate() const {
  if (embed_dim == 0 || num_classes == 0 || mlp_ratio == 0) {
    throw ContractError("embed_dim, num_classes and mlp_ratio must be positive");
  }
  for (std::size_t s = 0; s < kNumStages; ++s) {
    if (depths[s] == 0 || heads[s] == 0) throw ContractError("stage depths and head counts must be positive");
    if (stage_channels(s) % heads[s] != 0) {
      throw ContractError("stage " + std::to_string(s + 1) + ": " + std::to_string(heads[s]) +
                          " heads do not divide " + std::to_string(stage_channels(s)) + " channels");
    }
  }
  for (auto w : window) {
    if (w == 0) throw ContractError("window extents must be positive");
  }
  if (!(drop_path_rate >= 0.0 && drop_path_rate < 1.0)) throw ContractError("drop_path_rate must lie in [0,1)");
  const auto& g = geometry;
  if (g.frames == 0 || g.height == 0 || g.width == 0 || g.frames % kPatch[0] || g.height % kPatch[1] ||
      g.width % kPatch[2]) {
    throw GeometryError("input geometry " + to_string(g) + " is not divisible by the 2x4x4 patch");
  }
  for (std::size_t s = 0; s + 1 < kNumStages; ++s) {
    auto t = stage_tokens(s);
    if (t[1] % 2 || t[2] % 2) {
      throw GeometryError("stage " + std::to_string(s + 1) + " token grid " + vst::to_string(t) +
                          " has odd spatial extent; patch merging needs even extents");
    }
  }
}

namespace {

std::size_t width_for(ModelSize size, std::size_t small, std::size_t base, std::size_t large) {
  switch (size) {
    case ModelSize::small: return small;
    case ModelSize::base: return base;
    case ModelSize::large: return large;
  }
  return base;
}

VstConfig config_with(std::size_t c, std::size_t head_dim, std::array<std::size_t, 4> depths, Extent3 window,
                      std::size_t num_classes, Geometry geometry) {
  VstConfig cfg;
  cfg.embed_dim = c;
  cfg.depths = depths;
  for (std::size_t s = 0; s < kNumStages; ++s) cfg.heads[s] = cfg.stage_channels(s) / head_dim;
  cfg.window = window;
  cfg.num_classes = num_classes;
  cfg.geometry = geometry;
  cfg.validate();
  return cfg;
}

}  // namespace

VstConfig make_config(ModelSize size, std::size_t num_classes, Geometry geometry) {
  return config_with(width_for(size, 96, 128, 192), 32, {2, 2, 18, 2}, {8, 7, 7}, num_classes, geometry);
}

VstConfig make_toy_config(ModelSize size, std::size_t num_classes, Geometry geometry) {
  return config_with(width_for(size, 12, 16, 24), 4, {1, 1, 2, 1}, {2, 2, 2}, num_classes, geometry);
}

const Tensor& VstParams::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ContractError("missing parameter '" + name + "'");
  return it->second;
}

std::size_t VstParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : tensors_) n += t.size();
  return n;
}

VstParams VstParams::detached(bool requires_grad) const {
  VstParams out;
  for (const auto& [name, t] : tensors_) out.set(name, t.detach(requires_grad));
  return out;
}

std::string block_prefix(std::size_t stage, std::size_t block) {
  return "layers." + std::to_string(stage) + ".blocks." + std::to_string(block) + ".";
}

namespace {

std::size_t bias_table_rows(const Extent3& w) { return (2 * w[0] - 1) * (2 * w[1] - 1) * (2 * w[2] - 1); }

}  // namespace

std::map<std::string, Shape> parameter_shapes(const VstConfig& cfg) {
  cfg.validate();
  std::map<std::string, Shape> p;
  auto add_norm = [&](const std::string& prefix, std::size_t n) {
    p[prefix + ".weight"] = {n};
    p[prefix + ".bias"] = {n};
  };
  const std::size_t c = cfg.embed_dim;
  p["patch_embed.proj.weight"] = {kPatchFeatures, c};
  p["patch_embed.proj.bias"] = {c};
  add_norm("patch_embed.norm", c);
  for (std::size_t s = 0; s < kNumStages; ++s) {
    const std::size_t ch = cfg.stage_channels(s);
    const std::size_t hidden = ch * cfg.mlp_ratio;
    for (std::size_t b = 0; b < cfg.depths[s]; ++b) {
      const auto pre = block_prefix(s, b);
      add_norm(pre + "norm1", ch);
      p[pre + "attn.qkv.weight"] = {ch, 3 * ch};
      p[pre + "attn.qkv.bias"] = {3 * ch};
      p[pre + "attn.proj.weight"] = {ch, ch};
      p[pre + "attn.proj.bias"] = {ch};
      if (cfg.use_rel_pos_bias) p[pre + "attn.relative_position_bias_table"] = {bias_table_rows(cfg.window), cfg.heads[s]};
      add_norm(pre + "norm2", ch);
      p[pre + "mlp.fc1.weight"] = {ch, hidden};
      p[pre + "mlp.fc1.bias"] = {hidden};
      p[pre + "mlp.fc2.weight"] = {hidden, ch};
      p[pre + "mlp.fc2.bias"] = {ch};
    }
    if (s + 1 < kNumStages) {
      const auto pre = "layers." + std::to_string(s) + ".downsample.";
      add_norm(pre + "norm", 4 * ch);
      p[pre + "reduction.weight"] = {4 * ch, 2 * ch};
    }
  }
  const std::size_t final_ch = cfg.stage_channels(kNumStages - 1);
  add_norm("norm", final_ch);
  p["head.weight"] = {final_ch, cfg.num_classes};
  p["head.bias"] = {cfg.num_classes};
  return p;
}

VstParams init_params(const VstConfig& cfg, std::uint64_t seed) {
  VstParams params;
  for (auto& [name, shape] : parameter_shapes(cfg)) {
    const bool is_norm = name.find("norm") != std::string::npos;
    if (name.ends_with(".bias")) {
      params.set(name, Tensor::zeros(shape, true));
    } else if (is_norm) {
      params.set(name, Tensor::full(shape, 1.0, true));
    } else {
      CounterRng rng{seed, hash_string(name)};
      std::vector<double> v(numel(shape));
      for (auto& x : v) x = rng.truncated_normal(0.02);
      params.set(name, Tensor(shape, std::move(v), true));
    }
  }
  return params;
}

bool WindowPlan::needs_mask(const Extent3& grid) const {
  return shift != Extent3{0, 0, 0} || padded != grid;
}

std::size_t WindowPlan::window_count() const {
  return (padded[0] / window[0]) * (padded[1] / window[1]) * (padded[2] / window[2]);
}

WindowPlan plan_windows(const Extent3& grid, const Extent3& window, bool shifted) {
  WindowPlan plan{};
  for (std::size_t i = 0; i < 3; ++i) {
    if (grid[i] <= window[i]) {
      plan.window[i] = grid[i];
      plan.shift[i] = 0;
    } else {
      plan.window[i] = window[i];
      plan.shift[i] = shifted ? window[i] / 2 : 0;
    }
    plan.padded[i] = (grid[i] + plan.window[i] - 1) / plan.window[i] * plan.window[i];
  }
  return plan;
}

Tensor stack_clips(std::span<const VideoClip> clips) {
  if (clips.empty()) throw ContractError("stack_clips: no clips");
  const auto g = clips.front().geometry();
  std::vector<double> values;
  values.reserve(clips.size() * clips.front().volume.size());
  for (const auto& c : clips) {
    if (c.geometry() != g) throw GeometryError("stack_clips: mixed clip geometries");
    auto v = c.volume.values();
    values.insert(values.end(), v.begin(), v.end());
  }
  return Tensor({clips.size(), g.frames, g.height, g.width, 3}, std::move(values));
}

Tensor patch_partition(const Tensor& clips) {
  const auto& s = clips.shape();
  if (s.size() != 5 || s[4] != 3) {
    throw GeometryError("patch_partition expects [B,T,H,W,3], got " + to_string(s));
  }
  if (s[1] % kPatch[0] || s[2] % kPatch[1] || s[3] % kPatch[2]) {
    throw GeometryError("clip extents " + to_string(s) + " are not divisible by the 2x4x4 patch");
  }
  const std::size_t t = s[1] / 2, h = s[2] / 4, w = s[3] / 4;
  auto x = reshape(clips, {s[0], t, 2, h, 4, w, 4, 3});
  x = permute(x, {0, 1, 3, 5, 2, 4, 6, 7});
  return reshape(x, {s[0], t, h, w, kPatchFeatures});
}

TokenGrid patch_partition_embed(const Tensor& clips, const VstConfig& cfg, const VstParams& params) {
  auto x = linear(patch_partition(clips), params.at("patch_embed.proj.weight"), params.at("patch_embed.proj.bias"));
  x = layer_norm(x, params.at("patch_embed.norm.weight"), params.at("patch_embed.norm.bias"), cfg.layer_norm_eps);
  return {x};
}

Tensor window_partition(const Tensor& grid, const Extent3& window) {
  const auto& s = grid.shape();
  if (s.size() != 5) throw DimensionError("window_partition expects [B,T,H,W,C], got " + to_string(s));
  for (std::size_t i = 0; i < 3; ++i) {
    if (window[i] == 0 || s[i + 1] % window[i]) {
      throw GeometryError("grid " + to_string(s) + " is not divisible by window " + to_string(window));
    }
  }
  const std::size_t nt = s[1] / window[0], nh = s[2] / window[1], nw = s[3] / window[2];
  auto x = reshape(grid, {s[0], nt, window[0], nh, window[1], nw, window[2], s[4]});
  x = permute(x, {0, 1, 3, 5, 2, 4, 6, 7});
  return reshape(x, {s[0] * nt * nh * nw, window[0] * window[1] * window[2], s[4]});
}

Tensor window_reverse(const Tensor& windows, std::size_t batch, const Extent3& grid, const Extent3& window) {
  const std::size_t nt = grid[0] / window[0], nh = grid[1] / window[1], nw = grid[2] / window[2];
  const std::size_t c = windows.extent(-1);
  auto x = reshape(windows, {batch, nt, nh, nw, window[0], window[1], window[2], c});
  x = permute(x, {0, 1, 4, 2, 5, 3, 6, 7});
  return reshape(x, {batch, grid[0], grid[1], grid[2], c});
}

Tensor cyclic_shift(const Tensor& grid, const Extent3& offsets, int direction) {
  if (direction != 1 && direction != -1) throw ContractError("cyclic_shift direction must be +1 or -1");
  if (offsets == Extent3{0, 0, 0}) return grid;
  std::vector<std::ptrdiff_t> shifts(grid.rank(), 0);
  for (std::size_t i = 0; i < 3; ++i) shifts[i + 1] = direction * static_cast<std::ptrdiff_t>(offsets[i]);
  return roll(grid, shifts);
}

Tensor resize_grid(const Tensor& grid, const Extent3& extent) {
  const auto& s = grid.shape();
  if (Extent3{s[1], s[2], s[3]} == extent) return grid;
  const std::size_t b = s[0], c = s[4];
  Shape out{b, extent[0], extent[1], extent[2], c};
  std::vector<std::int64_t> index;
  index.reserve(numel(out));
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t t = 0; t < extent[0]; ++t)
      for (std::size_t h = 0; h < extent[1]; ++h)
        for (std::size_t w = 0; w < extent[2]; ++w) {
          const bool inside = t < s[1] && h < s[2] && w < s[3];
          const std::size_t base = (((n * s[1] + t) * s[2] + h) * s[3] + w) * c;
          for (std::size_t ch = 0; ch < c; ++ch) {
            index.push_back(inside ? static_cast<std::int64_t>(base + ch) : -1);
          }
        }
  return gather(grid, std::move(out), std::move(index));
}

Tensor attention_mask(const Extent3& grid, const Extent3& window, const Extent3& offsets) {
  Extent3 padded{};
  for (std::size_t i = 0; i < 3; ++i) padded[i] = (grid[i] + window[i] - 1) / window[i] * window[i];

  // Label every position of the shifted, padded grid.
  auto region = [&](std::size_t axis, std::size_t p) -> std::size_t {
    const std::size_t P = padded[axis], w = window[axis], s = offsets[axis];
    if (s == 0) return 0;
    if (p < P - w) return 0;
    return p < P - s ? 1 : 2;
  };
  auto is_pad = [&](std::size_t axis, std::size_t p) {
    const std::size_t origin = (p + offsets[axis]) % padded[axis];
    return origin >= grid[axis];
  };
  auto label = [&](std::size_t t, std::size_t h, std::size_t w) {
    const std::size_t r = (region(0, t) * 3 + region(1, h)) * 3 + region(2, w);
    const bool pad = is_pad(0, t) || is_pad(1, h) || is_pad(2, w);
    return r * 2 + (pad ? 1 : 0);
  };

  const std::size_t n = window[0] * window[1] * window[2];
  const std::size_t nt = padded[0] / window[0], nh = padded[1] / window[1], nw = padded[2] / window[2];
  std::vector<double> mask(nt * nh * nw * n * n, 0.0);
  std::vector<std::size_t> labels(n);
  std::size_t win = 0;
  for (std::size_t a = 0; a < nt; ++a)
    for (std::size_t b = 0; b < nh; ++b)
      for (std::size_t c = 0; c < nw; ++c, ++win) {
        std::size_t i = 0;
        for (std::size_t t = 0; t < window[0]; ++t)
          for (std::size_t h = 0; h < window[1]; ++h)
            for (std::size_t w = 0; w < window[2]; ++w) {
              labels[i++] = label(a * window[0] + t, b * window[1] + h, c * window[2] + w);
            }
        double* m = mask.data() + win * n * n;
        for (std::size_t q = 0; q < n; ++q)
          for (std::size_t k = 0; k < n; ++k) {
            if (labels[q] != labels[k]) m[q * n + k] = -std::numeric_limits<double>::infinity();
          }
      }
  return Tensor({nt * nh * nw, n, n}, std::move(mask));
}

std::vector<std::size_t> relative_position_index(const Extent3& window, const Extent3& table_window) {
  const std::size_t n = window[0] * window[1] * window[2];
  const std::size_t sh = 2 * table_window[1] - 1, sw = 2 * table_window[2] - 1;
  std::vector<std::array<std::size_t, 3>> coords;
  coords.reserve(n);
  for (std::size_t t = 0; t < window[0]; ++t)
    for (std::size_t h = 0; h < window[1]; ++h)
      for (std::size_t w = 0; w < window[2]; ++w) coords.push_back({t, h, w});
  std::vector<std::size_t> index(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t dt = coords[i][0] + table_window[0] - 1 - coords[j][0];
      const std::size_t dh = coords[i][1] + table_window[1] - 1 - coords[j][1];
      const std::size_t dw = coords[i][2] + table_window[2] - 1 - coords[j][2];
      index[i * n + j] = (dt * sh + dh) * sw + dw;
    }
  return index;
}

Tensor window_attention(const Tensor& grid, const VstParams& params, const std::string& prefix, const VstConfig& cfg,
                        std::size_t heads, bool shifted) {
  const auto& s = grid.shape();
  const std::size_t batch = s[0], channels = s[4];
  if (channels % heads) throw ContractError("window_attention: heads do not divide channel count");
  const Extent3 extent{s[1], s[2], s[3]};
  const auto plan = plan_windows(extent, cfg.window, shifted);
  const std::size_t n = plan.tokens_per_window();
  const std::size_t nwin = plan.window_count();
  const std::size_t head_dim = channels / heads;

  auto x = resize_grid(grid, plan.padded);
  x = cyclic_shift(x, plan.shift, -1);
  auto windows = window_partition(x, plan.window);
  const std::size_t bw = windows.extent(0);

  auto qkv = linear(windows, params.at(prefix + "qkv.weight"), params.at(prefix + "qkv.bias"));
  qkv = permute(reshape(qkv, {bw, n, 3, heads, head_dim}), {2, 0, 3, 1, 4});
  auto part = [&](std::size_t i) { return reshape(slice(qkv, 0, i, i + 1), {bw, heads, n, head_dim}); };
  auto q = scale(part(0), 1.0 / std::sqrt(static_cast<double>(head_dim)));
  auto k = part(1);
  auto v = part(2);

  auto attn = matmul(q, transpose_last(k));
  if (cfg.use_rel_pos_bias) {
    const auto& table = params.at(prefix + "relative_position_bias_table");
    const auto rel = relative_position_index(plan.window, cfg.window);
    std::vector<std::int64_t> index(heads * n * n);
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t ij = 0; ij < n * n; ++ij) {
        index[h * n * n + ij] = static_cast<std::int64_t>(rel[ij] * heads + h);
      }
    attn = add(attn, gather(table, {heads, n, n}, std::move(index)));
  }
  if (plan.needs_mask(extent)) {
    const auto mask_tensor = attention_mask(extent, plan.window, plan.shift);
    auto mask = mask_tensor.values();
    std::vector<double> expanded(nwin * heads * n * n);
    for (std::size_t w = 0; w < nwin; ++w)
      for (std::size_t h = 0; h < heads; ++h)
        std::copy_n(mask.begin() + static_cast<std::ptrdiff_t>(w * n * n), n * n,
                    expanded.begin() + static_cast<std::ptrdiff_t>((w * heads + h) * n * n));
    attn = reshape(attn, {batch, nwin, heads, n, n});
    attn = add(attn, Tensor({nwin, heads, n, n}, std::move(expanded)));
    attn = reshape(attn, {bw, heads, n, n});
  }
  attn = softmax(attn, -1);

  auto out = matmul(attn, v);
  out = reshape(permute(out, {0, 2, 1, 3}), {bw, n, channels});
  out = linear(out, params.at(prefix + "proj.weight"), params.at(prefix + "proj.bias"));

  auto y = window_reverse(out, batch, plan.padded, plan.window);
  y = cyclic_shift(y, plan.shift, +1);
  return resize_grid(y, extent);
}

namespace {

// Scales each sample's residual branch by 0 or 1/keep.
Tensor drop_path(const Tensor& branch, double rate, const ForwardOptions& opts, std::uint64_t site) {
  if (!opts.training || rate <= 0.0) return branch;
  const std::size_t batch = branch.extent(0);
  const std::size_t per = branch.size() / batch;
  CounterRng rng{opts.seed, site};
  std::vector<double> m(branch.size());
  for (std::size_t b = 0; b < batch; ++b) {
    const double keep = rng.uniform() >= rate ? 1.0 / (1.0 - rate) : 0.0;
    std::fill_n(m.begin() + static_cast<std::ptrdiff_t>(b * per), per, keep);
  }
  return mul(branch, Tensor(branch.shape(), std::move(m)));
}

}  // namespace

TokenGrid wmsa_block(const TokenGrid& grid, const VstParams& params, const std::string& prefix, const VstConfig& cfg,
                     std::size_t heads, bool shifted, double drop_rate, const ForwardOptions& opts) {
  const auto& x = grid.features;
  const double eps = cfg.layer_norm_eps;
  const std::uint64_t site = hash_string(prefix);

  auto h = layer_norm(x, params.at(prefix + "norm1.weight"), params.at(prefix + "norm1.bias"), eps);
  h = window_attention(h, params, prefix + "attn.", cfg, heads, shifted);
  auto z = add(x, drop_path(h, drop_rate, opts, site));

  auto f = layer_norm(z, params.at(prefix + "norm2.weight"), params.at(prefix + "norm2.bias"), eps);
  f = gelu(linear(f, params.at(prefix + "mlp.fc1.weight"), params.at(prefix + "mlp.fc1.bias")));
  f = linear(f, params.at(prefix + "mlp.fc2.weight"), params.at(prefix + "mlp.fc2.bias"));
  return {add(z, drop_path(f, drop_rate, opts, site + 1))};
}

TokenGrid patch_merge(const TokenGrid& grid, const VstParams& params, const std::string& prefix, double eps) {
  const auto& s = grid.features.shape();
  if (s[2] % 2 || s[3] % 2) {
    throw GeometryError("patch_merge needs even spatial extents, got " + to_string(s));
  }
  const std::size_t b = s[0], t = s[1], h = s[2] / 2, w = s[3] / 2, c = s[4];
  // Neighbour order (h0,w0), (h1,w0), (h0,w1), (h1,w1).
  auto x = reshape(grid.features, {b, t, h, 2, w, 2, c});
  x = permute(x, {0, 1, 2, 4, 5, 3, 6});
  x = reshape(x, {b, t, h, w, 4 * c});
  x = layer_norm(x, params.at(prefix + "norm.weight"), params.at(prefix + "norm.bias"), eps);
  return {linear(x, params.at(prefix + "reduction.weight"))};
}

Tensor forward(const Tensor& clips, const VstConfig& cfg, const VstParams& params, const ForwardOptions& opts) {
  const auto& s = clips.shape();
  if (s.size() != 5 || Geometry{s[1], s[2], s[3]} != cfg.geometry || s[4] != 3) {
    throw GeometryError("input " + to_string(s) + " does not match model geometry " + to_string(cfg.geometry));
  }
  auto grid = patch_partition_embed(clips, cfg, params);
  const std::size_t total = cfg.total_blocks();
  std::size_t block_index = 0;
  for (std::size_t stage = 0; stage < kNumStages; ++stage) {
    for (std::size_t b = 0; b < cfg.depths[stage]; ++b, ++block_index) {
      const double rate =
          total > 1 ? cfg.drop_path_rate * static_cast<double>(block_index) / static_cast<double>(total - 1) : 0.0;
      grid = wmsa_block(grid, params, block_prefix(stage, b), cfg, cfg.heads[stage], b % 2 == 1, rate, opts);
    }
    if (stage + 1 < kNumStages) {
      grid = patch_merge(grid, params, "layers." + std::to_string(stage) + ".downsample.", cfg.layer_norm_eps);
    }
  }
  auto x = layer_norm(grid.features, params.at("norm.weight"), params.at("norm.bias"), cfg.layer_norm_eps);
  const std::size_t batch = grid.batch();
  const auto e = grid.extent();
  x = mean_axis(reshape(x, {batch, e[0] * e[1] * e[2], grid.channels()}), 1);
  return linear(x, params.at("head.weight"), params.at("head.bias"));
}

std::vector<double> forward(const VideoClip& clip, const VstConfig& cfg, const VstParams& params) {
  auto logits = forward(stack_clips(std::span<const VideoClip>(&clip, 1)), cfg, params);
  return {logits.values().begin(), logits.values().end()};
}

}  // namespace vst
