#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vst/clip.hpp"
#include "vst/tensor.hpp"

namespace vst {

/// (temporal, height, width) triple used for windows, shifts and grid extents.
using Extent3 = std::array<std::size_t, 3>;

std::string to_string(const Extent3& e);

enum class ModelSize { small, base, large };

std::string_view to_string(ModelSize s);
ModelSize parse_model_size(std::string_view s);

inline constexpr std::size_t kNumStages = 4;
inline constexpr Extent3 kPatch{2, 4, 4};
/// Flattened 2x4x4x3 block length.
inline constexpr std::size_t kPatchFeatures = 2 * 4 * 4 * 3;

struct VstConfig {
  std::size_t embed_dim = 96;
  std::array<std::size_t, kNumStages> depths{2, 2, 18, 2};
  std::array<std::size_t, kNumStages> heads{3, 6, 12, 24};
  Extent3 window{8, 7, 7};
  std::size_t num_classes = 2;
  Geometry geometry{32, 224, 224};
  bool use_rel_pos_bias = true;
  double drop_path_rate = 0.0;
  std::size_t mlp_ratio = 4;
  double layer_norm_eps = 1e-5;

  /// Channel count of stage s (0-based): C * 2^s.
  std::size_t stage_channels(std::size_t stage) const;
  /// Token extents inside stage s: (T/2, H/4/2^s, W/4/2^s).
  Extent3 stage_tokens(std::size_t stage) const;
  std::size_t total_blocks() const;

  /// Throws GeometryError for untileable geometry, ContractError otherwise.
  void validate() const;

  friend bool operator==(const VstConfig&, const VstConfig&) = default;
};

/// Full-width variants: Small C=96, Base C=128, Large C=192, depths {2,2,18,2},
/// heads = stage channels / 32, window (8,7,7).
VstConfig make_config(ModelSize size, std::size_t num_classes, Geometry geometry);

/// Desk-scale variants with the same 3:4:6 width ratio (C = 12, 16, 24),
/// depths {1,1,2,1}, heads = stage channels / 4, window (2,2,2).
VstConfig make_toy_config(ModelSize size, std::size_t num_classes, Geometry geometry);

/// Features laid out [batch, T', H', W', C'].
struct TokenGrid {
  Tensor features;

  std::size_t batch() const { return features.extent(0); }
  Extent3 extent() const { return {features.extent(1), features.extent(2), features.extent(3)}; }
  std::size_t channels() const { return features.extent(4); }
};

/// Named parameter tensors, e.g. "layers.2.blocks.1.attn.qkv.weight".
/// Linear weights are stored [in, out].
class VstParams {
 public:
  using Map = std::map<std::string, Tensor>;

  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return tensors_.contains(name); }
  void set(const std::string& name, Tensor value) { tensors_.insert_or_assign(name, std::move(value)); }

  const Map& tensors() const { return tensors_; }
  Map& tensors() { return tensors_; }
  std::size_t size() const { return tensors_.size(); }
  std::size_t parameter_count() const;

  /// Copies of every tensor as fresh leaves with the given requires_grad.
  VstParams detached(bool requires_grad) const;

 private:
  Map tensors_;
};

/// Name -> shape of every parameter the configuration needs.
std::map<std::string, Shape> parameter_shapes(const VstConfig& cfg);

/// Truncated-normal(0.02) linear weights and bias tables, zero biases, unit LN gains.
VstParams init_params(const VstConfig& cfg, std::uint64_t seed);

struct ForwardOptions {
  bool training = false;  // enables stochastic depth when drop_path_rate > 0
  std::uint64_t seed = 0;
};

/// Window extents and shift actually used on a grid: windows larger than the
/// grid shrink to it and lose their shift; grids are padded up to window multiples.
struct WindowPlan {
  Extent3 window;
  Extent3 shift;
  Extent3 padded;

  bool needs_mask(const Extent3& grid) const;
  std::size_t tokens_per_window() const { return window[0] * window[1] * window[2]; }
  std::size_t window_count() const;
};

WindowPlan plan_windows(const Extent3& grid, const Extent3& window, bool shifted);

/// Stack equal-geometry clips into [B, T, H, W, 3].
Tensor stack_clips(std::span<const VideoClip> clips);

/// [B,T,H,W,3] -> [B, T/2, H/4, W/4, 96]; feature order (dt, dh, dw, channel).
Tensor patch_partition(const Tensor& clips);

/// Patch partition, linear projection to C, then layer norm.
TokenGrid patch_partition_embed(const Tensor& clips, const VstConfig& cfg, const VstParams& params);

/// [B,T,H,W,C] with extents divisible by `window` -> [B * windows, wT*wH*wW, C].
Tensor window_partition(const Tensor& grid, const Extent3& window);
Tensor window_reverse(const Tensor& windows, std::size_t batch, const Extent3& grid, const Extent3& window);

/// Toroidal roll of the token axes by direction * offsets; direction is +1 or -1.
Tensor cyclic_shift(const Tensor& grid, const Extent3& offsets, int direction);

/// Zero-pads or crops the token axes of [B,T,H,W,C] to `extent`.
Tensor resize_grid(const Tensor& grid, const Extent3& extent);

/// Additive mask [windows, N, N] for windows of the padded, shifted grid:
/// 0 where two tokens come from the same pre-shift region (and are both real or
/// both padding), -inf otherwise. `window` and `offsets` are the effective ones
/// from plan_windows.
Tensor attention_mask(const Extent3& grid, const Extent3& window, const Extent3& offsets);

/// Index into the (2wT-1)(2wH-1)(2wW-1) bias table for each token pair of a window.
std::vector<std::size_t> relative_position_index(const Extent3& window, const Extent3& table_window);

/// Multi-head (shifted) window self-attention on an already normalized grid,
/// including padding, cyclic shift and the output projection.
Tensor window_attention(const Tensor& grid, const VstParams& params, const std::string& prefix,
                        const VstConfig& cfg, std::size_t heads, bool shifted);

/// z' = z + MSA(LN(z)); z'' = z' + FFN(LN(z')).
TokenGrid wmsa_block(const TokenGrid& grid, const VstParams& params, const std::string& prefix,
                     const VstConfig& cfg, std::size_t heads, bool shifted, double drop_path = 0.0,
                     const ForwardOptions& opts = {});

/// 2x2 spatial neighbourhood concat (4C), LN, then bias-free linear to 2C.
TokenGrid patch_merge(const TokenGrid& grid, const VstParams& params, const std::string& prefix,
                      double eps = 1e-5);

/// Class scores [B, num_classes].
Tensor forward(const Tensor& clips, const VstConfig& cfg, const VstParams& params, const ForwardOptions& opts = {});
std::vector<double> forward(const VideoClip& clip, const VstConfig& cfg, const VstParams& params);

/// "layers.<stage>.blocks.<block>."
std::string block_prefix(std::size_t stage, std::size_t block);

}  // namespace vst
