#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>

#include "vst/tensor.hpp"

namespace vst {

enum class Modality { rgb, depth };
enum class View { front, left, right };

std::string_view to_string(Modality m);
std::string_view to_string(View v);
Modality parse_modality(std::string_view s);
View parse_view(std::string_view s);

/// Frames x height x width of a video volume.
struct Geometry {
  std::size_t frames = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  friend bool operator==(const Geometry&, const Geometry&) = default;
};

/// "TxHxW", e.g. "8x32x32".
std::string to_string(const Geometry& g);
Geometry parse_geometry(std::string_view s);

/// A (T, H, W, 3) volume with values in [0, 1]. Depth clips replicate the
/// distance channel three times.
struct VideoClip {
  Tensor volume;
  Modality modality = Modality::rgb;
  View view = View::front;

  Geometry geometry() const;
};

}  // namespace vst
