#include "vst/clip.hpp"

#include <charconv>

#include "vst/errors.hpp"

namespace vst {

std::string_view to_string(Modality m) { return m == Modality::rgb ? "rgb" : "depth"; }

std::string_view to_string(View v) {
  switch (v) {
    case View::front: return "front";
    case View::left: return "left";
    case View::right: return "right";
  }
  return "?";
}

Modality parse_modality(std::string_view s) {
  if (s == "rgb") return Modality::rgb;
  if (s == "depth") return Modality::depth;
  throw ContractError("unknown modality '" + std::string(s) + "'");
}

View parse_view(std::string_view s) {
  if (s == "front") return View::front;
  if (s == "left") return View::left;
  if (s == "right") return View::right;
  throw ContractError("unknown view '" + std::string(s) + "'");
}

std::string to_string(const Geometry& g) {
  return std::to_string(g.frames) + "x" + std::to_string(g.height) + "x" + std::to_string(g.width);
}

Geometry parse_geometry(std::string_view s) {
  std::array<std::size_t, 3> v{};
  std::size_t part = 0;
  const char* p = s.data();
  const char* end = s.data() + s.size();
  while (part < 3) {
    auto [next, ec] = std::from_chars(p, end, v[part]);
    if (ec != std::errc{} || v[part] == 0) break;
    ++part;
    p = next;
    if (part < 3) {
      if (p == end || *p != 'x') break;
      ++p;
    }
  }
  if (part != 3 || p != end) throw ContractError("geometry must look like TxHxW, got '" + std::string(s) + "'");
  return {v[0], v[1], v[2]};
}

Geometry VideoClip::geometry() const {
  const auto& s = volume.shape();
  if (s.size() != 4 || s[3] != 3) throw GeometryError("clip volume must be (T,H,W,3), got " + vst::to_string(s));
  return {s[0], s[1], s[2]};
}

}  // namespace vst
