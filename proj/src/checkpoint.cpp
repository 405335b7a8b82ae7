#include "vst/checkpoint.hpp"

#include <charconv>
#include <istream>
#include <ostream>
#include <sstream>

#include "vst/errors.hpp"
#include "vst/io.hpp"

namespace vst {

namespace {

template <std::size_t N>
std::string join(const std::array<std::size_t, N>& v) {
  std::string s;
  for (std::size_t i = 0; i < N; ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::size_t parse_count(const std::string& key, std::string_view s) {
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) throw FormatError("checkpoint header: bad value for " + key);
  return v;
}

template <std::size_t N>
std::array<std::size_t, N> parse_list(const std::string& key, const std::string& s) {
  std::array<std::size_t, N> out{};
  std::size_t start = 0;
  for (std::size_t i = 0; i < N; ++i) {
    auto end = s.find(',', start);
    if ((end == std::string::npos) != (i + 1 == N)) throw FormatError("checkpoint header: bad list for " + key);
    out[i] = parse_count(key, std::string_view(s).substr(start, end == std::string::npos ? s.npos : end - start));
    start = end + 1;
  }
  return out;
}

}  // namespace

std::string encode_config_header(const VstConfig& cfg, const std::map<std::string, std::string>& meta) {
  std::ostringstream os;
  os << "embed_dim=" << cfg.embed_dim << '\n'
     << "depths=" << join(cfg.depths) << '\n'
     << "heads=" << join(cfg.heads) << '\n'
     << "window=" << join(cfg.window) << '\n'
     << "patch=" << join(kPatch) << '\n'
     << "num_classes=" << cfg.num_classes << '\n'
     << "geometry=" << to_string(cfg.geometry) << '\n'
     << "use_rel_pos_bias=" << (cfg.use_rel_pos_bias ? 1 : 0) << '\n'
     << "drop_path_rate=" << std::hexfloat << cfg.drop_path_rate << '\n'
     << "layer_norm_eps=" << cfg.layer_norm_eps << std::defaultfloat << '\n'
     << "mlp_ratio=" << cfg.mlp_ratio << '\n';
  for (const auto& [k, v] : meta) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw ContractError("checkpoint metadata may not contain '=' in keys or newlines");
    }
    os << k << '=' << v << '\n';
  }
  return os.str();
}

VstConfig decode_config_header(const std::string& text, std::map<std::string, std::string>* meta) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("checkpoint header line without '=': " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto take = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError("checkpoint header missing '" + key + "'");
    auto v = it->second;
    kv.erase(it);
    return v;
  };
  auto parse_real = [](const std::string& key, const std::string& s) {
    try {
      std::size_t used = 0;
      double v = std::stod(s, &used);
      if (used != s.size()) throw FormatError("checkpoint header: bad value for " + key);
      return v;
    } catch (const std::logic_error&) {
      throw FormatError("checkpoint header: bad value for " + key);
    }
  };

  VstConfig cfg;
  cfg.embed_dim = parse_count("embed_dim", take("embed_dim"));
  cfg.depths = parse_list<4>("depths", take("depths"));
  cfg.heads = parse_list<4>("heads", take("heads"));
  cfg.window = parse_list<3>("window", take("window"));
  if (parse_list<3>("patch", take("patch")) != kPatch) throw FormatError("checkpoint patch size must be 2,4,4");
  cfg.num_classes = parse_count("num_classes", take("num_classes"));
  try {
    cfg.geometry = parse_geometry(take("geometry"));
  } catch (const ContractError& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
  cfg.use_rel_pos_bias = parse_count("use_rel_pos_bias", take("use_rel_pos_bias")) != 0;
  cfg.drop_path_rate = parse_real("drop_path_rate", take("drop_path_rate"));
  cfg.layer_norm_eps = parse_real("layer_norm_eps", take("layer_norm_eps"));
  cfg.mlp_ratio = parse_count("mlp_ratio", take("mlp_ratio"));
  if (meta) *meta = std::move(kv);
  return cfg;
}

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt) {
  write_bytes(os, "VSTC");
  write_string(os, encode_config_header(ckpt.config, ckpt.meta));
  for (const auto& [name, t] : ckpt.params.tensors()) {
    write_string(os, name);
    write_tensor(os, t);
  }
}

Checkpoint read_checkpoint(std::istream& is) {
  expect_magic(is, "VSTC");
  Checkpoint ckpt;
  ckpt.config = decode_config_header(read_string(is), &ckpt.meta);
  while (is.peek() != std::char_traits<char>::eof()) {
    auto name = read_string(is, 4096);
    if (ckpt.params.contains(name)) throw FormatError("duplicate parameter '" + name + "' in checkpoint");
    ckpt.params.set(name, read_tensor(is));
  }
  // Shape check against a fresh parameter set for this configuration.
  ckpt.config.validate();
  const auto expected = parameter_shapes(ckpt.config);
  if (expected.size() != ckpt.params.size()) throw FormatError("checkpoint parameter count does not match its config");
  for (const auto& [name, shape] : expected) {
    if (!ckpt.params.contains(name)) throw FormatError("checkpoint is missing parameter '" + name + "'");
    if (ckpt.params.at(name).shape() != shape) throw FormatError("checkpoint parameter '" + name + "' has wrong shape");
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  auto os = open_for_write(path);
  write_checkpoint(os, ckpt);
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto is = open_for_read(path);
  try {
    return read_checkpoint(is);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace vst
