#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

#include "vst/model.hpp"

namespace vst {

/// A trained model on disk.
///
/// Layout: "VSTC", u32 header length, header text (one key=value per line:
/// the VstConfig plus free-form metadata such as size and modality), then
/// records of (u32 name length, name, TNSR tensor) until end of file.
/// Parameters are stored as f32.
struct Checkpoint {
  VstConfig config;
  VstParams params;
  std::map<std::string, std::string> meta;
};

std::string encode_config_header(const VstConfig& cfg, const std::map<std::string, std::string>& meta);
/// Inverse of encode_config_header; unknown keys land in `meta`.
VstConfig decode_config_header(const std::string& text, std::map<std::string, std::string>* meta = nullptr);

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& is);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace vst
