#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>

#include "vst/tensor.hpp"

namespace vst {

// Little-endian primitives shared by the TNSR, VSTC and PRED formats.
// Readers throw FormatError on truncation.
void write_u8(std::ostream& os, std::uint8_t v);
void write_u32(std::ostream& os, std::uint32_t v);
void write_i32(std::ostream& os, std::int32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_f32(std::ostream& os, float v);
void write_bytes(std::ostream& os, std::string_view bytes);
/// u32 length followed by the raw bytes.
void write_string(std::ostream& os, std::string_view s);

std::uint8_t read_u8(std::istream& is);
std::uint32_t read_u32(std::istream& is);
std::int32_t read_i32(std::istream& is);
std::uint64_t read_u64(std::istream& is);
float read_f32(std::istream& is);
std::string read_bytes(std::istream& is, std::size_t n);
std::string read_string(std::istream& is, std::size_t max_len = 1u << 20);

/// Throws FormatError unless the next four bytes equal `magic`.
void expect_magic(std::istream& is, std::string_view magic);

/// "TNSR", u32 rank, rank x u64 extents, f32 payload in row-major order.
/// Values are narrowed to f32 on write and widened on read.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

/// Rounds every value through f32, as a save/load cycle would.
Tensor round_to_f32(const Tensor& t);

std::ofstream open_for_write(const std::filesystem::path& path);
std::ifstream open_for_read(const std::filesystem::path& path);

}  // namespace vst
