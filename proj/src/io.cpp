#include "vst/io.hpp"

#include <array>
#include <bit>
#include <fstream>
#include <istream>
#include <ostream>

#include "vst/errors.hpp"

namespace vst {

namespace {

template <typename U>
void put_le(std::ostream& os, U v) {
  std::array<char, sizeof(U)> buf{};
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(buf.data(), buf.size());
}

template <typename U>
U get_le(std::istream& is) {
  std::array<unsigned char, sizeof(U)> buf{};
  is.read(reinterpret_cast<char*>(buf.data()), buf.size());
  if (is.gcount() != static_cast<std::streamsize>(buf.size())) throw FormatError("unexpected end of file");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

constexpr std::uint32_t kMaxRank = 16;

}  // namespace

void write_u8(std::ostream& os, std::uint8_t v) { put_le(os, v); }
void write_u32(std::ostream& os, std::uint32_t v) { put_le(os, v); }
void write_i32(std::ostream& os, std::int32_t v) { put_le(os, static_cast<std::uint32_t>(v)); }
void write_u64(std::ostream& os, std::uint64_t v) { put_le(os, v); }
void write_f32(std::ostream& os, float v) { put_le(os, std::bit_cast<std::uint32_t>(v)); }
void write_bytes(std::ostream& os, std::string_view bytes) {
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}
void write_string(std::ostream& os, std::string_view s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  write_bytes(os, s);
}

std::uint8_t read_u8(std::istream& is) { return get_le<std::uint8_t>(is); }
std::uint32_t read_u32(std::istream& is) { return get_le<std::uint32_t>(is); }
std::int32_t read_i32(std::istream& is) { return static_cast<std::int32_t>(get_le<std::uint32_t>(is)); }
std::uint64_t read_u64(std::istream& is) { return get_le<std::uint64_t>(is); }
float read_f32(std::istream& is) { return std::bit_cast<float>(get_le<std::uint32_t>(is)); }

std::string read_bytes(std::istream& is, std::size_t n) {
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (is.gcount() != static_cast<std::streamsize>(n)) throw FormatError("unexpected end of file");
  return s;
}

std::string read_string(std::istream& is, std::size_t max_len) {
  auto n = read_u32(is);
  if (n > max_len) throw FormatError("string length " + std::to_string(n) + " exceeds limit");
  return read_bytes(is, n);
}

void expect_magic(std::istream& is, std::string_view magic) {
  std::string got;
  try {
    got = read_bytes(is, magic.size());
  } catch (const FormatError&) {
    throw FormatError("missing '" + std::string(magic) + "' magic");
  }
  if (got != magic) throw FormatError("bad magic: expected '" + std::string(magic) + "'");
}

void write_tensor(std::ostream& os, const Tensor& t) {
  write_bytes(os, "TNSR");
  write_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) write_u64(os, e);
  for (double v : t.values()) write_f32(os, static_cast<float>(v));
}

Tensor read_tensor(std::istream& is) {
  expect_magic(is, "TNSR");
  const auto rank = read_u32(is);
  if (rank == 0 || rank > kMaxRank) throw FormatError("tensor rank " + std::to_string(rank) + " out of range");
  Shape shape(rank);
  std::uint64_t count = 1;
  for (auto& e : shape) {
    auto v = read_u64(is);
    if (v == 0) throw FormatError("tensor has a zero-length extent");
    if (v > (1ull << 40) || count * v > (1ull << 40)) throw FormatError("tensor extents implausibly large");
    e = static_cast<std::size_t>(v);
    count *= v;
  }
  std::vector<double> values(count);
  for (auto& v : values) v = static_cast<double>(read_f32(is));
  return Tensor(std::move(shape), std::move(values));
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  return os;
}

std::ifstream open_for_read(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path.string() + "' for reading");
  return is;
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  auto os = open_for_write(path);
  write_tensor(os, t);
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

Tensor load_tensor(const std::filesystem::path& path) {
  auto is = open_for_read(path);
  try {
    return read_tensor(is);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Tensor round_to_f32(const Tensor& t) {
  std::vector<double> v(t.values().begin(), t.values().end());
  for (auto& x : v) x = static_cast<double>(static_cast<float>(x));
  return Tensor(t.shape(), std::move(v));
}

}  // namespace vst
