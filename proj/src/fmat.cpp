#include "feataug/fmat.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace feataug::fmat {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[at + i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode(std::span<const std::uint32_t> dims, std::span<const float> data) {
  if (dims.size() > 255) throw InvalidArgument("FMAT supports at most 255 dimensions");
  std::uint64_t count = 1;
  for (std::uint32_t d : dims) count *= d;
  if (count != data.size()) throw ShapeError("FMAT dims do not match payload length");

  std::vector<std::uint8_t> out;
  out.reserve(10 + 4 * dims.size() + 4 * data.size());
  for (char c : {'F', 'M', 'A', 'T'}) out.push_back(static_cast<std::uint8_t>(c));
  put_u32(out, kVersion);
  out.push_back(kFloat32);
  out.push_back(static_cast<std::uint8_t>(dims.size()));
  for (std::uint32_t d : dims) put_u32(out, d);
  for (float f : data) put_u32(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

Array decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 10) throw FormatError("FMAT: truncated header");
  if (std::memcmp(bytes.data(), "FMAT", 4) != 0) throw FormatError("FMAT: bad magic");
  if (get_u32(bytes, 4) != kVersion) throw FormatError("FMAT: unsupported version");
  if (bytes[8] != kFloat32) throw FormatError("FMAT: unsupported dtype");
  const std::size_t ndim = bytes[9];
  std::size_t pos = 10;
  if (bytes.size() < pos + 4 * ndim) throw FormatError("FMAT: truncated dims");

  Array a;
  std::uint64_t count = 1;
  for (std::size_t i = 0; i < ndim; ++i, pos += 4) {
    a.dims.push_back(get_u32(bytes, pos));
    count *= a.dims.back();
  }
  const std::size_t payload = bytes.size() - pos;
  if (payload % 4 != 0 || payload / 4 != count)
    throw FormatError("FMAT: declared dims imply " + std::to_string(count) + " floats but payload holds " +
                      std::to_string(payload / 4) + (payload % 4 ? " and a partial value" : ""));
  a.data.resize(count);
  for (std::size_t i = 0; i < count; ++i, pos += 4) a.data[i] = std::bit_cast<float>(get_u32(bytes, pos));
  return a;
}

void write_array(const std::filesystem::path& path, std::span<const std::uint32_t> dims,
                 std::span<const float> data) {
  const auto bytes = encode(dims, data);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

Array read_array(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open FMAT file: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return decode(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_tensor(const std::filesystem::path& path, const Tensor4& t) {
  const Dims4& d = t.dims();
  const std::uint32_t dims[4] = {static_cast<std::uint32_t>(d.b), static_cast<std::uint32_t>(d.c),
                                 static_cast<std::uint32_t>(d.h), static_cast<std::uint32_t>(d.w)};
  write_array(path, dims, t.data());
}

Tensor4 to_tensor(Array a) {
  if (a.dims.size() != 4) throw FormatError("FMAT: expected a rank-4 tensor");
  for (std::uint32_t d : a.dims)
    if (d == 0) throw FormatError("FMAT: zero dimension");
  return Tensor4({a.dims[0], a.dims[1], a.dims[2], a.dims[3]}, std::move(a.data));
}

Tensor4 read_tensor(const std::filesystem::path& path) {
  return to_tensor(read_array(path));
}

}  // namespace feataug::fmat
