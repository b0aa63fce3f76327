#include "eloss/elft.hpp"

#include "eloss/errors.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>

namespace eloss {

namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(std::uint8_t((v >> (8 * i)) & 0xff));
  }
}

template <typename T>
T get_le(std::span<const std::uint8_t> bytes, std::size_t& offset, const char* what) {
  if (bytes.size() - offset < sizeof(T)) {
    throw FormatError(std::string("truncated ") + what, bytes.size());
  }
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= T(bytes[offset + i]) << (8 * i);
  offset += sizeof(T);
  return v;
}

}  // namespace

std::vector<std::uint8_t> elft_encode(const Tensor& t) {
  if (t.rank() > 255) throw DimensionError("ELFT supports rank <= 255");
  std::vector<std::uint8_t> out{'E', 'L', 'F', 'T'};
  put_le<std::uint32_t>(out, kElftVersion);
  out.push_back(kElftFloat32);
  out.push_back(std::uint8_t(t.rank()));
  for (auto e : t.shape()) put_le<std::uint64_t>(out, e);
  out.reserve(out.size() + 4 * t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const float f = static_cast<float>(t[i]);
    if (!std::isfinite(f)) {
      throw NonFiniteError("ELFT payload value " + std::to_string(i) +
                           " is not finite in float32");
    }
    put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

Tensor elft_decode(std::span<const std::uint8_t> bytes, std::size_t& offset) {
  const std::size_t start = offset;
  if (bytes.size() - offset < 4) throw FormatError("truncated ELFT magic", bytes.size());
  if (bytes[offset] != 'E' || bytes[offset + 1] != 'L' || bytes[offset + 2] != 'F' ||
      bytes[offset + 3] != 'T') {
    throw FormatError("bad ELFT magic", start);
  }
  offset += 4;
  const auto version = get_le<std::uint32_t>(bytes, offset, "ELFT version");
  if (version != kElftVersion) {
    throw FormatError("unsupported ELFT version " + std::to_string(version), start + 4);
  }
  const auto dtype = get_le<std::uint8_t>(bytes, offset, "ELFT dtype");
  if (dtype != kElftFloat32) {
    throw FormatError("unsupported ELFT dtype " + std::to_string(dtype), start + 8);
  }
  const auto rank = get_le<std::uint8_t>(bytes, offset, "ELFT rank");
  Shape shape;
  std::uint64_t count = 1;
  for (std::uint8_t i = 0; i < rank; ++i) {
    const std::size_t at = offset;
    const auto e = get_le<std::uint64_t>(bytes, offset, "ELFT extents");
    if (e == 0) throw FormatError("zero ELFT extent", at);
    if (count > std::numeric_limits<std::uint64_t>::max() / 4 / e) {
      throw FormatError("ELFT extents overflow", at);
    }
    count *= e;
    shape.push_back(std::size_t(e));
  }
  const std::size_t need = std::size_t(count) * 4;
  const std::size_t have = bytes.size() - offset;
  if (have < need) {
    throw FormatError("truncated ELFT payload: expected " + std::to_string(need) +
                          " bytes, found " + std::to_string(have),
                      bytes.size());
  }
  Eigen::VectorXd data(static_cast<Eigen::Index>(count));
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto bits = get_le<std::uint32_t>(bytes, offset, "ELFT payload");
    data[Eigen::Index(i)] = double(std::bit_cast<float>(bits));
  }
  return Tensor(std::move(shape), std::move(data));
}

namespace {

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spill(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

void elft_write(const Tensor& t, const std::filesystem::path& path) {
  spill(elft_encode(t), path);
}

Tensor elft_read(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  std::size_t offset = 0;
  Tensor t = elft_decode(bytes, offset);
  if (offset != bytes.size()) {
    throw FormatError("trailing bytes after ELFT record", offset);
  }
  return t;
}

void elft_write_all(std::span<const Tensor> tensors, const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  for (const auto& t : tensors) {
    auto rec = elft_encode(t);
    bytes.insert(bytes.end(), rec.begin(), rec.end());
  }
  spill(bytes, path);
}

std::vector<Tensor> elft_read_all(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  std::vector<Tensor> out;
  std::size_t offset = 0;
  while (offset < bytes.size()) out.push_back(elft_decode(bytes, offset));
  return out;
}

Tensor round_to_float32(const Tensor& t) {
  Eigen::VectorXd d = t.data().cast<float>().cast<double>();
  return Tensor(t.shape(), std::move(d));
}

}  // namespace eloss
