#pragma once

#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <type_traits>
#include <vector>

#include "u3d/errors.hpp"
#include "u3d/tensor.hpp"

namespace u3d {

namespace io {

using Bytes = std::vector<std::uint8_t>;

inline Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for " + path.string());
  return bytes;
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

inline bool is_gzip(std::span<const std::uint8_t> bytes) {
  return bytes.size() >= 2 && bytes[0] == 0x1F && bytes[1] == 0x8B;
}

inline Bytes gunzip(std::span<const std::uint8_t> bytes) {
  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) throw FormatError("zlib init failed");
  zs.next_in = const_cast<Bytef*>(bytes.data());
  zs.avail_in = static_cast<uInt>(bytes.size());
  Bytes out;
  std::array<std::uint8_t, 1 << 16> chunk{};
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = chunk.data();
    zs.avail_out = static_cast<uInt>(chunk.size());
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw FormatError("corrupt gzip stream");
    }
    out.insert(out.end(), chunk.data(), chunk.data() + (chunk.size() - zs.avail_out));
    if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
      inflateEnd(&zs);
      throw TruncationError("gzip stream ended early");
    }
  }
  inflateEnd(&zs);
  return out;
}

/// Little/big-endian scalar load and store on raw bytes.
template <typename T>
T load(const std::uint8_t* p, bool swap) {
  std::array<std::uint8_t, sizeof(T)> raw;
  std::memcpy(raw.data(), p, sizeof(T));
  const bool host_le = std::endian::native == std::endian::little;
  // Data is little-endian unless `swap`; reverse when that differs from host order.
  if (swap == host_le) std::reverse(raw.begin(), raw.end());
  return std::bit_cast<T>(raw);
}

template <typename T>
void store_le(std::uint8_t* p, T value) {
  auto raw = std::bit_cast<std::array<std::uint8_t, sizeof(T)>>(value);
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
  std::memcpy(p, raw.data(), sizeof(T));
}

template <typename T>
void append_le(Bytes& out, T value) {
  const auto at = out.size();
  out.resize(at + sizeof(T));
  store_le(out.data() + at, value);
}

}  // namespace io

// ---------------------------------------------------------------------------
// NIfTI-1 (single file, "n+1")

enum class NiftiType : std::int16_t {
  UInt8 = 2,
  Int16 = 4,
  Int32 = 8,
  Float32 = 16,
  Float64 = 64,
};

inline int nifti_bitpix(NiftiType t) {
  switch (t) {
    case NiftiType::UInt8: return 8;
    case NiftiType::Int16: return 16;
    case NiftiType::Int32: return 32;
    case NiftiType::Float32: return 32;
    case NiftiType::Float64: return 64;
  }
  throw UnsupportedDatatype("unsupported NIfTI datatype");
}

inline bool nifti_type_supported(std::int16_t code) {
  switch (code) {
    case 2: case 4: case 8: case 16: case 64: return true;
    default: return false;
  }
}

/// The header fields the reader consumes. Offsets follow the NIfTI-1 layout.
struct Nifti1Header {
  static constexpr std::int32_t kSize = 348;
  static constexpr std::int32_t kSwappedSize = 1543569408;  // 348 byte-swapped

  struct Offsets {
    static constexpr std::size_t sizeof_hdr = 0;
    static constexpr std::size_t dim = 40;
    static constexpr std::size_t datatype = 70;
    static constexpr std::size_t bitpix = 72;
    static constexpr std::size_t pixdim = 76;
    static constexpr std::size_t vox_offset = 108;
    static constexpr std::size_t scl_slope = 112;
    static constexpr std::size_t scl_inter = 116;
    static constexpr std::size_t magic = 344;
  };

  std::int32_t sizeof_hdr = kSize;
  std::array<std::int16_t, 8> dim{};
  std::int16_t datatype = 0;
  std::int16_t bitpix = 0;
  float scl_slope = 0.0f;
  float scl_inter = 0.0f;
  float vox_offset = 352.0f;
  std::array<char, 4> magic{'n', '+', '1', '\0'};
  bool byte_swapped = false;
};

/// Parses and validates the header. Throws FormatError / UnsupportedRank /
/// UnsupportedDatatype.
inline Nifti1Header parse_nifti_header(std::span<const std::uint8_t> bytes) {
  using O = Nifti1Header::Offsets;
  if (bytes.size() < static_cast<std::size_t>(Nifti1Header::kSize)) {
    throw FormatError("file shorter than a NIfTI-1 header");
  }
  Nifti1Header h;
  const auto raw_size = io::load<std::int32_t>(bytes.data(), false);
  if (raw_size == Nifti1Header::kSize) {
    h.byte_swapped = false;
  } else if (raw_size == Nifti1Header::kSwappedSize) {
    h.byte_swapped = true;
  } else {
    throw FormatError("sizeof_hdr is " + std::to_string(raw_size) + ", not 348");
  }
  const bool sw = h.byte_swapped;
  std::memcpy(h.magic.data(), bytes.data() + O::magic, 4);
  if (std::memcmp(h.magic.data(), "n+1\0", 4) != 0) {
    throw FormatError("NIfTI magic is not \"n+1\" (paired .hdr/.img files are not supported)");
  }
  for (std::size_t i = 0; i < 8; ++i) h.dim[i] = io::load<std::int16_t>(bytes.data() + O::dim + 2 * i, sw);
  h.datatype = io::load<std::int16_t>(bytes.data() + O::datatype, sw);
  h.bitpix = io::load<std::int16_t>(bytes.data() + O::bitpix, sw);
  h.vox_offset = io::load<float>(bytes.data() + O::vox_offset, sw);
  h.scl_slope = io::load<float>(bytes.data() + O::scl_slope, sw);
  h.scl_inter = io::load<float>(bytes.data() + O::scl_inter, sw);

  if (h.dim[0] < 1 || h.dim[0] > 7) throw FormatError("dim[0] must be in [1,7]");
  if (h.dim[0] != 3) throw UnsupportedRank("only rank-3 volumes are supported, dim[0]=" + std::to_string(h.dim[0]));
  for (int i = 1; i <= 3; ++i) {
    if (h.dim[i] < 1) throw FormatError("non-positive extent in dim[" + std::to_string(i) + "]");
  }
  if (!nifti_type_supported(h.datatype)) {
    throw UnsupportedDatatype("NIfTI datatype code " + std::to_string(h.datatype) + " is not supported");
  }
  return h;
}

namespace detail {
template <typename Raw>
void decode_nifti_payload(const std::uint8_t* src, bool swap, std::size_t count, std::vector<double>& out) {
  out.resize(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = static_cast<double>(io::load<Raw>(src + i * sizeof(Raw), swap));
}
}  // namespace detail

/// Decodes an in-memory (already decompressed) NIfTI-1 image.
inline Volume decode_nifti(std::span<const std::uint8_t> bytes, std::string source_id = {}) {
  const Nifti1Header h = parse_nifti_header(bytes);
  const auto w = static_cast<std::size_t>(h.dim[1]);
  const auto ht = static_cast<std::size_t>(h.dim[2]);
  const auto d = static_cast<std::size_t>(h.dim[3]);
  const std::size_t count = w * ht * d;
  const auto type = static_cast<NiftiType>(h.datatype);
  const std::size_t elem = static_cast<std::size_t>(nifti_bitpix(type)) / 8;
  if (!(h.vox_offset >= 0.0f)) throw FormatError("negative vox_offset");
  const auto offset = static_cast<std::size_t>(h.vox_offset);
  if (bytes.size() < offset || bytes.size() - offset < count * elem) {
    throw TruncationError("NIfTI payload truncated: need " + std::to_string(count * elem) + " bytes");
  }
  const std::uint8_t* src = bytes.data() + offset;
  std::vector<double> raw;
  switch (type) {
    case NiftiType::UInt8: detail::decode_nifti_payload<std::uint8_t>(src, h.byte_swapped, count, raw); break;
    case NiftiType::Int16: detail::decode_nifti_payload<std::int16_t>(src, h.byte_swapped, count, raw); break;
    case NiftiType::Int32: detail::decode_nifti_payload<std::int32_t>(src, h.byte_swapped, count, raw); break;
    case NiftiType::Float32: detail::decode_nifti_payload<float>(src, h.byte_swapped, count, raw); break;
    case NiftiType::Float64: detail::decode_nifti_payload<double>(src, h.byte_swapped, count, raw); break;
  }
  // The identity scaling is skipped so that -0.0 survives a round trip.
  const bool scaled = h.scl_slope != 0.0f && !(h.scl_slope == 1.0f && h.scl_inter == 0.0f);
  const double slope = h.scl_slope, inter = h.scl_inter;
  // NIfTI stores x fastest; the volume tensor stores z fastest.
  TensorF t({w, ht, d});
  auto dst = t.data();
  for (std::size_t z = 0; z < d; ++z) {
    for (std::size_t y = 0; y < ht; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double v = raw[(z * ht + y) * w + x];
        dst[(x * ht + y) * d + z] = static_cast<float>(scaled ? v * slope + inter : v);
      }
    }
  }
  return Volume(std::move(t), VoxelUnits::HounsfieldUnits, std::move(source_id));
}

/// Reads a single-file NIfTI-1 volume, gzip-compressed or plain.
inline Volume read_nifti(const std::filesystem::path& path) {
  io::Bytes bytes = io::read_file(path);
  if (io::is_gzip(bytes)) bytes = io::gunzip(bytes);
  return decode_nifti(bytes, path.stem().string());
}

namespace detail {
template <typename Raw>
void encode_nifti_payload(const Volume& vol, std::uint8_t* dst, double slope, double inter) {
  const std::size_t w = vol.width(), h = vol.height(), d = vol.depth();
  const bool scaled = slope != 0.0 && !(slope == 1.0 && inter == 0.0);
  std::size_t i = 0;
  for (std::size_t z = 0; z < d; ++z) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x, ++i) {
        double v = vol(x, y, z);
        if (scaled) v = (v - inter) / slope;
        Raw r;
        if constexpr (std::is_integral_v<Raw>) {
          v = std::nearbyint(v);
          v = std::clamp(v, static_cast<double>(std::numeric_limits<Raw>::lowest()),
                         static_cast<double>(std::numeric_limits<Raw>::max()));
          r = static_cast<Raw>(v);
        } else if constexpr (std::is_same_v<Raw, float>) {
          r = scaled ? static_cast<float>(v) : vol(x, y, z);
        } else {
          r = static_cast<Raw>(v);
        }
        io::store_le(dst + i * sizeof(Raw), r);
      }
    }
  }
}
}  // namespace detail

/// Encodes a little-endian single-file NIfTI-1 image (header, 4 pad bytes,
/// payload at offset 352). Intended for fixtures, not general export.
inline io::Bytes encode_nifti(const Volume& vol, NiftiType type, float scl_slope = 1.0f, float scl_inter = 0.0f) {
  using O = Nifti1Header::Offsets;
  if (!nifti_type_supported(static_cast<std::int16_t>(type))) throw UnsupportedDatatype("unsupported datatype");
  for (std::size_t e : vol.tensor.shape()) {
    if (e > static_cast<std::size_t>(std::numeric_limits<std::int16_t>::max())) {
      throw ShapeError("extent does not fit a NIfTI-1 dim field");
    }
  }
  const std::size_t elem = static_cast<std::size_t>(nifti_bitpix(type)) / 8;
  io::Bytes out(352 + vol.tensor.size() * elem, 0);
  io::store_le<std::int32_t>(out.data() + O::sizeof_hdr, Nifti1Header::kSize);
  const std::array<std::int16_t, 8> dim{3,
                                        static_cast<std::int16_t>(vol.width()),
                                        static_cast<std::int16_t>(vol.height()),
                                        static_cast<std::int16_t>(vol.depth()),
                                        1, 1, 1, 1};
  for (std::size_t i = 0; i < 8; ++i) io::store_le(out.data() + O::dim + 2 * i, dim[i]);
  io::store_le(out.data() + O::datatype, static_cast<std::int16_t>(type));
  io::store_le(out.data() + O::bitpix, static_cast<std::int16_t>(nifti_bitpix(type)));
  for (std::size_t i = 0; i < 8; ++i) io::store_le(out.data() + O::pixdim + 4 * i, 1.0f);
  io::store_le(out.data() + O::vox_offset, 352.0f);
  io::store_le(out.data() + O::scl_slope, scl_slope);
  io::store_le(out.data() + O::scl_inter, scl_inter);
  std::memcpy(out.data() + O::magic, "n+1\0", 4);
  std::uint8_t* payload = out.data() + 352;
  switch (type) {
    case NiftiType::UInt8: detail::encode_nifti_payload<std::uint8_t>(vol, payload, scl_slope, scl_inter); break;
    case NiftiType::Int16: detail::encode_nifti_payload<std::int16_t>(vol, payload, scl_slope, scl_inter); break;
    case NiftiType::Int32: detail::encode_nifti_payload<std::int32_t>(vol, payload, scl_slope, scl_inter); break;
    case NiftiType::Float32: detail::encode_nifti_payload<float>(vol, payload, scl_slope, scl_inter); break;
    case NiftiType::Float64: detail::encode_nifti_payload<double>(vol, payload, scl_slope, scl_inter); break;
  }
  return out;
}

inline void write_nifti_fixture(const Volume& vol, const std::filesystem::path& path, NiftiType type,
                                float scl_slope = 1.0f, float scl_inter = 0.0f) {
  io::write_file(path, encode_nifti(vol, type, scl_slope, scl_inter));
}

// ---------------------------------------------------------------------------
// VOL1: "VOL1" | u8 version=1 | u16 0x0102 (LE) | u8 ndim | ndim x u32 LE | f32 LE payload

namespace vol1 {
inline constexpr std::array<char, 4> kMagic{'V', 'O', 'L', '1'};
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::uint16_t kEndianMarker = 0x0102;
}  // namespace vol1

inline io::Bytes encode_vol1(std::span<const std::size_t> shape, std::span<const float> data) {
  if (shape.empty() || shape.size() > 255) throw ShapeError("VOL1 rank must be in [1,255]");
  for (auto e : shape) {
    if (e == 0) throw ShapeError("VOL1 extents must be positive, got " + shape_string(shape));
    if (e > std::numeric_limits<std::uint32_t>::max()) throw ShapeError("VOL1 extent exceeds u32");
  }
  if (shape_product(shape) != data.size()) throw ShapeError("VOL1 payload length does not match extents");
  io::Bytes out;
  out.reserve(8 + 4 * shape.size() + 4 * data.size());
  out.insert(out.end(), vol1::kMagic.begin(), vol1::kMagic.end());
  out.push_back(vol1::kVersion);
  io::append_le(out, vol1::kEndianMarker);
  out.push_back(static_cast<std::uint8_t>(shape.size()));
  for (auto e : shape) io::append_le(out, static_cast<std::uint32_t>(e));
  for (float v : data) io::append_le(out, v);
  return out;
}

inline io::Bytes encode_vol1(const TensorF& t) { return encode_vol1(t.shape(), t.data()); }

/// Decodes one VOL1 record starting at `bytes[0]`; `consumed` receives its length.
inline TensorF decode_vol1(std::span<const std::uint8_t> bytes, std::size_t* consumed = nullptr) {
  if (bytes.size() < 8) throw TruncationError("VOL1 header truncated");
  if (std::memcmp(bytes.data(), vol1::kMagic.data(), 4) != 0) throw FormatError("VOL1 magic mismatch");
  if (bytes[4] != vol1::kVersion) throw FormatError("unsupported VOL1 version " + std::to_string(bytes[4]));
  if (io::load<std::uint16_t>(bytes.data() + 5, false) != vol1::kEndianMarker) {
    throw FormatError("VOL1 endianness marker mismatch");
  }
  const std::size_t ndim = bytes[7];
  if (ndim == 0) throw ShapeError("VOL1 rank 0");
  if (bytes.size() < 8 + 4 * ndim) throw TruncationError("VOL1 extents truncated");
  Shape shape(ndim);
  for (std::size_t i = 0; i < ndim; ++i) {
    shape[i] = io::load<std::uint32_t>(bytes.data() + 8 + 4 * i, false);
    if (shape[i] == 0) throw ShapeError("VOL1 extents must be positive");
  }
  const std::size_t count = shape_product(shape);
  const std::size_t header = 8 + 4 * ndim;
  if ((bytes.size() - header) / 4 < count) throw TruncationError("VOL1 payload truncated");
  std::vector<float> data(count);
  for (std::size_t i = 0; i < count; ++i) data[i] = io::load<float>(bytes.data() + header + 4 * i, false);
  if (consumed) *consumed = header + 4 * count;
  return TensorF(std::move(shape), std::move(data));
}

inline void write_vol1(const std::filesystem::path& path, const TensorF& t) { io::write_file(path, encode_vol1(t)); }

inline TensorF read_vol1(const std::filesystem::path& path) {
  const io::Bytes bytes = io::read_file(path);
  return decode_vol1(bytes);
}

}  // namespace u3d
