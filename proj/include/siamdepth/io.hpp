#pragma once

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include "siamdepth/autodiff.hpp"
#include "siamdepth/training.hpp"

namespace siamdepth {

namespace detail {

template <typename U>
void put_le(std::string& out, U v) {
  static_assert(std::is_unsigned_v<U>);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <typename U>
U get_le(const unsigned char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

template <typename U>
U get_be(const unsigned char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v = static_cast<U>((v << 8) | p[i]);
  return v;
}

template <typename T>
using bits_t = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;

/// Sequential reader over a byte buffer; running off the end is a DataError.
class ByteReader {
 public:
  ByteReader(std::string_view bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  const unsigned char* take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw DataError(what_ + ": truncated data");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes_.data() + pos_);
    pos_ += n;
    return p;
  }
  template <typename U>
  U le() {
    return get_le<U>(take(sizeof(U)));
  }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }
  std::string_view rest() const { return bytes_.substr(pos_); }

 private:
  std::string_view bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

/// Next whitespace-delimited header token; '#' starts a comment to end of line.
inline std::string_view header_token(ByteReader& r, bool comments) {
  std::string_view rest = r.rest();
  std::size_t i = 0;
  while (i < rest.size()) {
    const char c = rest[i];
    if (comments && c == '#') {
      while (i < rest.size() && rest[i] != '\n') ++i;
    } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      ++i;
    } else {
      break;
    }
  }
  std::size_t j = i;
  while (j < rest.size() && !std::isspace(static_cast<unsigned char>(rest[j]))) ++j;
  if (j == i) throw DataError("image header: unexpected end of header");
  r.take(j);
  return rest.substr(i, j - i);
}

inline int parse_dim(std::string_view tok, const char* what) {
  int v = 0;
  const auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || p != tok.data() + tok.size() || v <= 0) {
    throw DataError(std::string(what) + ": bad header value '" + std::string(tok) + "'");
  }
  return v;
}

/// Consumes the single whitespace byte that ends a binary image header.
inline void header_end(ByteReader& r, const char* what) {
  const char c = static_cast<char>(*r.take(1));
  if (!std::isspace(static_cast<unsigned char>(c))) throw DataError(std::string(what) + ": malformed header");
}

}  // namespace detail

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  if (in.bad()) throw DataError("cannot read " + path.string());
  return std::move(os).str();
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("cannot write " + path.string());
}

// ---------------------------------------------------------------------------
// PFM: "Pf\n{W} {H}\n-1.0\n", rows bottom to top, little-endian float32.

template <typename T>
std::string encode_pfm(const Tensor<T>& map) {
  const Shape& s = map.shape();
  if (s.n != 1 || s.c != 1) throw ShapeError("encode_pfm: expected a [1,1,H,W] map, got " + s.str());
  std::string out = "Pf\n" + std::to_string(s.w) + " " + std::to_string(s.h) + "\n-1.0\n";
  out.reserve(out.size() + 4 * s.numel());
  for (int y = s.h - 1; y >= 0; --y) {
    const T* row = map.row(0, 0, y);
    for (int x = 0; x < s.w; ++x) detail::put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(row[x])));
  }
  return out;
}

/// Accepts either byte order; the sign of the scale field selects it.
inline Tensor<float> decode_pfm(std::string_view bytes) {
  detail::ByteReader r(bytes, "PFM");
  const std::string_view magic = detail::header_token(r, false);
  if (magic == "PF") throw DataError("PFM: three-channel files are not supported");
  if (magic != "Pf") throw DataError("PFM: bad magic '" + std::string(magic) + "'");
  const int w = detail::parse_dim(detail::header_token(r, false), "PFM");
  const int h = detail::parse_dim(detail::header_token(r, false), "PFM");
  const std::string scale_tok(detail::header_token(r, false));
  char* end = nullptr;
  const double scale = std::strtod(scale_tok.c_str(), &end);
  if (end != scale_tok.c_str() + scale_tok.size() || scale == 0 || !std::isfinite(scale)) {
    throw DataError("PFM: bad scale '" + scale_tok + "'");
  }
  detail::header_end(r, "PFM");
  const bool little = scale < 0;
  const std::size_t n = static_cast<std::size_t>(w) * h;
  if (r.rest().size() < 4 * n) throw DataError("PFM: truncated payload");
  if (r.rest().size() > 4 * n) throw DataError("PFM: trailing bytes after payload");
  Tensor<float> out(Shape{1, 1, h, w});
  for (int y = h - 1; y >= 0; --y) {
    float* row = out.row(0, 0, y);
    for (int x = 0; x < w; ++x) {
      const unsigned char* p = r.take(4);
      row[x] = std::bit_cast<float>(little ? detail::get_le<std::uint32_t>(p) : detail::get_be<std::uint32_t>(p));
    }
  }
  return out;
}

template <typename T>
void write_pfm(const std::filesystem::path& path, const Tensor<T>& map) {
  write_file(path, encode_pfm(map));
}

template <typename T = float>
Tensor<T> read_pfm(const std::filesystem::path& path) {
  try {
    return decode_pfm(read_file(path)).template cast<T>();
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// PPM: binary P6, maxval 255. Values in [0,1] are rounded to the nearest level.

template <typename T>
std::string encode_ppm(const Tensor<T>& image) {
  const Shape& s = image.shape();
  if (s.n != 1 || s.c != 3) throw ShapeError("encode_ppm: expected a [1,3,H,W] image, got " + s.str());
  std::string out = "P6\n" + std::to_string(s.w) + " " + std::to_string(s.h) + "\n255\n";
  out.reserve(out.size() + 3 * static_cast<std::size_t>(s.plane()));
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = static_cast<double>(image(0, c, y, x));
        if (!std::isfinite(v)) throw NumericError("encode_ppm: non-finite pixel");
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
      }
  return out;
}

template <typename T = float>
Tensor<T> decode_ppm(std::string_view bytes) {
  detail::ByteReader r(bytes, "PPM");
  if (detail::header_token(r, true) != "P6") throw DataError("PPM: only binary P6 files are supported");
  const int w = detail::parse_dim(detail::header_token(r, true), "PPM");
  const int h = detail::parse_dim(detail::header_token(r, true), "PPM");
  if (detail::parse_dim(detail::header_token(r, true), "PPM") != 255) throw DataError("PPM: maxval must be 255");
  detail::header_end(r, "PPM");
  const std::size_t n = 3 * static_cast<std::size_t>(w) * h;
  if (r.rest().size() != n) throw DataError("PPM: payload size does not match the header");
  const unsigned char* p = r.take(n);
  Tensor<T> out(Shape{1, 3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) out(0, c, y, x) = static_cast<T>(*p++ / 255.0);
  return out;
}

template <typename T>
void write_ppm(const std::filesystem::path& path, const Tensor<T>& image) {
  write_file(path, encode_ppm(image));
}

template <typename T = float>
Tensor<T> read_ppm(const std::filesystem::path& path) {
  try {
    return decode_ppm<T>(read_file(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Checkpoint container: "SMCK1", u8 bytes per value (4 or 8), u32 record
// count, then per record: u32 name length, name, 4 x i32 shape, raw values.
// Everything little-endian.

inline constexpr std::string_view kCheckpointMagic = "SMCK1";

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> value;
};

template <typename T>
std::string encode_checkpoint(const std::vector<NamedTensor<T>>& records) {
  static_assert(sizeof(T) == 4 || sizeof(T) == 8);
  std::string out(kCheckpointMagic);
  out.push_back(static_cast<char>(sizeof(T)));
  detail::put_le(out, static_cast<std::uint32_t>(records.size()));
  for (const auto& rec : records) {
    detail::put_le(out, static_cast<std::uint32_t>(rec.name.size()));
    out += rec.name;
    const Shape& s = rec.value.shape();
    for (int d : {s.n, s.c, s.h, s.w}) detail::put_le(out, static_cast<std::uint32_t>(d));
    for (T v : rec.value.storage()) detail::put_le(out, std::bit_cast<detail::bits_t<T>>(v));
  }
  return out;
}

template <typename T>
std::vector<NamedTensor<T>> decode_checkpoint(std::string_view bytes) {
  detail::ByteReader r(bytes, "checkpoint");
  if (std::string_view(reinterpret_cast<const char*>(r.take(kCheckpointMagic.size())), kCheckpointMagic.size()) !=
      kCheckpointMagic) {
    throw DataError("checkpoint: bad magic");
  }
  const unsigned width = *r.take(1);
  if (width != sizeof(T)) {
    throw DataError("checkpoint: stores " + std::to_string(8 * width) + "-bit values, this build reads " +
                    std::to_string(8 * sizeof(T)) + "-bit");
  }
  const std::uint32_t count = r.le<std::uint32_t>();
  std::vector<NamedTensor<T>> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = r.le<std::uint32_t>();
    std::string name(reinterpret_cast<const char*>(r.take(len)), len);
    int dims[4];
    for (int& d : dims) {
      const std::uint32_t v = r.le<std::uint32_t>();
      if (v == 0 || v > (1u << 24)) throw DataError("checkpoint: bad shape for '" + name + "'");
      d = static_cast<int>(v);
    }
    const Shape s{dims[0], dims[1], dims[2], dims[3]};
    if (s.numel() > (std::size_t{1} << 28)) throw DataError("checkpoint: tensor '" + name + "' is implausibly large");
    Tensor<T> t(s);
    for (T& v : t.storage()) v = std::bit_cast<T>(r.le<detail::bits_t<T>>());
    out.push_back({std::move(name), std::move(t)});
  }
  if (!r.done()) throw DataError("checkpoint: trailing bytes");
  return out;
}

template <typename T>
std::string encode_params(const ParameterSet<T>& params) {
  std::vector<NamedTensor<T>> recs;
  for (const auto& p : params) recs.push_back({p.name, p.value});
  return encode_checkpoint(recs);
}

/// Overwrites `params` from a checkpoint with exactly the same names, order
/// and shapes; anything else is a DataError and leaves `params` untouched.
template <typename T>
void decode_params_into(std::string_view bytes, ParameterSet<T>& params) {
  auto recs = decode_checkpoint<T>(bytes);
  if (recs.size() != params.size()) {
    throw DataError("checkpoint: holds " + std::to_string(recs.size()) + " tensors, the network has " +
                    std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < recs.size(); ++i) {
    if (recs[i].name != params[i].name) {
      throw DataError("checkpoint: tensor " + std::to_string(i) + " is '" + recs[i].name + "', expected '" +
                      params[i].name + "'");
    }
    if (recs[i].value.shape() != params[i].value.shape()) {
      throw DataError("checkpoint: '" + recs[i].name + "' has shape " + recs[i].value.shape().str() +
                      ", the network expects " + params[i].value.shape().str());
    }
  }
  for (std::size_t i = 0; i < recs.size(); ++i) params[i].value = std::move(recs[i].value);
}

template <typename T>
void save_params(const std::filesystem::path& path, const ParameterSet<T>& params) {
  write_file(path, encode_params(params));
}

template <typename T>
void load_params(const std::filesystem::path& path, ParameterSet<T>& params) {
  try {
    decode_params_into(read_file(path), params);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

/// Adam moments in the checkpoint container, as "m.<name>" and "v.<name>";
/// the step counter travels separately.
template <typename T>
std::string encode_adam(const ParameterSet<T>& params, const AdamState<T>& state) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("encode_adam: optimiser state does not match the parameter set");
  }
  std::vector<NamedTensor<T>> recs;
  for (std::size_t i = 0; i < params.size(); ++i) recs.push_back({"m." + params[i].name, state.m[i]});
  for (std::size_t i = 0; i < params.size(); ++i) recs.push_back({"v." + params[i].name, state.v[i]});
  return encode_checkpoint(recs);
}

template <typename T>
AdamState<T> decode_adam(std::string_view bytes, const ParameterSet<T>& params, std::int64_t t) {
  auto recs = decode_checkpoint<T>(bytes);
  const std::size_t n = params.size();
  if (recs.size() != 2 * n) throw DataError("optimiser state: record count does not match the network");
  AdamState<T> st;
  st.t = t;
  for (std::size_t i = 0; i < 2 * n; ++i) {
    const auto& p = params[i % n];
    const std::string want = (i < n ? "m." : "v.") + p.name;
    if (recs[i].name != want || recs[i].value.shape() != p.value.shape()) {
      throw DataError("optimiser state: record '" + recs[i].name + "' does not match '" + want + "'");
    }
    (i < n ? st.m : st.v).push_back(std::move(recs[i].value));
  }
  return st;
}

}  // namespace siamdepth
