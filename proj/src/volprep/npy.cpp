#include "sranet/npy.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace sranet::npy {

static_assert(std::endian::native == std::endian::little, "npy payloads are written in host byte order");

namespace {

constexpr char kMagic[] = {'\x93', 'N', 'U', 'M', 'P', 'Y'};
constexpr std::size_t kAlign = 64;

std::string shape_repr(const Shape& shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  if (shape.size() == 1) out += ",";
  return out + ")";
}

// Minimal parser for the python-literal dict numpy writes.
class HeaderParser {
 public:
  explicit HeaderParser(std::string_view text) : text_(text) {}

  void parse(std::string& descr, bool& fortran, Shape& shape) {
    bool have_descr = false, have_order = false, have_shape = false;
    expect('{');
    while (true) {
      skip_ws();
      if (peek() == '}') break;
      const std::string key = quoted();
      expect(':');
      skip_ws();
      if (key == "descr") {
        descr = quoted();
        have_descr = true;
      } else if (key == "fortran_order") {
        fortran = boolean();
        have_order = true;
      } else if (key == "shape") {
        shape = tuple();
        have_shape = true;
      } else {
        fail("unexpected key '" + key + "'");
      }
      skip_ws();
      if (peek() == ',') {
        ++pos_;
        continue;
      }
      skip_ws();
      if (peek() != '}') fail("expected ',' or '}'");
    }
    if (!have_descr || !have_order || !have_shape) fail("header misses descr, fortran_order or shape");
  }

 private:
  [[noreturn]] void fail(const std::string& why) const {
    throw NpyError(ErrorKind::kMalformedHeader, why + " in header " + std::string(text_));
  }
  char peek() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }
  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }
  void expect(char c) {
    skip_ws();
    if (peek() != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }
  std::string quoted() {
    skip_ws();
    const char q = peek();
    if (q != '\'' && q != '"') fail("expected a quoted string");
    const std::size_t end = text_.find(q, pos_ + 1);
    if (end == std::string_view::npos) fail("unterminated string");
    std::string out(text_.substr(pos_ + 1, end - pos_ - 1));
    pos_ = end + 1;
    return out;
  }
  bool boolean() {
    if (text_.substr(pos_, 4) == "True") {
      pos_ += 4;
      return true;
    }
    if (text_.substr(pos_, 5) == "False") {
      pos_ += 5;
      return false;
    }
    fail("expected True or False");
  }
  Shape tuple() {
    expect('(');
    Shape shape;
    while (true) {
      skip_ws();
      if (peek() == ')') {
        ++pos_;
        return shape;
      }
      if (!std::isdigit(static_cast<unsigned char>(peek()))) fail("expected a dimension");
      std::size_t value = 0;
      while (std::isdigit(static_cast<unsigned char>(peek()))) {
        value = value * 10 + std::size_t(peek() - '0');
        ++pos_;
      }
      shape.push_back(value);
      skip_ws();
      if (peek() == ',') ++pos_;
    }
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

std::string normalize_descr(const std::string& descr) {
  if (descr == "<u1" || descr == "u1" || descr == "|u1" || descr == "<B" || descr == "|B") {
    return std::string(kUint8);
  }
  return descr;
}

}  // namespace

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kIo: return "io error";
    case ErrorKind::kBadMagic: return "bad magic";
    case ErrorKind::kUnsupportedVersion: return "unsupported version";
    case ErrorKind::kMalformedHeader: return "malformed header";
    case ErrorKind::kUnsupportedDtype: return "unsupported dtype";
    case ErrorKind::kUnsupportedLayout: return "unsupported layout";
    case ErrorKind::kTruncated: return "truncated payload";
    case ErrorKind::kShape: return "shape mismatch";
    case ErrorKind::kInvalidMask: return "invalid mask";
  }
  return "npy error";
}

std::size_t dtype_size(std::string_view descr) {
  if (descr == kFloat32) return 4;
  if (descr == kFloat64) return 8;
  if (descr == kUint8) return 1;
  throw NpyError(ErrorKind::kUnsupportedDtype, "descr '" + std::string(descr) + "'");
}

std::string encode(const Array& array) {
  const std::size_t item = dtype_size(array.descr);
  if (array.payload.size() != numel(array.shape) * item) {
    throw NpyError(ErrorKind::kShape, "payload of " + std::to_string(array.payload.size()) +
                                          " bytes does not match shape " + sranet::to_string(array.shape));
  }
  std::string header = "{'descr': '" + array.descr + "', 'fortran_order': False, 'shape': " +
                       shape_repr(array.shape) + ", }";
  // magic(6) + version(2) + length(2) + header + '\n' is a multiple of kAlign
  const std::size_t unpadded = sizeof(kMagic) + 2 + 2 + header.size() + 1;
  header.append((kAlign - unpadded % kAlign) % kAlign, ' ');
  header.push_back('\n');
  if (header.size() > 0xffff) throw NpyError(ErrorKind::kMalformedHeader, "header too long for v1.0");

  std::string out(kMagic, sizeof(kMagic));
  out.push_back('\x01');
  out.push_back('\x00');
  out.push_back(static_cast<char>(header.size() & 0xff));
  out.push_back(static_cast<char>((header.size() >> 8) & 0xff));
  out += header;
  out.append(array.payload.begin(), array.payload.end());
  return out;
}

Array decode(std::string_view bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw NpyError(ErrorKind::kBadMagic, "missing \\x93NUMPY prefix");
  }
  if (bytes.size() < 10) throw NpyError(ErrorKind::kTruncated, "file ends inside the preamble");
  const auto major = static_cast<unsigned char>(bytes[6]);
  std::size_t header_len = 0, offset = 0;
  if (major == 1) {
    header_len = std::size_t(static_cast<unsigned char>(bytes[8])) |
                 (std::size_t(static_cast<unsigned char>(bytes[9])) << 8);
    offset = 10;
  } else if (major == 2 || major == 3) {
    if (bytes.size() < 12) throw NpyError(ErrorKind::kTruncated, "file ends inside the preamble");
    for (int i = 0; i < 4; ++i) header_len |= std::size_t(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
    offset = 12;
  } else {
    throw NpyError(ErrorKind::kUnsupportedVersion, "version " + std::to_string(major));
  }
  if (bytes.size() < offset + header_len) throw NpyError(ErrorKind::kTruncated, "file ends inside the header");

  Array array;
  bool fortran = false;
  HeaderParser(bytes.substr(offset, header_len)).parse(array.descr, fortran, array.shape);
  array.descr = normalize_descr(array.descr);
  const std::size_t item = dtype_size(array.descr);
  if (fortran) throw NpyError(ErrorKind::kUnsupportedLayout, "fortran_order arrays are not supported");

  const std::size_t expected = numel(array.shape) * item;
  const std::string_view payload = bytes.substr(offset + header_len);
  if (payload.size() < expected) {
    throw NpyError(ErrorKind::kTruncated, "expected " + std::to_string(expected) + " payload bytes, found " +
                                              std::to_string(payload.size()));
  }
  array.payload.assign(payload.begin(), payload.begin() + std::ptrdiff_t(expected));
  return array;
}

Array read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NpyError(ErrorKind::kIo, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode(bytes);
}

void write_file(const std::filesystem::path& path, const Array& array) {
  const std::string bytes = encode(array);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw NpyError(ErrorKind::kIo, "cannot write " + path.string());
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw NpyError(ErrorKind::kIo, "short write to " + path.string());
}

namespace {
template <typename V>
Array pack(std::string_view descr, std::span<const V> values, Shape shape) {
  if (values.size() != numel(shape)) {
    throw NpyError(ErrorKind::kShape, std::to_string(values.size()) + " values for shape " + sranet::to_string(shape));
  }
  Array array{std::string(descr), std::move(shape), std::vector<char>(values.size_bytes())};
  std::memcpy(array.payload.data(), values.data(), values.size_bytes());
  return array;
}
}  // namespace

Array from_values(std::span<const float> values, Shape shape) { return pack(kFloat32, values, std::move(shape)); }
Array from_values(std::span<const double> values, Shape shape) { return pack(kFloat64, values, std::move(shape)); }
Array from_values(std::span<const std::uint8_t> values, Shape shape) {
  return pack(kUint8, values, std::move(shape));
}

template <typename T>
std::vector<T> to_values(const Array& array) {
  const std::size_t n = numel(array.shape);
  std::vector<T> out(n);
  if (array.descr == kFloat32) {
    std::vector<float> raw(n);
    std::memcpy(raw.data(), array.payload.data(), n * sizeof(float));
    std::copy(raw.begin(), raw.end(), out.begin());
  } else if (array.descr == kFloat64) {
    std::vector<double> raw(n);
    std::memcpy(raw.data(), array.payload.data(), n * sizeof(double));
    std::transform(raw.begin(), raw.end(), out.begin(), [](double v) { return static_cast<T>(v); });
  } else if (array.descr == kUint8) {
    std::transform(array.payload.begin(), array.payload.end(), out.begin(),
                   [](char c) { return static_cast<T>(static_cast<unsigned char>(c)); });
  } else {
    throw NpyError(ErrorKind::kUnsupportedDtype, "descr '" + array.descr + "'");
  }
  return out;
}

template std::vector<float> to_values(const Array&);
template std::vector<double> to_values(const Array&);

namespace {
Dims dims_of(const Array& array, const std::filesystem::path& path) {
  if (array.shape.size() != 3) {
    throw NpyError(ErrorKind::kShape, path.string() + " holds a " + std::to_string(array.shape.size()) +
                                          "-d array, expected 3-d");
  }
  return Dims{array.shape[0], array.shape[1], array.shape[2]};
}

Volume as_volume(const Array& array, const std::filesystem::path& path) {
  if (array.descr != kFloat32) {
    throw NpyError(ErrorKind::kUnsupportedDtype, path.string() + " has dtype '" + array.descr +
                                                     "', volumes are '<f4'");
  }
  const Dims dims = dims_of(array, path);
  std::vector<float> voxels(dims.count());
  std::memcpy(voxels.data(), array.payload.data(), array.payload.size());
  return Volume(dims, std::move(voxels));
}

MaskVolume as_mask(const Array& array, const std::filesystem::path& path) {
  if (array.descr != kUint8) {
    throw NpyError(ErrorKind::kUnsupportedDtype, path.string() + " has dtype '" + array.descr +
                                                     "', masks are '|u1'");
  }
  const Dims dims = dims_of(array, path);
  std::vector<std::uint8_t> voxels(dims.count());
  std::memcpy(voxels.data(), array.payload.data(), array.payload.size());
  MaskVolume mask(dims, std::move(voxels));
  for (std::uint8_t v : mask.voxels()) {
    if (v != 0 && v != kMaskOn) {
      throw NpyError(ErrorKind::kInvalidMask, path.string() + " contains value " + std::to_string(v));
    }
  }
  return mask;
}
}  // namespace

Volume read_volume(const std::filesystem::path& path) { return as_volume(read_file(path), path); }

MaskVolume read_mask(const std::filesystem::path& path) { return as_mask(read_file(path), path); }

std::variant<Volume, MaskVolume> read_npy(const std::filesystem::path& path) {
  Array array = read_file(path);
  if (array.descr == kUint8) return as_mask(array, path);
  return as_volume(array, path);
}

void write_npy(const std::filesystem::path& path, const Volume& volume) {
  const Dims& d = volume.dims();
  write_file(path, from_values(std::span<const float>(volume.voxels()), Shape{d.d, d.h, d.w}));
}

void write_npy(const std::filesystem::path& path, const MaskVolume& mask) {
  validate_mask(mask);
  const Dims& d = mask.dims();
  write_file(path, from_values(std::span<const std::uint8_t>(mask.voxels()), Shape{d.d, d.h, d.w}));
}

}  // namespace sranet::npy
