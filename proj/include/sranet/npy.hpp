#pragma once

#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "sranet/tensor.hpp"
#include "sranet/volume.hpp"

// NumPy .npy v1.0 reader/writer. Writes are byte-identical to numpy.save
// for the supported dtypes (little-endian f4/f8, u1), C order.
namespace sranet::npy {

enum class ErrorKind {
  kIo,
  kBadMagic,
  kUnsupportedVersion,
  kMalformedHeader,
  kUnsupportedDtype,
  kUnsupportedLayout,
  kTruncated,
  kShape,
  kInvalidMask,
};

const char* to_string(ErrorKind kind);

class NpyError : public std::runtime_error {
 public:
  NpyError(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

inline constexpr std::string_view kFloat32 = "<f4";
inline constexpr std::string_view kFloat64 = "<f8";
inline constexpr std::string_view kUint8 = "|u1";

/// Raw array: dtype descriptor, C-order shape, little-endian payload.
struct Array {
  std::string descr;
  Shape shape;
  std::vector<char> payload;
};

std::size_t dtype_size(std::string_view descr);

std::string encode(const Array& array);
Array decode(std::string_view bytes);

Array read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const Array& array);

Array from_values(std::span<const float> values, Shape shape);
Array from_values(std::span<const double> values, Shape shape);
Array from_values(std::span<const std::uint8_t> values, Shape shape);

/// Decodes into T; float and double payloads convert to either precision.
template <typename T>
std::vector<T> to_values(const Array& array);

Volume read_volume(const std::filesystem::path& path);
MaskVolume read_mask(const std::filesystem::path& path);
std::variant<Volume, MaskVolume> read_npy(const std::filesystem::path& path);

void write_npy(const std::filesystem::path& path, const Volume& volume);
void write_npy(const std::filesystem::path& path, const MaskVolume& mask);

}  // namespace sranet::npy
