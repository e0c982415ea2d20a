#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tinyode/fixed.hpp"
#include "tinyode/tensor.hpp"

namespace tinyode {

// Single-file weight container; the byte layout is documented in
// docs/weights-format.md. All integers and floats are little-endian.

enum class DType : std::uint8_t {
  kF32 = 0,
  kFx16_4 = 1,   // Q4.12 in int16
  kFx20_10 = 2,  // Q10.10 in int32
  kI8 = 3,       // signed codes
  kI4Packed = 4, // signed 4-bit codes, two per byte, low nibble first
};

const char* dtype_name(DType t);
// Payload bytes for `count` elements.
std::size_t dtype_payload_size(DType t, std::size_t count);

class ContainerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class BadMagicError : public ContainerError {
 public:
  using ContainerError::ContainerError;
};
class VersionError : public ContainerError {
 public:
  using ContainerError::ContainerError;
};
class ChecksumError : public ContainerError {
 public:
  ChecksumError(const std::string& entry, const std::string& msg) : ContainerError(msg), entry_(entry) {}
  const std::string& entry() const { return entry_; }

 private:
  std::string entry_;
};
class TruncatedError : public ContainerError {
 public:
  using ContainerError::ContainerError;
};
class MissingEntryError : public ContainerError {
 public:
  using ContainerError::ContainerError;
};

inline constexpr std::uint32_t kContainerVersion = 1;
inline constexpr std::size_t kBlockRoleCount = 7;

struct ContainerMetadata {
  std::uint32_t ode_iterations = 10;
  std::uint32_t heads = 4;
  std::uint32_t classes = 10;
  std::uint32_t granularity = 9;
  std::uint32_t image_size = 96;
  std::uint8_t attention = 0;  // 0 = ReLU, 1 = softmax
  // LLT bit width per block role (pre, ode1, ds1, ode2, ds2, mhsa, post); 0 = none.
  std::array<std::uint8_t, kBlockRoleCount> quant_bits{};
  std::array<float, 3> mean{0.5f, 0.5f, 0.5f};
  std::array<float, 3> stddev{0.25f, 0.25f, 0.25f};

  friend bool operator==(const ContainerMetadata&, const ContainerMetadata&) = default;
};

struct WeightEntry {
  std::string name;
  DType dtype = DType::kF32;
  Shape shape;
  std::optional<float> scale;
  std::vector<std::uint8_t> payload;

  std::size_t element_count() const { return tinyode::element_count(shape); }
  std::uint32_t checksum() const;
  // Throws ContainerError when payload length disagrees with dtype and shape.
  void validate() const;

  static WeightEntry from_f32(std::string name, const FloatTensor& t);
  // Rounds to the fixed format; dtype must be kFx16_4 or kFx20_10.
  static WeightEntry from_fixed(std::string name, const FloatTensor& t, DType dtype);
  // Codes must fit the dtype; `scale` is the quantizer scale.
  static WeightEntry from_codes(std::string name, const BasicTensor<std::int32_t>& codes, DType dtype, float scale);

  // Decoded values: floats as stored, fixed raw / 2^frac, codes unscaled.
  FloatTensor to_float() const;
  BasicTensor<std::int32_t> to_codes() const;

  friend bool operator==(const WeightEntry&, const WeightEntry&) = default;
};

FixedFormat dtype_fixed_format(DType t);

class WeightContainer {
 public:
  ContainerMetadata metadata;

  const std::vector<WeightEntry>& entries() const { return entries_; }
  // Throws ContainerError on duplicate names.
  void add(WeightEntry entry);
  bool contains(const std::string& name) const;
  const WeightEntry& get(const std::string& name) const;  // MissingEntryError
  WeightEntry& get_mutable(const std::string& name);
  // Entry, checking dtype and shape; throws ContainerError naming the entry.
  const WeightEntry& expect(const std::string& name, const Shape& shape) const;

  friend bool operator==(const WeightContainer&, const WeightContainer&) = default;

 private:
  std::vector<WeightEntry> entries_;
};

std::vector<std::uint8_t> save(const WeightContainer& c);
WeightContainer load(std::span<const std::uint8_t> bytes);

void save_file(const WeightContainer& c, const std::filesystem::path& path);
WeightContainer load_file(const std::filesystem::path& path);

}  // namespace tinyode
