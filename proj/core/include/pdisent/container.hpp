#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace pdisent {

/// Single-file tensor container:
///
///   "PDISENT1"                      8-byte magic
///   u64 manifest length, manifest  UTF-8 JSON
///   u32 array count
///   per array: u32 name length, name, u8 dtype, u32 rank, u64 dims[rank], data
///
/// All integers and array payloads are little-endian. dtype: 0 = float32,
/// 1 = int32, 2 = float64. The manifest carries an "arrays" index that must
/// match the stored arrays.
inline constexpr char kContainerMagic[9] = "PDISENT1";

enum class DType : std::uint8_t { Float32 = 0, Int32 = 1, Float64 = 2 };

class ContainerError : public std::runtime_error {
 public:
  enum class Kind { Io, BadMagic, Truncated, Corrupt, ManifestMismatch, MissingArray };

  ContainerError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct NamedArray {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::variant<std::vector<float>, std::vector<std::int32_t>, std::vector<double>> data;

  DType dtype() const { return static_cast<DType>(data.index()); }
  std::size_t element_count() const;

  bool operator==(const NamedArray&) const = default;
};

class Container {
 public:
  nlohmann::json manifest = nlohmann::json::object();

  void add(std::string name, std::vector<std::uint64_t> shape, std::vector<float> values);
  void add(std::string name, std::vector<std::uint64_t> shape, std::vector<std::int32_t> values);
  void add(std::string name, std::vector<std::uint64_t> shape, std::vector<double> values);

  bool contains(const std::string& name) const;
  const NamedArray& at(const std::string& name) const;

  /// Typed access; throws ContainerError(MissingArray / Corrupt) on absence or dtype mismatch.
  template <typename T>
  const std::vector<T>& values(const std::string& name) const {
    const auto& arr = at(name);
    if (const auto* v = std::get_if<std::vector<T>>(&arr.data)) return *v;
    throw ContainerError(ContainerError::Kind::Corrupt, "array '" + name + "' has unexpected dtype");
  }

  const std::vector<NamedArray>& arrays() const { return arrays_; }

  std::vector<std::uint8_t> serialize() const;
  static Container deserialize(std::span<const std::uint8_t> bytes);

  void save(const std::string& path) const;
  static Container load(const std::string& path);

 private:
  void add_array(NamedArray array);
  nlohmann::json array_index() const;

  std::vector<NamedArray> arrays_;
};

/// FNV-1a 64-bit over a byte range; used for reproducibility checks.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);
std::uint64_t file_hash(const std::string& path);

}  // namespace pdisent
