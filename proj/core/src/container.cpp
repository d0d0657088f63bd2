#include "pdisent/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace pdisent {

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

namespace {

using Kind = ContainerError::Kind;

const char* dtype_name(DType t) {
  switch (t) {
    case DType::Float32: return "float32";
    case DType::Int32: return "int32";
    case DType::Float64: return "float64";
  }
  return "?";
}

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    T value;
    std::memcpy(&value, take(sizeof(T)), sizeof(T));
    return value;
  }

  const std::uint8_t* take(std::size_t n) {
    if (n > bytes_.size() - pos_)
      throw ContainerError(Kind::Truncated, "container truncated at byte " + std::to_string(pos_) +
                                                " (needed " + std::to_string(n) + " more)");
    const auto* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

template <typename T>
std::vector<T> read_values(Reader& r, std::size_t count) {
  if (count > SIZE_MAX / sizeof(T)) throw ContainerError(Kind::Corrupt, "array size overflow");
  std::vector<T> v(count);
  if (count) std::memcpy(v.data(), r.take(count * sizeof(T)), count * sizeof(T));
  return v;
}

}  // namespace

std::size_t NamedArray::element_count() const {
  return std::visit([](const auto& v) { return v.size(); }, data);
}

void Container::add_array(NamedArray array) {
  std::size_t expected = 1;
  for (auto d : array.shape) expected *= static_cast<std::size_t>(d);
  if (expected != array.element_count())
    throw std::invalid_argument("array '" + array.name + "': shape does not match element count");
  if (contains(array.name)) throw std::invalid_argument("duplicate array name '" + array.name + "'");
  arrays_.push_back(std::move(array));
}

void Container::add(std::string name, std::vector<std::uint64_t> shape, std::vector<float> values) {
  add_array({std::move(name), std::move(shape), std::move(values)});
}
void Container::add(std::string name, std::vector<std::uint64_t> shape,
                    std::vector<std::int32_t> values) {
  add_array({std::move(name), std::move(shape), std::move(values)});
}
void Container::add(std::string name, std::vector<std::uint64_t> shape, std::vector<double> values) {
  add_array({std::move(name), std::move(shape), std::move(values)});
}

bool Container::contains(const std::string& name) const {
  for (const auto& a : arrays_)
    if (a.name == name) return true;
  return false;
}

const NamedArray& Container::at(const std::string& name) const {
  for (const auto& a : arrays_)
    if (a.name == name) return a;
  throw ContainerError(Kind::MissingArray, "container has no array named '" + name + "'");
}

nlohmann::json Container::array_index() const {
  auto index = nlohmann::json::array();
  for (const auto& a : arrays_)
    index.push_back({{"name", a.name}, {"dtype", dtype_name(a.dtype())}, {"shape", a.shape}});
  return index;
}

std::vector<std::uint8_t> Container::serialize() const {
  nlohmann::json header = manifest;
  header["arrays"] = array_index();
  const std::string text = header.dump();

  std::vector<std::uint8_t> out;
  out.insert(out.end(), kContainerMagic, kContainerMagic + 8);
  put<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(arrays_.size()));
  for (const auto& a : arrays_) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
    out.insert(out.end(), a.name.begin(), a.name.end());
    put<std::uint8_t>(out, static_cast<std::uint8_t>(a.dtype()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) put<std::uint64_t>(out, d);
    std::visit(
        [&](const auto& v) {
          const auto* p = reinterpret_cast<const std::uint8_t*>(v.data());
          out.insert(out.end(), p, p + v.size() * sizeof(v[0]));
        },
        a.data);
  }
  return out;
}

Container Container::deserialize(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (bytes.size() < 8 && !bytes.empty() && std::memcmp(bytes.data(), kContainerMagic, bytes.size()) == 0)
    throw ContainerError(Kind::Truncated, "truncated container (incomplete magic)");
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kContainerMagic, 8) != 0)
    throw ContainerError(Kind::BadMagic, "not a PDISENT1 container (bad magic)");
  r.take(8);

  const auto manifest_len = r.get<std::uint64_t>();
  const auto* text = r.take(static_cast<std::size_t>(manifest_len));
  Container c;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text, text + manifest_len);
  } catch (const nlohmann::json::exception& e) {
    throw ContainerError(Kind::Corrupt, std::string("manifest is not valid JSON: ") + e.what());
  }
  if (!header.is_object() || !header.contains("arrays"))
    throw ContainerError(Kind::Corrupt, "manifest lacks the array index");

  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    const auto name_len = r.get<std::uint32_t>();
    const auto* name = r.take(name_len);
    a.name.assign(reinterpret_cast<const char*>(name), name_len);
    const auto dtype = r.get<std::uint8_t>();
    const auto rank = r.get<std::uint32_t>();
    if (rank > 16) throw ContainerError(Kind::Corrupt, "implausible rank for '" + a.name + "'");
    std::size_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      a.shape.push_back(r.get<std::uint64_t>());
      n *= static_cast<std::size_t>(a.shape.back());
    }
    switch (static_cast<DType>(dtype)) {
      case DType::Float32: a.data = read_values<float>(r, n); break;
      case DType::Int32: a.data = read_values<std::int32_t>(r, n); break;
      case DType::Float64: a.data = read_values<double>(r, n); break;
      default: throw ContainerError(Kind::Corrupt, "unknown dtype in array '" + a.name + "'");
    }
    if (c.contains(a.name)) throw ContainerError(Kind::Corrupt, "duplicate array '" + a.name + "'");
    c.arrays_.push_back(std::move(a));
  }
  if (!r.done())
    throw ContainerError(Kind::Corrupt, "trailing bytes after the last array at offset " +
                                            std::to_string(r.pos()));
  if (header["arrays"] != c.array_index())
    throw ContainerError(Kind::ManifestMismatch, "manifest array index disagrees with stored arrays");
  header.erase("arrays");
  c.manifest = std::move(header);
  return c;
}

void Container::save(const std::string& path) const {
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ContainerError(Kind::Io, "cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ContainerError(Kind::Io, "write failed for '" + path + "'");
}

namespace {
std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ContainerError(Kind::Io, "cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}
}  // namespace

Container Container::load(const std::string& path) { return deserialize(read_file(path)); }

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t file_hash(const std::string& path) { return fnv1a64(read_file(path)); }

}  // namespace pdisent
