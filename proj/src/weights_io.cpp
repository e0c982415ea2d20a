#include "tinyode/weights_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace tinyode {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

namespace {

constexpr std::array<char, 8> kMagic{'T', 'O', 'D', 'E', 'W', 'G', 'T', 'S'};

class Writer {
 public:
  template <class T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out_.insert(out_.end(), p, p + sizeof(T));
  }
  void bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
  std::vector<std::uint8_t> take() { return std::move(out_); }
  std::size_t size() const { return out_.size(); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::span<const std::uint8_t> bytes(std::size_t n, const char* what) {
    need(n, what);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t size() const { return in_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (n > in_.size() - pos_) {
      throw TruncatedError(std::string("container truncated while reading ") + what + " at byte " +
                           std::to_string(pos_));
    }
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

std::uint32_t crc(std::span<const std::uint8_t> b) {
  uLong c = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large payloads in chunks.
  std::size_t off = 0;
  while (off < b.size()) {
    const std::size_t n = std::min<std::size_t>(b.size() - off, 1u << 30);
    c = crc32(c, b.data() + off, static_cast<uInt>(n));
    off += n;
  }
  return static_cast<std::uint32_t>(c);
}

bool known_dtype(std::uint8_t t) { return t <= static_cast<std::uint8_t>(DType::kI4Packed); }

int code_limit(DType t) { return t == DType::kI8 ? 127 : 7; }

}  // namespace

const char* dtype_name(DType t) {
  switch (t) {
    case DType::kF32: return "f32";
    case DType::kFx16_4: return "fx16_4";
    case DType::kFx20_10: return "fx20_10";
    case DType::kI8: return "i8";
    case DType::kI4Packed: return "i4packed";
  }
  return "?";
}

std::size_t dtype_payload_size(DType t, std::size_t count) {
  switch (t) {
    case DType::kF32: return 4 * count;
    case DType::kFx16_4: return 2 * count;
    case DType::kFx20_10: return 4 * count;
    case DType::kI8: return count;
    case DType::kI4Packed: return (count + 1) / 2;
  }
  return 0;
}

FixedFormat dtype_fixed_format(DType t) {
  if (t == DType::kFx16_4) return kWeightFormat;
  if (t == DType::kFx20_10) return kActivationFormat;
  throw std::invalid_argument(std::string("dtype ") + dtype_name(t) + " is not a fixed-point format");
}

std::uint32_t WeightEntry::checksum() const { return crc(payload); }

void WeightEntry::validate() const {
  if (name.empty()) throw ContainerError("weight entry without a name");
  const std::size_t want = dtype_payload_size(dtype, element_count());
  if (payload.size() != want) {
    throw ContainerError("entry '" + name + "': payload is " + std::to_string(payload.size()) + " bytes, " +
                         dtype_name(dtype) + " " + shape_string(shape) + " needs " + std::to_string(want));
  }
}

WeightEntry WeightEntry::from_f32(std::string name, const FloatTensor& t) {
  WeightEntry e{std::move(name), DType::kF32, t.shape(), std::nullopt, {}};
  Writer w;
  for (double v : t.data()) w.put(static_cast<float>(v));
  e.payload = w.take();
  return e;
}

WeightEntry WeightEntry::from_fixed(std::string name, const FloatTensor& t, DType dtype) {
  const FixedFormat fmt = dtype_fixed_format(dtype);
  WeightEntry e{std::move(name), dtype, t.shape(), std::nullopt, {}};
  Writer w;
  for (double v : t.data()) {
    const auto raw = quantize_to_fixed(v, fmt).raw;
    if (dtype == DType::kFx16_4) {
      w.put(static_cast<std::int16_t>(raw));
    } else {
      w.put(static_cast<std::int32_t>(raw));
    }
  }
  e.payload = w.take();
  return e;
}

WeightEntry WeightEntry::from_codes(std::string name, const BasicTensor<std::int32_t>& codes, DType dtype,
                                    float scale) {
  if (dtype != DType::kI8 && dtype != DType::kI4Packed) {
    throw std::invalid_argument("integer codes need dtype i8 or i4packed");
  }
  const int limit = code_limit(dtype);
  WeightEntry e{std::move(name), dtype, codes.shape(), scale, {}};
  for (std::int32_t c : codes.data()) {
    if (c < -limit - 1 || c > limit) {
      throw std::invalid_argument("code " + std::to_string(c) + " does not fit " + dtype_name(dtype));
    }
  }
  if (dtype == DType::kI8) {
    for (std::int32_t c : codes.data()) e.payload.push_back(static_cast<std::uint8_t>(static_cast<std::int8_t>(c)));
  } else {
    e.payload.assign(dtype_payload_size(dtype, codes.size()), 0);
    for (std::size_t i = 0; i < codes.size(); ++i) {
      const auto nib = static_cast<std::uint8_t>(codes[i] & 0xF);
      e.payload[i / 2] |= static_cast<std::uint8_t>(i % 2 == 0 ? nib : nib << 4);
    }
  }
  return e;
}

BasicTensor<std::int32_t> WeightEntry::to_codes() const {
  validate();
  BasicTensor<std::int32_t> out(shape);
  const std::size_t n = out.size();
  switch (dtype) {
    case DType::kI8:
      for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<std::int8_t>(payload[i]);
      break;
    case DType::kI4Packed:
      for (std::size_t i = 0; i < n; ++i) {
        const int nib = (i % 2 == 0 ? payload[i / 2] : payload[i / 2] >> 4) & 0xF;
        out[i] = nib >= 8 ? nib - 16 : nib;
      }
      break;
    case DType::kFx16_4:
      for (std::size_t i = 0; i < n; ++i) {
        std::int16_t v;
        std::memcpy(&v, payload.data() + 2 * i, 2);
        out[i] = v;
      }
      break;
    case DType::kFx20_10:
      for (std::size_t i = 0; i < n; ++i) std::memcpy(&out[i], payload.data() + 4 * i, 4);
      break;
    case DType::kF32:
      throw ContainerError("entry '" + name + "' holds f32 values, not integer codes");
  }
  return out;
}

FloatTensor WeightEntry::to_float() const {
  validate();
  FloatTensor out(shape);
  if (dtype == DType::kF32) {
    for (std::size_t i = 0; i < out.size(); ++i) {
      float v;
      std::memcpy(&v, payload.data() + 4 * i, 4);
      out[i] = v;
    }
    return out;
  }
  const auto codes = to_codes();
  const int frac = (dtype == DType::kFx16_4 || dtype == DType::kFx20_10) ? dtype_fixed_format(dtype).frac_bits() : 0;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::ldexp(static_cast<double>(codes[i]), -frac);
  return out;
}

void WeightContainer::add(WeightEntry entry) {
  entry.validate();
  if (contains(entry.name)) throw ContainerError("duplicate entry '" + entry.name + "'");
  entries_.push_back(std::move(entry));
}

bool WeightContainer::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const WeightEntry& e) { return e.name == name; });
}

const WeightEntry& WeightContainer::get(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e;
  throw MissingEntryError("weight container has no entry '" + name + "'");
}

WeightEntry& WeightContainer::get_mutable(const std::string& name) {
  for (auto& e : entries_)
    if (e.name == name) return e;
  throw MissingEntryError("weight container has no entry '" + name + "'");
}

const WeightEntry& WeightContainer::expect(const std::string& name, const Shape& shape) const {
  const WeightEntry& e = get(name);
  if (e.shape != shape) {
    throw ContainerError("entry '" + name + "' has shape " + shape_string(e.shape) + ", expected " +
                         shape_string(shape));
  }
  return e;
}

std::vector<std::uint8_t> save(const WeightContainer& c) {
  Writer w;
  w.bytes(std::span(reinterpret_cast<const std::uint8_t*>(kMagic.data()), kMagic.size()));
  w.put(kContainerVersion);
  const auto& m = c.metadata;
  w.put(m.ode_iterations);
  w.put(m.heads);
  w.put(m.classes);
  w.put(m.granularity);
  w.put(m.image_size);
  w.put(m.attention);
  for (auto b : m.quant_bits) w.put(b);
  for (auto v : m.mean) w.put(v);
  for (auto v : m.stddev) w.put(v);
  w.put(static_cast<std::uint32_t>(c.entries().size()));
  std::uint64_t offset = 0;
  for (const auto& e : c.entries()) {
    e.validate();
    w.put(static_cast<std::uint16_t>(e.name.size()));
    w.bytes(std::span(reinterpret_cast<const std::uint8_t*>(e.name.data()), e.name.size()));
    w.put(static_cast<std::uint8_t>(e.dtype));
    w.put(static_cast<std::uint8_t>(e.shape.size()));
    for (auto d : e.shape) w.put(static_cast<std::uint32_t>(d));
    w.put(static_cast<std::uint8_t>(e.scale ? 1 : 0));
    w.put(e.scale.value_or(0.0f));
    w.put(offset);
    w.put(static_cast<std::uint64_t>(e.payload.size()));
    w.put(e.checksum());
    offset += e.payload.size();
  }
  for (const auto& e : c.entries()) w.bytes(e.payload);
  return w.take();
}

WeightContainer load(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.bytes(kMagic.size(), "magic");
  if (!std::equal(magic.begin(), magic.end(), kMagic.begin(),
                  [](std::uint8_t a, char b) { return a == static_cast<std::uint8_t>(b); })) {
    throw BadMagicError("not a weight container (bad magic)");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kContainerVersion) {
    throw VersionError("unsupported container version " + std::to_string(version) + " (expected " +
                       std::to_string(kContainerVersion) + ")");
  }
  WeightContainer c;
  auto& m = c.metadata;
  m.ode_iterations = r.get<std::uint32_t>("metadata");
  m.heads = r.get<std::uint32_t>("metadata");
  m.classes = r.get<std::uint32_t>("metadata");
  m.granularity = r.get<std::uint32_t>("metadata");
  m.image_size = r.get<std::uint32_t>("metadata");
  m.attention = r.get<std::uint8_t>("metadata");
  for (auto& b : m.quant_bits) b = r.get<std::uint8_t>("metadata");
  for (auto& v : m.mean) v = r.get<float>("metadata");
  for (auto& v : m.stddev) v = r.get<float>("metadata");

  struct IndexRow {
    WeightEntry entry;
    std::uint64_t offset, length;
    std::uint32_t crc;
  };
  const auto count = r.get<std::uint32_t>("entry count");
  std::vector<IndexRow> rows;
  for (std::uint32_t i = 0; i < count; ++i) {
    IndexRow row{};
    const auto name_len = r.get<std::uint16_t>("entry name");
    const auto name = r.bytes(name_len, "entry name");
    row.entry.name.assign(name.begin(), name.end());
    const auto dtype = r.get<std::uint8_t>("entry dtype");
    if (!known_dtype(dtype)) {
      throw ContainerError("entry '" + row.entry.name + "' has unknown dtype " + std::to_string(dtype));
    }
    row.entry.dtype = static_cast<DType>(dtype);
    const auto rank = r.get<std::uint8_t>("entry rank");
    for (int d = 0; d < rank; ++d) row.entry.shape.push_back(r.get<std::uint32_t>("entry shape"));
    const auto has_scale = r.get<std::uint8_t>("entry scale");
    const auto scale = r.get<float>("entry scale");
    if (has_scale != 0) row.entry.scale = scale;
    row.offset = r.get<std::uint64_t>("entry offset");
    row.length = r.get<std::uint64_t>("entry length");
    row.crc = r.get<std::uint32_t>("entry checksum");
    rows.push_back(std::move(row));
  }
  const std::size_t payload_start = r.pos();
  for (auto& row : rows) {
    if (row.offset > bytes.size() - payload_start || row.length > bytes.size() - payload_start - row.offset) {
      throw TruncatedError("container truncated inside payload of entry '" + row.entry.name + "'");
    }
    const auto p = bytes.subspan(payload_start + row.offset, row.length);
    row.entry.payload.assign(p.begin(), p.end());
    if (crc(row.entry.payload) != row.crc) {
      throw ChecksumError(row.entry.name, "checksum mismatch in entry '" + row.entry.name + "'");
    }
    c.add(std::move(row.entry));
  }
  return c;
}

void save_file(const WeightContainer& c, const std::filesystem::path& path) {
  const auto bytes = save(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

WeightContainer load_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open weights file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return load(bytes);
}

}  // namespace tinyode
