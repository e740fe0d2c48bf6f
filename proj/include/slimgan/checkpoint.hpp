#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "slimgan/data.hpp"
#include "slimgan/slim.hpp"

namespace slimgan {

/// Binary container shared by checkpoints and dataset dumps:
///
///   magic        8 bytes  "SLMGCKPT"
///   version      u32
///   manifest     u64 length + UTF-8 JSON
///   array count  u64
///   per array    u64 name length + name, u64 rank, rank × u64 extents,
///                u64 element count, count × f64
///
/// Integers and floats are little-endian.
inline constexpr std::string_view kContainerMagic = "SLMGCKPT";
inline constexpr std::uint32_t kContainerVersion = 1;

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

struct Checkpoint {
  nlohmann::json manifest = nlohmann::json::object();
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const {
    for (const auto& a : arrays) {
      if (a.name == name) return &a;
    }
    return nullptr;
  }
  const NamedArray& at(const std::string& name) const {
    if (const NamedArray* a = find(name)) return *a;
    throw FormatError("checkpoint has no array named '" + name + "'");
  }

  void add(const std::string& name, const Tensor& t) { arrays.push_back({name, t.shape(), t.values()}); }
};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw FormatError("container truncated");
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint64_t u64() {
    const auto s = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }
  std::uint32_t u32() {
    const auto s = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }
  // Length field bounded by the remaining bytes, so corrupt sizes fail fast.
  std::size_t length(std::size_t unit = 1) {
    const std::uint64_t n = u64();
    if (n > (bytes_.size() - pos_) / unit) throw FormatError("container length field exceeds remaining bytes");
    return static_cast<std::size_t>(n);
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_container(const Checkpoint& ckpt) {
  std::string out(kContainerMagic);
  detail::put_u32(out, kContainerVersion);
  const std::string manifest = ckpt.manifest.dump();
  detail::put_u64(out, manifest.size());
  out += manifest;
  detail::put_u64(out, ckpt.arrays.size());
  for (const auto& a : ckpt.arrays) {
    if (shape_numel(a.shape) != a.data.size()) throw DimensionError("array '" + a.name + "' does not match its shape");
    detail::put_u64(out, a.name.size());
    out += a.name;
    detail::put_u64(out, a.shape.size());
    for (std::size_t d : a.shape) detail::put_u64(out, d);
    detail::put_u64(out, a.data.size());
    for (double v : a.data) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

inline Checkpoint decode_container(std::string_view bytes) {
  detail::ByteReader in(bytes);
  if (bytes.size() < kContainerMagic.size() || in.take(kContainerMagic.size()) != kContainerMagic) {
    throw FormatError("not a slimgan container (bad magic bytes)");
  }
  const std::uint32_t version = in.u32();
  if (version != kContainerVersion) {
    throw FormatError("unsupported container version " + std::to_string(version) + " (expected " +
                      std::to_string(kContainerVersion) + ")");
  }
  Checkpoint ckpt;
  const std::size_t manifest_len = in.length();
  try {
    ckpt.manifest = nlohmann::json::parse(in.take(manifest_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("container manifest is not valid JSON: ") + e.what());
  }
  const std::size_t count = in.length();
  for (std::size_t k = 0; k < count; ++k) {
    NamedArray a;
    a.name = std::string(in.take(in.length()));
    const std::size_t rank = in.length(8);
    for (std::size_t d = 0; d < rank; ++d) a.shape.push_back(static_cast<std::size_t>(in.u64()));
    const std::size_t n = in.length(8);
    if (n != shape_numel(a.shape)) throw FormatError("array '" + a.name + "' element count does not match its shape");
    a.data.resize(n);
    for (double& v : a.data) v = std::bit_cast<double>(in.u64());
    ckpt.arrays.push_back(std::move(a));
  }
  if (!in.done()) throw FormatError("trailing bytes after the last array");
  return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const std::string bytes = encode_container(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_container(bytes);
}

/// Copies checkpoint arrays into tensors named `prefix + name`. Shapes must match.
inline void load_tensors(const Checkpoint& ckpt, const std::string& prefix, NamedTensors tensors) {
  for (auto& t : tensors) {
    const NamedArray& a = ckpt.at(prefix + t.name);
    if (a.shape != t.tensor.shape()) {
      throw FormatError("array '" + a.name + "' has shape " + shape_str(a.shape) + ", expected " +
                        shape_str(t.tensor.shape()));
    }
    std::copy(a.data.begin(), a.data.end(), t.tensor.mutable_data().begin());
  }
}

inline void store_tensors(Checkpoint& ckpt, const std::string& prefix, const NamedTensors& tensors) {
  for (const auto& t : tensors) ckpt.add(prefix + t.name, t.tensor);
}

// Dataset dumps reuse the container; labels are stored as doubles.

inline Checkpoint dataset_to_container(const Dataset& ds) {
  Checkpoint c;
  c.manifest = {{"format", "slimgan-dataset"},
                {"kind", to_string(ds.kind)},
                {"num_classes", ds.num_classes},
                {"seed", ds.seed},
                {"sample_shape", ds.sample_shape}};
  nlohmann::json centers = nlohmann::json::array();
  for (const auto& p : ds.centers) centers.push_back({p[0], p[1]});
  c.manifest["centers"] = centers;
  Shape shape{ds.size()};
  shape.insert(shape.end(), ds.sample_shape.begin(), ds.sample_shape.end());
  c.arrays.push_back({"samples", shape, ds.samples});
  c.arrays.push_back({"labels", {ds.size()}, std::vector<double>(ds.labels.begin(), ds.labels.end())});
  return c;
}

inline Dataset dataset_from_container(const Checkpoint& c) {
  try {
    if (c.manifest.at("format") != "slimgan-dataset") throw FormatError("container does not hold a dataset");
    Dataset ds;
    const std::string kind = c.manifest.at("kind");
    if (kind == "ring2d") ds.kind = DatasetKind::ring2d;
    else if (kind == "grid2d") ds.kind = DatasetKind::grid2d;
    else if (kind == "tinyimg") ds.kind = DatasetKind::tinyimg;
    else throw FormatError("unknown dataset kind '" + kind + "'");
    ds.num_classes = c.manifest.at("num_classes");
    ds.seed = c.manifest.at("seed");
    ds.sample_shape = c.manifest.at("sample_shape").get<Shape>();
    for (const auto& p : c.manifest.at("centers")) ds.centers.push_back({p.at(0), p.at(1)});
    ds.samples = c.at("samples").data;
    for (double v : c.at("labels").data) ds.labels.push_back(static_cast<std::size_t>(v));
    if (ds.samples.size() != ds.size() * ds.sample_numel()) throw FormatError("dataset sample count mismatch");
    return ds;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed dataset manifest: ") + e.what());
  }
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  save_checkpoint(dataset_to_container(ds), path);
}
inline Dataset load_dataset(const std::filesystem::path& path) { return dataset_from_container(load_checkpoint(path)); }

}  // namespace slimgan
