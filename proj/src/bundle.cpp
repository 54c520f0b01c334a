#include "tenslim/bundle.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace tenslim {

static_assert(std::endian::native == std::endian::little, "bundle I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'T', 'L', 'S', 'W'};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get(std::string_view bytes, std::size_t at) {
  T v;
  std::memcpy(&v, bytes.data() + at, sizeof(T));
  return v;
}

[[noreturn]] void bad_manifest(const std::string& what) { throw Error(Errc::BadManifest, what); }

}  // namespace

std::string_view to_string(DType d) { return d == DType::F32 ? "f32" : "f64"; }

std::string_view to_string(Role r) {
  switch (r) {
    case Role::Dense: return "dense";
    case Role::CP: return "cp";
    case Role::Tucker: return "tucker";
    case Role::TT: return "tt";
    case Role::TTM: return "ttm";
    case Role::Mask: return "mask";
    case Role::Sparse: return "sparse";
  }
  return "dense";
}

DType parse_dtype(std::string_view s) {
  if (s == "f32") return DType::F32;
  if (s == "f64") return DType::F64;
  bad_manifest("unknown dtype '" + std::string(s) + "'");
}

Role parse_role(std::string_view s) {
  for (Role r : {Role::Dense, Role::CP, Role::Tucker, Role::TT, Role::TTM, Role::Mask, Role::Sparse})
    if (to_string(r) == s) return r;
  bad_manifest("unknown role '" + std::string(s) + "'");
}

std::size_t dtype_size(DType d) { return d == DType::F32 ? 4 : 8; }

DenseTensor<double> BundleEntry::tensor() const {
  return DenseTensor<double>(shape, Eigen::Map<const Vector<double>>(values.data(), static_cast<Index>(values.size())));
}

const BundleEntry* WeightBundle::find(std::string_view name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

const BundleEntry& WeightBundle::at(std::string_view name) const {
  if (const BundleEntry* e = find(name)) return *e;
  bad_manifest("bundle has no entry '" + std::string(name) + "'");
}

BundleEntry& WeightBundle::add(std::string name, Role role, const DenseTensor<double>& t, DType dtype,
                               nlohmann::json meta) {
  BundleEntry e;
  e.name = std::move(name);
  e.role = role;
  e.dtype = dtype;
  e.shape = t.shape();
  e.values.assign(t.data().data(), t.data().data() + t.numel());
  e.meta = std::move(meta);
  entries.push_back(std::move(e));
  return entries.back();
}

void WeightBundle::validate() const {
  std::set<std::string> names;
  for (const auto& e : entries) {
    if (!names.insert(e.name).second) bad_manifest("duplicate entry name '" + e.name + "'");
    if (e.shape.empty() || std::any_of(e.shape.begin(), e.shape.end(), [](Index d) { return d < 1; }))
      bad_manifest("entry '" + e.name + "' has an invalid shape");
    if (static_cast<Index>(e.values.size()) != e.numel())
      bad_manifest("entry '" + e.name + "' holds " + std::to_string(e.values.size()) + " values for shape " +
                   to_string(e.shape));
  }
  for (const auto& e : entries) {
    if (e.role != Role::Mask) continue;
    for (double v : e.values)
      if (v != 0.0 && v != 1.0) bad_manifest("mask '" + e.name + "' has entries other than 0/1");
    if (!e.meta.contains("sparse") || !e.meta["sparse"].is_string())
      bad_manifest("mask '" + e.name + "' does not name its sparse entry");
    const BundleEntry* s = find(e.meta["sparse"].get<std::string>());
    if (!s || s->role != Role::Sparse || s->shape != e.shape)
      bad_manifest("mask '" + e.name + "' is not paired with a sparse entry of the same shape");
  }
}

std::string serialize_bundle(const WeightBundle& bundle) {
  bundle.validate();
  nlohmann::json manifest;
  manifest["format_version"] = kBundleVersion;
  manifest["metadata"] = bundle.metadata;
  manifest["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& e : bundle.entries) {
    const std::uint64_t length = static_cast<std::uint64_t>(e.numel()) * dtype_size(e.dtype);
    manifest["tensors"].push_back({{"name", e.name},
                                   {"role", to_string(e.role)},
                                   {"dtype", to_string(e.dtype)},
                                   {"shape", e.shape},
                                   {"offset", offset},
                                   {"length", length},
                                   {"meta", e.meta}});
    offset += length;
  }
  const std::string text = manifest.dump();

  std::string out;
  out.reserve(kBundleHeaderBytes + text.size() + offset);
  out.append(kMagic, 4);
  put<std::uint32_t>(out, kBundleVersion);
  put<std::uint64_t>(out, text.size());
  out += text;
  for (const auto& e : bundle.entries) {
    if (e.dtype == DType::F32) {
      for (double v : e.values) put<float>(out, static_cast<float>(v));
    } else {
      for (double v : e.values) put<double>(out, v);
    }
  }
  return out;
}

WeightBundle parse_bundle(std::string_view bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw Error(Errc::BadMagic, "not a TLSW weight bundle");
  if (bytes.size() < kBundleHeaderBytes) throw Error(Errc::TruncatedPayload, "bundle header is cut short");
  const auto version = get<std::uint32_t>(bytes, 4);
  if (version != kBundleVersion)
    throw Error(Errc::VersionUnsupported, "bundle version " + std::to_string(version) + " (supported: " +
                                              std::to_string(kBundleVersion) + ")");
  const auto manifest_len = get<std::uint64_t>(bytes, 8);
  if (manifest_len > bytes.size() - kBundleHeaderBytes)
    throw Error(Errc::TruncatedPayload, "manifest length exceeds the file");

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(kBundleHeaderBytes, manifest_len));
  } catch (const nlohmann::json::exception& e) {
    bad_manifest(std::string("manifest is not valid JSON: ") + e.what());
  }
  const std::string_view payload = bytes.substr(kBundleHeaderBytes + manifest_len);

  WeightBundle bundle;
  struct Span {
    std::uint64_t begin, end;
    std::string name;
  };
  std::vector<Span> spans;
  try {
    if (manifest.at("format_version").get<std::uint32_t>() != version)
      throw Error(Errc::VersionUnsupported, "manifest and header versions disagree");
    bundle.metadata = manifest.value("metadata", nlohmann::json::object());
    for (const auto& t : manifest.at("tensors")) {
      BundleEntry e;
      e.name = t.at("name").get<std::string>();
      e.role = parse_role(t.at("role").get<std::string>());
      e.dtype = parse_dtype(t.at("dtype").get<std::string>());
      e.shape = t.at("shape").get<Shape>();
      e.meta = t.value("meta", nlohmann::json::object());
      if (e.shape.empty() || std::any_of(e.shape.begin(), e.shape.end(), [](Index d) { return d < 1; }))
        bad_manifest("entry '" + e.name + "' has an invalid shape");
      const auto offset = t.at("offset").get<std::uint64_t>();
      const auto length = t.at("length").get<std::uint64_t>();
      const std::uint64_t expected = static_cast<std::uint64_t>(e.numel()) * dtype_size(e.dtype);
      if (length != expected)
        throw Error(Errc::CorruptOffsets, "entry '" + e.name + "' declares " + std::to_string(length) +
                                              " bytes, dtype x numel is " + std::to_string(expected));
      if (offset > payload.size() || length > payload.size() - offset)
        throw Error(Errc::TruncatedPayload, "entry '" + e.name + "' runs past the end of the payload");
      spans.push_back({offset, offset + length, e.name});
      e.values.resize(static_cast<std::size_t>(e.numel()));
      const char* src = payload.data() + offset;
      for (std::size_t i = 0; i < e.values.size(); ++i) {
        if (e.dtype == DType::F32) {
          float f;
          std::memcpy(&f, src + 4 * i, 4);
          e.values[i] = f;
        } else {
          std::memcpy(&e.values[i], src + 8 * i, 8);
        }
      }
      bundle.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& ex) {
    bad_manifest(std::string("malformed manifest: ") + ex.what());
  }

  std::sort(spans.begin(), spans.end(), [](const Span& a, const Span& b) { return a.begin < b.begin; });
  std::uint64_t end = 0;
  for (const auto& s : spans) {
    if (s.begin < end) throw Error(Errc::CorruptOffsets, "entry '" + s.name + "' overlaps another entry");
    end = s.end;
  }
  if (end != payload.size())
    throw Error(Errc::CorruptOffsets, std::to_string(payload.size() - end) + " trailing payload bytes");
  bundle.validate();
  return bundle;
}

void write_bundle(const WeightBundle& bundle, const std::filesystem::path& path) {
  const std::string bytes = serialize_bundle(bundle);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::IoError, "write to " + path.string() + " failed");
}

WeightBundle read_bundle(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_bundle(buf.str());
}

}  // namespace tenslim
