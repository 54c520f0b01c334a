#pragma once

// WeightBundle: a named collection of tensors with a JSON manifest.
//
// File layout (all integers little-endian):
//   "TLSW" | u32 version | u64 manifest length | manifest (UTF-8 JSON) | payload
// Entry offsets in the manifest are relative to the start of the payload.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tenslim/tensor.hpp"

namespace tenslim {

inline constexpr std::uint32_t kBundleVersion = 1;
inline constexpr std::size_t kBundleHeaderBytes = 4 + 4 + 8;

enum class DType { F32, F64 };
enum class Role { Dense, CP, Tucker, TT, TTM, Mask, Sparse };

std::string_view to_string(DType d);
std::string_view to_string(Role r);
DType parse_dtype(std::string_view s);
Role parse_role(std::string_view s);
std::size_t dtype_size(DType d);

/// One stored array. Values are held in double precision in memory; an f32
/// entry is narrowed on write and widened on read, which round-trips exactly.
struct BundleEntry {
  std::string name;
  Role role = Role::Dense;
  DType dtype = DType::F32;
  Shape shape;
  std::vector<double> values;
  nlohmann::json meta = nlohmann::json::object();  // ranks, owning layer, part index...

  Index numel() const { return tenslim::numel(shape); }
  DenseTensor<double> tensor() const;
};

struct WeightBundle {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<BundleEntry> entries;

  const BundleEntry* find(std::string_view name) const;
  const BundleEntry& at(std::string_view name) const;  // throws BadManifest
  BundleEntry& add(std::string name, Role role, const DenseTensor<double>& t, DType dtype = DType::F32,
                   nlohmann::json meta = nlohmann::json::object());
  /// Checks the structural invariants: unique names, shape/numel agreement,
  /// 0/1 masks, every mask paired with a same-shape sparse entry.
  void validate() const;
};

std::string serialize_bundle(const WeightBundle& bundle);
WeightBundle parse_bundle(std::string_view bytes);

void write_bundle(const WeightBundle& bundle, const std::filesystem::path& path);
WeightBundle read_bundle(const std::filesystem::path& path);

}  // namespace tenslim
