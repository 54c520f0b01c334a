#pragma once

// Network <-> WeightBundle.
//
// metadata.kind = "model"; metadata.model describes input shape, class count
// and the ordered stages. Weighted stage `n` stores either
//   n.weight                          (role dense)
// or its low-rank + sparse parts
//   n.L.0 .. n.L.k                    (role cp/tucker/tt/ttm; Tucker stores the core first)
//   n.S, n.M                          (roles sparse and mask)
// plus n.bias. Factor matrices are stored row-major.

#include "tenslim/bundle.hpp"
#include "tenslim/model.hpp"

namespace tenslim {

WeightBundle network_to_bundle(const Network& net, DType dtype = DType::F32);
Network network_from_bundle(const WeightBundle& bundle);

void save_network(const Network& net, const std::filesystem::path& path, DType dtype = DType::F32);
Network load_network(const std::filesystem::path& path);

/// Appends the entries of one layer under `prefix` and returns its metadata record.
nlohmann::json append_layer(WeightBundle& bundle, const std::string& prefix, const LowRankSparseLayer<double>& layer,
                            DType dtype);
LowRankSparseLayer<double> read_layer(const WeightBundle& bundle, const std::string& prefix, const nlohmann::json& record);

}  // namespace tenslim
