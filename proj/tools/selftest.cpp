// Quick oracle and property checks runnable from an installed binary.

#include <cmath>
#include <functional>
#include <ostream>
#include <random>

#include "tenslim/bundle.hpp"
#include "tenslim/kd_loss.hpp"
#include "tenslim/model.hpp"
#include "tenslim/pipeline.hpp"
#include "tenslim/pruner.hpp"

namespace tenslim {

namespace {

using Check = std::pair<std::string, std::function<bool()>>;

template <typename Factors>
bool recovers(const Factors& truth, const RankSpec& spec) {
  const DenseTensor<double> a = reconstruct(FactorizedTensor<double>(truth));
  auto fit = decompose(a, spec);
  return relative_error(a, reconstruct(fit.factors)) <= 1e-8;
}

bool recover_all() {
  std::mt19937_64 rng(7);
  TTCores<double> tt;
  const Shape dims{4, 5, 6}, r{1, 2, 3, 1};
  for (std::size_t n = 0; n < dims.size(); ++n) tt.cores.push_back(random_normal<double>(Shape{r[n], dims[n], r[n + 1]}, rng));
  TTMCores<double> ttm;
  const Shape rows{2, 3}, cols{3, 2}, rm{1, 2, 1};
  for (std::size_t n = 0; n < rows.size(); ++n)
    ttm.cores.push_back(random_normal<double>(Shape{rm[n], rows[n], cols[n], rm[n + 1]}, rng));
  CPFactors<double> cp;
  for (Index d : dims) cp.factors.push_back(random_normal_matrix<double>(d, 2, rng));
  TuckerFactors<double> tucker;
  tucker.core = random_normal<double>(Shape{2, 2, 3}, rng);
  for (std::size_t n = 0; n < dims.size(); ++n) tucker.factors.push_back(random_normal_matrix<double>(dims[n], tucker.core.dim(n), rng));
  return recovers(tt, {Format::TT, r}) && recovers(ttm, {Format::TTM, rm}) && recovers(cp, {Format::CP, {2}}) &&
         recovers(tucker, {Format::Tucker, {2, 2, 3}});
}

bool additive_identity() {
  std::mt19937_64 rng(11);
  const DenseTensor<double> w = random_normal<double>(Shape{16, 12}, rng);
  for (Format f : {Format::CP, Format::Tucker, Format::TT, Format::TTM}) {
    DecomposeConfig cfg;
    cfg.format = f;
    const auto layer = init_residual(w, cfg);
    const DenseTensor<double> back = reconstruct_additive(layer);
    if ((back.data() - w.data()).cwiseAbs().maxCoeff() > 1e-9 * w.data().cwiseAbs().maxCoeff()) return false;
  }
  return true;
}

bool masking_disjoint() {
  std::mt19937_64 rng(13);
  const DenseTensor<double> w = random_normal<double>(Shape{16, 12}, rng);
  auto layer = init_masking(w, DecomposeConfig{}, 0.2);
  const DenseTensor<double> before = reconstruct_masking(layer);
  for (Index i = 0; i < layer.sparse->numel(); ++i)
    if (!layer.mask->bits()[i]) (*layer.sparse)[i] += 1.0;
  return reconstruct_masking(layer).data() == before.data();
}

bool schedule() {
  return schedule_sparsity(0, 50, 0.8) == 0.0 && schedule_sparsity(50, 50, 0.8) == 0.8 &&
         std::abs(schedule_sparsity(25, 50, 0.8) - 0.1) <= 1e-15;
}

bool kd_oracle() {
  Vector<double> s = Vector<double>::Zero(2), t(2);
  t << std::log(3.0), 0.0;
  const double expected = 0.5 * std::log(2.0) + 0.25 * std::log(4.0 / 3.0);
  return std::abs(kd_loss(s, t, 0, 0.5, 1.0).loss - expected) <= 1e-10 &&
         std::abs(kd_loss(s, s, 1, 0.3, 2.0).kl) <= 1e-15;
}

bool finite_differences() {
  std::mt19937_64 rng(17);
  Network net;
  net.input_shape = {12};
  net.classes = 3;
  Op fc1{OpKind::Linear, "fc1", 12, 8};
  fc1.weight = random_normal<double>(Shape{8, 12}, rng);
  fc1.bias = Vector<double>::Zero(8);
  Op act{OpKind::Tanh, "act"};
  Op fc2{OpKind::Linear, "fc2", 8, 3};
  fc2.weight = random_normal<double>(Shape{3, 8}, rng);
  fc2.bias = Vector<double>::Zero(3);
  DecomposeConfig cfg;
  cfg.format = Format::TT;
  fc1.weight = init_masking(std::get<DenseTensor<double>>(fc1.weight), cfg, 0.3, "fc1");
  net.ops = {fc1, act, fc2};
  const Matrix<double> x = random_normal_matrix<double>(12, 4, rng);
  const Matrix<double> c = random_normal_matrix<double>(3, 4, rng);
  auto loss = [&] { return (forward(net, x).array() * c.array()).sum(); };
  ForwardCache cache;
  forward(net, x, &cache);
  NetworkGradient grad = backward(net, cache, c);
  auto params = parameters(net);
  auto grads = gradient_arrays(net, grad);
  const double h = 1e-5;
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (Index i = 0; i < params[k].values.size(); ++i) {
      const double keep = params[k].values[i];
      params[k].values[i] = keep + h;
      const double up = loss();
      params[k].values[i] = keep - h;
      const double down = loss();
      params[k].values[i] = keep;
      const double fd = (up - down) / (2 * h);
      if (std::abs(fd - grads[k][i]) > 1e-4 * std::max(1.0, std::abs(fd))) return false;
    }
  }
  return true;
}

bool bundle_round_trip() {
  std::mt19937_64 rng(19);
  WeightBundle b;
  b.metadata = {{"kind", "selftest"}};
  b.add("w", Role::Dense, random_normal<double>(Shape{3, 4}, rng), DType::F64);
  b.add("s", Role::Sparse, random_normal<double>(Shape{2, 2}, rng));
  b.add("m", Role::Mask, DenseTensor<double>::Constant(Shape{2, 2}, 1.0), DType::F32, {{"sparse", "s"}});
  const std::string bytes = serialize_bundle(b);
  const WeightBundle back = parse_bundle(bytes);
  if (serialize_bundle(back) != bytes) return false;
  try {
    parse_bundle(std::string_view(bytes).substr(0, bytes.size() - 1));
  } catch (const Error& e) {
    return e.code() == Errc::TruncatedPayload;
  }
  return false;
}

}  // namespace

int run_selftest(std::ostream& out) {
  const std::vector<Check> checks{
      {"generate-then-recover", recover_all},   {"additive init identity", additive_identity},
      {"masking disjointness", masking_disjoint}, {"pruning schedule", schedule},
      {"distillation loss", kd_oracle},          {"finite differences", finite_differences},
      {"bundle round trip", bundle_round_trip},
  };
  int failed = 0;
  for (const auto& [name, fn] : checks) {
    bool ok = false;
    try {
      ok = fn();
    } catch (const std::exception& e) {
      out << "  " << e.what() << '\n';
    }
    out << (ok ? "PASS " : "FAIL ") << name << '\n';
    failed += !ok;
  }
  return failed ? 4 : 0;
}

}  // namespace tenslim
