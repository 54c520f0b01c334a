#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "tenslim/formats.hpp"

using namespace tenslim;
using Tensor = DenseTensor<double>;

namespace {

void expect_elements_match(const FactorizedTensor<double>& f) {
  const Tensor full = reconstruct(f);
  ASSERT_EQ(full.shape(), shape_of(f));
  for (Index flat = 0; flat < full.numel(); ++flat) {
    const auto idx = oracle::unravel(flat, full.shape());
    EXPECT_NEAR(element_at(f, std::span<const Index>(idx)), full[flat], 1e-12);
  }
}

}  // namespace

TEST(Reconstruct, RankOneCpOfOnes) {
  CPFactors<double> f;
  for (Index d : {3, 2, 4}) f.factors.push_back(Matrix<double>::Ones(d, 1));
  Tensor t = reconstruct(f);
  EXPECT_TRUE((t.data().array() == 1.0).all());
  const std::vector<Index> idx{2, 1, 3};
  EXPECT_EQ(element_at(f, std::span<const Index>(idx)), 1.0);
}

TEST(Reconstruct, TuckerIdentityFactorsGiveCore) {
  std::mt19937_64 rng(11);
  TuckerFactors<double> f;
  f.core = random_normal<double>({3, 4, 2}, rng);
  for (Index d : f.core.shape()) f.factors.push_back(Matrix<double>::Identity(d, d));
  EXPECT_EQ(reconstruct(f), f.core);
}

TEST(Reconstruct, TTMatchesMatrixProductOracle) {
  std::mt19937_64 rng(12);
  auto f = oracle::random_tt({4, 5, 6}, {1, 2, 3, 1}, rng);
  Tensor t = reconstruct(f);
  ASSERT_EQ(t.shape(), (Shape{4, 5, 6}));
  for (Index flat = 0; flat < t.numel(); ++flat)
    EXPECT_NEAR(t[flat], oracle::tt_entry(f.cores, oracle::unravel(flat, t.shape())), 1e-12);
}

TEST(Reconstruct, TTOrderTwoIsMatrixProduct) {
  std::mt19937_64 rng(13);
  auto f = oracle::random_tt({4, 5}, {1, 3, 1}, rng);
  Tensor t = reconstruct(f);
  for (Index i = 0; i < 4; ++i)
    for (Index j = 0; j < 5; ++j) {
      double v = 0;
      for (Index r = 0; r < 3; ++r) v += f.cores[0]({0, i, r}) * f.cores[1]({r, j, 0});
      EXPECT_NEAR(t({i, j}), v, 1e-12);
    }
}

TEST(Reconstruct, TTMElementAgainstPairedOracle) {
  std::mt19937_64 rng(14);
  auto f = oracle::random_ttm({2, 3}, {3, 2}, {1, 2, 1}, rng);
  Tensor t = reconstruct(f);
  ASSERT_EQ(t.shape(), (Shape{2, 3, 3, 2}));
  for (Index i1 = 0; i1 < 2; ++i1)
    for (Index i2 = 0; i2 < 3; ++i2)
      for (Index j1 = 0; j1 < 3; ++j1)
        for (Index j2 = 0; j2 < 2; ++j2) {
          double v = 0;
          for (Index r = 0; r < 2; ++r) v += f.cores[0]({0, i1, j1, r}) * f.cores[1]({r, i2, j2, 0});
          EXPECT_NEAR(t({i1, i2, j1, j2}), v, 1e-12);
          const std::vector<Index> idx{i1, i2, j1, j2};
          EXPECT_NEAR(element_at(FactorizedTensor<double>(f), std::span<const Index>(idx)), v, 1e-12);
        }
}

TEST(ElementAt, AgreesWithReconstructForEveryFormat) {
  std::mt19937_64 rng(15);
  expect_elements_match(oracle::random_cp({3, 4, 5}, 3, rng));
  expect_elements_match(oracle::random_tucker({3, 4, 5}, {2, 3, 2}, rng));
  expect_elements_match(oracle::random_tt({3, 4, 5, 2}, {1, 2, 3, 2, 1}, rng));
  expect_elements_match(oracle::random_ttm({2, 3, 2}, {2, 2, 3}, {1, 3, 2, 1}, rng));
}

TEST(ElementAt, OutOfBounds) {
  std::mt19937_64 rng(16);
  FactorizedTensor<double> f = oracle::random_cp({3, 4}, 2, rng);
  const std::vector<Index> idx{3, 0};
  try {
    (void)element_at(f, std::span<const Index>(idx));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::IndexOutOfBounds);
  }
}

TEST(ParamCount, PublishedFormulas) {
  std::mt19937_64 rng(17);
  EXPECT_EQ(param_count(oracle::random_cp({4, 5, 6}, 3, rng)), 45);
  EXPECT_EQ(param_count(oracle::random_tucker({4, 5, 6}, {2, 2, 2}, rng)), 38);
  EXPECT_EQ(param_count(oracle::random_tt({4, 5, 6}, {1, 2, 3, 1}, rng)), 56);
  EXPECT_EQ(param_count(oracle::random_ttm({2, 3}, {4, 5}, {1, 2, 1}, rng)), 1 * 2 * 4 * 2 + 2 * 3 * 5 * 1);
}

TEST(ParamCount, EqualsStoredReals) {
  std::mt19937_64 rng(18);
  std::vector<FactorizedTensor<double>> all{oracle::random_cp({3, 4, 5}, 3, rng),
                                            oracle::random_tucker({3, 4, 5}, {2, 3, 2}, rng),
                                            oracle::random_tt({3, 4, 5}, {1, 2, 3, 1}, rng),
                                            oracle::random_ttm({2, 3}, {2, 2}, {1, 3, 1}, rng)};
  for (auto& f : all) {
    Index stored = 0;
    for (const auto& arr : parameter_arrays(f)) stored += arr.size();
    EXPECT_EQ(param_count(f), stored);
  }
}

TEST(Formats, RankOneTTEqualsOuterProductOfFibers) {
  std::mt19937_64 rng(19);
  auto f = oracle::random_tt({3, 4, 2}, {1, 1, 1, 1}, rng);
  std::vector<Vector<double>> fibers;
  for (const auto& g : f.cores) fibers.push_back(g.data());
  Tensor outer = outer_rank1(fibers);
  Tensor t = reconstruct(f);
  for (Index i = 0; i < t.numel(); ++i) EXPECT_NEAR(t[i], outer[i], 1e-12);
}

TEST(Formats, BrokenChainRejected) {
  TTCores<double> f;
  f.cores.emplace_back(Shape{1, 3, 2});
  f.cores.emplace_back(Shape{3, 4, 1});
  try {
    (void)reconstruct(f);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::RankChainBroken);
  }
  TTCores<double> open;
  open.cores.emplace_back(Shape{2, 3, 1});
  EXPECT_THROW((void)reconstruct(open), Error);
}

TEST(Formats, ParseFormatNames) {
  EXPECT_EQ(parse_format("cp"), Format::CP);
  EXPECT_EQ(parse_format("ttm"), Format::TTM);
  EXPECT_EQ(to_string(Format::Tucker), "tucker");
  EXPECT_THROW(parse_format("ht"), Error);
}

namespace {

// Central differences of <reconstruct(f), g> with respect to every stored real.
void check_vjp(FactorizedTensor<double> f, std::mt19937_64& rng) {
  const Tensor g = random_normal<double>(shape_of(f), rng);
  const FactorizedTensor<double> grad = reconstruct_vjp(f, g);
  FactorizedTensor<double> grad_copy = grad;
  auto analytic = parameter_arrays(grad_copy);
  auto params = parameter_arrays(f);
  ASSERT_EQ(analytic.size(), params.size());
  auto objective = [&] { return reconstruct(f).data().dot(g.data()); };
  const double h = 1e-6;
  for (std::size_t a = 0; a < params.size(); ++a)
    for (Index i = 0; i < params[a].size(); ++i) {
      const double saved = params[a][i];
      params[a][i] = saved + h;
      const double up = objective();
      params[a][i] = saved - h;
      const double down = objective();
      params[a][i] = saved;
      EXPECT_NEAR(analytic[a][i], (up - down) / (2 * h), 1e-6);
    }
}

}  // namespace

TEST(ReconstructVjp, MatchesFiniteDifferences) {
  std::mt19937_64 rng(20);
  check_vjp(oracle::random_cp({3, 4, 2}, 2, rng), rng);
  check_vjp(oracle::random_tucker({3, 4, 2}, {2, 3, 2}, rng), rng);
  check_vjp(oracle::random_tt({3, 4, 2}, {1, 2, 2, 1}, rng), rng);
  check_vjp(oracle::random_ttm({2, 3}, {3, 2}, {1, 3, 1}, rng), rng);
}
