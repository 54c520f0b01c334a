#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "tenslim/kd_loss.hpp"

using namespace tenslim;

namespace {

Vector<double> vec(std::initializer_list<double> v) {
  Vector<double> out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

// Plain-loop reference of the same objective.
double reference_loss(const Vector<double>& s, const Vector<double>& t, Index y, double alpha, double T) {
  auto probs = [](const Vector<double>& z, double temp) {
    std::vector<double> p(static_cast<std::size_t>(z.size()));
    double mx = -INFINITY, sum = 0;
    for (Index i = 0; i < z.size(); ++i) mx = std::max(mx, z[i] / temp);
    for (Index i = 0; i < z.size(); ++i) sum += (p[static_cast<std::size_t>(i)] = std::exp(z[i] / temp - mx));
    for (auto& x : p) x /= sum;
    return p;
  };
  const auto p1 = probs(s, 1.0), ps = probs(s, T), pt = probs(t, T);
  double kl = 0;
  for (std::size_t i = 0; i < ps.size(); ++i) kl += ps[i] * std::log(ps[i] / pt[i]);
  return alpha * -std::log(p1[static_cast<std::size_t>(y)]) + (1 - alpha) * T * T * kl;
}

}  // namespace

TEST(Kd, HandOracle) {
  const auto s = vec({0.0, 0.0}), t = vec({std::log(3.0), 0.0});
  const double expected = 0.5 * std::log(2.0) + 0.25 * std::log(4.0 / 3.0);
  EXPECT_NEAR(kd_loss(s, t, 0, 0.5, 1.0).loss, expected, 1e-10);
  EXPECT_NEAR(kd_loss(s, t, 1, 0.5, 1.0).loss, expected, 1e-10);
}

TEST(Kd, KlVanishesForIdenticalLogits) {
  std::mt19937_64 rng(1);
  for (double T : {1.0, 3.0, 7.5}) {
    const Vector<double> z = random_normal_matrix<double>(9, 1, rng, 4.0);
    const KdTerms k = kd_loss(z, z, 3, 0.2, T);
    EXPECT_EQ(k.kl, 0.0);
    EXPECT_NEAR(k.loss, 0.2 * k.ce, 1e-15);
  }
}

TEST(Kd, AlphaOneIgnoresTeacher) {
  std::mt19937_64 rng(2);
  const Vector<double> s = random_normal_matrix<double>(5, 1, rng);
  Vector<double> g1, g2;
  const double a = kd_loss(s, random_normal_matrix<double>(5, 1, rng), 1, 1.0, 3.0, &g1).loss;
  const double b = kd_loss(s, random_normal_matrix<double>(5, 1, rng, 10.0), 1, 1.0, 3.0, &g2).loss;
  EXPECT_EQ(a, b);
  EXPECT_EQ(g1, g2);
}

TEST(Kd, MatchesReferenceImplementation) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector<double> s = random_normal_matrix<double>(6, 1, rng, 3.0), t = random_normal_matrix<double>(6, 1, rng, 3.0);
    const double alpha = 0.05 * trial, T = 1.0 + 0.3 * trial;
    EXPECT_NEAR(kd_loss(s, t, trial % 6, alpha, T).loss, reference_loss(s, t, trial % 6, alpha, T), 1e-12);
  }
}

TEST(Kd, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  for (double T : {1.0, 3.0}) {
    const Vector<double> s = random_normal_matrix<double>(7, 1, rng, 2.0), t = random_normal_matrix<double>(7, 1, rng, 2.0);
    Vector<double> g;
    kd_loss(s, t, 2, 0.9, T, &g);
    for (Index i = 0; i < s.size(); ++i) {
      Vector<double> up = s, down = s;
      up[i] += 1e-6;
      down[i] -= 1e-6;
      const double fd = (kd_loss(up, t, 2, 0.9, T).loss - kd_loss(down, t, 2, 0.9, T).loss) / 2e-6;
      EXPECT_NEAR(g[i], fd, 1e-7);
    }
  }
}

TEST(Kd, BatchIsMeanOfColumns) {
  std::mt19937_64 rng(5);
  const Matrix<double> s = random_normal_matrix<double>(4, 3, rng), t = random_normal_matrix<double>(4, 3, rng);
  const std::vector<Index> y{0, 3, 2};
  Matrix<double> g;
  const KdTerms batch = kd_loss_batch(s, t, y, 0.6, 2.0, &g);
  double mean = 0;
  for (Index j = 0; j < 3; ++j) {
    Vector<double> gj;
    mean += kd_loss(s.col(j), t.col(j), y[static_cast<std::size_t>(j)], 0.6, 2.0, &gj).loss / 3.0;
    EXPECT_TRUE(g.col(j).isApprox(gj / 3.0, 1e-14));
  }
  EXPECT_NEAR(batch.loss, mean, 1e-14);
}

TEST(Kd, SoftmaxIsStableForLargeLogits) {
  const Vector<double> p = softmax(vec({1000.0, 999.0, -1000.0}));
  EXPECT_TRUE(p.allFinite());
  EXPECT_NEAR(p.sum(), 1.0, 1e-15);
  EXPECT_NEAR(p[0] / p[1], std::exp(1.0), 1e-12);
}

TEST(Kd, Errors) {
  const auto s = vec({0.0, 1.0});
  EXPECT_THROW(kd_loss(s, vec({0.0, 1.0, 2.0}), 0, 0.5, 1.0), Error);
  EXPECT_THROW(kd_loss(s, s, 2, 0.5, 1.0), Error);
  try {
    kd_loss(vec({NAN, 0.0}), s, 0, 0.5, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::NonFiniteLogits);
  }
}
