#include "tenslim/kd_loss.hpp"

#include <cmath>

namespace tenslim {

Vector<double> softmax(const Vector<double>& z, double temperature) {
  Vector<double> scaled = z / temperature;
  scaled.array() -= scaled.maxCoeff();
  Vector<double> e = scaled.array().exp();
  return e / e.sum();
}

namespace {

Vector<double> log_softmax(const Vector<double>& z, double temperature) {
  Vector<double> scaled = z / temperature;
  const double m = scaled.maxCoeff();
  const double lse = m + std::log((scaled.array() - m).exp().sum());
  return scaled.array() - lse;
}

}  // namespace

KdTerms kd_loss(const Vector<double>& student, const Vector<double>& teacher, Index label, double alpha,
                double temperature, Vector<double>* grad) {
  if (student.size() != teacher.size())
    throw Error(Errc::ShapeMismatch, "student and teacher logits differ in length");
  if (label < 0 || label >= student.size())
    throw Error(Errc::IndexOutOfBounds, "label " + std::to_string(label) + " outside " + std::to_string(student.size()) +
                                            " classes");
  if (!(temperature > 0.0)) throw Error(Errc::ConfigError, "temperature must be positive");
  if (!student.allFinite() || !teacher.allFinite()) throw Error(Errc::NonFiniteLogits, "non-finite logits");

  KdTerms out;
  const Vector<double> log_p1 = log_softmax(student, 1.0);
  out.ce = -log_p1[label];
  const bool use_kd = alpha < 1.0;
  Vector<double> log_ps, log_pt, ps;
  if (use_kd) {
    log_ps = log_softmax(student, temperature);
    log_pt = log_softmax(teacher, temperature);
    ps = log_ps.array().exp();
    out.kl = (ps.array() * (log_ps - log_pt).array()).sum();
  }
  const double t2 = temperature * temperature;
  out.loss = alpha * out.ce + (use_kd ? (1.0 - alpha) * t2 * out.kl : 0.0);

  if (grad) {
    Vector<double> g = log_p1.array().exp();
    g[label] -= 1.0;
    g *= alpha;
    if (use_kd) {
      // d KL / d z_j = p_j (log p_j - log q_j - KL) / T
      const Vector<double> dkl = (ps.array() * ((log_ps - log_pt).array() - out.kl)) / temperature;
      g += (1.0 - alpha) * t2 * dkl;
    }
    *grad = std::move(g);
  }
  return out;
}

KdTerms kd_loss_batch(const Matrix<double>& student, const Matrix<double>& teacher, std::span<const Index> labels,
                      double alpha, double temperature, Matrix<double>* grad) {
  if (student.rows() != teacher.rows() || student.cols() != teacher.cols() ||
      student.cols() != static_cast<Index>(labels.size()))
    throw Error(Errc::ShapeMismatch, "logit batch shapes disagree");
  const Index batch = student.cols();
  if (batch == 0) throw Error(Errc::EmptyInput, "empty batch");
  KdTerms total;
  if (grad) grad->resize(student.rows(), batch);
  Vector<double> g;
  for (Index b = 0; b < batch; ++b) {
    KdTerms t = kd_loss(student.col(b), teacher.col(b), labels[static_cast<std::size_t>(b)], alpha, temperature,
                        grad ? &g : nullptr);
    total.loss += t.loss;
    total.ce += t.ce;
    total.kl += t.kl;
    if (grad) grad->col(b) = g / static_cast<double>(batch);
  }
  const double inv = 1.0 / static_cast<double>(batch);
  total.loss *= inv;
  total.ce *= inv;
  total.kl *= inv;
  return total;
}

}  // namespace tenslim
