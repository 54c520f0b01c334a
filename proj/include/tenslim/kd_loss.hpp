#pragma once

// Distillation loss: alpha * CE(student, label) + (1 - alpha) T^2 KL(p_s || p_t)
// where p = softmax(logits / T).

#include "tenslim/tensor.hpp"

namespace tenslim {

struct KdTerms {
  double loss = 0.0;
  double ce = 0.0;  // cross-entropy at temperature 1
  double kl = 0.0;  // KL(p_s || p_t) at temperature T, before the T^2 factor
};

/// Numerically stable softmax of z / temperature.
Vector<double> softmax(const Vector<double>& z, double temperature = 1.0);

/// Loss for one example and its gradient w.r.t. the student logits.
KdTerms kd_loss(const Vector<double>& student, const Vector<double>& teacher, Index label, double alpha,
                double temperature, Vector<double>* grad = nullptr);

/// Batch mean over the columns of `student`/`teacher` (classes x batch). The
/// gradient is of the mean.
KdTerms kd_loss_batch(const Matrix<double>& student, const Matrix<double>& teacher, std::span<const Index> labels,
                      double alpha, double temperature, Matrix<double>* grad = nullptr);

}  // namespace tenslim
