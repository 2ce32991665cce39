#pragma once

#include <span>

#include "dmsva/num/tensor.hpp"

namespace dmsva::num {

/// Norms at or below this are treated as zero by cosine similarity.
inline constexpr double kNormEpsilon = 1e-12;
/// Lower clamp applied to the second KL argument before taking its log.
inline constexpr double kKlFloor = 1e-12;

/// a.b / (|a| |b|). Throws ZeroNormVector when either norm is <= kNormEpsilon.
double cosine_sim(std::span<const double> x, std::span<const double> y);
double cosine_sim(const Vector& x, const Vector& y);

/// Numerically stable softmax (max-subtracted).
Vector softmax(const Vector& logits);

/// sum_i p_i ln(p_i / max(q_i, kKlFloor)), with 0 ln 0 := 0.
double kl_div(const Vector& p, const Vector& q);

/// Squared L2 distance, sum convention: sum_i (x_i - y_i)^2.
double mse(const Vector& x, const Vector& y);

} // namespace dmsva::num
