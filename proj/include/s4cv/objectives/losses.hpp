#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "s4cv/core/ops.hpp"
#include "s4cv/semi/prediction.hpp"

namespace s4cv {

inline constexpr double kDiceSmooth = 1e-5;

namespace loss_detail {

inline void check_labels(const Shape& logits, const LabelMap& labels) {
  if (logits.size() != 4) throw DimensionError("loss: logits must be [B,K,H,W], got " + shape_str(logits));
  if (labels.rank() != 3 || labels.dim(0) != logits[0] || labels.dim(1) != logits[2] || labels.dim(2) != logits[3])
    throw DimensionError("loss: labels " + shape_str(labels.shape()) + " do not match logits " + shape_str(logits));
  const auto K = logits[1];
  for (std::int64_t i = 0; i < labels.numel(); ++i)
    if (labels[i] < 0 || labels[i] >= K)
      throw ArgumentError("loss: label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                          " outside [0, " + std::to_string(K) + ")");
}

// Channel softmax of [B,K,H,W].
template <typename T>
std::shared_ptr<Tensor<T>> softmax_channels(const Tensor<T>& z) {
  const auto B = z.dim(0), K = z.dim(1), HW = z.dim(2) * z.dim(3);
  auto p = std::make_shared<Tensor<T>>(z.shape());
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t i = 0; i < HW; ++i) {
      const T* src = z.data() + b * K * HW + i;
      T* dst = p->data() + b * K * HW + i;
      T mx = src[0];
      for (std::int64_t k = 1; k < K; ++k) mx = std::max(mx, src[k * HW]);
      T s = 0;
      for (std::int64_t k = 0; k < K; ++k) s += (dst[k * HW] = std::exp(src[k * HW] - mx));
      for (std::int64_t k = 0; k < K; ++k) dst[k * HW] /= s;
    }
  return p;
}

}  // namespace loss_detail

template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& logits) {
  return *loss_detail::softmax_channels(logits);
}

// Mean over pixels of -log softmax(logits)[label].
template <typename T>
Var<T> ce_loss(const Var<T>& logits, const LabelMap& labels) {
  loss_detail::check_labels(logits.shape(), labels);
  const auto B = logits.dim(0), K = logits.dim(1), HW = logits.dim(2) * logits.dim(3);
  const T* z = logits.value().data();
  double total = 0;
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t i = 0; i < HW; ++i) {
      const T* px = z + b * K * HW + i;
      T mx = px[0];
      for (std::int64_t k = 1; k < K; ++k) mx = std::max(mx, px[k * HW]);
      double s = 0;
      for (std::int64_t k = 0; k < K; ++k) s += std::exp(double(px[k * HW] - mx));
      total += std::log(s) - double(px[labels[b * HW + i] * HW] - mx);
    }
  const double P = double(B * HW);
  auto lab = std::make_shared<LabelMap>(labels);
  return make_result<T>(Tensor<T>(Shape{}, T(total / P)), {logits}, [logits, lab, B, K, HW, P](const Tensor<T>& g) {
    auto p = loss_detail::softmax_channels(logits.value());
    auto& gz = logits.node().grad_ref();
    const T s = T(g[0] / P);
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t i = 0; i < HW; ++i) {
        const auto y = (*lab)[b * HW + i];
        for (std::int64_t k = 0; k < K; ++k) {
          const auto idx = (b * K + k) * HW + i;
          gz[idx] += s * ((*p)[idx] - (k == y ? T(1) : T(0)));
        }
      }
  });
}

// 1 - mean over all classes of the soft Dice (2 sum p g + eps) / (sum p + sum g + eps),
// sums taken over every pixel of the batch.
template <typename T>
Var<T> dice_loss(const Var<T>& logits, const LabelMap& labels, double eps = kDiceSmooth) {
  loss_detail::check_labels(logits.shape(), labels);
  const auto B = logits.dim(0), K = logits.dim(1), HW = logits.dim(2) * logits.dim(3);
  auto p = loss_detail::softmax_channels(logits.value());
  auto inter = std::make_shared<std::vector<double>>(static_cast<std::size_t>(K), 0.0);
  auto denom = std::make_shared<std::vector<double>>(static_cast<std::size_t>(K), 0.0);
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t k = 0; k < K; ++k)
      for (std::int64_t i = 0; i < HW; ++i) {
        const double pk = (*p)[(b * K + k) * HW + i];
        const bool gk = labels[b * HW + i] == k;
        (*denom)[k] += pk + (gk ? 1.0 : 0.0);
        if (gk) (*inter)[k] += pk;
      }
  double mean = 0;
  for (std::int64_t k = 0; k < K; ++k) mean += (2 * (*inter)[k] + eps) / ((*denom)[k] + eps);
  mean /= double(K);
  auto lab = std::make_shared<LabelMap>(labels);
  return make_result<T>(Tensor<T>(Shape{}, T(1.0 - mean)), {logits},
                        [logits, lab, p, inter, denom, eps, B, K, HW](const Tensor<T>& g) {
    auto& gz = logits.node().grad_ref();
    std::vector<double> dp(static_cast<std::size_t>(K));
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t i = 0; i < HW; ++i) {
        const auto y = (*lab)[b * HW + i];
        double dot = 0;
        for (std::int64_t k = 0; k < K; ++k) {
          const double S = (*denom)[k] + eps, I2 = 2 * (*inter)[k] + eps;
          dp[k] = -(2.0 * (k == y ? 1.0 : 0.0) * S - I2) / (S * S) / double(K) * double(g[0]);
          dot += dp[k] * (*p)[(b * K + k) * HW + i];
        }
        for (std::int64_t k = 0; k < K; ++k) {
          const auto idx = (b * K + k) * HW + i;
          gz[idx] += T((*p)[idx] * (dp[k] - dot));
        }
      }
  });
}

// (CE + Dice) / 2 against ground truth.
template <typename T>
Var<T> sup_loss(const Var<T>& logits, const LabelMap& gt) {
  return weighted_sum<T>({ce_loss(logits, gt), dice_loss(logits, gt)}, {T(0.5), T(0.5)});
}

template <typename T>
Var<T> sup_loss(const Prediction<T>& p, const LabelMap& gt) {
  return sup_loss(p.logits, gt);
}

// CE of the target against the argmax of the source; the label carries no
// gradient back to the source.
template <typename T>
Var<T> semi_loss(const Prediction<T>& target, const Prediction<T>& source) {
  if (target.source == source.source)
    throw ConfigError("semi_loss: '" + target.source + "' cannot supervise itself");
  if (target.logits.shape() != source.logits.shape())
    throw DimensionError("semi_loss: target " + shape_str(target.logits.shape()) + " vs source " +
                         shape_str(source.logits.shape()));
  return ce_loss(target.logits, make_pseudo_label(source));
}

// Scalar parts of one objective evaluation. Supervised terms, then
// consistency terms weighted by lambda1 (between learners) and lambda2
// (from teachers).
struct LossBreakdown {
  std::vector<double> sup;
  std::vector<double> semi_learner;
  std::vector<double> semi_teacher;
  double lambda1 = 0;
  double lambda2 = 0;
  double total = 0;

  // Flat semi1..semiN view: learner terms first.
  std::vector<double> semi() const {
    auto s = semi_learner;
    s.insert(s.end(), semi_teacher.begin(), semi_teacher.end());
    return s;
  }
};

inline LossBreakdown total_loss(std::vector<double> sup, std::vector<double> semi_learner,
                                std::vector<double> semi_teacher, double lambda1, double lambda2) {
  LossBreakdown b{std::move(sup), std::move(semi_learner), std::move(semi_teacher), lambda1, lambda2, 0};
  double s = 0, l1 = 0, l2 = 0;
  for (double v : b.sup) s += v;
  for (double v : b.semi_learner) l1 += v;
  for (double v : b.semi_teacher) l2 += v;
  b.total = s + lambda1 * l1 + lambda2 * l2;
  return b;
}

}  // namespace s4cv
