#include "maskqa/neural/loss.hpp"

#include <cmath>

namespace maskqa::nn {

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> p(x.shape);
  for (std::int64_t i = 0; i < x.size(); ++i) p.data[i] = T(1) / (T(1) + std::exp(-x.data[i]));
  return p;
}

template <class T>
LossResult<T> soft_dice_loss(const Tensor<T>& logits, const Tensor<T>& target, double smoothing) {
  require_same_shape(logits, target, "soft_dice_loss");
  require(logits.rank() >= 2, ErrorKind::DimensionMismatch, "soft_dice_loss: need (N, C, ...)");
  const int N = logits.dim(0), C = logits.dim(1);
  const std::int64_t S = logits.spatial_size();
  const Tensor<T> p = sigmoid(logits);
  LossResult<T> res;
  res.grad = Tensor<T>(logits.shape);
  const double scale = 1.0 / (static_cast<double>(N) * C);
  double total = 0.0;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const std::int64_t off = (static_cast<std::int64_t>(n) * C + c) * S;
      double inter = 0.0, sp = 0.0, st = 0.0;
      for (std::int64_t v = 0; v < S; ++v) {
        inter += static_cast<double>(p.data[off + v]) * target.data[off + v];
        sp += p.data[off + v];
        st += target.data[off + v];
      }
      const double num = 2.0 * inter + smoothing;
      const double den = sp + st + smoothing;
      total += 1.0 - num / den;
      // d(1 - num/den)/dp_v = -(2 t_v den - num) / den^2
      const double inv_den2 = 1.0 / (den * den);
      for (std::int64_t v = 0; v < S; ++v) {
        const double pv = p.data[off + v];
        const double dp = -(2.0 * target.data[off + v] * den - num) * inv_den2;
        res.grad.data[off + v] = static_cast<T>(scale * dp * pv * (1.0 - pv));
      }
    }
  res.value = total * scale;
  return res;
}

template <class T>
KlResult<T> kl_divergence(const Tensor<T>& mean, const Tensor<T>& logvar) {
  require_same_shape(mean, logvar, "kl_divergence");
  require(mean.rank() == 2, ErrorKind::DimensionMismatch, "kl_divergence: need (N, latent)");
  const int N = mean.dim(0);
  KlResult<T> res;
  res.grad_mean = Tensor<T>(mean.shape);
  res.grad_logvar = Tensor<T>(mean.shape);
  double total = 0.0;
  for (std::int64_t i = 0; i < mean.size(); ++i) {
    const double m = mean.data[i], lv = logvar.data[i];
    const double e = std::exp(lv);
    total += 0.5 * (e + m * m - 1.0 - lv);
    res.grad_mean.data[i] = static_cast<T>(m / N);
    res.grad_logvar.data[i] = static_cast<T>(0.5 * (e - 1.0) / N);
  }
  res.value = total / N;
  return res;
}

template Tensor<float> sigmoid<float>(const Tensor<float>&);
template Tensor<double> sigmoid<double>(const Tensor<double>&);
template LossResult<float> soft_dice_loss<float>(const Tensor<float>&, const Tensor<float>&, double);
template LossResult<double> soft_dice_loss<double>(const Tensor<double>&, const Tensor<double>&,
                                                   double);
template KlResult<float> kl_divergence<float>(const Tensor<float>&, const Tensor<float>&);
template KlResult<double> kl_divergence<double>(const Tensor<double>&, const Tensor<double>&);

}  // namespace maskqa::nn
