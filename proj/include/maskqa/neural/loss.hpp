#pragma once

#include "maskqa/neural/tensor.hpp"

namespace maskqa::nn {

inline constexpr double kDiceSmoothing = 1e-5;

template <class T>
struct LossResult {
  double value = 0.0;
  Tensor<T> grad;  // d value / d input
};

/// Mean over (sample, channel) of 1 - (2 Σ p t + s) / (Σ p + Σ t + s) with
/// p = sigmoid(logits).
template <class T>
LossResult<T> soft_dice_loss(const Tensor<T>& logits, const Tensor<T>& target,
                             double smoothing = kDiceSmoothing);

/// KL(N(mean, exp(logvar)) || N(0, I)) summed over latent units, averaged
/// over the batch. Gradients are returned for mean and log-variance.
template <class T>
struct KlResult {
  double value = 0.0;
  Tensor<T> grad_mean;
  Tensor<T> grad_logvar;
};

template <class T>
KlResult<T> kl_divergence(const Tensor<T>& mean, const Tensor<T>& logvar);

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x);

}  // namespace maskqa::nn
