#pragma once

#include <span>

#include "maskqa/neural/tensor.hpp"

namespace maskqa::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update from each parameter's accumulated
/// gradient. Increments every parameter's step count.
template <class T>
void adam_step(std::span<Parameter<T>* const> params, const AdamConfig& cfg = {});

template <class T>
void zero_grad(std::span<Parameter<T>* const> params) {
  for (auto* p : params) p->zero_grad();
}

template <class T>
std::int64_t parameter_count(std::span<Parameter<T>* const> params) {
  std::int64_t n = 0;
  for (auto* p : params) n += p->value.size();
  return n;
}

}  // namespace maskqa::nn
