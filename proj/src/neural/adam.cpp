#include "maskqa/neural/adam.hpp"

#include <cmath>

namespace maskqa::nn {

template <class T>
void adam_step(std::span<Parameter<T>* const> params, const AdamConfig& cfg) {
  for (Parameter<T>* p : params) {
    require(p->grad.shape == p->value.shape && p->m.shape == p->value.shape &&
                p->v.shape == p->value.shape,
            ErrorKind::DimensionMismatch, "adam: state shape mismatch for " + p->name);
    ++p->step;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p->step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p->step));
    const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
    for (std::int64_t i = 0; i < p->value.size(); ++i) {
      const T g = p->grad.data[i];
      T& m = p->m.data[i];
      T& v = p->v.data[i];
      m = b1 * m + (T(1) - b1) * g;
      v = b2 * v + (T(1) - b2) * g * g;
      const double mhat = m / c1;
      const double vhat = v / c2;
      p->value.data[i] -= static_cast<T>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

template void adam_step<float>(std::span<Parameter<float>* const>, const AdamConfig&);
template void adam_step<double>(std::span<Parameter<double>* const>, const AdamConfig&);

}  // namespace maskqa::nn
