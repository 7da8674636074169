#include "maskqa/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "maskqa/nets.hpp"
#include "maskqa/neural/layers.hpp"
#include "maskqa/neural/loss.hpp"
#include "maskqa/rng.hpp"

namespace maskqa {

using nn::Module;
using nn::Parameter;
using nn::Tensor;
using Tensor64 = Tensor<double>;

double gradcheck_relative_error(double analytic, double numeric, double scale) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-3 * scale, 1e-8});
  return std::abs(analytic - numeric) / denom;
}

namespace {

using LossFn = std::function<double()>;
using PatternFn = std::function<void(std::vector<std::uint8_t>&)>;

Tensor64 random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  Tensor64 t(std::move(shape));
  for (auto& v : t.data) v = scale * standard_normal(rng);
  return t;
}

Tensor64 random_binary(std::vector<int> shape, Rng& rng) {
  Tensor64 t(std::move(shape));
  for (auto& v : t.data) v = uniform01(rng) < 0.4 ? 1.0 : 0.0;
  return t;
}

std::vector<std::uint8_t> pattern_of(const PatternFn& pattern) {
  std::vector<std::uint8_t> p;
  if (pattern) pattern(p);
  return p;
}

double max_abs(const nn::Buffer<double>& v, double init = 0.0) {
  for (double a : v) init = std::max(init, std::abs(a));
  return init;
}

/// Compares `analytic` against central differences of `loss` for the
/// coordinates of `values` (all of them, or a random subset of `samples`).
/// `scale` is the largest analytic magnitude over the whole model, so
/// structurally zero gradients (a bias feeding a norm) are judged against it.
void compare(nn::Buffer<double>& values, const nn::Buffer<double>& analytic, double scale,
             const LossFn& loss, const PatternFn& pattern, const GradcheckOptions& opt, int samples,
             Rng& rng, GradcheckResult& res) {
  std::vector<std::size_t> idx(values.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  if (samples > 0 && static_cast<std::size_t>(samples) < idx.size()) {
    for (int i = 0; i < samples; ++i) {
      const auto j = static_cast<std::size_t>(uniform_int(rng, i, static_cast<std::int64_t>(idx.size()) - 1));
      std::swap(idx[static_cast<std::size_t>(i)], idx[j]);
    }
    idx.resize(static_cast<std::size_t>(samples));
  }
  loss();
  const auto base = pattern_of(pattern);
  for (std::size_t i : idx) {
    const double orig = values[i];
    bool resolved = false;
    double numeric = 0.0;
    for (double h : {opt.h, opt.h / 100.0}) {
      bool smooth = true;
      auto central = [&](double step) {
        values[i] = orig + step;
        const double lp = loss();
        smooth = smooth && pattern_of(pattern) == base;
        values[i] = orig - step;
        const double lm = loss();
        smooth = smooth && pattern_of(pattern) == base;
        values[i] = orig;
        return (lp - lm) / (2.0 * step);
      };
      // One Richardson step over h and h/2 cancels the O(h^2) term.
      const double d1 = central(h);
      const double d2 = central(h / 2.0);
      if (smooth) {
        numeric = (4.0 * d2 - d1) / 3.0;
        resolved = true;
        break;
      }
    }
    if (!resolved) {
      ++res.kinks_skipped;
      continue;
    }
    res.max_rel_error = std::max(res.max_rel_error, gradcheck_relative_error(analytic[i], numeric, scale));
    ++res.checked;
  }
  loss();
}

/// Loss = sum(w * module(x)); checks the input gradient and every parameter.
void check_module(Module<double>& m, Tensor64 x, Rng& rng, const GradcheckOptions& opt,
                  GradcheckResult& res) {
  Tensor64 y = m.forward(x);
  const Tensor64 w = random_tensor(y.shape, rng);
  auto params = m.parameters();
  for (auto* p : params) p->zero_grad();
  const Tensor64 gx = m.backward(w);
  auto loss = [&]() {
    const Tensor64 out = m.forward(x);
    double s = 0.0;
    for (std::int64_t i = 0; i < out.size(); ++i) s += w.data[i] * out.data[i];
    return s;
  };
  PatternFn pattern = [&](std::vector<std::uint8_t>& p) { m.activation_pattern(p); };
  double scale = max_abs(gx.data);
  for (auto* p : params) scale = max_abs(p->grad.data, scale);
  compare(x.data, gx.data, scale, loss, pattern, opt, 0, rng, res);
  for (auto* p : params) {
    const nn::Buffer<double> g = p->grad.data;
    compare(p->value.data, g, scale, loss, pattern, opt, 0, rng, res);
  }
  ++res.shapes;
}

void randomize(Parameter<double>& p, Rng& rng, double center, double spread) {
  for (auto& v : p.value.data) v = center + spread * standard_normal(rng);
}

GradcheckResult conv_check(const GradcheckOptions& opt, Rng& rng) {
  GradcheckResult res{"conv3d"};
  for (int s = 0; s < opt.random_shapes; ++s) {
    const int cin = static_cast<int>(uniform_int(rng, 1, 3));
    const int cout = static_cast<int>(uniform_int(rng, 1, 3));
    const int stride = static_cast<int>(uniform_int(rng, 1, 2));
    const bool pointwise = s % 5 == 4;
    nn::Conv3d<double> conv("c", cin, cout, pointwise ? 1 : 3, stride, pointwise ? 0 : 1, rng());
    Tensor64 x = random_tensor({static_cast<int>(uniform_int(rng, 1, 2)), cin,
                                static_cast<int>(uniform_int(rng, 2, 5)),
                                static_cast<int>(uniform_int(rng, 2, 5)),
                                static_cast<int>(uniform_int(rng, 2, 5))},
                               rng);
    check_module(conv, std::move(x), rng, opt, res);
  }
  return res;
}

GradcheckResult conv_transpose_check(const GradcheckOptions& opt, Rng& rng) {
  GradcheckResult res{"conv_transpose3d"};
  for (int s = 0; s < opt.random_shapes; ++s) {
    const int cin = static_cast<int>(uniform_int(rng, 1, 3));
    const int cout = static_cast<int>(uniform_int(rng, 1, 3));
    const int stride = static_cast<int>(uniform_int(rng, 1, 2));
    nn::ConvTranspose3d<double> conv("t", cin, cout, 3, stride, 1, stride - 1, rng());
    Tensor64 x = random_tensor({static_cast<int>(uniform_int(rng, 1, 2)), cin,
                                static_cast<int>(uniform_int(rng, 1, 4)),
                                static_cast<int>(uniform_int(rng, 1, 4)),
                                static_cast<int>(uniform_int(rng, 1, 4))},
                               rng);
    check_module(conv, std::move(x), rng, opt, res);
  }
  return res;
}

std::vector<int> random_volume_shape(Rng& rng, int min_side = 1) {
  return {static_cast<int>(uniform_int(rng, 1, 2)), static_cast<int>(uniform_int(rng, 1, 3)),
          static_cast<int>(uniform_int(rng, min_side, 4)), static_cast<int>(uniform_int(rng, min_side, 4)),
          static_cast<int>(uniform_int(rng, min_side, 4))};
}

GradcheckResult instance_norm_check(const GradcheckOptions& opt, Rng& rng) {
  GradcheckResult res{"instance_norm"};
  for (int s = 0; s < opt.random_shapes; ++s) {
    auto shape = random_volume_shape(rng, 2);
    nn::InstanceNorm3d<double> norm("n", shape[1]);
    randomize(norm.gamma(), rng, 1.0, 0.5);
    randomize(norm.beta(), rng, 0.0, 0.5);
    check_module(norm, random_tensor(shape, rng, 2.0), rng, opt, res);
  }
  return res;
}

GradcheckResult prelu_check(const GradcheckOptions& opt, Rng& rng) {
  GradcheckResult res{"prelu"};
  for (int s = 0; s < opt.random_shapes; ++s) {
    auto shape = random_volume_shape(rng);
    nn::PReLU<double> act("a", shape[1]);
    randomize(act.slope(), rng, 0.25, 0.2);
    check_module(act, random_tensor(shape, rng), rng, opt, res);
  }
  return res;
}

GradcheckResult sigmoid_check(const GradcheckOptions& opt, Rng& rng) {
  GradcheckResult res{"sigmoid"};
  for (int s = 0; s < opt.random_shapes; ++s) {
    nn::Sigmoid<double> sig;
    check_module(sig, random_tensor(random_volume_shape(rng), rng, 2.0), rng, opt, res);
  }
  return res;
}

GradcheckResult dense_check(const GradcheckOptions& opt, Rng& rng) {
  GradcheckResult res{"dense"};
  for (int s = 0; s < opt.random_shapes; ++s) {
    const int in = static_cast<int>(uniform_int(rng, 1, 12));
    const int out = static_cast<int>(uniform_int(rng, 1, 8));
    nn::Dense<double> dense("d", in, out, rng());
    check_module(dense, random_tensor({static_cast<int>(uniform_int(rng, 1, 3)), in}, rng), rng, opt, res);
  }
  return res;
}

GradcheckResult soft_dice_check(const GradcheckOptions& opt, Rng& rng) {
  GradcheckResult res{"soft_dice"};
  for (int s = 0; s < opt.random_shapes; ++s) {
    const auto shape = random_volume_shape(rng);
    Tensor64 x = random_tensor(shape, rng, 2.0);
    const Tensor64 t = random_binary(shape, rng);
    const auto r = nn::soft_dice_loss(x, t);
    compare(x.data, r.grad.data, max_abs(r.grad.data), [&]() { return nn::soft_dice_loss(x, t).value; }, nullptr, opt, 0, rng, res);
    ++res.shapes;
  }
  return res;
}

GradcheckResult kl_check(const GradcheckOptions& opt, Rng& rng) {
  GradcheckResult res{"kl_divergence"};
  for (int s = 0; s < opt.random_shapes; ++s) {
    const std::vector<int> shape{static_cast<int>(uniform_int(rng, 1, 3)), static_cast<int>(uniform_int(rng, 1, 10))};
    Tensor64 mean = random_tensor(shape, rng);
    Tensor64 logvar = random_tensor(shape, rng, 0.5);
    const auto r = nn::kl_divergence(mean, logvar);
    auto loss = [&]() { return nn::kl_divergence(mean, logvar).value; };
    const double scale = max_abs(r.grad_logvar.data, max_abs(r.grad_mean.data));
    compare(mean.data, r.grad_mean.data, scale, loss, nullptr, opt, 0, rng, res);
    compare(logvar.data, r.grad_logvar.data, scale, loss, nullptr, opt, 0, rng, res);
    ++res.shapes;
  }
  return res;
}

GradcheckResult chain_check(const GradcheckOptions& opt, Rng& rng) {
  GradcheckResult res{"chain(conv,norm,prelu)"};
  for (int s = 0; s < opt.random_shapes; ++s) {
    const int cin = static_cast<int>(uniform_int(rng, 1, 2));
    const int cout = static_cast<int>(uniform_int(rng, 1, 3));
    auto unit = nn::make_conv_unit<double>("u", cin, cout, static_cast<int>(uniform_int(rng, 1, 2)), rng());
    auto shape = random_volume_shape(rng, 3);
    shape[1] = cin;
    check_module(*unit, random_tensor(shape, rng), rng, opt, res);
  }
  return res;
}

GradcheckResult residual_check(const GradcheckOptions& opt, Rng& rng) {
  GradcheckResult res{"residual_unit"};
  for (int s = 0; s < opt.random_shapes; ++s) {
    const int cin = static_cast<int>(uniform_int(rng, 1, 2));
    const int cout = static_cast<int>(uniform_int(rng, 1, 3));
    nn::ResidualUnit<double> unit("r", cin, cout, static_cast<int>(uniform_int(rng, 1, 2)),
                                  static_cast<int>(uniform_int(rng, 1, 2)), rng());
    auto shape = random_volume_shape(rng, 3);
    shape[1] = cin;
    check_module(unit, random_tensor(shape, rng), rng, opt, res);
  }
  return res;
}

GradcheckResult network_check(const std::string& name, Network<double>& net, const Dims& dims,
                              const GradcheckOptions& opt, Rng& rng) {
  GradcheckResult res{name};
  const auto& spec = net.spec();
  Tensor64 x = random_binary({1, spec.in_channels, dims.z, dims.y, dims.x}, rng);
  for (auto& v : x.data) v += 0.1 * standard_normal(rng);
  const Tensor64 target = random_binary({1, spec.out_channels, dims.z, dims.y, dims.x}, rng);
  auto params = net.parameters();
  for (auto* p : params) p->zero_grad();
  const Tensor64 logits = net.forward(x);
  auto r = nn::soft_dice_loss(logits, target);
  const Tensor64 gx = net.backward(r.grad);
  auto loss = [&]() { return net.loss(x, target); };
  PatternFn pattern = [&](std::vector<std::uint8_t>& p) { net.activation_pattern(p); };
  double scale = max_abs(gx.data);
  for (auto* p : params) scale = max_abs(p->grad.data, scale);
  compare(x.data, gx.data, scale, loss, pattern, opt, opt.samples_per_tensor, rng, res);
  for (auto* p : params) {
    const nn::Buffer<double> g = p->grad.data;
    compare(p->value.data, g, scale, loss, pattern, opt, opt.samples_per_tensor, rng, res);
  }
  res.shapes = 1;
  return res;
}

}  // namespace

std::vector<GradcheckResult> gradcheck_primitives(const GradcheckOptions& opt) {
  Rng rng(opt.seed);
  std::vector<GradcheckResult> out;
  out.push_back(conv_check(opt, rng));
  out.push_back(conv_transpose_check(opt, rng));
  out.push_back(instance_norm_check(opt, rng));
  out.push_back(prelu_check(opt, rng));
  out.push_back(sigmoid_check(opt, rng));
  out.push_back(dense_check(opt, rng));
  out.push_back(soft_dice_check(opt, rng));
  out.push_back(kl_check(opt, rng));
  out.push_back(chain_check(opt, rng));
  out.push_back(residual_check(opt, rng));
  return out;
}

std::vector<GradcheckResult> gradcheck_networks(const GradcheckOptions& opt) {
  Rng rng(derive_seed(opt.seed, {1}));
  std::vector<GradcheckResult> out;
  {
    NetworkSpec spec;
    spec.kind = NetworkKind::DAE;
    spec.in_channels = spec.out_channels = 7;
    spec.channels = {8, 16, 32};
    spec.strides = {2, 2};
    spec.num_res_units = 2;
    const Dims dims{8, 8, 8};
    UNet<double> net(spec, dims, opt.seed);
    out.push_back(network_check("unet_desk_8^3", net, dims, opt, rng));
  }
  {
    NetworkSpec spec;
    spec.kind = NetworkKind::VAESingle;
    spec.in_channels = spec.out_channels = 1;
    spec.channels = {8, 16, 32};
    spec.strides = {2, 2, 2};
    spec.latent_size = 8;
    spec.kl_weight = 0.1;
    const Dims dims{16, 16, 16};
    VarAutoEncoder<double> net(spec, dims, opt.seed);
    Tensor64 eps({1, spec.latent_size});
    for (auto& e : eps.data) e = standard_normal(rng);
    net.set_fixed_epsilon(eps);
    out.push_back(network_check("vae_desk_16^3", net, dims, opt, rng));
  }
  return out;
}

}  // namespace maskqa
