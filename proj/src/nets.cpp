#include "maskqa/nets.hpp"

#include <cmath>

#include "maskqa/error.hpp"

namespace maskqa {

using nn::Tensor;

const char* network_kind_name(NetworkKind kind) {
  switch (kind) {
    case NetworkKind::DAE: return "dae";
    case NetworkKind::VAESingle: return "vae-single";
    case NetworkKind::VAEMulti: return "vae-multi";
  }
  return "unknown";
}

NetworkKind parse_network_kind(const std::string& text) {
  if (text == "dae") return NetworkKind::DAE;
  if (text == "vae-single" || text == "vae_single") return NetworkKind::VAESingle;
  if (text == "vae-multi" || text == "vae_multi") return NetworkKind::VAEMulti;
  fail(ErrorKind::ConfigParse, "unknown network kind '" + text + "'");
}

void NetworkSpec::validate() const {
  require(in_channels > 0 && out_channels > 0, ErrorKind::InvalidArgument,
          "network: channel counts must be positive");
  require(!channels.empty(), ErrorKind::InvalidArgument, "network: channels list is empty");
  for (int c : channels) require(c > 0, ErrorKind::InvalidArgument, "network: channels must be > 0");
  for (int s : strides) require(s >= 1, ErrorKind::InvalidArgument, "network: strides must be >= 1");
  require(num_res_units >= 0, ErrorKind::InvalidArgument, "network: num_res_units must be >= 0");
  if (kind == NetworkKind::DAE) {
    require(channels.size() >= 2 && strides.size() == channels.size() - 1,
            ErrorKind::InvalidArgument, "U-Net: need len(strides) == len(channels) - 1 >= 1");
  } else {
    require(strides.size() == channels.size(), ErrorKind::InvalidArgument,
            "VAE: need one stride per channels entry");
    require(latent_size > 0, ErrorKind::InvalidArgument, "VAE: latent_size must be positive");
    require(kl_weight >= 0.0, ErrorKind::InvalidArgument, "VAE: kl_weight must be >= 0");
  }
}

int NetworkSpec::total_stride() const {
  int p = 1;
  for (int s : strides) p *= s;
  return p;
}

namespace {

void check_divisible(const NetworkSpec& spec, const Dims& dims) {
  const int p = spec.total_stride();
  for (int a = 0; a < 3; ++a)
    require(dims[a] > 0 && dims[a] % p == 0, ErrorKind::InvalidArgument,
            "network: input dims must be divisible by the stride product " + std::to_string(p));
}

// Structural planning ---------------------------------------------------------

struct Planner {
  NetworkPlan plan;

  void add(LayerSpec l) {
    plan.parameter_count += l.parameter_count;
    plan.layers.push_back(std::move(l));
  }

  Dims conv(const std::string& name, int cin, int cout, int kernel, int stride, int pad, Dims d) {
    Dims o{nn::conv_output_size(d.x, kernel, stride, pad), nn::conv_output_size(d.y, kernel, stride, pad),
           nn::conv_output_size(d.z, kernel, stride, pad)};
    add({LayerKind::Conv3d, name, cin, cout, kernel, stride, pad, 0, o,
         static_cast<std::int64_t>(cout) * cin * kernel * kernel * kernel + cout});
    return o;
  }
  Dims conv_t(const std::string& name, int cin, int cout, int stride, Dims d) {
    Dims o{nn::conv_transpose_output_size(d.x, 3, stride, 1, stride - 1),
           nn::conv_transpose_output_size(d.y, 3, stride, 1, stride - 1),
           nn::conv_transpose_output_size(d.z, 3, stride, 1, stride - 1)};
    add({LayerKind::ConvTranspose3d, name, cin, cout, 3, stride, 1, stride - 1, o,
         static_cast<std::int64_t>(cin) * cout * 27 + cout});
    return o;
  }
  void norm_act(const std::string& name, int c, Dims d) {
    add({LayerKind::InstanceNorm, name + ".norm", c, c, 0, 1, 0, 0, d, 2LL * c});
    add({LayerKind::PReLU, name + ".act", c, c, 0, 1, 0, 0, d, c});
  }
  Dims conv_unit(const std::string& name, int cin, int cout, int stride, Dims d) {
    Dims o = conv(name + ".conv", cin, cout, 3, stride, 1, d);
    norm_act(name, cout, o);
    return o;
  }
  Dims residual(const std::string& name, int cin, int cout, int stride, int sub, Dims d) {
    Dims o = d;
    for (int u = 0; u < sub; ++u)
      o = conv_unit(name + ".unit" + std::to_string(u), u == 0 ? cin : cout, cout, u == 0 ? stride : 1, o);
    if (stride != 1 || cin != cout) conv(name + ".skip", cin, cout, 1, stride, 0, d);
    return o;
  }
  Dims block(const std::string& name, int cin, int cout, int stride, int nres, Dims d) {
    return nres > 0 ? residual(name, cin, cout, stride, nres, d) : conv_unit(name, cin, cout, stride, d);
  }
  Dims up(const std::string& name, int cin, int cout, int stride, int nres, Dims d) {
    Dims o = conv_t(name + ".upconv", cin, cout, stride, d);
    norm_act(name, cout, o);
    if (nres > 0) o = residual(name + ".res", cout, cout, 1, 1, o);
    return o;
  }
  void dense(const std::string& name, int in, int out) {
    add({LayerKind::Dense, name, in, out, 0, 1, 0, 0, Dims{}, static_cast<std::int64_t>(in) * out + out});
  }
};

Dims divide(Dims d, int s) { return {d.x / s, d.y / s, d.z / s}; }

}  // namespace

NetworkPlan plan_network(const NetworkSpec& spec, const Dims& input_dims) {
  spec.validate();
  check_divisible(spec, input_dims);
  Planner p;
  p.plan.input_dims = input_dims;
  const auto& c = spec.channels;
  const auto& s = spec.strides;
  const int L = static_cast<int>(c.size());
  const int nres = spec.num_res_units;
  if (spec.kind == NetworkKind::DAE) {
    std::vector<Dims> level(L);
    Dims d = input_dims;
    for (int i = 0; i < L - 1; ++i) {
      d = p.block("down" + std::to_string(i), i == 0 ? spec.in_channels : c[i - 1], c[i], s[i], nres, d);
      level[i] = d;
    }
    Dims u = p.block("bottom", c[L - 2], c[L - 1], 1, nres, d);
    for (int i = L - 2; i >= 0; --i) {
      const int upc = c[i] + (i < L - 2 ? c[i] : c[L - 1]);
      u = p.up("up" + std::to_string(i), upc, i == 0 ? c[0] : c[i - 1], s[i], nres, u);
    }
    p.plan.output_dims = p.conv("head", c[0], spec.out_channels, 1, 1, 0, u);
  } else {
    Dims d = input_dims;
    for (int i = 0; i < L; ++i)
      d = p.block("enc" + std::to_string(i), i == 0 ? spec.in_channels : c[i - 1], c[i], s[i], nres, d);
    const int flat = static_cast<int>(d.count() * c[L - 1]);
    p.dense("mean", flat, spec.latent_size);
    p.dense("logvar", flat, spec.latent_size);
    p.dense("expand", spec.latent_size, flat);
    p.add({LayerKind::PReLU, "expand.act", c[L - 1], c[L - 1], 0, 1, 0, 0, d, c[L - 1]});
    for (int i = L - 1; i >= 0; --i)
      d = p.up("dec" + std::to_string(i), c[i], i == 0 ? c[0] : c[i - 1], s[i], nres, d);
    p.plan.output_dims = p.conv("head", c[0], spec.out_channels, 1, 1, 0, d);
  }
  return p.plan;
}

// Network base ---------------------------------------------------------------

template <class T>
double Network<T>::loss_and_backward(const Tensor<T>& x, const Tensor<T>& target) {
  const Tensor<T> logits = forward(x);
  auto res = nn::soft_dice_loss(logits, target);
  const double total = res.value + regularizer();
  backward(res.grad);
  return total;
}

template <class T>
double Network<T>::loss(const Tensor<T>& x, const Tensor<T>& target) {
  const Tensor<T> logits = forward(x);
  return nn::soft_dice_loss(logits, target).value + regularizer();
}

namespace {

template <class T>
std::unique_ptr<nn::Module<T>> make_block(const std::string& name, int cin, int cout, int stride,
                                          int nres, std::uint64_t seed) {
  if (nres > 0) return std::make_unique<nn::ResidualUnit<T>>(name, cin, cout, stride, nres, seed);
  return nn::make_conv_unit<T>(name, cin, cout, stride, seed);
}

template <class T>
std::unique_ptr<nn::Sequential<T>> make_up(const std::string& name, int cin, int cout, int stride,
                                           int nres, std::uint64_t seed) {
  auto seq = std::make_unique<nn::Sequential<T>>();
  seq->template emplace<nn::ConvTranspose3d<T>>(name + ".upconv", cin, cout, 3, stride, 1, stride - 1, seed);
  seq->template emplace<nn::InstanceNorm3d<T>>(name + ".norm", cout);
  seq->template emplace<nn::PReLU<T>>(name + ".act", cout);
  if (nres > 0) seq->template emplace<nn::ResidualUnit<T>>(name + ".res", cout, cout, 1, 1, seed);
  return seq;
}

template <class T>
void check_input(const NetworkSpec& spec, const Dims& dims, const Tensor<T>& x) {
  require(x.rank() == 5 && x.dim(1) == spec.in_channels && x.dim(2) == dims.z &&
              x.dim(3) == dims.y && x.dim(4) == dims.x,
          ErrorKind::DimensionMismatch,
          "network input " + nn::shape_string(x.shape) + " does not match the model (" +
              std::to_string(spec.in_channels) + " channels, " + std::to_string(dims.x) + "x" +
              std::to_string(dims.y) + "x" + std::to_string(dims.z) + ")");
}

}  // namespace

// UNet -------------------------------------------------------------------------

template <class T>
UNet<T>::UNet(const NetworkSpec& spec, const Dims& input_dims, std::uint64_t seed)
    : Network<T>(spec, input_dims) {
  spec.validate();
  require(spec.kind == NetworkKind::DAE, ErrorKind::InvalidArgument, "UNet needs a DAE spec");
  check_divisible(spec, input_dims);
  const auto& c = spec.channels;
  const auto& s = spec.strides;
  const int L = static_cast<int>(c.size());
  const int nres = spec.num_res_units;
  for (int i = 0; i < L - 1; ++i) {
    down_.push_back(make_block<T>("down" + std::to_string(i), i == 0 ? spec.in_channels : c[i - 1],
                                  c[i], s[i], nres, seed));
    skip_channels_.push_back(c[i]);
  }
  bottom_ = make_block<T>("bottom", c[L - 2], c[L - 1], 1, nres, seed);
  up_.resize(static_cast<std::size_t>(L - 1));
  for (int i = L - 2; i >= 0; --i) {
    const int upc = c[i] + (i < L - 2 ? c[i] : c[L - 1]);
    up_[i] = make_up<T>("up" + std::to_string(i), upc, i == 0 ? c[0] : c[i - 1], s[i], nres, seed);
  }
  head_ = std::make_unique<nn::Conv3d<T>>("head", c[0], spec.out_channels, 1, 1, 0, seed);
}

template <class T>
Tensor<T> UNet<T>::forward(const Tensor<T>& x) {
  check_input(this->spec_, this->dims_, x);
  std::vector<Tensor<T>> skips;
  skips.reserve(down_.size());
  Tensor<T> h = x;
  for (auto& d : down_) {
    h = d->forward(h);
    skips.push_back(h);
  }
  Tensor<T> u = bottom_->forward(h);
  for (int i = static_cast<int>(up_.size()) - 1; i >= 0; --i)
    u = up_[i]->forward(nn::concat_channels(skips[i], u));
  return head_->forward(u);
}

template <class T>
Tensor<T> UNet<T>::backward(const Tensor<T>& grad_logits) {
  Tensor<T> g = head_->backward(grad_logits);
  std::vector<Tensor<T>> skip_grads(up_.size());
  for (std::size_t i = 0; i < up_.size(); ++i) {
    auto [gs, gu] = nn::split_channels(up_[i]->backward(g), skip_channels_[i]);
    skip_grads[i] = std::move(gs);
    g = std::move(gu);
  }
  nn::add_inplace(skip_grads.back(), bottom_->backward(g));
  for (int i = static_cast<int>(down_.size()) - 1; i >= 0; --i) {
    Tensor<T> gx = down_[i]->backward(skip_grads[i]);
    if (i == 0) return gx;
    nn::add_inplace(skip_grads[i - 1], gx);
  }
  return {};
}

template <class T>
std::vector<nn::Parameter<T>*> UNet<T>::parameters() {
  std::vector<nn::Parameter<T>*> p;
  for (auto& d : down_) d->parameters(p);
  bottom_->parameters(p);
  for (int i = static_cast<int>(up_.size()) - 1; i >= 0; --i) up_[i]->parameters(p);
  head_->parameters(p);
  return p;
}

template <class T>
void UNet<T>::activation_pattern(std::vector<std::uint8_t>& out) const {
  for (const auto& d : down_) d->activation_pattern(out);
  bottom_->activation_pattern(out);
  for (const auto& u : up_) u->activation_pattern(out);
}

// VarAutoEncoder ---------------------------------------------------------------

template <class T>
VarAutoEncoder<T>::VarAutoEncoder(const NetworkSpec& spec, const Dims& input_dims, std::uint64_t seed)
    : Network<T>(spec, input_dims) {
  spec.validate();
  require(spec.is_vae(), ErrorKind::InvalidArgument, "VarAutoEncoder needs a VAE spec");
  check_divisible(spec, input_dims);
  const auto& c = spec.channels;
  const auto& s = spec.strides;
  const int L = static_cast<int>(c.size());
  const int nres = spec.num_res_units;
  for (int i = 0; i < L; ++i)
    encoder_.push(make_block<T>("enc" + std::to_string(i), i == 0 ? spec.in_channels : c[i - 1], c[i],
                                s[i], nres, seed));
  const Dims bottleneck = divide(input_dims, spec.total_stride());
  bottleneck_shape_ = {c[L - 1], bottleneck.z, bottleneck.y, bottleneck.x};
  const int flat = static_cast<int>(bottleneck.count() * c[L - 1]);
  mean_head_ = std::make_unique<nn::Dense<T>>("mean", flat, spec.latent_size, seed);
  logvar_head_ = std::make_unique<nn::Dense<T>>("logvar", flat, spec.latent_size, seed);
  expand_ = std::make_unique<nn::Dense<T>>("expand", spec.latent_size, flat, seed);
  expand_act_ = std::make_unique<nn::PReLU<T>>("expand.act", c[L - 1]);
  for (int i = L - 1; i >= 0; --i)
    decoder_.push(make_up<T>("dec" + std::to_string(i), c[i], i == 0 ? c[0] : c[i - 1], s[i], nres, seed));
  head_ = std::make_unique<nn::Conv3d<T>>("head", c[0], spec.out_channels, 1, 1, 0, seed);
}

template <class T>
void VarAutoEncoder<T>::set_latent_mode(LatentMode mode, std::uint64_t seed) {
  mode_ = mode;
  rng_.seed(seed);
}

template <class T>
Tensor<T> VarAutoEncoder<T>::forward(const Tensor<T>& x) {
  check_input(this->spec_, this->dims_, x);
  Tensor<T> h = encoder_.forward(x);
  encoded_shape_ = h.shape;
  const int N = h.dim(0);
  h.shape = {N, static_cast<int>(h.sample_size())};
  mean_ = mean_head_->forward(h);
  logvar_ = logvar_head_->forward(h);
  if (fixed_eps_) {
    require(fixed_eps_->shape == mean_.shape, ErrorKind::DimensionMismatch,
            "VAE: fixed epsilon shape mismatch");
    eps_ = *fixed_eps_;
  } else {
    eps_ = Tensor<T>(mean_.shape);
    if (mode_ == LatentMode::Sample)
      for (auto& e : eps_.data) e = static_cast<T>(standard_normal(rng_));
  }
  latent_ = Tensor<T>(mean_.shape);
  for (std::int64_t i = 0; i < latent_.size(); ++i)
    latent_.data[i] = mean_.data[i] + std::exp(logvar_.data[i] / T(2)) * eps_.data[i];
  Tensor<T> e = expand_->forward(latent_);
  e.shape = {N, bottleneck_shape_[0], bottleneck_shape_[1], bottleneck_shape_[2], bottleneck_shape_[3]};
  e = expand_act_->forward(e);
  return head_->forward(decoder_.forward(e));
}

template <class T>
Tensor<T> VarAutoEncoder<T>::backward(const Tensor<T>& grad_logits) {
  require(!latent_.empty(), ErrorKind::Logic, "VAE: backward before forward");
  Tensor<T> g = expand_act_->backward(decoder_.backward(head_->backward(grad_logits)));
  const int N = g.dim(0);
  g.shape = {N, static_cast<int>(g.sample_size())};
  const Tensor<T> gz = expand_->backward(g);
  Tensor<T> gmean = gz;
  Tensor<T> glogvar(gz.shape);
  for (std::int64_t i = 0; i < gz.size(); ++i)
    glogvar.data[i] = gz.data[i] * eps_.data[i] * std::exp(logvar_.data[i] / T(2)) / T(2);
  if (this->spec_.kl_weight > 0.0) {
    const auto kl = nn::kl_divergence(mean_, logvar_);
    const T w = static_cast<T>(this->spec_.kl_weight);
    for (std::int64_t i = 0; i < gz.size(); ++i) {
      gmean.data[i] += w * kl.grad_mean.data[i];
      glogvar.data[i] += w * kl.grad_logvar.data[i];
    }
  }
  Tensor<T> gflat = mean_head_->backward(gmean);
  nn::add_inplace(gflat, logvar_head_->backward(glogvar));
  gflat.shape = encoded_shape_;
  return encoder_.backward(gflat);
}

template <class T>
double VarAutoEncoder<T>::regularizer() const {
  if (this->spec_.kl_weight == 0.0 || mean_.empty()) return 0.0;
  return this->spec_.kl_weight * nn::kl_divergence(mean_, logvar_).value;
}

template <class T>
std::vector<nn::Parameter<T>*> VarAutoEncoder<T>::parameters() {
  std::vector<nn::Parameter<T>*> p;
  encoder_.parameters(p);
  mean_head_->parameters(p);
  logvar_head_->parameters(p);
  expand_->parameters(p);
  expand_act_->parameters(p);
  decoder_.parameters(p);
  head_->parameters(p);
  return p;
}

template <class T>
void VarAutoEncoder<T>::activation_pattern(std::vector<std::uint8_t>& out) const {
  encoder_.activation_pattern(out);
  expand_act_->activation_pattern(out);
  decoder_.activation_pattern(out);
}

template <class T>
std::unique_ptr<Network<T>> build_network(const NetworkSpec& spec, const Dims& input_dims,
                                          std::uint64_t seed) {
  if (spec.kind == NetworkKind::DAE) return std::make_unique<UNet<T>>(spec, input_dims, seed);
  return std::make_unique<VarAutoEncoder<T>>(spec, input_dims, seed);
}

double vae_kl_term(const Tensor<double>& mean, const Tensor<double>& logvar) {
  return nn::kl_divergence(mean, logvar).value;
}

template <class T>
double vae_loss(const Tensor<T>& recon_logits, const Tensor<T>& target, const Tensor<T>& mean,
                const Tensor<T>& logvar, double kl_weight) {
  const double dice = nn::soft_dice_loss(recon_logits, target).value;
  if (kl_weight == 0.0) return dice;
  return dice + kl_weight * nn::kl_divergence(mean, logvar).value;
}

template <class T>
Tensor<T> to_tensor(const MultiChannelVolume& vol) {
  return to_batch<T>({&vol});
}

template <class T>
Tensor<T> to_batch(const std::vector<const MultiChannelVolume*>& vols) {
  require(!vols.empty(), ErrorKind::InvalidArgument, "to_batch: no volumes");
  const auto& first = *vols.front();
  Tensor<T> t({static_cast<int>(vols.size()), first.channels(), first.dims().z, first.dims().y,
               first.dims().x});
  for (std::size_t n = 0; n < vols.size(); ++n) {
    require(vols[n]->channels() == first.channels() && vols[n]->dims() == first.dims(),
            ErrorKind::DimensionMismatch, "to_batch: volumes differ in shape");
    std::copy(vols[n]->values().begin(), vols[n]->values().end(), t.sample(static_cast<int>(n)));
  }
  return t;
}

template class Network<float>;
template class Network<double>;
template class UNet<float>;
template class UNet<double>;
template class VarAutoEncoder<float>;
template class VarAutoEncoder<double>;
template std::unique_ptr<Network<float>> build_network<float>(const NetworkSpec&, const Dims&, std::uint64_t);
template std::unique_ptr<Network<double>> build_network<double>(const NetworkSpec&, const Dims&, std::uint64_t);
template double vae_loss<float>(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                const Tensor<float>&, double);
template double vae_loss<double>(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                                 const Tensor<double>&, double);
template Tensor<float> to_tensor<float>(const MultiChannelVolume&);
template Tensor<double> to_tensor<double>(const MultiChannelVolume&);
template Tensor<float> to_batch<float>(const std::vector<const MultiChannelVolume*>&);
template Tensor<double> to_batch<double>(const std::vector<const MultiChannelVolume*>&);

}  // namespace maskqa
