#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "maskqa/neural/layers.hpp"
#include "maskqa/neural/loss.hpp"
#include "maskqa/rng.hpp"
#include "maskqa/voxelgrid.hpp"

namespace maskqa {

enum class NetworkKind { DAE, VAESingle, VAEMulti };

const char* network_kind_name(NetworkKind kind);
NetworkKind parse_network_kind(const std::string& text);

/// Architecture description. U-Nets take one stride fewer than channels;
/// the VAE encoder takes one stride per channel entry.
struct NetworkSpec {
  NetworkKind kind = NetworkKind::DAE;
  int in_channels = 1;
  int out_channels = 1;
  std::vector<int> channels;
  std::vector<int> strides;
  int num_res_units = 0;
  int latent_size = 0;     // VAE kinds only
  double kl_weight = 1e-3; // VAE kinds only

  bool is_vae() const { return kind != NetworkKind::DAE; }
  void validate() const;
  /// Product of strides; input dims must be divisible by it on every axis.
  int total_stride() const;
  bool operator==(const NetworkSpec&) const = default;
};

enum class LayerKind { Conv3d, ConvTranspose3d, InstanceNorm, PReLU, Sigmoid, Dense };

struct LayerSpec {
  LayerKind kind = LayerKind::Conv3d;
  std::string name;
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 0;
  int stride = 1;
  int padding = 0;
  int output_padding = 0;
  Dims out_dims;  // spatial output; Dense layers leave this zero
  std::int64_t parameter_count = 0;
};

/// Structural description of a network, computed without allocating weights.
struct NetworkPlan {
  std::vector<LayerSpec> layers;
  std::int64_t parameter_count = 0;
  Dims input_dims;
  Dims output_dims;
};

NetworkPlan plan_network(const NetworkSpec& spec, const Dims& input_dims);

/// Trainable encoder-decoder producing per-channel logits at input size.
template <class T>
class Network {
 public:
  virtual ~Network() = default;

  /// (N, in_channels, D, H, W) -> logits (N, out_channels, D, H, W).
  virtual nn::Tensor<T> forward(const nn::Tensor<T>& x) = 0;
  /// Back-propagates d loss / d logits plus any internal regulariser and
  /// returns the input gradient.
  virtual nn::Tensor<T> backward(const nn::Tensor<T>& grad_logits) = 0;
  /// Extra loss added by the network itself for the last forward pass.
  virtual double regularizer() const { return 0.0; }

  virtual std::vector<nn::Parameter<T>*> parameters() = 0;
  virtual void activation_pattern(std::vector<std::uint8_t>& out) const = 0;

  const NetworkSpec& spec() const { return spec_; }
  const Dims& input_dims() const { return dims_; }

  /// Forward, soft Dice (plus regulariser), backward. Gradients accumulate.
  double loss_and_backward(const nn::Tensor<T>& x, const nn::Tensor<T>& target);
  /// Same loss without touching gradients.
  double loss(const nn::Tensor<T>& x, const nn::Tensor<T>& target);

 protected:
  Network(NetworkSpec spec, Dims dims) : spec_(std::move(spec)), dims_(dims) {}

  NetworkSpec spec_;
  Dims dims_;
};

/// Residual 3D U-Net with channel-concatenating skips and a final 1x1x1
/// convolution to logits.
template <class T>
class UNet final : public Network<T> {
 public:
  UNet(const NetworkSpec& spec, const Dims& input_dims, std::uint64_t seed);

  nn::Tensor<T> forward(const nn::Tensor<T>& x) override;
  nn::Tensor<T> backward(const nn::Tensor<T>& grad_logits) override;
  std::vector<nn::Parameter<T>*> parameters() override;
  void activation_pattern(std::vector<std::uint8_t>& out) const override;

 private:
  std::vector<std::unique_ptr<nn::Module<T>>> down_;
  std::unique_ptr<nn::Module<T>> bottom_;
  std::vector<std::unique_ptr<nn::Module<T>>> up_;
  std::unique_ptr<nn::Conv3d<T>> head_;
  std::vector<int> skip_channels_;
};

enum class LatentMode { Mean, Sample };

/// Variational autoencoder: strided conv encoder, dense mean / log-variance
/// heads, reparameterised latent, dense + transposed-conv decoder.
template <class T>
class VarAutoEncoder final : public Network<T> {
 public:
  VarAutoEncoder(const NetworkSpec& spec, const Dims& input_dims, std::uint64_t seed);

  nn::Tensor<T> forward(const nn::Tensor<T>& x) override;
  nn::Tensor<T> backward(const nn::Tensor<T>& grad_logits) override;
  double regularizer() const override;
  std::vector<nn::Parameter<T>*> parameters() override;
  void activation_pattern(std::vector<std::uint8_t>& out) const override;

  /// Mean mode uses z = mean; sample mode draws eps ~ N(0,1) from `seed`'s
  /// stream, advancing it on every forward pass.
  void set_latent_mode(LatentMode mode, std::uint64_t seed = 0);
  /// Pins eps to a fixed tensor of shape (N, latent) until cleared.
  void set_fixed_epsilon(std::optional<nn::Tensor<T>> eps) { fixed_eps_ = std::move(eps); }

  const nn::Tensor<T>& last_mean() const { return mean_; }
  const nn::Tensor<T>& last_logvar() const { return logvar_; }
  const nn::Tensor<T>& last_epsilon() const { return eps_; }
  const nn::Tensor<T>& last_latent() const { return latent_; }

 private:
  nn::Sequential<T> encoder_;
  std::unique_ptr<nn::Dense<T>> mean_head_;
  std::unique_ptr<nn::Dense<T>> logvar_head_;
  std::unique_ptr<nn::Dense<T>> expand_;
  std::unique_ptr<nn::PReLU<T>> expand_act_;
  nn::Sequential<T> decoder_;
  std::unique_ptr<nn::Conv3d<T>> head_;
  std::vector<int> bottleneck_shape_;  // (C, D, H, W)
  std::vector<int> encoded_shape_;     // full shape of the last encoder output

  LatentMode mode_ = LatentMode::Mean;
  Rng rng_{0};
  std::optional<nn::Tensor<T>> fixed_eps_;
  nn::Tensor<T> mean_, logvar_, eps_, latent_;
};

template <class T>
std::unique_ptr<Network<T>> build_network(const NetworkSpec& spec, const Dims& input_dims,
                                          std::uint64_t seed);

/// Mean-over-batch KL term; exposed for tests.
double vae_kl_term(const nn::Tensor<double>& mean, const nn::Tensor<double>& logvar);

/// soft Dice(recon_logits, target) + kl_weight * KL(mean, logvar).
template <class T>
double vae_loss(const nn::Tensor<T>& recon_logits, const nn::Tensor<T>& target,
                const nn::Tensor<T>& mean, const nn::Tensor<T>& logvar, double kl_weight);

/// (1, C, D, H, W) network input from a volume.
template <class T>
nn::Tensor<T> to_tensor(const MultiChannelVolume& vol);
/// Stacks several volumes into one batch.
template <class T>
nn::Tensor<T> to_batch(const std::vector<const MultiChannelVolume*>& vols);

}  // namespace maskqa
