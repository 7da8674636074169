#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "maskqa/neural/tensor.hpp"

namespace maskqa::nn {

/// Geometry of a 3D cross-correlation from an input grid to an output grid.
struct ConvGeometry {
  int channels = 0;  // input channels
  int depth = 0, height = 0, width = 0;
  int kernel = 3;
  int stride = 1;
  int padding = 1;
  int out_depth = 0, out_height = 0, out_width = 0;

  static ConvGeometry make(int channels, int d, int h, int w, int kernel, int stride, int padding);
  std::int64_t rows() const { return static_cast<std::int64_t>(channels) * kernel * kernel * kernel; }
  std::int64_t out_positions() const {
    return static_cast<std::int64_t>(out_depth) * out_height * out_width;
  }
};

/// floor((in + 2*pad - kernel) / stride) + 1
int conv_output_size(int in, int kernel, int stride, int padding);
/// (in - 1) * stride - 2*pad + kernel + output_padding
int conv_transpose_output_size(int in, int kernel, int stride, int padding, int output_padding);

template <class T>
void im2col(const T* input, const ConvGeometry& g, T* col);
template <class T>
void col2im(const T* col, const ConvGeometry& g, T* input);  // accumulates

/// Layer with a recorded forward pass and a matching reverse-mode backward.
/// backward() accumulates into parameter gradients and returns the gradient
/// with respect to the layer input.
template <class T>
class Module {
 public:
  virtual ~Module() = default;
  virtual Tensor<T> forward(const Tensor<T>& x) = 0;
  virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;
  virtual void parameters(std::vector<Parameter<T>*>& out) { (void)out; }
  /// Appends the activation pattern of the last forward pass (one byte per
  /// piecewise-linear unit input); used to detect kinks in gradient checks.
  virtual void activation_pattern(std::vector<std::uint8_t>& out) const { (void)out; }

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> p;
    parameters(p);
    return p;
  }
};

/// Fills weights and biases uniformly in +-1/sqrt(fan_in), seeded per
/// parameter name.
template <class T>
void init_uniform(Parameter<T>& p, int fan_in, std::uint64_t seed);

template <class T>
class Conv3d : public Module<T> {
 public:
  Conv3d(const std::string& name, int in_channels, int out_channels, int kernel, int stride,
         int padding, std::uint64_t seed);

  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void parameters(std::vector<Parameter<T>*>& out) override;
  using Module<T>::parameters;

  Parameter<T>& weight() { return weight_; }  // (Cout, Cin, k, k, k)
  Parameter<T>& bias() { return bias_; }

 private:
  int in_channels_, out_channels_, kernel_, stride_, padding_;
  Parameter<T> weight_;
  Parameter<T> bias_;
  Tensor<T> input_;
  Buffer<T> col_;
};

/// Transposed convolution; output_padding is added on the high side.
template <class T>
class ConvTranspose3d : public Module<T> {
 public:
  ConvTranspose3d(const std::string& name, int in_channels, int out_channels, int kernel,
                  int stride, int padding, int output_padding, std::uint64_t seed);

  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void parameters(std::vector<Parameter<T>*>& out) override;
  using Module<T>::parameters;

  Parameter<T>& weight() { return weight_; }  // (Cin, Cout, k, k, k)
  Parameter<T>& bias() { return bias_; }

 private:
  ConvGeometry geometry_for(int d, int h, int w) const;

  int in_channels_, out_channels_, kernel_, stride_, padding_, output_padding_;
  Parameter<T> weight_;
  Parameter<T> bias_;
  Tensor<T> input_;
  Buffer<T> col_;
};

/// Per-sample, per-channel standardisation over spatial axes, then affine.
template <class T>
class InstanceNorm3d : public Module<T> {
 public:
  InstanceNorm3d(const std::string& name, int channels, double eps = 1e-5);

  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void parameters(std::vector<Parameter<T>*>& out) override;
  using Module<T>::parameters;

  Parameter<T>& gamma() { return gamma_; }
  Parameter<T>& beta() { return beta_; }

 private:
  int channels_;
  double eps_;
  Parameter<T> gamma_;
  Parameter<T> beta_;
  Tensor<T> normalized_;
  std::vector<double> inv_std_;
};

/// Per-channel parametric ReLU, slope initialised to 0.25.
template <class T>
class PReLU : public Module<T> {
 public:
  PReLU(const std::string& name, int channels);

  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void parameters(std::vector<Parameter<T>*>& out) override;
  using Module<T>::parameters;
  void activation_pattern(std::vector<std::uint8_t>& out) const override;

  Parameter<T>& slope() { return slope_; }

 private:
  int channels_;
  Parameter<T> slope_;
  Tensor<T> input_;
};

template <class T>
class Sigmoid : public Module<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;

 private:
  Tensor<T> output_;
};

/// Fully connected layer on (N, in_features).
template <class T>
class Dense : public Module<T> {
 public:
  Dense(const std::string& name, int in_features, int out_features, std::uint64_t seed);

  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void parameters(std::vector<Parameter<T>*>& out) override;
  using Module<T>::parameters;

  Parameter<T>& weight() { return weight_; }  // (out, in)
  Parameter<T>& bias() { return bias_; }

 private:
  int in_features_, out_features_;
  Parameter<T> weight_;
  Parameter<T> bias_;
  Tensor<T> input_;
};

template <class T>
class Sequential : public Module<T> {
 public:
  Sequential() = default;

  template <class M, class... Args>
  M& emplace(Args&&... args) {
    auto m = std::make_unique<M>(std::forward<Args>(args)...);
    M& ref = *m;
    layers_.push_back(std::move(m));
    return ref;
  }
  void push(std::unique_ptr<Module<T>> m) { layers_.push_back(std::move(m)); }
  std::size_t size() const { return layers_.size(); }

  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void parameters(std::vector<Parameter<T>*>& out) override;
  using Module<T>::parameters;
  void activation_pattern(std::vector<std::uint8_t>& out) const override;

 private:
  std::vector<std::unique_ptr<Module<T>>> layers_;
};

/// conv(3^3, stride) -> instance norm -> PReLU.
template <class T>
std::unique_ptr<Sequential<T>> make_conv_unit(const std::string& name, int in_channels,
                                              int out_channels, int stride, std::uint64_t seed);

/// `subunits` conv units (the first carries the stride) plus an additive
/// skip; the skip is a 1x1x1 convolution when stride or channels change.
template <class T>
class ResidualUnit : public Module<T> {
 public:
  ResidualUnit(const std::string& name, int in_channels, int out_channels, int stride,
               int subunits, std::uint64_t seed);

  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void parameters(std::vector<Parameter<T>*>& out) override;
  using Module<T>::parameters;
  void activation_pattern(std::vector<std::uint8_t>& out) const override;

 private:
  Sequential<T> path_;
  std::unique_ptr<Conv3d<T>> skip_;
};

// Tensor plumbing ------------------------------------------------------------

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);
/// Splits a channel-concatenated gradient into the first `channels_a`
/// channels and the rest.
template <class T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& g, int channels_a);
template <class T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b);

}  // namespace maskqa::nn
