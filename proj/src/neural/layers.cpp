#include "maskqa/neural/layers.hpp"

#include <cmath>
#include <cstring>

#include <Eigen/Core>

#include "maskqa/rng.hpp"

namespace maskqa::nn {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <class T>
void require_forward(const Tensor<T>& cached, const char* layer) {
  require(!cached.empty(), ErrorKind::Logic, std::string(layer) + ": backward before forward");
}

std::uint64_t name_hash(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

std::string shape_string(const std::vector<int>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

int conv_output_size(int in, int kernel, int stride, int padding) {
  const int span = in + 2 * padding - kernel;
  require(span >= 0 && stride >= 1, ErrorKind::InvalidArgument, "convolution does not fit input");
  return span / stride + 1;
}

int conv_transpose_output_size(int in, int kernel, int stride, int padding, int output_padding) {
  return (in - 1) * stride - 2 * padding + kernel + output_padding;
}

ConvGeometry ConvGeometry::make(int channels, int d, int h, int w, int kernel, int stride,
                                int padding) {
  ConvGeometry g;
  g.channels = channels;
  g.depth = d;
  g.height = h;
  g.width = w;
  g.kernel = kernel;
  g.stride = stride;
  g.padding = padding;
  g.out_depth = conv_output_size(d, kernel, stride, padding);
  g.out_height = conv_output_size(h, kernel, stride, padding);
  g.out_width = conv_output_size(w, kernel, stride, padding);
  return g;
}

template <class T>
void im2col(const T* input, const ConvGeometry& g, T* col) {
  const std::int64_t P = g.out_positions();
  const int k = g.kernel;
  std::int64_t row = 0;
  for (int c = 0; c < g.channels; ++c) {
    const T* plane = input + static_cast<std::int64_t>(c) * g.depth * g.height * g.width;
    for (int kz = 0; kz < k; ++kz)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx, ++row) {
          T* dst = col + row * P;
          for (int oz = 0; oz < g.out_depth; ++oz) {
            const int iz = oz * g.stride - g.padding + kz;
            if (iz < 0 || iz >= g.depth) {
              std::fill(dst, dst + static_cast<std::int64_t>(g.out_height) * g.out_width, T(0));
              dst += static_cast<std::int64_t>(g.out_height) * g.out_width;
              continue;
            }
            for (int oy = 0; oy < g.out_height; ++oy) {
              const int iy = oy * g.stride - g.padding + ky;
              if (iy < 0 || iy >= g.height) {
                std::fill(dst, dst + g.out_width, T(0));
                dst += g.out_width;
                continue;
              }
              const T* src = plane + (static_cast<std::int64_t>(iz) * g.height + iy) * g.width;
              if (g.stride == 1) {
                const int off = kx - g.padding;
                const int lo = std::max(0, -off);
                const int hi = std::min(g.out_width, g.width - off);
                for (int ox = 0; ox < lo; ++ox) dst[ox] = T(0);
                for (int ox = lo; ox < hi; ++ox) dst[ox] = src[ox + off];
                for (int ox = std::max(hi, lo); ox < g.out_width; ++ox) dst[ox] = T(0);
              } else {
                for (int ox = 0; ox < g.out_width; ++ox) {
                  const int ix = ox * g.stride - g.padding + kx;
                  dst[ox] = (ix >= 0 && ix < g.width) ? src[ix] : T(0);
                }
              }
              dst += g.out_width;
            }
          }
        }
  }
}

template <class T>
void col2im(const T* col, const ConvGeometry& g, T* input) {
  const std::int64_t P = g.out_positions();
  const int k = g.kernel;
  std::int64_t row = 0;
  for (int c = 0; c < g.channels; ++c) {
    T* plane = input + static_cast<std::int64_t>(c) * g.depth * g.height * g.width;
    for (int kz = 0; kz < k; ++kz)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx, ++row) {
          const T* src = col + row * P;
          for (int oz = 0; oz < g.out_depth; ++oz) {
            const int iz = oz * g.stride - g.padding + kz;
            if (iz < 0 || iz >= g.depth) {
              src += static_cast<std::int64_t>(g.out_height) * g.out_width;
              continue;
            }
            for (int oy = 0; oy < g.out_height; ++oy) {
              const int iy = oy * g.stride - g.padding + ky;
              if (iy < 0 || iy >= g.height) {
                src += g.out_width;
                continue;
              }
              T* dst = plane + (static_cast<std::int64_t>(iz) * g.height + iy) * g.width;
              for (int ox = 0; ox < g.out_width; ++ox) {
                const int ix = ox * g.stride - g.padding + kx;
                if (ix >= 0 && ix < g.width) dst[ix] += src[ox];
              }
              src += g.out_width;
            }
          }
        }
  }
}

template <class T>
void init_uniform(Parameter<T>& p, int fan_in, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {name_hash(p.name)}));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& w : p.value.data) w = static_cast<T>(uniform_real(rng, -bound, bound));
}

// Conv3d ---------------------------------------------------------------------

template <class T>
Conv3d<T>::Conv3d(const std::string& name, int in_channels, int out_channels, int kernel,
                  int stride, int padding, std::uint64_t seed)
    : in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(kernel),
      stride_(stride),
      padding_(padding),
      weight_(name + ".weight", {out_channels, in_channels, kernel, kernel, kernel}),
      bias_(name + ".bias", {out_channels}) {
  require(in_channels > 0 && out_channels > 0 && kernel > 0 && stride > 0 && padding >= 0,
          ErrorKind::InvalidArgument, "conv3d: invalid configuration");
  const int fan_in = in_channels * kernel * kernel * kernel;
  init_uniform(weight_, fan_in, seed);
  init_uniform(bias_, fan_in, seed);
}

template <class T>
Tensor<T> Conv3d<T>::forward(const Tensor<T>& x) {
  require(x.rank() == 5 && x.dim(1) == in_channels_, ErrorKind::DimensionMismatch,
          "conv3d: expected (N, " + std::to_string(in_channels_) + ", D, H, W), got " +
              shape_string(x.shape));
  input_ = x;
  const auto g = ConvGeometry::make(in_channels_, x.dim(2), x.dim(3), x.dim(4), kernel_, stride_,
                                    padding_);
  Tensor<T> y({x.dim(0), out_channels_, g.out_depth, g.out_height, g.out_width});
  const std::int64_t K = g.rows(), P = g.out_positions();
  const bool direct = kernel_ == 1 && stride_ == 1 && padding_ == 0;
  if (!direct) col_.resize(static_cast<std::size_t>(K * P));
  ConstMatMap<T> w(weight_.value.data.data(), out_channels_, K);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> b(bias_.value.data.data(), out_channels_);
  for (int n = 0; n < x.dim(0); ++n) {
    const T* colp = x.sample(n);
    if (!direct) {
      im2col(x.sample(n), g, col_.data());
      colp = col_.data();
    }
    MatMap<T> out(y.sample(n), out_channels_, P);
    out.noalias() = w * ConstMatMap<T>(colp, K, P);
    out.colwise() += b;
  }
  return y;
}

template <class T>
Tensor<T> Conv3d<T>::backward(const Tensor<T>& grad_out) {
  require_forward(input_, "conv3d");
  const Tensor<T>& x = input_;
  const auto g = ConvGeometry::make(in_channels_, x.dim(2), x.dim(3), x.dim(4), kernel_, stride_,
                                    padding_);
  require(grad_out.shape == std::vector<int>{x.dim(0), out_channels_, g.out_depth, g.out_height,
                                             g.out_width},
          ErrorKind::DimensionMismatch, "conv3d backward: gradient shape mismatch");
  const std::int64_t K = g.rows(), P = g.out_positions();
  const bool direct = kernel_ == 1 && stride_ == 1 && padding_ == 0;
  Tensor<T> gx(x.shape);
  Buffer<T> dcol(direct ? 0 : static_cast<std::size_t>(K * P));
  if (!direct) col_.resize(static_cast<std::size_t>(K * P));
  ConstMatMap<T> w(weight_.value.data.data(), out_channels_, K);
  MatMap<T> gw(weight_.grad.data.data(), out_channels_, K);
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> gb(bias_.grad.data.data(), out_channels_);
  for (int n = 0; n < x.dim(0); ++n) {
    ConstMatMap<T> gy(grad_out.sample(n), out_channels_, P);
    const T* colp = x.sample(n);
    if (!direct) {
      im2col(x.sample(n), g, col_.data());
      colp = col_.data();
    }
    gw.noalias() += gy * ConstMatMap<T>(colp, K, P).transpose();
    for (int c = 0; c < out_channels_; ++c) {
      const T* row = grad_out.sample(n) + c * P;
      T s = T(0);
      for (std::int64_t i = 0; i < P; ++i) s += row[i];
      gb(c) += s;
    }
    if (direct) {
      MatMap<T>(gx.sample(n), K, P).noalias() = w.transpose() * gy;
    } else {
      MatMap<T>(dcol.data(), K, P).noalias() = w.transpose() * gy;
      col2im(dcol.data(), g, gx.sample(n));
    }
  }
  return gx;
}

template <class T>
void Conv3d<T>::parameters(std::vector<Parameter<T>*>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

// ConvTranspose3d ------------------------------------------------------------

template <class T>
ConvTranspose3d<T>::ConvTranspose3d(const std::string& name, int in_channels, int out_channels,
                                    int kernel, int stride, int padding, int output_padding,
                                    std::uint64_t seed)
    : in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(kernel),
      stride_(stride),
      padding_(padding),
      output_padding_(output_padding),
      weight_(name + ".weight", {in_channels, out_channels, kernel, kernel, kernel}),
      bias_(name + ".bias", {out_channels}) {
  require(in_channels > 0 && out_channels > 0 && kernel > 0 && stride > 0 && padding >= 0 &&
              output_padding >= 0 && output_padding < stride,
          ErrorKind::InvalidArgument, "conv_transpose3d: invalid configuration");
  const int fan_in = out_channels * kernel * kernel * kernel;
  init_uniform(weight_, fan_in, seed);
  init_uniform(bias_, fan_in, seed);
}

template <class T>
ConvGeometry ConvTranspose3d<T>::geometry_for(int d, int h, int w) const {
  // The adjoint convolution maps the (larger) output grid back onto the input grid.
  const int od = conv_transpose_output_size(d, kernel_, stride_, padding_, output_padding_);
  const int oh = conv_transpose_output_size(h, kernel_, stride_, padding_, output_padding_);
  const int ow = conv_transpose_output_size(w, kernel_, stride_, padding_, output_padding_);
  auto g = ConvGeometry::make(out_channels_, od, oh, ow, kernel_, stride_, padding_);
  require(g.out_depth == d && g.out_height == h && g.out_width == w, ErrorKind::InvalidArgument,
          "conv_transpose3d: geometry is not invertible");
  return g;
}

template <class T>
Tensor<T> ConvTranspose3d<T>::forward(const Tensor<T>& x) {
  require(x.rank() == 5 && x.dim(1) == in_channels_, ErrorKind::DimensionMismatch,
          "conv_transpose3d: expected (N, " + std::to_string(in_channels_) + ", D, H, W), got " +
              shape_string(x.shape));
  input_ = x;
  const auto g = geometry_for(x.dim(2), x.dim(3), x.dim(4));
  Tensor<T> y({x.dim(0), out_channels_, g.depth, g.height, g.width});
  const std::int64_t K = g.rows(), P = g.out_positions();
  const std::int64_t S = static_cast<std::int64_t>(g.depth) * g.height * g.width;
  col_.resize(static_cast<std::size_t>(K * P));
  ConstMatMap<T> w(weight_.value.data.data(), in_channels_, K);
  for (int n = 0; n < x.dim(0); ++n) {
    MatMap<T>(col_.data(), K, P).noalias() = w.transpose() * ConstMatMap<T>(x.sample(n), in_channels_, P);
    T* out = y.sample(n);
    col2im(col_.data(), g, out);
    for (int c = 0; c < out_channels_; ++c) {
      const T b = bias_.value.data[c];
      T* plane = out + c * S;
      for (std::int64_t v = 0; v < S; ++v) plane[v] += b;
    }
  }
  return y;
}

template <class T>
Tensor<T> ConvTranspose3d<T>::backward(const Tensor<T>& grad_out) {
  require_forward(input_, "conv_transpose3d");
  const Tensor<T>& x = input_;
  const auto g = geometry_for(x.dim(2), x.dim(3), x.dim(4));
  require(grad_out.shape == std::vector<int>{x.dim(0), out_channels_, g.depth, g.height, g.width},
          ErrorKind::DimensionMismatch, "conv_transpose3d backward: gradient shape mismatch");
  const std::int64_t K = g.rows(), P = g.out_positions();
  const std::int64_t S = static_cast<std::int64_t>(g.depth) * g.height * g.width;
  Tensor<T> gx(x.shape);
  col_.resize(static_cast<std::size_t>(K * P));
  ConstMatMap<T> w(weight_.value.data.data(), in_channels_, K);
  MatMap<T> gw(weight_.grad.data.data(), in_channels_, K);
  for (int n = 0; n < x.dim(0); ++n) {
    const T* gy = grad_out.sample(n);
    im2col(gy, g, col_.data());
    ConstMatMap<T> col(col_.data(), K, P);
    ConstMatMap<T> xin(x.sample(n), in_channels_, P);
    gw.noalias() += xin * col.transpose();
    MatMap<T>(gx.sample(n), in_channels_, P).noalias() = w * col;
    for (int c = 0; c < out_channels_; ++c) {
      T s = T(0);
      const T* plane = gy + c * S;
      for (std::int64_t v = 0; v < S; ++v) s += plane[v];
      bias_.grad.data[c] += s;
    }
  }
  return gx;
}

template <class T>
void ConvTranspose3d<T>::parameters(std::vector<Parameter<T>*>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

// InstanceNorm3d -------------------------------------------------------------

template <class T>
InstanceNorm3d<T>::InstanceNorm3d(const std::string& name, int channels, double eps)
    : channels_(channels),
      eps_(eps),
      gamma_(name + ".gamma", {channels}),
      beta_(name + ".beta", {channels}) {
  gamma_.value.fill(T(1));
}

template <class T>
Tensor<T> InstanceNorm3d<T>::forward(const Tensor<T>& x) {
  require(x.rank() >= 3 && x.dim(1) == channels_, ErrorKind::DimensionMismatch,
          "instance_norm: channel mismatch, got " + shape_string(x.shape));
  const int N = x.dim(0);
  const std::int64_t S = x.spatial_size();
  require(S >= 1, ErrorKind::InvalidArgument, "instance_norm: empty spatial extent");
  normalized_ = Tensor<T>(x.shape);
  inv_std_.assign(static_cast<std::size_t>(N) * channels_, 0.0);
  Tensor<T> y(x.shape);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < channels_; ++c) {
      const std::int64_t off = (static_cast<std::int64_t>(n) * channels_ + c) * S;
      const T* src = x.data.data() + off;
      double mean = 0.0;
      for (std::int64_t v = 0; v < S; ++v) mean += src[v];
      mean /= static_cast<double>(S);
      double var = 0.0;
      for (std::int64_t v = 0; v < S; ++v) {
        const double dv = src[v] - mean;
        var += dv * dv;
      }
      var /= static_cast<double>(S);
      const double inv = 1.0 / std::sqrt(var + eps_);
      inv_std_[static_cast<std::size_t>(n) * channels_ + c] = inv;
      T* xn = normalized_.data.data() + off;
      T* out = y.data.data() + off;
      const T gm = gamma_.value.data[c], bt = beta_.value.data[c];
      for (std::int64_t v = 0; v < S; ++v) {
        xn[v] = static_cast<T>((src[v] - mean) * inv);
        out[v] = gm * xn[v] + bt;
      }
    }
  return y;
}

template <class T>
Tensor<T> InstanceNorm3d<T>::backward(const Tensor<T>& grad_out) {
  require_forward(normalized_, "instance_norm");
  require_same_shape(grad_out, normalized_, "instance_norm backward");
  const int N = normalized_.dim(0);
  const std::int64_t S = normalized_.spatial_size();
  Tensor<T> gx(normalized_.shape);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < channels_; ++c) {
      const std::int64_t off = (static_cast<std::int64_t>(n) * channels_ + c) * S;
      const T* gy = grad_out.data.data() + off;
      const T* xn = normalized_.data.data() + off;
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::int64_t v = 0; v < S; ++v) {
        sum_g += gy[v];
        sum_gx += static_cast<double>(gy[v]) * xn[v];
      }
      gamma_.grad.data[c] += static_cast<T>(sum_gx);
      beta_.grad.data[c] += static_cast<T>(sum_g);
      const double gm = gamma_.value.data[c];
      const double inv = inv_std_[static_cast<std::size_t>(n) * channels_ + c];
      const double mean_g = sum_g / static_cast<double>(S);
      const double mean_gx = sum_gx / static_cast<double>(S);
      T* out = gx.data.data() + off;
      for (std::int64_t v = 0; v < S; ++v)
        out[v] = static_cast<T>(gm * inv * (gy[v] - mean_g - xn[v] * mean_gx));
    }
  return gx;
}

template <class T>
void InstanceNorm3d<T>::parameters(std::vector<Parameter<T>*>& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
}

// PReLU ----------------------------------------------------------------------

template <class T>
PReLU<T>::PReLU(const std::string& name, int channels)
    : channels_(channels), slope_(name + ".slope", {channels}) {
  slope_.value.fill(T(0.25));
}

template <class T>
Tensor<T> PReLU<T>::forward(const Tensor<T>& x) {
  require(x.rank() >= 2 && x.dim(1) == channels_, ErrorKind::DimensionMismatch,
          "prelu: channel mismatch, got " + shape_string(x.shape));
  input_ = x;
  Tensor<T> y(x.shape);
  const std::int64_t S = x.spatial_size();
  for (int n = 0; n < x.dim(0); ++n)
    for (int c = 0; c < channels_; ++c) {
      const std::int64_t off = (static_cast<std::int64_t>(n) * channels_ + c) * S;
      const T a = slope_.value.data[c];
      for (std::int64_t v = 0; v < S; ++v) {
        const T xv = x.data[off + v];
        y.data[off + v] = xv > T(0) ? xv : a * xv;
      }
    }
  return y;
}

template <class T>
Tensor<T> PReLU<T>::backward(const Tensor<T>& grad_out) {
  require_forward(input_, "prelu");
  require_same_shape(grad_out, input_, "prelu backward");
  Tensor<T> gx(input_.shape);
  const std::int64_t S = input_.spatial_size();
  for (int n = 0; n < input_.dim(0); ++n)
    for (int c = 0; c < channels_; ++c) {
      const std::int64_t off = (static_cast<std::int64_t>(n) * channels_ + c) * S;
      const T a = slope_.value.data[c];
      T ga = T(0);
      for (std::int64_t v = 0; v < S; ++v) {
        const T xv = input_.data[off + v];
        const T g = grad_out.data[off + v];
        if (xv > T(0)) {
          gx.data[off + v] = g;
        } else {
          gx.data[off + v] = a * g;
          ga += xv * g;
        }
      }
      slope_.grad.data[c] += ga;
    }
  return gx;
}

template <class T>
void PReLU<T>::parameters(std::vector<Parameter<T>*>& out) {
  out.push_back(&slope_);
}

template <class T>
void PReLU<T>::activation_pattern(std::vector<std::uint8_t>& out) const {
  for (const T v : input_.data) out.push_back(v > T(0) ? 1 : 0);
}

// Sigmoid --------------------------------------------------------------------

template <class T>
Tensor<T> Sigmoid<T>::forward(const Tensor<T>& x) {
  output_ = Tensor<T>(x.shape);
  for (std::int64_t i = 0; i < x.size(); ++i)
    output_.data[i] = T(1) / (T(1) + std::exp(-x.data[i]));
  return output_;
}

template <class T>
Tensor<T> Sigmoid<T>::backward(const Tensor<T>& grad_out) {
  require_forward(output_, "sigmoid");
  require_same_shape(grad_out, output_, "sigmoid backward");
  Tensor<T> gx(output_.shape);
  for (std::int64_t i = 0; i < gx.size(); ++i) {
    const T p = output_.data[i];
    gx.data[i] = grad_out.data[i] * p * (T(1) - p);
  }
  return gx;
}

// Dense ----------------------------------------------------------------------

template <class T>
Dense<T>::Dense(const std::string& name, int in_features, int out_features, std::uint64_t seed)
    : in_features_(in_features),
      out_features_(out_features),
      weight_(name + ".weight", {out_features, in_features}),
      bias_(name + ".bias", {out_features}) {
  require(in_features > 0 && out_features > 0, ErrorKind::InvalidArgument,
          "dense: feature counts must be positive");
  init_uniform(weight_, in_features, seed);
  init_uniform(bias_, in_features, seed);
}

template <class T>
Tensor<T> Dense<T>::forward(const Tensor<T>& x) {
  require(x.rank() == 2 && x.dim(1) == in_features_, ErrorKind::DimensionMismatch,
          "dense: expected (N, " + std::to_string(in_features_) + "), got " + shape_string(x.shape));
  input_ = x;
  const int N = x.dim(0);
  Tensor<T> y({N, out_features_});
  ConstMatMap<T> w(weight_.value.data.data(), out_features_, in_features_);
  MatMap<T> out(y.data.data(), N, out_features_);
  out.noalias() = ConstMatMap<T>(x.data.data(), N, in_features_) * w.transpose();
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias_.value.data.data(), out_features_);
  out.rowwise() += b;
  return y;
}

template <class T>
Tensor<T> Dense<T>::backward(const Tensor<T>& grad_out) {
  require_forward(input_, "dense");
  const int N = input_.dim(0);
  require(grad_out.shape == std::vector<int>{N, out_features_}, ErrorKind::DimensionMismatch,
          "dense backward: gradient shape mismatch");
  ConstMatMap<T> gy(grad_out.data.data(), N, out_features_);
  ConstMatMap<T> xin(input_.data.data(), N, in_features_);
  MatMap<T>(weight_.grad.data.data(), out_features_, in_features_).noalias() += gy.transpose() * xin;
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < out_features_; ++o) bias_.grad.data[o] += grad_out.data[n * out_features_ + o];
  Tensor<T> gx(input_.shape);
  MatMap<T>(gx.data.data(), N, in_features_).noalias() =
      gy * ConstMatMap<T>(weight_.value.data.data(), out_features_, in_features_);
  return gx;
}

template <class T>
void Dense<T>::parameters(std::vector<Parameter<T>*>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

// Containers -----------------------------------------------------------------

template <class T>
Tensor<T> Sequential<T>::forward(const Tensor<T>& x) {
  if (layers_.empty()) return x;
  Tensor<T> h = layers_.front()->forward(x);
  for (std::size_t i = 1; i < layers_.size(); ++i) h = layers_[i]->forward(h);
  return h;
}

template <class T>
Tensor<T> Sequential<T>::backward(const Tensor<T>& grad_out) {
  Tensor<T> g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

template <class T>
void Sequential<T>::parameters(std::vector<Parameter<T>*>& out) {
  for (auto& l : layers_) l->parameters(out);
}

template <class T>
void Sequential<T>::activation_pattern(std::vector<std::uint8_t>& out) const {
  for (const auto& l : layers_) l->activation_pattern(out);
}

template <class T>
std::unique_ptr<Sequential<T>> make_conv_unit(const std::string& name, int in_channels,
                                              int out_channels, int stride, std::uint64_t seed) {
  auto unit = std::make_unique<Sequential<T>>();
  unit->template emplace<Conv3d<T>>(name + ".conv", in_channels, out_channels, 3, stride, 1, seed);
  unit->template emplace<InstanceNorm3d<T>>(name + ".norm", out_channels);
  unit->template emplace<PReLU<T>>(name + ".act", out_channels);
  return unit;
}

template <class T>
ResidualUnit<T>::ResidualUnit(const std::string& name, int in_channels, int out_channels,
                              int stride, int subunits, std::uint64_t seed) {
  require(subunits >= 1, ErrorKind::InvalidArgument, "residual unit needs at least one subunit");
  for (int u = 0; u < subunits; ++u) {
    path_.push(make_conv_unit<T>(name + ".unit" + std::to_string(u), u == 0 ? in_channels : out_channels,
                                 out_channels, u == 0 ? stride : 1, seed));
  }
  if (stride != 1 || in_channels != out_channels)
    skip_ = std::make_unique<Conv3d<T>>(name + ".skip", in_channels, out_channels, 1, stride, 0, seed);
}

template <class T>
Tensor<T> ResidualUnit<T>::forward(const Tensor<T>& x) {
  Tensor<T> y = path_.forward(x);
  if (skip_) {
    add_inplace(y, skip_->forward(x));
  } else {
    add_inplace(y, x);
  }
  return y;
}

template <class T>
Tensor<T> ResidualUnit<T>::backward(const Tensor<T>& grad_out) {
  Tensor<T> gx = path_.backward(grad_out);
  if (skip_) {
    add_inplace(gx, skip_->backward(grad_out));
  } else {
    add_inplace(gx, grad_out);
  }
  return gx;
}

template <class T>
void ResidualUnit<T>::parameters(std::vector<Parameter<T>*>& out) {
  path_.parameters(out);
  if (skip_) skip_->parameters(out);
}

template <class T>
void ResidualUnit<T>::activation_pattern(std::vector<std::uint8_t>& out) const {
  path_.activation_pattern(out);
}

// Plumbing -------------------------------------------------------------------

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() == 5 && b.rank() == 5 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) &&
              a.dim(3) == b.dim(3) && a.dim(4) == b.dim(4),
          ErrorKind::DimensionMismatch, "concat: incompatible shapes " + shape_string(a.shape) +
                                            " and " + shape_string(b.shape));
  Tensor<T> out({a.dim(0), a.dim(1) + b.dim(1), a.dim(2), a.dim(3), a.dim(4)});
  for (int n = 0; n < a.dim(0); ++n) {
    T* dst = out.sample(n);
    std::copy(a.sample(n), a.sample(n) + a.sample_size(), dst);
    std::copy(b.sample(n), b.sample(n) + b.sample_size(), dst + a.sample_size());
  }
  return out;
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& g, int channels_a) {
  require(g.rank() == 5 && channels_a > 0 && channels_a < g.dim(1), ErrorKind::DimensionMismatch,
          "split: invalid channel split");
  Tensor<T> a({g.dim(0), channels_a, g.dim(2), g.dim(3), g.dim(4)});
  Tensor<T> b({g.dim(0), g.dim(1) - channels_a, g.dim(2), g.dim(3), g.dim(4)});
  for (int n = 0; n < g.dim(0); ++n) {
    const T* src = g.sample(n);
    std::copy(src, src + a.sample_size(), a.sample(n));
    std::copy(src + a.sample_size(), src + g.sample_size(), b.sample(n));
  }
  return {std::move(a), std::move(b)};
}

template <class T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  for (std::int64_t i = 0; i < a.size(); ++i) a.data[i] += b.data[i];
}

#define MASKQA_INSTANTIATE(T)                                                                  \
  template void im2col<T>(const T*, const ConvGeometry&, T*);                                  \
  template void col2im<T>(const T*, const ConvGeometry&, T*);                                  \
  template void init_uniform<T>(Parameter<T>&, int, std::uint64_t);                            \
  template class Conv3d<T>;                                                                    \
  template class ConvTranspose3d<T>;                                                           \
  template class InstanceNorm3d<T>;                                                            \
  template class PReLU<T>;                                                                     \
  template class Sigmoid<T>;                                                                   \
  template class Dense<T>;                                                                     \
  template class Sequential<T>;                                                                \
  template class ResidualUnit<T>;                                                              \
  template std::unique_ptr<Sequential<T>> make_conv_unit<T>(const std::string&, int, int, int, \
                                                            std::uint64_t);                    \
  template Tensor<T> concat_channels<T>(const Tensor<T>&, const Tensor<T>&);                   \
  template std::pair<Tensor<T>, Tensor<T>> split_channels<T>(const Tensor<T>&, int);           \
  template void add_inplace<T>(Tensor<T>&, const Tensor<T>&);

MASKQA_INSTANTIATE(float)
MASKQA_INSTANTIATE(double)

}  // namespace maskqa::nn
