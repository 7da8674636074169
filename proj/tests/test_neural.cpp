#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "maskqa/neural/adam.hpp"
#include "maskqa/neural/checkpoint.hpp"
#include "maskqa/neural/layers.hpp"
#include "maskqa/neural/loss.hpp"
#include "maskqa/rng.hpp"
#include "oracles.hpp"

using namespace maskqa;
using namespace maskqa::nn;

namespace {

template <class T>
Tensor<T> random_tensor(Rng& rng, std::vector<int> shape) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<T>(uniform_real(rng, -1, 1));
  return t;
}

// 5-D index helper
std::int64_t at5(const std::vector<int>& s, int n, int c, int z, int y, int x) {
  return (((static_cast<std::int64_t>(n) * s[1] + c) * s[2] + z) * s[3] + y) * s[4] + x;
}

Tensor<double> naive_conv(const Tensor<double>& in, const Tensor<double>& w, const Tensor<double>& b,
                          int stride, int pad) {
  const int N = in.dim(0), Ci = in.dim(1), D = in.dim(2), H = in.dim(3), W = in.dim(4);
  const int Co = w.dim(0), k = w.dim(2);
  const int od = (D + 2 * pad - k) / stride + 1, oh = (H + 2 * pad - k) / stride + 1,
            ow = (W + 2 * pad - k) / stride + 1;
  Tensor<double> out({N, Co, od, oh, ow});
  for (int n = 0; n < N; ++n)
    for (int co = 0; co < Co; ++co)
      for (int z = 0; z < od; ++z)
        for (int y = 0; y < oh; ++y)
          for (int x = 0; x < ow; ++x) {
            double s = b.data[co];
            for (int ci = 0; ci < Ci; ++ci)
              for (int a = 0; a < k; ++a)
                for (int bb = 0; bb < k; ++bb)
                  for (int c = 0; c < k; ++c) {
                    const int iz = z * stride - pad + a, iy = y * stride - pad + bb, ix = x * stride - pad + c;
                    if (iz < 0 || iy < 0 || ix < 0 || iz >= D || iy >= H || ix >= W) continue;
                    s += w.data[at5(w.shape, co, ci, a, bb, c)] * in.data[at5(in.shape, n, ci, iz, iy, ix)];
                  }
            out.data[at5(out.shape, n, co, z, y, x)] = s;
          }
  return out;
}

// Scatter form: every input voxel spreads its kernel over the output.
Tensor<double> naive_conv_transpose(const Tensor<double>& in, const Tensor<double>& w, const Tensor<double>& b,
                                    int stride, int pad, int out_pad) {
  const int N = in.dim(0), Ci = in.dim(1), D = in.dim(2), H = in.dim(3), W = in.dim(4);
  const int Co = w.dim(1), k = w.dim(2);
  const int od = (D - 1) * stride - 2 * pad + k + out_pad, oh = (H - 1) * stride - 2 * pad + k + out_pad,
            ow = (W - 1) * stride - 2 * pad + k + out_pad;
  Tensor<double> out({N, Co, od, oh, ow});
  for (int n = 0; n < N; ++n)
    for (int co = 0; co < Co; ++co)
      for (int z = 0; z < od; ++z)
        for (int y = 0; y < oh; ++y)
          for (int x = 0; x < ow; ++x) out.data[at5(out.shape, n, co, z, y, x)] = b.data[co];
  for (int n = 0; n < N; ++n)
    for (int ci = 0; ci < Ci; ++ci)
      for (int z = 0; z < D; ++z)
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x)
            for (int co = 0; co < Co; ++co)
              for (int a = 0; a < k; ++a)
                for (int bb = 0; bb < k; ++bb)
                  for (int c = 0; c < k; ++c) {
                    const int oz = z * stride - pad + a, oy = y * stride - pad + bb, ox = x * stride - pad + c;
                    if (oz < 0 || oy < 0 || ox < 0 || oz >= od || oy >= oh || ox >= ow) continue;
                    out.data[at5(out.shape, n, co, oz, oy, ox)] +=
                        w.data[at5(w.shape, ci, co, a, bb, c)] * in.data[at5(in.shape, n, ci, z, y, x)];
                  }
  return out;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  REQUIRE(a.shape == b.shape);
  double m = 0;
  for (std::int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

}  // namespace

TEST_CASE("output size formulas") {
  CHECK(conv_output_size(32, 3, 1, 1) == 32);
  CHECK(conv_output_size(32, 3, 2, 1) == 16);
  CHECK(conv_output_size(7, 3, 2, 1) == 4);
  CHECK(conv_transpose_output_size(16, 3, 2, 1, 1) == 32);
  CHECK(conv_transpose_output_size(4, 3, 1, 1, 0) == 4);
}

TEST_CASE("conv3d identity and summation kernels") {
  Rng rng(1);
  Conv3d<double> conv("c", 1, 1, 3, 1, 1, 5);
  conv.weight().value.fill(0);
  conv.weight().value.data[13] = 1;  // centre tap
  conv.bias().value.fill(0);
  const auto x = random_tensor<double>(rng, {2, 1, 4, 5, 6});
  CHECK(conv.forward(x) == x);

  conv.weight().value.fill(1);
  Tensor<double> ones({1, 1, 5, 5, 5}, 1.0);
  const auto y = conv.forward(ones);
  for (int z = 1; z < 4; ++z)
    for (int j = 1; j < 4; ++j)
      for (int i = 1; i < 4; ++i) CHECK(y.data[at5(y.shape, 0, 0, z, j, i)] == 27.0);
}

TEST_CASE("conv3d and transpose conv match direct loops") {
  Rng rng(2);
  struct Case { int ci, co, d, h, w, stride; };
  for (const Case c : {Case{1, 2, 5, 4, 3, 1}, Case{3, 2, 6, 6, 4, 2}, Case{2, 3, 7, 5, 6, 2}, Case{4, 1, 3, 3, 3, 1}}) {
    Conv3d<float> conv("c", c.ci, c.co, 3, c.stride, 1, 11);
    const auto x = random_tensor<float>(rng, {2, c.ci, c.d, c.h, c.w});
    const auto got = conv.forward(x).cast<double>();
    const auto ref = naive_conv(x.cast<double>(), conv.weight().value.cast<double>(),
                                conv.bias().value.cast<double>(), c.stride, 1);
    CHECK(max_abs_diff(got, ref) <= 1e-5);

    const int op = c.stride == 2 ? 1 : 0;
    ConvTranspose3d<float> up("u", c.ci, c.co, 3, c.stride, 1, op, 12);
    const auto gu = up.forward(x).cast<double>();
    const auto ru = naive_conv_transpose(x.cast<double>(), up.weight().value.cast<double>(),
                                         up.bias().value.cast<double>(), c.stride, 1, op);
    CHECK(max_abs_diff(gu, ru) <= 1e-5);
    if (c.stride == 2 && c.d % 2 == 0) {
      ConvTranspose3d<float> back("b", c.co, c.ci, 3, 2, 1, 1, 13);
      CHECK(back.forward(conv.forward(x)).dim(2) == c.d);
    }
  }
}

TEST_CASE("conv3d weight gradient for a sum loss on constant input") {
  Conv3d<double> conv("c", 1, 1, 3, 1, 1, 3);
  Tensor<double> ones({1, 1, 4, 4, 4}, 1.0);
  const auto y = conv.forward(ones);
  conv.weight().zero_grad();
  conv.bias().zero_grad();
  conv.backward(Tensor<double>(y.shape, 1.0));
  const int per_tap[3] = {3, 4, 3};  // output positions whose tap lands inside
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      for (int c = 0; c < 3; ++c)
        CHECK(conv.weight().grad.data[(a * 3 + b) * 3 + c] == per_tap[a] * per_tap[b] * per_tap[c]);
  CHECK(conv.bias().grad.data[0] == 64.0);
}

TEST_CASE("instance norm") {
  InstanceNorm3d<double> norm("n", 2);
  Tensor<double> c({1, 2, 3, 3, 3}, 4.0);
  for (double v : norm.forward(c).data) CHECK(v == 0.0);

  Rng rng(4);
  const auto x = random_tensor<double>(rng, {2, 2, 4, 4, 4});
  const auto base = norm.forward(x);
  norm.beta().value.data = {0.5, -2.0};
  const auto shifted = norm.forward(x);
  for (std::int64_t i = 0; i < x.size(); ++i)
    CHECK(shifted.data[i] == base.data[i] + (((i / 64) % 2) ? -2.0 : 0.5));

  norm.gamma().value.data = {1.5, 0.25};
  const auto y = norm.forward(x);
  for (int n = 0; n < 2; ++n)
    for (int ch = 0; ch < 2; ++ch) {
      double m = 0, s = 0;
      for (int v = 0; v < 64; ++v) m += y.data[(n * 2 + ch) * 64 + v];
      m /= 64;
      for (int v = 0; v < 64; ++v) s += std::pow(y.data[(n * 2 + ch) * 64 + v] - m, 2);
      s = std::sqrt(s / 64);
      CHECK(std::abs(m - norm.beta().value.data[ch]) <= 1e-4);
      CHECK(std::abs(s - norm.gamma().value.data[ch]) <= 1e-4);
    }
}

TEST_CASE("prelu, sigmoid, dense") {
  PReLU<double> act("p", 2);
  Tensor<double> x({1, 2, 1, 1, 2});
  x.data = {-2, 3, -4, 0};
  CHECK(act.forward(x).data == Buffer<double>{-0.5, 3, -1, 0});
  CHECK(sigmoid(x).data[3] == 0.5);

  Dense<double> fc("d", 3, 2, 1);
  fc.weight().value.data = {1, 2, 3, 4, 5, 6};
  fc.bias().value.data = {0.5, -1};
  Tensor<double> v({1, 3});
  v.data = {1, 0, -1};
  CHECK(fc.forward(v).data == Buffer<double>{-1.5, -3});
}

TEST_CASE("adam against a scalar recurrence") {
  Parameter<double> p("w", {1});
  p.value.data[0] = 0.3;
  std::vector<Parameter<double>*> ps{&p};
  const AdamConfig cfg;
  CHECK(cfg.lr == 1e-3);

  p.grad.data[0] = 1.0;
  adam_step<double>(ps, cfg);
  CHECK(p.value.data[0] == doctest::Approx(0.3 - 1e-3 / (1 + 1e-8)).epsilon(1e-14));

  double w = p.value.data[0], m = 0.1, v = 0.001 * 1.0;  // state after step 1 with g = 1
  const double gs[] = {-0.5, 2.0, 0.25, 0.0, 1e-3};
  for (int t = 2; t <= 6; ++t) {
    const double g = gs[t - 2];
    p.grad.data[0] = g;
    adam_step<double>(ps, cfg);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    w -= 1e-3 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    CHECK(std::abs(p.value.data[0] - w) <= 1e-14);
  }
  CHECK(p.step == 6);

  Parameter<double> q("q", {3});
  q.value.data = {1, 2, 3};
  std::vector<Parameter<double>*> qs{&q};
  adam_step<double>(qs, cfg);
  CHECK(q.value.data == Buffer<double>{1, 2, 3});
  CHECK(q.step == 1);
}

TEST_CASE("soft dice loss") {
  Tensor<double> logits({1, 2, 2, 2, 2}), target({1, 2, 2, 2, 2});
  for (std::int64_t i = 0; i < 16; ++i) {
    target.data[i] = (i % 3 == 0) && i < 8 ? 1 : 0;
    logits.data[i] = target.data[i] ? 50 : -50;
  }
  // channel 1 has an empty target and confidently empty prediction
  const auto r = soft_dice_loss(logits, target);
  CHECK(r.value < 1e-12);

  Tensor<double> half({1, 1, 1, 1, 2}, 0.0), t1({1, 1, 1, 1, 2});
  t1.data = {1, 0};
  // p = 0.5 each: 1 - (1 + s)/(1 + 1 + s)
  const double s = kDiceSmoothing;
  CHECK(soft_dice_loss(half, t1).value == doctest::Approx(1 - (1 + s) / (2 + s)).epsilon(1e-14));

  // gradient of a random case against central differences
  Rng rng(6);
  const auto lg = random_tensor<double>(rng, {2, 2, 2, 2, 3});
  Tensor<double> tg(lg.shape);
  for (auto& v : tg.data) v = uniform01(rng) < 0.4 ? 1 : 0;
  const auto res = soft_dice_loss(lg, tg);
  for (std::int64_t i = 0; i < lg.size(); ++i) {
    auto a = lg, b = lg;
    a.data[i] += 1e-5;
    b.data[i] -= 1e-5;
    const double num = (soft_dice_loss(a, tg).value - soft_dice_loss(b, tg).value) / 2e-5;
    CHECK(std::abs(num - res.grad.data[i]) <= 1e-8);
  }
}

TEST_CASE("kl divergence") {
  Tensor<double> mu({2, 3}), lv({2, 3});
  CHECK(kl_divergence(mu, lv).value == 0.0);
  Rng rng(10);
  for (int r = 0; r < 100; ++r) {
    mu = random_tensor<double>(rng, {3, 4});
    lv = random_tensor<double>(rng, {3, 4});
    double s = 0;
    for (int i = 0; i < 12; ++i) s += 0.5 * (std::exp(lv.data[i]) + mu.data[i] * mu.data[i] - 1 - lv.data[i]);
    const auto k = kl_divergence(mu, lv);
    CHECK(std::abs(k.value - s / 3) <= 1e-10);
    CHECK(std::abs(k.grad_mean.data[5] - mu.data[5] / 3) <= 1e-12);
    CHECK(std::abs(k.grad_logvar.data[5] - 0.5 * (std::exp(lv.data[5]) - 1) / 3) <= 1e-12);
  }
}

TEST_CASE("checkpoint round trip is bitwise") {
  auto build = [](std::uint64_t seed) {
    auto s = std::make_unique<Sequential<float>>();
    s->emplace<Conv3d<float>>("c1", 2, 3, 3, 1, 1, seed);
    s->emplace<InstanceNorm3d<float>>("n1", 3);
    s->emplace<PReLU<float>>("p1", 3);
    s->emplace<Conv3d<float>>("c2", 3, 1, 3, 1, 1, seed + 1);
    return s;
  };
  auto a = build(1), b = build(99);
  auto pa = a->parameters(), pb = b->parameters();
  for (auto* p : pa)
    for (auto& v : p->value.data) v += 0.125f;  // move away from init, including gamma/slope
  const auto path = std::filesystem::temp_directory_path() / "maskqa_ckpt.daew";
  save_checkpoint(pa, path);
  load_checkpoint(pb, path);
  Rng rng(3);
  const auto x = random_tensor<float>(rng, {1, 2, 4, 4, 4});
  CHECK(a->forward(x) == b->forward(x));

  auto bytes = encode_checkpoint(pa);
  CHECK(std::string(bytes.begin(), bytes.begin() + 5) == "DAEW1");
  bytes.resize(bytes.size() - 3);
  CHECK(oracle::raised([&] { decode_checkpoint(bytes, pb); }) == ErrorKind::Truncated);

  auto c = std::make_unique<Sequential<float>>();
  c->emplace<Conv3d<float>>("c1", 2, 4, 3, 1, 1, 1);
  auto pc = c->parameters();
  CHECK(oracle::raised([&] { load_checkpoint(pc, path); }) == ErrorKind::SchemaMismatch);
  std::filesystem::remove(path);
  CHECK(oracle::raised([&] { load_checkpoint(pc, path); }) == ErrorKind::MissingFile);
}
