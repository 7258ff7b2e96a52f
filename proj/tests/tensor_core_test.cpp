#include <cmath>
#include <limits>
#include <vector>

#include <gtest/gtest.h>

#include "siamdepth/io.hpp"
#include "siamdepth/ops.hpp"
#include "test_support.hpp"

using namespace siamdepth;
using namespace siamdepth::testing;

TEST(Tensor, SizeMustMatchShape) {
  EXPECT_THROW(Tensor<D>(Shape{1, 1, 2, 2}, std::vector<D>{1, 2, 3}), ShapeError);
  EXPECT_THROW(Tensor<D>(Shape{1, -1, 2, 2}), ShapeError);
  const Tensor<D> t(Shape{2, 3, 4, 5}, 1.5);
  EXPECT_EQ(t.size(), 120u);
  EXPECT_TRUE(t.all_finite());
}

TEST(Tensor, StorageIsCacheLineAligned) {
  for (int n = 1; n < 40; n += 7) {
    const Tensor<float> t(Shape{1, 1, 1, n});
    EXPECT_EQ(reinterpret_cast<std::uintptr_t>(t.data().data()) % 64, 0u);
  }
}

TEST(Tensor, NonFiniteValuesAreDetected) {
  Tensor<D> t(Shape{1, 1, 1, 3}, 0.0);
  t[1] = std::numeric_limits<D>::quiet_NaN();
  EXPECT_FALSE(t.all_finite());
  Tape<D> tape;
  EXPECT_THROW(tape.variable(t), NumericError);
}

TEST(Elementwise, Examples) {
  Tape<D> tape;
  const Var<D> zero = tape.constant(Tensor<D>::scalar(0.0));
  EXPECT_EQ(sigmoid(zero).value().item(), 0.5);
  EXPECT_EQ(abs(tape.constant(Tensor<D>::scalar(-3.0))).value().item(), 3.0);
  EXPECT_NEAR(elu(tape.constant(Tensor<D>::scalar(-1.0))).value().item(), std::exp(-1.0) - 1.0, 1e-15);
  EXPECT_NEAR(elu(tape.constant(Tensor<D>::scalar(-1.0))).value().item(), -0.6321, 1e-4);
  EXPECT_EQ(scale(tape.constant(Tensor<D>::scalar(2.0)), 3.0).value().item(), 6.0);
}

TEST(Elementwise, NoImplicitBroadcasting) {
  Tape<D> tape;
  const Var<D> a = tape.constant(Tensor<D>(Shape{1, 1, 2, 2}, 1.0));
  const Var<D> b = tape.constant(Tensor<D>(Shape{1, 1, 2, 1}, 1.0));
  try {
    (void)(a + b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("width"), std::string::npos) << e.what();
  }
  EXPECT_THROW((void)(a * tape.constant(Tensor<D>(Shape{2, 1, 2, 2}))), ShapeError);
}

TEST(Elementwise, ActivationsRejectNonFiniteInput) {
  Tape<D> tape;
  tape.set_check_finite(false);
  const Var<D> inf = tape.constant(Tensor<D>::scalar(std::numeric_limits<D>::infinity()));
  EXPECT_THROW(sigmoid(inf), NumericError);
  EXPECT_THROW(elu(inf), NumericError);
}

TEST(Reduce, Examples) {
  Tape<D> tape;
  EXPECT_EQ(mean(tape.constant(Tensor<D>(Shape{1, 1, 1, 4}, {1, 2, 3, 4}))).value().item(), 2.5);
  EXPECT_EQ(sum(tape.constant(Tensor<D>(Shape{1, 2, 3, 4}, 0.0))).value().item(), 0.0);
  EXPECT_EQ(mean(tape.constant(Tensor<D>(Shape{1, 1, 2, 2}, {1, 1, 3, 3}))).value().item(), 2.0);
  EXPECT_THROW(mean(tape.constant(Tensor<D>(Shape{0, 1, 1, 1}))), ShapeError);
}

TEST(Concat, ShapesAndOrder) {
  Tape<D> tape;
  Rng rng(1);
  const Tensor<D> a = random_tensor(rng, {1, 2, 3, 4});
  const Tensor<D> b = random_tensor(rng, {1, 3, 3, 4});
  const Var<D> c = concat_channels<D>({tape.constant(a), tape.constant(b)});
  EXPECT_EQ(c.shape(), (Shape{1, 5, 3, 4}));
  for (int ch = 0; ch < 2; ++ch) EXPECT_EQ(c.value()(0, ch, 1, 2), a(0, ch, 1, 2));
  for (int ch = 0; ch < 3; ++ch) EXPECT_EQ(c.value()(0, 2 + ch, 2, 3), b(0, ch, 2, 3));
  EXPECT_EQ(concat_channels<D>({tape.constant(a)}).value(), a);
  EXPECT_THROW(concat_channels<D>({tape.constant(a), tape.constant(Tensor<D>(Shape{1, 1, 2, 4}))}), ShapeError);
}

TEST(Conv2d, Examples) {
  Tape<D> tape;
  Rng rng(2);
  const Tensor<D> x = random_tensor(rng, {1, 1, 4, 5});
  const Var<D> id = conv2d(tape.constant(x), tape.constant(Tensor<D>(Shape{1, 1, 1, 1}, 1.0)),
                           tape.constant(Tensor<D>(Shape{1, 1, 1, 1}, 0.0)), 1, 0);
  EXPECT_EQ(id.value(), x);

  const Var<D> ones = conv2d(tape.constant(Tensor<D>(Shape{1, 1, 3, 3}, 1.0)),
                             tape.constant(Tensor<D>(Shape{1, 1, 3, 3}, 1.0)),
                             tape.constant(Tensor<D>(Shape{1, 1, 1, 1}, 0.0)), 1, 1);
  EXPECT_EQ(ones.value()(0, 0, 1, 1), 9.0);
  EXPECT_EQ(ones.value()(0, 0, 0, 0), 4.0);
  EXPECT_EQ(ones.value()(0, 0, 2, 2), 4.0);
  EXPECT_EQ(ones.value()(0, 0, 0, 1), 6.0);

  const Var<D> b = conv2d(tape.constant(random_tensor(rng, {2, 3, 5, 5})), tape.constant(Tensor<D>(Shape{4, 3, 3, 3})),
                          tape.constant(Tensor<D>(Shape{1, 4, 1, 1}, 0.25)), 2, 1);
  EXPECT_EQ(b.shape(), (Shape{2, 4, 3, 3}));
  for (D v : b.value().storage()) EXPECT_EQ(v, 0.25);
}

TEST(Conv2d, ErrorsNameTheDimension) {
  Tape<D> tape;
  const Var<D> x = tape.constant(Tensor<D>(Shape{1, 3, 4, 4}));
  const Var<D> bias = tape.constant(Tensor<D>(Shape{1, 2, 1, 1}));
  try {
    conv2d(x, tape.constant(Tensor<D>(Shape{2, 2, 3, 3})), bias, 1, 1);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("channels"), std::string::npos);
  }
  EXPECT_THROW(conv2d(x, tape.constant(Tensor<D>(Shape{2, 3, 3, 3})), bias, 0, 1), ShapeError);
  EXPECT_THROW(conv2d(x, tape.constant(Tensor<D>(Shape{2, 3, 3, 3})), bias, 1, -1), ShapeError);
  EXPECT_THROW(conv2d(x, tape.constant(Tensor<D>(Shape{2, 3, 3, 3})), tape.constant(Tensor<D>(Shape{1, 3, 1, 1})), 1,
                      1),
               ShapeError);
}

/// Direct evaluation of the convolution sum, independent of im2col and GEMM.
Tensor<D> naive_conv(const Tensor<D>& x, const Tensor<D>& w, const Tensor<D>& b, int stride, int pad) {
  const Shape& is = x.shape();
  const Shape& ws = w.shape();
  const int ho = (is.h + 2 * pad - ws.h) / stride + 1, wo = (is.w + 2 * pad - ws.w) / stride + 1;
  Tensor<D> out(Shape{is.n, ws.n, ho, wo});
  for (int n = 0; n < is.n; ++n)
    for (int co = 0; co < ws.n; ++co)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          double acc = b[co];
          for (int ci = 0; ci < is.c; ++ci)
            for (int ky = 0; ky < ws.h; ++ky)
              for (int kx = 0; kx < ws.w; ++kx) {
                const int y = oy * stride - pad + ky, xx = ox * stride - pad + kx;
                if (y < 0 || y >= is.h || xx < 0 || xx >= is.w) continue;
                acc += w(co, ci, ky, kx) * x(n, ci, y, xx);
              }
          out(n, co, oy, ox) = acc;
        }
  return out;
}

TEST(Conv2d, MatchesDirectSum) {
  Rng rng(3);
  for (int stride : {1, 2})
    for (int k : {1, 3, 5}) {
      const Tensor<D> x = random_tensor(rng, {2, 3, 7, 9});
      const Tensor<D> w = random_tensor(rng, {4, 3, k, k});
      const Tensor<D> b = random_tensor(rng, {1, 4, 1, 1});
      Tape<D> tape;
      const auto y = conv2d(tape.constant(x), tape.constant(w), tape.constant(b), stride, k / 2).value();
      EXPECT_LT(max_abs_diff(y, naive_conv(x, w, b, stride, k / 2)), 1e-13);
    }
}

TEST(Backward, Examples) {
  {
    Tape<D> tape;
    const Var<D> x = tape.variable(Tensor<D>(Shape{1, 1, 2, 3}, 0.7));
    tape.backward(sum(x));
    const Tensor<D> g = tape.grad(x);
    for (D v : g.storage()) EXPECT_EQ(v, 1.0);
  }
  {
    Tape<D> tape;
    const Var<D> x = tape.variable(Tensor<D>::scalar(3.0));
    tape.backward(sum(x * x));
    EXPECT_EQ(tape.grad(x).item(), 6.0);
    const double fd = ((3.0 + kFdStep) * (3.0 + kFdStep) - (3.0 - kFdStep) * (3.0 - kFdStep)) / (2 * kFdStep);
    EXPECT_NEAR(tape.grad(x).item(), fd, 1e-8);
  }
  {
    Tape<D> tape;
    const Var<D> x = tape.variable(Tensor<D>::scalar(0.0));
    tape.backward(sigmoid(x));
    EXPECT_EQ(tape.grad(x).item(), 0.25);
  }
}

TEST(Backward, RequiresScalarLoss) {
  Tape<D> tape;
  const Var<D> x = tape.variable(Tensor<D>(Shape{1, 1, 1, 2}, 1.0));
  EXPECT_THROW(tape.backward(x), ShapeError);
}

TEST(Backward, NodeIdsAreTopological) {
  Tape<D> tape;
  Rng rng(4);
  const Var<D> a = tape.variable(random_tensor(rng, {1, 2, 3, 3}));
  const Var<D> b = elu(a * a + a);
  const Var<D> c = mean(concat_channels<D>({b, a}));
  for (NodeId id = 0; id < tape.size(); ++id)
    for (NodeId in : tape.inputs(id)) EXPECT_LT(in, id);
  tape.backward(c);
  for (NodeId id = 0; id < tape.size(); ++id) {
    if (tape.requires_grad(id)) {
      EXPECT_TRUE(tape.has_grad(id));
      EXPECT_EQ(tape.grad(Var<D>{&tape, id}).shape(), tape.value(id).shape());
    }
  }
}

TEST(Backward, SharedParameterAccumulatesBothUses) {
  Rng rng(5);
  Parameter<D> w{"w", random_tensor(rng, {2, 3, 3, 3}), true};
  Parameter<D> b{"b", random_tensor(rng, {1, 2, 1, 1}), true};
  const Tensor<D> x1 = random_tensor(rng, {1, 3, 5, 5});
  const Tensor<D> x2 = random_tensor(rng, {1, 3, 5, 5});
  auto branch = [&](Tape<D>& t, const Tensor<D>& x) {
    return mean(elu(conv2d(t.constant(x), t.parameter(w), t.parameter(b), 1, 1)));
  };
  Tape<D> both;
  both.backward(branch(both, x1) + branch(both, x2));
  Tape<D> one, two;
  one.backward(branch(one, x1));
  two.backward(branch(two, x2));
  EXPECT_EQ(both.size(), one.size() + two.size() - 2 + 1);  // the two leaves are shared, plus the final add
  const Tensor<D> gw = both.grad(both.parameter(w));
  const Tensor<D> g1 = one.grad(one.parameter(w)), g2 = two.grad(two.parameter(w));
  for (std::size_t i = 0; i < gw.size(); ++i) EXPECT_LE(rel_diff(gw[i], g1[i] + g2[i]), 1e-12);
}

TEST(Backward, Deterministic) {
  auto run = [] {
    Tape<D> tape;
    Rng rng(6);
    const Var<D> x = tape.variable(random_tensor(rng, {2, 3, 6, 6}));
    const Var<D> w = tape.variable(random_tensor(rng, {4, 3, 3, 3}));
    const Var<D> b = tape.variable(random_tensor(rng, {1, 4, 1, 1}));
    tape.backward(mean(elu(conv2d(x, w, b, 2, 1))));
    return std::vector<Tensor<D>>{tape.grad(x), tape.grad(w), tape.grad(b)};
  };
  EXPECT_EQ(run(), run());
}

// Finite-difference checks of every differentiable tensor-core operation.

class TensorCoreGradients : public ::testing::TestWithParam<int> {};

TEST_P(TensorCoreGradients, Elementwise) {
  Rng rng(100 + GetParam());
  const Shape s{1, 2, 3, 3};
  const Tensor<D> a = random_tensor(rng, s), b = random_tensor(rng, s, 0.5, 2.0);
  // abs is kinked at 0, so its inputs stay away from it
  Tensor<D> a_off = a;
  for (auto& v : a_off.storage()) v = v < 0 ? v - 0.1 : v + 0.1;
  const std::vector<std::pair<const char*, TapeFn>> cases = {
      {"add", [](Tape<D>& t, const auto& v) { return weighted_sum(t, v[0] + v[1], 1); }},
      {"sub", [](Tape<D>& t, const auto& v) { return weighted_sum(t, v[0] - v[1], 2); }},
      {"mul", [](Tape<D>& t, const auto& v) { return weighted_sum(t, v[0] * v[1], 3); }},
      {"div", [](Tape<D>& t, const auto& v) { return weighted_sum(t, v[0] / v[1], 4); }},
      {"sigmoid", [](Tape<D>& t, const auto& v) { return weighted_sum(t, sigmoid(v[0]), 5); }},
      {"elu", [](Tape<D>& t, const auto& v) { return weighted_sum(t, elu(v[0]), 6); }},
      {"scale", [](Tape<D>& t, const auto& v) { return weighted_sum(t, scale(v[0], -1.7), 7); }},
      {"offset", [](Tape<D>& t, const auto& v) { return weighted_sum(t, offset(v[0], 0.3), 8); }},
  };
  for (const auto& [name, f] : cases) {
    const auto r = check_gradients(f, {a, b});
    EXPECT_EQ(r.failures, 0u) << name << ": " << r.first_failure;
  }
  const auto r = check_gradients([](Tape<D>& t, const auto& v) { return weighted_sum(t, abs(v[0]), 9); }, {a_off});
  EXPECT_EQ(r.failures, 0u) << "abs: " << r.first_failure;
}

TEST_P(TensorCoreGradients, Reductions) {
  Rng rng(200 + GetParam());
  const Tensor<D> a = random_tensor(rng, {2, 2, 3, 4});
  for (const Reduction kind : {Reduction::Mean, Reduction::Sum}) {
    const auto r = check_gradients(
        [kind](Tape<D>& t, const auto& v) { return reduce(kind, elu(v[0])); }, {a});
    EXPECT_EQ(r.failures, 0u) << r.first_failure;
  }
}

TEST_P(TensorCoreGradients, Concat) {
  Rng rng(300 + GetParam());
  const auto r = check_gradients(
      [](Tape<D>& t, const auto& v) { return weighted_sum(t, concat_channels<D>({v[0], v[1], v[0]}), 11); },
      {random_tensor(rng, {2, 1, 3, 3}), random_tensor(rng, {2, 2, 3, 3})});
  EXPECT_EQ(r.failures, 0u) << r.first_failure;
}

TEST_P(TensorCoreGradients, Conv2d) {
  Rng rng(400 + GetParam());
  const int stride = 1 + GetParam() % 2, k = GetParam() % 3 == 0 ? 1 : 3;
  const auto r = check_gradients(
      [stride, k](Tape<D>& t, const auto& v) { return weighted_sum(t, conv2d(v[0], v[1], v[2], stride, k / 2), 12); },
      {random_tensor(rng, {2, 3, 5, 6}), random_tensor(rng, {4, 3, k, k}), random_tensor(rng, {1, 4, 1, 1})});
  EXPECT_EQ(r.failures, 0u) << r.first_failure;
}

INSTANTIATE_TEST_SUITE_P(RandomInstances, TensorCoreGradients, ::testing::Range(0, 5));

// Checkpoint container

TEST(Checkpoint, RoundTripIsBitExact) {
  Rng rng(7);
  ParameterSet<float> ps;
  ps.add("enc1.weight", random_tensor(rng, {4, 3, 3, 3}).cast<float>(), true);
  ps.add("enc1.bias", random_tensor(rng, {1, 4, 1, 1}).cast<float>(), true);
  ps[1].value[2] = -0.0f;
  ps[1].value[3] = std::numeric_limits<float>::denorm_min();
  const std::string bytes = encode_params(ps);
  ParameterSet<float> back;
  back.add("enc1.weight", Tensor<float>(Shape{4, 3, 3, 3}), true);
  back.add("enc1.bias", Tensor<float>(Shape{1, 4, 1, 1}), true);
  decode_params_into(bytes, back);
  EXPECT_EQ(encode_params(back), bytes);
  EXPECT_TRUE(std::signbit(back[1].value[2]));
  EXPECT_EQ(back[1].value[3], std::numeric_limits<float>::denorm_min());
}

TEST(Checkpoint, ByteLayout) {
  ParameterSet<float> ps;
  ps.add("ab", Tensor<float>(Shape{1, 1, 1, 2}, {1.0f, -2.0f}), true);
  const std::string b = encode_params(ps);
  const std::string expected = std::string("SMCK1") + '\x04' + std::string("\x01\x00\x00\x00", 4) +
                               std::string("\x02\x00\x00\x00", 4) + "ab" + std::string("\x01\x00\x00\x00", 4) +
                               std::string("\x01\x00\x00\x00", 4) + std::string("\x01\x00\x00\x00", 4) +
                               std::string("\x02\x00\x00\x00", 4) + std::string("\x00\x00\x80\x3f", 4) +
                               std::string("\x00\x00\x00\xc0", 4);
  EXPECT_EQ(b, expected);
}

TEST(Checkpoint, CorruptFilesAreRejected) {
  ParameterSet<float> ps;
  ps.add("w", Tensor<float>(Shape{1, 1, 2, 2}, 0.5f), true);
  const std::string good = encode_params(ps);
  auto load = [&](const std::string& bytes) {
    ParameterSet<float> q;
    q.add("w", Tensor<float>(Shape{1, 1, 2, 2}), true);
    decode_params_into(bytes, q);
  };
  EXPECT_NO_THROW(load(good));
  EXPECT_THROW(load("SMCK2" + good.substr(5)), DataError);
  EXPECT_THROW(load(good.substr(0, good.size() - 1)), DataError);
  EXPECT_THROW(load(good + "x"), DataError);
  ParameterSet<float> other;
  other.add("v", Tensor<float>(Shape{1, 1, 2, 2}), true);
  EXPECT_THROW(load(encode_params(other)), DataError);
  ParameterSet<double> wide;
  wide.add("w", Tensor<double>(Shape{1, 1, 2, 2}), true);
  EXPECT_THROW(load(encode_params(wide)), DataError);
}

TEST(ParameterSet, NamesAreUnique) {
  ParameterSet<D> ps;
  ps.add("a", Tensor<D>(Shape{1, 1, 1, 1}), true);
  EXPECT_THROW(ps.add("a", Tensor<D>(Shape{1, 1, 1, 1}), true), ConfigError);
}
