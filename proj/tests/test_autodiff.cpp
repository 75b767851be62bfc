#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "dittryon/autodiff.hpp"
#include "dittryon/params.hpp"
#include "dittryon/rng.hpp"

using namespace dittryon;

namespace {

constexpr double kGradTol = 1e-4;

Tensor random_tensor(std::uint64_t seed, Shape shape, double scale = 1.0) {
  Rng rng(seed);
  return rng.normal_tensor(shape, scale);
}

}  // namespace

TEST(Primitive, MatmulIdentity) {
  Tape tape;
  auto eye = tape.constant(Tensor::matrix({{1, 0}, {0, 1}}));
  auto col = tape.constant(Tensor::matrix({{3}, {4}}));
  auto out = ops::matmul(eye, col);
  EXPECT_TRUE(bit_equal(out.value(), Tensor::matrix({{3}, {4}})));
}

TEST(Primitive, SoftmaxUniform) {
  Tape tape;
  auto out = ops::softmax(tape.constant(Tensor::vector({0, 0, 0})));
  for (double v : out.value().data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Primitive, MseOfIdenticalIsZero) {
  Tape tape;
  auto x = tape.constant(random_tensor(1, {3, 4}));
  EXPECT_EQ(ops::mse(x, x).value().item(), 0.0);
}

TEST(Primitive, LayerNormTwoValues) {
  Tape tape;
  auto x = tape.constant(Tensor::matrix({{2, 4}}));
  auto gain = tape.constant(Tensor::vector({1, 1}));
  auto bias = tape.constant(Tensor::vector({0, 0}));
  auto y = ops::layer_norm(x, gain, bias, 1e-5).value();
  // (x - 3) / sqrt(1 + 1e-5)
  const double expect = 1.0 / std::sqrt(1.0 + 1e-5);
  EXPECT_NEAR(y[0], -expect, 1e-15);
  EXPECT_NEAR(y[1], expect, 1e-15);
}

TEST(Primitive, ShapeMismatchIsDimensionError) {
  Tape tape;
  auto a = tape.constant(Tensor({2, 3}));
  auto b = tape.constant(Tensor({3, 2}));
  EXPECT_THROW(ops::add(a, b), DimensionError);
  EXPECT_THROW(ops::matmul(a, a), DimensionError);
  EXPECT_THROW(ops::mse(a, b), DimensionError);
  EXPECT_THROW(ops::add_row(a, tape.constant(Tensor({2}))), DimensionError);
  EXPECT_THROW(ops::layer_norm(a, 0.0), DimensionError);
}

TEST(Primitive, ScalarBroadcastOnly) {
  Tape tape;
  auto a = tape.constant(Tensor::vector({1, 2, 3}));
  auto s = tape.constant(Tensor::scalar(2));
  EXPECT_TRUE(bit_equal(ops::mul(a, s).value(), Tensor::vector({2, 4, 6})));
  EXPECT_THROW(ops::add(a, tape.constant(Tensor::vector({1}))), DimensionError);
}

TEST(Primitive, NonFiniteOutputNamesPrimitive) {
  Tape tape;
  auto big = tape.constant(Tensor::vector({1e308, 1e308}));
  try {
    ops::mul(big, big);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("mul"), std::string::npos);
  }
}

TEST(Backward, MeanOfSquares) {
  Tape tape;
  auto x = tape.leaf(Tensor::vector({1, 2, 3}), true);
  auto loss = ops::mean(ops::mul(x, x));
  auto g = tape.backward(loss)[x];
  EXPECT_NEAR(g[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(g[1], 4.0 / 3.0, 1e-15);
  EXPECT_NEAR(g[2], 2.0, 1e-15);
}

TEST(Backward, UnreachableLeafGetsZero) {
  Tape tape;
  auto x = tape.leaf(Tensor::vector({1, 2}), true);
  auto p = tape.leaf(Tensor({2, 2}, 5.0), true);
  auto grads = tape.backward(ops::sum(x));
  ASSERT_TRUE(grads.contains(p));
  EXPECT_TRUE(bit_equal(grads[p], Tensor({2, 2})));
}

TEST(Backward, NonScalarLossIsContractError) {
  Tape tape;
  auto x = tape.leaf(Tensor::vector({1, 2}), true);
  EXPECT_THROW(tape.backward(x), ContractError);
}

TEST(Backward, MatmulChainMatchesOracle) {
  const Tensor w1 = random_tensor(2, {4, 3});
  const Tensor w2 = random_tensor(3, {3, 2});
  auto f = [&](Tape& t, const Var& x) {
    auto h = ops::matmul(ops::matmul(x, t.constant(w1)), t.constant(w2));
    return ops::sum(h);
  };
  EXPECT_LT(grad_check(f, random_tensor(4, {2, 4}), 1e-5), kGradTol);
}

// Every primitive against central differences on seeded inputs.
class PrimitiveGrad : public ::testing::TestWithParam<int> {};

TEST_P(PrimitiveGrad, MatchesFiniteDifferences) {
  const int which = GetParam();
  const Tensor other = random_tensor(100 + which, {3, 4});
  const Tensor row = random_tensor(200 + which, {4});
  const Tensor weights = random_tensor(300 + which, {3, 4});
  // Weighted sum keeps the loss sensitive to every output coordinate.
  auto reduce = [&](Tape& t, const Var& y) {
    Tensor w(y.shape());
    Rng rng(999);
    for (auto& v : w.data()) v = rng.uniform(0.5, 1.5);
    return ops::sum(ops::mul(y, t.constant(w)));
  };
  ScalarFn f;
  switch (which) {
    case 0: f = [&](Tape& t, const Var& x) { return reduce(t, ops::add(x, t.constant(other))); }; break;
    case 1: f = [&](Tape& t, const Var& x) { return reduce(t, ops::sub(t.constant(other), x)); }; break;
    case 2: f = [&](Tape& t, const Var& x) { return reduce(t, ops::mul(x, x)); }; break;
    case 3: f = [&](Tape& t, const Var& x) { return reduce(t, ops::matmul(x, ops::transpose(t.constant(other)))); }; break;
    case 4: f = [&](Tape&, const Var& x) { return ops::mean(ops::mul(x, x)); }; break;
    case 5: f = [&](Tape& t, const Var& x) { return ops::mse(x, t.constant(other)); }; break;
    case 6: f = [&](Tape& t, const Var& x) { return reduce(t, ops::concat({x, t.constant(other), x}, 1)); }; break;
    case 7: f = [&](Tape& t, const Var& x) { return reduce(t, ops::slice(x, 1, 1, 3)); }; break;
    case 8: f = [&](Tape& t, const Var& x) { return reduce(t, ops::softmax(x)); }; break;
    case 9: f = [&](Tape& t, const Var& x) { return reduce(t, ops::layer_norm(x, 1e-5)); }; break;
    case 10:
      f = [&](Tape& t, const Var& x) {
        return reduce(t, ops::layer_norm(t.constant(weights), ops::slice(x, 0, 0, 1), ops::slice(x, 0, 1, 2), 1e-5));
      };
      break;
    case 11: f = [&](Tape& t, const Var& x) { return reduce(t, ops::gelu(x)); }; break;
    case 12: f = [&](Tape& t, const Var& x) { return reduce(t, ops::silu(x)); }; break;
    case 13: f = [&](Tape& t, const Var& x) { return reduce(t, ops::scale(x, -1.7)); }; break;
    case 14: f = [&](Tape& t, const Var& x) { return reduce(t, ops::transpose(x)); }; break;
    case 15: f = [&](Tape& t, const Var& x) { return reduce(t, ops::add_row(x, t.constant(row))); }; break;
    case 16: f = [&](Tape& t, const Var& x) { return reduce(t, ops::mul_row(t.constant(other), ops::slice(x, 0, 0, 1))); }; break;
    case 17: f = [&](Tape& t, const Var& x) { return reduce(t, ops::mul_row(x, t.constant(row))); }; break;
    case 18: f = [&](Tape& t, const Var& x) { return reduce(t, ops::gather_rows(x, {2, 0, 2, 1})); }; break;
    case 19: f = [&](Tape& t, const Var& x) { return reduce(t, ops::mul(x, ops::sum(x))); }; break;
    default: FAIL();
  }
  EXPECT_LT(grad_check(f, random_tensor(which, {3, 4}), 1e-5), kGradTol) << "case " << which;
}

INSTANTIATE_TEST_SUITE_P(AllPrimitives, PrimitiveGrad, ::testing::Range(0, 20));

TEST(GradCheck, MseAgainstZero) {
  auto f = [](Tape& t, const Var& x) { return ops::mse(x, t.constant(Tensor(x.shape()))); };
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    EXPECT_LT(grad_check(f, random_tensor(seed, {5}), 1e-5), 1e-6);
  }
}

TEST(GradCheck, ConstantFunctionHasZeroError) {
  auto f = [](Tape& t, const Var&) { return t.constant(Tensor::scalar(3.0)); };
  EXPECT_EQ(grad_check(f, random_tensor(1, {4}), 1e-4), 0.0);
}

TEST(GradCheck, RejectsNonDeterministicFunction) {
  int calls = 0;
  auto f = [&calls](Tape& t, const Var& x) {
    ++calls;
    return ops::scale(ops::sum(x), static_cast<double>(calls));
  };
  EXPECT_THROW(grad_check(f, random_tensor(1, {3}), 1e-5), OracleError);
}

TEST(GradCheck, RejectsBadStep) {
  auto f = [](Tape&, const Var& x) { return ops::sum(x); };
  EXPECT_THROW(grad_check(f, Tensor({2}), 1e-2), ContractError);
  EXPECT_THROW(grad_check(f, Tensor({2}), 1e-8), ContractError);
}

TEST(Property, ConcatThenSliceIsBitExact) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const std::size_t axis = rng.below(2);
    const Tensor a = rng.normal_tensor({2 + rng.below(3), 3 + rng.below(3)});
    Shape sb = a.shape();
    sb[axis] = 1 + rng.below(4);
    const Tensor b = rng.normal_tensor(sb);
    Tape tape;
    auto cat = ops::concat({tape.constant(a), tape.constant(b)}, axis);
    const std::size_t na = a.shape()[axis];
    EXPECT_TRUE(bit_equal(ops::slice(cat, axis, 0, na).value(), a));
    EXPECT_TRUE(bit_equal(ops::slice(cat, axis, na, na + sb[axis]).value(), b));
  }
}

TEST(Property, SoftmaxNormalizedAndShiftInvariant) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const Tensor logits = rng.normal_tensor({4, 7}, 5.0);
    const double shift = rng.uniform(-50, 50);
    Tensor shifted = logits;
    for (auto& v : shifted.data()) v += shift;
    Tape tape;
    const Tensor p = ops::softmax(tape.constant(logits)).value();
    const Tensor q = ops::softmax(tape.constant(shifted)).value();
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 7; ++c) s += p.at(r, c);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
    EXPECT_LT(max_abs_diff(p, q), 1e-9);
  }
}

TEST(Property, AccumulationOrderIndependent) {
  const Tensor x0 = random_tensor(7, {3, 3});
  const Tensor w = random_tensor(8, {3, 3});
  // The same function recorded with its two branches in opposite order.
  auto run = [&](bool swap) {
    Tape tape;
    auto x = tape.leaf(x0, true);
    auto branch_a = [&] { return ops::sum(ops::gelu(ops::matmul(x, tape.constant(w)))); };
    auto branch_b = [&] { return ops::mean(ops::softmax(ops::mul(x, x))); };
    Var a, b;
    if (swap) {
      b = branch_b();
      a = branch_a();
    } else {
      a = branch_a();
      b = branch_b();
    }
    auto grads = tape.backward(ops::add(a, b));
    return grads[x];
  };
  EXPECT_LT(max_abs_diff(run(false), run(true)), 1e-12);
}

TEST(Checkpoint, BitExactRoundTrip) {
  ParamStore store;
  Rng rng(5);
  store.set("tryonnet/w", rng.normal_tensor({3, 4}));
  store.set("semenc/mix", rng.normal_tensor({2, 2, 2}));
  store.set("meta/scalar", Tensor::scalar(-0.0));
  const std::string bytes = encode_checkpoint(store);
  EXPECT_EQ(bytes.substr(0, 4), "TVTW");
  const ParamStore back = decode_checkpoint(bytes);
  ASSERT_EQ(back.size(), store.size());
  for (const auto& [name, t] : store) EXPECT_TRUE(bit_equal(back.get(name), t)) << name;
  EXPECT_EQ(encode_checkpoint(back), bytes);
}

TEST(Checkpoint, LayoutMatchesFormat) {
  ParamStore store;
  store.set("a", Tensor::vector({1.5}));
  const std::string bytes = encode_checkpoint(store);
  // magic + version + count + (len + "a") + rank + extent + value
  ASSERT_EQ(bytes.size(), 4u + 4 + 4 + 4 + 1 + 4 + 8 + 8);
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1);  // version, little-endian
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 1);  // tensor count
  EXPECT_EQ(bytes[16], 'a');
  double v;
  std::memcpy(&v, bytes.data() + bytes.size() - 8, 8);
  EXPECT_EQ(v, 1.5);
}

TEST(Checkpoint, RejectsCorruption) {
  ParamStore store;
  store.set("x/y", Tensor::vector({1, 2}));
  std::string bytes = encode_checkpoint(store);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), CheckpointError);
  bytes[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bytes), CheckpointError);
}
