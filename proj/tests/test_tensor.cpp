#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "comgnn/tensor.hpp"

using namespace comgnn;

namespace {

Tensor rand_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v));
}

}  // namespace

TEST_CASE("mish matches high-precision reference values", "[tensor]") {
  // x * tanh(softplus(x)), references computed at 50-digit precision
  const std::vector<std::pair<double, double>> table = {
      {-5.0, -0.033576237730161705396}, {-1.0, -0.30340146137410891807},
      {-0.5, -0.22074377465172999682},  {0.0, 0.0},
      {0.5, 0.37524521130489510482},    {1.0, 0.86509838826731034612},
      {2.0, 1.9439589595339945203},     {5.0, 4.9995520775294056873},
  };
  for (auto [x, want] : table) REQUIRE(std::abs(mish_scalar(x) - want) < 1e-15);

  // stable tails: softplus(x) ~ x for large x, ~ e^x for very negative x
  REQUIRE(std::abs(mish_scalar(40.0) - 40.0) < 1e-12);
  REQUIRE(std::abs(mish_scalar(-30.0) - (-30.0 * std::exp(-30.0))) < 1e-20);
  REQUIRE(std::isfinite(mish_scalar(700.0)));
  REQUIRE(std::isfinite(mish_scalar(-700.0)));
}

TEST_CASE("sigmoid is stable and symmetric", "[tensor]") {
  REQUIRE(std::abs(sigmoid_scalar(1.0) - 0.73105857863000487925) < 1e-15);
  REQUIRE(std::abs(sigmoid_scalar(0.0) - 0.5) < 1e-16);
  REQUIRE(std::abs(sigmoid_scalar(-3.0) + sigmoid_scalar(3.0) - 1.0) < 1e-15);
  REQUIRE(sigmoid_scalar(800.0) == 1.0);
  REQUIRE(sigmoid_scalar(-800.0) >= 0.0);
  REQUIRE(std::isfinite(sigmoid_scalar(-800.0)));
}

TEST_CASE("elementwise ops forward and gradient", "[tensor]") {
  Rng rng(7);
  Tensor a = rand_tensor({3, 4}, rng);
  Tensor b = rand_tensor({3, 4}, rng);

  Tensor s = add(a, b);
  for (std::size_t i = 0; i < 12; ++i)
    REQUIRE(s.value_at(i) == a.value_at(i) + b.value_at(i));

  auto through_sumsq = [&](auto op) {
    return [op, &b](const Tensor& x) { return sumsq(op(x, b)); };
  };
  REQUIRE(grad_check(through_sumsq([](const Tensor& x, const Tensor& y) { return add(x, y); }), a) < 1e-7);
  REQUIRE(grad_check(through_sumsq([](const Tensor& x, const Tensor& y) { return sub(x, y); }), a) < 1e-7);
  REQUIRE(grad_check(through_sumsq([](const Tensor& x, const Tensor& y) { return mul(x, y); }), a) < 1e-7);
  REQUIRE(grad_check([](const Tensor& x) { return sum(scale(x, -2.5)); }, a) < 1e-7);
  REQUIRE(grad_check([](const Tensor& x) { return sumsq(mish(x)); }, a) < 1e-6);
  REQUIRE(grad_check([](const Tensor& x) { return sumsq(sigmoid(x)); }, a) < 1e-6);
}

TEST_CASE("leaky_relu kink and gradient away from zero", "[tensor]") {
  Tensor x = Tensor::from({4}, {-2.0, -0.5, 0.5, 3.0});
  Tensor y = leaky_relu(x, 0.2);
  REQUIRE(y.value_at(0) == -0.4);
  REQUIRE(y.value_at(1) == -0.1);
  REQUIRE(y.value_at(2) == 0.5);
  REQUIRE(y.value_at(3) == 3.0);
  REQUIRE(grad_check([](const Tensor& t) { return sumsq(leaky_relu(t, 0.2)); }, x) < 1e-7);
  REQUIRE_THROWS(leaky_relu(x, 1.5));
}

TEST_CASE("matmul forward matches manual triple loop", "[tensor]") {
  Rng rng(11);
  Tensor a = rand_tensor({4, 3}, rng);
  Tensor b = rand_tensor({3, 5}, rng);
  Tensor c = matmul(a, b);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      double want = 0.0;
      for (std::size_t k = 0; k < 3; ++k) want += a.value_at(i * 3 + k) * b.value_at(k * 5 + j);
      REQUIRE(std::abs(c.value_at(i * 5 + j) - want) < 1e-14);
    }
  REQUIRE(grad_check([&b](const Tensor& x) { return sumsq(matmul(x, b)); }, a) < 1e-6);
  REQUIRE(grad_check([&a](const Tensor& x) { return sumsq(matmul(a, x)); }, b) < 1e-6);
  REQUIRE_THROWS(matmul(a, a));
}

TEST_CASE("linear equals matmul with transposed weight plus bias", "[tensor]") {
  Rng rng(13);
  Tensor x = rand_tensor({5, 3}, rng);
  Tensor w = rand_tensor({4, 3}, rng);
  Tensor b = rand_tensor({4}, rng);
  Tensor y = linear(x, w, b);
  REQUIRE(y.shape() == Shape{5, 4});
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t o = 0; o < 4; ++o) {
      double want = b.value_at(o);
      for (std::size_t k = 0; k < 3; ++k) want += x.value_at(i * 3 + k) * w.value_at(o * 3 + k);
      REQUIRE(std::abs(y.value_at(i * 4 + o) - want) < 1e-14);
    }
  REQUIRE(grad_check([&w, &b](const Tensor& t) { return sumsq(linear(t, w, b)); }, x) < 1e-6);
  REQUIRE(grad_check([&x, &b](const Tensor& t) { return sumsq(linear(x, t, b)); }, w) < 1e-6);
  REQUIRE(grad_check([&x, &w](const Tensor& t) { return sumsq(linear(x, w, t)); }, b) < 1e-6);
}

TEST_CASE("concat and narrow round trip with gradients", "[tensor]") {
  Rng rng(17);
  Tensor a = rand_tensor({2, 3}, rng);
  Tensor b = rand_tensor({2, 2}, rng);
  Tensor c = concat({a, b}, 1);
  REQUIRE(c.shape() == Shape{2, 5});
  Tensor back = narrow(c, 1, 0, 3);
  for (std::size_t i = 0; i < 6; ++i) REQUIRE(back.value_at(i) == a.value_at(i));
  Tensor tail = narrow(c, 1, 3, 2);
  for (std::size_t i = 0; i < 4; ++i) REQUIRE(tail.value_at(i) == b.value_at(i));

  REQUIRE(grad_check([&b](const Tensor& x) { return sumsq(concat({x, b}, 1)); }, a) < 1e-7);
  REQUIRE(grad_check([](const Tensor& x) { return sumsq(narrow(x, 1, 1, 2)); }, a) < 1e-7);
  REQUIRE(grad_check([](const Tensor& x) { return sumsq(reshape(x, {6})); }, a) < 1e-7);
  REQUIRE_THROWS(concat({a, rand_tensor({3, 2}, rng)}, 1));
  REQUIRE_THROWS(narrow(a, 1, 2, 5));
  REQUIRE_THROWS(reshape(a, {7}));
}

TEST_CASE("gather_rows selects and scatter-adds on backward", "[tensor]") {
  Tensor x = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6});
  std::vector<std::size_t> idx = {2, 0, 2};
  Tensor g = gather_rows(x, idx);
  REQUIRE(g.values() == std::vector<double>{5, 6, 1, 2, 5, 6});

  Tape tape;
  {
    TapeScope scope(tape);
    x.set_requires_grad(true);
    x.zero_grad();
    Tensor loss = sum(gather_rows(x, idx));
    backward(loss, tape);
  }
  // row 2 gathered twice, row 1 never
  REQUIRE(x.grad() == std::vector<double>{1, 1, 0, 0, 2, 2});
  REQUIRE(grad_check([&idx](const Tensor& t) { return sumsq(gather_rows(t, idx)); }, x) < 1e-7);
  REQUIRE_THROWS(gather_rows(x, {3}));
}

TEST_CASE("segment_sum accumulates per segment", "[tensor]") {
  Tensor v = Tensor::from({4, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  std::vector<std::size_t> seg = {1, 0, 1, 1};
  Tensor s = segment_sum(v, seg, 3);
  REQUIRE(s.values() == std::vector<double>{3, 4, 13, 16, 0, 0});
  REQUIRE(grad_check([&seg](const Tensor& t) { return sumsq(segment_sum(t, seg, 3)); }, v) < 1e-7);
  REQUIRE_THROWS(segment_sum(v, {0, 1, 2, 3}, 3));
  REQUIRE_THROWS(segment_sum(v, {0, 1}, 3));
}

TEST_CASE("segment_softmax normalizes within each segment", "[tensor]") {
  Rng rng(23);
  Tensor s = rand_tensor({7}, rng, -3.0, 3.0);
  std::vector<std::size_t> seg = {0, 1, 0, 2, 1, 0, 2};
  Tensor a = segment_softmax(s, seg);
  double sums[3] = {0, 0, 0};
  for (std::size_t i = 0; i < 7; ++i) {
    REQUIRE(a.value_at(i) > 0.0);
    sums[seg[i]] += a.value_at(i);
  }
  for (double x : sums) REQUIRE(std::abs(x - 1.0) < 1e-15);

  // matches dense softmax computed per segment
  for (std::size_t g = 0; g < 3; ++g) {
    double z = 0.0;
    for (std::size_t i = 0; i < 7; ++i)
      if (seg[i] == g) z += std::exp(s.value_at(i));
    for (std::size_t i = 0; i < 7; ++i)
      if (seg[i] == g) REQUIRE(std::abs(a.value_at(i) - std::exp(s.value_at(i)) / z) < 1e-14);
  }

  // large scores stay finite thanks to the max shift
  Tensor big = Tensor::from({3}, {500.0, 501.0, 499.0});
  Tensor ab = segment_softmax(big, {0, 0, 0});
  REQUIRE(std::isfinite(ab.value_at(0)));
  REQUIRE(std::abs(ab.value_at(0) + ab.value_at(1) + ab.value_at(2) - 1.0) < 1e-15);

  REQUIRE(grad_check(
              [&seg](const Tensor& t) {
                Tensor w = segment_softmax(t, seg);
                Tensor q = Tensor::from({7}, {0.3, -1.2, 2.0, 0.7, -0.4, 1.1, -2.2});
                return sum(mul(w, q));
              },
              s) < 1e-6);
  REQUIRE_THROWS(segment_softmax(Tensor::from({1}, {std::nan("")}), {0}));
}

TEST_CASE("scale_rows, rowwise_dot, rows_matvec", "[tensor]") {
  Rng rng(29);
  Tensor v = rand_tensor({3, 4}, rng);
  Tensor w = rand_tensor({3}, rng);
  Tensor sr = scale_rows(v, w);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t c = 0; c < 4; ++c)
      REQUIRE(sr.value_at(i * 4 + c) == w.value_at(i) * v.value_at(i * 4 + c));
  REQUIRE(grad_check([&w](const Tensor& t) { return sumsq(scale_rows(t, w)); }, v) < 1e-6);
  REQUIRE(grad_check([&v](const Tensor& t) { return sumsq(scale_rows(v, t)); }, w) < 1e-6);

  Tensor u = rand_tensor({3, 4}, rng);
  Tensor d = rowwise_dot(v, u);
  for (std::size_t i = 0; i < 3; ++i) {
    double want = 0.0;
    for (std::size_t c = 0; c < 4; ++c) want += v.value_at(i * 4 + c) * u.value_at(i * 4 + c);
    REQUIRE(std::abs(d.value_at(i) - want) < 1e-14);
  }
  REQUIRE(grad_check([&u](const Tensor& t) { return sumsq(rowwise_dot(t, u)); }, v) < 1e-6);

  // per-row mat-vec agrees with matmul applied row by row
  Tensor mats = rand_tensor({2, 6}, rng);
  Tensor vecs = rand_tensor({2, 3}, rng);
  Tensor mv = rows_matvec(mats, vecs, 2);
  REQUIRE(mv.shape() == Shape{2, 2});
  for (std::size_t i = 0; i < 2; ++i) {
    Tensor m = Tensor::from({2, 3}, {mats.value_at(i * 6 + 0), mats.value_at(i * 6 + 1),
                                     mats.value_at(i * 6 + 2), mats.value_at(i * 6 + 3),
                                     mats.value_at(i * 6 + 4), mats.value_at(i * 6 + 5)});
    Tensor x = Tensor::from({3, 1}, {vecs.value_at(i * 3 + 0), vecs.value_at(i * 3 + 1),
                                     vecs.value_at(i * 3 + 2)});
    Tensor want = matmul(m, x);
    REQUIRE(std::abs(mv.value_at(i * 2 + 0) - want.value_at(0)) < 1e-14);
    REQUIRE(std::abs(mv.value_at(i * 2 + 1) - want.value_at(1)) < 1e-14);
  }
  REQUIRE(grad_check([&vecs](const Tensor& t) { return sumsq(rows_matvec(t, vecs, 2)); }, mats) < 1e-6);
  REQUIRE(grad_check([&mats](const Tensor& t) { return sumsq(rows_matvec(mats, t, 2)); }, vecs) < 1e-6);
}

TEST_CASE("glu gates first half by sigmoid of second half", "[tensor]") {
  Rng rng(31);
  Tensor x = rand_tensor({2, 3, 6}, rng);
  Tensor y = glu(x);
  REQUIRE(y.shape() == Shape{2, 3, 3});
  for (std::size_t o = 0; o < 6; ++o)
    for (std::size_t j = 0; j < 3; ++j)
      REQUIRE(std::abs(y.value_at(o * 3 + j) -
                       x.value_at(o * 6 + j) * sigmoid_scalar(x.value_at(o * 6 + 3 + j))) < 1e-15);
  REQUIRE(grad_check([](const Tensor& t) { return sumsq(glu(t)); }, x) < 1e-6);
  REQUIRE_THROWS(glu(rand_tensor({2, 3}, rng)));
}

TEST_CASE("conv1d_time matches direct summation", "[tensor]") {
  Rng rng(37);
  Tensor x = rand_tensor({6, 2, 3}, rng);
  Tensor k = rand_tensor({3, 3, 4}, rng);
  Tensor y = conv1d_time(x, k);
  REQUIRE(y.shape() == Shape{4, 2, 4});
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t e = 0; e < 2; ++e)
      for (std::size_t o = 0; o < 4; ++o) {
        double want = 0.0;
        for (std::size_t dk = 0; dk < 3; ++dk)
          for (std::size_t i = 0; i < 3; ++i)
            want += x.value_at(((t + dk) * 2 + e) * 3 + i) * k.value_at((dk * 3 + i) * 4 + o);
        REQUIRE(std::abs(y.value_at((t * 2 + e) * 4 + o) - want) < 1e-13);
      }
  REQUIRE(grad_check([&k](const Tensor& t) { return sumsq(conv1d_time(t, k)); }, x) < 1e-6);
  REQUIRE(grad_check([&x](const Tensor& t) { return sumsq(conv1d_time(x, t)); }, k) < 1e-6);
  REQUIRE_THROWS(conv1d_time(rand_tensor({2, 2, 3}, rng), k));
}

TEST_CASE("add_channel_bias broadcasts over leading axes", "[tensor]") {
  Rng rng(41);
  Tensor x = rand_tensor({3, 2, 4}, rng);
  Tensor b = rand_tensor({4}, rng);
  Tensor y = add_channel_bias(x, b);
  for (std::size_t o = 0; o < 6; ++o)
    for (std::size_t j = 0; j < 4; ++j)
      REQUIRE(y.value_at(o * 4 + j) == x.value_at(o * 4 + j) + b.value_at(j));
  REQUIRE(grad_check([&b](const Tensor& t) { return sumsq(add_channel_bias(t, b)); }, x) < 1e-6);
  REQUIRE(grad_check([&x](const Tensor& t) { return sumsq(add_channel_bias(x, t)); }, b) < 1e-6);
  REQUIRE_THROWS(add_channel_bias(x, rand_tensor({3}, rng)));
}

TEST_CASE("reductions and losses", "[tensor]") {
  Rng rng(41);
  Tensor x = rand_tensor({5}, rng, 0.5, 2.0);
  REQUIRE(std::abs(sum(x).item() - (x.value_at(0) + x.value_at(1) + x.value_at(2) +
                                    x.value_at(3) + x.value_at(4))) < 1e-14);
  REQUIRE(std::abs(mean(x).item() - sum(x).item() / 5.0) < 1e-14);
  REQUIRE(grad_check([](const Tensor& t) { return sumsq(t); }, x) < 1e-7);

  // cross entropy against a long-double log-sum-exp reference
  Tensor s = rand_tensor({6}, rng, -2.0, 2.0);
  std::vector<double> target = {0.0, 0.5, 0.0, 0.25, 0.25, 0.0};
  long double z = 0.0L;
  for (std::size_t i = 0; i < 6; ++i) z += expl((long double)s.value_at(i));
  long double want = 0.0L;
  for (std::size_t i = 0; i < 6; ++i)
    want += (long double)target[i] * (logl(z) - (long double)s.value_at(i));
  REQUIRE(std::abs(softmax_cross_entropy(s, target).item() - (double)want) < 1e-13);
  REQUIRE(grad_check([&target](const Tensor& t) { return softmax_cross_entropy(t, target); }, s) < 1e-6);

  // extreme scores stay finite
  Tensor ext = Tensor::from({3}, {1000.0, -1000.0, 999.0});
  REQUIRE(std::isfinite(softmax_cross_entropy(ext, {1.0, 0.0, 0.0}).item()));

  Tensor pred = Tensor::from({3}, {11.0, 8.0, 0.4});
  std::vector<double> truth = {10.0, 10.0, 0.5};
  const double eps = 1.0;
  double mape_want = (std::abs(11.0 - 10.0) / 10.0 + std::abs(8.0 - 10.0) / 10.0 +
                      std::abs(0.4 - 0.5) / 1.0) / 3.0;
  REQUIRE(std::abs(mape_mean(pred, truth, eps).item() - mape_want) < 1e-15);
  REQUIRE(grad_check([&truth, eps](const Tensor& t) { return mape_mean(t, truth, eps); }, pred) < 1e-6);
}

TEST_CASE("tape replays shared subexpressions correctly", "[tensor]") {
  // loss = sumsq(a * (a + x)) with a = x*x exercises fan-out on the tape
  Rng rng(43);
  Tensor x = rand_tensor({4}, rng, 0.3, 1.5);
  auto f = [](const Tensor& t) {
    Tensor a = mul(t, t);
    Tensor b = add(a, t);
    return sumsq(mul(a, b));
  };
  REQUIRE(grad_check(f, x) < 1e-6);

  // two independent tapes over the same leaves do not interfere
  Tensor y = rand_tensor({4}, rng);
  y.set_requires_grad(true);
  y.zero_grad();
  Tape t1;
  {
    TapeScope sc(t1);
    backward(sum(mul(y, y)), t1);
  }
  std::vector<double> g1 = y.grad();
  y.zero_grad();
  Tape t2;
  {
    TapeScope sc(t2);
    backward(sum(mul(y, y)), t2);
  }
  REQUIRE(y.grad() == g1);
}

TEST_CASE("a small MLP end to end passes the gradient check", "[tensor]") {
  Rng rng(47);
  Tensor x = rand_tensor({4, 3}, rng);
  Tensor w1 = rand_tensor({5, 3}, rng);
  Tensor b1 = rand_tensor({5}, rng);
  Tensor w2 = rand_tensor({2, 5}, rng);
  Tensor b2 = rand_tensor({2}, rng);
  auto net = [&](const Tensor& in, const Tensor& w1t) {
    return sumsq(linear(mish(linear(in, w1t, b1)), w2, b2));
  };
  REQUIRE(grad_check([&](const Tensor& t) { return net(t, w1); }, x) < 1e-6);
  REQUIRE(grad_check([&](const Tensor& t) { return net(x, t); }, w1) < 1e-6);
  REQUIRE(grad_check([&](const Tensor& t) { return sumsq(linear(mish(linear(x, w1, t)), w2, b2)); }, b1) < 1e-6);
}

TEST_CASE("rng is deterministic and glorot bounds hold", "[tensor]") {
  Rng r1(123), r2(123);
  for (int i = 0; i < 8; ++i) REQUIRE(r1.uniform() == r2.uniform());
  for (int i = 0; i < 8; ++i) REQUIRE(r1.normal() == r2.normal());

  Rng r3(5);
  Tensor w = glorot_param({10, 20}, 20, 10, r3);
  const double bound = std::sqrt(6.0 / 30.0);
  for (double v : w.values()) {
    REQUIRE(v >= -bound);
    REQUIRE(v <= bound);
  }
  REQUIRE(w.requires_grad());
}

TEST_CASE("shape and state errors are rejected", "[tensor]") {
  Tensor v = Tensor::from({2, 2}, {1, 2, 3, 4});
  REQUIRE_THROWS(v.item());
  Tape tape;
  REQUIRE_THROWS(backward(v, tape));
  REQUIRE_THROWS(Tensor::from({3}, {1.0}));
  REQUIRE_THROWS(add(v, Tensor::from({4}, {1, 2, 3, 4})));
}
