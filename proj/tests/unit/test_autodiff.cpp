#include <doctest.h>

#include <cmath>
#include <random>

#include "deepcopy/ad.hpp"
#include "deepcopy/params.hpp"
#include "support.hpp"

using namespace deepcopy;
using namespace deepcopy::ad;
using deepcopy::testing::rel_err;

namespace {

Tensor random_tensor(Rng& rng, Shape shape) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

// Max relative error between tape gradients and central differences of a
// scalar-valued function of the given leaves.
double fd_check(std::vector<Tensor> leaves, const std::function<Tensor(Tape&)>& f) {
  for (auto& l : leaves) l.zero_grad();
  {
    Tape tape;
    tape.backward(f(tape));
  }
  double worst = 0.0;
  for (auto& l : leaves) {
    for (std::size_t i = 0; i < l.size(); ++i) {
      const double saved = l[i];
      Tape t1(false), t2(false);
      l.mutable_data()[i] = saved + 1e-5;
      const double up = f(t1).item();
      l.mutable_data()[i] = saved - 1e-5;
      const double down = f(t2).item();
      l.mutable_data()[i] = saved;
      worst = std::max(worst, rel_err(l.grad()[i], (up - down) / 2e-5));
    }
  }
  return worst;
}

// Weighted sum with fixed random weights turns any tensor into a scalar with
// a non-trivial upstream gradient.
Tensor project(Tape& tape, const Tensor& x, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> w(x.size());
  for (auto& v : w) v = u(rng);
  const Tensor flat_w = Tensor::from(x.shape(), w);
  return sum(tape, mul(tape, x, flat_w));
}

}  // namespace

TEST_CASE("softmax of equal logits is uniform") {
  Tape tape;
  const auto s = softmax(tape, Tensor::vector({0.0, 0.0}));
  CHECK(s[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(s[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("matmul by identity returns the operand") {
  Rng rng(3);
  Tape tape;
  const Tensor a = random_tensor(rng, {3, 3});
  const Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const Tensor r = matmul(tape, eye, a);
  for (std::size_t i = 0; i < 9; ++i) CHECK(r[i] == a[i]);
}

TEST_CASE("index_add accumulates repeated indices") {
  Tape tape;
  const std::vector<std::size_t> idx{1, 1, 3};
  const Tensor out = index_add(tape, Tensor::zeros({5}), idx, Tensor::vector({0.2, 0.3, 0.5}));
  const std::vector<double> expected{0, 0.5, 0, 0.5, 0};
  for (std::size_t i = 0; i < 5; ++i) CHECK(out[i] == doctest::Approx(expected[i]).epsilon(1e-15));
}

TEST_CASE("gradient of sum(x*x) is 2x") {
  Tensor x = Tensor::from({3}, {1, 2, 3}, true);
  Tape tape;
  tape.backward(sum(tape, mul(tape, x, x)));
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == 4.0);
  CHECK(x.grad()[2] == 6.0);
}

TEST_CASE("gradient of -log softmax[k] is softmax minus one-hot") {
  Tensor z = Tensor::from({4}, {0.3, -1.2, 0.7, 0.1}, true);
  const std::size_t k = 2;
  Tape tape;
  const Tensor s = softmax(tape, z);
  tape.backward(affine(tape, log(tape, pick(tape, s, k)), -1.0));
  for (std::size_t i = 0; i < 4; ++i) CHECK(z.grad()[i] == doctest::Approx(s[i] - (i == k ? 1.0 : 0.0)).epsilon(1e-12));
}

TEST_CASE("repeated backward accumulates into leaves") {
  Tensor x = Tensor::from({2}, {1.5, -2.0}, true);
  for (int i = 0; i < 2; ++i) {
    Tape tape;
    tape.backward(sum(tape, mul(tape, x, x)));
  }
  CHECK(x.grad()[0] == doctest::Approx(6.0));
  CHECK(x.grad()[1] == doctest::Approx(-8.0));
}

TEST_CASE("backward rejects a non-scalar loss") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  Tape tape;
  const Tensor y = mul(tape, x, x);
  CHECK_THROWS_AS(tape.backward(y), ShapeError);
}

TEST_CASE("shape errors name the primitive and both shapes") {
  Tape tape;
  try {
    matmul(tape, Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
  }
  CHECK_THROWS_AS(add(tape, Tensor::zeros({3}), Tensor::zeros({4})), ShapeError);
  CHECK_THROWS_AS(softmax(tape, Tensor::zeros({0})), ShapeError);
}

TEST_CASE("out-of-range indices report the index") {
  Tape tape;
  try {
    lookup(tape, Tensor::zeros({4, 2}), 7);
    FAIL("expected IndexError");
  } catch (const IndexError& e) {
    CHECK(std::string(e.what()).find('7') != std::string::npos);
  }
  const std::vector<std::size_t> idx{0, 9};
  CHECK_THROWS_AS(index_add(tape, Tensor::zeros({5}), idx, Tensor::vector({1, 1})), IndexError);
}

TEST_CASE("log clamps at epsilon with zero gradient in the clamped region") {
  Tensor x = Tensor::from({2}, {0.0, 0.5}, true);
  Tape tape;
  const Tensor l = log(tape, x);
  CHECK(l[0] == doctest::Approx(std::log(kLogEpsilon)));
  tape.backward(sum(tape, l));
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == doctest::Approx(2.0));
}

TEST_CASE("no-grad tape records nothing") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  Tape tape(false);
  sum(tape, mul(tape, x, x));
  CHECK(tape.size() == 0);
}

TEST_CASE("every primitive matches central finite differences") {
  Rng rng(11);
  std::uniform_int_distribution<std::size_t> dim(1, 5);
  constexpr double kTol = 1e-4;
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t m = dim(rng), n = dim(rng), p = dim(rng);
    const std::uint64_t s = rng();
    Tensor a = random_tensor(rng, {m, n}), b = random_tensor(rng, {n, p});
    Tensor v = random_tensor(rng, {n}), w = random_tensor(rng, {n}), u = random_tensor(rng, {m});
    Tensor bias = random_tensor(rng, {n}), scal = random_tensor(rng, {});
    CAPTURE(trial);

    CHECK(fd_check({a, b}, [&](Tape& t) { return project(t, matmul(t, a, b), s); }) < kTol);
    CHECK(fd_check({a, v}, [&](Tape& t) { return project(t, matmul(t, a, v), s); }) < kTol);
    CHECK(fd_check({u, a}, [&](Tape& t) { return project(t, matmul(t, u, a), s); }) < kTol);
    CHECK(fd_check({v, w}, [&](Tape& t) { return dot(t, v, w); }) < kTol);
    CHECK(fd_check({v, w}, [&](Tape& t) { return project(t, add(t, v, w), s); }) < kTol);
    CHECK(fd_check({a, bias}, [&](Tape& t) { return project(t, add(t, a, bias), s); }) < kTol);
    CHECK(fd_check({v, w}, [&](Tape& t) { return project(t, sub(t, v, w), s); }) < kTol);
    CHECK(fd_check({v, w}, [&](Tape& t) { return project(t, mul(t, v, w), s); }) < kTol);
    CHECK(fd_check({scal, v}, [&](Tape& t) { return project(t, scale_by(t, scal, v), s); }) < kTol);
    CHECK(fd_check({v}, [&](Tape& t) { return project(t, affine(t, v, -0.7, 0.2), s); }) < kTol);
    CHECK(fd_check({v, u, w}, [&](Tape& t) { return project(t, concat(t, {v, u, w}), s); }) < kTol);
    CHECK(fd_check({v, w}, [&](Tape& t) { return project(t, stack(t, {v, w, v}), s); }) < kTol);
    CHECK(fd_check({a}, [&](Tape& t) { return project(t, slice(t, a, n / 2, n), s); }) < kTol);
    CHECK(fd_check({a}, [&](Tape& t) { return project(t, row(t, a, m - 1), s); }) < kTol);
    CHECK(fd_check({a}, [&](Tape& t) { return project(t, transpose(t, a), s); }) < kTol);
    CHECK(fd_check({a}, [&](Tape& t) { return project(t, tanh(t, a), s); }) < kTol);
    CHECK(fd_check({a}, [&](Tape& t) { return project(t, sigmoid(t, a), s); }) < kTol);
    CHECK(fd_check({v}, [&](Tape& t) { return project(t, softmax(t, v), s); }) < kTol);
    CHECK(fd_check({v}, [&](Tape& t) { return project(t, log(t, softmax(t, v)), s); }) < kTol);
    CHECK(fd_check({a}, [&](Tape& t) { return project(t, lookup(t, a, m / 2), s); }) < kTol);
    const std::vector<std::size_t> rows{0, m - 1, 0};
    CHECK(fd_check({a}, [&](Tape& t) { return project(t, lookup(t, a, rows), s); }) < kTol);
    const std::vector<std::size_t> idx{0, n - 1, 0};
    Tensor vals = random_tensor(rng, {3});
    CHECK(fd_check({v, vals}, [&](Tape& t) { return project(t, index_add(t, v, idx, vals), s); }) < kTol);
    CHECK(fd_check({v}, [&](Tape& t) { return pick(t, v, n - 1); }) < kTol);
    CHECK(fd_check({a}, [&](Tape& t) { return sum(t, mul(t, a, a)); }) < kTol);
  }
}

TEST_CASE("softmax rows are simplices and index_add conserves mass") {
  Rng rng(5);
  std::uniform_int_distribution<std::size_t> dim(1, 30);
  for (int trial = 0; trial < 200; ++trial) {
    Tape tape(false);
    const std::size_t n = dim(rng);
    Tensor z = random_tensor(rng, {n});
    for (auto& x : z.mutable_data()) x *= 20.0;
    const Tensor s = softmax(tape, z);
    double total = 0.0;
    for (double x : s.data()) {
      CHECK(x >= 0.0);
      total += x;
    }
    CHECK(std::abs(total - 1.0) <= 1e-12);

    std::uniform_int_distribution<std::size_t> at(0, n - 1);
    std::vector<std::size_t> idx(dim(rng));
    for (auto& i : idx) i = at(rng);
    const Tensor vals = random_tensor(rng, {idx.size()});
    const Tensor out = index_add(tape, s, idx, vals);
    double in_mass = 0.0, out_mass = 0.0;
    for (double x : s.data()) in_mass += x;
    for (double x : vals.data()) in_mass += x;
    for (double x : out.data()) out_mass += x;
    CHECK(std::abs(out_mass - in_mass) <= 1e-12);
  }
}

TEST_CASE("tensor invariants") {
  const Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.size() == shape_size(t.shape()));
  CHECK(t.at(1, 2) == 6.0);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), ShapeError);
  const Tensor c = t.clone();
  CHECK(c.node() != t.node());
  CHECK(c[4] == 5.0);
}
