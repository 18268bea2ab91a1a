#include <doctest.h>

#include <cmath>
#include <numeric>

#include "deepcopy/seqnn.hpp"
#include "support.hpp"

using namespace deepcopy;
using namespace deepcopy::nn;
using ad::Tape;
using ad::Tensor;

namespace {

Tensor random_matrix(Rng& rng, std::size_t n, std::size_t p) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n * p);
  for (auto& x : v) x = u(rng);
  return Tensor::from({n, p}, v);
}

// Plain-loop reference for one LSTM step, gates stacked [i; f; g; o].
LstmState reference_step(const LstmParams& p, const std::vector<double>& x, const LstmState& s) {
  const std::size_t d = p.hidden, in = p.input_dim;
  std::vector<double> z(4 * d);
  for (std::size_t r = 0; r < 4 * d; ++r) {
    double acc = p.bias[r];
    for (std::size_t j = 0; j < in; ++j) acc += p.weight.at(r, j) * x[j];
    for (std::size_t j = 0; j < d; ++j) acc += p.weight.at(r, in + j) * s.h[j];
    z[r] = acc;
  }
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  std::vector<double> h(d), c(d);
  for (std::size_t k = 0; k < d; ++k) {
    c[k] = sig(z[d + k]) * s.c[k] + sig(z[k]) * std::tanh(z[2 * d + k]);
    h[k] = sig(z[3 * d + k]) * std::tanh(c[k]);
  }
  return {Tensor::vector(h), Tensor::vector(c)};
}

}  // namespace

TEST_CASE("zero-weight LSTM step outputs zero") {
  ParamStore store;
  Rng rng(1);
  LstmParams lstm = make_lstm(store, "l", 3, 4, rng);
  for (auto& v : lstm.weight.mutable_data()) v = 0.0;
  for (auto& v : lstm.bias.mutable_data()) v = 0.0;
  Tape tape(false);
  const auto s = lstm_step(tape, lstm, Tensor::vector({0.3, -2.0, 5.0}), zero_state(4));
  for (double v : s.h.data()) CHECK(v == 0.0);
  for (double v : s.c.data()) CHECK(v == 0.0);
}

TEST_CASE("forget-gate bias starts at one and other biases at zero") {
  ParamStore store;
  Rng rng(1);
  const LstmParams lstm = make_lstm(store, "l", 3, 4, rng);
  for (std::size_t r = 0; r < 16; ++r) CHECK(lstm.bias[r] == (r >= 4 && r < 8 ? kForgetBias : 0.0));
  for (double w : lstm.weight.data()) CHECK(std::abs(w) <= kInitRange);
}

TEST_CASE("LSTM step matches a plain-loop reference and stays bounded") {
  ParamStore store;
  Rng rng(9);
  const LstmParams lstm = make_lstm(store, "l", 3, 5, rng, 2.0);
  LstmState ref = zero_state(5), taped = zero_state(5);
  Tape tape(false);
  for (int t = 0; t < 6; ++t) {
    const std::vector<double> x{std::sin(t * 1.0), std::cos(t * 2.0), 3.0 * t - 4.0};
    ref = reference_step(lstm, x, ref);
    taped = lstm_step(tape, lstm, Tensor::vector(x), taped);
    for (std::size_t k = 0; k < 5; ++k) {
      CHECK(taped.h[k] == doctest::Approx(ref.h[k]).epsilon(1e-13));
      CHECK(taped.c[k] == doctest::Approx(ref.c[k]).epsilon(1e-13));
      CHECK(std::abs(taped.h[k]) < 1.0);
    }
  }
}

TEST_CASE("gradient through three chained LSTM steps matches finite differences") {
  ParamStore store;
  Rng rng(4);
  const LstmParams lstm = make_lstm(store, "l", 3, 4, rng, 0.5);
  Tensor x0 = store.add("x0", {3}, rng, 1.0), x1 = store.add("x1", {3}, rng, 1.0), x2 = store.add("x2", {3}, rng, 1.0);
  const auto gc = testing::check_gradients(store, [&](Tape& t) {
    LstmState s = zero_state(4);
    for (const Tensor& x : {x0, x1, x2}) s = lstm_step(t, lstm, x, s);
    return ad::sum(t, ad::mul(t, s.h, s.c));
  });
  CAPTURE(gc.worst);
  CHECK(gc.max_rel_err < 1e-4);
}

TEST_CASE("encode produces one output row per token") {
  ParamStore store;
  Rng rng(2);
  const Tensor emb = store.add("embedding", {10, 3}, rng, 0.5);
  const LstmParams lstm = make_lstm(store, "encoder", 3, 4, rng, 0.5);
  Tape tape(false);
  const std::vector<TokenId> one{7};
  const auto e1 = encode(tape, emb, lstm, one);
  CHECK(e1.outputs.shape() == ad::Shape{1, 4});
  for (std::size_t k = 0; k < 4; ++k) CHECK(e1.outputs.at(0, k) == e1.final.h[k]);

  const std::vector<TokenId> seq{5, 6, 0, 9};
  const auto e = encode(tape, emb, lstm, seq);
  CHECK(e.outputs.shape() == ad::Shape{4, 4});
  CHECK(e.length() == 4);
  CHECK(e.valid == std::vector<bool>{true, true, false, true});
  CHECK_THROWS(encode(tape, emb, lstm, std::vector<TokenId>{}));
}

TEST_CASE("the shared encoder is deterministic across call sites") {
  ParamStore store;
  Rng rng(2);
  const Tensor emb = store.add("embedding", {10, 3}, rng, 0.5);
  const LstmParams lstm = make_lstm(store, "encoder", 3, 4, rng, 0.5);
  Tape t1(false), t2;
  const std::vector<TokenId> seq{5, 8, 6};
  const auto a = encode(t1, emb, lstm, seq);
  const auto b = encode(t2, emb, lstm, seq);
  for (std::size_t i = 0; i < a.outputs.size(); ++i) CHECK(a.outputs[i] == b.outputs[i]);
}

TEST_CASE("extended ids embed as UNK") {
  CHECK(embeddable(3, 10) == 3);
  CHECK(embeddable(10, 10) == corpus::Vocab::kUnk);
  CHECK(embeddable(42, 10) == corpus::Vocab::kUnk);
}

TEST_CASE("attention with zero w1 is uniform") {
  ParamStore store;
  Rng rng(5);
  AttentionParams p = make_attention(store, "a", 3, rng);
  for (auto& v : p.w1.mutable_data()) v = 0.0;
  Tape tape(false);
  const auto r = attention(tape, p, random_matrix(rng, 4, 3), Tensor::vector({1, 2, 3}));
  for (double w : r.weights.data()) CHECK(w == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("singleton attention returns the only item") {
  ParamStore store;
  Rng rng(5);
  const AttentionParams p = make_attention(store, "a", 3, rng, 1.0);
  Tape tape(false);
  const Tensor u = random_matrix(rng, 1, 3);
  const auto r = attention(tape, p, u, Tensor::vector({0.5, -1, 2}));
  CHECK(r.weights[0] == 1.0);
  for (std::size_t k = 0; k < 3; ++k) CHECK(r.context[k] == doctest::Approx(u[k]).epsilon(1e-15));
}

TEST_CASE("attention context equals the recomputed weighted sum") {
  ParamStore store;
  Rng rng(8);
  const AttentionParams p = make_attention(store, "a", 3, rng, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor u = random_matrix(rng, 3, 3);
    const Tensor v = random_matrix(rng, 1, 3);
    Tape tape(false);
    const auto r = attention(tape, p, u, Tensor::vector({v[0], v[1], v[2]}));
    // Independent recomputation of scores, softmax and mixture.
    std::vector<double> e(3);
    for (std::size_t i = 0; i < 3; ++i) {
      double s = 0.0;
      for (std::size_t a = 0; a < 3; ++a) {
        double z = 0.0;
        for (std::size_t b = 0; b < 3; ++b) z += p.w2.at(a, b) * u.at(i, b) + p.w2.at(a, 3 + b) * v[b];
        s += p.w1[a] * std::tanh(z);
      }
      e[i] = s;
    }
    const double mx = *std::max_element(e.begin(), e.end());
    double z = 0.0;
    for (auto& x : e) z += (x = std::exp(x - mx));
    double total = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(r.weights[i] == doctest::Approx(e[i] / z).epsilon(1e-12));
      total += r.weights[i];
    }
    CHECK(std::abs(total - 1.0) <= 1e-9);
    for (std::size_t k = 0; k < 3; ++k) {
      double c = 0.0;
      for (std::size_t i = 0; i < 3; ++i) c += r.weights[i] * u.at(i, k);
      CHECK(std::abs(r.context[k] - c) <= 1e-12);
    }
  }
}

TEST_CASE("attention is permutation-equivariant") {
  ParamStore store;
  Rng rng(13);
  const AttentionParams p = make_attention(store, "a", 4, rng, 1.0);
  const Tensor u = random_matrix(rng, 5, 4);
  const Tensor v = ad::Tensor::vector({0.1, -0.4, 0.9, 0.2});
  std::vector<std::size_t> perm(5);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<double> permuted;
  for (std::size_t i : perm)
    for (std::size_t k = 0; k < 4; ++k) permuted.push_back(u.at(i, k));
  Tape tape(false);
  const auto a = attention(tape, p, u, v);
  const auto b = attention(tape, p, Tensor::from({5, 4}, permuted), v);
  for (std::size_t j = 0; j < 5; ++j) CHECK(std::abs(b.weights[j] - a.weights[perm[j]]) <= 1e-12);
  for (std::size_t k = 0; k < 4; ++k) CHECK(std::abs(b.context[k] - a.context[k]) <= 1e-12);
}

TEST_CASE("masked positions get no weight and an all-masked sequence is an error") {
  ParamStore store;
  Rng rng(3);
  const AttentionParams p = make_attention(store, "a", 3, rng, 1.0);
  const Tensor u = random_matrix(rng, 3, 3);
  Tape tape(false);
  const auto r = attention(tape, p, u, Tensor::vector({1, 1, 1}), {true, false, true});
  CHECK(r.weights[1] == 0.0);
  CHECK(std::abs(r.weights[0] + r.weights[2] - 1.0) <= 1e-12);
  CHECK_THROWS(attention(tape, p, u, Tensor::vector({1, 1, 1}), {false, false, false}));
}

TEST_CASE("attention gradient matches finite differences") {
  ParamStore store;
  Rng rng(21);
  const AttentionParams p = make_attention(store, "a", 3, rng, 1.0);
  Tensor u = store.add("u", {4, 3}, rng, 1.0);
  Tensor v = store.add("v", {3}, rng, 1.0);
  const auto gc = testing::check_gradients(store, [&](Tape& t) {
    const auto r = attention(t, p, u, v, {true, true, false, true});
    return ad::sum(t, ad::mul(t, r.context, r.context));
  });
  CAPTURE(gc.worst);
  CHECK(gc.max_rel_err < 1e-4);
}
