#include <doctest.h>

#include <cmath>
#include <vector>

#include "genrec/gradcheck.hpp"
#include "genrec/optim.hpp"
#include "genrec/tensor.hpp"

using namespace genrec;

TEST_SUITE("numerics") {

TEST_CASE("matmul identity") {
  Tensor a = Tensor::from_data({3, 3}, {2, -1, 0, 4, 5, 6, 7, 8, 9.5});
  Tensor eye = Tensor::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor out = matmul(eye, a);
  for (int i = 0; i < 9; ++i) CHECK(out.value_at(i) == a.value_at(i));
}

TEST_CASE("matmul hand example") {
  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from_data({2, 1}, {0, 1});
  Tensor out = matmul(a, b);
  CHECK(out.value_at(0) == 2.0);
  CHECK(out.value_at(1) == 4.0);
}

TEST_CASE("matmul zero annihilates") {
  Tensor z = Tensor::zeros({2, 3});
  Tensor a = Tensor::from_data({3, 2}, {1, 2, 3, 4, 5, 6});
  Tensor out = matmul(z, a);
  for (int i = 0; i < 4; ++i) CHECK(out.value_at(i) == 0.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 3});
  CHECK_THROWS_AS(matmul(a, b), ShapeMismatch);
}

TEST_CASE("masked_log_softmax symmetric pair") {
  Tensor logits = Tensor::from_data({1, 2}, {5, 5});
  std::vector<int> allowed = {0, 1};
  Tensor out = masked_log_softmax(logits, allowed);
  CHECK(out.value_at(0) == doctest::Approx(-std::log(2.0)).epsilon(1e-12));
  CHECK(out.value_at(1) == doctest::Approx(-std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("masked_log_softmax single allowed index") {
  Tensor logits = Tensor::from_data({1, 3}, {9, -3, 0});
  std::vector<int> allowed = {1};
  Tensor out = masked_log_softmax(logits, allowed);
  CHECK(out.value_at(0) == kNegInf);
  CHECK(out.value_at(1) == 0.0);
  CHECK(out.value_at(2) == kNegInf);
}

TEST_CASE("masked_log_softmax large logits stay finite") {
  Tensor logits = Tensor::from_data({1, 2}, {1000, 1000});
  std::vector<int> allowed = {0, 1};
  Tensor out = masked_log_softmax(logits, allowed);
  CHECK(std::isfinite(out.value_at(0)));
  CHECK(out.value_at(0) == doctest::Approx(-std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("masked_log_softmax empty set refused") {
  Tensor logits = Tensor::from_data({1, 2}, {0, 0});
  CHECK_THROWS_AS(masked_log_softmax(logits, {}), EmptyAllowedSet);
}

TEST_CASE("masked_log_softmax probabilities sum to one") {
  Rng rng = make_rng(11, "mls");
  for (int trial = 0; trial < 20; ++trial) {
    int n = 3 + static_cast<int>(uniform_int(rng, 10));
    std::vector<double> vals(n);
    for (double& v : vals) v = 10.0 * normal(rng);
    Tensor logits = Tensor::from_data({1, n}, vals);
    std::vector<int> allowed;
    for (int i = 0; i < n; ++i)
      if (uniform_double(rng) < 0.5) allowed.push_back(i);
    if (allowed.empty()) allowed.push_back(0);
    Tensor out = masked_log_softmax(logits, allowed);
    double total = 0.0;
    for (int i : allowed) total += std::exp(out.value_at(i));
    CHECK(std::abs(total - 1.0) < 1e-12);
  }
}

TEST_CASE("softmax_rows uniform on equal logits") {
  Tensor logits = Tensor::from_data({1, 4}, {3, 3, 3, 3});
  Tensor out = softmax_rows(logits);
  for (int i = 0; i < 4; ++i)
    CHECK(out.value_at(i) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("layer_norm centers a constant row") {
  Tensor x = Tensor::from_data({1, 4}, {7, 7, 7, 7});
  Tensor gamma = Tensor::from_data({4}, {1, 1, 1, 1});
  Tensor beta = Tensor::zeros({4});
  Tensor out = layer_norm(x, gamma, beta);
  for (int i = 0; i < 4; ++i) CHECK(std::abs(out.value_at(i)) < 1e-9);
}

TEST_CASE("embedding_lookup reads the row") {
  Tensor table = Tensor::from_data({3, 2}, {1, 2, 3, 4, 5, 6});
  std::vector<int> ids = {0};
  Tensor out = embedding_lookup(table, ids);
  CHECK(out.value_at(0) == 1.0);
  CHECK(out.value_at(1) == 2.0);
  std::vector<int> bad = {3};
  CHECK_THROWS_AS(embedding_lookup(table, bad), IndexOutOfRange);
}

TEST_CASE("backward of x squared") {
  Tensor x = Tensor::parameter({1}, {3.0});
  Tensor loss = sum(mul(x, x));
  backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-12));
  clear_tape();
}

TEST_CASE("backward of sum(matmul) is a column-sum broadcast") {
  Tensor x = Tensor::parameter({2, 2}, {1, 2, 3, 4});
  Tensor c = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  backward(sum(matmul(x, c)));
  CHECK(x.grad()[0] == doctest::Approx(6.0));
  CHECK(x.grad()[1] == doctest::Approx(15.0));
  CHECK(x.grad()[2] == doctest::Approx(6.0));
  CHECK(x.grad()[3] == doctest::Approx(15.0));
  clear_tape();
}

TEST_CASE("disconnected parameter keeps zero grad") {
  Tensor x = Tensor::parameter({1}, {3.0});
  Tensor y = Tensor::parameter({1}, {2.0});
  backward(sum(mul(x, x)));
  CHECK(y.grad()[0] == 0.0);
  clear_tape();
}

TEST_CASE("backward rejects non-scalar loss") {
  Tensor x = Tensor::parameter({2}, {1.0, 2.0});
  Tensor y = mul(x, x);
  CHECK_THROWS_AS(backward(y), NonScalarLoss);
  clear_tape();
}

TEST_CASE("backward accumulates into existing leaf gradients") {
  Tensor x = Tensor::parameter({1}, {3.0});
  backward(sum(mul(x, x)));
  clear_tape();
  backward(sum(mul(x, x)));
  CHECK(x.grad()[0] == doctest::Approx(12.0));
  clear_tape();
}

TEST_CASE("adamw zero gradient leaves parameters fixed") {
  Tensor p = Tensor::parameter({2}, {1.0, -2.0});
  AdamW opt({p});
  opt.zero_grad();
  opt.step();
  CHECK(p.value_at(0) == 1.0);
  CHECK(p.value_at(1) == -2.0);
}

TEST_CASE("adamw single step closed form") {
  // With beta1=beta2=0 and g=1 the update is lr * g / (|g| + eps).
  Tensor p = Tensor::parameter({1}, {0.5});
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.beta1 = 0.0;
  cfg.beta2 = 0.0;
  AdamW opt({p}, cfg);
  backward(sum(p));
  opt.step();
  CHECK(p.value_at(0) ==
        doctest::Approx(0.5 - 0.1 * (1.0 / (1.0 + cfg.eps))).epsilon(1e-12));
  clear_tape();
}

TEST_CASE("adamw trajectories are deterministic") {
  auto run = [] {
    Rng rng = make_rng(3, "adamw");
    Tensor p = Tensor::parameter({4}, {0.3, -0.7, 1.1, 0.0});
    AdamW opt({p});
    for (int i = 0; i < 5; ++i) {
      opt.zero_grad();
      Tensor noise =
          Tensor::from_data({4}, {normal(rng), normal(rng), normal(rng),
                                  normal(rng)});
      backward(sum(mul(add(p, noise), add(p, noise))));
      opt.step();
      clear_tape();
    }
    return std::vector<double>(p.data().begin(), p.data().end());
  };
  CHECK(run() == run());
}

TEST_CASE("grad_check quadratic form") {
  Tensor point = Tensor::from_data({3}, {0.5, -1.25, 2.0});
  double err = grad_check(
      [](const Tensor& x) { return sum(mul(x, x)); }, point);
  CHECK(err < 1e-7);
}

TEST_CASE("grad_check masked log softmax gold pick") {
  Tensor point = Tensor::from_data({1, 5}, {0.3, -0.2, 1.4, 0.0, -2.0});
  std::vector<int> allowed = {0, 2, 4};
  double err = grad_check(
      [&](const Tensor& x) {
        return negate(pick(masked_log_softmax(x, allowed), 2));
      },
      point);
  CHECK(err < 1e-6);
}

TEST_CASE("grad_check constant function") {
  Tensor point = Tensor::from_data({2}, {1.0, 2.0});
  double err = grad_check(
      [](const Tensor& x) { return scale(sum(mul(x, Tensor::zeros({2}))), 1.0); },
      point);
  CHECK(err == 0.0);
}

TEST_CASE("grad_check every differentiable op at random points") {
  Rng rng = make_rng(17, "ops");
  auto randt = [&](std::vector<int> shape) {
    int64_t n = 1;
    for (int e : shape) n *= e;
    std::vector<double> d(n);
    for (double& v : d) v = normal(rng);
    return Tensor::from_data(std::move(shape), std::move(d));
  };
  for (int trial = 0; trial < 10; ++trial) {
    Tensor m = randt({3, 4});
    Tensor v4 = randt({4});
    Tensor other = randt({3, 4});
    Tensor sq = randt({4, 4});
    Tensor beta = randt({4});
    std::vector<int> allowed = {0, 2, 3};
    std::vector<int> ids = {1, 0, 2, 2};

    CHECK(grad_check([&](const Tensor& x) { return sum(add(x, other)); }, m) <
          1e-4);
    CHECK(grad_check([&](const Tensor& x) { return sum(sub(x, other)); }, m) <
          1e-4);
    CHECK(grad_check([&](const Tensor& x) { return sum(mul(x, other)); }, m) <
          1e-4);
    CHECK(grad_check([&](const Tensor& x) { return sum(add_rowvec(x, v4)); },
                     m) < 1e-4);
    CHECK(grad_check([&](const Tensor& x) { return sum(scale(x, -1.7)); },
                     m) < 1e-4);
    CHECK(grad_check([&](const Tensor& x) { return sum(gelu(x)); }, m) < 1e-4);
    CHECK(grad_check(
              [&](const Tensor& x) { return sum(matmul(x, transpose(other))); },
              m) < 1e-4);
    CHECK(grad_check([&](const Tensor& x) { return mean_all(softmax_rows(x)); },
                     m) < 1e-4);
    CHECK(grad_check([&](const Tensor& x) { return pick(log_softmax(x), 2); },
                     randt({1, 6})) < 1e-4);
    CHECK(grad_check(
              [&](const Tensor& x) {
                return negate(pick(masked_log_softmax(x, allowed), 3));
              },
              randt({1, 4})) < 1e-4);
    CHECK(grad_check(
              [&](const Tensor& x) {
                return sum(layer_norm(x, v4, beta));
              },
              m) < 1e-4);
    CHECK(grad_check([&](const Tensor& x) { return sum(l2_normalize_rows(x)); },
                     m) < 1e-4);
    CHECK(grad_check(
              [&](const Tensor& x) { return sum(embedding_lookup(x, ids)); },
              sq) < 1e-4);
    CHECK(grad_check(
              [&](const Tensor& x) { return sum(slice_rows(x, 1, 3)); }, m) <
          1e-4);
    CHECK(grad_check(
              [&](const Tensor& x) { return sum(slice_cols(x, 1, 3)); }, m) <
          1e-4);
    CHECK(grad_check(
              [&](const Tensor& x) {
                return sum(concat_cols({x, scale(x, 2.0)}));
              },
              m) < 1e-4);
    CHECK(grad_check(
              [&](const Tensor& x) {
                return sum(concat_rows({x, scale(x, -0.5)}));
              },
              m) < 1e-4);
    CHECK(grad_check(
              [&](const Tensor& x) { return sum(reshape(x, {4, 3})); }, m) <
          1e-4);
    CHECK(grad_check(
              [&](const Tensor& x) {
                return sum(log_elem(add_const(mul(x, x), 1.0)));
              },
              m) < 1e-4);
    CHECK(grad_check(
              [&](const Tensor& x) {
                return sum(sqrt_elem(add_const(mul(x, x), 1.0)));
              },
              m) < 1e-4);
    std::vector<double> buf(12, 0.25);
    CHECK(grad_check(
              [&](const Tensor& x) { return sum(add_buffer(x, buf, -1.0)); },
              m) < 1e-4);
  }
}

TEST_CASE("attention_bias sums the two tables per head") {
  Tensor across = Tensor::from_data({3, 2}, {0.1, 1.0, 0.2, 2.0, 0.3, 3.0});
  Tensor within = Tensor::from_data({2, 2}, {10, 100, 20, 200});
  std::vector<int> ba = {0, 1, 2, 0};
  std::vector<int> bw = {0, 1, 1, 0};
  Tensor b0 = attention_bias(across, within, ba, bw, 2, 0);
  CHECK(b0.value_at(0) == doctest::Approx(0.1 + 10.0));
  CHECK(b0.value_at(1) == doctest::Approx(0.2 + 20.0));
  CHECK(b0.value_at(2) == doctest::Approx(0.3 + 20.0));
  CHECK(b0.value_at(3) == doctest::Approx(0.1 + 10.0));
  Tensor b1 = attention_bias(across, within, ba, bw, 2, 1);
  CHECK(b1.value_at(2) == doctest::Approx(3.0 + 200.0));
}

TEST_CASE("attention_bias gradients reach both tables") {
  Tensor across = Tensor::parameter({3, 2}, {0.1, 1.0, 0.2, 2.0, 0.3, 3.0});
  Tensor within = Tensor::parameter({2, 2}, {10, 100, 20, 200});
  std::vector<int> ba = {0, 1, 2, 0};
  std::vector<int> bw = {0, 1, 1, 0};
  backward(sum(attention_bias(across, within, ba, bw, 2, 0)));
  CHECK(across.grad()[0] == doctest::Approx(2.0));
  CHECK(within.grad()[2] == doctest::Approx(2.0));
  clear_tape();
}

TEST_CASE("dropout identity when disabled") {
  Rng rng = make_rng(5, "dropout");
  Tensor x = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor off = dropout(x, 0.5, rng, false);
  for (int i = 0; i < 4; ++i) CHECK(off.value_at(i) == x.value_at(i));
  Tensor p0 = dropout(x, 0.0, rng, true);
  for (int i = 0; i < 4; ++i) CHECK(p0.value_at(i) == x.value_at(i));
}

TEST_CASE("no grad guard stops tape recording") {
  Tensor x = Tensor::parameter({1}, {2.0});
  size_t before = tape_size();
  {
    NoGradGuard ng;
    Tensor y = mul(x, x);
    CHECK(!y.tracked());
  }
  CHECK(tape_size() == before);
  clear_tape();
}

TEST_CASE("derive_seed streams are stable and distinct") {
  CHECK(derive_seed(42, "model-init") == derive_seed(42, "model-init"));
  CHECK(derive_seed(42, "model-init") != derive_seed(42, "epoch-0"));
  CHECK(derive_seed(42, "model-init") != derive_seed(43, "model-init"));
}

}  // TEST_SUITE
