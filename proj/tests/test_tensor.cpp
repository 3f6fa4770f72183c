#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "vrt/rng.hpp"
#include "vrt/tensor.hpp"

using namespace vrt;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double sd = 1.0) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> data(n);
  for (auto& v : data) v = sd * rng.normal();
  return Tensor::from(std::move(shape), std::move(data));
}

}  // namespace

TEST_CASE("row_softmax uniform logits") {
  Tensor x = Tensor::zeros({1, 4});
  Tensor s = row_softmax(x);
  for (int j = 0; j < 4; ++j) CHECK(s.at(0, j) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("row_softmax rows sum to one and stay non-negative") {
  Rng rng(7);
  Tensor x = random_tensor({5, 9}, rng, 3.0);
  Tensor s = row_softmax(x);
  for (std::size_t i = 0; i < 5; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < 9; ++j) {
      CHECK(s.at(i, j) >= 0.0);
      total += s.at(i, j);
    }
    CHECK(std::abs(total - 1.0) < 1e-9);
  }
}

TEST_CASE("matmul identity returns operand") {
  Rng rng(3);
  Tensor m = random_tensor({3, 3}, rng);
  Tensor out = matmul(Tensor::identity(3), m);
  for (std::size_t i = 0; i < 9; ++i) CHECK(out.data()[i] == m.data()[i]);
}

TEST_CASE("matmul shape mismatch raises ShapeError") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  CHECK_THROWS_AS(matmul(a, b), ShapeError);
}

TEST_CASE("cross entropy of uniform logits is log vocab") {
  Tensor logits = Tensor::zeros({1, 512});
  int label[] = {17};
  Tensor loss = cross_entropy_with_logits(logits, label);
  CHECK(loss.item() == doctest::Approx(std::log(512.0)).epsilon(1e-12));
}

TEST_CASE("backward of sum gives ones") {
  Tensor x = Tensor::from({3}, {1.0, -2.0, 5.0}, true);
  Tensor loss = sum(x);
  backward(loss);
  for (int i = 0; i < 3; ++i) CHECK(x.grad()[i] == 1.0);
}

TEST_CASE("backward of quadratic gives 2x") {
  Tensor x = Tensor::from({1, 1}, {2.0}, true);
  Tensor loss = sum(matmul(transpose(x), x));
  backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("backward requires scalar loss") {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  CHECK_THROWS_AS(backward(scale(x, 2.0)), std::invalid_argument);
}

TEST_CASE("repeated backward accumulates") {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  Tensor loss = sum(x);
  backward(loss);
  backward(loss);
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == 2.0);
}

TEST_CASE("finite difference check: sum is exact") {
  Rng rng(11);
  Tensor x = random_tensor({6}, rng);
  double err = finite_diff_check(
      [](const Tensor& t) { return sum(t); }, x, 1e-5);
  CHECK(err <= 1e-10);
}

TEST_CASE("finite difference check: logistic-style NLL of dot product") {
  Rng rng(13);
  Tensor w = random_tensor({4, 1}, rng);
  Tensor x = random_tensor({1, 4}, rng);
  auto f = [&w](const Tensor& t) {
    Tensor logit = matmul(t, w);                    // [1,1]
    Tensor two = concat_rows(std::vector<Tensor>{logit, Tensor::zeros({1, 1})});
    int label[] = {0};
    return cross_entropy_with_logits(transpose(two), label);  // -log sigma(x.w)
  };
  double err = finite_diff_check(f, x, 1e-5);
  CHECK(err < 1e-6);
}

TEST_CASE("finite difference check: 2-layer MLP with every primitive") {
  Rng rng(17);
  Tensor w1 = random_tensor({5, 8}, rng, 0.5);
  Tensor b1 = random_tensor({8}, rng, 0.5);
  Tensor w2 = random_tensor({8, 6}, rng, 0.5);
  Tensor gain = random_tensor({6}, rng, 0.2);
  Tensor bias = random_tensor({6}, rng, 0.2);
  Tensor x = random_tensor({3, 5}, rng);
  int labels[] = {1, 4, 2};
  auto f = [&](const Tensor& t) {
    Tensor h = gelu(add(matmul(t, w1), b1));
    Tensor o = layer_norm(matmul(h, w2), gain, bias);
    Tensor sm = row_softmax(o);
    Tensor both = add(o, sm);
    return cross_entropy_with_logits(slice_rows(both, 0, 3), labels);
  };
  double err = finite_diff_check(f, x, 1e-5);
  CHECK(err < 1e-6);
}

TEST_CASE("finite difference reports large error at a clamp kink") {
  // f = |sum(t)| realized with a data-dependent branch: non-differentiable at
  // the boundary point 0. Such points are excluded from the gradient checks;
  // this documents how the checker reports them.
  Tensor x = Tensor::from({1}, {0.0});
  auto f = [](const Tensor& t) {
    Tensor s = sum(t);
    return s.item() >= 0.0 ? s : scale(s, -1.0);
  };
  double err = finite_diff_check(f, x, 1e-5);
  CHECK(err > 1e-1);
}

TEST_CASE("embedding lookup forwards rows and scatters gradients") {
  Tensor table = Tensor::from({4, 2}, {0, 1, 10, 11, 20, 21, 30, 31}, true);
  int ids[] = {2, 0, 2};
  Tensor rows = embedding_lookup(table, ids);
  CHECK(rows.at(0, 0) == 20.0);
  CHECK(rows.at(2, 1) == 21.0);
  backward(sum(rows));
  CHECK(table.grad()[0] == 1.0);   // id 0 used once
  CHECK(table.grad()[4] == 2.0);   // id 2 used twice
  CHECK(table.grad()[6] == 0.0);   // id 3 unused
}

TEST_CASE("embedding lookup rejects out-of-range ids") {
  Tensor table = Tensor::zeros({4, 2});
  int ids[] = {4};
  CHECK_THROWS_AS(embedding_lookup(table, ids), std::out_of_range);
}

TEST_CASE("backward is bit-deterministic across runs") {
  Rng rng(23);
  Tensor w = random_tensor({6, 6}, rng);
  Tensor x = random_tensor({2, 6}, rng);
  int labels[] = {3, 1};

  auto run = [&]() {
    Tensor leaf = x.detached_leaf();
    Tensor h = gelu(matmul(leaf, w));
    Tensor loss = cross_entropy_with_logits(h, labels);
    backward(loss);
    return std::vector<double>(leaf.grad().begin(), leaf.grad().end());
  };
  auto g1 = run();
  auto g2 = run();
  CHECK(g1 == g2);
}

TEST_CASE("tape topological order puts inputs before consumers") {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  Tensor y = scale(x, 3.0);
  Tensor loss = sum(add(y, x));
  Tape tape = Tape::from(loss);
  // Order: every node's parents appear earlier in the tape.
  for (std::size_t i = 0; i < tape.order.size(); ++i)
    for (const auto& parent : tape.order[i]->parents) {
      bool found_before = false;
      for (std::size_t j = 0; j < i; ++j)
        if (tape.order[j] == parent.get()) found_before = true;
      CHECK(found_before);
    }
}

TEST_CASE("concat and slice round-trip with gradients") {
  Tensor a = Tensor::from({1, 3}, {1, 2, 3}, true);
  Tensor b = Tensor::from({2, 3}, {4, 5, 6, 7, 8, 9}, true);
  Tensor c = concat_rows(std::vector<Tensor>{a, b});
  CHECK(c.rows() == 3);
  Tensor mid = slice_rows(c, 1, 3);
  CHECK(mid.at(0, 0) == 4.0);
  backward(sum(mid));
  CHECK(a.has_grad());
  CHECK(a.grad()[0] == 0.0);
  CHECK(b.grad()[0] == 1.0);
}
