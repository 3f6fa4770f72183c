#include "vrt/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace vrt {

namespace {

using detail::Node;

using MatRM =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapCM = Eigen::Map<const MatRM>;

std::size_t shape_product(const Shape& s) {
  std::size_t p = 1;
  for (auto d : s) p *= d;
  return p;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) +
                   " and " + shape_str(b));
}

[[noreturn]] void shape_fail(const char* op, const Shape& a) {
  throw ShapeError(std::string(op) + ": bad shape " + shape_str(a));
}

constexpr double kSqrt2OverPi = 0.7978845608028653558798921198687;
constexpr double kGeluCubic = 0.044715;

std::shared_ptr<Node> make_node(Shape shape, std::vector<double> value) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  return n;
}

// Links result into the graph iff some parent requires grad.
Tensor finish(std::shared_ptr<Node> result,
              std::vector<std::shared_ptr<Node>> parents,
              std::function<void(Node&)> backward_fn) {
  bool needs = false;
  for (const auto& p : parents)
    if (p->requires_grad) needs = true;
  if (needs) {
    result->requires_grad = true;
    result->parents = std::move(parents);
    result->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(result));
}

void require_2d(const char* op, const Tensor& t) {
  if (t.shape().size() != 2) shape_fail(op, t.shape());
}

}  // namespace

// --- Tensor basics ----------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = make_node(shape, std::vector<double>(shape_product(shape), 0.0));
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  auto n = make_node(shape, std::vector<double>(shape_product(shape), v));
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_product(shape) != data.size())
    throw ShapeError("Tensor::from: shape " + shape_str(shape) +
                     " does not match data length " +
                     std::to_string(data.size()));
  auto n = make_node(std::move(shape), std::move(data));
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from({1}, {v}, requires_grad);
}

Tensor Tensor::identity(std::size_t n) {
  std::vector<double> d(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) d[i * n + i] = 1.0;
  return from({n, n}, std::move(d));
}

std::size_t Tensor::rows() const {
  require_2d("rows", *this);
  return node_->shape[0];
}

std::size_t Tensor::cols() const {
  require_2d("cols", *this);
  return node_->shape[1];
}

std::span<const double> Tensor::grad() const {
  if (node_->grad.empty())
    throw std::logic_error("Tensor::grad: no gradient present");
  return node_->grad;
}

double Tensor::item() const {
  if (size() != 1) shape_fail("item", shape());
  return node_->value[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  require_2d("at", *this);
  return node_->value.at(r * node_->shape[1] + c);
}

Tensor Tensor::detached_leaf() const {
  auto n = make_node(node_->shape, node_->value);
  n->requires_grad = true;
  return Tensor(std::move(n));
}

std::vector<double>& Tensor::mutable_grad_buffer() {
  node_->ensure_grad();
  return node_->grad;
}

// --- Tape -------------------------------------------------------------------

Tape Tape::from(const Tensor& root) {
  Tape tape;
  std::unordered_set<const Node*> seen;
  // Iterative post-order DFS; child visit order is the parent list order, so
  // the tape is identical across runs on the same graph.
  std::vector<std::pair<Node*, std::size_t>> stack;
  Node* r = root.node().get();
  if (!r) return tape;
  stack.emplace_back(r, 0);
  seen.insert(r);
  while (!stack.empty()) {
    auto& [node, next_child] = stack.back();
    if (next_child < node->parents.size()) {
      Node* child = node->parents[next_child++].get();
      if (seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      tape.order.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

void Tape::zero_grad() {
  for (Node* n : order) n->grad.assign(n->value.size(), 0.0);
}

void backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_str(loss.shape()));
  Tape tape = Tape::from(loss);
  // Interior grads are scratch for this traversal; only leaf grads accumulate
  // across repeated calls.
  for (Node* n : tape.order) {
    if (n->backward_fn) n->grad.assign(n->value.size(), 0.0);
    else n->ensure_grad();
  }
  loss.node()->ensure_grad();
  loss.node()->grad[0] += 1.0;
  for (auto it = tape.order.rbegin(); it != tape.order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

// --- primitives -------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  const bool same = a.shape() == b.shape();
  const bool rowbcast = a.shape().size() == 2 && b.shape().size() == 1 &&
                        a.shape()[1] == b.shape()[0];
  if (!same && !rowbcast) shape_fail("add", a.shape(), b.shape());

  std::vector<double> out(a.size());
  const auto& av = a.data();
  const auto& bv = b.data();
  if (same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  } else {
    const std::size_t n = a.shape()[1];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i % n];
  }

  auto an = a.node();
  auto bn = b.node();
  return finish(make_node(a.shape(), std::move(out)), {an, bn},
                [an, bn, same](Node& self) {
                  if (an->requires_grad) {
                    an->ensure_grad();
                    for (std::size_t i = 0; i < self.grad.size(); ++i)
                      an->grad[i] += self.grad[i];
                  }
                  if (bn->requires_grad) {
                    bn->ensure_grad();
                    if (same) {
                      for (std::size_t i = 0; i < self.grad.size(); ++i)
                        bn->grad[i] += self.grad[i];
                    } else {
                      const std::size_t n = bn->value.size();
                      for (std::size_t i = 0; i < self.grad.size(); ++i)
                        bn->grad[i % n] += self.grad[i];
                    }
                  }
                });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  const auto av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
  auto an = a.node();
  return finish(make_node(a.shape(), std::move(out)), {an}, [an, c](Node& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      an->grad[i] += c * self.grad[i];
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d("matmul", a);
  require_2d("matmul", b);
  if (a.shape()[1] != b.shape()[0]) shape_fail("matmul", a.shape(), b.shape());
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];

  std::vector<double> out(m * n);
  {
    MapCM A(a.data().data(), m, k);
    MapCM B(b.data().data(), k, n);
    MapM C(out.data(), m, n);
    C.noalias() = A * B;
  }

  auto an = a.node();
  auto bn = b.node();
  return finish(make_node({m, n}, std::move(out)), {an, bn},
                [an, bn, m, k, n](Node& self) {
                  MapCM G(self.grad.data(), m, n);
                  if (an->requires_grad) {
                    an->ensure_grad();
                    MapCM B(bn->value.data(), k, n);
                    MapM dA(an->grad.data(), m, k);
                    dA.noalias() += G * B.transpose();
                  }
                  if (bn->requires_grad) {
                    bn->ensure_grad();
                    MapCM A(an->value.data(), m, k);
                    MapM dB(bn->grad.data(), k, n);
                    dB.noalias() += A.transpose() * G;
                  }
                });
}

Tensor transpose(const Tensor& a) {
  require_2d("transpose", a);
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(m * n);
  const auto av = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  auto an = a.node();
  return finish(make_node({n, m}, std::move(out)), {an}, [an, m, n](Node& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        an->grad[i * n + j] += self.grad[j * m + i];
  });
}

Tensor row_softmax(const Tensor& a) {
  require_2d("row_softmax", a);
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(m * n);
  const auto av = a.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = av.data() + i * n;
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = std::exp(row[j] - mx);
      denom += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= denom;
  }
  auto an = a.node();
  return finish(make_node({m, n}, std::move(out)), {an}, [an, m, n](Node& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < m; ++i) {
      const double* s = self.value.data() + i * n;
      const double* g = self.grad.data() + i * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += s[j] * g[j];
      for (std::size_t j = 0; j < n; ++j)
        an->grad[i * n + j] += s[j] * (g[j] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias,
                  double eps) {
  require_2d("layer_norm", a);
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  if (gain.shape() != Shape{n}) shape_fail("layer_norm", a.shape(), gain.shape());
  if (bias.shape() != Shape{n}) shape_fail("layer_norm", a.shape(), bias.shape());

  std::vector<double> out(m * n);
  std::vector<double> xhat(m * n);
  std::vector<double> inv_sigma(m);
  const auto av = a.data();
  const auto gv = gain.data();
  const auto bv = bias.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = av.data() + i * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_sigma[i] = is;
    for (std::size_t j = 0; j < n; ++j) {
      double xh = (row[j] - mean) * is;
      xhat[i * n + j] = xh;
      out[i * n + j] = gv[j] * xh + bv[j];
    }
  }

  auto an = a.node();
  auto gn = gain.node();
  auto bn = bias.node();
  return finish(
      make_node({m, n}, std::move(out)), {an, gn, bn},
      [an, gn, bn, m, n, xhat = std::move(xhat),
       inv_sigma = std::move(inv_sigma)](Node& self) {
        const double* g = self.grad.data();
        if (gn->requires_grad) {
          gn->ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
              gn->grad[j] += g[i * n + j] * xhat[i * n + j];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) bn->grad[j] += g[i * n + j];
        }
        if (an->requires_grad) {
          an->ensure_grad();
          const auto gv = gn->value.data();
          for (std::size_t i = 0; i < m; ++i) {
            double mean_gy = 0.0, mean_gy_xh = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              double gy = gv[j] * g[i * n + j];
              mean_gy += gy;
              mean_gy_xh += gy * xhat[i * n + j];
            }
            mean_gy /= static_cast<double>(n);
            mean_gy_xh /= static_cast<double>(n);
            for (std::size_t j = 0; j < n; ++j) {
              double gy = gv[j] * g[i * n + j];
              an->grad[i * n + j] +=
                  (gy - mean_gy - xhat[i * n + j] * mean_gy_xh) * inv_sigma[i];
            }
          }
        }
      });
}

Tensor gelu(const Tensor& a) {
  std::vector<double> out(a.size());
  const auto av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    double x = av[i];
    double u = kSqrt2OverPi * (x + kGeluCubic * x * x * x);
    out[i] = 0.5 * x * (1.0 + std::tanh(u));
  }
  auto an = a.node();
  return finish(make_node(a.shape(), std::move(out)), {an}, [an](Node& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      double x = an->value[i];
      double u = kSqrt2OverPi * (x + kGeluCubic * x * x * x);
      double t = std::tanh(u);
      double du = kSqrt2OverPi * (1.0 + 3.0 * kGeluCubic * x * x);
      double dydx = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
      an->grad[i] += dydx * self.grad[i];
    }
  });
}

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
  require_2d("embedding_lookup", table);
  const std::size_t v = table.shape()[0], d = table.shape()[1];
  std::vector<double> out(ids.size() * d);
  const auto tv = table.data();
  std::vector<int> idv(ids.begin(), ids.end());
  for (std::size_t i = 0; i < idv.size(); ++i) {
    int id = idv[i];
    if (id < 0 || static_cast<std::size_t>(id) >= v)
      throw std::out_of_range("embedding_lookup: id " + std::to_string(id) +
                              " outside table of " + std::to_string(v));
    std::copy_n(tv.data() + static_cast<std::size_t>(id) * d, d,
                out.data() + i * d);
  }
  auto tn = table.node();
  auto result = make_node({idv.size(), d}, std::move(out));
  return finish(std::move(result), {tn},
                [tn, d, idv = std::move(idv)](Node& self) {
                  if (!tn->requires_grad) return;
                  tn->ensure_grad();
                  for (std::size_t i = 0; i < idv.size(); ++i) {
                    double* dst =
                        tn->grad.data() + static_cast<std::size_t>(idv[i]) * d;
                    const double* src = self.grad.data() + i * d;
                    for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                  }
                });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty input");
  const std::size_t n = parts[0].cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_2d("concat_rows", p);
    if (p.shape()[1] != n) shape_fail("concat_rows", parts[0].shape(), p.shape());
    total += p.shape()[0];
  }
  std::vector<double> out;
  out.reserve(total * n);
  std::vector<std::shared_ptr<Node>> parents;
  std::vector<std::size_t> row_counts;
  for (const auto& p : parts) {
    out.insert(out.end(), p.data().begin(), p.data().end());
    parents.push_back(p.node());
    row_counts.push_back(p.shape()[0]);
  }
  auto ps = parents;  // backward_fn keeps its own copy
  return finish(make_node({total, n}, std::move(out)), std::move(parents),
                [ps = std::move(ps), row_counts = std::move(row_counts),
                 n](Node& self) {
                  std::size_t row = 0;
                  for (std::size_t p = 0; p < ps.size(); ++p) {
                    if (ps[p]->requires_grad) {
                      ps[p]->ensure_grad();
                      const double* src = self.grad.data() + row * n;
                      for (std::size_t i = 0; i < row_counts[p] * n; ++i)
                        ps[p]->grad[i] += src[i];
                    }
                    row += row_counts[p];
                  }
                });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  require_2d("slice_rows", a);
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  if (begin > end || end > m)
    throw std::out_of_range("slice_rows: range [" + std::to_string(begin) +
                            "," + std::to_string(end) + ") outside " +
                            std::to_string(m) + " rows");
  std::vector<double> out(a.data().begin() + begin * n,
                          a.data().begin() + end * n);
  auto an = a.node();
  return finish(make_node({end - begin, n}, std::move(out)), {an},
                [an, begin, n](Node& self) {
                  if (!an->requires_grad) return;
                  an->ensure_grad();
                  double* dst = an->grad.data() + begin * n;
                  for (std::size_t i = 0; i < self.grad.size(); ++i)
                    dst[i] += self.grad[i];
                });
}

Tensor cross_entropy_with_logits(const Tensor& logits,
                                 std::span<const int> labels) {
  require_2d("cross_entropy_with_logits", logits);
  const std::size_t m = logits.shape()[0], n = logits.shape()[1];
  if (labels.size() != m)
    throw ShapeError("cross_entropy_with_logits: " + std::to_string(m) +
                     " rows vs " + std::to_string(labels.size()) + " labels");
  std::vector<int> lv(labels.begin(), labels.end());
  const auto av = logits.data();
  double loss = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    int y = lv[i];
    if (y < 0 || static_cast<std::size_t>(y) >= n)
      throw std::out_of_range("cross_entropy_with_logits: label " +
                              std::to_string(y) + " outside width " +
                              std::to_string(n));
    const double* row = av.data() + i * n;
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j) denom += std::exp(row[j] - mx);
    loss += std::log(denom) + mx - row[y];
  }
  auto an = logits.node();
  return finish(make_node({1}, {loss}), {an},
                [an, m, n, lv = std::move(lv)](Node& self) {
                  if (!an->requires_grad) return;
                  an->ensure_grad();
                  const double g = self.grad[0];
                  for (std::size_t i = 0; i < m; ++i) {
                    const double* row = an->value.data() + i * n;
                    double mx = row[0];
                    for (std::size_t j = 1; j < n; ++j)
                      mx = std::max(mx, row[j]);
                    double denom = 0.0;
                    for (std::size_t j = 0; j < n; ++j)
                      denom += std::exp(row[j] - mx);
                    double* dst = an->grad.data() + i * n;
                    for (std::size_t j = 0; j < n; ++j)
                      dst[j] += g * std::exp(row[j] - mx) / denom;
                    dst[lv[i]] -= g;
                  }
                });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  auto an = a.node();
  return finish(make_node({1}, {s}), {an}, [an](Node& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    const double g = self.grad[0];
    for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += g;
  });
}

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                         const Tensor& x, double h) {
  if (h <= 0.0) throw std::invalid_argument("finite_diff_check: h must be > 0");
  Tensor leaf = x.detached_leaf();
  Tensor loss = f(leaf);
  if (loss.size() != 1)
    throw std::invalid_argument("finite_diff_check: f must return a scalar");
  backward(loss);
  std::vector<double> auto_grad(leaf.grad().begin(), leaf.grad().end());

  double worst = 0.0;
  std::vector<double> base(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < base.size(); ++i) {
    std::vector<double> plus = base, minus = base;
    plus[i] += h;
    minus[i] -= h;
    double fp = f(Tensor::from(x.shape(), std::move(plus))).item();
    double fm = f(Tensor::from(x.shape(), std::move(minus))).item();
    double fd = (fp - fm) / (2.0 * h);
    double err = std::abs(auto_grad[i] - fd) / std::max(1.0, std::abs(fd));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace vrt
