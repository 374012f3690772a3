#include "disperse/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_set>

namespace disperse::ad {

namespace {

std::atomic<std::uint64_t> g_seq{1};

std::shared_ptr<Tensor::Node> new_node(std::size_t rows, std::size_t cols,
                                       bool requires_grad) {
  auto n = std::make_shared<Tensor::Node>();
  n->rows = rows;
  n->cols = cols;
  n->value.assign(rows * cols, 0.0);
  n->requires_grad = requires_grad;
  if (requires_grad) n->grad.assign(rows * cols, 0.0);
  n->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
  return n;
}

[[noreturn]] void shape_error(const char* op, const Tensor& a,
                              const Tensor& b) {
  throw std::invalid_argument(
      std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
      std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
      std::to_string(b.cols()) + ")");
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw std::invalid_argument(std::string(op) + ": empty tensor");
}

}  // namespace

Tensor make_op_result(std::size_t rows, std::size_t cols,
                      std::vector<Tensor> parents,
                      std::function<void(Tensor::Node&)> backprop) {
  bool needs_grad = false;
  for (const auto& p : parents) needs_grad = needs_grad || p.requires_grad();
  auto n = new_node(rows, cols, needs_grad);
  if (needs_grad) {
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return Tensor(std::move(n));
}

Tensor Tensor::zeros(std::size_t rows, std::size_t cols, bool requires_grad) {
  if (rows == 0 || cols == 0)
    throw std::invalid_argument("Tensor::zeros: zero dimension");
  return Tensor(new_node(rows, cols, requires_grad));
}

Tensor Tensor::from(std::vector<double> data, std::size_t rows,
                    std::size_t cols, bool requires_grad) {
  if (rows * cols != data.size())
    throw std::invalid_argument("Tensor::from: data size does not match shape");
  auto n = new_node(rows, cols, requires_grad);
  n->value = std::move(data);
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from({v}, 1, 1, requires_grad);
}

std::size_t Tensor::rows() const { return node_ ? node_->rows : 0; }
std::size_t Tensor::cols() const { return node_ ? node_->cols : 0; }
std::size_t Tensor::size() const { return node_ ? node_->value.size() : 0; }
bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

std::span<const double> Tensor::value() const {
  require_defined(*this, "value");
  return node_->value;
}

std::span<double> Tensor::value_mut() {
  require_defined(*this, "value_mut");
  return node_->value;
}

std::span<const double> Tensor::grad() const {
  require_defined(*this, "grad");
  if (!node_->requires_grad)
    throw std::invalid_argument("grad: tensor does not require grad");
  return node_->grad;
}

std::span<double> Tensor::grad_mut() {
  require_defined(*this, "grad_mut");
  if (!node_->requires_grad)
    throw std::invalid_argument("grad_mut: tensor does not require grad");
  return node_->grad;
}

double Tensor::at(std::size_t r, std::size_t c) const {
  require_defined(*this, "at");
  if (r >= node_->rows || c >= node_->cols)
    throw std::out_of_range("Tensor::at: index out of range");
  return node_->value[r * node_->cols + c];
}

double Tensor::item() const {
  require_defined(*this, "item");
  if (node_->value.size() != 1)
    throw std::invalid_argument("item: tensor is not a scalar");
  return node_->value[0];
}

void Tensor::zero_grad() {
  if (node_ && node_->requires_grad)
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detached(bool requires_grad) const {
  require_defined(*this, "detached");
  return from(node_->value, node_->rows, node_->cols, requires_grad);
}

// --- ops --------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.cols() != b.rows()) shape_error("matmul", a, b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out = make_op_result(
      m, n, {a, b}, [m, k, n](Tensor::Node& self) {
        const Tensor& a = self.parents[0];
        const Tensor& b = self.parents[1];
        const auto g = self.grad;
        if (a.requires_grad()) {
          auto ga = a.node()->grad.data();
          const auto bv = b.value();
          // dA += G * B^T
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
              const double gij = g[i * n + j];
              if (gij == 0.0) continue;
              for (std::size_t p = 0; p < k; ++p)
                ga[i * k + p] += gij * bv[p * n + j];
            }
        }
        if (b.requires_grad()) {
          auto gb = b.node()->grad.data();
          const auto av = a.value();
          // dB += A^T * G
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double aip = av[i * k + p];
              if (aip == 0.0) continue;
              for (std::size_t j = 0; j < n; ++j)
                gb[p * n + j] += aip * g[i * n + j];
            }
        }
      });
  auto ov = out.value_mut();
  const auto av = a.value();
  const auto bv = b.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) ov[i * n + j] += aip * bv[p * n + j];
    }
  return out;
}

Tensor cosine_matrix(const Tensor& a, const Tensor& b) {
  require_defined(a, "cosine_matrix");
  require_defined(b, "cosine_matrix");
  if (a.cols() != b.cols()) shape_error("cosine_matrix", a, b);
  const std::size_t n = a.rows(), d = a.cols(), m = b.rows();
  Tensor out = make_op_result(
      n, m, {a, b}, [n, d, m](Tensor::Node& self) {
        const Tensor& a = self.parents[0];
        const Tensor& b = self.parents[1];
        const auto g = self.grad;
        if (a.requires_grad()) {
          auto ga = a.node()->grad.data();
          const auto bv = b.value();
          // dA += G * B
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) {
              const double gij = g[i * m + j];
              if (gij == 0.0) continue;
              for (std::size_t p = 0; p < d; ++p)
                ga[i * d + p] += gij * bv[j * d + p];
            }
        }
        if (b.requires_grad()) {
          auto gb = b.node()->grad.data();
          const auto av = a.value();
          // dB += G^T * A
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) {
              const double gij = g[i * m + j];
              if (gij == 0.0) continue;
              for (std::size_t p = 0; p < d; ++p)
                gb[j * d + p] += gij * av[i * d + p];
            }
        }
      });
  auto ov = out.value_mut();
  const auto av = a.value();
  const auto bv = b.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double dot = 0.0;
      for (std::size_t p = 0; p < d; ++p) dot += av[i * d + p] * bv[j * d + p];
      ov[i * m + j] = dot;
    }
  return out;
}

Tensor l2_normalize_rows(const Tensor& x, double eps) {
  require_defined(x, "l2_normalize_rows");
  if (eps <= 0.0) throw std::invalid_argument("l2_normalize_rows: eps <= 0");
  const std::size_t n = x.rows(), d = x.cols();
  // Per-row divisor, captured for the backward rule.
  auto divisors = std::make_shared<std::vector<double>>(n);
  auto guarded = std::make_shared<std::vector<std::uint8_t>>(n);
  Tensor out = make_op_result(
      n, d, {x}, [n, d, divisors, guarded](Tensor::Node& self) {
        const Tensor& x = self.parents[0];
        if (!x.requires_grad()) return;
        auto gx = x.node()->grad.data();
        const auto g = self.grad;
        const auto y = self.value;
        for (std::size_t i = 0; i < n; ++i) {
          const double s = (*divisors)[i];
          if ((*guarded)[i]) {
            // Below eps the divisor is the constant eps.
            for (std::size_t p = 0; p < d; ++p)
              gx[i * d + p] += g[i * d + p] / s;
            continue;
          }
          double ydotg = 0.0;
          for (std::size_t p = 0; p < d; ++p)
            ydotg += y[i * d + p] * g[i * d + p];
          for (std::size_t p = 0; p < d; ++p)
            gx[i * d + p] += (g[i * d + p] - y[i * d + p] * ydotg) / s;
        }
      });
  auto ov = out.value_mut();
  const auto xv = x.value();
  for (std::size_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (std::size_t p = 0; p < d; ++p) sq += xv[i * d + p] * xv[i * d + p];
    const double norm = std::sqrt(sq);
    const bool guard = norm < eps;
    const double s = guard ? eps : norm;
    (*divisors)[i] = s;
    (*guarded)[i] = guard ? 1 : 0;
    for (std::size_t p = 0; p < d; ++p) ov[i * d + p] = xv[i * d + p] / s;
  }
  return out;
}

Tensor hinge(const Tensor& x) {
  require_defined(x, "hinge");
  const std::size_t sz = x.size();
  Tensor out = make_op_result(
      x.rows(), x.cols(), {x}, [sz](Tensor::Node& self) {
        const Tensor& x = self.parents[0];
        if (!x.requires_grad()) return;
        auto gx = x.node()->grad.data();
        const auto xv = x.value();
        for (std::size_t i = 0; i < sz; ++i)
          if (xv[i] > 0.0) gx[i] += self.grad[i];
      });
  auto ov = out.value_mut();
  const auto xv = x.value();
  for (std::size_t i = 0; i < sz; ++i) ov[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  return out;
}

Tensor tanh(const Tensor& x) {
  require_defined(x, "tanh");
  const std::size_t sz = x.size();
  Tensor out = make_op_result(
      x.rows(), x.cols(), {x}, [sz](Tensor::Node& self) {
        const Tensor& x = self.parents[0];
        if (!x.requires_grad()) return;
        auto gx = x.node()->grad.data();
        const auto y = self.value;
        for (std::size_t i = 0; i < sz; ++i)
          gx[i] += self.grad[i] * (1.0 - y[i] * y[i]);
      });
  auto ov = out.value_mut();
  const auto xv = x.value();
  for (std::size_t i = 0; i < sz; ++i) ov[i] = std::tanh(xv[i]);
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_defined(a, "add");
  require_defined(b, "add");
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("add", a, b);
  const std::size_t sz = a.size();
  Tensor out = make_op_result(
      a.rows(), a.cols(), {a, b}, [sz](Tensor::Node& self) {
        for (int side = 0; side < 2; ++side) {
          const Tensor& p = self.parents[side];
          if (!p.requires_grad()) continue;
          auto gp = p.node()->grad.data();
          for (std::size_t i = 0; i < sz; ++i) gp[i] += self.grad[i];
        }
      });
  auto ov = out.value_mut();
  const auto av = a.value();
  const auto bv = b.value();
  for (std::size_t i = 0; i < sz; ++i) ov[i] = av[i] + bv[i];
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_defined(a, "sub");
  require_defined(b, "sub");
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("sub", a, b);
  const std::size_t sz = a.size();
  Tensor out = make_op_result(
      a.rows(), a.cols(), {a, b}, [sz](Tensor::Node& self) {
        const Tensor& a = self.parents[0];
        const Tensor& b = self.parents[1];
        if (a.requires_grad()) {
          auto ga = a.node()->grad.data();
          for (std::size_t i = 0; i < sz; ++i) ga[i] += self.grad[i];
        }
        if (b.requires_grad()) {
          auto gb = b.node()->grad.data();
          for (std::size_t i = 0; i < sz; ++i) gb[i] -= self.grad[i];
        }
      });
  auto ov = out.value_mut();
  const auto av = a.value();
  const auto bv = b.value();
  for (std::size_t i = 0; i < sz; ++i) ov[i] = av[i] - bv[i];
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_defined(a, "mul");
  require_defined(b, "mul");
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("mul", a, b);
  const std::size_t sz = a.size();
  Tensor out = make_op_result(
      a.rows(), a.cols(), {a, b}, [sz](Tensor::Node& self) {
        const Tensor& a = self.parents[0];
        const Tensor& b = self.parents[1];
        if (a.requires_grad()) {
          auto ga = a.node()->grad.data();
          const auto bv = b.value();
          for (std::size_t i = 0; i < sz; ++i) ga[i] += self.grad[i] * bv[i];
        }
        if (b.requires_grad()) {
          auto gb = b.node()->grad.data();
          const auto av = a.value();
          for (std::size_t i = 0; i < sz; ++i) gb[i] += self.grad[i] * av[i];
        }
      });
  auto ov = out.value_mut();
  const auto av = a.value();
  const auto bv = b.value();
  for (std::size_t i = 0; i < sz; ++i) ov[i] = av[i] * bv[i];
  return out;
}

Tensor scale(const Tensor& x, double c) {
  require_defined(x, "scale");
  const std::size_t sz = x.size();
  Tensor out = make_op_result(
      x.rows(), x.cols(), {x}, [sz, c](Tensor::Node& self) {
        const Tensor& x = self.parents[0];
        if (!x.requires_grad()) return;
        auto gx = x.node()->grad.data();
        for (std::size_t i = 0; i < sz; ++i) gx[i] += self.grad[i] * c;
      });
  auto ov = out.value_mut();
  const auto xv = x.value();
  for (std::size_t i = 0; i < sz; ++i) ov[i] = xv[i] * c;
  return out;
}

Tensor add_scalar(const Tensor& x, double c) {
  require_defined(x, "add_scalar");
  const std::size_t sz = x.size();
  Tensor out = make_op_result(
      x.rows(), x.cols(), {x}, [sz](Tensor::Node& self) {
        const Tensor& x = self.parents[0];
        if (!x.requires_grad()) return;
        auto gx = x.node()->grad.data();
        for (std::size_t i = 0; i < sz; ++i) gx[i] += self.grad[i];
      });
  auto ov = out.value_mut();
  const auto xv = x.value();
  for (std::size_t i = 0; i < sz; ++i) ov[i] = xv[i] + c;
  return out;
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  require_defined(x, "add_row_bias");
  require_defined(bias, "add_row_bias");
  if (bias.rows() != 1 || bias.cols() != x.cols())
    shape_error("add_row_bias", x, bias);
  const std::size_t n = x.rows(), c = x.cols();
  Tensor out = make_op_result(
      n, c, {x, bias}, [n, c](Tensor::Node& self) {
        const Tensor& x = self.parents[0];
        const Tensor& bias = self.parents[1];
        if (x.requires_grad()) {
          auto gx = x.node()->grad.data();
          for (std::size_t i = 0; i < n * c; ++i) gx[i] += self.grad[i];
        }
        if (bias.requires_grad()) {
          auto gb = bias.node()->grad.data();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) gb[j] += self.grad[i * c + j];
        }
      });
  auto ov = out.value_mut();
  const auto xv = x.value();
  const auto bv = bias.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) ov[i * c + j] = xv[i * c + j] + bv[j];
  return out;
}

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  const std::size_t sz = x.size();
  Tensor out = make_op_result(
      1, 1, {x}, [sz](Tensor::Node& self) {
        const Tensor& x = self.parents[0];
        if (!x.requires_grad()) return;
        auto gx = x.node()->grad.data();
        for (std::size_t i = 0; i < sz; ++i) gx[i] += self.grad[0];
      });
  double acc = 0.0;
  for (double v : x.value()) acc += v;
  out.value_mut()[0] = acc;
  return out;
}

Tensor mean_all(const Tensor& x) {
  require_defined(x, "mean_all");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor weighted_sum(const Tensor& x, const std::vector<double>& w) {
  require_defined(x, "weighted_sum");
  if (w.size() != x.size())
    throw std::invalid_argument("weighted_sum: weight size mismatch");
  const std::size_t sz = x.size();
  auto weights = std::make_shared<std::vector<double>>(w);
  Tensor out = make_op_result(
      1, 1, {x}, [sz, weights](Tensor::Node& self) {
        const Tensor& x = self.parents[0];
        if (!x.requires_grad()) return;
        auto gx = x.node()->grad.data();
        for (std::size_t i = 0; i < sz; ++i)
          gx[i] += self.grad[0] * (*weights)[i];
      });
  double acc = 0.0;
  const auto xv = x.value();
  for (std::size_t i = 0; i < sz; ++i) acc += xv[i] * w[i];
  out.value_mut()[0] = acc;
  return out;
}

Tensor subtract_at(const Tensor& x, const std::vector<std::size_t>& labels,
                   double amount) {
  require_defined(x, "subtract_at");
  if (labels.size() != x.rows())
    throw std::invalid_argument("subtract_at: one label per row required");
  const std::size_t n = x.rows(), c = x.cols();
  for (std::size_t l : labels)
    if (l >= c) throw std::out_of_range("subtract_at: label out of range");
  const std::size_t sz = x.size();
  Tensor out = make_op_result(
      n, c, {x}, [sz](Tensor::Node& self) {
        const Tensor& x = self.parents[0];
        if (!x.requires_grad()) return;
        auto gx = x.node()->grad.data();
        for (std::size_t i = 0; i < sz; ++i) gx[i] += self.grad[i];
      });
  auto ov = out.value_mut();
  const auto xv = x.value();
  std::copy(xv.begin(), xv.end(), ov.begin());
  for (std::size_t i = 0; i < n; ++i) ov[i * c + labels[i]] -= amount;
  return out;
}

Tensor log_sum_exp_ce(const Tensor& logits,
                      const std::vector<std::size_t>& labels) {
  require_defined(logits, "log_sum_exp_ce");
  if (labels.size() != logits.rows())
    throw std::invalid_argument("log_sum_exp_ce: one label per row required");
  const std::size_t n = logits.rows(), k = logits.cols();
  for (std::size_t l : labels)
    if (l >= k) throw std::out_of_range("log_sum_exp_ce: label out of range");
  auto softmax = std::make_shared<std::vector<double>>(n * k);
  auto lab = std::make_shared<std::vector<std::size_t>>(labels);
  Tensor out = make_op_result(
      1, 1, {logits}, [n, k, softmax, lab](Tensor::Node& self) {
        const Tensor& logits = self.parents[0];
        if (!logits.requires_grad()) return;
        auto gl = logits.node()->grad.data();
        const double g = self.grad[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < k; ++j) {
            double delta = (*softmax)[i * k + j];
            if (j == (*lab)[i]) delta -= 1.0;
            gl[i * k + j] += g * delta;
          }
      });
  const auto lv = logits.value();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double mx = lv[i * k];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, lv[i * k + j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double e = std::exp(lv[i * k + j] - mx);
      (*softmax)[i * k + j] = e;
      denom += e;
    }
    for (std::size_t j = 0; j < k; ++j) (*softmax)[i * k + j] /= denom;
    total += std::log(denom) + mx - lv[i * k + labels[i]];
  }
  out.value_mut()[0] = total / static_cast<double>(n);
  return out;
}

Tensor row_max_masked(const Tensor& x, const std::vector<std::uint8_t>& mask) {
  require_defined(x, "row_max_masked");
  if (mask.size() != x.size())
    throw std::invalid_argument("row_max_masked: mask size mismatch");
  const std::size_t n = x.rows(), c = x.cols();
  auto argmax = std::make_shared<std::vector<std::ptrdiff_t>>(n, -1);
  Tensor out = make_op_result(
      n, 1, {x}, [n, c, argmax](Tensor::Node& self) {
        const Tensor& x = self.parents[0];
        if (!x.requires_grad()) return;
        auto gx = x.node()->grad.data();
        for (std::size_t i = 0; i < n; ++i) {
          const auto j = (*argmax)[i];
          if (j >= 0) gx[i * c + static_cast<std::size_t>(j)] += self.grad[i];
        }
      });
  auto ov = out.value_mut();
  const auto xv = x.value();
  for (std::size_t i = 0; i < n; ++i) {
    double best = 0.0;
    std::ptrdiff_t bj = -1;
    for (std::size_t j = 0; j < c; ++j) {
      if (!mask[i * c + j]) continue;
      const double v = xv[i * c + j];
      if (bj < 0 || v > best) {
        best = v;
        bj = static_cast<std::ptrdiff_t>(j);
      }
    }
    (*argmax)[i] = bj;
    ov[i] = bj >= 0 ? best : 0.0;
  }
  return out;
}

Tensor row_lse_masked(const Tensor& x, const std::vector<std::uint8_t>& mask,
                      double s) {
  require_defined(x, "row_lse_masked");
  if (mask.size() != x.size())
    throw std::invalid_argument("row_lse_masked: mask size mismatch");
  const std::size_t n = x.rows(), c = x.cols();
  auto weights = std::make_shared<std::vector<double>>(n * c, 0.0);
  Tensor out = make_op_result(
      n, 1, {x}, [n, c, s, weights](Tensor::Node& self) {
        const Tensor& x = self.parents[0];
        if (!x.requires_grad()) return;
        auto gx = x.node()->grad.data();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < c; ++j)
            gx[i * c + j] += self.grad[i] * s * (*weights)[i * c + j];
      });
  auto ov = out.value_mut();
  const auto xv = x.value();
  for (std::size_t i = 0; i < n; ++i) {
    double mx = 0.0;
    bool any = false;
    for (std::size_t j = 0; j < c; ++j) {
      if (!mask[i * c + j]) continue;
      const double t = s * xv[i * c + j];
      if (!any || t > mx) mx = t;
      any = true;
    }
    if (!any) {
      ov[i] = 0.0;
      continue;
    }
    double denom = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      if (!mask[i * c + j]) continue;
      const double e = std::exp(s * xv[i * c + j] - mx);
      (*weights)[i * c + j] = e;
      denom += e;
    }
    for (std::size_t j = 0; j < c; ++j) (*weights)[i * c + j] /= denom;
    ov[i] = std::log(denom) + mx;
  }
  return out;
}

Tensor row_l2norm(const Tensor& x) {
  require_defined(x, "row_l2norm");
  const std::size_t n = x.rows(), d = x.cols();
  Tensor out = make_op_result(
      n, 1, {x}, [n, d](Tensor::Node& self) {
        const Tensor& x = self.parents[0];
        if (!x.requires_grad()) return;
        auto gx = x.node()->grad.data();
        const auto xv = x.value();
        for (std::size_t i = 0; i < n; ++i) {
          const double norm = std::max(self.value[i], 1e-12);
          for (std::size_t p = 0; p < d; ++p)
            gx[i * d + p] += self.grad[i] * xv[i * d + p] / norm;
        }
      });
  auto ov = out.value_mut();
  const auto xv = x.value();
  for (std::size_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (std::size_t p = 0; p < d; ++p) sq += xv[i * d + p] * xv[i * d + p];
    ov[i] = std::sqrt(sq);
  }
  return out;
}

void backward(const Tensor& loss) {
  require_defined(loss, "backward");
  if (loss.size() != 1)
    throw std::invalid_argument("backward: loss must be a scalar");
  if (!loss.requires_grad()) return;  // nothing reachable requires grad

  // Reverse-topological order by creation stamp: every node was created
  // after all of its parents, so descending seq is a valid schedule.
  std::vector<Tensor::Node*> order;
  std::unordered_set<Tensor::Node*> seen;
  std::vector<Tensor::Node*> stack{loss.node().get()};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    Tensor::Node* cur = stack.back();
    stack.pop_back();
    order.push_back(cur);
    for (const auto& p : cur->parents) {
      Tensor::Node* pn = p.node().get();
      if (pn->requires_grad && seen.insert(pn).second) stack.push_back(pn);
    }
  }
  std::sort(order.begin(), order.end(),
            [](const Tensor::Node* a, const Tensor::Node* b) {
              return a->seq > b->seq;
            });

  // Interior grads are scratch space for this pass; only leaves accumulate
  // across repeated backward calls.
  for (Tensor::Node* node : order)
    if (node->backprop) std::fill(node->grad.begin(), node->grad.end(), 0.0);

  loss.node()->grad[0] += 1.0;
  for (Tensor::Node* node : order)
    if (node->backprop) node->backprop(*node);
}

}  // namespace disperse::ad
