#include "miavlm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>
#include <utility>

namespace miavlm {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << "x";
        os << s[i];
    }
    os << ")";
    return os.str();
}

namespace {

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

void require_rank2(const Tensor& t, const char* op) {
    require(t.rank() == 2, std::string(op) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
}

// Sums values in ascending order. The result depends only on the multiset
// of addends, never on how they were arranged, which is what makes the
// softmax denominator invariant under key permutations.
double canonical_sum(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    double acc = 0.0;
    for (double v : values) acc += v;
    return acc;
}

constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_derivative(double x) {
    return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

}  // namespace

namespace detail {

std::vector<double>& TensorNode::grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
}

void TensorNode::accumulate_grad(const std::vector<double>& g) {
    auto& buf = grad_buffer();
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

}  // namespace detail

using detail::TensorNode;

// Construction -------------------------------------------------------------

Tensor make_op_result(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                      std::function<void(TensorNode&)> backprop) {
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    bool tracked = false;
    for (const auto& p : parents) tracked = tracked || p.requires_grad();
    node->requires_grad = tracked;
    if (tracked) {
        node->parents.reserve(parents.size());
        for (auto& p : parents) node->parents.push_back(p.node());
        node->backprop = std::move(backprop);
    }
    return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return from_data(std::move(shape), {}, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    std::vector<double> d(shape_numel(shape), value);
    return from_data(std::move(shape), std::move(d), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    for (std::size_t d : shape)
        require(d > 0, "tensor: dimension sizes must be positive, got " + shape_str(shape));
    if (values.empty()) values.assign(n, 0.0);
    require(values.size() == n, "tensor: data length " + std::to_string(values.size()) +
                                    " does not match shape " + shape_str(shape));
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->data.size(); }
const std::vector<double>& Tensor::data() const { return node_->data; }
std::vector<double>& Tensor::data() { return node_->data; }

double Tensor::value() const {
    require(size() == 1, "value(): tensor is not scalar, shape " + shape_str(shape()));
    return node_->data[0];
}

double Tensor::at(std::size_t i) const { return node_->data.at(i); }

double Tensor::at(std::size_t r, std::size_t c) const {
    require(rank() == 2, "at(r,c): tensor is not rank-2, shape " + shape_str(shape()));
    return node_->data.at(r * shape()[1] + c);
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->data.size(); }

const std::vector<double>& Tensor::grad() const {
    if (!has_grad())
        throw std::runtime_error("grad(): no gradient accumulated for this tensor");
    return node_->grad;
}

void Tensor::zero_grad() {
    if (node_) node_->grad.assign(node_->data.size(), 0.0);
}

void Tensor::backward() {
    require(defined(), "backward: undefined tensor");
    if (size() != 1)
        throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(shape()));
    if (!node_->requires_grad)
        throw std::runtime_error("backward: tensor is not connected to any tracked parameter");

    // Post-order over the tracked subgraph: parents appear before children.
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> visited;
    std::vector<std::pair<TensorNode*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            TensorNode* p = n->parents[next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    // Interior gradients are per-pass scratch; only leaves accumulate
    // across repeated backward calls.
    for (TensorNode* n : order)
        if (!n->is_leaf()) n->grad.assign(n->data.size(), 0.0);

    node_->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* n = *it;
        if (n->backprop) {
            n->grad_buffer();
            n->backprop(*n);
        }
    }
}

// Elementwise and linear ops ------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(),
            "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return make_op_result(a.shape(), std::move(out), {a, b}, [](TensorNode& self) {
        for (auto& p : self.parents)
            if (p->requires_grad) p->accumulate_grad(self.grad);
    });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    require_rank2(x, "add_bias");
    require(bias.rank() == 1 && bias.shape()[0] == x.shape()[1],
            "add_bias: bias shape " + shape_str(bias.shape()) + " does not match columns of " +
                shape_str(x.shape()));
    const std::size_t r = x.shape()[0], c = x.shape()[1];
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x.data()[i * c + j] + bias.data()[j];
    return make_op_result(x.shape(), std::move(out), {x, bias}, [r, c](TensorNode& self) {
        auto& xp = *self.parents[0];
        auto& bp = *self.parents[1];
        if (xp.requires_grad) xp.accumulate_grad(self.grad);
        if (bp.requires_grad) {
            auto& gb = bp.grad_buffer();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) gb[j] += self.grad[i * c + j];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(),
            "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    return make_op_result(a.shape(), std::move(out), {a, b}, [](TensorNode& self) {
        auto& a_ = *self.parents[0];
        auto& b_ = *self.parents[1];
        if (a_.requires_grad) {
            auto& ga = a_.grad_buffer();
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * b_.data[i];
        }
        if (b_.requires_grad) {
            auto& gb = b_.grad_buffer();
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += self.grad[i] * a_.data[i];
        }
    });
}

Tensor mul_rowwise(const Tensor& x, const Tensor& v) {
    require_rank2(x, "mul_rowwise");
    require(v.rank() == 1 && v.shape()[0] == x.shape()[1],
            "mul_rowwise: vector shape " + shape_str(v.shape()) + " does not match columns of " +
                shape_str(x.shape()));
    const std::size_t r = x.shape()[0], c = x.shape()[1];
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x.data()[i * c + j] * v.data()[j];
    return make_op_result(x.shape(), std::move(out), {x, v}, [r, c](TensorNode& self) {
        auto& xp = *self.parents[0];
        auto& vp = *self.parents[1];
        if (xp.requires_grad) {
            auto& gx = xp.grad_buffer();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    gx[i * c + j] += self.grad[i * c + j] * vp.data[j];
        }
        if (vp.requires_grad) {
            auto& gv = vp.grad_buffer();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    gv[j] += self.grad[i * c + j] * xp.data[i * c + j];
        }
    });
}

Tensor scale(const Tensor& x, double c) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * c;
    return make_op_result(x.shape(), std::move(out), {x}, [c](TensorNode& self) {
        auto& xp = *self.parents[0];
        if (!xp.requires_grad) return;
        auto& gx = xp.grad_buffer();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += c * self.grad[i];
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    require(a.shape()[1] == b.shape()[0],
            "matmul: inner dimensions differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const std::size_t r = a.shape()[0], k = a.shape()[1], c = b.shape()[1];
    std::vector<double> out(r * c, 0.0);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = a.data()[i * k + kk];
            for (std::size_t j = 0; j < c; ++j) out[i * c + j] += av * b.data()[kk * c + j];
        }
    return make_op_result({r, c}, std::move(out), {a, b}, [r, k, c](TensorNode& self) {
        auto& a_ = *self.parents[0];
        auto& b_ = *self.parents[1];
        if (a_.requires_grad) {
            auto& ga = a_.grad_buffer();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t kk = 0; kk < k; ++kk) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < c; ++j)
                        s += self.grad[i * c + j] * b_.data[kk * c + j];
                    ga[i * k + kk] += s;
                }
        }
        if (b_.requires_grad) {
            auto& gb = b_.grad_buffer();
            for (std::size_t kk = 0; kk < k; ++kk)
                for (std::size_t j = 0; j < c; ++j) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < r; ++i)
                        s += a_.data[i * k + kk] * self.grad[i * c + j];
                    gb[kk * c + j] += s;
                }
        }
    });
}

Tensor transpose(const Tensor& x) {
    require_rank2(x, "transpose");
    const std::size_t r = x.shape()[0], c = x.shape()[1];
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x.data()[i * c + j];
    return make_op_result({c, r}, std::move(out), {x}, [r, c](TensorNode& self) {
        auto& xp = *self.parents[0];
        if (!xp.requires_grad) return;
        auto& gx = xp.grad_buffer();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += self.grad[j * r + i];
    });
}

Tensor reshape(const Tensor& x, Shape new_shape) {
    require(shape_numel(new_shape) == x.size(),
            "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(new_shape));
    return make_op_result(std::move(new_shape), x.data(), {x}, [](TensorNode& self) {
        auto& xp = *self.parents[0];
        if (xp.requires_grad) xp.accumulate_grad(self.grad);
    });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
    require_rank2(x, "slice_cols");
    require(begin < end && end <= x.shape()[1],
            "slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                ") invalid for " + shape_str(x.shape()));
    const std::size_t r = x.shape()[0], c = x.shape()[1], w = end - begin;
    std::vector<double> out(r * w);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j) out[i * w + j] = x.data()[i * c + begin + j];
    return make_op_result({r, w}, std::move(out), {x}, [r, c, w, begin](TensorNode& self) {
        auto& xp = *self.parents[0];
        if (!xp.requires_grad) return;
        auto& gx = xp.grad_buffer();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < w; ++j) gx[i * c + begin + j] += self.grad[i * w + j];
    });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
    require_rank2(x, "slice_rows");
    require(begin < end && end <= x.shape()[0],
            "slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
                ") invalid for " + shape_str(x.shape()));
    const std::size_t c = x.shape()[1], h = end - begin;
    std::vector<double> out(h * c);
    std::copy(x.data().begin() + static_cast<std::ptrdiff_t>(begin * c),
              x.data().begin() + static_cast<std::ptrdiff_t>(end * c), out.begin());
    return make_op_result({h, c}, std::move(out), {x}, [c, h, begin](TensorNode& self) {
        auto& xp = *self.parents[0];
        if (!xp.requires_grad) return;
        auto& gx = xp.grad_buffer();
        for (std::size_t i = 0; i < h * c; ++i) gx[begin * c + i] += self.grad[i];
    });
}

namespace {

Tensor concat_axis(const std::vector<Tensor>& parts, bool along_rows, const char* op) {
    require(!parts.empty(), std::string(op) + ": empty part list");
    std::vector<Tensor> mats;
    mats.reserve(parts.size());
    for (const auto& p : parts) {
        // Rank-1 inputs join as single rows / single columns.
        if (p.rank() == 1)
            mats.push_back(along_rows ? reshape(p, {1, p.shape()[0]}) : reshape(p, {p.shape()[0], 1}));
        else {
            require(p.rank() == 2, std::string(op) + ": expected rank-1 or rank-2 parts, got " +
                                       shape_str(p.shape()));
            mats.push_back(p);
        }
    }
    const std::size_t fixed = along_rows ? mats[0].shape()[1] : mats[0].shape()[0];
    std::size_t total = 0;
    for (const auto& m : mats) {
        const std::size_t f = along_rows ? m.shape()[1] : m.shape()[0];
        require(f == fixed, std::string(op) + ": incompatible part shapes " +
                                shape_str(mats[0].shape()) + " vs " + shape_str(m.shape()));
        total += along_rows ? m.shape()[0] : m.shape()[1];
    }

    const std::size_t rows = along_rows ? total : fixed;
    const std::size_t cols = along_rows ? fixed : total;
    std::vector<double> out(rows * cols);
    std::size_t offset = 0;
    std::vector<std::size_t> extents;
    extents.reserve(mats.size());
    for (const auto& m : mats) {
        const std::size_t pr = m.shape()[0], pc = m.shape()[1];
        extents.push_back(along_rows ? pr : pc);
        for (std::size_t i = 0; i < pr; ++i)
            for (std::size_t j = 0; j < pc; ++j) {
                if (along_rows)
                    out[(offset + i) * cols + j] = m.data()[i * pc + j];
                else
                    out[i * cols + offset + j] = m.data()[i * pc + j];
            }
        offset += extents.back();
    }

    return make_op_result({rows, cols}, std::move(out), mats,
                          [rows, cols, extents, along_rows](TensorNode& self) {
                              (void)rows;
                              std::size_t off = 0;
                              for (std::size_t p = 0; p < self.parents.size(); ++p) {
                                  auto& part = *self.parents[p];
                                  const std::size_t ext = extents[p];
                                  if (part.requires_grad) {
                                      auto& gp = part.grad_buffer();
                                      const std::size_t pr = part.shape[0];
                                      const std::size_t pc = part.shape.size() > 1 ? part.shape[1] : 1;
                                      for (std::size_t i = 0; i < pr; ++i)
                                          for (std::size_t j = 0; j < pc; ++j) {
                                              const std::size_t src =
                                                  along_rows ? (off + i) * cols + j
                                                             : i * cols + off + j;
                                              gp[i * pc + j] += self.grad[src];
                                          }
                                  }
                                  off += ext;
                              }
                          });
}

}  // namespace

Tensor concat_rows(const std::vector<Tensor>& parts) { return concat_axis(parts, true, "concat_rows"); }
Tensor concat_cols(const std::vector<Tensor>& parts) { return concat_axis(parts, false, "concat_cols"); }

// Nonlinearities ------------------------------------------------------------

Tensor softmax_rows(const Tensor& x) {
    require_rank2(x, "softmax_rows");
    const std::size_t r = x.shape()[0], c = x.shape()[1];
    for (double v : x.data())
        if (std::isnan(v)) throw std::domain_error("softmax_rows: NaN in input");
    std::vector<double> out(r * c);
    std::vector<double> row(c);
    for (std::size_t i = 0; i < r; ++i) {
        double m = x.data()[i * c];
        for (std::size_t j = 1; j < c; ++j) m = std::max(m, x.data()[i * c + j]);
        for (std::size_t j = 0; j < c; ++j) row[j] = std::exp(x.data()[i * c + j] - m);
        const double denom = canonical_sum(row);
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = row[j] / denom;
    }
    return make_op_result({r, c}, std::move(out), {x}, [r, c](TensorNode& self) {
        auto& xp = *self.parents[0];
        if (!xp.requires_grad) return;
        auto& gx = xp.grad_buffer();
        for (std::size_t i = 0; i < r; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j)
                dot += self.grad[i * c + j] * self.data[i * c + j];
            for (std::size_t j = 0; j < c; ++j)
                gx[i * c + j] += self.data[i * c + j] * (self.grad[i * c + j] - dot);
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    require_rank2(x, "layer_norm");
    const std::size_t r = x.shape()[0], c = x.shape()[1];
    require(gamma.rank() == 1 && gamma.shape()[0] == c,
            "layer_norm: gamma shape " + shape_str(gamma.shape()) + " does not match columns of " +
                shape_str(x.shape()));
    require(beta.rank() == 1 && beta.shape()[0] == c,
            "layer_norm: beta shape " + shape_str(beta.shape()) + " does not match columns of " +
                shape_str(x.shape()));
    std::vector<double> out(r * c);
    std::vector<double> xhat(r * c);
    std::vector<double> inv_std(r);
    for (std::size_t i = 0; i < r; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < c; ++j) mean += x.data()[i * c + j];
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double d = x.data()[i * c + j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(c);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j) {
            const double xn = (x.data()[i * c + j] - mean) * inv_std[i];
            xhat[i * c + j] = xn;
            out[i * c + j] = xn * gamma.data()[j] + beta.data()[j];
        }
    }
    return make_op_result(
        {r, c}, std::move(out), {x, gamma, beta},
        [r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](TensorNode& self) {
            auto& xp = *self.parents[0];
            auto& gp = *self.parents[1];
            auto& bp = *self.parents[2];
            if (bp.requires_grad) {
                auto& gb = bp.grad_buffer();
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) gb[j] += self.grad[i * c + j];
            }
            if (gp.requires_grad) {
                auto& gg = gp.grad_buffer();
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j)
                        gg[j] += self.grad[i * c + j] * xhat[i * c + j];
            }
            if (xp.requires_grad) {
                auto& gx = xp.grad_buffer();
                for (std::size_t i = 0; i < r; ++i) {
                    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                    for (std::size_t j = 0; j < c; ++j) {
                        const double dxh = self.grad[i * c + j] * gp.data[j];
                        sum_dxhat += dxh;
                        sum_dxhat_xhat += dxh * xhat[i * c + j];
                    }
                    const double inv_c = 1.0 / static_cast<double>(c);
                    for (std::size_t j = 0; j < c; ++j) {
                        const double dxh = self.grad[i * c + j] * gp.data[j];
                        gx[i * c + j] += inv_std[i] * (dxh - inv_c * sum_dxhat -
                                                       xhat[i * c + j] * inv_c * sum_dxhat_xhat);
                    }
                }
            }
        });
}

Tensor gelu(const Tensor& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_value(x.data()[i]);
    return make_op_result(x.shape(), std::move(out), {x}, [](TensorNode& self) {
        auto& xp = *self.parents[0];
        if (!xp.requires_grad) return;
        auto& gx = xp.grad_buffer();
        for (std::size_t i = 0; i < gx.size(); ++i)
            gx[i] += self.grad[i] * gelu_derivative(xp.data[i]);
    });
}

// Reductions ----------------------------------------------------------------

Tensor mean_axis(const Tensor& x, std::size_t axis) {
    require(axis < x.rank(), "mean_axis: axis " + std::to_string(axis) + " out of range for " +
                                 shape_str(x.shape()));
    const Shape& s = x.shape();
    Shape out_shape;
    for (std::size_t i = 0; i < s.size(); ++i)
        if (i != axis) out_shape.push_back(s[i]);
    if (out_shape.empty()) out_shape = {1};

    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t len = s[axis];

    std::vector<double> out(outer * inner, 0.0);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t k = 0; k < len; ++k)
            for (std::size_t i = 0; i < inner; ++i)
                out[o * inner + i] += x.data()[(o * len + k) * inner + i];
    for (double& v : out) v /= static_cast<double>(len);

    return make_op_result(std::move(out_shape), std::move(out), {x},
                          [outer, inner, len](TensorNode& self) {
                              auto& xp = *self.parents[0];
                              if (!xp.requires_grad) return;
                              auto& gx = xp.grad_buffer();
                              const double inv = 1.0 / static_cast<double>(len);
                              for (std::size_t o = 0; o < outer; ++o)
                                  for (std::size_t k = 0; k < len; ++k)
                                      for (std::size_t i = 0; i < inner; ++i)
                                          gx[(o * len + k) * inner + i] +=
                                              self.grad[o * inner + i] * inv;
                          });
}

Tensor sum_all(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    return make_op_result({1}, {s}, {x}, [](TensorNode& self) {
        auto& xp = *self.parents[0];
        if (!xp.requires_grad) return;
        auto& gx = xp.grad_buffer();
        for (double& g : gx) g += self.grad[0];
    });
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
    require_rank2(table, "embedding_lookup");
    require(!ids.empty(), "embedding_lookup: empty id sequence");
    const std::size_t vocab = table.shape()[0], d = table.shape()[1];
    for (int id : ids)
        if (id < 0 || static_cast<std::size_t>(id) >= vocab)
            throw std::invalid_argument("embedding_lookup: unknown token id " + std::to_string(id) +
                                        " (vocabulary size " + std::to_string(vocab) + ")");
    std::vector<double> out(ids.size() * d);
    for (std::size_t t = 0; t < ids.size(); ++t)
        for (std::size_t j = 0; j < d; ++j)
            out[t * d + j] = table.data()[static_cast<std::size_t>(ids[t]) * d + j];
    return make_op_result({ids.size(), d}, std::move(out), {table}, [ids, d](TensorNode& self) {
        auto& tp = *self.parents[0];
        if (!tp.requires_grad) return;
        auto& gt = tp.grad_buffer();
        for (std::size_t t = 0; t < ids.size(); ++t)
            for (std::size_t j = 0; j < d; ++j)
                gt[static_cast<std::size_t>(ids[t]) * d + j] += self.grad[t * d + j];
    });
}

Tensor cross_entropy(const Tensor& logits, std::size_t target) {
    require(logits.rank() == 1 || (logits.rank() == 2 && logits.shape()[0] == 1),
            "cross_entropy: logits must be a vector, got " + shape_str(logits.shape()));
    const std::size_t k = logits.size();
    require(target < k, "cross_entropy: target " + std::to_string(target) +
                            " out of range for " + std::to_string(k) + " classes");
    double m = logits.data()[0];
    for (double v : logits.data()) m = std::max(m, v);
    double denom = 0.0;
    std::vector<double> probs(k);
    for (std::size_t j = 0; j < k; ++j) {
        probs[j] = std::exp(logits.data()[j] - m);
        denom += probs[j];
    }
    for (double& p : probs) p /= denom;
    const double loss = m + std::log(denom) - logits.data()[target];
    return make_op_result({1}, {loss}, {logits},
                          [probs = std::move(probs), target](TensorNode& self) {
                              auto& lp = *self.parents[0];
                              if (!lp.requires_grad) return;
                              auto& gl = lp.grad_buffer();
                              for (std::size_t j = 0; j < gl.size(); ++j) {
                                  const double ind = (j == target) ? 1.0 : 0.0;
                                  gl[j] += self.grad[0] * (probs[j] - ind);
                              }
                          });
}

// Aggregation ---------------------------------------------------------------

Tensor weighted_sum(const std::vector<Tensor>& items, const Tensor& weights, bool require_simplex) {
    require(!items.empty(), "weighted_sum: empty item list");
    require(weights.rank() == 1, "weighted_sum: weights must be rank-1, got " +
                                     shape_str(weights.shape()));
    require(weights.shape()[0] == items.size(),
            "weighted_sum: " + std::to_string(items.size()) + " items but " +
                std::to_string(weights.shape()[0]) + " weights");
    const Shape item_shape = items[0].shape();
    for (const auto& it : items)
        require(it.shape() == item_shape, "weighted_sum: item shape mismatch " +
                                              shape_str(item_shape) + " vs " + shape_str(it.shape()));
    if (require_simplex) {
        double s = 0.0;
        for (double w : weights.data()) s += w;
        if (std::abs(s - 1.0) > 1e-10)
            throw std::invalid_argument("weighted_sum: weights sum to " + std::to_string(s) +
                                        ", expected 1 within 1e-10");
    }

    const std::size_t n = items.size();
    // Canonical addend order: weight descending, ties by lexicographic
    // comparison of the item values. Addition is then performed over a fixed
    // pairwise tree, so any permutation of the inputs reproduces the exact
    // same sequence of floating-point operations.
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        const double wa = weights.data()[a], wb = weights.data()[b];
        if (wa != wb) return wa > wb;
        return std::lexicographical_compare(items[a].data().begin(), items[a].data().end(),
                                            items[b].data().begin(), items[b].data().end());
    });

    const std::size_t numel = shape_numel(item_shape);
    std::vector<std::vector<double>> terms(n, std::vector<double>(numel));
    for (std::size_t p = 0; p < n; ++p) {
        const double w = weights.data()[idx[p]];
        const auto& src = items[idx[p]].data();
        for (std::size_t i = 0; i < numel; ++i) terms[p][i] = w * src[i];
    }

    std::function<std::vector<double>(std::size_t, std::size_t)> reduce =
        [&](std::size_t lo, std::size_t hi) -> std::vector<double> {
        if (hi - lo == 1) return terms[lo];
        const std::size_t mid = lo + (hi - lo) / 2;
        std::vector<double> left = reduce(lo, mid);
        const std::vector<double> right = reduce(mid, hi);
        for (std::size_t i = 0; i < numel; ++i) left[i] += right[i];
        return left;
    };
    std::vector<double> out = reduce(0, n);

    std::vector<Tensor> parents = items;
    parents.push_back(weights);
    return make_op_result(item_shape, std::move(out), std::move(parents), [n](TensorNode& self) {
        auto& wp = *self.parents[n];
        for (std::size_t i = 0; i < n; ++i) {
            auto& ip = *self.parents[i];
            const double w = wp.data[i];
            if (ip.requires_grad) {
                auto& gi = ip.grad_buffer();
                for (std::size_t j = 0; j < gi.size(); ++j) gi[j] += w * self.grad[j];
            }
            if (wp.requires_grad) {
                double s = 0.0;
                for (std::size_t j = 0; j < ip.data.size(); ++j) s += self.grad[j] * ip.data[j];
                wp.grad_buffer()[i] += s;
            }
        }
    });
}

Tensor mlp2_forward(const Tensor& x, const Mlp2Params& params, Activation hidden_activation) {
    Tensor h = add_bias(matmul(x, params.w1), params.b1);
    if (hidden_activation == Activation::kGelu) h = gelu(h);
    return add_bias(matmul(h, params.w2), params.b2);
}

}  // namespace miavlm
