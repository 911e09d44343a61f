#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace miavlm {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

namespace detail {

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    // Reads this node's grad, accumulates into parents' grad buffers.
    std::function<void(TensorNode&)> backprop;

    std::size_t size() const { return data.size(); }
    bool is_leaf() const { return parents.empty(); }
    std::vector<double>& grad_buffer();
    void accumulate_grad(const std::vector<double>& g);
};

}  // namespace detail

/// Dense row-major tensor of 64-bit floats with optional reverse-mode
/// gradient tracking. Copies are shallow handles onto a shared node;
/// graphs are built by the free-function ops below and walked by
/// backward(). Values are immutable once an op has consumed them
/// (mutating data() between forward and backward invalidates the tape;
/// the optimizer mutates only between steps).
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t size() const;

    const std::vector<double>& data() const;
    std::vector<double>& data();

    double value() const;  // scalar tensors only
    double at(std::size_t i) const;
    double at(std::size_t r, std::size_t c) const;

    bool requires_grad() const;
    bool has_grad() const;
    const std::vector<double>& grad() const;
    void zero_grad();

    /// Reverse pass from a scalar root. Leaf gradients accumulate across
    /// calls; interior gradients are reset per pass.
    void backward();

    /// Stable identity of the underlying storage (for registries).
    const void* id() const { return node_.get(); }

    std::shared_ptr<detail::TensorNode> node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::TensorNode> node_;

    friend Tensor make_op_result(Shape shape, std::vector<double> values,
                                 std::vector<Tensor> parents,
                                 std::function<void(detail::TensorNode&)> backprop);
};

// ---------------------------------------------------------------------------
// Ops. Every op validates shapes and throws std::invalid_argument naming the
// offending shapes. All reductions run in a fixed (or canonical) order so
// results are reproducible bit-for-bit.
// ---------------------------------------------------------------------------

enum class Activation { kLinear, kGelu };

struct Mlp2Params {
    Tensor w1, b1, w2, b2;
};

Tensor add(const Tensor& a, const Tensor& b);
Tensor add_bias(const Tensor& x, const Tensor& bias);  // [r x c] + [c]
Tensor mul(const Tensor& a, const Tensor& b);
Tensor mul_rowwise(const Tensor& x, const Tensor& v);  // [r x c] * [c], per row
Tensor scale(const Tensor& x, double c);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape new_shape);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);

/// Row-wise softmax, max-shifted. The denominator is summed in a canonical
/// (value-sorted) order, so a permutation of the columns permutes the output
/// bit-exactly. NaN input is a domain error.
Tensor softmax_rows(const Tensor& x);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor gelu(const Tensor& x);
Tensor mean_axis(const Tensor& x, std::size_t axis);
Tensor sum_all(const Tensor& x);
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);
Tensor cross_entropy(const Tensor& logits, std::size_t target);

/// sum_i weights[i] * items[i], accumulated with pairwise summation over a
/// canonical addend order (weight descending, ties broken by lexicographic
/// comparison of the item values). The result is therefore independent of
/// the order items arrive in, even under floating-point non-associativity.
Tensor weighted_sum(const std::vector<Tensor>& items, const Tensor& weights,
                    bool require_simplex = true);

Tensor mlp2_forward(const Tensor& x, const Mlp2Params& params, Activation hidden_activation);

}  // namespace miavlm
