#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace latlab::ad {

// Reverse-mode tape node. value is always materialized; grad is allocated
// lazily on first touch during backward. Graphs are acyclic by construction
// (ops only ever point at existing nodes).
struct Node {
    std::vector<std::size_t> shape;
    std::vector<double> value;
    std::vector<double> grad;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn; // scatter node.grad into parents
    bool requires_grad = false;

    std::size_t numel() const {
        std::size_t n = 1;
        for (std::size_t s : shape) n *= s;
        return n;
    }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

struct Tensor {
    std::shared_ptr<Node> node;

    const std::vector<std::size_t>& shape() const { return node->shape; }
    std::size_t numel() const { return node->numel(); }
    std::vector<double>& value() { return node->value; }
    const std::vector<double>& value() const { return node->value; }
    std::vector<double>& grad() { return node->grad; }
    bool defined() const { return node != nullptr; }

    // Same values, no history; gradients stop here.
    Tensor detach() const;
};

Tensor constant(std::vector<std::size_t> shape, std::vector<double> data);
Tensor param(std::vector<std::size_t> shape, std::vector<double> data);
Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);

// Elementwise; b may also be a strict suffix shape of a (broadcast over the
// leading dimensions, e.g. bias rows).
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

// Last-dim linear map: (..., k) x (k, n) -> (..., n).
Tensor matmul(const Tensor& a, const Tensor& b);
// Batched matmul: (g, m, k) x (g, k, n) -> (g, m, n).
Tensor bmm(const Tensor& a, const Tensor& b);
Tensor transpose_last2(const Tensor& a);

// (B, T, nh*hd) <-> (B*nh, T, hd)
Tensor split_heads(const Tensor& a, std::size_t heads);
Tensor merge_heads(const Tensor& a, std::size_t heads);

Tensor gelu(const Tensor& a);
Tensor layernorm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor softmax_lastdim(const Tensor& a);

// Token-axis (axis 1 of (B, T, D)) concatenation / slicing / gathering.
Tensor concat_tokens(const Tensor& a, const Tensor& b);
Tensor slice_tokens(const Tensor& a, std::size_t start, std::size_t len);
Tensor select_tokens(const Tensor& a, const std::vector<std::size_t>& indices);
// Copy of a with the listed token positions overwritten by the (broadcast)
// replacement vector; grads reach a only at untouched positions.
Tensor replace_tokens(const Tensor& a, const Tensor& replacement,
                      const std::vector<std::size_t>& indices);

// (T, D) parameter tiled to (B, T, D); grads sum over the batch.
Tensor tile_batch(const Tensor& a, std::size_t batch);

struct RopePos {
    bool active = false; // inactive tokens pass through unrotated
    double row = 0.0;
    double col = 0.0;
};

// Planar 2D rotary embedding on the last dim (must be divisible by 4): the
// first half of the pairs rotates with the row coordinate, the second half
// with the column coordinate. Norm-preserving per token.
Tensor rope2d(const Tensor& a, const std::vector<RopePos>& positions);

// Mean of squared differences over every element; scalar output.
Tensor mse(const Tensor& a, const Tensor& target);
Tensor mean_all(const Tensor& a);

// Reverse pass from a scalar loss. Interior grads are reset per call;
// leaf (parameter) grads accumulate across calls.
void backward(const Tensor& loss);

} // namespace latlab::ad
