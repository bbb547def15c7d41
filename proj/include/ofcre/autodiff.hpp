#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace ofcre::ad {

// Dense row-major matrix of doubles. rows==1 is used for bias vectors.
struct Tensor {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, 0.0) {}

    double& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
    std::span<double> row(int r) { return {v.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)}; }
    std::span<const double> row(int r) const {
        return {v.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)};
    }
    int size() const { return rows * cols; }
};

// A trainable tensor with a gradient accumulator of the same shape.
struct Param {
    std::string name;
    Tensor value;
    Tensor grad;

    Param() = default;
    Param(std::string n, int r, int c) : name(std::move(n)), value(r, c), grad(r, c) {}

    void zero_grad() { std::fill(grad.v.begin(), grad.v.end(), 0.0); }
    int size() const { return value.size(); }
};

// Handle to a node in a Graph. dim==1 nodes are scalars.
struct Vec {
    int id = -1;
    int dim = 0;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape over double vectors. Nodes are appended during the
// forward pass; backward() walks them in reverse. Params referenced by a
// graph must outlive it. clear() keeps buffers allocated for reuse.
class Graph {
public:
    Vec input(std::span<const double> x);
    Vec constant(double c);
    Vec zeros(int dim);

    // Leaf views over trainable parameters; backward accumulates into grad.
    Vec param_row(Param& p, int row);
    Vec param_bias(Param& p);  // whole param flattened; intended for 1 x n biases

    Vec add(Vec a, Vec b);
    Vec sub(Vec a, Vec b);
    Vec hadamard(Vec a, Vec b);
    Vec scale(Vec a, double c);
    Vec offset(Vec a, std::span<const double> c);
    Vec matvec(Param& w, Vec x);  // (rows x cols) * (cols) -> rows
    Vec tanh_(Vec a);
    Vec mean(std::span<const Vec> xs);
    Vec dot(Vec a, Vec b);
    Vec sum(Vec a);
    Vec euclidean(Vec a, Vec b);  // ||a-b||, zero-distance gradient clamped to 0

    // Scalar-only ops (all operands dim 1).
    Vec softplus(Vec x);                        // log(1 + e^x), overflow-safe
    Vec logsumexp(std::span<const Vec> xs);
    Vec max_of(std::span<const Vec> xs);        // gradient routed to the argmax
    Vec min_of(std::span<const Vec> xs);
    Vec weighted_sum(std::span<const Vec> xs, std::span<const double> ws);

    double value0(Vec v) const;
    std::span<const double> value(Vec v) const;

    void backward(Vec scalar_loss);
    void clear();
    size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        size_t off = 0;
        int dim = 0;
        std::function<void(Graph&)> back;  // empty for constants/inputs
    };

    Vec alloc(int dim);
    double* val(int id) { return vals_.data() + nodes_[static_cast<size_t>(id)].off; }
    const double* val(int id) const { return vals_.data() + nodes_[static_cast<size_t>(id)].off; }
    double* grd(int id) { return grads_.data() + nodes_[static_cast<size_t>(id)].off; }

    std::vector<Node> nodes_;
    std::vector<double> vals_;
    std::vector<double> grads_;
};

}  // namespace ofcre::ad
