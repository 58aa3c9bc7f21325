// SPDX-License-Identifier: Apache-2.0
#pragma once

// Minimal reverse-mode differentiation over dense Eigen blocks. Vectors are
// column matrices. A Tape records one forward evaluation; backward() walks it
// in reverse creation order, which is a valid topological order.

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace tyler::ad {

using Matrix = Eigen::MatrixXd;

/// Named learnable tensors, in registration order.
class ParameterSet {
public:
    std::size_t add(std::string name, Matrix init);

    std::size_t size() const noexcept { return values_.size(); }
    const std::string& name(std::size_t i) const { return names_.at(i); }
    Matrix& value(std::size_t i) { return values_.at(i); }
    const Matrix& value(std::size_t i) const { return values_.at(i); }
    std::size_t index_of(const std::string& name) const;
    std::size_t scalar_count() const;

private:
    std::vector<std::string> names_;
    std::vector<Matrix> values_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// One gradient block per parameter, shaped like it.
class Gradients {
public:
    Gradients() = default;
    explicit Gradients(const ParameterSet& params);

    std::size_t size() const noexcept { return blocks_.size(); }
    Matrix& operator[](std::size_t i) { return blocks_[i]; }
    const Matrix& operator[](std::size_t i) const { return blocks_[i]; }

    Gradients& operator+=(const Gradients& other);
    void scale(double c);
    void set_zero();

    /// Throws NumericError naming the first non-finite tensor.
    void check_finite(const ParameterSet& params) const;

private:
    std::vector<Matrix> blocks_;
};

struct Var {
    std::uint32_t id = UINT32_MAX;
};

class Tape {
public:
    explicit Tape(const ParameterSet& params) : params_(&params) {}

    Var constant(Matrix value);
    Var constant_vector(std::span<const double> values);
    /// Leaf bound to a parameter. Repeated calls return the same node.
    Var param(std::size_t index);

    const Matrix& value(Var v) const;
    double scalar(Var v) const { return value(v)(0, 0); }
    std::size_t node_count() const noexcept { return nodes_.size(); }

    Var matmul(Var a, Var b);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var scale(Var a, double c);
    /// Vector times a 1x1 node.
    Var scale(Var a, Var scalar);
    Var relu(Var a);
    Var sigmoid(Var a);
    /// Vertical stack of column vectors.
    Var concat(std::span<const Var> parts);
    Var sum(std::span<const Var> parts);
    Var mean(std::span<const Var> parts);
    /// gain * (x - mean) / sqrt(var + eps) + bias, statistics over all entries.
    Var layer_norm(Var x, Var gain, Var bias, double eps);
    /// Column j of a matrix node, as a column vector.
    Var column(Var m, Eigen::Index j);
    /// sum_b coeffs(row, b) * bases[b].
    Var basis_combine(Var coeffs, Eigen::Index row, std::span<const Var> bases);

    /// Accumulates d(seed * root)/d(param) into `grads`. Root must be 1x1.
    void backward(Var root, Gradients& grads, double seed = 1.0);

private:
    enum class Op : std::uint8_t {
        Constant, Param, MatMul, Add, Sub, ScaleConst, ScaleVar, Relu, Sigmoid,
        Concat, Sum, Mean, LayerNorm, BasisCombine, Column
    };

    struct Node {
        Op op = Op::Constant;
        bool needs_grad = false;
        std::uint32_t a = UINT32_MAX;
        std::uint32_t b = UINT32_MAX;
        std::uint32_t c = UINT32_MAX;
        std::vector<std::uint32_t> many;
        double k = 0.0;
        double k2 = 0.0;
        std::int64_t index = -1;
        Matrix value;
        const Matrix* ref = nullptr;
        Matrix grad;
        Matrix aux;  // normalized input for LayerNorm
    };

    Var push(Node node);
    Matrix& grad_of(std::uint32_t id);
    bool needs(std::uint32_t id) const { return nodes_[id].needs_grad; }
    const Matrix& val(std::uint32_t id) const {
        const Node& n = nodes_[id];
        return n.ref ? *n.ref : n.value;
    }

    const ParameterSet* params_;
    std::vector<Node> nodes_;
    std::unordered_map<std::size_t, std::uint32_t> param_nodes_;
};

}  // namespace tyler::ad
