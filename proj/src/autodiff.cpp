// SPDX-License-Identifier: Apache-2.0
#include "tyler/autodiff.hpp"

#include <cmath>

#include "tyler/error.hpp"

namespace tyler::ad {

std::size_t ParameterSet::add(std::string name, Matrix init) {
    if (index_.contains(name)) throw DomainError("duplicate parameter name: " + name);
    std::size_t i = values_.size();
    index_.emplace(name, i);
    names_.push_back(std::move(name));
    values_.push_back(std::move(init));
    return i;
}

std::size_t ParameterSet::index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter: " + name);
    return it->second;
}

std::size_t ParameterSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
    return n;
}

Gradients::Gradients(const ParameterSet& params) {
    blocks_.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& v = params.value(i);
        blocks_.push_back(Matrix::Zero(v.rows(), v.cols()));
    }
}

Gradients& Gradients::operator+=(const Gradients& other) {
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i] += other.blocks_[i];
    return *this;
}

void Gradients::scale(double c) {
    for (auto& b : blocks_) b *= c;
}

void Gradients::set_zero() {
    for (auto& b : blocks_) b.setZero();
}

void Gradients::check_finite(const ParameterSet& params) const {
    for (std::size_t i = 0; i < blocks_.size(); ++i)
        if (!blocks_[i].allFinite())
            throw NumericError("non-finite gradient for tensor " + params.name(i));
}

Var Tape::push(Node node) {
    nodes_.push_back(std::move(node));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Matrix& Tape::grad_of(std::uint32_t id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) {
        const Matrix& v = val(id);
        n.grad = Matrix::Zero(v.rows(), v.cols());
    }
    return n.grad;
}

const Matrix& Tape::value(Var v) const { return val(v.id); }

Var Tape::constant(Matrix value) {
    Node n;
    n.op = Op::Constant;
    n.value = std::move(value);
    return push(std::move(n));
}

Var Tape::constant_vector(std::span<const double> values) {
    Matrix m(static_cast<Eigen::Index>(values.size()), 1);
    for (std::size_t i = 0; i < values.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = values[i];
    return constant(std::move(m));
}

Var Tape::param(std::size_t index) {
    auto it = param_nodes_.find(index);
    if (it != param_nodes_.end()) return Var{it->second};
    Node n;
    n.op = Op::Param;
    n.needs_grad = true;
    n.index = static_cast<std::int64_t>(index);
    n.ref = &params_->value(index);
    Var v = push(std::move(n));
    param_nodes_.emplace(index, v.id);
    return v;
}

namespace {

void require_shape(bool ok, const char* op, const Matrix& a, const Matrix& b) {
    if (!ok)
        throw DomainError(std::string(op) + ": incompatible shapes " + std::to_string(a.rows()) +
                          "x" + std::to_string(a.cols()) + " and " + std::to_string(b.rows()) +
                          "x" + std::to_string(b.cols()));
}

}  // namespace

Var Tape::matmul(Var a, Var b) {
    require_shape(val(a.id).cols() == val(b.id).rows(), "matmul", val(a.id), val(b.id));
    Node n;
    n.op = Op::MatMul;
    n.a = a.id;
    n.b = b.id;
    n.needs_grad = needs(a.id) || needs(b.id);
    n.value = val(a.id) * val(b.id);
    return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
    require_shape(val(a.id).rows() == val(b.id).rows() && val(a.id).cols() == val(b.id).cols(),
                  "add", val(a.id), val(b.id));
    Node n;
    n.op = Op::Add;
    n.a = a.id;
    n.b = b.id;
    n.needs_grad = needs(a.id) || needs(b.id);
    n.value = val(a.id) + val(b.id);
    return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
    require_shape(val(a.id).rows() == val(b.id).rows() && val(a.id).cols() == val(b.id).cols(),
                  "sub", val(a.id), val(b.id));
    Node n;
    n.op = Op::Sub;
    n.a = a.id;
    n.b = b.id;
    n.needs_grad = needs(a.id) || needs(b.id);
    n.value = val(a.id) - val(b.id);
    return push(std::move(n));
}

Var Tape::scale(Var a, double c) {
    Node n;
    n.op = Op::ScaleConst;
    n.a = a.id;
    n.k = c;
    n.needs_grad = needs(a.id);
    n.value = val(a.id) * c;
    return push(std::move(n));
}

Var Tape::scale(Var a, Var scalar) {
    Node n;
    n.op = Op::ScaleVar;
    n.a = a.id;
    n.b = scalar.id;
    n.needs_grad = needs(a.id) || needs(scalar.id);
    n.value = val(a.id) * val(scalar.id)(0, 0);
    return push(std::move(n));
}

Var Tape::relu(Var a) {
    Node n;
    n.op = Op::Relu;
    n.a = a.id;
    n.needs_grad = needs(a.id);
    n.value = val(a.id).cwiseMax(0.0);
    return push(std::move(n));
}

Var Tape::sigmoid(Var a) {
    Node n;
    n.op = Op::Sigmoid;
    n.a = a.id;
    n.needs_grad = needs(a.id);
    n.value = val(a.id).unaryExpr([](double x) {
        // split form avoids exp overflow for large |x|
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        double e = std::exp(x);
        return e / (1.0 + e);
    });
    return push(std::move(n));
}

Var Tape::concat(std::span<const Var> parts) {
    Node n;
    n.op = Op::Concat;
    Eigen::Index rows = 0;
    for (Var p : parts) {
        rows += val(p.id).rows();
        n.many.push_back(p.id);
        n.needs_grad = n.needs_grad || needs(p.id);
    }
    n.value.resize(rows, 1);
    Eigen::Index off = 0;
    for (Var p : parts) {
        const Matrix& v = val(p.id);
        n.value.block(off, 0, v.rows(), 1) = v;
        off += v.rows();
    }
    return push(std::move(n));
}

Var Tape::sum(std::span<const Var> parts) {
    if (parts.empty()) throw Error("sum of an empty list");
    Node n;
    n.op = Op::Sum;
    n.value = val(parts[0].id);
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i > 0) n.value += val(parts[i].id);
        n.many.push_back(parts[i].id);
        n.needs_grad = n.needs_grad || needs(parts[i].id);
    }
    return push(std::move(n));
}

Var Tape::mean(std::span<const Var> parts) {
    if (parts.empty()) throw Error("mean of an empty list");
    Node n;
    n.op = Op::Mean;
    n.value = val(parts[0].id);
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i > 0) n.value += val(parts[i].id);
        n.many.push_back(parts[i].id);
        n.needs_grad = n.needs_grad || needs(parts[i].id);
    }
    n.value /= static_cast<double>(parts.size());
    return push(std::move(n));
}

Var Tape::layer_norm(Var x, Var gain, Var bias, double eps) {
    Node n;
    n.op = Op::LayerNorm;
    n.a = x.id;
    n.b = gain.id;
    n.c = bias.id;
    n.k = eps;
    n.needs_grad = needs(x.id) || needs(gain.id) || needs(bias.id);
    const Matrix& xv = val(x.id);
    const double mu = xv.mean();
    const double var = (xv.array() - mu).square().mean();
    const double inv_std = 1.0 / std::sqrt(var + eps);
    n.aux = (xv.array() - mu) * inv_std;
    n.k2 = inv_std;
    n.value = val(gain.id).cwiseProduct(n.aux) + val(bias.id);
    return push(std::move(n));
}

Var Tape::column(Var m, Eigen::Index j) {
    Node n;
    n.op = Op::Column;
    n.a = m.id;
    n.index = j;
    n.needs_grad = needs(m.id);
    n.value = val(m.id).col(j);
    return push(std::move(n));
}

Var Tape::basis_combine(Var coeffs, Eigen::Index row, std::span<const Var> bases) {
    if (bases.empty()) throw Error("basis_combine needs at least one basis");
    Node n;
    n.op = Op::BasisCombine;
    n.a = coeffs.id;
    n.index = row;
    n.needs_grad = needs(coeffs.id);
    const Matrix& c = val(coeffs.id);
    n.value = Matrix::Zero(val(bases[0].id).rows(), val(bases[0].id).cols());
    for (std::size_t b = 0; b < bases.size(); ++b) {
        n.value += c(row, static_cast<Eigen::Index>(b)) * val(bases[b].id);
        n.many.push_back(bases[b].id);
        n.needs_grad = n.needs_grad || needs(bases[b].id);
    }
    return push(std::move(n));
}

void Tape::backward(Var root, Gradients& grads, double seed) {
    if (val(root.id).size() != 1) throw DomainError("backward needs a scalar root");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    grad_of(root.id)(0, 0) = seed;

    for (std::uint32_t id = root.id + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (!n.needs_grad || n.grad.size() == 0) continue;
        const Matrix g = n.grad;
        switch (n.op) {
            case Op::Constant:
                break;
            case Op::Param:
                grads[static_cast<std::size_t>(n.index)] += g;
                break;
            case Op::MatMul:
                if (needs(n.a)) grad_of(n.a).noalias() += g * val(n.b).transpose();
                if (needs(n.b)) grad_of(n.b).noalias() += val(n.a).transpose() * g;
                break;
            case Op::Add:
                if (needs(n.a)) grad_of(n.a) += g;
                if (needs(n.b)) grad_of(n.b) += g;
                break;
            case Op::Sub:
                if (needs(n.a)) grad_of(n.a) += g;
                if (needs(n.b)) grad_of(n.b) -= g;
                break;
            case Op::ScaleConst:
                grad_of(n.a) += n.k * g;
                break;
            case Op::ScaleVar:
                if (needs(n.a)) grad_of(n.a) += val(n.b)(0, 0) * g;
                if (needs(n.b)) grad_of(n.b)(0, 0) += g.cwiseProduct(val(n.a)).sum();
                break;
            case Op::Relu:
                grad_of(n.a) += (val(n.a).array() > 0.0).select(g.array(), 0.0).matrix();
                break;
            case Op::Sigmoid:
                grad_of(n.a) += (g.array() * n.value.array() * (1.0 - n.value.array())).matrix();
                break;
            case Op::Concat: {
                Eigen::Index off = 0;
                for (std::uint32_t p : n.many) {
                    Eigen::Index rows = val(p).rows();
                    if (needs(p)) grad_of(p) += g.block(off, 0, rows, 1);
                    off += rows;
                }
                break;
            }
            case Op::Sum:
                for (std::uint32_t p : n.many)
                    if (needs(p)) grad_of(p) += g;
                break;
            case Op::Mean: {
                const double inv = 1.0 / static_cast<double>(n.many.size());
                for (std::uint32_t p : n.many)
                    if (needs(p)) grad_of(p) += inv * g;
                break;
            }
            case Op::LayerNorm: {
                const Matrix& xhat = n.aux;
                const double inv_std = n.k2;
                if (needs(n.b)) grad_of(n.b) += g.cwiseProduct(xhat);
                if (needs(n.c)) grad_of(n.c) += g;
                if (needs(n.a)) {
                    Matrix dxhat = g.cwiseProduct(val(n.b));
                    const double m1 = dxhat.mean();
                    const double m2 = dxhat.cwiseProduct(xhat).mean();
                    grad_of(n.a) +=
                        inv_std * (dxhat.array() - m1 - xhat.array() * m2).matrix();
                }
                break;
            }
            case Op::Column:
                grad_of(n.a).col(n.index) += g;
                break;
            case Op::BasisCombine: {
                const Matrix& c = val(n.a);
                for (std::size_t b = 0; b < n.many.size(); ++b) {
                    std::uint32_t p = n.many[b];
                    auto bi = static_cast<Eigen::Index>(b);
                    if (needs(p)) grad_of(p) += c(n.index, bi) * g;
                    if (needs(n.a)) grad_of(n.a)(n.index, bi) += g.cwiseProduct(val(p)).sum();
                }
                break;
            }
        }
    }
}

}  // namespace tyler::ad
