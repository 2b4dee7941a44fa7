#pragma once

#include <string>
#include <vector>

#include "contamlab/tape.hpp"

namespace contamlab {

enum class OpKind {
    matmul,
    add,
    mul,
    gelu,
    tanh,
    softmax,
    layer_norm,
    embedding,
    concat,
    slice,
    transpose,
    cross_entropy,
    dropout,
};

inline OpKind parse_op_kind(const std::string& name) {
    if (name == "matmul") return OpKind::matmul;
    if (name == "add") return OpKind::add;
    if (name == "mul") return OpKind::mul;
    if (name == "gelu") return OpKind::gelu;
    if (name == "tanh") return OpKind::tanh;
    if (name == "softmax") return OpKind::softmax;
    if (name == "layer_norm") return OpKind::layer_norm;
    if (name == "embedding") return OpKind::embedding;
    if (name == "concat") return OpKind::concat;
    if (name == "slice") return OpKind::slice;
    if (name == "transpose") return OpKind::transpose;
    if (name == "cross_entropy") return OpKind::cross_entropy;
    if (name == "dropout") return OpKind::dropout;
    throw ValidationError("unknown op kind '" + name + "'");
}

// Attributes for the uniform primitive dispatch surface.
struct OpAttrs {
    double eps = 1e-5;              // layer_norm
    double rate = 0.1;              // dropout
    bool train_mode = true;         // dropout
    uint64_t seed = 0;              // dropout
    int64_t axis = -1;              // concat
    int64_t start = 0, len = 0;     // slice
    int64_t ignore_index = -1;      // cross_entropy
    std::vector<int64_t> targets;   // cross_entropy
    std::vector<int32_t> ids;       // embedding
    Shape ids_shape;                // embedding
};

// Single-entry primitive execution; shape checks and taping happen inside the
// per-op implementations.
template <class T>
Var forward_primitive(Tape<T>& tape, OpKind kind, const std::vector<Var>& inputs,
                      const OpAttrs& attrs = {}) {
    auto need = [&](size_t n) {
        if (inputs.size() != n)
            throw ValidationError("primitive expects " + std::to_string(n) + " inputs, got " +
                                  std::to_string(inputs.size()));
    };
    switch (kind) {
        case OpKind::matmul: need(2); return tape.matmul(inputs[0], inputs[1]);
        case OpKind::add: need(2); return tape.add(inputs[0], inputs[1]);
        case OpKind::mul: need(2); return tape.mul(inputs[0], inputs[1]);
        case OpKind::gelu: need(1); return tape.gelu(inputs[0]);
        case OpKind::tanh: need(1); return tape.tanh_op(inputs[0]);
        case OpKind::softmax: need(1); return tape.softmax(inputs[0]);
        case OpKind::layer_norm:
            need(3);
            return tape.layer_norm(inputs[0], inputs[1], inputs[2], attrs.eps);
        case OpKind::embedding: need(1); return tape.embedding(inputs[0], attrs.ids, attrs.ids_shape);
        case OpKind::concat: return tape.concat(inputs, attrs.axis);
        case OpKind::slice: need(1); return tape.slice(inputs[0], attrs.axis, attrs.start, attrs.len);
        case OpKind::transpose: need(1); return tape.transpose(inputs[0]);
        case OpKind::cross_entropy:
            need(1);
            return tape.cross_entropy(inputs[0], attrs.targets, attrs.ignore_index);
        case OpKind::dropout:
            need(1);
            return tape.dropout(inputs[0], attrs.rate, attrs.train_mode, attrs.seed);
    }
    throw ValidationError("unknown op kind");
}

// Max relative error between analytic gradients and central finite
// differences. f builds a scalar loss from leaves it registers on the tape;
// the leaves' values come from xs.
inline double finite_difference_check(
    const std::function<Var(Tape<double>&, const std::vector<Var>&)>& f,
    std::vector<Tensor<double>> xs, double eps) {
    // Analytic pass.
    std::vector<Tensor<double>> analytic;
    {
        Tape<double> tape;
        std::vector<Var> leaves;
        for (auto& x : xs) leaves.push_back(tape.leaf(x, /*trainable=*/true));
        Var loss = f(tape, leaves);
        tape.backward(loss);
        for (Var v : leaves) analytic.push_back(tape.grad(v));
    }
    auto eval = [&](const std::vector<Tensor<double>>& pts) {
        Tape<double> tape;
        std::vector<Var> leaves;
        for (auto& x : pts) leaves.push_back(tape.leaf(x, false));
        return tape.value(f(tape, leaves)).item();
    };
    double max_err = 0;
    for (size_t li = 0; li < xs.size(); ++li) {
        for (int64_t i = 0; i < xs[li].numel(); ++i) {
            std::vector<Tensor<double>> plus = xs, minus = xs;
            plus[li][i] += eps;
            minus[li][i] -= eps;
            double numeric = (eval(plus) - eval(minus)) / (2 * eps);
            if (!std::isfinite(numeric)) throw NumericError("non-finite finite-difference value");
            double a = analytic[li][i];
            double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

}  // namespace contamlab
