#pragma once

#include "tagkit/nn/module.hpp"
#include "tagkit/nn/tensor.hpp"

// Shared layers: the GRU cell used by the GGNN and the TagPredictor head
// (dropout -> fully-connected -> sigmoid) used by every model.

namespace tagkit::nn {

// Gated recurrent unit applied row-wise: each row of x/h is an independent
// sample. Weights are stored (in x out) so a row vector maps via x * W.
struct GruCell {
    Tensor w_update, u_update, b_update;
    Tensor w_reset, u_reset, b_reset;
    Tensor w_cand, u_cand, b_cand;

    static GruCell create(ParameterStore& store, const std::string& prefix, std::size_t input_dim,
                          std::size_t hidden_dim, Rng& rng) {
        GruCell cell;
        cell.w_update = store.create(prefix + ".w_update", input_dim, hidden_dim, rng).tensor;
        cell.u_update = store.create(prefix + ".u_update", hidden_dim, hidden_dim, rng).tensor;
        cell.b_update = store.create_zeros(prefix + ".b_update", 1, hidden_dim).tensor;
        cell.w_reset = store.create(prefix + ".w_reset", input_dim, hidden_dim, rng).tensor;
        cell.u_reset = store.create(prefix + ".u_reset", hidden_dim, hidden_dim, rng).tensor;
        cell.b_reset = store.create_zeros(prefix + ".b_reset", 1, hidden_dim).tensor;
        cell.w_cand = store.create(prefix + ".w_cand", input_dim, hidden_dim, rng).tensor;
        cell.u_cand = store.create(prefix + ".u_cand", hidden_dim, hidden_dim, rng).tensor;
        cell.b_cand = store.create_zeros(prefix + ".b_cand", 1, hidden_dim).tensor;
        return cell;
    }

    // z = sigmoid(xW_z + hU_z + b_z); r = sigmoid(xW_r + hU_r + b_r);
    // cand = tanh(xW_h + (r*h)U_h + b_h); out = (1-z)*h + z*cand
    Tensor forward(const Tensor& x, const Tensor& h) const {
        Tensor z = sigmoid(add_rowvec(add(matmul(x, w_update), matmul(h, u_update)), b_update));
        Tensor r = sigmoid(add_rowvec(add(matmul(x, w_reset), matmul(h, u_reset)), b_reset));
        Tensor cand = tanh(add_rowvec(add(matmul(x, w_cand), matmul(mul(r, h), u_cand)), b_cand));
        return add(mul(affine(z, -1.0, 1.0), h), mul(z, cand));
    }
};

// Per-tag prediction head. Weight is (input_dim x tag_count); output values
// are independent probabilities in (0,1) in tag-vocabulary order.
struct TagPredictor {
    double dropout_rate = 0.2;
    Tensor weight, bias;

    static TagPredictor create(ParameterStore& store, const std::string& prefix,
                               std::size_t input_dim, std::size_t tag_count, double dropout_rate,
                               Rng& rng) {
        TagPredictor head;
        head.dropout_rate = dropout_rate;
        head.weight = store.create(prefix + ".weight", input_dim, tag_count, rng).tensor;
        head.bias = store.create_zeros(prefix + ".bias", 1, tag_count).tensor;
        return head;
    }

    Tensor forward(const Tensor& input, bool train, Rng& rng) const {
        Tensor dropped = dropout(input, dropout_rate, train, rng);
        return sigmoid(add_rowvec(matmul(dropped, weight), bias));
    }
};

}  // namespace tagkit::nn
