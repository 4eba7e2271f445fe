#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "clinnum/rng.hpp"
#include "clinnum/tensor.hpp"

namespace clinnum {

// Handle to a node on a Tape. Valid only for the tape that created it.
struct Var {
    int32_t idx = -1;
    bool valid() const { return idx >= 0; }
};

// Reverse-mode autodiff over Tensor-valued nodes. Ops record a backward
// closure at creation; backward() walks nodes in reverse creation order,
// which is a valid topological order by construction.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaves. Gradients are accumulated for leaves too; constants simply
    // have no backward closure feeding anything.
    Var leaf(const Tensor& value);
    Var constant(const Tensor& value) { return leaf(value); }

    const Tensor& value(Var v) const { return nodes_[v.idx].value; }
    // Gradient of the last backward() target w.r.t. v; zeros if v is
    // unreachable from the target.
    Tensor grad(Var v) const;

    // --- differentiable ops -------------------------------------------------
    Var matmul(Var a, Var b);
    Var matmul_nt(Var a, Var b);  // A*B^T
    Var matmul_tn(Var a, Var b);  // A^T*B
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);  // elementwise
    Var scale(Var a, double c);
    Var add_rowvec(Var a, Var bias);
    Var scale_rows(Var a, std::vector<double> coeffs);  // coeffs constant
    Var row_softmax(Var a);
    Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
    Var gelu(Var a);
    Var softplus(Var a);
    Var l2_normalize(Var a, int axis);
    Var transpose(Var a);
    Var gather_rows(Var table, std::vector<int> ids);
    Var select_rows(Var x, std::vector<int> rows) { return gather_rows(x, std::move(rows)); }
    Var exp_scale(Var a, double c);  // exp(c*x) elementwise
    Var mean_all(Var a);

    // Multi-head self-attention core: splits D into n_heads, computes
    // softmax(Q K^T * scale (+ cosim)) V per head and concatenates.
    // `cosim`, when valid, is added identically to every head's scores;
    // with `cosim_post` it is added to the post-softmax probabilities
    // instead. If `probs_out` is non-null it receives the head-averaged
    // post-softmax attention ((L+1)x(L+1)).
    Var attention_core(Var q, Var k, Var v, int n_heads, double scale, Var cosim, bool cosim_post = false,
                       Tensor* probs_out = nullptr);

    // Cross entropy over rows of `logits` (P x V): weighted mean of
    // -log softmax(logits_i)[targets_i], weights normalized to sum 1.
    Var cross_entropy(Var logits, std::vector<int> targets, std::vector<double> weights = {});

    // Mean squared error between pred (P) and constant targets (P).
    Var mse(Var pred, std::vector<double> targets);

    // Mean of (log1p(target) - log1p(pred))^2; requires pred > -1.
    Var logscaled_mse(Var pred, std::vector<double> targets);

    // ------------------------------------------------------------------------

    // Reverse pass from a scalar node. Throws if `loss` is not a scalar.
    void backward(Var loss);

    size_t num_nodes() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;  // empty until touched by backward
        std::function<void()> back;
    };

    Var push(Tensor value, std::function<void()> back = nullptr);
    Tensor& grad_ref(int32_t idx);
    bool has_grad(int32_t idx) const { return nodes_[idx].grad.size() > 0; }

    std::vector<Node> nodes_;
};

// Central-difference gradient verification. `f` evaluates the scalar loss at
// the given parameter values; `analytic` holds the gradients under test, one
// tensor per parameter, same shapes. Checks a random subset of at least
// `min_coords` coordinates (all of them when fewer exist) and returns the
// maximum relative error |a-n| / max(1, |a|+|n|).
double grad_check(const std::function<double(const std::vector<Tensor>&)>& f, std::vector<Tensor> params,
                  const std::vector<Tensor>& analytic, double eps, int min_coords, Rng& rng);

}  // namespace clinnum
