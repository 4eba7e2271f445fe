#include "clinnum/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "clinnum/errors.hpp"

namespace clinnum {

Var Tape::push(Tensor value, std::function<void()> back) {
    nodes_.push_back(Node{std::move(value), Tensor{}, std::move(back)});
    return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

Var Tape::leaf(const Tensor& value) { return push(value); }

Tensor& Tape::grad_ref(int32_t idx) {
    Node& n = nodes_[idx];
    if (n.grad.size() == 0) n.grad = Tensor::zeros(n.value.shape());
    return n.grad;
}

Tensor Tape::grad(Var v) const {
    const Node& n = nodes_[v.idx];
    if (n.grad.size() == 0) return Tensor::zeros(n.value.shape());
    return n.grad;
}

Var Tape::matmul(Var a, Var b) {
    Tensor v = ops::matmul(value(a), value(b));
    Var out = push(std::move(v));
    nodes_[out.idx].back = [this, a, b, out] {
        const Tensor& g = nodes_[out.idx].grad;
        grad_ref(a.idx) = ops::add(grad_ref(a.idx), ops::matmul_nt(g, value(b)));
        grad_ref(b.idx) = ops::add(grad_ref(b.idx), ops::matmul_tn(value(a), g));
    };
    return out;
}

Var Tape::matmul_nt(Var a, Var b) {
    Tensor v = ops::matmul_nt(value(a), value(b));
    Var out = push(std::move(v));
    nodes_[out.idx].back = [this, a, b, out] {
        const Tensor& g = nodes_[out.idx].grad;
        grad_ref(a.idx) = ops::add(grad_ref(a.idx), ops::matmul(g, value(b)));
        grad_ref(b.idx) = ops::add(grad_ref(b.idx), ops::matmul_tn(g, value(a)));
    };
    return out;
}

Var Tape::matmul_tn(Var a, Var b) {
    Tensor v = ops::matmul_tn(value(a), value(b));
    Var out = push(std::move(v));
    nodes_[out.idx].back = [this, a, b, out] {
        const Tensor& g = nodes_[out.idx].grad;
        grad_ref(a.idx) = ops::add(grad_ref(a.idx), ops::matmul_nt(value(b), g));
        grad_ref(b.idx) = ops::add(grad_ref(b.idx), ops::matmul(value(a), g));
    };
    return out;
}

Var Tape::add(Var a, Var b) {
    Var out = push(ops::add(value(a), value(b)));
    nodes_[out.idx].back = [this, a, b, out] {
        const Tensor& g = nodes_[out.idx].grad;
        grad_ref(a.idx) = ops::add(grad_ref(a.idx), g);
        grad_ref(b.idx) = ops::add(grad_ref(b.idx), g);
    };
    return out;
}

Var Tape::sub(Var a, Var b) {
    Var out = push(ops::sub(value(a), value(b)));
    nodes_[out.idx].back = [this, a, b, out] {
        const Tensor& g = nodes_[out.idx].grad;
        grad_ref(a.idx) = ops::add(grad_ref(a.idx), g);
        grad_ref(b.idx) = ops::sub(grad_ref(b.idx), g);
    };
    return out;
}

Var Tape::mul(Var a, Var b) {
    Var out = push(ops::mul(value(a), value(b)));
    nodes_[out.idx].back = [this, a, b, out] {
        const Tensor& g = nodes_[out.idx].grad;
        grad_ref(a.idx) = ops::add(grad_ref(a.idx), ops::mul(g, value(b)));
        grad_ref(b.idx) = ops::add(grad_ref(b.idx), ops::mul(g, value(a)));
    };
    return out;
}

Var Tape::scale(Var a, double c) {
    Var out = push(ops::scale(value(a), c));
    nodes_[out.idx].back = [this, a, c, out] {
        grad_ref(a.idx) = ops::add(grad_ref(a.idx), ops::scale(nodes_[out.idx].grad, c));
    };
    return out;
}

Var Tape::add_rowvec(Var a, Var bias) {
    Var out = push(ops::add_rowvec(value(a), value(bias)));
    nodes_[out.idx].back = [this, a, bias, out] {
        const Tensor& g = nodes_[out.idx].grad;
        grad_ref(a.idx) = ops::add(grad_ref(a.idx), g);
        Tensor& gb = grad_ref(bias.idx);
        const int64_t m = g.dim(0), n = g.dim(1);
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j) gb.at(j) += g.at(i, j);
    };
    return out;
}

Var Tape::scale_rows(Var a, std::vector<double> coeffs) {
    Var out = push(ops::scale_rows(value(a), coeffs));
    nodes_[out.idx].back = [this, a, out, coeffs = std::move(coeffs)] {
        const Tensor& g = nodes_[out.idx].grad;
        Tensor& ga = grad_ref(a.idx);
        const int64_t m = g.dim(0), n = g.dim(1);
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j) ga.at(i, j) += g.at(i, j) * coeffs[static_cast<size_t>(i)];
    };
    return out;
}

Var Tape::row_softmax(Var a) {
    Var out = push(ops::row_softmax(value(a)));
    nodes_[out.idx].back = [this, a, out] {
        const Tensor& g = nodes_[out.idx].grad;
        const Tensor& p = nodes_[out.idx].value;
        Tensor& ga = grad_ref(a.idx);
        const int64_t m = p.dim(0), n = p.dim(1);
        for (int64_t i = 0; i < m; ++i) {
            double dot = 0.0;
            for (int64_t j = 0; j < n; ++j) dot += g.at(i, j) * p.at(i, j);
            for (int64_t j = 0; j < n; ++j) ga.at(i, j) += p.at(i, j) * (g.at(i, j) - dot);
        }
    };
    return out;
}

Var Tape::layer_norm(Var x, Var gamma, Var beta, double eps) {
    const Tensor& xv = value(x);
    const int64_t m = xv.dim(0), n = xv.dim(1);
    // Cache per-row inverse stddev and normalized values for the backward pass.
    std::vector<double> inv(static_cast<size_t>(m));
    Tensor xhat({m, n});
    for (int64_t i = 0; i < m; ++i) {
        double mu = 0.0;
        for (int64_t j = 0; j < n; ++j) mu += xv.at(i, j);
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (int64_t j = 0; j < n; ++j) {
            double d = xv.at(i, j) - mu;
            var += d * d;
        }
        var /= static_cast<double>(n);
        inv[static_cast<size_t>(i)] = 1.0 / std::sqrt(var + eps);
        for (int64_t j = 0; j < n; ++j) xhat.at(i, j) = (xv.at(i, j) - mu) * inv[static_cast<size_t>(i)];
    }
    Tensor outv({m, n});
    const Tensor& gm = value(gamma);
    const Tensor& bt = value(beta);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) outv.at(i, j) = xhat.at(i, j) * gm.at(j) + bt.at(j);
    Var out = push(std::move(outv));
    nodes_[out.idx].back = [this, x, gamma, beta, out, inv = std::move(inv), xhat = std::move(xhat), m, n] {
        const Tensor& g = nodes_[out.idx].grad;
        const Tensor& gm = value(gamma);
        Tensor& gx = grad_ref(x.idx);
        Tensor& ggamma = grad_ref(gamma.idx);
        Tensor& gbeta = grad_ref(beta.idx);
        for (int64_t i = 0; i < m; ++i) {
            double sum_d = 0.0, sum_dx = 0.0;
            for (int64_t j = 0; j < n; ++j) {
                double d = g.at(i, j) * gm.at(j);  // d xhat
                sum_d += d;
                sum_dx += d * xhat.at(i, j);
                ggamma.at(j) += g.at(i, j) * xhat.at(i, j);
                gbeta.at(j) += g.at(i, j);
            }
            const double nd = static_cast<double>(n);
            for (int64_t j = 0; j < n; ++j) {
                double d = g.at(i, j) * gm.at(j);
                gx.at(i, j) += inv[static_cast<size_t>(i)] * (d - sum_d / nd - xhat.at(i, j) * sum_dx / nd);
            }
        }
    };
    return out;
}

Var Tape::gelu(Var a) {
    Var out = push(ops::gelu(value(a)));
    nodes_[out.idx].back = [this, a, out] {
        const Tensor& g = nodes_[out.idx].grad;
        const Tensor& xv = value(a);
        Tensor& ga = grad_ref(a.idx);
        for (int64_t i = 0; i < xv.size(); ++i) {
            double x = xv.at(i);
            double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865476));
            double pdf = std::exp(-0.5 * x * x) * 0.3989422804014327;
            ga.at(i) += g.at(i) * (cdf + x * pdf);
        }
    };
    return out;
}

Var Tape::softplus(Var a) {
    Var out = push(ops::softplus(value(a)));
    nodes_[out.idx].back = [this, a, out] {
        const Tensor& g = nodes_[out.idx].grad;
        const Tensor& xv = value(a);
        Tensor& ga = grad_ref(a.idx);
        for (int64_t i = 0; i < xv.size(); ++i) {
            double x = xv.at(i);
            double sig = x > 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
            ga.at(i) += g.at(i) * sig;
        }
    };
    return out;
}

Var Tape::l2_normalize(Var a, int axis) {
    Var out = push(ops::l2_normalize(value(a), axis));
    nodes_[out.idx].back = [this, a, out, axis] {
        const Tensor& g = nodes_[out.idx].grad;
        const Tensor& xv = value(a);
        const Tensor& u = nodes_[out.idx].value;  // normalized slices
        Tensor& ga = grad_ref(a.idx);
        const int64_t m = xv.dim(0), n = xv.dim(1);
        if (axis == 1) {
            for (int64_t i = 0; i < m; ++i) {
                double r2 = 0.0;
                for (int64_t j = 0; j < n; ++j) r2 += xv.at(i, j) * xv.at(i, j);
                if (r2 == 0.0) continue;
                double r = std::sqrt(r2);
                double dot = 0.0;
                for (int64_t j = 0; j < n; ++j) dot += g.at(i, j) * u.at(i, j);
                for (int64_t j = 0; j < n; ++j) ga.at(i, j) += (g.at(i, j) - dot * u.at(i, j)) / r;
            }
        } else {
            for (int64_t j = 0; j < n; ++j) {
                double r2 = 0.0;
                for (int64_t i = 0; i < m; ++i) r2 += xv.at(i, j) * xv.at(i, j);
                if (r2 == 0.0) continue;
                double r = std::sqrt(r2);
                double dot = 0.0;
                for (int64_t i = 0; i < m; ++i) dot += g.at(i, j) * u.at(i, j);
                for (int64_t i = 0; i < m; ++i) ga.at(i, j) += (g.at(i, j) - dot * u.at(i, j)) / r;
            }
        }
    };
    return out;
}

Var Tape::transpose(Var a) {
    Var out = push(ops::transpose(value(a)));
    nodes_[out.idx].back = [this, a, out] {
        grad_ref(a.idx) = ops::add(grad_ref(a.idx), ops::transpose(nodes_[out.idx].grad));
    };
    return out;
}

Var Tape::gather_rows(Var table, std::vector<int> ids) {
    Var out = push(ops::gather_rows(value(table), ids));
    nodes_[out.idx].back = [this, table, out, ids = std::move(ids)] {
        const Tensor& g = nodes_[out.idx].grad;
        Tensor& gt = grad_ref(table.idx);
        const int64_t n = g.dim(1);
        for (size_t i = 0; i < ids.size(); ++i)
            for (int64_t j = 0; j < n; ++j) gt.at(ids[i], j) += g.at(static_cast<int64_t>(i), j);
    };
    return out;
}

Var Tape::exp_scale(Var a, double c) {
    const Tensor& xv = value(a);
    Tensor v = xv;
    for (int64_t i = 0; i < v.size(); ++i) v.at(i) = std::exp(c * xv.at(i));
    Var out = push(std::move(v));
    nodes_[out.idx].back = [this, a, c, out] {
        const Tensor& g = nodes_[out.idx].grad;
        const Tensor& y = nodes_[out.idx].value;
        Tensor& ga = grad_ref(a.idx);
        for (int64_t i = 0; i < y.size(); ++i) ga.at(i) += g.at(i) * c * y.at(i);
    };
    return out;
}

Var Tape::mean_all(Var a) {
    Var out = push(Tensor::scalar(ops::mean(value(a))));
    nodes_[out.idx].back = [this, a, out] {
        double g = nodes_[out.idx].grad.item() / static_cast<double>(value(a).size());
        Tensor& ga = grad_ref(a.idx);
        for (int64_t i = 0; i < ga.size(); ++i) ga.at(i) += g;
    };
    return out;
}

Var Tape::attention_core(Var q, Var k, Var v, int n_heads, double scale, Var cosim, bool cosim_post,
                         Tensor* probs_out) {
    const Tensor& qv = value(q);
    const Tensor& kv = value(k);
    const Tensor& vv = value(v);
    const int64_t L = qv.dim(0), D = qv.dim(1);
    if (D % n_heads != 0) throw InvariantError("attention_core: dim not divisible by n_heads");
    const int64_t hd = D / n_heads;

    std::vector<Tensor> probs;  // cached per-head softmax (pre cosim_post add)
    probs.reserve(static_cast<size_t>(n_heads));
    Tensor outv({L, D});
    for (int h = 0; h < n_heads; ++h) {
        const int64_t off = h * hd;
        Tensor s({L, L});
        for (int64_t i = 0; i < L; ++i)
            for (int64_t j = 0; j < L; ++j) {
                double dot = 0.0;
                for (int64_t l = 0; l < hd; ++l) dot += qv.at(i, off + l) * kv.at(j, off + l);
                s.at(i, j) = dot * scale;
            }
        if (cosim.valid() && !cosim_post) s = ops::add(s, value(cosim));
        Tensor p = ops::row_softmax(s);
        Tensor mix = (cosim.valid() && cosim_post) ? ops::add(p, value(cosim)) : p;
        for (int64_t i = 0; i < L; ++i)
            for (int64_t l = 0; l < hd; ++l) {
                double acc = 0.0;
                for (int64_t j = 0; j < L; ++j) acc += mix.at(i, j) * vv.at(j, off + l);
                outv.at(i, off + l) = acc;
            }
        probs.push_back(std::move(p));
    }
    if (probs_out) {
        Tensor avg({L, L});
        for (const Tensor& p : probs)
            for (int64_t i = 0; i < L * L; ++i) avg.at(i) += p.at(i) / static_cast<double>(n_heads);
        *probs_out = std::move(avg);
    }

    Var out = push(std::move(outv));
    nodes_[out.idx].back = [this, q, k, v, cosim, cosim_post, out, n_heads, scale, hd, L, probs = std::move(probs)] {
        const Tensor& g = nodes_[out.idx].grad;
        const Tensor& qv = value(q);
        const Tensor& kv = value(k);
        const Tensor& vv = value(v);
        Tensor& gq = grad_ref(q.idx);
        Tensor& gk = grad_ref(k.idx);
        Tensor& gv = grad_ref(v.idx);
        Tensor* gc = cosim.valid() ? &grad_ref(cosim.idx) : nullptr;
        for (int h = 0; h < n_heads; ++h) {
            const int64_t off = h * hd;
            const Tensor& p = probs[static_cast<size_t>(h)];
            // dMix = dO * V^T ; dV += Mix^T * dO    (restricted to this head's cols)
            Tensor dmix({L, L});
            for (int64_t i = 0; i < L; ++i)
                for (int64_t j = 0; j < L; ++j) {
                    double acc = 0.0;
                    for (int64_t l = 0; l < hd; ++l) acc += g.at(i, off + l) * vv.at(j, off + l);
                    dmix.at(i, j) = acc;
                }
            const bool post = cosim.valid() && cosim_post;
            for (int64_t j = 0; j < L; ++j)
                for (int64_t l = 0; l < hd; ++l) {
                    double acc = 0.0;
                    for (int64_t i = 0; i < L; ++i) {
                        double mij = post ? p.at(i, j) + value(cosim).at(i, j) : p.at(i, j);
                        acc += mij * g.at(i, off + l);
                    }
                    gv.at(j, off + l) += acc;
                }
            if (post)
                for (int64_t i = 0; i < L * L; ++i) gc->at(i) += dmix.at(i);
            // softmax backward -> dS
            Tensor ds({L, L});
            for (int64_t i = 0; i < L; ++i) {
                double dot = 0.0;
                for (int64_t j = 0; j < L; ++j) dot += dmix.at(i, j) * p.at(i, j);
                for (int64_t j = 0; j < L; ++j) ds.at(i, j) = p.at(i, j) * (dmix.at(i, j) - dot);
            }
            if (gc && !post)
                for (int64_t i = 0; i < L * L; ++i) gc->at(i) += ds.at(i);
            // dQ += scale * dS * K ; dK += scale * dS^T * Q
            for (int64_t i = 0; i < L; ++i)
                for (int64_t l = 0; l < hd; ++l) {
                    double accq = 0.0;
                    for (int64_t j = 0; j < L; ++j) accq += ds.at(i, j) * kv.at(j, off + l);
                    gq.at(i, off + l) += scale * accq;
                }
            for (int64_t j = 0; j < L; ++j)
                for (int64_t l = 0; l < hd; ++l) {
                    double acck = 0.0;
                    for (int64_t i = 0; i < L; ++i) acck += ds.at(i, j) * qv.at(i, off + l);
                    gk.at(j, off + l) += scale * acck;
                }
        }
    };
    return out;
}

Var Tape::cross_entropy(Var logits, std::vector<int> targets, std::vector<double> weights) {
    const Tensor& lv = value(logits);
    const int64_t P = lv.dim(0), V = lv.dim(1);
    if (P == 0) throw InvariantError("cross_entropy: no positions");
    if (static_cast<int64_t>(targets.size()) != P) throw InvariantError("cross_entropy: targets/logits length mismatch");
    if (!weights.empty() && static_cast<int64_t>(weights.size()) != P)
        throw InvariantError("cross_entropy: weights/logits length mismatch");
    double wsum = 0.0;
    std::vector<double> w(static_cast<size_t>(P), 1.0);
    if (!weights.empty()) w = weights;
    for (double x : w) wsum += x;

    Tensor probs = ops::row_softmax(lv);
    double loss = 0.0;
    for (int64_t i = 0; i < P; ++i) {
        if (targets[static_cast<size_t>(i)] < 0 || targets[static_cast<size_t>(i)] >= V)
            throw InvariantError("cross_entropy: target id out of range");
        loss -= w[static_cast<size_t>(i)] / wsum * std::log(std::max(probs.at(i, targets[static_cast<size_t>(i)]), 1e-300));
    }
    Var out = push(Tensor::scalar(loss));
    nodes_[out.idx].back =
        [this, logits, out, P, V, targets = std::move(targets), w = std::move(w), wsum, probs = std::move(probs)] {
            double g = nodes_[out.idx].grad.item();
            Tensor& gl = grad_ref(logits.idx);
            for (int64_t i = 0; i < P; ++i) {
                double wi = g * w[static_cast<size_t>(i)] / wsum;
                for (int64_t j = 0; j < V; ++j) gl.at(i, j) += wi * probs.at(i, j);
                gl.at(i, targets[static_cast<size_t>(i)]) -= wi;
            }
        };
    return out;
}

Var Tape::mse(Var pred, std::vector<double> targets) {
    const Tensor& pv = value(pred);
    const int64_t P = pv.size();
    if (P == 0) throw InvariantError("mse: no positions");
    if (static_cast<int64_t>(targets.size()) != P) throw InvariantError("mse: targets length mismatch");
    double loss = 0.0;
    for (int64_t i = 0; i < P; ++i) {
        double d = pv.at(i) - targets[static_cast<size_t>(i)];
        loss += d * d;
    }
    loss /= static_cast<double>(P);
    Var out = push(Tensor::scalar(loss));
    nodes_[out.idx].back = [this, pred, out, P, targets = std::move(targets)] {
        double g = nodes_[out.idx].grad.item();
        const Tensor& pv = value(pred);
        Tensor& gp = grad_ref(pred.idx);
        for (int64_t i = 0; i < P; ++i) gp.at(i) += g * 2.0 * (pv.at(i) - targets[static_cast<size_t>(i)]) / static_cast<double>(P);
    };
    return out;
}

Var Tape::logscaled_mse(Var pred, std::vector<double> targets) {
    const Tensor& pv = value(pred);
    const int64_t P = pv.size();
    if (P == 0) throw InvariantError("logscaled_mse: no positions");
    if (static_cast<int64_t>(targets.size()) != P) throw InvariantError("logscaled_mse: targets length mismatch");
    double loss = 0.0;
    for (int64_t i = 0; i < P; ++i) {
        if (pv.at(i) <= -1.0) throw InvariantError("logscaled_mse: prediction <= -1 outside log1p domain");
        double d = std::log1p(targets[static_cast<size_t>(i)]) - std::log1p(pv.at(i));
        loss += d * d;
    }
    loss /= static_cast<double>(P);
    Var out = push(Tensor::scalar(loss));
    nodes_[out.idx].back = [this, pred, out, P, targets = std::move(targets)] {
        double g = nodes_[out.idx].grad.item();
        const Tensor& pv = value(pred);
        Tensor& gp = grad_ref(pred.idx);
        for (int64_t i = 0; i < P; ++i) {
            double d = std::log1p(targets[static_cast<size_t>(i)]) - std::log1p(pv.at(i));
            gp.at(i) += g * (-2.0) * d / (1.0 + pv.at(i)) / static_cast<double>(P);
        }
    };
    return out;
}

void Tape::backward(Var loss) {
    if (value(loss).size() != 1) throw InvariantError("backward: loss must be a scalar, got " + value(loss).shape_str());
    grad_ref(loss.idx) = Tensor::full(value(loss).shape(), 1.0);
    for (int32_t i = loss.idx; i >= 0; --i) {
        if (has_grad(i) && nodes_[i].back) nodes_[i].back();
    }
}

double grad_check(const std::function<double(const std::vector<Tensor>&)>& f, std::vector<Tensor> params,
                  const std::vector<Tensor>& analytic, double eps, int min_coords, Rng& rng) {
    if (eps <= 0) throw InvariantError("grad_check: eps must be positive");
    int64_t total = 0;
    for (const Tensor& p : params) total += p.size();
    int64_t ncheck = std::min<int64_t>(total, std::max(min_coords, 64));

    // Pick distinct flat coordinates.
    std::vector<int64_t> coords;
    if (total <= 2 * ncheck) {
        coords.resize(static_cast<size_t>(total));
        for (int64_t i = 0; i < total; ++i) coords[static_cast<size_t>(i)] = i;
        rng.shuffle(coords);
        coords.resize(static_cast<size_t>(ncheck));
    } else {
        std::unordered_set<int64_t> seen;
        while (static_cast<int64_t>(coords.size()) < ncheck) {
            int64_t c = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(total)));
            if (seen.insert(c).second) coords.push_back(c);
        }
    }

    double max_rel = 0.0;
    for (int64_t flat : coords) {
        size_t pi = 0;
        int64_t off = flat;
        while (off >= params[pi].size()) {
            off -= params[pi].size();
            ++pi;
        }
        const double orig = params[pi].at(off);
        params[pi].at(off) = orig + eps;
        const double fp = f(params);
        params[pi].at(off) = orig - eps;
        const double fm = f(params);
        params[pi].at(off) = orig;
        const double numeric = (fp - fm) / (2.0 * eps);
        const double a = analytic[pi].at(off);
        const double rel = std::abs(a - numeric) / std::max(1.0, std::abs(a) + std::abs(numeric));
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

}  // namespace clinnum
