#include "clinnum/tensor.hpp"

#include <cmath>
#include <sstream>

#include "clinnum/errors.hpp"

namespace clinnum {

namespace {

int64_t shape_product(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d < 0) throw InvariantError("negative dimension in tensor shape");
        n *= d;
    }
    return n;
}

[[noreturn]] void shape_error(const std::string& op, const Tensor& a, const Tensor& b) {
    throw InvariantError(op + ": incompatible shapes " + a.shape_str() + " and " + b.shape_str());
}

}  // namespace

Tensor::Tensor(std::vector<int64_t> shape)
    : shape_(std::move(shape)), data_(static_cast<size_t>(shape_product(shape_)), 0.0) {}

Tensor::Tensor(std::vector<int64_t> shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_product(shape_) != static_cast<int64_t>(data_.size()))
        throw InvariantError("tensor data length does not match shape " + shape_str());
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

Tensor Tensor::zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<int64_t> shape, double v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
}

double Tensor::item() const {
    if (data_.size() != 1) throw InvariantError("item() on non-scalar tensor " + shape_str());
    return data_[0];
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << ")";
    return os.str();
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

namespace ops {

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) shape_error("matmul", a, b);
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor c({m, n});
    const double* __restrict__ pa = a.data();
    const double* __restrict__ pb = b.data();
    double* __restrict__ pc = c.data();
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t l = 0; l < k; ++l) {
            const double av = pa[i * k + l];
            if (av == 0.0) continue;
            const double* __restrict__ brow = pb + l * n;
            double* __restrict__ crow = pc + i * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) shape_error("matmul_nt", a, b);
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    Tensor c({m, n});
    const double* __restrict__ pa = a.data();
    const double* __restrict__ pb = b.data();
    double* __restrict__ pc = c.data();
    for (int64_t i = 0; i < m; ++i) {
        const double* __restrict__ arow = pa + i * k;
        for (int64_t j = 0; j < n; ++j) {
            const double* __restrict__ brow = pb + j * k;
            double s = 0.0;
            for (int64_t l = 0; l < k; ++l) s += arow[l] * brow[l];
            pc[i * n + j] = s;
        }
    }
    return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0)) shape_error("matmul_tn", a, b);
    const int64_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
    Tensor c({m, n});
    const double* __restrict__ pa = a.data();
    const double* __restrict__ pb = b.data();
    double* __restrict__ pc = c.data();
    for (int64_t l = 0; l < k; ++l) {
        const double* __restrict__ arow = pa + l * m;
        const double* __restrict__ brow = pb + l * n;
        for (int64_t i = 0; i < m; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* __restrict__ crow = pc + i * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) shape_error("add", a, b);
    Tensor c = a;
    for (int64_t i = 0; i < c.size(); ++i) c.at(i) += b.at(i);
    return c;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) shape_error("sub", a, b);
    Tensor c = a;
    for (int64_t i = 0; i < c.size(); ++i) c.at(i) -= b.at(i);
    return c;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) shape_error("mul", a, b);
    Tensor c = a;
    for (int64_t i = 0; i < c.size(); ++i) c.at(i) *= b.at(i);
    return c;
}

Tensor scale(const Tensor& a, double c) {
    Tensor r = a;
    for (int64_t i = 0; i < r.size(); ++i) r.at(i) *= c;
    return r;
}

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw InvariantError("transpose: rank-2 tensor required, got " + a.shape_str());
    const int64_t m = a.dim(0), n = a.dim(1);
    Tensor c({n, m});
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) c.at(j, i) = a.at(i, j);
    return c;
}

Tensor add_rowvec(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.size() != a.dim(1)) shape_error("add_rowvec", a, b);
    Tensor c = a;
    const int64_t m = a.dim(0), n = a.dim(1);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) c.at(i, j) += b.at(j);
    return c;
}

Tensor scale_rows(const Tensor& a, const std::vector<double>& coeffs) {
    if (a.rank() != 2 || static_cast<int64_t>(coeffs.size()) != a.dim(0))
        throw InvariantError("scale_rows: need one coefficient per row of " + a.shape_str());
    Tensor c = a;
    const int64_t m = a.dim(0), n = a.dim(1);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) c.at(i, j) *= coeffs[static_cast<size_t>(i)];
    return c;
}

Tensor row_softmax(const Tensor& a) {
    if (a.rank() != 2) throw InvariantError("row_softmax: rank-2 tensor required, got " + a.shape_str());
    const int64_t m = a.dim(0), n = a.dim(1);
    Tensor c({m, n});
    for (int64_t i = 0; i < m; ++i) {
        double mx = a.at(i, 0);
        for (int64_t j = 1; j < n; ++j) mx = std::max(mx, a.at(i, j));
        double z = 0.0;
        for (int64_t j = 0; j < n; ++j) {
            double e = std::exp(a.at(i, j) - mx);
            c.at(i, j) = e;
            z += e;
        }
        for (int64_t j = 0; j < n; ++j) c.at(i, j) /= z;
    }
    return c;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (x.rank() != 2 || gamma.size() != x.dim(1) || beta.size() != x.dim(1))
        throw InvariantError("layer_norm: gamma/beta must match last dim of " + x.shape_str());
    const int64_t m = x.dim(0), n = x.dim(1);
    Tensor c({m, n});
    for (int64_t i = 0; i < m; ++i) {
        double mu = 0.0;
        for (int64_t j = 0; j < n; ++j) mu += x.at(i, j);
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (int64_t j = 0; j < n; ++j) {
            double d = x.at(i, j) - mu;
            var += d * d;
        }
        var /= static_cast<double>(n);
        double inv = 1.0 / std::sqrt(var + eps);
        for (int64_t j = 0; j < n; ++j) c.at(i, j) = (x.at(i, j) - mu) * inv * gamma.at(j) + beta.at(j);
    }
    return c;
}

Tensor gelu(const Tensor& a) {
    Tensor c = a;
    for (int64_t i = 0; i < c.size(); ++i) {
        double x = c.at(i);
        c.at(i) = 0.5 * x * (1.0 + std::erf(x * 0.7071067811865476));
    }
    return c;
}

Tensor softplus(const Tensor& a) {
    Tensor c = a;
    for (int64_t i = 0; i < c.size(); ++i) {
        double x = c.at(i);
        // log1p(exp(x)) without overflow for large x
        c.at(i) = x > 30.0 ? x : std::log1p(std::exp(x));
    }
    return c;
}

Tensor l2_normalize(const Tensor& a, int axis) {
    if (a.rank() == 1) {
        double s = 0.0;
        for (int64_t i = 0; i < a.size(); ++i) s += a.at(i) * a.at(i);
        if (s == 0.0) return a;
        return scale(a, 1.0 / std::sqrt(s));
    }
    if (a.rank() != 2 || (axis != 0 && axis != 1))
        throw InvariantError("l2_normalize: rank-2 tensor and axis 0/1 required");
    const int64_t m = a.dim(0), n = a.dim(1);
    Tensor c = a;
    if (axis == 1) {
        for (int64_t i = 0; i < m; ++i) {
            double s = 0.0;
            for (int64_t j = 0; j < n; ++j) s += a.at(i, j) * a.at(i, j);
            if (s == 0.0) continue;
            double inv = 1.0 / std::sqrt(s);
            for (int64_t j = 0; j < n; ++j) c.at(i, j) *= inv;
        }
    } else {
        for (int64_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (int64_t i = 0; i < m; ++i) s += a.at(i, j) * a.at(i, j);
            if (s == 0.0) continue;
            double inv = 1.0 / std::sqrt(s);
            for (int64_t i = 0; i < m; ++i) c.at(i, j) *= inv;
        }
    }
    return c;
}

Tensor gather_rows(const Tensor& table, const std::vector<int>& ids) {
    if (table.rank() != 2) throw InvariantError("gather_rows: rank-2 table required");
    const int64_t n = table.dim(1);
    Tensor c({static_cast<int64_t>(ids.size()), n});
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= table.dim(0))
            throw InvariantError("gather_rows: row index " + std::to_string(ids[i]) + " out of range for " +
                                 table.shape_str());
        for (int64_t j = 0; j < n; ++j) c.at(static_cast<int64_t>(i), j) = table.at(ids[i], j);
    }
    return c;
}

double sum(const Tensor& a) {
    double s = 0.0;
    for (int64_t i = 0; i < a.size(); ++i) s += a.at(i);
    return s;
}

double mean(const Tensor& a) { return sum(a) / static_cast<double>(a.size()); }

}  // namespace ops

}  // namespace clinnum
