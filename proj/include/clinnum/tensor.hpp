#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace clinnum {

// Dense row-major tensor of doubles. Rank 0 (scalar), 1 or 2 in practice.
// All kernels are pure: they allocate and return a fresh tensor.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int64_t> shape);
    Tensor(std::vector<int64_t> shape, std::vector<double> data);

    static Tensor scalar(double v);
    static Tensor zeros(std::vector<int64_t> shape);
    static Tensor full(std::vector<int64_t> shape, double v);

    const std::vector<int64_t>& shape() const { return shape_; }
    int64_t dim(size_t i) const { return shape_.at(i); }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }
    int64_t rank() const { return static_cast<int64_t>(shape_.size()); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& at(int64_t i) { return data_[static_cast<size_t>(i)]; }
    double at(int64_t i) const { return data_[static_cast<size_t>(i)]; }
    double& at(int64_t r, int64_t c) { return data_[static_cast<size_t>(r * shape_[1] + c)]; }
    double at(int64_t r, int64_t c) const { return data_[static_cast<size_t>(r * shape_[1] + c)]; }

    double item() const;  // requires size() == 1

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    std::string shape_str() const;

    // True if every entry is finite. Ops treat NaN/Inf as contract violations;
    // callers that must react (e.g. divergence detection) check this.
    bool all_finite() const;

private:
    std::vector<int64_t> shape_;
    std::vector<double> data_;
};

namespace ops {

// C = A*B, A:(m,k) B:(k,n). The _nt/_tn variants take B or A transposed so
// backward passes never materialize explicit transposes.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // A:(m,k) B:(n,k)  -> A*B^T
Tensor matmul_tn(const Tensor& a, const Tensor& b);  // A:(k,m) B:(k,n)  -> A^T*B

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double c);
Tensor transpose(const Tensor& a);

// Adds row vector b:(n) to every row of a:(m,n).
Tensor add_rowvec(const Tensor& a, const Tensor& b);

// Multiplies row i of a by coeffs[i].
Tensor scale_rows(const Tensor& a, const std::vector<double>& coeffs);

Tensor row_softmax(const Tensor& a);

// Per-row normalization to mean 0 / var 1 (eps inside sqrt), then gamma/beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor gelu(const Tensor& a);      // exact erf form
Tensor softplus(const Tensor& a);  // log(1+e^x), overflow-safe

// Unit L2 norm along `axis` (0 = normalize each column, 1 = each row).
// All-zero slices are left as zero.
Tensor l2_normalize(const Tensor& a, int axis);

Tensor gather_rows(const Tensor& table, const std::vector<int>& ids);

double sum(const Tensor& a);
double mean(const Tensor& a);

}  // namespace ops

}  // namespace clinnum
