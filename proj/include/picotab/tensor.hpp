#pragma once

#include <cassert>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <vector>

namespace picotab {

// Dense row-major tensor of doubles, rank 1..3. All model math runs in
// double so finite-difference checks and long reductions stay well clear
// of the tolerances the contracts promise.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(numel_of(shape_), 0.0);
    }
    Tensor(std::initializer_list<int> shape) : Tensor(std::vector<int>(shape)) {}

    static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(shape_.size()); }
    size_t numel() const { return data_.size(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](size_t i) { return data_[i]; }
    double operator[](size_t i) const { return data_[i]; }

    double& at(int i, int j) { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
    double at(int i, int j) const { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
    double& at(int i, int j, int k) {
        return data_[(static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }
    double at(int i, int j, int k) const {
        return data_[(static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }

    // Pointer to the contiguous [dim(rank-1)] slice at the given leading indices.
    double* row(int i) { return data_.data() + static_cast<size_t>(i) * shape_[1]; }
    const double* row(int i) const { return data_.data() + static_cast<size_t>(i) * shape_[1]; }
    double* row(int i, int j) {
        return data_.data() + (static_cast<size_t>(i) * shape_[1] + j) * shape_[2];
    }
    const double* row(int i, int j) const {
        return data_.data() + (static_cast<size_t>(i) * shape_[1] + j) * shape_[2];
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    static size_t numel_of(const std::vector<int>& shape) {
        size_t n = 1;
        for (int d : shape) n *= static_cast<size_t>(d);
        return n;
    }

  private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

// C[m,n] += A[m,k] * B[k,n]
void matmul_acc(const double* a, const double* b, double* c, int m, int k, int n);

// C[m,n] += A[m,k] * B[n,k]^T
void matmul_bt_acc(const double* a, const double* b, double* c, int m, int k, int n);

// C[k,n] += A[m,k]^T * B[m,n]
void matmul_at_acc(const double* a, const double* b, double* c, int m, int k, int n);

double dot(const double* a, const double* b, int n);
void axpy(double alpha, const double* x, double* y, int n);

}  // namespace picotab
