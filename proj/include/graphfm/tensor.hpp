#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

namespace graphfm {

using Shape = std::vector<int64_t>;

/// Dense row-major tensor of doubles. Copying a Tensor copies the handle, not
/// the storage; ops hold inputs alive through these handles until backward has
/// run. Gradient storage is allocated lazily, zero-filled, and accumulated
/// into by the tape's backward closures.
class Tensor {
  public:
    Tensor() = default;  // undefined tensor; defined() is false

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int64_t rank() const { return static_cast<int64_t>(node_->shape.size()); }
    int64_t dim(int64_t i) const { return node_->shape[static_cast<size_t>(i)]; }
    int64_t size() const { return static_cast<int64_t>(node_->data.size()); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }

    std::vector<double>& values() { return node_->data; }
    const std::vector<double>& values() const { return node_->data; }

    /// Gradient buffer, allocated zero-filled on first access. const-qualified
    /// because a Tensor is a handle: backward closures hold const copies and
    /// still accumulate into the shared buffer.
    std::vector<double>& grad() const;
    bool has_grad() const { return !node_->grad.empty(); }
    void zero_grad() const;

    double item() const;  // scalar tensors only
    double at(std::initializer_list<int64_t> idx) const;
    double& at(std::initializer_list<int64_t> idx);
    int64_t offset(std::initializer_list<int64_t> idx) const;

    /// Deep copy of the values (fresh storage, no gradient, same requires_grad).
    Tensor clone() const;
    /// Overwrite values from another tensor of identical shape.
    void copy_values_from(const Tensor& src);

    bool same_shape(const Tensor& other) const { return shape() == other.shape(); }
    std::string shape_str() const;

    bool all_finite() const;

  private:
    struct Node {
        Shape shape;
        std::vector<double> data;
        std::vector<double> grad;
        bool requires_grad = false;
    };
    std::shared_ptr<Node> node_;

    static Tensor alloc(Shape shape, bool requires_grad);
};

int64_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

}  // namespace graphfm
