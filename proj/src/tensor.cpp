#include "graphfm/tensor.hpp"

#include <cmath>
#include <sstream>

#include "graphfm/error.hpp"

namespace graphfm {

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

Tensor Tensor::alloc(Shape shape, bool requires_grad) {
    for (int64_t d : shape) {
        if (d <= 0) throw DimensionError("tensor dimension must be positive, got shape " + shape_to_string(shape));
    }
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    t.node_->data.resize(static_cast<size_t>(shape_numel(t.node_->shape)), 0.0);
    t.node_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return alloc(std::move(shape), requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    Tensor t = alloc(std::move(shape), requires_grad);
    for (double& v : t.node_->data) v = value;
    return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    Tensor t = alloc(std::move(shape), requires_grad);
    if (static_cast<int64_t>(values.size()) != t.size())
        throw DimensionError("value count " + std::to_string(values.size()) + " does not fill shape " +
                             t.shape_str());
    t.node_->data = std::move(values);
    return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

std::vector<double>& Tensor::grad() const {
    if (node_->grad.empty()) node_->grad.resize(node_->data.size(), 0.0);
    return node_->grad;
}

void Tensor::zero_grad() const {
    for (double& g : node_->grad) g = 0.0;
}

double Tensor::item() const {
    if (size() != 1) throw ContractError("item() on non-scalar tensor of shape " + shape_str());
    return node_->data[0];
}

int64_t Tensor::offset(std::initializer_list<int64_t> idx) const {
    if (static_cast<int64_t>(idx.size()) != rank())
        throw DimensionError("index rank " + std::to_string(idx.size()) + " vs tensor rank " +
                             std::to_string(rank()));
    int64_t off = 0;
    size_t k = 0;
    for (int64_t i : idx) {
        if (i < 0 || i >= node_->shape[k])
            throw DimensionError("index out of range for shape " + shape_str());
        off = off * node_->shape[k] + i;
        ++k;
    }
    return off;
}

double Tensor::at(std::initializer_list<int64_t> idx) const { return node_->data[static_cast<size_t>(offset(idx))]; }
double& Tensor::at(std::initializer_list<int64_t> idx) { return node_->data[static_cast<size_t>(offset(idx))]; }

Tensor Tensor::clone() const {
    Tensor t = alloc(node_->shape, node_->requires_grad);
    t.node_->data = node_->data;
    return t;
}

void Tensor::copy_values_from(const Tensor& src) {
    if (!same_shape(src)) throw DimensionError("copy_values_from shape mismatch " + shape_str() + " vs " + src.shape_str());
    node_->data = src.node_->data;
}

std::string Tensor::shape_str() const { return shape_to_string(node_->shape); }

bool Tensor::all_finite() const {
    for (double v : node_->data)
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace graphfm
