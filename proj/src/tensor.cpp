#include "gjem/tensor.hpp"

#include <cmath>
#include <sstream>

#include "gjem/errors.hpp"

namespace gjem {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

static void check_extents(const Shape& shape) {
  for (std::size_t e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape));
  }
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  if (data_.size() != shape_size(shape_)) {
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_string(shape_));
  }
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::vector(std::initializer_list<double> values) {
  return vector(std::vector<double>(values));
}

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(Shape{n}, std::move(values));
}

std::size_t Tensor::extent(std::size_t axis) const {
  if (axis >= shape_.size()) throw ShapeError("axis out of range for shape " + shape_string(shape_));
  return shape_[axis];
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on non-scalar tensor of shape " + shape_string(shape_));
  return data_[0];
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::row(std::size_t i) const {
  if (rank() != 2 || i >= shape_[0]) throw ShapeError("row() needs a rank-2 tensor and valid index");
  const std::size_t d = shape_[1];
  return Tensor(Shape{d}, std::vector<double>(data_.begin() + i * d, data_.begin() + (i + 1) * d));
}

void Tensor::set_row(std::size_t i, const Tensor& values) {
  if (rank() != 2 || i >= shape_[0] || values.size() != shape_[1]) {
    throw ShapeError("set_row(): incompatible row for shape " + shape_string(shape_));
  }
  std::copy(values.data_.begin(), values.data_.end(), data_.begin() + i * shape_[1]);
}

Tensor& Tensor::operator+=(const Tensor& other) {
  require_same_shape(*this, other, "operator+=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double factor) {
  for (double& v : data_) v *= factor;
  return *this;
}

Tensor stack_rows(std::span<const Tensor> rows) {
  if (rows.empty()) throw ShapeError("stack_rows(): no rows");
  const std::size_t d = rows.front().size();
  std::vector<double> data;
  data.reserve(rows.size() * d);
  for (const Tensor& r : rows) {
    if (r.rank() != 1 || r.size() != d) throw ShapeError("stack_rows(): rows must be rank-1 and equal length");
    data.insert(data.end(), r.data().begin(), r.data().end());
  }
  return Tensor(Shape{rows.size(), d}, std::move(data));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

}  // namespace gjem
