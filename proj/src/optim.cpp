#include "swardmix/optim.hpp"

#include <stdexcept>

namespace swardmix {

void Sgd::add(const std::string& name, const Shape& shape) { buffers_.emplace(name, TensorF::zeros(shape)); }

void Sgd::step(const std::string& name, TensorF& param, const TensorF& grad) {
  auto it = buffers_.find(name);
  if (it == buffers_.end()) throw std::invalid_argument("sgd: parameter '" + name + "' is not registered");
  if (grad.empty()) throw std::invalid_argument("sgd: missing gradient for '" + name + "'");
  if (grad.shape() != param.shape() || it->second.shape() != param.shape()) {
    throw ShapeError("sgd: shape mismatch for '" + name + "': param " + shape_string(param.shape()) + ", grad " +
                     shape_string(grad.shape()));
  }
  auto& v = it->second.array();
  v = options_.momentum * v + grad.array() + options_.weight_decay * param.array();
  param.array() -= options_.lr * v;
}

const TensorF& Sgd::buffer(const std::string& name) const {
  auto it = buffers_.find(name);
  if (it == buffers_.end()) throw std::invalid_argument("sgd: parameter '" + name + "' is not registered");
  return it->second;
}

}  // namespace swardmix
