#pragma once

#include <map>
#include <string>
#include <vector>

#include "swardmix/tensor.hpp"

namespace swardmix {

/// SGD with momentum and L2 weight decay:
///   v <- momentum·v + g + weight_decay·p
///   p <- p − lr·v
class Sgd {
 public:
  struct Options {
    float lr = 1e-3f;
    float momentum = 0.9f;
    float weight_decay = 0.0f;
  };

  explicit Sgd(Options options) : options_(options) {}

  /// Registers a parameter and creates its zero momentum buffer.
  void add(const std::string& name, const Shape& shape);
  bool has(const std::string& name) const { return buffers_.count(name) != 0; }

  /// Updates `param` in place. Throws if `name` was never registered or the
  /// gradient is missing or mis-shaped.
  void step(const std::string& name, TensorF& param, const TensorF& grad);

  const TensorF& buffer(const std::string& name) const;
  const Options& options() const { return options_; }
  std::size_t size() const { return buffers_.size(); }

 private:
  Options options_;
  std::map<std::string, TensorF> buffers_;
};

}  // namespace swardmix
