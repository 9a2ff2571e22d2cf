#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <string>

#include "swardmix/autodiff.hpp"
#include "swardmix/rng.hpp"

namespace testing {

using swardmix::Index;
using swardmix::Shape;
using swardmix::Tape;
using swardmix::Tensor;
using swardmix::TensorD;
using swardmix::TensorF;
using swardmix::Var;

template <typename Scalar = double>
Tensor<Scalar> random_tensor(const Shape& shape, std::mt19937_64& gen, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<Scalar> t(shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(d(gen));
  return t;
}

/// Largest |autodiff - central difference| relative to max(1, |fd|) over all
/// entries of every input. `f` builds a scalar loss from the input vars.
inline double max_gradient_error(const std::vector<TensorD>& inputs,
                                 const std::function<Var<double>(Tape<double>&, std::vector<Var<double>>&)>& f,
                                 double h = 1e-6) {
  Tape<double> tape;
  std::vector<Var<double>> vars;
  for (const auto& x : inputs) vars.push_back(tape.parameter(x));
  tape.backward(f(tape, vars));

  auto eval = [&](const std::vector<TensorD>& xs) {
    Tape<double> t;
    std::vector<Var<double>> vs;
    for (const auto& x : xs) vs.push_back(t.constant(x));
    return f(t, vs).value()[0];
  };

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const TensorD analytic = vars[k].grad();
    for (Index i = 0; i < inputs[k].size(); ++i) {
      auto plus = inputs, minus = inputs;
      plus[k][i] += h;
      minus[k][i] -= h;
      const double fd = (eval(plus) - eval(minus)) / (2 * h);
      worst = std::max(worst, std::abs(analytic[i] - fd) / std::max(1.0, std::abs(fd)));
    }
  }
  return worst;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("swardmix_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace testing
