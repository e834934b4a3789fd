#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace troi {

// Dense row-major matrix of 64-bit floats with an optional gradient buffer.
// All model parameters, activations and batches use this one type.
struct Tensor2 {
  int rows = 0, cols = 0;
  std::vector<double> v;  // values, size rows*cols
  std::vector<double> g;  // gradient buffer; empty until ensure_grad()

  Tensor2() = default;
  Tensor2(int r, int c, double fill = 0.0) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, fill) {
    if (r < 0 || c < 0) throw std::invalid_argument("Tensor2: negative shape");
  }

  std::size_t size() const { return v.size(); }
  double& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }

  void ensure_grad() {
    if (g.size() != v.size()) g.assign(v.size(), 0.0);
  }
  void zero_grad() {
    if (!g.empty()) g.assign(g.size(), 0.0);
  }

  std::string shape_str() const {
    return std::to_string(rows) + "x" + std::to_string(cols);
  }
};

}  // namespace troi
