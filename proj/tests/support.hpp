#ifndef MCINET_TESTS_SUPPORT_HPP
#define MCINET_TESTS_SUPPORT_HPP

#include <functional>
#include <vector>

#include "mcinet/ops.hpp"
#include "oracles.hpp"

namespace testing {

using mcinet::Index;
using mcinet::Shape;
using TD = mcinet::Tensor<double>;
using VD = mcinet::Var<double>;

inline double max_abs_diff(const TD& a, const TD& b) {
  if (a.shape() != b.shape()) return INFINITY;
  return a.size() == 0 ? 0.0 : (a.data() - b.data()).cwiseAbs().maxCoeff();
}

/// Scalar projection <y, r> for a fixed random r, so vector-valued ops can be
/// differentiated through backward().
inline VD project(const VD& y, const TD& r) {
  const auto flat = mcinet::reshape(y, Shape{1, y.value().size()});
  return mcinet::matmul(flat, VD::constant(r.reshaped(Shape{r.size(), 1})));
}

using OpFn = std::function<VD(const std::vector<VD>&)>;

/// Largest |analytic - central difference| over every input entry, relative
/// to max(1, |numeric|).
inline double op_gradient_error(const OpFn& f, std::vector<TD> inputs, std::uint64_t seed = 1,
                                double step = 1e-6) {
  mcinet::Rng rng(seed);
  std::vector<VD> leaves;
  for (const auto& t : inputs) leaves.push_back(VD::leaf(t, true));
  const VD y = f(leaves);
  const TD r = oracle::random_tensor(y.shape(), rng);
  mcinet::backward(project(y, r));

  double worst = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (Index i = 0; i < inputs[k].size(); ++i) {
      auto eval = [&](double delta) {
        std::vector<VD> consts;
        for (std::size_t j = 0; j < inputs.size(); ++j) {
          TD t = inputs[j];
          if (j == k) t[i] += delta;
          consts.push_back(VD::constant(t));
        }
        return project(f(consts), r).value().item();
      };
      const double numeric = (eval(step) - eval(-step)) / (2 * step);
      const double analytic = leaves[k].has_grad() ? leaves[k].grad()[i] : 0.0;
      worst = std::max(worst, std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric)));
    }
  }
  return worst;
}

}  // namespace testing

#endif  // MCINET_TESTS_SUPPORT_HPP
