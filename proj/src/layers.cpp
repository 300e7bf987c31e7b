#include "mcinet/layers.hpp"

#include <cmath>

namespace mcinet {

template <typename Scalar>
void add_conv_params(ParameterStore<Scalar>& store, Rng& rng, const std::string& name, Index cin,
                     Index cout, Index kernel) {
  const double fan_in = static_cast<double>(cin * kernel * kernel);
  const double stddev = std::sqrt(2.0 / fan_in);
  const double bound = 1.0 / std::sqrt(fan_in);
  Tensor<Scalar> w(Shape{cout, cin, kernel, kernel});
  for (Index i = 0; i < w.size(); ++i) w[i] = static_cast<Scalar>(rng.normal(0.0, stddev));
  Tensor<Scalar> b(Shape{cout});
  for (Index i = 0; i < b.size(); ++i) b[i] = static_cast<Scalar>(rng.uniform(-bound, bound));
  store.add(name + ".w", std::move(w));
  store.add(name + ".b", std::move(b));
}

template void add_conv_params<float>(ParameterStore<float>&, Rng&, const std::string&, Index, Index, Index);
template void add_conv_params<double>(ParameterStore<double>&, Rng&, const std::string&, Index, Index, Index);

}  // namespace mcinet
