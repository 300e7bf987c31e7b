#ifndef MCINET_LAYERS_HPP
#define MCINET_LAYERS_HPP

#include <string>

#include "mcinet/autograd.hpp"
#include "mcinet/ops.hpp"
#include "mcinet/random.hpp"

namespace mcinet {

/// Weights of a 1x1 convolution acting as a per-position fully connected map.
template <typename Scalar>
struct Linear {
  Var<Scalar> weight;  // [out, in, 1, 1]
  Var<Scalar> bias;    // [out]

  Index out_channels() const { return weight.dim(0); }
  Var<Scalar> operator()(const Var<Scalar>& x) const { return conv2d(x, weight, bias); }
};

template <typename Scalar>
Linear<Scalar> bind_linear(Binding<Scalar>& bind, const std::string& name) {
  return {bind(name + ".w"), bind(name + ".b")};
}

/// Registers `name.w` [cout, cin, k, k] (He-normal) and `name.b` [cout]
/// (uniform in ±1/sqrt(fan_in)).
template <typename Scalar>
void add_conv_params(ParameterStore<Scalar>& store, Rng& rng, const std::string& name, Index cin,
                     Index cout, Index kernel);

/// Padding that keeps the spatial size at stride 1.
inline Conv2dSpec same_padding(Index kernel, Index dilation = 1, Index stride = 1) {
  return {stride, dilation * (kernel - 1) / 2, dilation};
}

/// Applies the convolution registered under `name`.
template <typename Scalar>
Var<Scalar> conv(Binding<Scalar>& bind, const std::string& name, const Var<Scalar>& x,
                 const Conv2dSpec& spec) {
  return conv2d(x, bind(name + ".w"), bind(name + ".b"), spec);
}

/// Kernel size of the convolution registered under `name`.
template <typename Scalar>
Index kernel_of(const ParameterStore<Scalar>& store, const std::string& name) {
  return store.value(name + ".w").dim(2);
}

/// Two convolutions joined by a rectified-linear unit (no trailing activation).
template <typename Scalar>
Var<Scalar> conv_block(Binding<Scalar>& bind, const std::string& name, const Var<Scalar>& x) {
  const Index k0 = kernel_of(bind.store(), name + ".0");
  const Index k1 = kernel_of(bind.store(), name + ".1");
  return conv(bind, name + ".1", relu(conv(bind, name + ".0", x, same_padding(k0))), same_padding(k1));
}

template <typename Scalar>
void add_conv_block_params(ParameterStore<Scalar>& store, Rng& rng, const std::string& name,
                           Index cin, Index cout, Index kernel = 3) {
  add_conv_params(store, rng, name + ".0", cin, cout, kernel);
  add_conv_params(store, rng, name + ".1", cout, cout, kernel);
}

}  // namespace mcinet

#endif  // MCINET_LAYERS_HPP
