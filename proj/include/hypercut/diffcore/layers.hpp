#pragma once

// Parameter registration and graph wiring for the standard layers. A layer is
// identified by a name prefix; its tensors are "<prefix>.w" and "<prefix>.b".

#include <random>
#include <string>

#include "hypercut/diffcore/graph.hpp"
#include "hypercut/diffcore/parameters.hpp"

namespace hypercut::diff {

template <typename T>
void add_conv_params(BasicParameterSet<T>& params, const std::string& prefix, int in_channels,
                     int out_channels, int kernel, std::mt19937_64& rng) {
  auto& w = params.add(prefix + ".w", {out_channels, in_channels, kernel, kernel});
  init_glorot_uniform(w.value, in_channels * kernel * kernel, out_channels * kernel * kernel, rng);
  params.add(prefix + ".b", {out_channels});
}

template <typename T>
void add_conv_transpose_params(BasicParameterSet<T>& params, const std::string& prefix, int in_channels,
                               int out_channels, int kernel, std::mt19937_64& rng) {
  auto& w = params.add(prefix + ".w", {in_channels, out_channels, kernel, kernel});
  init_glorot_uniform(w.value, in_channels * kernel * kernel, out_channels * kernel * kernel, rng);
  params.add(prefix + ".b", {out_channels});
}

template <typename T>
void add_linear_params(BasicParameterSet<T>& params, const std::string& prefix, int in_features,
                       int out_features, std::mt19937_64& rng) {
  auto& w = params.add(prefix + ".w", {in_features, out_features});
  init_glorot_uniform(w.value, in_features, out_features, rng);
  params.add(prefix + ".b", {out_features});
}

template <typename T>
Var conv_layer(BasicGraph<T>& g, BasicParameterSet<T>& params, const std::string& prefix, Var x,
               int stride, int pad) {
  Var y = g.conv2d(x, g.parameter(params.at(prefix + ".w")), g.parameter(params.at(prefix + ".b")), stride, pad);
  g.set_label(y, prefix);
  return y;
}

template <typename T>
Var conv_transpose_layer(BasicGraph<T>& g, BasicParameterSet<T>& params, const std::string& prefix, Var x,
                         int stride, int pad, int output_pad) {
  Var y = g.conv_transpose2d(x, g.parameter(params.at(prefix + ".w")), g.parameter(params.at(prefix + ".b")),
                             stride, pad, output_pad);
  g.set_label(y, prefix);
  return y;
}

template <typename T>
Var linear_layer(BasicGraph<T>& g, BasicParameterSet<T>& params, const std::string& prefix, Var x) {
  Var y = g.add_bias(g.matmul(x, g.parameter(params.at(prefix + ".w"))), g.parameter(params.at(prefix + ".b")));
  g.set_label(y, prefix);
  return y;
}

}  // namespace hypercut::diff
