#include "agile/backbone.hpp"

#include <cmath>
#include <string>

namespace agile {

std::string shape_string(const std::vector<int>& shape) {
  std::string s = "{";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "}";
}

bool all_finite(const Tensor& t) {
  for (double v : t.data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor Backbone::denoise(const Latent& x_t, const TextEmbedding& e, const ConditioningInput& cond,
                         AttentionHooks* hooks) const {
  return forward(x_t.values, x_t.timestep, ag::constant(e.tokens), cond, hooks, false).eps.value();
}

}  // namespace agile
