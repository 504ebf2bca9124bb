#include "mcbm/mlp.hpp"

#include "mcbm/errors.hpp"

#include <cmath>

namespace mcbm::diff {

Mlp::Mlp(ParameterStore& store, const std::string& prefix, const std::vector<std::size_t>& widths,
         std::uint64_t seed)
    : widths_(widths) {
    if (widths.size() < 2) {
        throw ConfigError("mlp '" + prefix + "' needs at least input and output widths");
    }
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        if (widths[i] == 0 || widths[i + 1] == 0) {
            throw ConfigError("mlp '" + prefix + "' has a zero-width layer");
        }
        const double bound = 1.0 / std::sqrt(static_cast<double>(widths[i]));
        const std::string base = prefix + ".layer" + std::to_string(i);
        Linear l;
        l.weight = store.create_uniform(base + ".weight", {widths[i], widths[i + 1]}, bound, seed);
        l.bias = store.create_uniform(base + ".bias", {widths[i + 1]}, bound, seed);
        layers_.push_back(std::move(l));
    }
}

Tensor Mlp::forward(const Tensor& x) const {
    Tensor h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        h = layers_[i].forward(h);
        if (i + 1 < layers_.size()) {
            h = relu(h);
        }
    }
    return h;
}

std::size_t Mlp::parameter_count(const std::vector<std::size_t>& widths) {
    std::size_t n = 0;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        n += widths[i] * widths[i + 1] + widths[i + 1];
    }
    return n;
}

}  // namespace mcbm::diff
