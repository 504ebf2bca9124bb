#pragma once

#include "mcbm/optim.hpp"
#include "mcbm/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mcbm::diff {

struct Linear {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out]

    Tensor forward(const Tensor& x) const { return affine(x, weight, bias); }
};

// Fully connected stack with ReLU between layers and a linear output.
class Mlp {
public:
    Mlp() = default;
    // widths = {in, hidden..., out}. Parameters are registered as
    // "<prefix>.layer<i>.weight|bias" with PyTorch-style U(+-1/sqrt(fan_in)).
    Mlp(ParameterStore& store, const std::string& prefix, const std::vector<std::size_t>& widths,
        std::uint64_t seed);

    Tensor forward(const Tensor& x) const;
    std::size_t in_dim() const { return widths_.front(); }
    std::size_t out_dim() const { return widths_.back(); }
    const std::vector<std::size_t>& widths() const { return widths_; }
    bool empty() const { return layers_.empty(); }

    static std::size_t parameter_count(const std::vector<std::size_t>& widths);

private:
    std::vector<std::size_t> widths_;
    std::vector<Linear> layers_;
};

}  // namespace mcbm::diff
