#pragma once

#include "mcbm/rng.hpp"
#include "mcbm/tensor.hpp"

#include <span>

namespace mcbm::diff {

inline constexpr double kProbClamp = 1e-12;

// Mean over the batch of -log softmax(logits)[label]; logits [B,K].
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

// Mean over the batch; prob is [B] or [B,1] and is clamped to
// [1e-12, 1 - 1e-12]. Clamped entries receive no gradient.
Tensor binary_cross_entropy(const Tensor& prob, std::span<const double> labels);

// Same quantity computed from logits with softplus; exact for any logit.
Tensor binary_cross_entropy_with_logits(const Tensor& logits, std::span<const double> labels);

// Mean over the batch of the squared L2 distance per row. pred and target
// have identical shape; rank-1 inputs are one value per row.
Tensor mse(const Tensor& pred, const Tensor& target);

// mu + sigma * eps, eps ~ N(0, I) drawn from rng. sigma == 0 returns mu
// itself without touching rng.
Tensor gaussian_reparam_sample(const Tensor& mu, double sigma, RngStream& rng);

// KL(N(mu_p, sigma_p^2 I) || N(mu_q, sigma_q^2 I)) for d-dimensional
// vectors. For rank-2 inputs [B,d] the per-row divergences are averaged.
Tensor kl_diag_gaussians(const Tensor& mu_p, double sigma_p, const Tensor& mu_q, double sigma_q);

}  // namespace mcbm::diff
