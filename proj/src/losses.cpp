#include "mcbm/losses.hpp"

#include "mcbm/errors.hpp"

#include <algorithm>
#include <cmath>

namespace mcbm::diff {

namespace {

using detail::Node;

std::size_t batch_of(const Tensor& t) { return t.rank() == 0 ? 1 : t.shape()[0]; }

Tensor finish(const char* op, double value, std::shared_ptr<Node> parent,
              std::vector<double> dvalue) {
    auto n = std::make_shared<Node>();
    n->shape = {};
    n->value = {value};
    if (!std::isfinite(value) && finite_checks()) {
        throw NumericError(std::string("non-finite value produced by ") + op);
    }
    if (parent->requires_grad) {
        n->requires_grad = true;
        n->parents = {parent};
        n->backward_fn = [parent, d = std::move(dvalue)](Node& self) {
            auto& g = parent->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[0] * d[i];
            }
        };
    }
    return Tensor(std::move(n));
}

void require_binary_shape(const Tensor& t, std::size_t labels, const char* op) {
    const bool ok = (t.rank() == 1 && t.numel() == labels) ||
                    (t.rank() == 2 && t.cols() == 1 && t.rows() == labels);
    if (!ok) {
        throw DimensionError(std::string(op) + ": shape " + to_string(t.shape()) + " vs " +
                             std::to_string(labels) + " labels");
    }
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double stable_sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
    if (logits.rank() != 2 || logits.rows() != labels.size() || labels.empty()) {
        throw DimensionError("cross_entropy: logits " + to_string(logits.shape()) + " vs " +
                             std::to_string(labels.size()) + " labels");
    }
    const std::size_t b = logits.rows(), k = logits.cols();
    std::vector<double> d(b * k);
    double total = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= k) {
            throw DomainError("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                              std::to_string(k) + ")");
        }
        double mx = -INFINITY;
        for (std::size_t j = 0; j < k; ++j) {
            mx = std::max(mx, logits.at(i, j));
        }
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            s += std::exp(logits.at(i, j) - mx);
        }
        const double lse = mx + std::log(s);
        total += lse - logits.at(i, static_cast<std::size_t>(y));
        for (std::size_t j = 0; j < k; ++j) {
            const double p = std::exp(logits.at(i, j) - lse);
            d[i * k + j] = (p - (static_cast<std::size_t>(y) == j ? 1.0 : 0.0)) / static_cast<double>(b);
        }
    }
    return finish("cross_entropy", total / static_cast<double>(b), logits.node(), std::move(d));
}

Tensor binary_cross_entropy(const Tensor& prob, std::span<const double> labels) {
    require_binary_shape(prob, labels.size(), "binary_cross_entropy");
    const std::size_t b = labels.size();
    std::vector<double> d(b);
    double total = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        const double y = labels[i];
        const double raw = prob.at(i);
        const double p = std::clamp(raw, kProbClamp, 1.0 - kProbClamp);
        total -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
        const bool clamped = raw < kProbClamp || raw > 1.0 - kProbClamp;
        d[i] = clamped ? 0.0 : (-y / p + (1.0 - y) / (1.0 - p)) / static_cast<double>(b);
    }
    return finish("binary_cross_entropy", total / static_cast<double>(b), prob.node(), std::move(d));
}

Tensor binary_cross_entropy_with_logits(const Tensor& logits, std::span<const double> labels) {
    require_binary_shape(logits, labels.size(), "binary_cross_entropy_with_logits");
    const std::size_t b = labels.size();
    std::vector<double> d(b);
    double total = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        const double x = logits.at(i);
        const double y = labels[i];
        total += softplus(x) - y * x;
        d[i] = (stable_sigmoid(x) - y) / static_cast<double>(b);
    }
    return finish("binary_cross_entropy_with_logits", total / static_cast<double>(b), logits.node(),
                  std::move(d));
}

Tensor mse(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape()) {
        throw DimensionError("mse: shape mismatch " + to_string(pred.shape()) + " vs " +
                             to_string(target.shape()));
    }
    return scale(sum(square(sub(pred, target))), 1.0 / static_cast<double>(batch_of(pred)));
}

Tensor gaussian_reparam_sample(const Tensor& mu, double sigma, RngStream& rng) {
    if (!std::isfinite(sigma)) {
        throw DomainError("gaussian_reparam_sample: sigma must be finite");
    }
    if (sigma < 0.0) {
        throw DomainError("gaussian_reparam_sample: negative sigma");
    }
    if (sigma == 0.0) {
        return mu;
    }
    std::vector<double> noise(mu.numel());
    for (auto& e : noise) {
        e = sigma * rng.normal();
    }
    return add(mu, Tensor::from(mu.shape(), std::move(noise)));
}

Tensor kl_diag_gaussians(const Tensor& mu_p, double sigma_p, const Tensor& mu_q, double sigma_q) {
    if (!(sigma_p > 0.0) || !(sigma_q > 0.0)) {
        throw DomainError("kl_diag_gaussians: sigmas must be positive");
    }
    if (mu_p.shape() != mu_q.shape() || mu_p.rank() == 0 || mu_p.rank() > 2) {
        throw DimensionError("kl_diag_gaussians: shapes " + to_string(mu_p.shape()) + " and " +
                             to_string(mu_q.shape()));
    }
    const double rows = mu_p.rank() == 2 ? static_cast<double>(mu_p.rows()) : 1.0;
    const double d = static_cast<double>(mu_p.rank() == 2 ? mu_p.cols() : mu_p.numel());
    const double vp = sigma_p * sigma_p;
    const double vq = sigma_q * sigma_q;
    const double constant = 0.5 * (d * vp / vq - d + d * std::log(vq / vp));
    Tensor quad = scale(sum(square(sub(mu_p, mu_q))), 0.5 / (vq * rows));
    return constant == 0.0 ? quad : add_scalar(quad, constant);
}

}  // namespace mcbm::diff
