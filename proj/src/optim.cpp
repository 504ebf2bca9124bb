#include "mcbm/optim.hpp"

#include "mcbm/errors.hpp"

#include <cmath>

namespace mcbm::diff {

Tensor ParameterStore::create_uniform(const std::string& name, Shape shape, double bound,
                                      std::uint64_t seed) {
    RngStream rng(seed, "param:" + name);
    std::vector<double> v(numel(shape));
    for (auto& x : v) {
        x = rng.uniform(-bound, bound);
    }
    return create(name, Tensor::from(std::move(shape), std::move(v)));
}

Tensor ParameterStore::create(const std::string& name, Tensor value) {
    if (find(name) != nullptr) {
        throw UsageError("parameter name registered twice: " + name);
    }
    Tensor t = value.clone(true);
    params_.push_back({name, t});
    return t;
}

const Parameter* ParameterStore::find(const std::string& name) const {
    for (const auto& p : params_) {
        if (p.name == name) {
            return &p;
        }
    }
    return nullptr;
}

std::size_t ParameterStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) {
        n += p.tensor.numel();
    }
    return n;
}

void ParameterStore::zero_grad() { diff::zero_grad(params_); }

void zero_grad(std::vector<Parameter>& params) {
    for (auto& p : params) {
        p.tensor.zero_grad();
    }
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::SGD ? "sgd" : "adam"; }

OptimizerKind optimizer_kind_from_string(const std::string& s) {
    if (s == "sgd" || s == "SGD") {
        return OptimizerKind::SGD;
    }
    if (s == "adam" || s == "Adam") {
        return OptimizerKind::Adam;
    }
    throw ConfigError("unknown optimizer '" + s + "' (expected sgd or adam)");
}

void Optimizer::step(std::vector<Parameter>& params, double lr) {
    ++step_count_;
    const auto& c = config_;
    for (auto& p : params) {
        if (!p.tensor.has_grad()) {
            continue;
        }
        auto w = p.tensor.mutable_values();
        const auto g = p.tensor.grad();
        auto& buf = moments_[p.name];
        if (buf.first.size() != w.size()) {
            buf.first.assign(w.size(), 0.0);
        }
        if (c.kind == OptimizerKind::SGD) {
            for (std::size_t i = 0; i < w.size(); ++i) {
                double gi = g[i] + c.weight_decay * w[i];
                if (c.momentum != 0.0) {
                    // The first step seeds the buffer with the raw gradient.
                    buf.first[i] = step_count_ == 1 ? gi : c.momentum * buf.first[i] + gi;
                    gi = buf.first[i];
                }
                w[i] -= lr * gi;
            }
        } else {
            if (buf.second.size() != w.size()) {
                buf.second.assign(w.size(), 0.0);
            }
            const double t = static_cast<double>(step_count_);
            const double bc1 = 1.0 - std::pow(c.adam_beta1, t);
            const double bc2 = 1.0 - std::pow(c.adam_beta2, t);
            for (std::size_t i = 0; i < w.size(); ++i) {
                const double gi = g[i] + c.weight_decay * w[i];
                buf.first[i] = c.adam_beta1 * buf.first[i] + (1.0 - c.adam_beta1) * gi;
                buf.second[i] = c.adam_beta2 * buf.second[i] + (1.0 - c.adam_beta2) * gi * gi;
                const double mhat = buf.first[i] / bc1;
                const double vhat = buf.second[i] / bc2;
                w[i] -= lr * mhat / (std::sqrt(vhat) + c.adam_eps);
            }
        }
    }
}

void Optimizer::restore(std::uint64_t step_count, std::map<std::string, MomentBuffers> moments) {
    step_count_ = step_count;
    moments_ = std::move(moments);
}

double StepScheduler::lr(double base_lr, int epoch) const {
    if (step_size_epochs <= 0 || !(decay_factor > 0.0) || decay_factor > 1.0) {
        throw ConfigError("scheduler: step size must be positive and decay in (0, 1]");
    }
    return base_lr * std::pow(decay_factor, static_cast<double>(epoch / step_size_epochs));
}

}  // namespace mcbm::diff
