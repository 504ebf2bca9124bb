#pragma once

#include "mcbm/rng.hpp"
#include "mcbm/tensor.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace mcbm::diff {

struct Parameter {
    std::string name;  // dotted path, e.g. "encoder.layer0.weight"
    Tensor tensor;
};

// Ordered set of named trainable tensors. Names are unique.
class ParameterStore {
public:
    // Registers a parameter initialised U(-bound, bound) from a stream keyed
    // by (seed, name), so the same name always receives the same values.
    Tensor create_uniform(const std::string& name, Shape shape, double bound, std::uint64_t seed);
    Tensor create(const std::string& name, Tensor value);

    const std::vector<Parameter>& all() const noexcept { return params_; }
    std::vector<Parameter>& all() noexcept { return params_; }
    const Parameter* find(const std::string& name) const;
    std::size_t scalar_count() const;
    void zero_grad();

private:
    std::vector<Parameter> params_;
};

enum class OptimizerKind { SGD, Adam };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::Adam;
    double learning_rate = 1e-3;
    double momentum = 0.0;
    double weight_decay = 0.0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
};

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(const std::string& s);

struct MomentBuffers {
    std::vector<double> first;   // SGD momentum buffer or Adam m
    std::vector<double> second;  // Adam v (empty for SGD)
};

// SGD with momentum or Adam. Weight decay is added to the gradient (L2).
class Optimizer {
public:
    explicit Optimizer(OptimizerConfig config) : config_(config) {}

    // One update of every parameter that has a gradient, at rate lr.
    void step(std::vector<Parameter>& params, double lr);
    void step(std::vector<Parameter>& params) { step(params, config_.learning_rate); }

    const OptimizerConfig& config() const noexcept { return config_; }
    std::uint64_t step_count() const noexcept { return step_count_; }
    const std::map<std::string, MomentBuffers>& moments() const noexcept { return moments_; }
    void restore(std::uint64_t step_count, std::map<std::string, MomentBuffers> moments);

private:
    OptimizerConfig config_;
    std::uint64_t step_count_ = 0;
    std::map<std::string, MomentBuffers> moments_;
};

// lr(epoch) = base_lr * decay^floor(epoch / step_size)
struct StepScheduler {
    int step_size_epochs = 20;
    double decay_factor = 0.1;

    double lr(double base_lr, int epoch) const;
};

void zero_grad(std::vector<Parameter>& params);

}  // namespace mcbm::diff
