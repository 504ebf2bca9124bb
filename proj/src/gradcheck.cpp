#include "mcbm/gradcheck.hpp"

#include "mcbm/errors.hpp"

#include <algorithm>
#include <cmath>

namespace mcbm::diff {

double relative_error(double analytic, double numeric, double floor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

namespace {

void record(GradCheckResult& r, std::size_t idx, double a, double n) {
    const double e = relative_error(a, n);
    if (e > r.max_relative_error || (idx == 0 && r.max_relative_error == 0.0)) {
        r.max_relative_error = e;
        r.worst_index = idx;
        r.analytic = a;
        r.numeric = n;
    }
}

}  // namespace

GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, Shape shape,
                           std::span<const double> point, double eps) {
    std::vector<double> x(point.begin(), point.end());
    Tensor leaf = Tensor::from(shape, x, true);
    Tensor out = f(leaf);
    if (out.numel() != 1) {
        throw UsageError("grad_check: function must be scalar-valued");
    }
    backward(out);
    std::vector<double> analytic(x.size(), 0.0);
    if (leaf.has_grad()) {
        std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());
    }

    GradCheckResult r;
    for (std::size_t i = 0; i < x.size(); ++i) {
        std::vector<double> xp = x, xm = x;
        xp[i] += eps;
        xm[i] -= eps;
        const double fp = f(Tensor::from(shape, xp)).item();
        const double fm = f(Tensor::from(shape, xm)).item();
        record(r, i, analytic[i], (fp - fm) / (2.0 * eps));
    }
    return r;
}

GradCheckResult grad_check_parameters(const std::function<Tensor()>& loss_fn,
                                      std::vector<Parameter>& params, double eps) {
    zero_grad(params);
    backward(loss_fn());

    GradCheckResult r;
    std::size_t flat = 0;
    for (auto& p : params) {
        auto w = p.tensor.mutable_values();
        const std::vector<double> g = p.tensor.has_grad()
                                          ? std::vector<double>(p.tensor.grad().begin(), p.tensor.grad().end())
                                          : std::vector<double>(w.size(), 0.0);
        for (std::size_t i = 0; i < w.size(); ++i, ++flat) {
            const double orig = w[i];
            w[i] = orig + eps;
            const double fp = loss_fn().item();
            w[i] = orig - eps;
            const double fm = loss_fn().item();
            w[i] = orig;
            record(r, flat, g[i], (fp - fm) / (2.0 * eps));
        }
    }
    zero_grad(params);
    return r;
}

}  // namespace mcbm::diff
