#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "kegraph/tensor.hpp"

namespace kegraph {

// Ordered, named parameter set. Order is insertion order and defines the
// deterministic order in which gradients are applied.
class ParamStore {
  public:
    size_t add(std::string name, Tensor value) {
        if (index_.count(name)) throw ContractError("ParamStore: duplicate parameter " + name);
        index_[name] = values_.size();
        names_.push_back(std::move(name));
        values_.push_back(std::move(value));
        return values_.size() - 1;
    }

    size_t count() const { return values_.size(); }
    const std::string& name(size_t i) const { return names_[i]; }
    Tensor& value(size_t i) { return values_[i]; }
    const Tensor& value(size_t i) const { return values_[i]; }

    Tensor& value(const std::string& name) { return values_[index_of(name)]; }
    const Tensor& value(const std::string& name) const {
        return values_[const_cast<ParamStore*>(this)->index_of(name)];
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    size_t index_of(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ReferenceError("ParamStore: unknown parameter " + name);
        return it->second;
    }

    bool bit_equal(const ParamStore& o) const {
        if (names_ != o.names_) return false;
        for (size_t i = 0; i < values_.size(); ++i)
            if (!values_[i].bit_equal(o.values_[i])) return false;
        return true;
    }

  private:
    std::vector<std::string> names_;
    std::vector<Tensor> values_;
    std::unordered_map<std::string, size_t> index_;
};

namespace detail {
inline void check_grads(const ParamStore& params, const std::vector<Tensor>& grads) {
    if (grads.size() != params.count()) throw DimensionError("optimizer: gradient count mismatch");
    for (size_t i = 0; i < grads.size(); ++i) {
        if (!grads[i].same_shape(params.value(i)))
            throw DimensionError("optimizer: gradient shape mismatch for " + params.name(i));
        if (!grads[i].all_finite())
            throw NumericError("optimizer: non-finite gradient for " + params.name(i));
    }
}
}  // namespace detail

class SgdOptimizer {
  public:
    explicit SgdOptimizer(double lr) : lr_(lr) {}

    void step(ParamStore& params, const std::vector<Tensor>& grads) {
        detail::check_grads(params, grads);
        for (size_t i = 0; i < params.count(); ++i) {
            Tensor& p = params.value(i);
            const Tensor& g = grads[i];
            for (size_t k = 0; k < p.size(); ++k) p[k] -= lr_ * g[k];
        }
    }

  private:
    double lr_;
};

class AdamOptimizer {
  public:
    explicit AdamOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999,
                           double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(ParamStore& params, const std::vector<Tensor>& grads) {
        detail::check_grads(params, grads);
        if (m_.empty()) {
            for (size_t i = 0; i < params.count(); ++i) {
                m_.emplace_back(params.value(i).rows(), params.value(i).cols());
                v_.emplace_back(params.value(i).rows(), params.value(i).cols());
            }
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (size_t i = 0; i < params.count(); ++i) {
            Tensor& p = params.value(i);
            const Tensor& g = grads[i];
            for (size_t k = 0; k < p.size(); ++k) {
                m_[i][k] = beta1_ * m_[i][k] + (1.0 - beta1_) * g[k];
                v_[i][k] = beta2_ * v_[i][k] + (1.0 - beta2_) * g[k] * g[k];
                const double mhat = m_[i][k] / bc1;
                const double vhat = v_[i][k] / bc2;
                p[k] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

  private:
    double lr_, beta1_, beta2_, eps_;
    size_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

}  // namespace kegraph
