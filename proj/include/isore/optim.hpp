#pragma once

#include "isore/layers.hpp"

namespace isore {

// Adam with bias correction; one instance per network component.
template <class T>
class Adam {
  public:
    Adam() = default;
    Adam(double lr, double beta1, double beta2, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(std::vector<ParamRef<T>> params) {
        if (m_.empty()) {
            for (const auto& p : params) {
                m_.emplace_back(p.value->size(), T(0));
                v_.emplace_back(p.value->size(), T(0));
            }
        }
        if (m_.size() != params.size()) throw Error("Adam: parameter set changed");
        ++t_;
        const double c1 = 1.0 - std::pow(beta1_, double(t_));
        const double c2 = 1.0 - std::pow(beta2_, double(t_));
        for (size_t i = 0; i < params.size(); ++i) {
            auto& w = *params[i].value;
            auto& g = *params[i].grad;
            auto& m = m_[i];
            auto& v = v_[i];
            if (w.size() != m.size()) throw Error("Adam: parameter size changed");
            for (size_t j = 0; j < w.size(); ++j) {
                const double gj = double(g[j]);
                const double mj = beta1_ * double(m[j]) + (1 - beta1_) * gj;
                const double vj = beta2_ * double(v[j]) + (1 - beta2_) * gj * gj;
                m[j] = T(mj);
                v[j] = T(vj);
                w[j] = T(double(w[j]) - lr_ * (mj / c1) / (std::sqrt(vj / c2) + eps_));
            }
        }
    }

    long long steps() const { return t_; }
    double learning_rate() const { return lr_; }

    // serialized alongside checkpoints
    std::vector<std::vector<T>>& moments_m() { return m_; }
    std::vector<std::vector<T>>& moments_v() { return v_; }
    void set_steps(long long t) { t_ = t; }

  private:
    double lr_ = 1e-4, beta1_ = 0.5, beta2_ = 0.999, eps_ = 1e-8;
    long long t_ = 0;
    std::vector<std::vector<T>> m_, v_;
};

template <class T>
void zero_grads(std::vector<ParamRef<T>> params) {
    for (auto& p : params) std::fill(p.grad->begin(), p.grad->end(), T(0));
}

}  // namespace isore
