#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "mpvoc/autodiff.hpp"

namespace mpvoc {

struct AdamWConfig {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// AdamW with bias correction, bound to a fixed parameter list at construction.
class AdamW {
  public:
    AdamW(std::vector<Parameter*> params, AdamWConfig cfg = {})
        : params_(std::move(params)), cfg_(cfg) {
        for (Parameter* p : params_) {
            m_.emplace_back(p->value.shape);
            v_.emplace_back(p->value.shape);
        }
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t pi = 0; pi < params_.size(); ++pi) {
            Parameter& p = *params_[pi];
            if (!p.grad.all_finite())
                throw std::runtime_error("AdamW: non-finite gradient for '" + p.name + "'");
            Tensor& m = m_[pi];
            Tensor& v = v_[pi];
            for (std::size_t i = 0; i < p.value.data.size(); ++i) {
                const double g = p.grad.data[i];
                m.data[i] = cfg_.beta1 * m.data[i] + (1.0 - cfg_.beta1) * g;
                v.data[i] = cfg_.beta2 * v.data[i] + (1.0 - cfg_.beta2) * g * g;
                const double mhat = m.data[i] / bc1;
                const double vhat = v.data[i] / bc2;
                p.value.data[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                                              cfg_.weight_decay * p.value.data[i]);
            }
        }
    }

    void zero_grad() {
        for (Parameter* p : params_) p->zero_grad();
    }

    int64_t step_count() const { return t_; }
    void set_step_count(int64_t t) { t_ = t; }
    const AdamWConfig& config() const { return cfg_; }
    std::vector<Tensor>& moment1() { return m_; }
    std::vector<Tensor>& moment2() { return v_; }
    const std::vector<Parameter*>& params() const { return params_; }

  private:
    std::vector<Parameter*> params_;
    AdamWConfig cfg_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    int64_t t_ = 0;
};

}  // namespace mpvoc
