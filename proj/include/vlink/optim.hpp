#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "vlink/layers.hpp"

namespace vlink {

// Optimizers update parameter values in place from the grads accumulated by
// backward(). Accumulator buffers are aligned with the parameter registry
// order and are checkpointed so training resumes bit-identically.

class RmsProp {
public:
    RmsProp() = default;
    explicit RmsProp(double lr, double decay = 0.9, double eps = 1e-8)
        : lr_(lr), decay_(decay), eps_(eps) {}

    void step(std::vector<NamedParam>& params) {
        ensure(params);
        for (size_t i = 0; i < params.size(); ++i) {
            Tensor& p = params[i].node->value;
            Tensor& g = params[i].node->grad;
            Tensor& s = sq_[i];
            for (int64_t j = 0; j < p.numel(); ++j) {
                s[j] = decay_ * s[j] + (1.0 - decay_) * g[j] * g[j];
                p[j] -= lr_ * g[j] / (std::sqrt(s[j]) + eps_);
            }
        }
    }

    double learning_rate() const { return lr_; }
    void set_learning_rate(double lr) { lr_ = lr; }

    std::vector<Tensor>& buffers() { return sq_; }

private:
    void ensure(const std::vector<NamedParam>& params) {
        if (sq_.size() == params.size()) return;
        sq_.clear();
        for (const auto& p : params) sq_.push_back(Tensor(p.node->value.shape()));
    }

    double lr_ = 1e-3;
    double decay_ = 0.9;
    double eps_ = 1e-8;
    std::vector<Tensor> sq_;
};

class Adam {
public:
    Adam() = default;
    Adam(double lr, double beta1, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(std::vector<NamedParam>& params) {
        ensure(params);
        ++t_;
        double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (size_t i = 0; i < params.size(); ++i) {
            Tensor& p = params[i].node->value;
            Tensor& g = params[i].node->grad;
            Tensor& m = m_[i];
            Tensor& v = v_[i];
            for (int64_t j = 0; j < p.numel(); ++j) {
                m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
                v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
                p[j] -= lr_ * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_);
            }
        }
    }

    double learning_rate() const { return lr_; }
    void set_learning_rate(double lr) { lr_ = lr; }

    int64_t& step_count() { return t_; }
    std::vector<Tensor>& first_moments() { return m_; }
    std::vector<Tensor>& second_moments() { return v_; }

private:
    void ensure(const std::vector<NamedParam>& params) {
        if (m_.size() == params.size()) return;
        m_.clear();
        v_.clear();
        for (const auto& p : params) {
            m_.push_back(Tensor(p.node->value.shape()));
            v_.push_back(Tensor(p.node->value.shape()));
        }
    }

    double lr_ = 1e-4;
    double beta1_ = 0.5;
    double beta2_ = 0.999;
    double eps_ = 1e-8;
    int64_t t_ = 0;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
};

}  // namespace vlink
