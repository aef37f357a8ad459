#pragma once

#include <cmath>
#include <unordered_set>
#include <vector>

#include "dumotion/params.hpp"

namespace dumotion {

// Adam over a ParamStore. Gradients arrive as one matrix per entry in store
// order; frozen entries are skipped entirely (no moment updates), which is
// what keeps their bytes bit-identical across a finetune.
template <typename S>
class Adam {
  public:
    Adam(ParamStore<S>& ps, double lr, double beta1 = 0.9, double beta2 = 0.99,
         double eps = 1e-8)
        : ps_(&ps), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
        reset_state();
    }

    void reset_state() {
        m_.clear();
        v_.clear();
        for (const auto& e : ps_->entries()) {
            m_.push_back(Mat<S>::Zero(e.value.rows(), e.value.cols()));
            v_.push_back(Mat<S>::Zero(e.value.rows(), e.value.cols()));
        }
        frozen_.assign(ps_->size(), false);
        t_ = 0;
    }

    void set_frozen(const std::vector<std::string>& names) {
        std::unordered_set<std::string> set(names.begin(), names.end());
        const auto& entries = ps_->entries();
        for (size_t i = 0; i < entries.size(); ++i) frozen_[i] = set.count(entries[i].name) > 0;
    }

    void step(const std::vector<Mat<S>>& grads) {
        require(grads.size() == ps_->size(), "Adam: gradient list size mismatch");
        ++t_;
        const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
        auto& entries = ps_->entries();
        for (size_t i = 0; i < entries.size(); ++i) {
            if (frozen_[i]) continue;
            Mat<S>& w = entries[i].value;
            require(grads[i].rows() == w.rows() && grads[i].cols() == w.cols(),
                    "Adam: gradient shape mismatch for " + entries[i].name);
            m_[i] = static_cast<S>(b1_) * m_[i] + static_cast<S>(1.0 - b1_) * grads[i];
            v_[i] = (static_cast<S>(b2_) * v_[i].array() +
                     static_cast<S>(1.0 - b2_) * grads[i].array().square())
                        .matrix();
            const auto m_hat = m_[i].array() / static_cast<S>(bc1);
            const auto v_hat = v_[i].array() / static_cast<S>(bc2);
            w.array() -= static_cast<S>(lr_) * m_hat / (v_hat.sqrt() + static_cast<S>(eps_));
        }
    }

    long iterations() const { return t_; }
    void set_iterations(long t) { t_ = t; }
    std::vector<Mat<S>>& moment1() { return m_; }
    std::vector<Mat<S>>& moment2() { return v_; }
    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }

  private:
    ParamStore<S>* ps_;
    std::vector<Mat<S>> m_, v_;
    std::vector<bool> frozen_;
    long t_ = 0;
    double lr_, b1_, b2_, eps_;
};

// Scales grads in place so their global L2 norm is at most max_norm
// (no-op when max_norm <= 0). Returns the pre-clip norm.
template <typename S>
double clip_grad_norm(std::vector<Mat<S>>& grads, double max_norm) {
    double sq = 0;
    for (const auto& g : grads) sq += static_cast<double>(g.template cast<double>().squaredNorm());
    const double norm = std::sqrt(sq);
    if (max_norm > 0 && norm > max_norm && norm > 0) {
        const S f = static_cast<S>(max_norm / norm);
        for (auto& g : grads) g *= f;
    }
    return norm;
}

}  // namespace dumotion
