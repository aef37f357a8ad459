#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "dumotion/common.hpp"
#include "dumotion/data.hpp"

namespace dumotion {

// Arrays are 0-based over noise levels: index t holds the DDPM quantities for
// math-notation step t+1, so alpha_bar[0] = f(1)/f(0) is the least-noised
// level and alpha_bar[T-1] the most.
struct NoiseSchedule {
    long T = 0;
    double s = 0.008;  // cosine shape parameter; lets checkpoints rebuild the schedule
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;

    void validate() const;
};

// Cosine schedule: alpha_bar ratios from f(t) = cos^2(((t/T)+s)/(1+s) * pi/2),
// betas clipped to (1e-8, 0.999) and alpha_bar rebuilt as the cumulative
// product so the three arrays stay consistent after clipping.
NoiseSchedule cosine_schedule(long T, double s = 0.008);

// sqrt(ab_t) * x0 + sqrt(1 - ab_t) * noise
template <typename S>
Mat<S> q_sample(const Mat<S>& x0, long t, const Mat<S>& noise, const NoiseSchedule& sched) {
    require(t >= 0 && t < sched.T, "q_sample: t out of range");
    require_shape(noise, x0.rows(), x0.cols(), "q_sample noise");
    const double ab = sched.alpha_bar[static_cast<size_t>(t)];
    return static_cast<S>(std::sqrt(ab)) * x0 + static_cast<S>(std::sqrt(1.0 - ab)) * noise;
}

// One reverse transition t -> t-1 with the clean-signal estimate substituted
// into the standard posterior mean; fixed variance beta_tilde. The t == 1
// step is deterministic (the level-0 posterior adds no noise).
template <typename S>
Mat<S> posterior_step(const Mat<S>& x0_hat, const Mat<S>& x_t, long t, const NoiseSchedule& sched,
                      const Mat<S>& noise) {
    require(t >= 1, "posterior_step: no prior step below t=1");
    require(t < sched.T, "posterior_step: t out of range");
    require_shape(x_t, x0_hat.rows(), x0_hat.cols(), "posterior x_t");
    require_shape(noise, x0_hat.rows(), x0_hat.cols(), "posterior noise");
    const double beta_t = sched.beta[static_cast<size_t>(t)];
    const double alpha_t = sched.alpha[static_cast<size_t>(t)];
    const double ab_t = sched.alpha_bar[static_cast<size_t>(t)];
    const double ab_prev = sched.alpha_bar[static_cast<size_t>(t - 1)];
    const double coef_x0 = std::sqrt(ab_prev) * beta_t / (1.0 - ab_t);
    const double coef_xt = std::sqrt(alpha_t) * (1.0 - ab_prev) / (1.0 - ab_t);
    Mat<S> mu = static_cast<S>(coef_x0) * x0_hat + static_cast<S>(coef_xt) * x_t;
    if (t == 1) return mu;
    const double beta_tilde = (1.0 - ab_prev) / (1.0 - ab_t) * beta_t;
    return mu + static_cast<S>(std::sqrt(beta_tilde)) * noise;
}

// Holistic x0 estimate for noisy (face, body) at level t. Audio features and
// any condition embedding are bound into the closure by the caller.
using Denoiser = std::function<MatF(const MatF& face_t, const MatF& body_t, long t)>;

struct SampleDims {
    Index frames;
    Index d_f;
    Index d_b;
    double fps;
};

// Ancestral sampling: x drawn standard normal, posterior steps at
// t = T-1 .. 1 (the last one deterministic), then one more denoiser call at
// t = 0 whose clean estimate is the returned motion.
MotionSequence sample_loop(const Denoiser& denoiser, const SampleDims& dims,
                           const NoiseSchedule& sched, uint64_t seed);

}  // namespace dumotion
