#include "dumotion/schedule.hpp"

#include <algorithm>
#include <numbers>

#include "dumotion/rng.hpp"

namespace dumotion {

void NoiseSchedule::validate() const {
    require(T >= 2, "schedule needs T >= 2");
    require(beta.size() == static_cast<size_t>(T) && alpha.size() == beta.size() &&
                alpha_bar.size() == beta.size(),
            "schedule arrays must have length T");
    for (size_t t = 0; t < beta.size(); ++t) {
        require(beta[t] > 0 && beta[t] < 1, "beta out of (0,1)");
        if (t > 0) require(alpha_bar[t] < alpha_bar[t - 1], "alpha_bar must strictly decrease");
    }
    require(alpha_bar.front() > 0.99 && alpha_bar.front() < 1, "alpha_bar[0] must sit in (0.99,1)");
    if (T >= 100) require(alpha_bar.back() < 0.01, "alpha_bar[T-1] must fall below 0.01");
}

NoiseSchedule cosine_schedule(long T, double s) {
    require(T >= 2, "cosine_schedule: T must be >= 2");
    require(s > 0, "cosine_schedule: s must be > 0");
    auto f = [&](double t) {
        const double x = ((t / static_cast<double>(T)) + s) / (1.0 + s) * std::numbers::pi / 2.0;
        const double c = std::cos(x);
        return c * c;
    };
    const double f0 = f(0);
    NoiseSchedule sched;
    sched.T = T;
    sched.s = s;
    sched.beta.resize(static_cast<size_t>(T));
    sched.alpha.resize(static_cast<size_t>(T));
    sched.alpha_bar.resize(static_cast<size_t>(T));
    double prev_ab_raw = 1.0;
    double ab = 1.0;
    for (long t = 0; t < T; ++t) {
        const double ab_raw = f(static_cast<double>(t + 1)) / f0;
        double beta = 1.0 - ab_raw / prev_ab_raw;
        beta = std::clamp(beta, 1e-8, 0.999);
        prev_ab_raw = ab_raw;
        sched.beta[static_cast<size_t>(t)] = beta;
        sched.alpha[static_cast<size_t>(t)] = 1.0 - beta;
        ab *= 1.0 - beta;
        sched.alpha_bar[static_cast<size_t>(t)] = ab;
    }
    sched.validate();
    return sched;
}

MotionSequence sample_loop(const Denoiser& denoiser, const SampleDims& dims,
                           const NoiseSchedule& sched, uint64_t seed) {
    require(dims.frames >= 2 && dims.d_f >= 1 && dims.d_b >= 1, "sample_loop: bad dims");
    const Index d_h = dims.d_f + dims.d_b;
    Rng rng(seed);
    MatF x = rng.normal_matrix<float>(dims.frames, d_h);

    auto denoise = [&](long t) {
        MatF h0 = denoiser(x.leftCols(dims.d_f), x.rightCols(dims.d_b), t);
        require(h0.rows() == dims.frames && h0.cols() == d_h,
                "sample_loop: denoiser output width must be D_F + D_B");
        require(all_finite(h0), "sample_loop: denoiser produced non-finite values");
        return h0;
    };

    for (long t = sched.T - 1; t >= 1; --t) {
        const MatF h0 = denoise(t);
        const MatF noise =
            t == 1 ? MatF::Zero(dims.frames, d_h) : rng.normal_matrix<float>(dims.frames, d_h);
        x = posterior_step(h0, x, t, sched, noise);
    }
    const MatF h0 = denoise(0);

    MotionSequence out;
    out.face = h0.leftCols(dims.d_f);
    out.body = h0.rightCols(dims.d_b);
    out.fps = dims.fps;
    return out;
}

}  // namespace dumotion
