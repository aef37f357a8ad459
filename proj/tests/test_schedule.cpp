#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "dumotion/rng.hpp"
#include "dumotion/schedule.hpp"
#include "support/test_util.hpp"

using namespace dumotion;
using testutil::max_abs_diff;
using testutil::rel_err;

namespace {

struct LdSchedule {
    std::vector<long double> beta, alpha_bar;
};

// independent extended-precision recompute of the cosine schedule, including
// the beta clip and the cumulative-product rebuild
LdSchedule ld_cosine(long T, long double s) {
    const long double pi = std::numbers::pi_v<long double>;
    auto f = [&](long double t) {
        const long double x = ((t / static_cast<long double>(T)) + s) / (1.0L + s) * pi / 2.0L;
        const long double c = std::cos(x);
        return c * c;
    };
    LdSchedule out;
    out.beta.resize(static_cast<size_t>(T));
    out.alpha_bar.resize(static_cast<size_t>(T));
    long double prev = 1.0L, ab = 1.0L;
    const long double f0 = f(0.0L);
    for (long t = 0; t < T; ++t) {
        const long double raw = f(static_cast<long double>(t + 1)) / f0;
        long double b = 1.0L - raw / prev;
        b = std::clamp(b, 1e-8L, 0.999L);
        prev = raw;
        ab *= 1.0L - b;
        out.beta[static_cast<size_t>(t)] = b;
        out.alpha_bar[static_cast<size_t>(t)] = ab;
    }
    return out;
}

struct PosteriorCoefs {
    long double c_x0, c_xt, sigma;
};

PosteriorCoefs ld_posterior_coefs(const NoiseSchedule& sched, long t) {
    const long double beta = sched.beta[static_cast<size_t>(t)];
    const long double alpha = sched.alpha[static_cast<size_t>(t)];
    const long double ab = sched.alpha_bar[static_cast<size_t>(t)];
    const long double ab_prev = sched.alpha_bar[static_cast<size_t>(t - 1)];
    PosteriorCoefs c;
    c.c_x0 = std::sqrt(ab_prev) * beta / (1.0L - ab);
    c.c_xt = std::sqrt(alpha) * (1.0L - ab_prev) / (1.0L - ab);
    c.sigma = t == 1 ? 0.0L : std::sqrt((1.0L - ab_prev) / (1.0L - ab) * beta);
    return c;
}

}  // namespace

TEST_CASE("cosine schedule satisfies its structural invariants") {
    const NoiseSchedule sched = cosine_schedule(1000);
    REQUIRE(sched.T == 1000);
    REQUIRE(sched.beta.size() == 1000);
    REQUIRE(sched.alpha.size() == 1000);
    REQUIRE(sched.alpha_bar.size() == 1000);
    CHECK(sched.s == 0.008);

    for (size_t t = 0; t < sched.beta.size(); ++t) {
        CAPTURE(t);
        CHECK(sched.beta[t] >= 1e-8);
        CHECK(sched.beta[t] <= 0.999);
        CHECK(sched.alpha[t] == 1.0 - sched.beta[t]);
        if (t > 0) {
            CHECK(sched.alpha_bar[t] < sched.alpha_bar[t - 1]);
            // cosine noise levels only ever get noisier
            CHECK(sched.beta[t] >= sched.beta[t - 1]);
        }
    }
    CHECK(sched.alpha_bar.front() > 0.99);
    CHECK(sched.alpha_bar.back() < 0.01);
    CHECK(sched.beta.back() == 0.999);  // the final ratio hits the clip
    CHECK_NOTHROW(sched.validate());

    CHECK_THROWS_AS(cosine_schedule(1), Error);
    CHECK_THROWS_AS(cosine_schedule(1000, 0.0), Error);
}

TEST_CASE("cosine schedule matches an extended-precision recompute") {
    for (long T : {50L, 200L, 1000L}) {
        CAPTURE(T);
        const NoiseSchedule sched = cosine_schedule(T);
        const LdSchedule oracle = ld_cosine(T, 0.008L);
        for (long t = 0; t < T; ++t) {
            CAPTURE(t);
            const auto u = static_cast<size_t>(t);
            CHECK(std::abs(static_cast<long double>(sched.beta[u]) - oracle.beta[u]) < 1e-12L);
            const long double ab_err =
                std::abs(static_cast<long double>(sched.alpha_bar[u]) - oracle.alpha_bar[u]) /
                oracle.alpha_bar[u];
            CHECK(ab_err < 1e-10L);
        }
    }
}

TEST_CASE("schedule validation rejects inconsistent arrays") {
    NoiseSchedule s = cosine_schedule(200);
    SUBCASE("beta out of range") {
        s.beta[5] = 0.0;
        CHECK_THROWS_AS(s.validate(), Error);
    }
    SUBCASE("alpha_bar not decreasing") {
        s.alpha_bar[10] = s.alpha_bar[9];
        CHECK_THROWS_AS(s.validate(), Error);
    }
    SUBCASE("length mismatch") {
        s.beta.pop_back();
        CHECK_THROWS_AS(s.validate(), Error);
    }
    SUBCASE("alpha_bar fails to start near 1") {
        s.alpha_bar[0] = 0.5;
        CHECK_THROWS_AS(s.validate(), Error);
    }
}

TEST_CASE("q_sample applies the closed-form marginal") {
    const NoiseSchedule sched = cosine_schedule(100);
    Rng rng(3);
    const Mat<double> x0 = rng.normal_matrix<double>(4, 5);
    const Mat<double> noise = rng.normal_matrix<double>(4, 5);

    for (long t : {0L, 17L, 99L}) {
        CAPTURE(t);
        const Mat<double> got = q_sample(x0, t, noise, sched);
        const double ab = sched.alpha_bar[static_cast<size_t>(t)];
        const Mat<double> want = std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * noise;
        CHECK(max_abs_diff(got, want) < 1e-15);
    }

    CHECK(max_abs_diff(Mat<double>(q_sample(x0, 0L, Mat<double>(Mat<double>::Zero(4, 5)), sched)),
                       Mat<double>(std::sqrt(sched.alpha_bar[0]) * x0)) < 1e-15);

    CHECK_THROWS_AS(q_sample(x0, 100L, noise, sched), Error);
    CHECK_THROWS_AS(q_sample(x0, -1L, noise, sched), Error);
    CHECK_THROWS_AS(q_sample(x0, 5L, Mat<double>(rng.normal_matrix<double>(4, 4)), sched),
                    ShapeError);
}

TEST_CASE("q_sample draws match the analytic marginal in distribution") {
    const NoiseSchedule sched = cosine_schedule(1000);
    const long t = 500;
    const double ab = sched.alpha_bar[static_cast<size_t>(t)];

    Rng rng(17);
    const Index dims = 8;
    const Mat<double> x0 = rng.normal_matrix<double>(1, dims);
    const int n = 2000;

    Mat<double> draws(n, dims);
    for (int i = 0; i < n; ++i)
        draws.row(i) = q_sample(x0, t, Mat<double>(rng.normal_matrix<double>(1, dims)), sched);

    const Mat<double> expected_mean = std::sqrt(ab) * x0;
    const double se = std::sqrt((1.0 - ab) / n);
    for (Index c = 0; c < dims; ++c) {
        CAPTURE(c);
        CHECK(std::abs(draws.col(c).mean() - expected_mean(0, c)) < 4.0 * se);
    }

    // pool every dimension's residuals for a tight variance estimate
    const Mat<double> resid = draws.rowwise() - expected_mean.row(0);
    const double var = resid.array().square().mean();
    CHECK(rel_err(var, 1.0 - ab) < 0.05);
}

TEST_CASE("posterior_step matches extended-precision coefficients") {
    const NoiseSchedule sched = cosine_schedule(50);
    Rng rng(9);
    const Mat<double> x0 = rng.normal_matrix<double>(3, 4);
    const Mat<double> x_t = rng.normal_matrix<double>(3, 4);
    const Mat<double> noise = rng.normal_matrix<double>(3, 4);

    for (long t : {1L, 7L, 25L, 49L}) {
        CAPTURE(t);
        const Mat<double> got = posterior_step(x0, x_t, t, sched, noise);
        const PosteriorCoefs c = ld_posterior_coefs(sched, t);
        Mat<double> want(3, 4);
        for (Index i = 0; i < 3; ++i)
            for (Index j = 0; j < 4; ++j)
                want(i, j) = static_cast<double>(c.c_x0 * x0(i, j) + c.c_xt * x_t(i, j) +
                                                 c.sigma * noise(i, j));
        for (Index i = 0; i < 3; ++i)
            for (Index j = 0; j < 4; ++j) {
                CAPTURE(i);
                CAPTURE(j);
                CHECK(rel_err(got(i, j), want(i, j)) < 1e-12);
            }
    }
}

TEST_CASE("posterior_step is deterministic at t=1 and rejects bad levels") {
    const NoiseSchedule sched = cosine_schedule(50);
    Rng rng(21);
    const Mat<double> x0 = rng.normal_matrix<double>(2, 3);
    const Mat<double> x_t = rng.normal_matrix<double>(2, 3);
    const Mat<double> n1 = rng.normal_matrix<double>(2, 3);
    const Mat<double> n2 = rng.normal_matrix<double>(2, 3);

    CHECK(max_abs_diff(posterior_step(x0, x_t, 1L, sched, n1),
                       posterior_step(x0, x_t, 1L, sched, n2)) == 0.0);
    CHECK(max_abs_diff(posterior_step(x0, x_t, 5L, sched, n1),
                       posterior_step(x0, x_t, 5L, sched, n2)) > 1e-4);

    CHECK_THROWS_AS(posterior_step(x0, x_t, 0L, sched, n1), Error);
    CHECK_THROWS_AS(posterior_step(x0, x_t, 50L, sched, n1), Error);
    CHECK_THROWS_AS(posterior_step(x0, Mat<double>(rng.normal_matrix<double>(2, 4)), 5L, sched, n1),
                    ShapeError);
}

TEST_CASE("posterior_step collapses to the current state when its beta is tiny") {
    // big early noise, then an almost-noiseless level: the posterior should
    // barely move x_t
    NoiseSchedule s;
    s.T = 4;
    s.beta = {0.5, 0.5, 1e-10, 1e-10};
    for (double b : s.beta) s.alpha.push_back(1.0 - b);
    double ab = 1.0;
    for (double a : s.alpha) {
        ab *= a;
        s.alpha_bar.push_back(ab);
    }

    Rng rng(4);
    const Mat<double> x0 = rng.normal_matrix<double>(3, 3);
    const Mat<double> x_t = rng.normal_matrix<double>(3, 3);
    const Mat<double> noise = rng.normal_matrix<double>(3, 3);
    CHECK(max_abs_diff(posterior_step(x0, x_t, 2L, s, noise), x_t) < 1e-4);
}

TEST_CASE("sample_loop hands back the final clean estimate") {
    const NoiseSchedule sched = cosine_schedule(60);
    const SampleDims dims{6, 3, 4, 15.0};
    Rng rng(2);
    const MatF constant = rng.normal_matrix<float>(6, 7);

    std::vector<long> seen;
    Denoiser denoiser = [&](const MatF& face_t, const MatF& body_t, long t) {
        REQUIRE(face_t.rows() == 6);
        REQUIRE(face_t.cols() == 3);
        REQUIRE(body_t.cols() == 4);
        seen.push_back(t);
        return constant;
    };

    const MotionSequence out = sample_loop(denoiser, dims, sched, 77);
    CHECK(out.fps == 15.0);
    CHECK(out.frames() == 6);
    CHECK(max_abs_diff(out.face, MatF(constant.leftCols(3))) == 0.0f);
    CHECK(max_abs_diff(out.body, MatF(constant.rightCols(4))) == 0.0f);

    // one denoiser call per level, walking straight down to zero
    REQUIRE(seen.size() == 60);
    for (size_t i = 0; i < seen.size(); ++i) CHECK(seen[i] == 59 - static_cast<long>(i));
}

TEST_CASE("sample_loop is seed-reproducible and validates its inputs") {
    const NoiseSchedule sched = cosine_schedule(40);
    const SampleDims dims{4, 2, 3, 30.0};
    Denoiser shrink = [](const MatF& face_t, const MatF& body_t, long) {
        MatF h(face_t.rows(), face_t.cols() + body_t.cols());
        h << face_t, body_t;
        return MatF(0.5f * h);
    };

    const MotionSequence a = sample_loop(shrink, dims, sched, 5);
    const MotionSequence b = sample_loop(shrink, dims, sched, 5);
    const MotionSequence c = sample_loop(shrink, dims, sched, 6);
    CHECK(max_abs_diff(a.face, b.face) == 0.0f);
    CHECK(max_abs_diff(a.body, b.body) == 0.0f);
    CHECK(max_abs_diff(a.face, c.face) > 1e-4f);
    CHECK(all_finite(a.face));
    CHECK(all_finite(a.body));

    Denoiser wrong_width = [](const MatF& face_t, const MatF&, long) { return face_t; };
    CHECK_THROWS_AS(sample_loop(wrong_width, dims, sched, 1), Error);

    Denoiser poisoned = [](const MatF& face_t, const MatF& body_t, long) {
        MatF h(face_t.rows(), face_t.cols() + body_t.cols());
        h.setConstant(std::numeric_limits<float>::quiet_NaN());
        return h;
    };
    CHECK_THROWS_AS(sample_loop(poisoned, dims, sched, 1), Error);

    CHECK_THROWS_AS(sample_loop(shrink, SampleDims{1, 2, 3, 30.0}, sched, 1), Error);
}

TEST_CASE("reverse chain variance follows the analytic recursion") {
    const long T = 40;
    const NoiseSchedule sched = cosine_schedule(T);

    // with a clean estimate pinned at zero the chain is linear-Gaussian:
    // v[T-1] = 1 and v[t-1] = c_xt(t)^2 v[t] + sigma(t)^2
    std::vector<long double> v(static_cast<size_t>(T));
    v[static_cast<size_t>(T - 1)] = 1.0L;
    for (long t = T - 1; t >= 1; --t) {
        const PosteriorCoefs c = ld_posterior_coefs(sched, t);
        v[static_cast<size_t>(t - 1)] =
            c.c_xt * c.c_xt * v[static_cast<size_t>(t)] + c.sigma * c.sigma;
    }

    const SampleDims dims{4, 3, 3, 15.0};
    const int n_runs = 250;
    std::vector<double> sum(static_cast<size_t>(T), 0.0), sumsq(static_cast<size_t>(T), 0.0);
    for (int run = 0; run < n_runs; ++run) {
        Denoiser zero = [&](const MatF& face_t, const MatF& body_t, long t) {
            MatF h(face_t.rows(), face_t.cols() + body_t.cols());
            h << face_t, body_t;
            sum[static_cast<size_t>(t)] += h.cast<double>().sum();
            sumsq[static_cast<size_t>(t)] += h.cast<double>().array().square().sum();
            return MatF(MatF::Zero(face_t.rows(), face_t.cols() + body_t.cols()));
        };
        (void)sample_loop(zero, dims, sched, 1000 + static_cast<uint64_t>(run));
    }

    const double n = static_cast<double>(n_runs) * 4 * 6;  // entries observed per level
    for (long t : {T - 1, 30L, 20L, 10L, 5L, 1L, 0L}) {
        CAPTURE(t);
        const auto u = static_cast<size_t>(t);
        const double mean = sum[u] / n;
        const double var = sumsq[u] / n - mean * mean;
        const double want = static_cast<double>(v[u]);
        CHECK(std::abs(mean) < 4.0 * std::sqrt(want / n));
        CHECK(std::abs(var - want) < std::max(0.10 * want, 3e-3));
    }
    // the chain has contracted almost entirely onto the clean estimate
    CHECK(static_cast<double>(v[0]) < 0.01);
}
