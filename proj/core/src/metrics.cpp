#include "dumotion/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "dumotion/autodiff.hpp"
#include "dumotion/hash.hpp"
#include "dumotion/optim.hpp"
#include "dumotion/rng.hpp"
#include "dumotion/tensor_io.hpp"

namespace dumotion {

namespace {

constexpr double kPsdTol = 1e-9;
constexpr double kBeatSigmaSeconds = 0.1;

MatD symmetrize(const MatD& m) { return 0.5 * (m + m.transpose()); }

// PSD square root by eigendecomposition; eigenvalue noise clipped at zero
MatD psd_sqrt(const MatD& m) {
    Eigen::SelfAdjointEigenSolver<MatD> es(symmetrize(m));
    require(es.info() == Eigen::Success, "eigendecomposition failed");
    Eigen::VectorXd ev = es.eigenvalues();
    for (Index i = 0; i < ev.size(); ++i) {
        require(ev(i) > -kPsdTol, "matrix is not PSD within tolerance");
        ev(i) = ev(i) > 0 ? std::sqrt(ev(i)) : 0.0;
    }
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

// ---- extractor internals ----

// Rows gain k-frame temporal context with clamped edges: out is W x (k*C).
MatF unfold_window(const MatF& w, Index k) {
    const Index n = w.rows(), c = w.cols(), half = k / 2;
    MatF out(n, k * c);
    for (Index i = 0; i < n; ++i)
        for (Index o = 0; o < k; ++o)
            out.block(i, o * c, 1, c) = w.row(std::clamp(i + o - half, Index(0), n - 1));
    return out;
}

MatF scope_track(FeatureScope scope, const MotionSequence& seq) {
    if (scope == FeatureScope::Body) return seq.body;
    MatF h(seq.frames(), seq.face.cols() + seq.body.cols());
    h << seq.face, seq.body;
    return h;
}

std::vector<Index> window_starts(Index frames, Index window, Index stride) {
    require(frames >= window, "sequence shorter than the feature window");
    std::vector<Index> starts;
    for (Index s = 0; s + window <= frames; s += stride) starts.push_back(s);
    if (starts.back() != frames - window) starts.push_back(frames - window);
    return starts;
}

float gelu_scalar(float x) { return 0.5f * x * (1.0f + std::erf(x * 0.70710678f)); }

MatF linear_row(const ParamStore<float>& ps, const std::string& prefix, const MatF& x) {
    MatF out = x * ps.at(prefix + "/W");
    out.rowwise() += ps.at(prefix + "/b").row(0);
    return out;
}

// 1 x bottleneck code for one window (no tape)
MatF encode_window(const FeatureExtractor& ex, const MatF& w) {
    const MatF h = linear_row(ex.params, "extractor/enc1", unfold_window(w, ex.cfg.kernel))
                       .unaryExpr(&gelu_scalar);
    return linear_row(ex.params, "extractor/enc2", MatF(h.colwise().mean()));
}

}  // namespace

// ---- Gaussian stats ----

void GaussianStats::validate() const {
    require(mean.rows() == 1 && mean.cols() >= 1, "stats mean must be a row vector");
    require(cov.rows() == cov.cols() && cov.rows() == mean.cols(),
            "covariance shape disagrees with the mean");
    require((cov - cov.transpose()).cwiseAbs().maxCoeff() <= kPsdTol,
            "covariance is not symmetric within tolerance");
    Eigen::SelfAdjointEigenSolver<MatD> es(symmetrize(cov), Eigen::EigenvaluesOnly);
    require(es.info() == Eigen::Success, "eigendecomposition failed");
    require(es.eigenvalues().minCoeff() > -kPsdTol, "covariance is not PSD within tolerance");
}

GaussianStats fit_gaussian(const MatD& rows) {
    require(rows.rows() >= 2, "need at least 2 samples to fit covariance");
    GaussianStats g;
    g.n = rows.rows();
    g.mean = rows.colwise().mean();
    const MatD centered = rows.rowwise() - g.mean.row(0);
    g.cov = symmetrize(centered.transpose() * centered / static_cast<double>(rows.rows() - 1));
    return g;
}

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
    a.validate();
    b.validate();
    require(a.mean.cols() == b.mean.cols(), "stats dimensionality mismatch");

    const MatD root_a = psd_sqrt(a.cov);
    Eigen::SelfAdjointEigenSolver<MatD> es(symmetrize(root_a * b.cov * root_a),
                                           Eigen::EigenvaluesOnly);
    require(es.info() == Eigen::Success, "eigendecomposition failed");
    double tr_sqrt = 0;
    for (Index i = 0; i < es.eigenvalues().size(); ++i) {
        const double ev = es.eigenvalues()(i);
        require(ev > -kPsdTol, "product matrix is not PSD within tolerance");
        if (ev > 0) tr_sqrt += std::sqrt(ev);
    }
    const double d2 = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2 * tr_sqrt;
    require(d2 > -1e-8, "Frechet distance collapsed below zero beyond tolerance");
    return std::max(d2, 0.0);
}

// ---- feature extractor ----

void ExtractorConfig::validate() const {
    require(window >= 2 && stride >= 1, "bad window/stride");
    require(kernel >= 1 && kernel % 2 == 1, "kernel must be odd");
    require(hidden >= 1 && bottleneck >= 1, "bad layer widths");
    require(iterations >= 1 && batch >= 1 && lr > 0, "bad optimizer settings");
}

std::string FeatureExtractor::hash() const {
    Fnv1a h;
    h.update(scope == FeatureScope::Holistic ? "holistic" : "body");
    h.update(std::to_string(cfg.window) + "/" + std::to_string(cfg.stride) + "/" +
             std::to_string(cfg.kernel) + "/" + std::to_string(cfg.hidden) + "/" +
             std::to_string(cfg.bottleneck) + "/" + std::to_string(in_dim));
    for (const auto& e : params.entries()) {
        h.update(e.name);
        h.update(e.value);
    }
    return h.hex();
}

FeatureExtractor fit_feature_extractor(const Dataset& gt, FeatureScope scope,
                                       const ExtractorConfig& cfg) {
    cfg.validate();
    require(!gt.samples.empty(), "extractor needs a non-empty dataset");

    FeatureExtractor ex;
    ex.scope = scope;
    ex.cfg = cfg;
    ex.in_dim = scope == FeatureScope::Body
                    ? gt.manifest.d_b
                    : gt.manifest.d_f + gt.manifest.d_b;

    std::vector<MatF> windows;
    for (const auto& s : gt.samples) {
        const MatF track = scope_track(scope, s.motion);
        for (Index start : window_starts(track.rows(), cfg.window, cfg.stride))
            windows.push_back(track.middleRows(start, cfg.window));
    }

    const Index unfolded = cfg.kernel * ex.in_dim;
    const Index flat = cfg.window * ex.in_dim;
    add_linear(ex.params, cfg.seed, "extractor/enc1", unfolded, cfg.hidden);
    add_linear(ex.params, cfg.seed, "extractor/enc2", cfg.hidden, cfg.bottleneck);
    add_linear(ex.params, cfg.seed, "extractor/dec1", cfg.bottleneck, cfg.hidden);
    add_linear(ex.params, cfg.seed, "extractor/dec2", cfg.hidden, flat);

    Adam<float> opt(ex.params, cfg.lr);
    Rng batch_rng(derive_seed(cfg.seed, 0xF3A7));

    for (long it = 0; it < cfg.iterations; ++it) {
        std::vector<MatF> grads;
        for (const auto& e : ex.params.entries())
            grads.push_back(MatF::Zero(e.value.rows(), e.value.cols()));
        double loss_sum = 0;

        for (Index b = 0; b < cfg.batch; ++b) {
            const MatF& w = windows[batch_rng.below(windows.size())];
            MatF target(1, flat);
            for (Index i = 0; i < cfg.window; ++i)
                target.block(0, i * ex.in_dim, 1, ex.in_dim) = w.row(i);

            Tape<float> tape;
            Var<float> x = tape.constant(unfold_window(w, cfg.kernel));
            Var<float> h = tape.gelu(linear(tape, ex.params, "extractor/enc1", x));
            Var<float> code = linear(tape, ex.params, "extractor/enc2", tape.mean_rows(h));
            Var<float> recon = linear(tape, ex.params, "extractor/dec2",
                                      tape.gelu(linear(tape, ex.params, "extractor/dec1", code)));
            Var<float> loss =
                tape.mean_all(tape.square(tape.sub(recon, tape.constant(std::move(target)))));
            tape.backward(loss);
            loss_sum += tape.val(loss)(0, 0);

            const auto& entries = ex.params.entries();
            for (size_t i = 0; i < entries.size(); ++i) {
                const auto v = tape.find_leaf(&entries[i].value);
                if (v.valid()) grads[i] += tape.grad(v) / static_cast<float>(cfg.batch);
            }
        }
        opt.step(grads);
        ex.loss_history.push_back(loss_sum / static_cast<double>(cfg.batch));
    }
    return ex;
}

MatF extract_feature(const FeatureExtractor& ex, const MotionSequence& seq) {
    const MatF track = scope_track(ex.scope, seq);
    require(track.cols() == ex.in_dim, "sequence width disagrees with the extractor");
    MatF acc = MatF::Zero(1, ex.cfg.bottleneck);
    const auto starts = window_starts(track.rows(), ex.cfg.window, ex.cfg.stride);
    for (Index s : starts) acc += encode_window(ex, track.middleRows(s, ex.cfg.window));
    return acc / static_cast<float>(starts.size());
}

double fmd_fgd(const std::vector<MotionSequence>& generated,
               const std::vector<MotionSequence>& reference, const FeatureExtractor& ex) {
    require(generated.size() >= 2 && reference.size() >= 2,
            "need at least 2 sequences per side to fit covariance");
    auto stack = [&](const std::vector<MotionSequence>& seqs) {
        MatD rows(static_cast<Index>(seqs.size()), ex.cfg.bottleneck);
        for (size_t i = 0; i < seqs.size(); ++i)
            rows.row(static_cast<Index>(i)) =
                extract_feature(ex, seqs[i]).row(0).cast<double>();
        return rows;
    };
    return frechet_distance(fit_gaussian(stack(generated)), fit_gaussian(stack(reference)));
}

// ---- analytic metrics ----

std::optional<double> beat_consistency(const MatF& body, const MatF& rhythm, double fps) {
    require(body.rows() >= 4, "beat consistency needs at least 4 frames");
    require(rhythm.rows() == body.rows() && rhythm.cols() == 1,
            "rhythm must be one column aligned with the body track");
    require(fps > 0, "fps must be positive");

    const float mean = rhythm.col(0).mean();
    std::vector<Index> audio_beats;
    for (Index i = 1; i + 1 < rhythm.rows(); ++i)
        if (rhythm(i, 0) > rhythm(i - 1, 0) && rhythm(i, 0) > rhythm(i + 1, 0) &&
            rhythm(i, 0) > mean)
            audio_beats.push_back(i);

    const MatF vel = compute_velocity(body);
    std::vector<double> speed(static_cast<size_t>(vel.rows()));
    for (Index i = 0; i < vel.rows(); ++i) speed[i] = vel.row(i).cast<double>().norm();
    std::vector<Index> kin_beats;
    for (Index i = 1; i + 1 < vel.rows(); ++i)
        if (speed[i] < speed[i - 1] && speed[i] < speed[i + 1]) kin_beats.push_back(i);

    if (audio_beats.empty() || kin_beats.empty()) return std::nullopt;

    const double sigma_f = kBeatSigmaSeconds * fps;
    double acc = 0;
    for (Index b : audio_beats) {
        double best = std::numeric_limits<double>::infinity();
        for (Index k : kin_beats)
            best = std::min(best, static_cast<double>((b - k) * (b - k)));
        acc += std::exp(-best / (2.0 * sigma_f * sigma_f));
    }
    return acc / static_cast<double>(audio_beats.size());
}

double diversity(const std::vector<MatF>& bodies, long m, uint64_t seed) {
    require(bodies.size() >= 2, "diversity needs at least 2 samples");
    require(m >= 1, "diversity needs at least 1 pair");
    const size_t n = bodies.size();
    std::vector<MatD> pooled(n);
    for (size_t i = 0; i < n; ++i) {
        require(bodies[i].rows() >= 1, "empty body sequence");
        pooled[i] = bodies[i].colwise().mean().cast<double>();
    }

    const long all_pairs = static_cast<long>(n) * static_cast<long>(n - 1) / 2;
    double acc = 0;
    long count = 0;
    if (m >= all_pairs) {
        for (size_t i = 0; i < n; ++i)
            for (size_t j = i + 1; j < n; ++j) {
                acc += (pooled[i] - pooled[j]).norm();
                ++count;
            }
    } else {
        Rng rng(derive_seed(seed, 0xD1F));
        std::set<std::pair<size_t, size_t>> seen;
        while (count < m) {
            size_t i = rng.below(n), j = rng.below(n);
            if (i == j) continue;
            if (i > j) std::swap(i, j);
            if (!seen.insert({i, j}).second) continue;
            acc += (pooled[i] - pooled[j]).norm();
            ++count;
        }
    }
    return acc / static_cast<double>(count);
}

FaceError face_mse_lvd(const MatF& gen_face, const MatF& gt_face) {
    require_shape(gen_face, gt_face.rows(), gt_face.cols(), "face pair");
    require(gt_face.rows() >= 2, "face errors need at least 2 frames");
    FaceError e;
    e.mse = (gen_face - gt_face).cast<double>().squaredNorm() /
            static_cast<double>(gt_face.size());
    const MatF dv = compute_velocity(gen_face) - compute_velocity(gt_face);
    e.lvd = dv.cast<double>().cwiseAbs().sum() / static_cast<double>(dv.size());
    return e;
}

// ---- report ----

void MetricReport::validate() const {
    auto check = [](const std::optional<double>& v, bool nonneg, const char* name) {
        if (!v) return;
        require(std::isfinite(*v), std::string("non-finite metric: ") + name);
        if (nonneg) require(*v >= 0, std::string("negative metric: ") + name);
    };
    check(fmd, true, "fmd");
    check(fgd, true, "fgd");
    check(div, true, "div");
    check(mse, true, "mse");
    check(lvd, true, "lvd");
    if (bc) require(*bc >= 0 && *bc <= 1, "bc must lie in [0,1]");
}

std::string report_to_text(const MetricReport& r) {
    std::ostringstream out;
    out.precision(17);
    auto emit = [&](const char* key, const std::optional<double>& v) {
        out << key << '=';
        if (v)
            out << *v;
        else
            out << "undefined";
        out << '\n';
    };
    emit("fmd", r.fmd);
    emit("fgd", r.fgd);
    emit("bc", r.bc);
    emit("div", r.div);
    emit("mse", r.mse);
    emit("lvd", r.lvd);
    out << "config_hash=" << r.config_hash << '\n';
    out << "dataset_hash=" << r.dataset_hash << '\n';
    return out.str();
}

MetricReport report_from_text(const std::string& text) {
    MetricReport r;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        require(eq != std::string::npos, "malformed report line: " + line);
        const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
        auto set = [&](std::optional<double>& slot) {
            if (val != "undefined") slot = std::stod(val);
        };
        if (key == "fmd")
            set(r.fmd);
        else if (key == "fgd")
            set(r.fgd);
        else if (key == "bc")
            set(r.bc);
        else if (key == "div")
            set(r.div);
        else if (key == "mse")
            set(r.mse);
        else if (key == "lvd")
            set(r.lvd);
        else if (key == "config_hash")
            r.config_hash = val;
        else if (key == "dataset_hash")
            r.dataset_hash = val;
        else
            throw ConfigError("unknown report key: " + key);
    }
    return r;
}

void write_report(const MetricReport& r, const std::filesystem::path& path) {
    atomic_write_text(path, report_to_text(r));
}

MetricReport read_report(const std::filesystem::path& path) {
    return report_from_text(read_text(path));
}

// ---- full evaluation ----

MetricReport evaluate_sets(const std::vector<MotionSequence>& generated,
                           const std::vector<MotionSequence>& reference,
                           const std::vector<AudioFeatureTrack>& audio,
                           const FeatureExtractor& holistic_ex, const FeatureExtractor& body_ex,
                           const EvalConfig& cfg, const std::string& dataset_hash) {
    require(generated.size() == reference.size() && generated.size() == audio.size(),
            "generated, reference, and audio lists must pair up by index");
    require(generated.size() >= 2, "evaluation needs at least 2 sequences");
    require(holistic_ex.scope == FeatureScope::Holistic && body_ex.scope == FeatureScope::Body,
            "extractor scopes are swapped");

    MetricReport r;
    r.fmd = fmd_fgd(generated, reference, holistic_ex);
    r.fgd = fmd_fgd(generated, reference, body_ex);

    double bc_acc = 0;
    long bc_n = 0;
    for (size_t i = 0; i < generated.size(); ++i) {
        if (auto bc = beat_consistency(generated[i].body, audio[i].rhythm, generated[i].fps)) {
            bc_acc += *bc;
            ++bc_n;
        }
    }
    if (bc_n > 0) r.bc = bc_acc / static_cast<double>(bc_n);

    std::vector<MatF> bodies;
    bodies.reserve(generated.size());
    for (const auto& s : generated) bodies.push_back(s.body);
    r.div = diversity(bodies, cfg.div_pairs, cfg.seed);

    double mse = 0, lvd = 0;
    for (size_t i = 0; i < generated.size(); ++i) {
        const FaceError e = face_mse_lvd(generated[i].face, reference[i].face);
        mse += e.mse;
        lvd += e.lvd;
    }
    r.mse = mse / static_cast<double>(generated.size());
    r.lvd = lvd / static_cast<double>(generated.size());

    Fnv1a ch;
    ch.update(holistic_ex.hash());
    ch.update(body_ex.hash());
    ch.update(std::to_string(kBeatSigmaSeconds));
    ch.update(std::to_string(cfg.div_pairs));
    ch.update(std::to_string(cfg.seed));
    r.config_hash = ch.hex();
    r.dataset_hash = dataset_hash;
    r.validate();
    return r;
}

}  // namespace dumotion
