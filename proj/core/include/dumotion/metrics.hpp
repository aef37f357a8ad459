#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dumotion/data.hpp"
#include "dumotion/params.hpp"

namespace dumotion {

// ---- Frechet machinery ----

struct GaussianStats {
    MatD mean;  // 1 x k
    MatD cov;   // k x k, symmetric PSD within tolerance
    long n = 0;

    void validate() const;
};

// Sample mean and (n-1)-normalized covariance of the stacked rows.
GaussianStats fit_gaussian(const MatD& rows);

// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}); the square root is
// taken through the symmetric form S_a^{1/2} S_b S_a^{1/2}, with eigenvalue
// noise below 1e-9 clipped to zero.
double frechet_distance(const GaussianStats& a, const GaussianStats& b);

// ---- learned feature extractor ----

enum class FeatureScope { Holistic, Body };

struct ExtractorConfig {
    Index window = 16;
    Index stride = 8;
    Index kernel = 5;  // temporal context width, odd
    Index hidden = 64;
    Index bottleneck = 32;
    long iterations = 300;
    Index batch = 8;
    double lr = 1e-3;
    uint64_t seed = 1;

    void validate() const;
};

// Windowed temporal autoencoder fit on ground truth, then frozen; its hash
// names the feature space so distances stay comparable across runs.
struct FeatureExtractor {
    FeatureScope scope = FeatureScope::Holistic;
    ExtractorConfig cfg;
    Index in_dim = 0;  // channels of the track it was fit on
    ParamStore<float> params;
    std::vector<double> loss_history;

    std::string hash() const;
};

FeatureExtractor fit_feature_extractor(const Dataset& gt, FeatureScope scope,
                                       const ExtractorConfig& cfg = {});

// Per-sequence feature: bottleneck vectors of every window, averaged. One row.
MatF extract_feature(const FeatureExtractor& ex, const MotionSequence& seq);

// Frechet distance between Gaussians fit to the two sides' features.
double fmd_fgd(const std::vector<MotionSequence>& generated,
               const std::vector<MotionSequence>& reference, const FeatureExtractor& ex);

// ---- analytic metrics ----

// Alignment between rhythm-track peaks and velocity-magnitude minima; both
// beat tracks are indexed in frames and sigma = 0.1 s * fps. An empty beat
// set on either side makes the score undefined (never a silent zero).
std::optional<double> beat_consistency(const MatF& body, const MatF& rhythm, double fps);

// Mean L2 distance between temporally mean-pooled bodies over m seeded
// distinct unordered pairs; exhaustive when m covers all pairs.
double diversity(const std::vector<MatF>& bodies, long m, uint64_t seed);

struct FaceError {
    double mse = 0;  // mean squared entry difference
    double lvd = 0;  // mean absolute entry difference of the velocity tracks
};
FaceError face_mse_lvd(const MatF& gen_face, const MatF& gt_face);

// ---- report ----

struct MetricReport {
    std::optional<double> fmd, fgd, bc, div, mse, lvd;  // nullopt = undefined
    std::string config_hash;
    std::string dataset_hash;

    void validate() const;
};

// flat key=value lines; undefined metrics serialize as the literal "undefined"
std::string report_to_text(const MetricReport& r);
MetricReport report_from_text(const std::string& text);
void write_report(const MetricReport& r, const std::filesystem::path& path);
MetricReport read_report(const std::filesystem::path& path);

// ---- full evaluation ----

struct EvalConfig {
    long div_pairs = 100;
    uint64_t seed = 1;
};

// generated[i] pairs with reference[i] (face errors) and audio[i] (beat
// consistency). FMD uses the holistic extractor, FGD the body one; DIV pools
// generated bodies. BC averages the defined per-sample scores.
MetricReport evaluate_sets(const std::vector<MotionSequence>& generated,
                           const std::vector<MotionSequence>& reference,
                           const std::vector<AudioFeatureTrack>& audio,
                           const FeatureExtractor& holistic_ex, const FeatureExtractor& body_ex,
                           const EvalConfig& cfg, const std::string& dataset_hash);

}  // namespace dumotion
