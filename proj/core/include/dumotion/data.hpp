#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dumotion/common.hpp"

namespace dumotion {

// The eight emotion categories; "neutral" is one of them.
const std::array<std::string, 8>& emotion_categories();
bool is_emotion_label(const std::string& label);

struct MotionSequence {
    MatF face;  // N x D_F expression coefficients
    MatF body;  // N x D_B flattened axis-angle pose
    double fps = 15.0;
    std::string identity_label;
    std::string emotion_label = "neutral";

    Index frames() const { return face.rows(); }
    void validate() const;
};

struct AudioFeatureTrack {
    MatF content;    // N x d_c
    MatF rhythm;     // N x 1
    MatF semantics;  // N x d_s

    Index frames() const { return content.rows(); }
    void validate() const;
};

struct Sample {
    MotionSequence motion;
    AudioFeatureTrack audio;

    void validate() const;
};

struct DatasetManifest {
    Index d_f = 0, d_b = 0, d_c = 0, d_s = 0;
    double fps = 15.0;
    uint64_t seed = 0;
    std::string split_tag = "full";
};

struct Dataset {
    std::vector<Sample> samples;
    DatasetManifest manifest;

    void validate() const;
    // content hash over manifest + every tensor; reported by evaluate runs
    std::string content_hash() const;
};

struct IdentitySpec {
    std::string label;
    double amplitude_scale = 1.0;
    double frequency_scale = 1.0;
};

struct EmotionSpec {
    std::string label = "neutral";
    uint64_t offset_seed = 0;  // 0 means no offset
    double amplitude_multiplier = 1.0;
};

struct SyntheticSpec {
    Index n_samples = 40;
    Index frames = 60;
    Index d_f = 12, d_b = 24, d_c = 16, d_s = 16;
    double fps = 15.0;
    double noise_std = 0.03;
    uint64_t seed = 1;
    std::vector<IdentitySpec> identities = {{"spk0", 1.0, 1.0}};
    std::vector<EmotionSpec> emotions = {{"neutral", 0, 1.0}};

    void validate() const;
};

// Pseudo speech-to-motion generator. Twelve smooth latent signals per sample
// (sums of 3-8 random-phase sinusoids); audio tracks are fixed random linear
// images of disjoint latent subsets (content <- 0..5, rhythm <- 6,
// semantics <- 7..11); face = tanh of a fixed linear map of the content+rhythm
// latents, body = tanh of a map of the semantics+rhythm latents evaluated with
// a 2-frame lag. Identity scales sinusoid frequency and output amplitude;
// emotion adds a per-channel offset and scales amplitude. Identity and emotion
// assignment is round-robin so every label appears with equal frequency.
// Latent/noise draws use per-sample derived streams that do not depend on the
// identity/emotion parameters, so changing a scale changes only that scale's
// effect.
Dataset generate_synthetic_dataset(const SyntheticSpec& spec);

struct SplitFractions {
    double train = 0.85, val = 0.075, test = 0.075;
};

// Floor val/test bucket sizes, remainder to train; membership determined by a
// seeded shuffle so the partition is reproducible from the manifest seed.
struct SplitResult {
    Dataset train, val, test;
};
SplitResult split_dataset(const Dataset& ds, const SplitFractions& fractions = {});

// row i = seq[i+1] - seq[i]
MatF compute_velocity(const MatF& seq);

// Directory layout: manifest.json + sample_<k>_<track>.f32 with tracks
// face/body/content/rhythm/semantics. Round-trip is bit exact.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

inline constexpr const char* kDatasetFormatVersion = "dumotion-ds-v1";

}  // namespace dumotion
