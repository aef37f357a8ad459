#pragma once

#include <string>
#include <vector>

#include "dumotion/common.hpp"
#include "dumotion/data.hpp"
#include "dumotion/params.hpp"

namespace dumotion {

struct ConditionEmbedding {
    MatF z_e;     // 1 x d_z emotion embedding; empty when absent
    MatF z_id_f;  // 1 x d_z identity code (face branch)
    MatF z_id_b;
    std::string provenance;  // lookup | stats | motion | audio
};

// [std of each channel over frames, std of each velocity channel], 1 x 2D.
// Population std; shift-invariant and strictly monotone under scaling.
MatF identity_stats(const MatF& seq);

// Applies the two identity MLPs (names cond/id_mlp_f/*, cond/id_mlp_b/* in
// the given store) to the face/body stats vectors.
struct IdentityCode {
    MatF z_id_f, z_id_b;  // 1 x d_z each
};
IdentityCode identity_code(const MatF& face, const MatF& body, const ParamStore<float>& mlp);

// Eight orthogonal unit-norm rows, one per category in emotion_categories()
// order; a pure function of (seed, d_z). Requires d_z >= 8.
MatF emotion_table(uint64_t seed, Index d_z);

Index emotion_row(const std::string& label);

// 1 x d_z unit-norm lookup row
MatF emotion_embed(const std::string& label, const MatF& table);

// ---- modality aligner ----
// Per-frame 2-layer network, temporal mean pooling, L2 normalization;
// trained to maximize cosine similarity with the label's table row.

enum class AlignModality { Motion, Audio };

struct AlignConfig {
    Index hidden = 64;
    long iterations = 400;
    Index batch = 8;
    double lr = 3e-3;
    uint64_t seed = 1;
};

struct AlignerResult {
    ParamStore<float> params;  // aligner/fc1, aligner/fc2
    std::vector<double> loss_history;
};

AlignerResult align_modality_encoder(AlignModality modality, const Dataset& ds, const MatF& table,
                                     const AlignConfig& cfg);

// Unit-norm embedding of one sample under the trained encoder.
MatF aligner_embed(const ParamStore<float>& params, AlignModality modality, const Sample& s);

// Nearest table row by cosine similarity.
std::string classify_emotion(const ParamStore<float>& params, AlignModality modality,
                             const Sample& s, const MatF& table);

}  // namespace dumotion
