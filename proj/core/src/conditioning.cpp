#include "dumotion/conditioning.hpp"

#include <algorithm>
#include <cmath>

#include "dumotion/autodiff.hpp"
#include "dumotion/optim.hpp"
#include "dumotion/rng.hpp"

namespace dumotion {

namespace {

constexpr uint64_t kStreamEmotionTable = 0xE7;

MatF column_std(const MatF& m) {
    MatF out(1, m.cols());
    const float n = static_cast<float>(m.rows());
    for (Index j = 0; j < m.cols(); ++j) {
        const float mu = m.col(j).mean();
        out(0, j) = std::sqrt((m.col(j).array() - mu).square().sum() / n);
    }
    return out;
}

float gelu_scalar(float x) {
    return 0.5f * x * (1.0f + std::erf(x * 0.70710678f));
}

MatF mlp2(const ParamStore<float>& ps, const std::string& prefix, const MatF& x) {
    MatF h = x * ps.at(prefix + "/fc1/W");
    h.rowwise() += ps.at(prefix + "/fc1/b").row(0);
    h = h.unaryExpr(&gelu_scalar);
    MatF out = h * ps.at(prefix + "/fc2/W");
    out.rowwise() += ps.at(prefix + "/fc2/b").row(0);
    return out;
}

MatF aligner_input(AlignModality modality, const Sample& s) {
    if (modality == AlignModality::Motion) {
        MatF x(s.motion.frames(), s.motion.face.cols() + s.motion.body.cols());
        x << s.motion.face, s.motion.body;
        return x;
    }
    MatF x(s.audio.frames(), s.audio.content.cols() + 1 + s.audio.semantics.cols());
    x << s.audio.content, s.audio.rhythm, s.audio.semantics;
    return x;
}

}  // namespace

MatF identity_stats(const MatF& seq) {
    require(seq.rows() >= 3, "identity stats need at least 3 frames");
    require(all_finite(seq), "identity stats: non-finite input");
    MatF out(1, 2 * seq.cols());
    out.leftCols(seq.cols()) = column_std(seq);
    out.rightCols(seq.cols()) = column_std(compute_velocity(seq));
    return out;
}

IdentityCode identity_code(const MatF& face, const MatF& body, const ParamStore<float>& mlp) {
    IdentityCode out;
    out.z_id_f = mlp2(mlp, "cond/id_mlp_f", identity_stats(face));
    out.z_id_b = mlp2(mlp, "cond/id_mlp_b", identity_stats(body));
    return out;
}

MatF emotion_table(uint64_t seed, Index d_z) {
    require(d_z >= 8, "emotion table needs d_z >= 8 for orthogonal rows");
    Rng rng(derive_seed(seed, kStreamEmotionTable));
    MatF t = rng.normal_matrix<float>(8, d_z);
    // modified Gram-Schmidt; Gaussian rows are independent with probability 1
    for (Index i = 0; i < 8; ++i) {
        for (Index j = 0; j < i; ++j) t.row(i) -= t.row(i).dot(t.row(j)) * t.row(j);
        const float norm = t.row(i).norm();
        require(norm > 1e-6f, "emotion table: degenerate draw");
        t.row(i) /= norm;
    }
    return t;
}

Index emotion_row(const std::string& label) {
    const auto& cats = emotion_categories();
    const auto it = std::find(cats.begin(), cats.end(), label);
    require(it != cats.end(), "unknown emotion label: " + label);
    return static_cast<Index>(it - cats.begin());
}

MatF emotion_embed(const std::string& label, const MatF& table) {
    require(table.rows() == 8, "emotion table must have 8 rows");
    return table.row(emotion_row(label));
}

AlignerResult align_modality_encoder(AlignModality modality, const Dataset& ds, const MatF& table,
                                     const AlignConfig& cfg) {
    require(!ds.samples.empty(), "aligner needs a non-empty dataset");
    require(cfg.hidden >= 1 && cfg.iterations >= 1 && cfg.batch >= 1 && cfg.lr > 0,
            "bad aligner config");
    for (const auto& s : ds.samples) emotion_row(s.motion.emotion_label);  // labels must resolve

    const Index in_dim = aligner_input(modality, ds.samples.front()).cols();
    const Index d_z = table.cols();

    AlignerResult res;
    add_linear(res.params, cfg.seed, "aligner/fc1", in_dim, cfg.hidden);
    add_linear(res.params, cfg.seed, "aligner/fc2", cfg.hidden, d_z);

    Adam<float> opt(res.params, cfg.lr);
    Rng batch_rng(derive_seed(cfg.seed, 0xA11));

    for (long it = 0; it < cfg.iterations; ++it) {
        std::vector<Mat<float>> grads;
        for (const auto& e : res.params.entries())
            grads.push_back(MatF::Zero(e.value.rows(), e.value.cols()));
        double loss_sum = 0;

        for (Index b = 0; b < cfg.batch; ++b) {
            const auto& s = ds.samples[batch_rng.below(ds.samples.size())];
            Tape<float> tape;
            Var<float> x = tape.constant(aligner_input(modality, s));
            Var<float> h = tape.gelu(linear(tape, res.params, "aligner/fc1", x));
            Var<float> emb = tape.l2_normalize_rows(
                tape.mean_rows(linear(tape, res.params, "aligner/fc2", h)));
            Var<float> target = tape.constant(emotion_embed(s.motion.emotion_label, table));
            // 1 - cosine similarity
            Var<float> loss = tape.sub(tape.constant(MatF::Ones(1, 1)),
                                       tape.sum_all(tape.hadamard(emb, target)));
            tape.backward(loss);
            loss_sum += tape.val(loss)(0, 0);
            const auto& entries = res.params.entries();
            for (size_t i = 0; i < entries.size(); ++i) {
                const auto v = tape.find_leaf(&entries[i].value);
                if (v.valid())
                    grads[i] += tape.grad(v) / static_cast<float>(cfg.batch);
            }
        }
        opt.step(grads);
        res.loss_history.push_back(loss_sum / static_cast<double>(cfg.batch));
    }
    return res;
}

MatF aligner_embed(const ParamStore<float>& params, AlignModality modality, const Sample& s) {
    MatF h = mlp2(params, "aligner", aligner_input(modality, s));
    MatF pooled = h.colwise().mean();
    const float norm = pooled.norm();
    return norm > 1e-12f ? MatF(pooled / norm) : pooled;
}

std::string classify_emotion(const ParamStore<float>& params, AlignModality modality,
                             const Sample& s, const MatF& table) {
    const MatF emb = aligner_embed(params, modality, s);
    Index best = 0;
    float best_cos = -2;
    for (Index i = 0; i < table.rows(); ++i) {
        const float c = emb.row(0).dot(table.row(i));
        if (c > best_cos) {
            best_cos = c;
            best = i;
        }
    }
    return emotion_categories()[static_cast<size_t>(best)];
}

}  // namespace dumotion
