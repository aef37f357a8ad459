#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dumotion/conditioning.hpp"
#include "dumotion/data.hpp"
#include "dumotion/model.hpp"
#include "dumotion/optim.hpp"
#include "dumotion/schedule.hpp"

namespace dumotion {

// ---- losses ----

// mean squared entry difference
template <typename S>
S loss_simple(const Mat<S>& x0, const Mat<S>& x0_hat) {
    require_shape(x0_hat, x0.rows(), x0.cols(), "loss_simple");
    double acc = 0;
    for (Index i = 0; i < x0.rows(); ++i)
        acc += (x0_hat.row(i) - x0.row(i)).template cast<double>().squaredNorm();
    return static_cast<S>(acc / static_cast<double>(x0.size()));
}

// squared L2 norm of the per-frame velocity residual, averaged over the
// N-1 transitions; invariant to adding a constant to either sequence
template <typename S>
S loss_velocity(const Mat<S>& h, const Mat<S>& h_hat) {
    require_shape(h_hat, h.rows(), h.cols(), "loss_velocity");
    require(h.rows() >= 2, "loss_velocity: need at least 2 frames");
    double acc = 0;
    for (Index i = 0; i + 1 < h.rows(); ++i)
        acc += ((h.row(i + 1) - h.row(i)) - (h_hat.row(i + 1) - h_hat.row(i)))
                   .template cast<double>()
                   .squaredNorm();
    return static_cast<S>(acc / static_cast<double>(h.rows() - 1));
}

template <typename S>
S total_loss(const Mat<S>& f, const Mat<S>& f_hat, const Mat<S>& b, const Mat<S>& b_hat,
             const Mat<S>& h, const Mat<S>& h_hat, S lambda_f, S lambda_b) {
    require(h.cols() == f.cols() + b.cols() && h.rows() == f.rows() && h.rows() == b.rows(),
            "total_loss: holistic track must stack the face and body columns");
    const S l_h = loss_simple(h, h_hat) + loss_velocity(h, h_hat);
    const S l_f = loss_simple(f, f_hat) + loss_velocity(f, f_hat);
    const S l_b = loss_simple(b, b_hat) + loss_velocity(b, b_hat);
    return l_h + lambda_f * l_f + lambda_b * l_b;
}

// tape counterparts (same formulas, differentiable)

template <typename S>
Var<S> loss_simple(Tape<S>& tape, Var<S> pred, Var<S> target) {
    return tape.mean_all(tape.square(tape.sub(pred, target)));
}

template <typename S>
Var<S> loss_velocity(Tape<S>& tape, Var<S> pred, Var<S> target) {
    const Index n = tape.val(pred).rows();
    require(n >= 2, "loss_velocity: need at least 2 frames");
    Var<S> dp = tape.sub(tape.slice_rows(pred, 1, n - 1), tape.slice_rows(pred, 0, n - 1));
    Var<S> dt = tape.sub(tape.slice_rows(target, 1, n - 1), tape.slice_rows(target, 0, n - 1));
    return tape.scale(tape.sum_all(tape.square(tape.sub(dp, dt))), S(1) / static_cast<S>(n - 1));
}

template <typename S>
Var<S> track_loss(Tape<S>& tape, Var<S> pred, Var<S> target) {
    return tape.add(loss_simple(tape, pred, target), loss_velocity(tape, pred, target));
}

// ---- run configuration ----

struct TrainConfig {
    double lr = 1e-4;  // finetunes conventionally raise this to 1e-3
    double beta1 = 0.9;
    double beta2 = 0.99;
    Index batch = 16;
    long iterations = 100;
    double lambda_f = 0.5;
    double lambda_b = 0.5;
    uint64_t seed = 1;
    long eval_every = 0;    // snapshot cadence in iterations; 0 disables
    double clip_norm = 0;   // global gradient-norm cap; 0 disables

    void validate() const {
        require(lr > 0, "learning rate must be positive");
        require(lambda_f >= 0 && lambda_b >= 0, "loss weights must be non-negative");
        require(batch >= 1, "batch size must be >= 1");
        require(iterations >= 0, "iteration count must be >= 0");
        require(beta1 > 0 && beta1 < 1 && beta2 > 0 && beta2 < 1, "betas must lie in (0,1)");
    }
};

// ---- checkpoints ----

struct IdentityRef {
    MatF stats_f;  // 1 x 2*D_F reference statistics
    MatF stats_b;  // 1 x 2*D_B
};

// Everything needed to rebuild the model and resume or audit a run. Frozen
// tensors listed here must stay bit-identical to the parent checkpoint's.
struct Checkpoint {
    DUTransConfig model_cfg;
    std::optional<PEFTConfig> peft;
    ParamStore<float> params;
    std::vector<std::string> frozen;

    std::vector<MatF> adam_m, adam_v;  // aligned with params.entries()
    long adam_t = 0;
    double lr = 0;

    uint64_t seed = 0;
    long iteration = 0;
    long schedule_T = 0;       // cosine schedule the weights were trained under
    double schedule_s = 0.008;
    std::string dataset_hash;
    std::string parent_id;  // empty for a pretraining root

    uint64_t emotion_seed = 0;  // emotion-table seed; 0 when unused
    std::map<std::string, IdentityRef> identity_refs;

    // content-derived id: hash of the weight bytes plus lineage fields
    std::string id() const;
};

inline constexpr const char* kCheckpointFormatVersion = "dumotion-ckpt-v1";

// Directory layout: manifest.json (written last, atomically) + weights.f32 +
// adam_m.f32 + adam_v.f32, each a single row-major blob in entry order.
void save_checkpoint(const Checkpoint& c, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

// Rebuilds the architecture from the stored configs and overwrites every
// tensor from the checkpoint; names and shapes must match exactly.
Model<float> model_from_checkpoint(const Checkpoint& c);

// ---- condition plumbing ----

enum class ConditionTask { Emotion, Identity };

struct CondRows {
    MatF face;  // 1 x d
    MatF body;
};

// Plain (no-tape) condition rows for sampling and evaluation.
CondRows emotion_cond_rows(const ParamStore<float>& ps, const MatF& z_e);
CondRows identity_cond_rows(const ParamStore<float>& ps, const MatF& stats_f, const MatF& stats_b);

// ---- training loops ----

struct LossRow {
    long step = 0;
    double l_h = 0, l_f = 0, l_b = 0, total = 0;
};

// "step,L_H,L_F,L_B,total" rows; written atomically
void write_loss_csv(const std::vector<LossRow>& rows, const std::filesystem::path& path);
std::vector<LossRow> read_loss_csv(const std::filesystem::path& path);

// Called at the eval cadence with a complete state snapshot (weights,
// optimizer, conditioning assets), so callers can persist or probe it.
using EvalHook = std::function<void(long step, const Checkpoint& snapshot)>;

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<LossRow> curve;
};

// Diffusion pretraining: per step, a batch of (x0, audio) pairs, one uniform
// timestep and noise draw per sample, x0-prediction forward, combined
// face/body/holistic loss, Adam. Deterministic given the seed at any thread
// count. A non-finite loss aborts with the last good state saved to
// last_good_dir (when given) and a NumericError.
TrainResult pretrain(const Dataset& train, const DUTransConfig& model_cfg,
                     const NoiseSchedule& sched, const TrainConfig& cfg,
                     const std::filesystem::path* last_good_dir = nullptr,
                     const EvalHook& eval_hook = nullptr);

// Adapter finetuning: injects the PEFT sites into the parent model, freezes
// everything that existed before injection except the output heads, routes
// the task's condition embedding into the adapters, and trains the rest.
// Frozen tensors are audited against the parent after the run.
TrainResult finetune(const Checkpoint& parent, const Dataset& train, PEFTConfig peft_cfg,
                     const TrainConfig& cfg, ConditionTask task,
                     const std::filesystem::path* last_good_dir = nullptr,
                     const EvalHook& eval_hook = nullptr);

// ---- sampling ----

// Runs the reverse diffusion with the model's holistic head as denoiser.
MotionSequence sample_motion(const Model<float>& m, const AudioFeatureTrack& audio,
                             const NoiseSchedule& sched, double fps, uint64_t seed,
                             const MatF* cond_f = nullptr, const MatF* cond_b = nullptr);

// Resolves the checkpoint's conditioning assets for one sample: the emotion
// row for Emotion-conditioned checkpoints (by the sample's label), the stored
// per-identity reference statistics for Identity-conditioned ones. Returns
// nullopt when the checkpoint carries no condition pathway.
std::optional<CondRows> resolve_condition(const Checkpoint& c, const ParamStore<float>& ps,
                                          const std::string& emotion_label,
                                          const std::string& identity_label);

}  // namespace dumotion
