#include "dumotion/training.hpp"

#include <array>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "dumotion/hash.hpp"
#include "dumotion/tensor_io.hpp"
#include "dumotion/threads.hpp"

namespace dumotion {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr uint64_t kStreamBatch = 0x7B;
constexpr uint64_t kStreamDropout = 0xD120;
constexpr uint64_t kStreamEmoTable = 0xE40;

float gelu_scalar(float x) {
    return 0.5f * x * (1.0f + std::erf(x * 0.70710678f));
}

MatF linear_row(const ParamStore<float>& ps, const std::string& prefix, const MatF& x) {
    MatF out = x * ps.at(prefix + "/W");
    out.rowwise() += ps.at(prefix + "/b").row(0);
    return out;
}

// ---- manifest (de)serialization ----

json model_cfg_to_json(const DUTransConfig& c) {
    return json{{"d", c.d},
                {"layers", c.layers},
                {"decoder_layers", c.decoder_layers},
                {"n_heads", c.n_heads},
                {"biflow_layers", c.biflow_layers},
                {"d_f", c.d_f},
                {"d_b", c.d_b},
                {"d_c", c.d_c},
                {"d_s", c.d_s},
                {"max_frames", c.max_frames},
                {"d_z", c.d_z},
                {"dropout", c.dropout}};
}

DUTransConfig model_cfg_from_json(const json& j) {
    DUTransConfig c;
    c.d = j.at("d").get<Index>();
    c.layers = j.at("layers").get<Index>();
    c.decoder_layers = j.at("decoder_layers").get<Index>();
    c.n_heads = j.at("n_heads").get<Index>();
    c.biflow_layers = j.at("biflow_layers").get<std::vector<Index>>();
    c.d_f = j.at("d_f").get<Index>();
    c.d_b = j.at("d_b").get<Index>();
    c.d_c = j.at("d_c").get<Index>();
    c.d_s = j.at("d_s").get<Index>();
    c.max_frames = j.at("max_frames").get<Index>();
    c.d_z = j.at("d_z").get<Index>();
    c.dropout = j.at("dropout").get<double>();
    return c;
}

json peft_cfg_to_json(const PEFTConfig& c) {
    return json{{"variant", to_string(c.variant)},
                {"form", to_string(c.form)},
                {"scale", to_string(c.scale)},
                {"rank", c.rank},
                {"site_mha", c.site_mha},
                {"site_ffn", c.site_ffn},
                {"prefix_length", c.prefix_length},
                {"condition", to_string(c.condition)}};
}

PEFTConfig peft_cfg_from_json(const json& j) {
    PEFTConfig c;
    c.variant = peft_variant_from_string(j.at("variant").get<std::string>());
    c.form = adapter_form_from_string(j.at("form").get<std::string>());
    c.scale = scale_mode_from_string(j.at("scale").get<std::string>());
    c.rank = j.at("rank").get<Index>();
    c.site_mha = j.at("site_mha").get<bool>();
    c.site_ffn = j.at("site_ffn").get<bool>();
    c.prefix_length = j.at("prefix_length").get<Index>();
    c.condition = cond_source_from_string(j.at("condition").get<std::string>());
    return c;
}

bool peft_equal(const PEFTConfig& a, const PEFTConfig& b) {
    return a.variant == b.variant && a.form == b.form && a.scale == b.scale && a.rank == b.rank &&
           a.site_mha == b.site_mha && a.site_ffn == b.site_ffn &&
           a.prefix_length == b.prefix_length && a.condition == b.condition;
}

MatF row_from_json(const json& j) {
    MatF m(1, static_cast<Index>(j.size()));
    for (Index i = 0; i < m.cols(); ++i) m(0, i) = j.at(static_cast<size_t>(i)).get<float>();
    return m;
}

json row_to_json(const MatF& m) {
    json a = json::array();
    for (Index i = 0; i < m.cols(); ++i) a.push_back(m(0, i));
    return a;
}

std::string weights_hash(const ParamStore<float>& ps) {
    Fnv1a h;
    for (const auto& e : ps.entries()) {
        h.update(e.name);
        h.update(e.value);
    }
    return h.hex();
}

// single row-major blob over all tensors in entry order
MatF pack_blob(const std::vector<MatF>& tensors) {
    Index total = 0;
    for (const auto& t : tensors) total += t.size();
    MatF blob(1, total);
    Index off = 0;
    for (const auto& t : tensors) {
        for (Index i = 0; i < t.rows(); ++i)
            for (Index j = 0; j < t.cols(); ++j) blob(0, off++) = t(i, j);
    }
    return blob;
}

void write_blob_atomic(const fs::path& path, const MatF& blob) {
    const fs::path tmp = path.string() + ".tmp";
    write_f32(tmp, blob);
    fs::rename(tmp, path);
}

// ---- condition plumbing ----

struct CondAssets {
    CondSource source = CondSource::None;
    MatF table;  // 8 x d_z, emotion only
    const std::map<std::string, IdentityRef>* refs = nullptr;
};

CondVars<float> tape_condition(Tape<float>& tape, const ParamStore<float>& ps,
                               const CondAssets& assets, const Sample& s) {
    CondVars<float> cond;
    if (assets.source == CondSource::None) return cond;
    if (assets.source == CondSource::Emotion) {
        Var<float> z = tape.constant(emotion_embed(s.motion.emotion_label, assets.table));
        cond.face = linear(tape, ps, "cond/proj_f", z);
        cond.body = linear(tape, ps, "cond/proj_b", z);
        return cond;
    }
    const auto it = assets.refs->find(s.motion.identity_label);
    require(it != assets.refs->end(),
            "no reference statistics for identity: " + s.motion.identity_label);
    Var<float> zf = linear(
        tape, ps, "cond/id_mlp_f/fc2",
        tape.gelu(linear(tape, ps, "cond/id_mlp_f/fc1", tape.constant(it->second.stats_f))));
    Var<float> zb = linear(
        tape, ps, "cond/id_mlp_b/fc2",
        tape.gelu(linear(tape, ps, "cond/id_mlp_b/fc1", tape.constant(it->second.stats_b))));
    cond.face = linear(tape, ps, "cond/proj_f", zf);
    cond.body = linear(tape, ps, "cond/proj_b", zb);
    return cond;
}

void check_dataset_dims(const Dataset& ds, const DUTransConfig& cfg) {
    require(!ds.samples.empty(), "training needs a non-empty dataset");
    require(ds.manifest.d_f == cfg.d_f && ds.manifest.d_b == cfg.d_b &&
                ds.manifest.d_c == cfg.d_c && ds.manifest.d_s == cfg.d_s,
            "dataset track widths disagree with the model config");
}

// snapshot of everything the optimizer owns, for checkpoints and NaN recovery
struct OptSnap {
    ParamStore<float> params;
    std::vector<MatF> m, v;
    long t = 0;
    long step = 0;
};

Checkpoint assemble(const Checkpoint& proto, const OptSnap& snap, long iteration) {
    Checkpoint c = proto;
    c.params = snap.params;
    c.adam_m = snap.m;
    c.adam_v = snap.v;
    c.adam_t = snap.t;
    c.iteration = iteration;
    return c;
}

std::vector<LossRow> run_training(Model<float>& m, const Dataset& train,
                                  const NoiseSchedule& sched, const TrainConfig& cfg,
                                  const CondAssets& assets, Adam<float>& opt,
                                  const Checkpoint& proto, long iteration_base,
                                  const fs::path* last_good_dir, const EvalHook& hook) {
    const Index d_f = m.cfg.d_f, d_b = m.cfg.d_b;
    const Index B = cfg.batch;
    const size_t n_entries = m.params.size();
    const float lam_f = static_cast<float>(cfg.lambda_f);
    const float lam_b = static_cast<float>(cfg.lambda_b);

    Rng draw_rng(derive_seed(cfg.seed, kStreamBatch));
    const uint64_t drop_root = derive_seed(cfg.seed, kStreamDropout);

    std::vector<LossRow> curve;
    curve.reserve(static_cast<size_t>(cfg.iterations));

    OptSnap good;
    if (last_good_dir) good = {m.params, opt.moment1(), opt.moment2(), opt.iterations(), 0};

    for (long step = 0; step < cfg.iterations; ++step) {
        // all stochastic draws happen sequentially up front, so the step is
        // reproducible at any thread count
        std::vector<size_t> idx(static_cast<size_t>(B));
        std::vector<long> ts(static_cast<size_t>(B));
        std::vector<MatF> noise(static_cast<size_t>(B));
        std::vector<uint64_t> drop_seeds(static_cast<size_t>(B));
        for (Index b = 0; b < B; ++b) {
            idx[b] = static_cast<size_t>(draw_rng.below(train.samples.size()));
            ts[b] = static_cast<long>(draw_rng.below(static_cast<uint64_t>(sched.T)));
            const auto& s = train.samples[idx[b]];
            noise[b] = draw_rng.normal_matrix<float>(s.motion.frames(), d_f + d_b);
            drop_seeds[b] = derive_seed(
                drop_root, static_cast<uint64_t>(step) * static_cast<uint64_t>(B) +
                               static_cast<uint64_t>(b));
        }

        std::vector<std::vector<MatF>> sample_grads(static_cast<size_t>(B));
        std::vector<std::array<double, 3>> comps(static_cast<size_t>(B));
        parallel_for(static_cast<size_t>(B), [&](size_t b) {
            const Sample& s = train.samples[idx[b]];
            const MatF noise_f = noise[b].leftCols(d_f);
            const MatF noise_b = noise[b].rightCols(d_b);
            const MatF face_t = q_sample(s.motion.face, ts[b], noise_f, sched);
            const MatF body_t = q_sample(s.motion.body, ts[b], noise_b, sched);

            Tape<float> tape;
            CondVars<float> cv = tape_condition(tape, m.params, assets, s);
            Rng drop_rng(drop_seeds[b]);
            DropoutSpec drop{m.cfg.dropout, m.cfg.dropout > 0 ? &drop_rng : nullptr};
            auto out = model_forward(tape, m, face_t, body_t, s.audio.content, s.audio.rhythm,
                                     s.audio.semantics, ts[b], cv, nullptr, &drop);

            MatF hol(s.motion.frames(), d_f + d_b);
            hol << s.motion.face, s.motion.body;
            Var<float> l_h = track_loss(tape, out.hol0, tape.constant(std::move(hol)));
            Var<float> l_f = track_loss(tape, out.face0, tape.constant(s.motion.face));
            Var<float> l_b = track_loss(tape, out.body0, tape.constant(s.motion.body));
            Var<float> total =
                tape.add(l_h, tape.add(tape.scale(l_f, lam_f), tape.scale(l_b, lam_b)));
            tape.backward(total);

            comps[b] = {static_cast<double>(tape.val(l_h)(0, 0)),
                        static_cast<double>(tape.val(l_f)(0, 0)),
                        static_cast<double>(tape.val(l_b)(0, 0))};
            auto& g = sample_grads[b];
            g.reserve(n_entries);
            for (const auto& e : m.params.entries()) {
                const auto v = tape.find_leaf(&e.value);
                if (v.valid())
                    g.push_back(tape.grad(v));
                else
                    g.push_back(MatF::Zero(e.value.rows(), e.value.cols()));
            }
        });

        // reduce in sample-index order
        const float inv_b = 1.0f / static_cast<float>(B);
        std::vector<MatF> grads;
        grads.reserve(n_entries);
        for (size_t i = 0; i < n_entries; ++i) {
            MatF g = sample_grads[0][i];
            for (Index b = 1; b < B; ++b) g += sample_grads[static_cast<size_t>(b)][i];
            grads.push_back(g * inv_b);
        }

        double l_h = 0, l_f = 0, l_b = 0;
        for (const auto& c : comps) {
            l_h += c[0];
            l_f += c[1];
            l_b += c[2];
        }
        l_h /= B;
        l_f /= B;
        l_b /= B;
        const double total = l_h + cfg.lambda_f * l_f + cfg.lambda_b * l_b;

        bool finite = std::isfinite(total);
        for (const auto& g : grads)
            if (finite && !all_finite(g)) finite = false;
        if (!finite) {
            std::string note;
            if (last_good_dir) {
                save_checkpoint(assemble(proto, good, iteration_base + good.step),
                                *last_good_dir);
                note = "; last good state (step " + std::to_string(good.step) + ") saved to " +
                       last_good_dir->string();
            }
            throw NumericError("non-finite loss or gradient at step " + std::to_string(step) +
                               note);
        }

        if (cfg.clip_norm > 0) clip_grad_norm(grads, cfg.clip_norm);
        opt.step(grads);
        curve.push_back({step, l_h, l_f, l_b, total});

        if (last_good_dir)
            good = {m.params, opt.moment1(), opt.moment2(), opt.iterations(), step + 1};
        if (hook && cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0)
            hook(step + 1, assemble(proto,
                                    {m.params, opt.moment1(), opt.moment2(), opt.iterations(),
                                     step + 1},
                                    iteration_base + step + 1));
    }
    return curve;
}

}  // namespace

// ---- checkpoints ----

std::string Checkpoint::id() const {
    Fnv1a h;
    for (const auto& e : params.entries()) {
        h.update(e.name);
        h.update(e.value);
    }
    h.update(std::to_string(seed));
    h.update(std::to_string(iteration));
    h.update(parent_id);
    return h.hex();
}

void save_checkpoint(const Checkpoint& c, const fs::path& dir) {
    require(c.params.size() > 0, "checkpoint has no parameters");
    require(c.adam_m.size() == c.params.size() && c.adam_v.size() == c.params.size(),
            "optimizer state misaligned with parameters");
    fs::create_directories(dir);

    std::vector<MatF> tensors;
    tensors.reserve(c.params.size());
    for (const auto& e : c.params.entries()) tensors.push_back(e.value);
    write_blob_atomic(dir / "weights.f32", pack_blob(tensors));
    write_blob_atomic(dir / "adam_m.f32", pack_blob(c.adam_m));
    write_blob_atomic(dir / "adam_v.f32", pack_blob(c.adam_v));

    json man;
    man["version"] = kCheckpointFormatVersion;
    man["model"] = model_cfg_to_json(c.model_cfg);
    man["peft"] = c.peft ? peft_cfg_to_json(*c.peft) : json(nullptr);
    json tens = json::array();
    for (const auto& e : c.params.entries())
        tens.push_back(json{{"name", e.name}, {"rows", e.value.rows()}, {"cols", e.value.cols()}});
    man["tensors"] = tens;
    man["frozen"] = c.frozen;
    man["adam_t"] = c.adam_t;
    man["lr"] = c.lr;
    man["seed"] = std::to_string(c.seed);
    man["iteration"] = c.iteration;
    man["schedule_T"] = c.schedule_T;
    man["schedule_s"] = c.schedule_s;
    man["dataset_hash"] = c.dataset_hash;
    man["parent_id"] = c.parent_id;
    man["emotion_seed"] = std::to_string(c.emotion_seed);
    json refs = json::object();
    for (const auto& [label, ref] : c.identity_refs)
        refs[label] = json{{"stats_f", row_to_json(ref.stats_f)},
                           {"stats_b", row_to_json(ref.stats_b)}};
    man["identity_refs"] = refs;
    man["weights_hash"] = weights_hash(c.params);
    man["id"] = c.id();
    // the manifest lands last: a directory without one is an aborted write
    atomic_write_text(dir / "manifest.json", man.dump(2) + "\n");
}

Checkpoint load_checkpoint(const fs::path& dir) {
    json man;
    try {
        man = json::parse(read_text(dir / "manifest.json"));
    } catch (const json::parse_error& e) {
        throw ConfigError("checkpoint manifest is not valid JSON: " + std::string(e.what()));
    }
    require(man.value("version", "") == kCheckpointFormatVersion,
            "unsupported checkpoint format version");

    Checkpoint c;
    c.model_cfg = model_cfg_from_json(man.at("model"));
    c.model_cfg.validate();
    if (!man.at("peft").is_null()) {
        c.peft = peft_cfg_from_json(man.at("peft"));
        c.peft->validate();
    }
    c.frozen = man.at("frozen").get<std::vector<std::string>>();
    c.adam_t = man.at("adam_t").get<long>();
    c.lr = man.at("lr").get<double>();
    c.seed = std::stoull(man.at("seed").get<std::string>());
    c.iteration = man.at("iteration").get<long>();
    c.schedule_T = man.at("schedule_T").get<long>();
    c.schedule_s = man.at("schedule_s").get<double>();
    c.dataset_hash = man.at("dataset_hash").get<std::string>();
    c.parent_id = man.at("parent_id").get<std::string>();
    c.emotion_seed = std::stoull(man.at("emotion_seed").get<std::string>());
    for (const auto& [label, ref] : man.at("identity_refs").items())
        c.identity_refs[label] = {row_from_json(ref.at("stats_f")), row_from_json(ref.at("stats_b"))};

    Index total = 0;
    for (const auto& t : man.at("tensors")) {
        c.params.add(t.at("name").get<std::string>(), t.at("rows").get<Index>(),
                     t.at("cols").get<Index>());
        total += t.at("rows").get<Index>() * t.at("cols").get<Index>();
    }
    const MatF wblob = read_f32(dir / "weights.f32", 1, total);
    const MatF mblob = read_f32(dir / "adam_m.f32", 1, total);
    const MatF vblob = read_f32(dir / "adam_v.f32", 1, total);
    Index off = 0;
    for (auto& e : c.params.entries()) {
        MatF m(e.value.rows(), e.value.cols()), a(e.value.rows(), e.value.cols()),
            b(e.value.rows(), e.value.cols());
        for (Index i = 0; i < m.rows(); ++i) {
            for (Index j = 0; j < m.cols(); ++j) {
                m(i, j) = wblob(0, off);
                a(i, j) = mblob(0, off);
                b(i, j) = vblob(0, off);
                ++off;
            }
        }
        e.value = std::move(m);
        c.adam_m.push_back(std::move(a));
        c.adam_v.push_back(std::move(b));
    }
    require(weights_hash(c.params) == man.at("weights_hash").get<std::string>(),
            "checkpoint weight blob does not match its manifest hash");
    return c;
}

Model<float> model_from_checkpoint(const Checkpoint& c) {
    Model<float> m = build_model<float>(c.model_cfg, c.seed);
    if (c.peft) inject_peft(m, *c.peft, c.seed);
    require(m.params.size() == c.params.size(),
            "checkpoint tensor list disagrees with the architecture");
    for (const auto& e : c.params.entries()) {
        MatF& dst = m.params.at(e.name);
        require_shape(e.value, dst.rows(), dst.cols(), "checkpoint tensor " + e.name);
        dst = e.value;
    }
    return m;
}

// ---- condition rows ----

CondRows emotion_cond_rows(const ParamStore<float>& ps, const MatF& z_e) {
    return {linear_row(ps, "cond/proj_f", z_e), linear_row(ps, "cond/proj_b", z_e)};
}

CondRows identity_cond_rows(const ParamStore<float>& ps, const MatF& stats_f,
                            const MatF& stats_b) {
    const MatF zf = linear_row(
        ps, "cond/id_mlp_f/fc2",
        linear_row(ps, "cond/id_mlp_f/fc1", stats_f).unaryExpr(&gelu_scalar));
    const MatF zb = linear_row(
        ps, "cond/id_mlp_b/fc2",
        linear_row(ps, "cond/id_mlp_b/fc1", stats_b).unaryExpr(&gelu_scalar));
    return {linear_row(ps, "cond/proj_f", zf), linear_row(ps, "cond/proj_b", zb)};
}

std::optional<CondRows> resolve_condition(const Checkpoint& c, const ParamStore<float>& ps,
                                          const std::string& emotion_label,
                                          const std::string& identity_label) {
    if (!c.peft || c.peft->condition == CondSource::None) return std::nullopt;
    if (c.peft->condition == CondSource::Emotion) {
        require(c.emotion_seed != 0, "checkpoint lacks its emotion table seed");
        const MatF table = emotion_table(c.emotion_seed, c.model_cfg.d_z);
        return emotion_cond_rows(ps, emotion_embed(emotion_label, table));
    }
    const auto it = c.identity_refs.find(identity_label);
    require(it != c.identity_refs.end(),
            "checkpoint has no reference statistics for identity: " + identity_label);
    return identity_cond_rows(ps, it->second.stats_f, it->second.stats_b);
}

// ---- loss CSV ----

void write_loss_csv(const std::vector<LossRow>& rows, const fs::path& path) {
    std::ostringstream out;
    out << "step,L_H,L_F,L_B,total\n" << std::setprecision(17);
    for (const auto& r : rows)
        out << r.step << ',' << r.l_h << ',' << r.l_f << ',' << r.l_b << ',' << r.total << '\n';
    atomic_write_text(path, out.str());
}

std::vector<LossRow> read_loss_csv(const fs::path& path) {
    std::istringstream in(read_text(path));
    std::string line;
    require(static_cast<bool>(std::getline(in, line)) && line == "step,L_H,L_F,L_B,total",
            "unrecognized loss CSV header in " + path.string());
    std::vector<LossRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        LossRow r;
        char comma;
        std::istringstream ls(line);
        ls >> r.step >> comma >> r.l_h >> comma >> r.l_f >> comma >> r.l_b >> comma >> r.total;
        require(!ls.fail(), "malformed loss CSV row: " + line);
        rows.push_back(r);
    }
    return rows;
}

// ---- training entry points ----

TrainResult pretrain(const Dataset& train, const DUTransConfig& model_cfg,
                     const NoiseSchedule& sched, const TrainConfig& cfg,
                     const fs::path* last_good_dir, const EvalHook& eval_hook) {
    cfg.validate();
    model_cfg.validate();
    sched.validate();
    check_dataset_dims(train, model_cfg);

    Model<float> m = build_model<float>(model_cfg, cfg.seed);
    Adam<float> opt(m.params, cfg.lr, cfg.beta1, cfg.beta2);

    Checkpoint proto;
    proto.model_cfg = model_cfg;
    proto.seed = cfg.seed;
    proto.lr = cfg.lr;
    proto.schedule_T = sched.T;
    proto.schedule_s = sched.s;
    proto.dataset_hash = train.content_hash();

    CondAssets assets;
    TrainResult res;
    res.curve = run_training(m, train, sched, cfg, assets, opt, proto, 0, last_good_dir,
                             eval_hook);
    res.checkpoint =
        assemble(proto, {m.params, opt.moment1(), opt.moment2(), opt.iterations(), 0},
                 cfg.iterations);
    return res;
}

TrainResult finetune(const Checkpoint& parent, const Dataset& train, PEFTConfig peft_cfg,
                     const TrainConfig& cfg, ConditionTask task, const fs::path* last_good_dir,
                     const EvalHook& eval_hook) {
    cfg.validate();
    peft_cfg.condition =
        task == ConditionTask::Emotion ? CondSource::Emotion : CondSource::Identity;
    peft_cfg.validate();
    check_dataset_dims(train, parent.model_cfg);

    Model<float> m = model_from_checkpoint(parent);
    std::vector<std::string> frozen;
    if (parent.peft) {
        require(peft_equal(*parent.peft, peft_cfg),
                "continuing a finetune requires the parent's exact adapter configuration");
        frozen = parent.frozen;
    } else {
        frozen = inject_peft(m, peft_cfg, cfg.seed);
    }

    require(parent.schedule_T >= 2, "parent checkpoint lacks its noise schedule");
    const NoiseSchedule sched = cosine_schedule(parent.schedule_T, parent.schedule_s);

    Checkpoint proto;
    proto.model_cfg = parent.model_cfg;
    proto.peft = peft_cfg;
    proto.frozen = frozen;
    proto.seed = cfg.seed;
    proto.lr = cfg.lr;
    proto.schedule_T = parent.schedule_T;
    proto.schedule_s = parent.schedule_s;
    proto.dataset_hash = train.content_hash();
    proto.parent_id = parent.id();

    CondAssets assets;
    assets.source = peft_cfg.condition;
    if (peft_cfg.condition == CondSource::Emotion) {
        proto.emotion_seed =
            parent.emotion_seed != 0 ? parent.emotion_seed : derive_seed(cfg.seed, kStreamEmoTable);
        if (proto.emotion_seed == 0) proto.emotion_seed = 1;
        assets.table = emotion_table(proto.emotion_seed, m.cfg.d_z);
    } else {
        proto.identity_refs = parent.identity_refs;
        // the earliest clip of each unseen identity becomes its fixed reference
        for (const auto& s : train.samples) {
            const std::string& label = s.motion.identity_label;
            if (!proto.identity_refs.count(label))
                proto.identity_refs[label] = {identity_stats(s.motion.face),
                                              identity_stats(s.motion.body)};
        }
        assets.refs = &proto.identity_refs;
    }

    Adam<float> opt(m.params, cfg.lr, cfg.beta1, cfg.beta2);
    opt.set_frozen(frozen);

    TrainResult res;
    res.curve = run_training(m, train, sched, cfg, assets, opt, proto, parent.iteration,
                             last_good_dir, eval_hook);
    // frozen tensors must leave the run exactly as they entered it
    for (const auto& name : frozen)
        require(m.params.hash_of(name) == parent.params.hash_of(name),
                "frozen tensor changed during finetune: " + name);

    res.checkpoint =
        assemble(proto, {m.params, opt.moment1(), opt.moment2(), opt.iterations(), 0},
                 parent.iteration + cfg.iterations);
    return res;
}

// ---- sampling ----

MotionSequence sample_motion(const Model<float>& m, const AudioFeatureTrack& audio,
                             const NoiseSchedule& sched, double fps, uint64_t seed,
                             const MatF* cond_f, const MatF* cond_b) {
    audio.validate();
    require(audio.content.cols() == m.cfg.d_c && audio.semantics.cols() == m.cfg.d_s,
            "audio track widths disagree with the model config");
    Denoiser denoiser = [&](const MatF& face_t, const MatF& body_t, long t) {
        return model_predict(m, face_t, body_t, audio.content, audio.rhythm, audio.semantics, t,
                             cond_f, cond_b)
            .hol0;
    };
    const SampleDims dims{audio.frames(), m.cfg.d_f, m.cfg.d_b, fps};
    return sample_loop(denoiser, dims, sched, seed);
}

}  // namespace dumotion
