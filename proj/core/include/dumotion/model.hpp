#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "dumotion/autodiff.hpp"
#include "dumotion/model_config.hpp"
#include "dumotion/params.hpp"
#include "dumotion/peft.hpp"

namespace dumotion {

// Two divided encoders over (audio + noisy motion) hidden sums, a Bi-Flow
// cross-attention exchange between them, and a united decoder whose holistic
// head predicts the clean face+body signal. The timestep embedding rides as a
// prepended token; it is stripped before every head.
template <typename S>
struct Model {
    DUTransConfig cfg;
    ParamStore<S> params;
    Mat<S> pe;  // fixed sinusoidal table, (max_frames+1) x d; not a parameter
    std::optional<PEFTConfig> peft;
};

template <typename S>
Mat<S> sinusoid_table(Index rows, Index d) {
    Mat<S> pe(rows, d);
    for (Index pos = 0; pos < rows; ++pos) {
        for (Index i = 0; i < d / 2; ++i) {
            const double freq =
                std::exp(-std::log(10000.0) * (2.0 * static_cast<double>(i) / static_cast<double>(d)));
            const double angle = static_cast<double>(pos) * freq;
            pe(pos, 2 * i) = static_cast<S>(std::sin(angle));
            pe(pos, 2 * i + 1) = static_cast<S>(std::cos(angle));
        }
    }
    return pe;
}

namespace detail {

template <typename S>
void add_mha_params(ParamStore<S>& ps, uint64_t seed, const std::string& prefix, Index d) {
    for (const char* part : {"/q", "/k", "/v", "/o"}) add_linear(ps, seed, prefix + part, d, d);
}

template <typename S>
void add_ffn_params(ParamStore<S>& ps, uint64_t seed, const std::string& prefix, Index d) {
    add_linear(ps, seed, prefix + "/fc1", d, 2 * d);
    add_linear(ps, seed, prefix + "/fc2", 2 * d, d);
}

inline std::string enc_layer(const std::string& branch, Index i) {
    return branch + "/L" + std::to_string(i);
}

}  // namespace detail

template <typename S>
Model<S> build_model(const DUTransConfig& cfg, uint64_t seed) {
    cfg.validate();
    Model<S> m;
    m.cfg = cfg;
    m.pe = sinusoid_table<S>(cfg.max_frames + 1, cfg.d);
    ParamStore<S>& ps = m.params;

    add_linear(ps, seed, "face_proj/motion", cfg.d_f, cfg.d);
    add_linear(ps, seed, "face_proj/content", cfg.d_c, cfg.d);
    add_linear(ps, seed, "face_proj/rhythm", 1, cfg.d);
    add_linear(ps, seed, "body_proj/motion", cfg.d_b, cfg.d);
    add_linear(ps, seed, "body_proj/semantics", cfg.d_s, cfg.d);
    add_linear(ps, seed, "body_proj/rhythm", 1, cfg.d);

    add_linear(ps, seed, "time_mlp/fc1", cfg.d, cfg.d);
    add_linear(ps, seed, "time_mlp/fc2", cfg.d, cfg.d);

    for (const std::string branch : {"enc_f", "enc_b"}) {
        for (Index i = 1; i <= cfg.layers; ++i) {
            const std::string L = detail::enc_layer(branch, i);
            detail::add_mha_params(ps, seed, L + "/attn", cfg.d);
            add_layer_norm(ps, L + "/ln1", cfg.d);
            detail::add_ffn_params(ps, seed, L + "/ffn", cfg.d);
            add_layer_norm(ps, L + "/ln2", cfg.d);
        }
    }

    for (Index i : cfg.biflow_layers) {
        for (const std::string dir : {"into_f", "into_b"}) {
            const std::string B = "biflow/L" + std::to_string(i) + "/" + dir;
            add_linear(ps, seed, B + "/q", cfg.d, cfg.d);
            add_linear(ps, seed, B + "/k", cfg.d, cfg.d);
            add_linear(ps, seed, B + "/v", cfg.d, cfg.d);
            add_layer_norm(ps, B + "/ln", cfg.d);
            add_linear(ps, seed, B + "/mlp/fc1", cfg.d, cfg.d / 2);
            // zero-init output layer: the exchange is the identity until trained
            add_linear(ps, seed, B + "/mlp/fc2", cfg.d / 2, cfg.d, /*zero_init=*/true);
        }
    }

    for (Index i = 1; i <= cfg.decoder_layers; ++i) {
        const std::string L = "dec/L" + std::to_string(i);
        detail::add_mha_params(ps, seed, L + "/self", cfg.d);
        add_layer_norm(ps, L + "/ln1", cfg.d);
        detail::add_mha_params(ps, seed, L + "/cross", cfg.d);
        add_layer_norm(ps, L + "/ln2", cfg.d);
        detail::add_ffn_params(ps, seed, L + "/ffn", cfg.d);
        add_layer_norm(ps, L + "/ln3", cfg.d);
    }

    add_linear(ps, seed, "head/face", cfg.d, cfg.d_f);
    add_linear(ps, seed, "head/body", cfg.d, cfg.d_b);
    add_linear(ps, seed, "head/holistic", cfg.d, cfg.d_h());
    return m;
}

// ---- forward ----

template <typename S>
struct CondVars {
    Var<S> face;  // 1 x d, invalid when no condition is routed
    Var<S> body;
};

template <typename S>
struct ForwardOut {
    Var<S> face0;  // N x D_F
    Var<S> body0;  // N x D_B
    Var<S> hol0;   // N x D_H
};

struct GateReport {
    std::vector<std::pair<std::string, double>> open_fraction;  // site -> fraction
};

// Training-time dropout; masks are drawn from the caller's stream so runs
// stay reproducible. Null rng or zero rate disables it.
struct DropoutSpec {
    double rate = 0.0;
    Rng* rng = nullptr;
    bool active() const { return rng != nullptr && rate > 0.0; }
};

namespace detail {

template <typename S>
Var<S> dropout_mask(Tape<S>& tape, Var<S> x, const DropoutSpec* drop) {
    if (!drop || !drop->active()) return x;
    const Mat<S>& v = tape.val(x);
    Mat<S> mask(v.rows(), v.cols());
    const S keep = static_cast<S>(1.0 - drop->rate);
    for (Index i = 0; i < mask.rows(); ++i)
        for (Index j = 0; j < mask.cols(); ++j)
            mask(i, j) = drop->rng->uniform() < drop->rate ? S(0) : S(1) / keep;
    return tape.hadamard(x, tape.constant(std::move(mask)));
}

// Multi-head attention; when prefix_site is non-empty, a decomposed
// zero-init prefix stream adds its own softmax term per head (the base
// attention normalization is untouched, which is what keeps injection
// output-preserving).
template <typename S>
Var<S> mha(Tape<S>& tape, const ParamStore<S>& ps, const std::string& prefix, Index n_heads,
           Var<S> q_in, Var<S> kv_in, const std::string& prefix_site = {},
           Var<S> cond = {}) {
    Var<S> Q = linear(tape, ps, prefix + "/q", q_in);
    Var<S> K = linear(tape, ps, prefix + "/k", kv_in);
    Var<S> V = linear(tape, ps, prefix + "/v", kv_in);
    const Index d = tape.val(Q).cols();
    const Index dk = d / n_heads;
    const S inv_sqrt_dk = S(1) / static_cast<S>(std::sqrt(static_cast<double>(dk)));

    Var<S> Kp, Vp;
    if (!prefix_site.empty()) {
        Kp = tape.leaf(&ps.at(prefix_site + "/Kp"));
        if (cond.valid()) Kp = tape.add_rowvec(Kp, cond);
        Vp = tape.leaf(&ps.at(prefix_site + "/Vp"));
    }

    Var<S> heads;
    for (Index h = 0; h < n_heads; ++h) {
        Var<S> Qh = tape.slice_cols(Q, h * dk, dk);
        Var<S> Kh = tape.slice_cols(K, h * dk, dk);
        Var<S> Vh = tape.slice_cols(V, h * dk, dk);
        Var<S> attn =
            tape.softmax_rows(tape.scale(tape.matmul(Qh, tape.transpose(Kh)), inv_sqrt_dk));
        Var<S> out_h = tape.matmul(attn, Vh);
        if (!prefix_site.empty()) {
            Var<S> Kph = tape.slice_cols(Kp, h * dk, dk);
            Var<S> Vph = tape.slice_cols(Vp, h * dk, dk);
            Var<S> pattn =
                tape.softmax_rows(tape.scale(tape.matmul(Qh, tape.transpose(Kph)), inv_sqrt_dk));
            out_h = tape.add(out_h, tape.matmul(pattn, Vph));
        }
        heads = h == 0 ? out_h : tape.hconcat(heads, out_h);
    }
    return linear(tape, ps, prefix + "/o", heads);
}

template <typename S>
Var<S> ffn(Tape<S>& tape, const ParamStore<S>& ps, const std::string& prefix, Var<S> x) {
    return linear(tape, ps, prefix + "/fc2", tape.gelu(linear(tape, ps, prefix + "/fc1", x)));
}

struct SiteCtx {
    const PEFTConfig* peft = nullptr;
    GateReport* gates = nullptr;
};

// Post-LN sublayer with optional adapter: parallel form reads the sublayer
// input, serial form the sublayer output.
template <typename S>
Var<S> sublayer_with_adapter(Tape<S>& tape, const ParamStore<S>& ps, const std::string& ln_name,
                             Var<S> x, Var<S> sub_out, const std::string& site,
                             const SiteCtx& ctx, Var<S> cond, const DropoutSpec* drop) {
    Var<S> sum = tape.add(x, dropout_mask(tape, sub_out, drop));
    if (!site.empty() && ctx.peft && ctx.peft->variant != PeftVariant::Prefix) {
        Var<S> h = ctx.peft->form == AdapterForm::Parallel ? x : sub_out;
        double frac = -1;
        Var<S> delta = adapter_delta(tape, ps, site, *ctx.peft, h, cond,
                                     ctx.gates ? &frac : nullptr);
        if (ctx.gates && frac >= 0) ctx.gates->open_fraction.emplace_back(site, frac);
        sum = tape.add(sum, delta);
    }
    return layer_norm(tape, ps, ln_name, sum);
}

}  // namespace detail

template <typename S>
ForwardOut<S> model_forward(Tape<S>& tape, const Model<S>& m, const Mat<S>& face_t,
                            const Mat<S>& body_t, const Mat<S>& a_content, const Mat<S>& a_rhythm,
                            const Mat<S>& a_semantics, long t, CondVars<S> cond = {},
                            GateReport* gates = nullptr, const DropoutSpec* drop = nullptr) {
    const DUTransConfig& cfg = m.cfg;
    const Index N = face_t.rows();
    require(N >= 1 && N <= cfg.max_frames, "forward: frame count outside 1..max_frames");
    require(body_t.rows() == N && a_content.rows() == N && a_rhythm.rows() == N &&
                a_semantics.rows() == N,
            "forward: all tracks must share the frame count");
    require(face_t.cols() == cfg.d_f && body_t.cols() == cfg.d_b && a_content.cols() == cfg.d_c &&
                a_rhythm.cols() == 1 && a_semantics.cols() == cfg.d_s,
            "forward: track widths disagree with the config");
    require(t >= 0, "forward: negative timestep");

    const ParamStore<S>& ps = m.params;
    detail::SiteCtx ctx{m.peft ? &*m.peft : nullptr, gates};

    // timestep token: sinusoid -> 2-layer MLP
    Mat<S> t_sin(1, cfg.d);
    for (Index i = 0; i < cfg.d / 2; ++i) {
        const double freq = std::exp(-std::log(10000.0) *
                                     (2.0 * static_cast<double>(i) / static_cast<double>(cfg.d)));
        t_sin(0, 2 * i) = static_cast<S>(std::sin(static_cast<double>(t) * freq));
        t_sin(0, 2 * i + 1) = static_cast<S>(std::cos(static_cast<double>(t) * freq));
    }
    Var<S> e_t = linear(tape, ps, "time_mlp/fc2",
                        tape.silu(linear(tape, ps, "time_mlp/fc1", tape.constant(t_sin))));

    Var<S> vc = tape.constant(a_content);
    Var<S> vr = tape.constant(a_rhythm);
    Var<S> vs = tape.constant(a_semantics);

    // branch inputs: per-track projections summed in hidden space, timestep
    // token prepended, positions added
    Var<S> pe_tokens = tape.constant(Mat<S>(m.pe.topRows(N + 1)));
    auto branch_input = [&](const Mat<S>& motion, const std::string& proj,
                            const std::string& audio_track, Var<S> audio) {
        Var<S> x = tape.add(linear(tape, ps, proj + "/motion", tape.constant(motion)),
                            tape.add(linear(tape, ps, proj + "/" + audio_track, audio),
                                     linear(tape, ps, proj + "/rhythm", vr)));
        return tape.add(tape.vconcat(e_t, x), pe_tokens);
    };
    Var<S> xf = branch_input(face_t, "face_proj", "content", vc);
    Var<S> xb = branch_input(body_t, "body_proj", "semantics", vs);

    auto encoder_layer = [&](Var<S> x, const std::string& branch, Index i, Var<S> c) {
        const std::string L = detail::enc_layer(branch, i);
        const std::string site_base = "adapter/" + L;
        const bool prefixed = ctx.peft && ctx.peft->variant == PeftVariant::Prefix;
        Var<S> attn = detail::mha(tape, ps, L + "/attn", cfg.n_heads, x, x,
                                  prefixed ? site_base + "/mha" : std::string(), c);
        x = detail::sublayer_with_adapter(
            tape, ps, L + "/ln1", x, attn,
            ctx.peft && !prefixed && ctx.peft->site_mha ? site_base + "/mha" : std::string(), ctx,
            c, drop);
        Var<S> f = detail::ffn(tape, ps, L + "/ffn", x);
        x = detail::sublayer_with_adapter(
            tape, ps, L + "/ln2", x, f,
            ctx.peft && !prefixed && ctx.peft->site_ffn ? site_base + "/ffn" : std::string(), ctx,
            c, drop);
        return x;
    };

    // single-head bidirectional exchange; both directions read pre-exchange
    // features, and the zero-init output MLP makes it the identity at build
    auto biflow = [&](Var<S> ff, Var<S> fb, Index i) {
        auto one_direction = [&](const std::string& dir, Var<S> q_src, Var<S> kv_src) {
            const std::string B = "biflow/L" + std::to_string(i) + "/" + dir;
            Var<S> Q = linear(tape, ps, B + "/q", q_src);
            Var<S> K = linear(tape, ps, B + "/k", kv_src);
            Var<S> V = linear(tape, ps, B + "/v", kv_src);
            const S inv = S(1) / static_cast<S>(std::sqrt(static_cast<double>(cfg.d)));
            Var<S> xattn = tape.matmul(
                tape.softmax_rows(tape.scale(tape.matmul(Q, tape.transpose(K)), inv)), V);
            Var<S> delta = detail::ffn(tape, ps, B + "/mlp", layer_norm(tape, ps, B + "/ln", xattn));
            return tape.add(q_src, delta);
        };
        Var<S> ff2 = one_direction("into_f", ff, fb);
        Var<S> fb2 = one_direction("into_b", fb, ff);
        return std::pair<Var<S>, Var<S>>(ff2, fb2);
    };

    for (Index i = 1; i <= cfg.layers; ++i) {
        xf = encoder_layer(xf, "enc_f", i, cond.face);
        xb = encoder_layer(xb, "enc_b", i, cond.body);
        if (cfg.has_biflow(i)) std::tie(xf, xb) = biflow(xf, xb, i);
    }

    // united decoder over the summed branch features with cross-attention on
    // the fused audio summary (branch projections reused)
    Var<S> xd = tape.add(xf, xb);
    Var<S> mem = tape.add(tape.add(linear(tape, ps, "face_proj/content", vc),
                                   linear(tape, ps, "body_proj/semantics", vs)),
                          tape.add(linear(tape, ps, "face_proj/rhythm", vr),
                                   tape.constant(Mat<S>(m.pe.middleRows(1, N)))));
    for (Index i = 1; i <= cfg.decoder_layers; ++i) {
        const std::string L = "dec/L" + std::to_string(i);
        Var<S> self = detail::mha(tape, ps, L + "/self", cfg.n_heads, xd, xd);
        xd = layer_norm(tape, ps, L + "/ln1", tape.add(xd, detail::dropout_mask(tape, self, drop)));
        Var<S> cross = detail::mha(tape, ps, L + "/cross", cfg.n_heads, xd, mem);
        xd = layer_norm(tape, ps, L + "/ln2",
                        tape.add(xd, detail::dropout_mask(tape, cross, drop)));
        Var<S> f = detail::ffn(tape, ps, L + "/ffn", xd);
        xd = layer_norm(tape, ps, L + "/ln3", tape.add(xd, detail::dropout_mask(tape, f, drop)));
    }

    // strip the timestep token, then heads
    ForwardOut<S> out;
    out.face0 = linear(tape, ps, "head/face", tape.slice_rows(xf, 1, N));
    out.body0 = linear(tape, ps, "head/body", tape.slice_rows(xb, 1, N));
    out.hol0 = linear(tape, ps, "head/holistic", tape.slice_rows(xd, 1, N));
    return out;
}

// Plain-value forward for sampling/eval (no gradient bookkeeping).
template <typename S>
struct ForwardValues {
    Mat<S> face0, body0, hol0;
};

template <typename S>
ForwardValues<S> model_predict(const Model<S>& m, const Mat<S>& face_t, const Mat<S>& body_t,
                               const Mat<S>& a_content, const Mat<S>& a_rhythm,
                               const Mat<S>& a_semantics, long t,
                               const Mat<S>* cond_f = nullptr, const Mat<S>* cond_b = nullptr) {
    Tape<S> tape(/*track_grad=*/false);
    CondVars<S> cond;
    if (cond_f) cond.face = tape.constant(*cond_f);
    if (cond_b) cond.body = tape.constant(*cond_b);
    auto out = model_forward(tape, m, face_t, body_t, a_content, a_rhythm, a_semantics, t, cond);
    return {tape.val(out.face0), tape.val(out.body0), tape.val(out.hol0)};
}

// ---- injection & accounting ----

// Attaches adapters at the configured sites of both encoders plus the
// condition pathway, and returns the frozen-tensor list: everything present
// before injection except the three heads.
template <typename S>
std::vector<std::string> inject_peft(Model<S>& m, const PEFTConfig& cfg, uint64_t seed) {
    cfg.validate();
    require(!m.peft.has_value(), "adapters already injected");
    for (const auto& e : m.params.entries())
        require(e.name.rfind("adapter/", 0) != 0, "adapters already injected");

    std::vector<std::string> frozen;
    for (const auto& e : m.params.entries())
        if (e.name.rfind("head/", 0) != 0) frozen.push_back(e.name);

    for (const std::string branch : {"enc_f", "enc_b"}) {
        for (Index i = 1; i <= m.cfg.layers; ++i) {
            const std::string base = "adapter/" + detail::enc_layer(branch, i);
            if (cfg.variant == PeftVariant::Prefix || cfg.site_mha)
                add_adapter_site(m.params, seed, base + "/mha", m.cfg.d, cfg);
            if (cfg.variant != PeftVariant::Prefix && cfg.site_ffn)
                add_adapter_site(m.params, seed, base + "/ffn", m.cfg.d, cfg);
        }
    }

    if (cfg.condition != CondSource::None) {
        add_linear(m.params, seed, "cond/proj_f", m.cfg.d_z, m.cfg.d);
        add_linear(m.params, seed, "cond/proj_b", m.cfg.d_z, m.cfg.d);
        if (cfg.condition == CondSource::Identity) {
            add_linear(m.params, seed, "cond/id_mlp_f/fc1", 2 * m.cfg.d_f, m.cfg.d_z);
            add_linear(m.params, seed, "cond/id_mlp_f/fc2", m.cfg.d_z, m.cfg.d_z);
            add_linear(m.params, seed, "cond/id_mlp_b/fc1", 2 * m.cfg.d_b, m.cfg.d_z);
            add_linear(m.params, seed, "cond/id_mlp_b/fc2", m.cfg.d_z, m.cfg.d_z);
        }
    }

    m.peft = cfg;
    return frozen;
}

template <typename S>
long count_parameters(const Model<S>& m, bool trainable_only = false,
                      const std::vector<std::string>& frozen = {}) {
    for (const auto& name : frozen)
        require(m.params.has(name), "frozen mask names unknown parameter: " + name);
    std::unordered_set<std::string> mask(frozen.begin(), frozen.end());
    long n = 0;
    for (const auto& e : m.params.entries()) {
        if (trainable_only && mask.count(e.name)) continue;
        n += static_cast<long>(e.value.size());
    }
    return n;
}

// First path segment: "enc_f/L3/attn/q/W" -> "enc_f". Used to group
// parameters when sampling gradient checks.
inline std::string param_family(const std::string& name) {
    const size_t slash = name.find('/');
    return slash == std::string::npos ? name : name.substr(0, slash);
}

}  // namespace dumotion
