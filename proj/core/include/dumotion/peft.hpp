#pragma once

#include <string>
#include <vector>

#include "dumotion/autodiff.hpp"
#include "dumotion/model_config.hpp"
#include "dumotion/params.hpp"

namespace dumotion {

enum class PeftVariant { XAdapter, Lora, Prefix };
enum class AdapterForm { Parallel, Serial };
enum class ScaleMode { Dynamic, FixedOne, LearnableScalar };
enum class CondSource { None, Emotion, Identity };

struct PEFTConfig {
    PeftVariant variant = PeftVariant::XAdapter;
    AdapterForm form = AdapterForm::Parallel;
    ScaleMode scale = ScaleMode::Dynamic;
    Index rank = 128;
    bool site_mha = true;
    bool site_ffn = true;
    Index prefix_length = 64;
    CondSource condition = CondSource::None;

    void validate() const {
        require(rank >= 1, "adapter rank must be >= 1");
        require(site_mha || site_ffn, "at least one adapter site required");
        if (variant == PeftVariant::Prefix) {
            require(prefix_length >= 1, "prefix length must be >= 1");
            require(site_mha && !site_ffn, "prefix tokens attach to MHA sites only");
        }
        if (variant == PeftVariant::Lora)
            require(form == AdapterForm::Parallel, "low-rank deltas branch in parallel");
    }
};

inline PeftVariant peft_variant_from_string(const std::string& s) {
    if (s == "x_adapter") return PeftVariant::XAdapter;
    if (s == "lora") return PeftVariant::Lora;
    if (s == "prefix") return PeftVariant::Prefix;
    throw ConfigError("unknown peft variant: " + s);
}

inline std::string to_string(PeftVariant v) {
    switch (v) {
        case PeftVariant::XAdapter: return "x_adapter";
        case PeftVariant::Lora: return "lora";
        case PeftVariant::Prefix: return "prefix";
    }
    return "?";
}

inline AdapterForm adapter_form_from_string(const std::string& s) {
    if (s == "parallel") return AdapterForm::Parallel;
    if (s == "serial") return AdapterForm::Serial;
    throw ConfigError("unknown adapter form: " + s);
}

inline std::string to_string(AdapterForm f) {
    return f == AdapterForm::Parallel ? "parallel" : "serial";
}

inline ScaleMode scale_mode_from_string(const std::string& s) {
    if (s == "dynamic") return ScaleMode::Dynamic;
    if (s == "fixed_one") return ScaleMode::FixedOne;
    if (s == "learnable") return ScaleMode::LearnableScalar;
    throw ConfigError("unknown scale mode: " + s);
}

inline std::string to_string(ScaleMode m) {
    switch (m) {
        case ScaleMode::Dynamic: return "dynamic";
        case ScaleMode::FixedOne: return "fixed_one";
        case ScaleMode::LearnableScalar: return "learnable";
    }
    return "?";
}

inline CondSource cond_source_from_string(const std::string& s) {
    if (s == "none") return CondSource::None;
    if (s == "emotion") return CondSource::Emotion;
    if (s == "identity") return CondSource::Identity;
    throw ConfigError("unknown condition source: " + s);
}

inline std::string to_string(CondSource c) {
    switch (c) {
        case CondSource::None: return "none";
        case CondSource::Emotion: return "emotion";
        case CondSource::Identity: return "identity";
    }
    return "?";
}

// ---- per-site parameters ----
// Site prefixes look like "adapter/enc_f/L3/mha". The bottleneck body keeps
// its delta at exactly zero until training moves W_up off its zero init, so
// an injected model reproduces the base model's outputs.

template <typename S>
void add_adapter_site(ParamStore<S>& ps, uint64_t seed, const std::string& site, Index d,
                      const PEFTConfig& cfg) {
    switch (cfg.variant) {
        case PeftVariant::XAdapter:
            add_linear(ps, seed, site + "/down", d, cfg.rank);
            add_linear(ps, seed, site + "/up", cfg.rank, d, /*zero_init=*/true);
            if (cfg.scale == ScaleMode::Dynamic) add_linear(ps, seed, site + "/scale", d, 1);
            if (cfg.scale == ScaleMode::LearnableScalar) ps.add(site + "/s", 1, 1).setOnes();
            break;
        case PeftVariant::Lora: {
            ps.add(site + "/A", d, cfg.rank);
            xavier_init(ps, seed, site + "/A");
            ps.add(site + "/B", cfg.rank, d);  // zero init
            add_linear(ps, seed, site + "/scale", d, 1);
            break;
        }
        case PeftVariant::Prefix:
            ps.add(site + "/Kp", cfg.prefix_length, d);  // zero init
            ps.add(site + "/Vp", cfg.prefix_length, d);
            break;
    }
}

// Exact per-site trainable element counts, used by the ablation audit.
inline long adapter_site_params(const PEFTConfig& cfg, Index d) {
    const long dd = static_cast<long>(d);
    const long r = static_cast<long>(cfg.rank);
    switch (cfg.variant) {
        case PeftVariant::XAdapter: {
            long n = (dd * r + r) + (r * dd + dd);
            if (cfg.scale == ScaleMode::Dynamic) n += dd + 1;
            if (cfg.scale == ScaleMode::LearnableScalar) n += 1;
            return n;
        }
        case PeftVariant::Lora: return 2 * dd * r + (dd + 1);
        case PeftVariant::Prefix: return 2 * static_cast<long>(cfg.prefix_length) * dd;
    }
    return 0;
}

inline long adapter_sites_per_model(const PEFTConfig& cfg, const DUTransConfig& mc) {
    const long per_encoder =
        cfg.variant == PeftVariant::Prefix
            ? static_cast<long>(mc.layers)
            : static_cast<long>(mc.layers) * ((cfg.site_mha ? 1 : 0) + (cfg.site_ffn ? 1 : 0));
    return 2 * per_encoder;  // both encoder branches
}

inline long expected_adapter_params(const PEFTConfig& cfg, const DUTransConfig& mc) {
    return adapter_sites_per_model(cfg, mc) * adapter_site_params(cfg, mc.d);
}

// Condition pathway: two d_z -> d projections, plus the two identity MLPs
// (2D -> d_z -> d_z) when the identity code is the source.
inline long expected_cond_params(const PEFTConfig& cfg, const DUTransConfig& mc) {
    if (cfg.condition == CondSource::None) return 0;
    const long d = mc.d, dz = mc.d_z;
    long n = 2 * (dz * d + d);
    if (cfg.condition == CondSource::Identity)
        n += (2 * mc.d_f * dz + dz) + (dz * dz + dz) + (2 * mc.d_b * dz + dz) + (dz * dz + dz);
    return n;
}

// ---- tape builders ----

// Delta for one bottleneck-style site. h is the (N+1) x d stream the adapter
// reads (sublayer input in parallel form, sublayer output in serial form);
// cond is a 1 x d row (invalid Var when no condition is routed). When
// gate_fraction is non-null and the dynamic gate is active, it receives the
// fraction of tokens whose ReLU gate is open (the updated-token diagnostic).
template <typename S>
Var<S> adapter_delta(Tape<S>& tape, const ParamStore<S>& ps, const std::string& site,
                     const PEFTConfig& cfg, Var<S> h, Var<S> cond,
                     double* gate_fraction = nullptr) {
    Var<S> m = cond.valid() ? tape.add_rowvec(h, cond) : h;
    Var<S> body;
    if (cfg.variant == PeftVariant::Lora) {
        body = tape.matmul(tape.matmul(m, tape.leaf(&ps.at(site + "/A"))),
                           tape.leaf(&ps.at(site + "/B")));
    } else {
        body = linear(tape, ps, site + "/up", tape.silu(linear(tape, ps, site + "/down", m)));
    }
    const bool dynamic = cfg.variant == PeftVariant::Lora || cfg.scale == ScaleMode::Dynamic;
    if (dynamic) {
        Var<S> s_d = tape.relu(linear(tape, ps, site + "/scale", h));
        if (gate_fraction) {
            const Mat<S>& sv = tape.val(s_d);
            *gate_fraction = static_cast<double>((sv.array() > S(0)).count()) /
                             static_cast<double>(sv.rows());
        }
        return tape.rowwise_scale(body, s_d);
    }
    if (cfg.scale == ScaleMode::LearnableScalar)
        return tape.scale_by(body, tape.leaf(&ps.at(site + "/s")));
    return body;  // fixed 1.0
}

}  // namespace dumotion
