// dumotion: synthetic-data generation, diffusion training, adapter
// finetuning, sampling, evaluation, ablation sweeps, and SVG plots, all
// driven by INI configs with --set overrides.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <limits>
#include <optional>
#include <unordered_set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dumotion/config.hpp"
#include "dumotion/conditioning.hpp"
#include "dumotion/data.hpp"
#include "dumotion/metrics.hpp"
#include "dumotion/model.hpp"
#include "dumotion/peft.hpp"
#include "dumotion/schedule.hpp"
#include "dumotion/tensor_io.hpp"
#include "dumotion/threads.hpp"
#include "dumotion/training.hpp"

namespace fs = std::filesystem;
using namespace dumotion;

namespace {

constexpr int kExitUsage = 2;    // bad flags / malformed invocation
constexpr int kExitConfig = 3;   // config parse, schema, or value errors
constexpr int kExitPath = 4;     // missing or unwritable paths
constexpr int kExitRuntime = 5;  // numeric failures and everything else

// ---- small shared helpers ----

Config load_config(const std::string& path, const std::vector<std::string>& sets) {
    Config c = path.empty() ? Config::parse_string("", "<defaults>") : Config::parse_file(path);
    for (const auto& s : sets) c.set_dotted(s);
    return c;
}

void require_dir(const std::string& p, const std::string& what) {
    if (p.empty() || !fs::is_directory(p)) throw IoError(what + " directory not found: " + p);
}

void require_file(const std::string& p, const std::string& what) {
    if (p.empty() || !fs::is_regular_file(p)) throw IoError(what + " file not found: " + p);
}

std::vector<std::string> split_on(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) out.push_back(cur);
    return out;
}

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t");
    return s.substr(a, b - a + 1);
}

double to_double(const std::string& s, const std::string& what) {
    try {
        size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(what + ": cannot parse number '" + s + "'");
    }
}

uint64_t to_u64(const std::string& s, const std::string& what) {
    try {
        size_t pos = 0;
        const uint64_t v = std::stoull(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(what + ": cannot parse integer '" + s + "'");
    }
}

// section names in file order, for grid files whose variant sections are free-form
std::vector<std::string> section_names(const std::string& path) {
    const std::string text = read_text(path);
    std::vector<std::string> names;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const std::string t = trim(line);
        if (t.size() >= 2 && t.front() == '[' && t.back() == ']')
            names.push_back(trim(t.substr(1, t.size() - 2)));
    }
    return names;
}

std::string fmt_g(double v, int precision = 6) {
    std::ostringstream os;
    os << std::setprecision(precision) << v;
    return os.str();
}

// ---- SVG line charts (hand-rolled; no external renderer) ----

struct Series {
    std::string label;
    std::vector<double> ys;
};

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '&') out += "&amp;";
        else if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else out += c;
    }
    return out;
}

std::string svg_chart(const std::string& title, const std::string& x_label,
                      const std::string& y_label, const std::vector<Series>& series) {
    require(!series.empty(), "chart needs at least one series");
    const double W = 860, H = 480, ml = 72, mr = 24, mt = 44, mb = 52;
    const double pw = W - ml - mr, ph = H - mt - mb;

    size_t max_len = 0;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& s : series) {
        max_len = std::max(max_len, s.ys.size());
        for (double v : s.ys) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    require(max_len >= 1, "chart needs at least one point");
    if (!(hi > lo)) {
        hi = lo + 1;
        lo -= 1;
    }
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
    const double xmax = max_len > 1 ? double(max_len - 1) : 1.0;

    auto px = [&](double x) { return ml + pw * (x / xmax); };
    auto py = [&](double y) { return mt + ph * (1.0 - (y - lo) / (hi - lo)); };

    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
       << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
    os << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    os << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\""
       << " font-size=\"16\">" << xml_escape(title) << "</text>\n";

    // gridlines and y ticks
    for (int i = 0; i <= 5; ++i) {
        const double v = lo + (hi - lo) * i / 5.0;
        const double y = py(v);
        os << "<line x1=\"" << ml << "\" y1=\"" << y << "\" x2=\"" << W - mr << "\" y2=\"" << y
           << "\" stroke=\"#dddddd\"/>\n";
        os << "<text x=\"" << ml - 8 << "\" y=\"" << y + 4
           << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << fmt_g(v, 4)
           << "</text>\n";
    }
    for (int i = 0; i <= 6; ++i) {
        const double x = ml + pw * i / 6.0;
        const double v = xmax * i / 6.0;
        os << "<text x=\"" << x << "\" y=\"" << H - mb + 18
           << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
           << fmt_g(v, 4) << "</text>\n";
    }
    os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << H - mb
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\""
       << H - mb << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << ml + pw / 2 << "\" y=\"" << H - 12
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">"
       << xml_escape(x_label) << "</text>\n";
    os << "<text x=\"18\" y=\"" << mt + ph / 2
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\""
       << " transform=\"rotate(-90 18 " << mt + ph / 2 << ")\">" << xml_escape(y_label)
       << "</text>\n";

    for (size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        if (s.ys.empty()) continue;
        const char* color = palette[k % 5];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (size_t i = 0; i < s.ys.size(); ++i)
            os << px(double(i)) << "," << py(s.ys[i]) << (i + 1 < s.ys.size() ? " " : "");
        os << "\"/>\n";
        const double ly = mt + 16 + 18.0 * double(k);
        os << "<line x1=\"" << W - mr - 150 << "\" y1=\"" << ly << "\" x2=\"" << W - mr - 122
           << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        os << "<text x=\"" << W - mr - 116 << "\" y=\"" << ly + 4
           << "\" font-family=\"sans-serif\" font-size=\"12\">" << xml_escape(s.label)
           << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

// ---- config -> struct translation ----

const std::vector<Config::SchemaEntry>& synth_schema() {
    using T = Config::Type;
    static const std::vector<Config::SchemaEntry> s = {
        {"data", "samples", T::Int},        {"data", "frames", T::Int},
        {"data", "face_dims", T::Int},      {"data", "body_dims", T::Int},
        {"data", "content_dims", T::Int},   {"data", "semantics_dims", T::Int},
        {"data", "fps", T::Float},          {"data", "noise_std", T::Float},
        {"data", "seed", T::Int},           {"data", "identities", T::Str},
        {"data", "emotions", T::Str},       {"data", "split", T::Bool},
        {"data", "train_fraction", T::Float}, {"data", "val_fraction", T::Float},
        {"data", "test_fraction", T::Float},
    };
    return s;
}

std::vector<Config::SchemaEntry> model_schema() {
    using T = Config::Type;
    return {
        {"model", "d", T::Int},          {"model", "layers", T::Int},
        {"model", "decoder_layers", T::Int}, {"model", "heads", T::Int},
        {"model", "biflow_layers", T::Str},  {"model", "max_frames", T::Int},
        {"model", "cond_dims", T::Int},  {"model", "dropout", T::Float},
        {"diffusion", "steps", T::Int},  {"diffusion", "offset", T::Float},
    };
}

std::vector<Config::SchemaEntry> train_schema() {
    using T = Config::Type;
    return {
        {"train", "lr", T::Float},        {"train", "beta1", T::Float},
        {"train", "beta2", T::Float},     {"train", "batch", T::Int},
        {"train", "iterations", T::Int},  {"train", "lambda_face", T::Float},
        {"train", "lambda_body", T::Float}, {"train", "seed", T::Int},
        {"train", "eval_every", T::Int},  {"train", "clip_norm", T::Float},
    };
}

std::vector<Config::SchemaEntry> peft_schema() {
    using T = Config::Type;
    return {
        {"peft", "variant", T::Str},       {"peft", "form", T::Str},
        {"peft", "scale", T::Str},         {"peft", "rank", T::Int},
        {"peft", "site_mha", T::Bool},     {"peft", "site_ffn", T::Bool},
        {"peft", "prefix_length", T::Int}, {"peft", "task", T::Str},
    };
}

std::vector<Config::SchemaEntry> eval_schema() {
    using T = Config::Type;
    return {
        {"extractor", "window", T::Int},     {"extractor", "stride", T::Int},
        {"extractor", "kernel", T::Int},     {"extractor", "hidden", T::Int},
        {"extractor", "bottleneck", T::Int}, {"extractor", "iterations", T::Int},
        {"extractor", "batch", T::Int},      {"extractor", "lr", T::Float},
        {"extractor", "seed", T::Int},       {"eval", "div_pairs", T::Int},
        {"eval", "seed", T::Int},
    };
}

SyntheticSpec synth_spec_from(const Config& c) {
    SyntheticSpec s;
    s.n_samples = c.get_int("data", "samples", s.n_samples);
    s.frames = c.get_int("data", "frames", s.frames);
    s.d_f = c.get_int("data", "face_dims", s.d_f);
    s.d_b = c.get_int("data", "body_dims", s.d_b);
    s.d_c = c.get_int("data", "content_dims", s.d_c);
    s.d_s = c.get_int("data", "semantics_dims", s.d_s);
    s.fps = c.get_float("data", "fps", s.fps);
    s.noise_std = c.get_float("data", "noise_std", s.noise_std);
    s.seed = static_cast<uint64_t>(c.get_int("data", "seed", static_cast<long>(s.seed)));
    if (c.has("data", "identities")) {
        s.identities.clear();
        for (const auto& item : c.get_list("data", "identities")) {
            const auto f = split_on(item, ':');
            require(f.size() == 3, "identities entries are label:amplitude:frequency, got '" +
                                       item + "'");
            s.identities.push_back({trim(f[0]), to_double(trim(f[1]), "identity amplitude"),
                                    to_double(trim(f[2]), "identity frequency")});
        }
    }
    if (c.has("data", "emotions")) {
        s.emotions.clear();
        for (const auto& item : c.get_list("data", "emotions")) {
            const auto f = split_on(item, ':');
            require(f.size() == 3,
                    "emotions entries are label:offset_seed:amplitude, got '" + item + "'");
            s.emotions.push_back({trim(f[0]), to_u64(trim(f[1]), "emotion offset seed"),
                                  to_double(trim(f[2]), "emotion amplitude")});
        }
    }
    return s;
}

DUTransConfig model_cfg_from(const Config& c, const DatasetManifest& man, Index max_seq_frames) {
    DUTransConfig mc;
    mc.d = c.get_int("model", "d", 64);
    mc.layers = c.get_int("model", "layers", 2);
    mc.decoder_layers = c.get_int("model", "decoder_layers", 1);
    mc.n_heads = c.get_int("model", "heads", 4);
    mc.d_f = man.d_f;
    mc.d_b = man.d_b;
    mc.d_c = man.d_c;
    mc.d_s = man.d_s;
    mc.d_z = c.get_int("model", "cond_dims", 32);
    mc.dropout = c.get_float("model", "dropout", 0.1);
    mc.max_frames = c.get_int("model", "max_frames", std::max<Index>(600, max_seq_frames));
    if (c.has("model", "biflow_layers")) {
        mc.biflow_layers.clear();
        if (c.get_str("model", "biflow_layers") != "none")
            for (long v : c.get_int_list("model", "biflow_layers")) mc.biflow_layers.push_back(v);
    } else {
        mc.biflow_layers = {(mc.layers + 1) / 2};  // midpoint exchange by default
        if (mc.layers == 0) mc.biflow_layers.clear();
    }
    mc.validate();
    return mc;
}

TrainConfig train_cfg_from(const Config& c, double default_lr) {
    TrainConfig t;
    t.lr = c.get_float("train", "lr", default_lr);
    t.beta1 = c.get_float("train", "beta1", t.beta1);
    t.beta2 = c.get_float("train", "beta2", t.beta2);
    t.batch = c.get_int("train", "batch", t.batch);
    t.iterations = c.get_int("train", "iterations", t.iterations);
    t.lambda_f = c.get_float("train", "lambda_face", t.lambda_f);
    t.lambda_b = c.get_float("train", "lambda_body", t.lambda_b);
    t.seed = static_cast<uint64_t>(c.get_int("train", "seed", static_cast<long>(t.seed)));
    t.eval_every = c.get_int("train", "eval_every", t.eval_every);
    t.clip_norm = c.get_float("train", "clip_norm", t.clip_norm);
    return t;
}

PEFTConfig peft_cfg_from(const Config& c, const std::string& section) {
    PEFTConfig p;
    p.variant = peft_variant_from_string(c.get_str(section, "variant", "x_adapter"));
    p.form = adapter_form_from_string(c.get_str(section, "form", "parallel"));
    p.scale = scale_mode_from_string(c.get_str(section, "scale", "dynamic"));
    p.rank = c.get_int(section, "rank", p.rank);
    p.site_mha = c.get_bool(section, "site_mha", p.site_mha);
    // prefix tokens live in attention; skip the feed-forward sites by default
    p.site_ffn = c.get_bool(section, "site_ffn",
                            p.variant == PeftVariant::Prefix ? false : p.site_ffn);
    p.prefix_length = c.get_int(section, "prefix_length", p.prefix_length);
    return p;
}

ConditionTask task_from(const std::string& s) {
    if (s == "emotion") return ConditionTask::Emotion;
    if (s == "identity") return ConditionTask::Identity;
    throw ConfigError("unknown finetune task (want emotion|identity): " + s);
}

ExtractorConfig extractor_cfg_from(const Config& c) {
    ExtractorConfig e;
    e.window = c.get_int("extractor", "window", e.window);
    e.stride = c.get_int("extractor", "stride", e.stride);
    e.kernel = c.get_int("extractor", "kernel", e.kernel);
    e.hidden = c.get_int("extractor", "hidden", e.hidden);
    e.bottleneck = c.get_int("extractor", "bottleneck", e.bottleneck);
    e.iterations = c.get_int("extractor", "iterations", e.iterations);
    e.batch = c.get_int("extractor", "batch", e.batch);
    e.lr = c.get_float("extractor", "lr", e.lr);
    e.seed = static_cast<uint64_t>(c.get_int("extractor", "seed", static_cast<long>(e.seed)));
    return e;
}

Index max_frames_of(const Dataset& ds) {
    Index n = 0;
    for (const auto& s : ds.samples) n = std::max(n, s.motion.frames());
    return n;
}

long param_count(const Checkpoint& c, bool trainable_only = false) {
    std::unordered_set<std::string> mask(c.frozen.begin(), c.frozen.end());
    long n = 0;
    for (const auto& e : c.params.entries()) {
        if (trainable_only && mask.count(e.name)) continue;
        n += static_cast<long>(e.value.size());
    }
    return n;
}

std::string snap_dir_name(long step) {
    std::ostringstream os;
    os << "snap_" << std::setw(6) << std::setfill('0') << step;
    return os.str();
}

EvalHook snapshot_hook(const fs::path& out) {
    return [out](long step, const Checkpoint& snap) {
        const fs::path dir = out / snap_dir_name(step);
        save_checkpoint(snap, dir);
        std::cout << "  step " << step << ": snapshot -> " << dir.string() << "\n";
    };
}

// ---- subcommand runners ----

struct CommonOpts {
    std::string config;
    std::vector<std::string> sets;
    uint64_t seed = 0;
    bool seed_given = false;
};

int run_synth(const CommonOpts& common, const std::string& out) {
    Config c = load_config(common.config, common.sets);
    c.validate(synth_schema());
    SyntheticSpec spec = synth_spec_from(c);
    if (common.seed_given) spec.seed = common.seed;

    Dataset ds = generate_synthetic_dataset(spec);
    const fs::path root(out);
    if (c.get_bool("data", "split", false)) {
        SplitFractions fr;
        fr.train = c.get_float("data", "train_fraction", fr.train);
        fr.val = c.get_float("data", "val_fraction", fr.val);
        fr.test = c.get_float("data", "test_fraction", fr.test);
        SplitResult sp = split_dataset(ds, fr);
        save_dataset(sp.train, root / "train");
        save_dataset(sp.val, root / "val");
        save_dataset(sp.test, root / "test");
        std::cout << "wrote " << sp.train.samples.size() << "/" << sp.val.samples.size() << "/"
                  << sp.test.samples.size() << " train/val/test samples under " << out << "\n";
    } else {
        save_dataset(ds, root);
        std::cout << "wrote " << ds.samples.size() << " samples (" << spec.frames
                  << " frames each) to " << out << "\n";
    }
    return 0;
}

int run_pretrain(const CommonOpts& common, const std::string& data, const std::string& out) {
    require_dir(data, "dataset");
    Config c = load_config(common.config, common.sets);
    auto schema = model_schema();
    for (auto& e : train_schema()) schema.push_back(e);
    c.validate(schema);

    const Dataset train = load_dataset(data);
    const DUTransConfig mc = model_cfg_from(c, train.manifest, max_frames_of(train));
    const NoiseSchedule sched = cosine_schedule(c.get_int("diffusion", "steps", 200),
                                                c.get_float("diffusion", "offset", 0.008));
    TrainConfig tc = train_cfg_from(c, 1e-4);
    if (common.seed_given) tc.seed = common.seed;

    const fs::path root(out);
    fs::create_directories(root);
    const fs::path last_good = root / "last_good";
    std::cout << "pretraining: d=" << mc.d << " layers=" << mc.layers << " T=" << sched.T
              << " iterations=" << tc.iterations << " batch=" << tc.batch << " seed=" << tc.seed
              << "\n";
    EvalHook hook = tc.eval_every > 0 ? snapshot_hook(root) : EvalHook();
    TrainResult res = pretrain(train, mc, sched, tc, &last_good, hook);

    save_checkpoint(res.checkpoint, root / "checkpoint");
    write_loss_csv(res.curve, root / "loss.csv");
    const double final_total = res.curve.empty() ? 0.0 : res.curve.back().total;
    std::cout << "done: " << param_count(res.checkpoint) << " parameters, final loss "
              << fmt_g(final_total) << "\n"
              << "checkpoint: " << (root / "checkpoint").string() << " (id "
              << res.checkpoint.id() << ")\n";
    return 0;
}

int run_finetune(const CommonOpts& common, const std::string& parent_dir, const std::string& data,
                 const std::string& out) {
    require_dir(parent_dir, "parent checkpoint");
    require_dir(data, "dataset");
    Config c = load_config(common.config, common.sets);
    auto schema = peft_schema();
    for (auto& e : train_schema()) schema.push_back(e);
    c.validate(schema);

    const Checkpoint parent = load_checkpoint(parent_dir);
    const Dataset train = load_dataset(data);
    const PEFTConfig pc = peft_cfg_from(c, "peft");
    const ConditionTask task = task_from(c.get_str("peft", "task", "emotion"));
    TrainConfig tc = train_cfg_from(c, 1e-3);
    if (common.seed_given) tc.seed = common.seed;

    const fs::path root(out);
    fs::create_directories(root);
    const fs::path last_good = root / "last_good";
    std::cout << "finetuning " << to_string(pc.variant) << " (" << to_string(pc.form) << ", "
              << to_string(pc.scale) << ", rank " << pc.rank << ") on "
              << (task == ConditionTask::Emotion ? "emotion" : "identity") << " task, "
              << tc.iterations << " iterations\n";
    EvalHook hook = tc.eval_every > 0 ? snapshot_hook(root) : EvalHook();
    TrainResult res = finetune(parent, train, pc, tc, task, &last_good, hook);

    save_checkpoint(res.checkpoint, root / "checkpoint");
    write_loss_csv(res.curve, root / "loss.csv");
    const long total = param_count(res.checkpoint);
    const long trainable = param_count(res.checkpoint, true);
    const double final_total = res.curve.empty() ? 0.0 : res.curve.back().total;
    std::cout << "done: " << trainable << " trainable of " << total << " parameters ("
              << fmt_g(100.0 * double(trainable) / double(total), 3) << "%), final loss "
              << fmt_g(final_total) << "\n"
              << "checkpoint: " << (root / "checkpoint").string() << " (id "
              << res.checkpoint.id() << ")\n";
    return 0;
}

int run_sample(const CommonOpts& common, const std::string& ckpt_dir, const std::string& data,
               const std::string& out, long count, const std::string& emotion,
               const std::string& identity) {
    require_dir(ckpt_dir, "checkpoint");
    require_dir(data, "dataset");
    if (!common.config.empty() || !common.sets.empty()) {
        Config c = load_config(common.config, common.sets);
        c.validate({});  // sample takes no config keys; flags drive everything
    }

    const Checkpoint ckpt = load_checkpoint(ckpt_dir);
    require(ckpt.schedule_T >= 2, "checkpoint carries no diffusion schedule");
    const Model<float> m = model_from_checkpoint(ckpt);
    const NoiseSchedule sched = cosine_schedule(ckpt.schedule_T, ckpt.schedule_s);
    const Dataset src = load_dataset(data);
    require(!src.samples.empty(), "dataset has no samples");

    const uint64_t seed = common.seed_given ? common.seed : 1;
    const long n = count <= 0 ? static_cast<long>(src.samples.size())
                              : std::min<long>(count, src.samples.size());

    Dataset gen;
    gen.manifest = src.manifest;
    gen.manifest.split_tag = "generated";
    for (long i = 0; i < n; ++i) {
        const Sample& s = src.samples[i];
        const std::string emo = emotion.empty() ? s.motion.emotion_label : emotion;
        const std::string ident = identity.empty() ? s.motion.identity_label : identity;
        const auto cond = resolve_condition(ckpt, m.params, emo, ident);
        MotionSequence seq =
            sample_motion(m, s.audio, sched, src.manifest.fps, derive_seed(seed, i),
                          cond ? &cond->face : nullptr, cond ? &cond->body : nullptr);
        seq.identity_label = ident;
        seq.emotion_label = emo;
        gen.samples.push_back({std::move(seq), s.audio});
        std::cout << "  sampled " << (i + 1) << "/" << n << " (" << s.audio.frames()
                  << " frames)\n";
    }
    save_dataset(gen, out);
    std::cout << "wrote " << n << " generated sequences to " << out << "\n";
    return 0;
}

int run_evaluate(const CommonOpts& common, const std::string& generated,
                 const std::string& reference, const std::string& out_path,
                 const std::string& csv_path) {
    require_dir(generated, "generated dataset");
    require_dir(reference, "reference dataset");
    Config c = load_config(common.config, common.sets);
    c.validate(eval_schema());

    const Dataset gen = load_dataset(generated);
    const Dataset ref = load_dataset(reference);
    require(gen.samples.size() == ref.samples.size(),
            "generated and reference datasets must pair 1:1");

    ExtractorConfig ec = extractor_cfg_from(c);
    EvalConfig vc;
    vc.div_pairs = c.get_int("eval", "div_pairs", vc.div_pairs);
    vc.seed = static_cast<uint64_t>(c.get_int("eval", "seed", static_cast<long>(vc.seed)));
    if (common.seed_given) {
        ec.seed = common.seed;
        vc.seed = common.seed;
    }

    std::cout << "fitting feature extractors on " << ref.samples.size() << " reference clips\n";
    const FeatureExtractor hol_ex = fit_feature_extractor(ref, FeatureScope::Holistic, ec);
    const FeatureExtractor body_ex = fit_feature_extractor(ref, FeatureScope::Body, ec);

    std::vector<MotionSequence> gm, rm;
    std::vector<AudioFeatureTrack> audio;
    for (const auto& s : gen.samples) gm.push_back(s.motion);
    for (const auto& s : ref.samples) {
        rm.push_back(s.motion);
        audio.push_back(s.audio);
    }
    const MetricReport report = evaluate_sets(gm, rm, audio, hol_ex, body_ex, vc,
                                              ref.content_hash());
    const std::string text = report_to_text(report);
    std::cout << text;
    if (!out_path.empty()) {
        write_report(report, out_path);
        std::cout << "report: " << out_path << "\n";
    }
    if (!csv_path.empty()) {
        std::ostringstream os;
        os << "sample,bc,mse,lvd\n" << std::setprecision(17);
        for (size_t i = 0; i < gm.size(); ++i) {
            const auto bc = beat_consistency(gm[i].body, audio[i].rhythm, rm[i].fps);
            const FaceError fe = face_mse_lvd(gm[i].face, rm[i].face);
            os << i << ",";
            if (bc) os << *bc;
            else os << "undefined";
            os << "," << fe.mse << "," << fe.lvd << "\n";
        }
        atomic_write_text(csv_path, os.str());
        std::cout << "per-sample csv: " << csv_path << "\n";
    }
    return 0;
}

int run_ablate(const CommonOpts& common, const std::string& parent_dir, const std::string& data,
               const std::string& val_dir, const std::string& out) {
    require_dir(parent_dir, "parent checkpoint");
    require_dir(data, "dataset");
    require_file(common.config, "grid config");
    Config c = load_config(common.config, common.sets);

    // [train] and [ablation] are fixed; every other section is one variant
    // whose keys follow the [peft] schema
    std::vector<std::string> variants;
    std::vector<Config::SchemaEntry> schema = train_schema();
    schema.push_back({"ablation", "sample_count", Config::Type::Int});
    schema.push_back({"ablation", "seed", Config::Type::Int});
    std::unordered_set<std::string> seen;
    for (const auto& name : section_names(common.config)) {
        if (name == "train" || name == "ablation" || !seen.insert(name).second) continue;
        variants.push_back(name);
        for (auto e : peft_schema()) {
            e.section = name;
            schema.push_back(e);
        }
    }
    c.validate(schema);
    require(!variants.empty(), "grid config defines no variant sections");

    const Checkpoint parent = load_checkpoint(parent_dir);
    const Dataset train = load_dataset(data);
    const long sample_count = c.get_int("ablation", "sample_count", 0);
    const uint64_t ab_seed =
        static_cast<uint64_t>(c.get_int("ablation", "seed", 1));
    Dataset val;
    if (sample_count > 0) {
        require_dir(val_dir, "validation dataset");
        val = load_dataset(val_dir);
        require(!val.samples.empty(), "validation dataset has no samples");
    }
    const NoiseSchedule sched = cosine_schedule(parent.schedule_T, parent.schedule_s);

    struct Row {
        std::string name;
        long trainable = 0, expected = 0;
        bool match = false;
        double final_loss = 0, mse = 0, lvd = 0;
        bool scored = false;
    };
    std::vector<Row> rows;
    const fs::path root(out);
    fs::create_directories(root);

    for (size_t vi = 0; vi < variants.size(); ++vi) {
        const std::string& name = variants[vi];
        std::cout << "[" << (vi + 1) << "/" << variants.size() << "] " << name << "\n";
        const PEFTConfig pc = peft_cfg_from(c, name);
        const ConditionTask task = task_from(c.get_str(name, "task", "emotion"));
        TrainConfig tc = train_cfg_from(c, 1e-3);
        tc.seed = common.seed_given ? common.seed : tc.seed;
        tc.eval_every = 0;

        TrainResult res = finetune(parent, train, pc, tc, task);
        const Model<float> m = model_from_checkpoint(res.checkpoint);
        Row row;
        row.name = name;
        row.trainable = count_parameters(m, true, res.checkpoint.frozen);
        const DUTransConfig& mc = res.checkpoint.model_cfg;
        const long heads = mc.d * mc.d_f + mc.d_f + mc.d * mc.d_b + mc.d_b +
                           mc.d * mc.d_h() + mc.d_h();
        row.expected = expected_adapter_params(*res.checkpoint.peft, mc) +
                       expected_cond_params(*res.checkpoint.peft, mc) + heads;
        row.match = row.trainable == row.expected;
        row.final_loss = res.curve.empty() ? 0.0 : res.curve.back().total;

        if (sample_count > 0) {
            const long k = std::min<long>(sample_count, val.samples.size());
            double mse = 0, lvd = 0;
            for (long i = 0; i < k; ++i) {
                const Sample& s = val.samples[i];
                const auto cond = resolve_condition(res.checkpoint, m.params,
                                                    s.motion.emotion_label,
                                                    s.motion.identity_label);
                const MotionSequence seq = sample_motion(
                    m, s.audio, sched, val.manifest.fps, derive_seed(ab_seed, vi * 1024 + i),
                    cond ? &cond->face : nullptr, cond ? &cond->body : nullptr);
                const FaceError fe = face_mse_lvd(seq.face, s.motion.face);
                mse += fe.mse;
                lvd += fe.lvd;
            }
            row.mse = mse / double(k);
            row.lvd = lvd / double(k);
            row.scored = true;
        }
        rows.push_back(row);
        save_checkpoint(res.checkpoint, root / name);
    }

    std::ostringstream os;
    os << std::left << std::setw(18) << "variant" << std::right << std::setw(12) << "trainable"
       << std::setw(12) << "expected" << std::setw(10) << "audit" << std::setw(14) << "final_loss";
    if (sample_count > 0) os << std::setw(14) << "mse" << std::setw(14) << "lvd";
    os << "\n";
    for (const auto& r : rows) {
        os << std::left << std::setw(18) << r.name << std::right << std::setw(12) << r.trainable
           << std::setw(12) << r.expected << std::setw(10) << (r.match ? "ok" : "MISMATCH")
           << std::setw(14) << fmt_g(r.final_loss);
        if (r.scored) os << std::setw(14) << fmt_g(r.mse) << std::setw(14) << fmt_g(r.lvd);
        os << "\n";
    }
    const std::string table = os.str();
    std::cout << table;
    atomic_write_text(root / "ablation.txt", table);
    std::cout << "table: " << (root / "ablation.txt").string() << "\n";
    for (const auto& r : rows)
        require(r.match, "trainable parameter count deviates from the closed form in variant " +
                             r.name);
    return 0;
}

int run_plot(const std::string& loss_csv, const std::string& generated,
             const std::string& reference, long index, const std::string& out) {
    if (loss_csv.empty() && generated.empty())
        throw ConfigError("plot: pass --loss <csv> or --generated/--reference dataset dirs");
    if (!loss_csv.empty()) {
        require_file(loss_csv, "loss csv");
        const auto rows = read_loss_csv(loss_csv);
        require(!rows.empty(), "loss csv has no rows");
        Series total{"total", {}}, lh{"L_H", {}}, lf{"L_F", {}}, lb{"L_B", {}};
        for (const auto& r : rows) {
            total.ys.push_back(r.total);
            lh.ys.push_back(r.l_h);
            lf.ys.push_back(r.l_f);
            lb.ys.push_back(r.l_b);
        }
        atomic_write_text(out, svg_chart("training loss", "iteration", "loss",
                                         {total, lh, lf, lb}));
    } else {
        require_dir(generated, "generated dataset");
        require_dir(reference, "reference dataset");
        const Dataset gen = load_dataset(generated);
        const Dataset ref = load_dataset(reference);
        require(index >= 0 && index < static_cast<long>(gen.samples.size()) &&
                    index < static_cast<long>(ref.samples.size()),
                "sample index out of range");
        auto speed = [](const MatF& body) {
            std::vector<double> v;
            for (Index i = 1; i < body.rows(); ++i)
                v.push_back((body.row(i) - body.row(i - 1)).cast<double>().norm());
            return v;
        };
        Series g{"generated", speed(gen.samples[index].motion.body)};
        Series r{"reference", speed(ref.samples[index].motion.body)};
        atomic_write_text(out, svg_chart("body velocity, sample " + std::to_string(index),
                                         "frame", "velocity (L2)", {g, r}));
    }
    std::cout << "plot: " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"divided-and-united co-speech motion diffusion"};
    app.require_subcommand(1);

    CommonOpts synth_c, pre_c, fine_c, samp_c, eval_c, abl_c;
    std::string synth_out, pre_data, pre_out, fine_parent, fine_data, fine_out;
    std::string samp_ckpt, samp_data, samp_out, samp_emotion, samp_identity;
    long samp_count = 0;
    std::string eval_gen, eval_ref, eval_out, eval_csv;
    std::string abl_parent, abl_data, abl_val, abl_out;
    std::string plot_loss, plot_gen, plot_ref, plot_out;
    long plot_index = 0;
    long threads = 0;

    std::vector<std::pair<CLI::Option*, CommonOpts*>> seed_opts;
    auto add_common = [&](CLI::App* sc, CommonOpts& o, bool config_required) {
        auto* cfg = sc->add_option("--config", o.config, "INI config file");
        if (config_required) cfg->required();
        sc->add_option("--set", o.sets, "override: section.key=value");
        seed_opts.emplace_back(sc->add_option("--seed", o.seed, "seed override"), &o);
    };
    app.add_option("--threads", threads, "worker thread cap (0 = auto)");

    auto* synth = app.add_subcommand("synth-data", "generate a synthetic paired dataset");
    add_common(synth, synth_c, false);
    synth->add_option("--out", synth_out, "output dataset directory")->required();

    auto* pre = app.add_subcommand("pretrain", "train the base model");
    add_common(pre, pre_c, false);
    pre->add_option("--data", pre_data, "training dataset directory")->required();
    pre->add_option("--out", pre_out, "run output directory")->required();

    auto* fine = app.add_subcommand("finetune", "adapter finetuning from a parent checkpoint");
    add_common(fine, fine_c, false);
    fine->add_option("--parent", fine_parent, "parent checkpoint directory")->required();
    fine->add_option("--data", fine_data, "training dataset directory")->required();
    fine->add_option("--out", fine_out, "run output directory")->required();

    auto* samp = app.add_subcommand("sample", "generate motion for a dataset's audio tracks");
    add_common(samp, samp_c, false);
    samp->add_option("--checkpoint", samp_ckpt, "checkpoint directory")->required();
    samp->add_option("--data", samp_data, "source dataset directory")->required();
    samp->add_option("--out", samp_out, "output dataset directory")->required();
    samp->add_option("--count", samp_count, "sequences to sample (0 = all)");
    samp->add_option("--emotion", samp_emotion, "override emotion label for conditioning");
    samp->add_option("--identity", samp_identity, "override identity label for conditioning");

    auto* eval = app.add_subcommand("evaluate", "score generated motion against a reference set");
    add_common(eval, eval_c, false);
    eval->add_option("--generated", eval_gen, "generated dataset directory")->required();
    eval->add_option("--reference", eval_ref, "reference dataset directory")->required();
    eval->add_option("--out", eval_out, "report output path");
    eval->add_option("--csv", eval_csv, "per-sample metric csv path");

    auto* abl = app.add_subcommand("ablate", "finetune every variant in a grid config");
    add_common(abl, abl_c, true);
    abl->add_option("--parent", abl_parent, "parent checkpoint directory")->required();
    abl->add_option("--data", abl_data, "training dataset directory")->required();
    abl->add_option("--val", abl_val, "validation dataset directory (for sampled scores)");
    abl->add_option("--out", abl_out, "run output directory")->required();

    auto* plot = app.add_subcommand("plot", "render loss curves or velocity comparisons as SVG");
    plot->add_option("--loss", plot_loss, "loss csv to plot");
    plot->add_option("--generated", plot_gen, "generated dataset directory");
    plot->add_option("--reference", plot_ref, "reference dataset directory");
    plot->add_option("--index", plot_index, "sample index for the velocity view");
    plot->add_option("--out", plot_out, "SVG output path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }
    for (auto& [opt, o] : seed_opts) o->seed_given = opt->count() > 0;

    try {
        if (threads > 0) set_max_threads(static_cast<size_t>(threads));
        if (*synth) return run_synth(synth_c, synth_out);
        if (*pre) return run_pretrain(pre_c, pre_data, pre_out);
        if (*fine) return run_finetune(fine_c, fine_parent, fine_data, fine_out);
        if (*samp)
            return run_sample(samp_c, samp_ckpt, samp_data, samp_out, samp_count, samp_emotion,
                              samp_identity);
        if (*eval) return run_evaluate(eval_c, eval_gen, eval_ref, eval_out, eval_csv);
        if (*abl) return run_ablate(abl_c, abl_parent, abl_data, abl_val, abl_out);
        if (*plot) return run_plot(plot_loss, plot_gen, plot_ref, plot_index, plot_out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const IoError& e) {
        std::cerr << "path error: " << e.what() << "\n";
        return kExitPath;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "path error: " << e.what() << "\n";
        return kExitPath;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return 0;
}
