#include "dumotion/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "dumotion/hash.hpp"
#include "dumotion/rng.hpp"
#include "dumotion/tensor_io.hpp"

namespace dumotion {

namespace {

using nlohmann::json;

// rng stream tags (arbitrary distinct constants)
constexpr uint64_t kStreamMaps = 1;
constexpr uint64_t kStreamSplit = 2;
constexpr uint64_t kStreamLatents = 0x10000;
constexpr uint64_t kStreamNoise = 0x20000;
constexpr uint64_t kStreamEmotionOffset = 0x9e0f;

constexpr int kNumLatents = 12;
constexpr Index kBodyLag = 2;

struct Sinusoid {
    double amp, freq_hz, phase;
};

}  // namespace

const std::array<std::string, 8>& emotion_categories() {
    static const std::array<std::string, 8> cats = {"sadness", "contempt", "neutral",  "fear",
                                                    "anger",   "happiness", "disgust", "surprise"};
    return cats;
}

bool is_emotion_label(const std::string& label) {
    const auto& cats = emotion_categories();
    return std::find(cats.begin(), cats.end(), label) != cats.end();
}

void MotionSequence::validate() const {
    require(face.rows() >= 2, "motion needs at least 2 frames");
    require(face.rows() == body.rows(), "face/body frame count mismatch");
    require(fps > 0, "fps must be positive");
    require(all_finite(face) && all_finite(body), "non-finite motion entries");
    require(is_emotion_label(emotion_label), "unknown emotion label: " + emotion_label);
}

void AudioFeatureTrack::validate() const {
    require(content.rows() == rhythm.rows() && rhythm.rows() == semantics.rows(),
            "audio track frame count mismatch");
    require(rhythm.cols() == 1, "rhythm must have exactly 1 channel");
    require(all_finite(content) && all_finite(rhythm) && all_finite(semantics),
            "non-finite audio entries");
}

void Sample::validate() const {
    motion.validate();
    audio.validate();
    require(motion.frames() == audio.frames(), "motion/audio frame count mismatch");
}

void Dataset::validate() const {
    for (const auto& s : samples) {
        s.validate();
        require(s.motion.face.cols() == manifest.d_f && s.motion.body.cols() == manifest.d_b &&
                    s.audio.content.cols() == manifest.d_c &&
                    s.audio.semantics.cols() == manifest.d_s,
                "sample dims disagree with manifest");
    }
}

std::string Dataset::content_hash() const {
    Fnv1a h;
    h.update(std::to_string(manifest.d_f) + "|" + std::to_string(manifest.d_b) + "|" +
             std::to_string(manifest.d_c) + "|" + std::to_string(manifest.d_s) + "|" +
             std::to_string(manifest.fps) + "|" + std::to_string(manifest.seed) + "|" +
             manifest.split_tag);
    for (const auto& s : samples) {
        h.update(s.motion.identity_label);
        h.update(s.motion.emotion_label);
        h.update(s.motion.face);
        h.update(s.motion.body);
        h.update(s.audio.content);
        h.update(s.audio.rhythm);
        h.update(s.audio.semantics);
    }
    return h.hex();
}

void SyntheticSpec::validate() const {
    require(n_samples >= 1, "n_samples must be >= 1");
    require(frames >= 4, "frames must be >= 4");
    require(d_f >= 1 && d_b >= 1 && d_c >= 1 && d_s >= 1, "dims must be >= 1");
    require(fps > 0 && noise_std >= 0, "fps must be > 0, noise_std >= 0");
    require(!identities.empty() && !emotions.empty(), "need at least one identity and emotion");
    for (const auto& id : identities)
        require(id.amplitude_scale > 0 && id.frequency_scale > 0,
                "identity scales must be positive: " + id.label);
    for (const auto& e : emotions) {
        require(e.amplitude_multiplier > 0, "emotion amplitude must be positive: " + e.label);
        require(is_emotion_label(e.label), "unknown emotion label: " + e.label);
    }
}

namespace {

MatF gaussian_map(Rng& rng, Index in, Index out) {
    // N(0, 1/in) entries keep the pre-tanh activations O(1)
    return rng.normal_matrix<float>(in, out) / std::sqrt(static_cast<float>(in));
}

MatF emotion_offset(uint64_t offset_seed, Index dims) {
    if (offset_seed == 0) return MatF::Zero(1, dims);
    Rng rng(derive_seed(kStreamEmotionOffset, offset_seed));
    return 0.35f * rng.normal_matrix<float>(1, dims);
}

}  // namespace

Dataset generate_synthetic_dataset(const SyntheticSpec& spec) {
    spec.validate();

    Rng map_rng(derive_seed(spec.seed, kStreamMaps));
    const MatF w_content = gaussian_map(map_rng, 6, spec.d_c);
    const float w_rhythm = static_cast<float>(map_rng.uniform(0.8, 1.2));
    const MatF w_semantics = gaussian_map(map_rng, 5, spec.d_s);
    const MatF w_face = gaussian_map(map_rng, 7, spec.d_f);
    const MatF w_body = gaussian_map(map_rng, 6, spec.d_b);

    std::vector<MatF> emo_off_f, emo_off_b;
    for (const auto& e : spec.emotions) {
        emo_off_f.push_back(emotion_offset(e.offset_seed, spec.d_f));
        emo_off_b.push_back(emotion_offset(e.offset_seed, spec.d_b));
    }

    Dataset ds;
    ds.manifest = {spec.d_f, spec.d_b, spec.d_c, spec.d_s, spec.fps, spec.seed, "full"};
    ds.samples.reserve(static_cast<size_t>(spec.n_samples));

    const Index n_emo = static_cast<Index>(spec.emotions.size());
    const Index n_id = static_cast<Index>(spec.identities.size());
    const double two_pi = 2.0 * std::numbers::pi;

    for (Index k = 0; k < spec.n_samples; ++k) {
        const Index ei = k % n_emo;
        const Index ii = (k / n_emo) % n_id;
        const EmotionSpec& emo = spec.emotions[static_cast<size_t>(ei)];
        const IdentitySpec& ident = spec.identities[static_cast<size_t>(ii)];

        // Latent parameter draws are independent of identity/emotion, so
        // changing a scale never shifts any other random stream.
        Rng lat_rng(derive_seed(spec.seed, kStreamLatents + static_cast<uint64_t>(k)));
        std::array<std::vector<Sinusoid>, kNumLatents> latents;
        for (auto& lat : latents) {
            const int n_sin = 3 + static_cast<int>(lat_rng.below(6));
            const double amp_norm = 1.0 / std::sqrt(static_cast<double>(n_sin));
            for (int s = 0; s < n_sin; ++s)
                lat.push_back({lat_rng.uniform(0.4, 1.0) * amp_norm, lat_rng.uniform(0.5, 2.0),
                               lat_rng.uniform(0.0, two_pi)});
        }

        const double fscale = ident.frequency_scale;
        auto latent_at = [&](int j, Index frame) {
            const double t = static_cast<double>(frame) / spec.fps;
            double v = 0;
            for (const auto& s : latents[static_cast<size_t>(j)])
                v += s.amp * std::sin(two_pi * s.freq_hz * fscale * t + s.phase);
            return static_cast<float>(v);
        };

        const Index N = spec.frames;
        MatF content(N, spec.d_c), rhythm(N, 1), semantics(N, spec.d_s);
        MatF face(N, spec.d_f), body(N, spec.d_b);
        const float amp = static_cast<float>(ident.amplitude_scale * emo.amplitude_multiplier);

        Eigen::Matrix<float, 1, Eigen::Dynamic> u_c(6), u_s(5), u_f(7), u_b(6);
        for (Index t = 0; t < N; ++t) {
            for (int j = 0; j < 6; ++j) u_c(j) = latent_at(j, t);
            for (int j = 0; j < 5; ++j) u_s(j) = latent_at(7 + j, t);
            const float r = latent_at(6, t);
            content.row(t) = u_c * w_content;
            rhythm(t, 0) = w_rhythm * r;
            semantics.row(t) = u_s * w_semantics;

            u_f.head(6) = u_c;
            u_f(6) = r;
            face.row(t) = amp * (u_f * w_face).array().tanh().matrix() +
                          emo_off_f[static_cast<size_t>(ei)];

            const Index lag_t = std::max<Index>(t - kBodyLag, 0);
            for (int j = 0; j < 5; ++j) u_b(j) = latent_at(7 + j, lag_t);
            u_b(5) = latent_at(6, lag_t);
            body.row(t) = amp * (u_b * w_body).array().tanh().matrix() +
                          emo_off_b[static_cast<size_t>(ei)];
        }

        if (spec.noise_std > 0) {
            Rng noise_rng(derive_seed(spec.seed, kStreamNoise + static_cast<uint64_t>(k)));
            const float sd = static_cast<float>(spec.noise_std);
            face += sd * noise_rng.normal_matrix<float>(N, spec.d_f);
            body += sd * noise_rng.normal_matrix<float>(N, spec.d_b);
        }

        Sample s;
        s.motion = {std::move(face), std::move(body), spec.fps, ident.label, emo.label};
        s.audio = {std::move(content), std::move(rhythm), std::move(semantics)};
        ds.samples.push_back(std::move(s));
    }
    ds.validate();
    return ds;
}

SplitResult split_dataset(const Dataset& ds, const SplitFractions& fr) {
    require(fr.train >= 0 && fr.val >= 0 && fr.test >= 0, "split fractions must be >= 0");
    require(std::abs(fr.train + fr.val + fr.test - 1.0) <= 1e-9, "split fractions must sum to 1");

    const Index n = static_cast<Index>(ds.samples.size());
    const Index n_val = static_cast<Index>(std::floor(fr.val * static_cast<double>(n)));
    const Index n_test = static_cast<Index>(std::floor(fr.test * static_cast<double>(n)));
    const Index n_train = n - n_val - n_test;  // remainder goes to train

    Rng rng(derive_seed(ds.manifest.seed, kStreamSplit));
    const auto perm = rng.permutation(static_cast<size_t>(n));

    SplitResult out;
    auto take = [&](Index lo, Index cnt, Dataset& dst, const char* tag) {
        std::vector<size_t> idx(perm.begin() + lo, perm.begin() + lo + cnt);
        std::sort(idx.begin(), idx.end());
        dst.manifest = ds.manifest;
        dst.manifest.split_tag = tag;
        for (size_t i : idx) dst.samples.push_back(ds.samples[i]);
    };
    take(0, n_train, out.train, "train");
    take(n_train, n_val, out.val, "val");
    take(n_train + n_val, n_test, out.test, "test");
    return out;
}

MatF compute_velocity(const MatF& seq) {
    require(seq.rows() >= 2, "velocity needs at least 2 frames");
    return seq.bottomRows(seq.rows() - 1) - seq.topRows(seq.rows() - 1);
}

namespace {

const std::array<const char*, 5> kTracks = {"face", "body", "content", "rhythm", "semantics"};

MatF& track_of(Sample& s, const std::string& name) {
    if (name == "face") return s.motion.face;
    if (name == "body") return s.motion.body;
    if (name == "content") return s.audio.content;
    if (name == "rhythm") return s.audio.rhythm;
    return s.audio.semantics;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    ds.validate();
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create dataset dir: " + dir.string());

    json man;
    man["version"] = kDatasetFormatVersion;
    man["dims"] = {{"d_f", ds.manifest.d_f},
                   {"d_b", ds.manifest.d_b},
                   {"d_c", ds.manifest.d_c},
                   {"d_s", ds.manifest.d_s}};
    man["fps"] = ds.manifest.fps;
    man["seed"] = ds.manifest.seed;
    man["split_tag"] = ds.manifest.split_tag;
    json samples = json::array();
    for (size_t k = 0; k < ds.samples.size(); ++k) {
        const auto& s = ds.samples[k];
        samples.push_back({{"frames", s.motion.frames()},
                           {"identity", s.motion.identity_label},
                           {"emotion", s.motion.emotion_label}});
        Sample& mut = const_cast<Sample&>(s);
        for (const char* tr : kTracks) {
            std::ostringstream name;
            name << "sample_" << k << "_" << tr << ".f32";
            write_f32(dir / name.str(), track_of(mut, tr));
        }
    }
    man["samples"] = samples;
    atomic_write_text(dir / "manifest.json", man.dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path& dir) {
    json man;
    try {
        man = json::parse(read_text(dir / "manifest.json"));
    } catch (const json::parse_error& e) {
        throw ConfigError("dataset manifest is not valid JSON: " + std::string(e.what()));
    }
    if (!man.contains("version") || man["version"] != kDatasetFormatVersion)
        throw ConfigError("unknown dataset format version in " + dir.string());

    Dataset ds;
    ds.manifest.d_f = man["dims"]["d_f"].get<Index>();
    ds.manifest.d_b = man["dims"]["d_b"].get<Index>();
    ds.manifest.d_c = man["dims"]["d_c"].get<Index>();
    ds.manifest.d_s = man["dims"]["d_s"].get<Index>();
    ds.manifest.fps = man["fps"].get<double>();
    ds.manifest.seed = man["seed"].get<uint64_t>();
    ds.manifest.split_tag = man["split_tag"].get<std::string>();

    const auto& samples = man["samples"];
    for (size_t k = 0; k < samples.size(); ++k) {
        const Index N = samples[k]["frames"].get<Index>();
        Sample s;
        s.motion.fps = ds.manifest.fps;
        s.motion.identity_label = samples[k]["identity"].get<std::string>();
        s.motion.emotion_label = samples[k]["emotion"].get<std::string>();
        const std::array<Index, 5> widths = {ds.manifest.d_f, ds.manifest.d_b, ds.manifest.d_c,
                                             Index(1), ds.manifest.d_s};
        for (size_t ti = 0; ti < kTracks.size(); ++ti) {
            std::ostringstream name;
            name << "sample_" << k << "_" << kTracks[ti] << ".f32";
            track_of(s, kTracks[ti]) = read_f32(dir / name.str(), N, widths[ti]);
        }
        ds.samples.push_back(std::move(s));
    }
    ds.validate();
    return ds;
}

}  // namespace dumotion
