#include "emgadapt/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "emgadapt/errors.hpp"
#include "emgadapt/io_util.hpp"

namespace emg::data {

using nn::mix_seed;
using nlohmann::json;

namespace {

constexpr double kPi = 3.14159265358979323846;

double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(rng);
}

double circ_dist(double a, double b) {
    const double d = std::fabs(a - b);
    return std::min(d, static_cast<double>(kChannels) - d);
}

// Smooth circular activation pattern centered between two electrodes, peak 1.
// Open-dominant channels sit around 1.5, close-dominant around 5.5.
double base_pattern(double center, int channel) {
    constexpr double sigma = 1.2;
    const double d = circ_dist(static_cast<double>(channel), center);
    const double peak = std::exp(-0.5 * (0.5 / sigma) * (0.5 / sigma));
    return std::exp(-0.5 * (d / sigma) * (d / sigma)) / peak;
}

constexpr double kOpenCenter = 1.5;
constexpr double kCloseCenter = 5.5;

// Channels pressed against the supporting surface in the lifted-arm posture.
constexpr int kPostureChannels[3] = {4, 5, 6};
constexpr double kPostureWeights[3] = {1.0, 0.8, 0.6};

std::vector<std::pair<int, std::pair<int64_t, int64_t>>>
segment_spans(const std::vector<int>& labels) {
    std::vector<std::pair<int, std::pair<int64_t, int64_t>>> spans;
    const int64_t n = static_cast<int64_t>(labels.size());
    int64_t start = 0;
    for (int64_t t = 1; t <= n; ++t) {
        if (t == n || labels[static_cast<size_t>(t)] != labels[static_cast<size_t>(start)]) {
            spans.push_back({labels[static_cast<size_t>(start)], {start, t}});
            start = t;
        }
    }
    return spans;
}

// Rectified one-pole-filtered white noise, normalized to unit mean via the
// analytic E|y| of the stationary filter output.
std::vector<float> rectified_carrier(int64_t n, std::mt19937_64& rng, double pole) {
    std::normal_distribution<double> dist(0.0, 1.0);
    const double sigma_y = (1.0 - pole) / std::sqrt(1.0 - pole * pole);
    const double mean_abs = sigma_y * std::sqrt(2.0 / kPi);
    std::vector<float> out(static_cast<size_t>(n));
    double y = 0.0;
    for (int64_t t = 0; t < n; ++t) {
        y = pole * y + (1.0 - pole) * dist(rng);
        out[static_cast<size_t>(t)] = static_cast<float>(std::fabs(y) / mean_abs);
    }
    return out;
}

std::string format_severity(double severity) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "severity=%.2f", severity);
    return buf;
}

void validate_recording(const Recording& rec, const std::string& what) {
    if (rec.samples.rank() != 2)
        throw ShapeError(what + ": samples must be rank-2 [T x C]");
    if (rec.samples.rows() != static_cast<int64_t>(rec.labels.size()))
        throw ShapeError(what + ": " + std::to_string(rec.labels.size()) +
                         " labels for " + std::to_string(rec.samples.rows()) +
                         " sample rows");
    if (rec.sample_rate_hz <= 0)
        throw ConfigError(what + ": sample_rate_hz must be positive");
    for (int lab : rec.labels)
        if (lab < 0 || lab >= kClasses)
            throw LabelError(what + ": label " + std::to_string(lab) +
                             " outside [0," + std::to_string(kClasses) + ")");
    if (!is_valid_set_kind(rec.set_kind))
        throw ConfigError(what + ": unknown set_kind '" + rec.set_kind +
                          "' (valid: " + [] {
                              std::string s;
                              for (const auto& k : set_kinds())
                                  s += (s.empty() ? "" : ", ") + k;
                              return s;
                          }() + ")");
    if (rec.population != "healthy" && rec.population != "stroke")
        throw ConfigError(what + ": unknown population '" + rec.population +
                          "' (valid: healthy, stroke)");
}

} // namespace

// --------------------------------------------------------------- timelines

const std::vector<std::string>& set_kinds() {
    static const std::vector<std::string> kinds = {
        "train",        "test_drift_mid", "test_drift_end",
        "test_posture", "test_rotation",  "test_device"};
    return kinds;
}

bool is_valid_set_kind(const std::string& kind) {
    const auto& ks = set_kinds();
    return std::find(ks.begin(), ks.end(), kind) != ks.end();
}

int64_t CueTimeline::total_samples() const {
    int64_t total = 0;
    for (const CueSegment& seg : segments)
        total += static_cast<int64_t>(std::llround(seg.duration_s * sample_rate_hz));
    return total;
}

std::vector<int> CueTimeline::expand_labels() const {
    std::vector<int> labels;
    labels.reserve(static_cast<size_t>(total_samples()));
    for (const CueSegment& seg : segments) {
        if (seg.cls < 0 || seg.cls >= kClasses)
            throw LabelError("cue segment class " + std::to_string(seg.cls) +
                             " outside [0," + std::to_string(kClasses) + ")");
        const int64_t n = static_cast<int64_t>(std::llround(seg.duration_s * sample_rate_hz));
        if (n <= 0)
            throw ConfigError("cue segment with non-positive sample count");
        labels.insert(labels.end(), static_cast<size_t>(n),
                      seg.cls);
    }
    return labels;
}

CueTimeline make_set_timeline(const std::string& kind) {
    auto alternating = [](int active_cls) {
        std::vector<CueSegment> segs;
        for (int i = 0; i < 3; ++i) {
            segs.push_back({0, 5.0});
            segs.push_back({active_cls, 6.0});
        }
        segs.push_back({0, 5.0});
        return segs;
    };
    CueTimeline tl;
    if (kind == "standard") {
        tl.segments = alternating(1); // R-O-R-O-R-O-R
        const auto closing = alternating(2);
        tl.segments.insert(tl.segments.end(), closing.begin(), closing.end());
    } else if (kind == "closing_only") {
        tl.segments = alternating(2); // R-C-R-C-R-C-R
    } else {
        throw ConfigError("unknown timeline kind '" + kind +
                          "' (valid: standard, closing_only)");
    }
    return tl;
}

// ---------------------------------------------------------------- subjects

SubjectProfile sample_subject(const std::string& population, double severity,
                              uint64_t seed) {
    if (population != "healthy" && population != "stroke")
        throw ConfigError("unknown population '" + population +
                          "' (valid: healthy, stroke)");
    if (!(severity >= 0.0 && severity <= 1.0))
        throw ConfigError("severity " + std::to_string(severity) +
                          " outside [0,1]");
    const bool stroke = population == "stroke";
    const double sev = stroke ? severity : 0.0;

    // One generator, fixed draw order: population and severity only change the
    // formulas applied to the draws, so a severity-0 stroke profile lands in
    // healthy ranges and amplitude scaling is exactly (1 - 0.6*severity).
    std::mt19937_64 rng(seed);

    SubjectProfile p;
    p.subject_id = population + "-" + std::to_string(seed);
    p.population = population;
    p.severity = sev;

    const double amp_scale = 1.0 - 0.6 * sev;
    p.amplitudes = Tensor({kClasses, kChannels});
    for (int c = 0; c < kChannels; ++c)
        p.amplitudes.at(1, c) =
            static_cast<float>(base_pattern(kOpenCenter, c) * uniform(rng, 0.8, 1.2) * amp_scale);
    for (int c = 0; c < kChannels; ++c)
        p.amplitudes.at(2, c) =
            static_cast<float>(base_pattern(kCloseCenter, c) * uniform(rng, 0.8, 1.2) * amp_scale);

    const double u_onset = uniform01(rng);
    const double u_rise = uniform01(rng);
    p.onset_delay_s = stroke ? 0.05 + 0.55 * sev + 0.08 * (u_onset - 0.5)
                             : 0.02 + 0.06 * u_onset;
    p.rise_time_s = stroke ? std::max(0.03, 0.10 + 0.50 * sev + 0.10 * (u_rise - 0.5))
                           : 0.05 + 0.10 * u_rise;

    // Cross-class leakage: antagonist pattern activates during each cue
    // (flexor activity during attempted opening, and vice versa).
    Tensor coco({kClasses, kChannels});
    for (int c = 0; c < kChannels; ++c)
        coco.at(1, c) = static_cast<float>(base_pattern(kCloseCenter, c) * uniform(rng, 0.8, 1.2));
    for (int c = 0; c < kChannels; ++c)
        coco.at(2, c) =
            static_cast<float>(0.5 * base_pattern(kOpenCenter, c) * uniform(rng, 0.8, 1.2));
    const double u_coco = uniform01(rng);
    const double target_norm = stroke ? 0.05 + 0.55 * sev : 0.03 + 0.05 * u_coco;
    double fro = 0.0;
    for (float v : coco.data) fro += static_cast<double>(v) * v;
    fro = std::sqrt(fro);
    for (float& v : coco.data) v = static_cast<float>(v * target_norm / fro);
    p.cocontraction = std::move(coco);

    p.noise_std = 0.03 + 0.03 * uniform01(rng) + (stroke ? 0.02 * sev : 0.0);
    const double u_tamp = uniform01(rng);
    p.tremor_amp = stroke ? 0.05 + 0.15 * sev * (0.5 + 0.5 * u_tamp) : 0.05 * u_tamp;
    p.tremor_hz = uniform(rng, 3.0, 6.0);
    return p;
}

// --------------------------------------------------------------- synthesis

Recording synthesize(const SubjectProfile& profile, const CueTimeline& timeline,
                     uint64_t seed) {
    if (profile.amplitudes.shape != std::vector<int64_t>{kClasses, kChannels} ||
        profile.cocontraction.shape != std::vector<int64_t>{kClasses, kChannels})
        throw ShapeError("subject profile tensors must be [" +
                         std::to_string(kClasses) + " x " +
                         std::to_string(kChannels) + "]");

    Recording rec;
    rec.labels = timeline.expand_labels();
    rec.sample_rate_hz = timeline.sample_rate_hz;
    rec.subject_id = profile.subject_id;
    rec.population = profile.population;
    rec.condition = profile.population == "stroke" ? format_severity(profile.severity)
                                                   : std::string("healthy");
    const int64_t n = static_cast<int64_t>(rec.labels.size());
    const double rate = timeline.sample_rate_hz;

    // Activation envelopes: one-pole tracking of the delayed cue, giving an
    // exponential rise/decay with time constant rise_time/3.
    const int64_t delay = std::llround(profile.onset_delay_s * rate);
    const double tau = std::max(profile.rise_time_s / 3.0, 1e-3);
    const double alpha = 1.0 - std::exp(-1.0 / (tau * rate));
    std::vector<std::vector<double>> env(
        kClasses, std::vector<double>(static_cast<size_t>(n), 0.0));
    for (int k = 1; k < kClasses; ++k) {
        double e = 0.0;
        for (int64_t t = 0; t < n; ++t) {
            const int64_t teff = t - delay;
            const int cue = teff >= 0 ? rec.labels[static_cast<size_t>(teff)] : 0;
            e += alpha * ((cue == k ? 1.0 : 0.0) - e);
            env[static_cast<size_t>(k)][static_cast<size_t>(t)] = e;
        }
    }

    std::mt19937_64 carrier_rng(mix_seed(seed, "carrier"));
    std::vector<std::vector<float>> carrier;
    carrier.reserve(kChannels);
    for (int c = 0; c < kChannels; ++c)
        carrier.push_back(rectified_carrier(n, carrier_rng, 0.7));

    std::mt19937_64 tremor_rng(mix_seed(seed, "tremor"));
    const double phase = uniform(tremor_rng, 0.0, 2.0 * kPi);

    std::mt19937_64 noise_rng(mix_seed(seed, "noise"));
    std::normal_distribution<double> noise(0.0, profile.noise_std);

    rec.samples = Tensor({n, kChannels});
    for (int64_t t = 0; t < n; ++t) {
        const double tremor =
            1.0 + profile.tremor_amp *
                      std::sin(2.0 * kPi * profile.tremor_hz * t / rate + phase);
        for (int c = 0; c < kChannels; ++c) {
            double act = 0.0;
            for (int k = 1; k < kClasses; ++k)
                act += env[static_cast<size_t>(k)][static_cast<size_t>(t)] *
                       (profile.amplitudes.at(k, c) + profile.cocontraction.at(k, c));
            rec.samples.at(t, c) = static_cast<float>(
                act * tremor * carrier[static_cast<size_t>(c)][static_cast<size_t>(t)] +
                noise(noise_rng));
        }
    }
    return rec;
}

// ------------------------------------------------------------------ shifts

Recording apply_shift(const Recording& rec, const std::string& shift,
                      const ShiftParams& params, uint64_t seed) {
    validate_recording(rec, "apply_shift input");
    Recording out = rec;
    out.condition = rec.condition.empty() ? shift : rec.condition + "+" + shift;
    const int64_t n = out.samples.rows();
    const double rate = out.sample_rate_hz;

    if (shift == "drift") {
        // Gain ramp + slow baseline wander + rising relax-segment tone.
        std::mt19937_64 rng(mix_seed(seed, "drift"));
        double phases[kChannels];
        for (int c = 0; c < kChannels; ++c) phases[c] = uniform(rng, 0.0, 2.0 * kPi);
        for (int64_t t = 0; t < n; ++t) {
            const double ramp = n > 1 ? static_cast<double>(t) / (n - 1) : 0.0;
            const double gain = 1.0 + params.drift_delta * ramp;
            const double tone =
                out.labels[static_cast<size_t>(t)] == 0 ? params.drift_tone * ramp : 0.0;
            for (int c = 0; c < kChannels; ++c) {
                const double wander =
                    params.wander_amp *
                    std::sin(2.0 * kPi * 0.05 * t / rate + phases[c]);
                out.samples.at(t, c) =
                    static_cast<float>(out.samples.at(t, c) * gain + wander + tone);
            }
        }
    } else if (shift == "posture") {
        // Tonic activation on the support-channel subset, all segments.
        for (int64_t t = 0; t < n; ++t)
            for (int i = 0; i < 3; ++i)
                out.samples.at(t, kPostureChannels[i]) += static_cast<float>(
                    params.posture_level * kPostureWeights[i]);
    } else if (shift == "rotation") {
        double deg = std::fmod(params.rotation_deg, 360.0);
        if (deg < 0) deg += 360.0;
        const double turns = deg / 45.0; // electrode spacing
        const int whole = static_cast<int>(turns);
        const double frac = turns - whole;
        Tensor rotated({n, kChannels});
        for (int64_t t = 0; t < n; ++t) {
            for (int c = 0; c < kChannels; ++c) {
                const int a = (c + whole) % kChannels;
                if (frac == 0.0) {
                    rotated.at(t, c) = out.samples.at(t, a); // bitwise copy
                } else {
                    const int b = (a + 1) % kChannels;
                    rotated.at(t, c) = static_cast<float>(
                        (1.0 - frac) * out.samples.at(t, a) +
                        frac * out.samples.at(t, b));
                }
            }
        }
        out.samples = std::move(rotated);
    } else if (shift == "device") {
        // Passive-motion artifact during each relax segment that precedes a
        // close cue: the orthosis opens the hand, so the artifact follows the
        // open-dominant channel pattern under a mid-segment bump envelope.
        std::mt19937_64 rng(mix_seed(seed, "device"));
        const auto spans = segment_spans(out.labels);
        for (size_t i = 0; i + 1 < spans.size(); ++i) {
            if (spans[i].first != 0 || spans[i + 1].first != 2) continue;
            const int64_t s = spans[i].second.first, e = spans[i].second.second;
            std::vector<float> slow = rectified_carrier(e - s, rng, 0.97);
            for (int64_t t = s; t < e; ++t) {
                const double u = static_cast<double>(t - s) / static_cast<double>(e - s);
                const double bump = std::sin(kPi * u) * std::sin(kPi * u);
                for (int c = 0; c < kChannels; ++c)
                    out.samples.at(t, c) += static_cast<float>(
                        params.device_amp * bump * base_pattern(kOpenCenter, c) *
                        slow[static_cast<size_t>(t - s)]);
            }
        }
    } else {
        throw ConfigError("unknown shift '" + shift +
                          "' (valid: drift, posture, rotation, device)");
    }
    return out;
}

// ------------------------------------------------------------- file format

namespace {
constexpr char kMagic[4] = {'E', 'M', 'G', 'R'};
constexpr uint16_t kRecordingVersion = 1;
} // namespace

void write_recording(const Recording& rec, const std::string& path) {
    validate_recording(rec, "write_recording");

    json header;
    header["subject_id"] = rec.subject_id;
    header["population"] = rec.population;
    header["set_kind"] = rec.set_kind;
    header["condition"] = rec.condition;
    header["sample_rate_hz"] = rec.sample_rate_hz;
    header["channels"] = kChannels;
    header["num_samples"] = rec.samples.rows();
    header["label_map"] = {{"0", "relax"}, {"1", "open"}, {"2", "close"}};
    const std::string header_bytes = header.dump();

    std::ostringstream body;
    for (int64_t t = 0; t < rec.samples.rows(); ++t) {
        for (int c = 0; c < kChannels; ++c) io::write_f32(body, rec.samples.at(t, c));
        const uint8_t lab = static_cast<uint8_t>(rec.labels[static_cast<size_t>(t)]);
        io::write_bytes(body, &lab, 1);
    }
    const std::string body_bytes = body.str();

    uint32_t crc = io::crc32(header_bytes.data(), header_bytes.size());
    crc = io::crc32(body_bytes.data(), body_bytes.size(), crc);

    std::ostringstream os;
    io::write_bytes(os, kMagic, 4);
    io::write_u16(os, kRecordingVersion);
    io::write_u32(os, static_cast<uint32_t>(header_bytes.size()));
    io::write_bytes(os, header_bytes.data(), header_bytes.size());
    io::write_bytes(os, body_bytes.data(), body_bytes.size());
    io::write_u32(os, crc);
    io::write_file(path, os.str());
}

Recording read_recording(const std::string& path) {
    const std::string bytes = io::read_file(path);
    std::istringstream is(bytes);
    char magic[4];
    io::read_bytes(is, magic, 4, "recording magic");
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError(path + ": not an EMGR recording");
    const uint16_t version = io::read_u16(is);
    if (version != kRecordingVersion)
        throw FormatError(path + ": unsupported recording version " +
                          std::to_string(version));
    const uint32_t header_len = io::read_u32(is);
    if (10 + static_cast<size_t>(header_len) + 4 > bytes.size())
        throw FormatError(path + ": truncated header");
    std::string header_bytes(header_len, '\0');
    io::read_bytes(is, header_bytes.data(), header_len, "recording header");

    Recording rec;
    int64_t num_samples = 0;
    int channels = 0;
    size_t label_count = 0;
    try {
        const json header = json::parse(header_bytes);
        rec.subject_id = header.at("subject_id").get<std::string>();
        rec.population = header.at("population").get<std::string>();
        rec.set_kind = header.at("set_kind").get<std::string>();
        rec.condition = header.at("condition").get<std::string>();
        rec.sample_rate_hz = header.at("sample_rate_hz").get<int>();
        channels = header.at("channels").get<int>();
        num_samples = header.at("num_samples").get<int64_t>();
        label_count = header.at("label_map").size();
    } catch (const json::exception& e) {
        throw FormatError(path + ": malformed recording header: " + e.what());
    }
    if (channels != kChannels)
        throw FormatError(path + ": header channels=" + std::to_string(channels) +
                          ", expected " + std::to_string(kChannels));
    if (num_samples < 0 || rec.sample_rate_hz <= 0)
        throw FormatError(path + ": malformed recording header fields");
    if (!is_valid_set_kind(rec.set_kind)) {
        std::string valid;
        for (const auto& k : set_kinds()) valid += (valid.empty() ? "" : ", ") + k;
        throw FormatError(path + ": unknown set_kind '" + rec.set_kind +
                          "' (valid: " + valid + ")");
    }
    if (rec.population != "healthy" && rec.population != "stroke")
        throw FormatError(path + ": unknown population '" + rec.population + "'");
    if (label_count == 0 || label_count > static_cast<size_t>(kClasses))
        throw FormatError(path + ": label_map must cover 1.." +
                          std::to_string(kClasses) + " classes");

    const size_t row_bytes = static_cast<size_t>(kChannels) * 4 + 1;
    const size_t expect_body = static_cast<size_t>(num_samples) * row_bytes;
    const size_t have = bytes.size() - 10 - header_len;
    if (have != expect_body + 4)
        throw FormatError(path + ": body size mismatch (header says " +
                          std::to_string(num_samples) + " samples x " +
                          std::to_string(kChannels) + " channels, file holds " +
                          std::to_string(have > 4 ? have - 4 : 0) + " bytes)");

    uint32_t crc = io::crc32(header_bytes.data(), header_bytes.size());
    crc = io::crc32(bytes.data() + 10 + header_len, expect_body, crc);

    rec.samples = Tensor({num_samples, kChannels});
    rec.labels.resize(static_cast<size_t>(num_samples));
    for (int64_t t = 0; t < num_samples; ++t) {
        for (int c = 0; c < kChannels; ++c) {
            float v;
            io::read_bytes(is, &v, 4, "recording samples");
            rec.samples.at(t, c) = v;
        }
        uint8_t lab;
        io::read_bytes(is, &lab, 1, "recording labels");
        if (lab >= label_count)
            throw FormatError(path + ": label byte " + std::to_string(int(lab)) +
                              " outside the label_map");
        rec.labels[static_cast<size_t>(t)] = lab;
    }
    const uint32_t stored = io::read_u32(is);
    if (stored != crc)
        throw FormatError(path + ": checksum mismatch");
    return rec;
}

// --------------------------------------------------------------- benchmark

namespace {

json write_subject(const std::filesystem::path& root, const std::string& id,
                   const SubjectProfile& profile, const BenchmarkConfig& cfg,
                   uint64_t seed, bool with_test_sets) {
    namespace fs = std::filesystem;
    const fs::path dir = root / id;
    fs::create_directories(dir);
    const CueTimeline standard = make_set_timeline("standard");

    json manifest;
    manifest["subject_id"] = id;
    manifest["population"] = profile.population;
    manifest["severity"] = profile.severity;
    manifest["sample_rate_hz"] = kSampleRateHz;
    manifest["channels"] = kChannels;
    manifest["train"] = json::array();
    manifest["test"] = json::array();

    for (int r = 0; r < cfg.train_sets; ++r) {
        Recording rec =
            synthesize(profile, standard, mix_seed(seed, id + "/train" + std::to_string(r)));
        rec.set_kind = "train";
        const std::string file = "train_" + std::to_string(r) + ".emgr";
        write_recording(rec, (dir / file).string());
        manifest["train"].push_back(file);
    }

    if (with_test_sets) {
        struct TestSpec {
            const char* kind;
            const char* timeline;
            const char* shift;
            double strength; // scales drift parameters
        };
        const TestSpec specs[] = {
            {"test_drift_mid", "standard", "drift", 0.5},
            {"test_drift_end", "standard", "drift", 1.0},
            {"test_posture", "standard", "posture", 1.0},
            {"test_rotation", "standard", "rotation", 1.0},
            {"test_device", "closing_only", "device", 1.0},
        };
        for (const TestSpec& spec : specs) {
            Recording base = synthesize(profile, make_set_timeline(spec.timeline),
                                        mix_seed(seed, id + "/" + spec.kind));
            ShiftParams params = cfg.shifts;
            params.drift_delta *= spec.strength;
            params.drift_tone *= spec.strength;
            Recording shifted = apply_shift(
                base, spec.shift, params, mix_seed(seed, id + "/shift/" + spec.kind));
            shifted.set_kind = spec.kind;
            const std::string file = std::string(spec.kind) + ".emgr";
            write_recording(shifted, (dir / file).string());
            manifest["test"].push_back({{"kind", spec.kind}, {"file", file}});
        }
    }

    io::write_file((dir / "manifest.json").string(), manifest.dump(2) + "\n");
    json entry;
    entry["id"] = id;
    entry["population"] = profile.population;
    entry["severity"] = profile.severity;
    entry["dir"] = id;
    return entry;
}

std::string two_digits(int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%02d", i);
    return buf;
}

} // namespace

void build_benchmark(const std::string& root, const BenchmarkConfig& cfg,
                     uint64_t seed) {
    namespace fs = std::filesystem;
    fs::create_directories(root);

    json manifest;
    manifest["seed"] = seed;
    manifest["channels"] = kChannels;
    manifest["sample_rate_hz"] = kSampleRateHz;
    manifest["healthy"] = json::array();
    manifest["retention"] = json::array();
    manifest["stroke"] = json::array();

    for (int i = 0; i < cfg.healthy_subjects; ++i) {
        const std::string id = "healthy_" + two_digits(i);
        SubjectProfile p = sample_subject("healthy", 0.0, mix_seed(seed, id));
        p.subject_id = id;
        manifest["healthy"].push_back(
            write_subject(root, id, p, cfg, seed, /*with_test_sets=*/false));
    }
    for (int i = 0; i < cfg.retention_subjects; ++i) {
        const std::string id = "retention_" + two_digits(i);
        SubjectProfile p = sample_subject("healthy", 0.0, mix_seed(seed, id));
        p.subject_id = id;
        manifest["retention"].push_back(
            write_subject(root, id, p, cfg, seed, /*with_test_sets=*/true));
    }
    for (size_t i = 0; i < cfg.stroke_severities.size(); ++i) {
        const std::string id = "stroke_" + two_digits(static_cast<int>(i));
        SubjectProfile p =
            sample_subject("stroke", cfg.stroke_severities[i], mix_seed(seed, id));
        p.subject_id = id;
        manifest["stroke"].push_back(
            write_subject(root, id, p, cfg, seed, /*with_test_sets=*/true));
    }
    io::write_file((fs::path(root) / "manifest.json").string(), manifest.dump(2) + "\n");
}

} // namespace emg::data
