#pragma once

// Synthetic EMG data generation: cue timelines, subject profiles, signal
// synthesis, distribution-shift transforms, the on-disk recording format,
// and the benchmark dataset tree.

#include <cstdint>
#include <string>
#include <vector>

#include "emgadapt/tensor.hpp"

namespace emg::data {

using nn::Tensor;

inline constexpr int kChannels = 8;
inline constexpr int kClasses = 3; // 0 = relax, 1 = open, 2 = close
inline constexpr int kSampleRateHz = 200;

// Valid values for Recording::set_kind.
const std::vector<std::string>& set_kinds();
bool is_valid_set_kind(const std::string& kind);

struct CueSegment {
    int cls = 0;          // class label cued during this segment
    double duration_s = 0.0;
};

struct CueTimeline {
    std::vector<CueSegment> segments;
    int sample_rate_hz = kSampleRateHz;

    int64_t total_samples() const;
    // Per-sample labels; length is exactly the sum of per-segment
    // round(duration * rate) counts.
    std::vector<int> expand_labels() const;
};

// kind: "standard" (ROROROR then RCRCRCR) or "closing_only" (RCRCRCR).
CueTimeline make_set_timeline(const std::string& kind);

struct SubjectProfile {
    std::string subject_id;
    std::string population;   // "healthy" | "stroke"
    Tensor amplitudes;        // [kClasses x kChannels] voluntary activation
    Tensor cocontraction;     // [kClasses x kChannels] cross-class leakage
    double onset_delay_s = 0.0;
    double rise_time_s = 0.1;
    double noise_std = 0.05;
    double tremor_hz = 0.0;
    double tremor_amp = 0.0;
    double severity = 0.0;    // 0 for healthy
};

SubjectProfile sample_subject(const std::string& population, double severity,
                              uint64_t seed);

struct Recording {
    Tensor samples; // [T x kChannels]
    std::vector<int> labels;
    int sample_rate_hz = kSampleRateHz;
    std::string subject_id;
    std::string population = "healthy"; // "healthy" | "stroke"
    std::string set_kind = "train";
    std::string condition; // free-form provenance, e.g. "drift:1.0"
};

Recording synthesize(const SubjectProfile& profile, const CueTimeline& timeline,
                     uint64_t seed);

struct ShiftParams {
    double drift_delta = 0.15;  // gain ramp endpoint (1.0 -> 1 + delta)
    double drift_tone = 0.08;   // relax-segment tone at the ramp endpoint
    double wander_amp = 0.02;   // slow baseline wander amplitude
    double posture_level = 0.2; // tonic activation on the support channels
    double rotation_deg = 15.0; // armband rotation (45 deg = one channel)
    double device_amp = 0.3;    // passive-motion artifact amplitude
};

// shift: "drift" | "posture" | "rotation" | "device". Labels are never
// altered; only the samples change.
Recording apply_shift(const Recording& rec, const std::string& shift,
                      const ShiftParams& params, uint64_t seed);

void write_recording(const Recording& rec, const std::string& path);
Recording read_recording(const std::string& path);

struct BenchmarkConfig {
    int healthy_subjects = 40;
    int retention_subjects = 2;
    std::vector<double> stroke_severities = {0.8, 0.5, 0.3};
    int train_sets = 4;
    ShiftParams shifts;
};

// Emits <root>/{healthy_NN,retention_NN,stroke_NN}/ with per-subject
// manifest.json files and a root manifest.json listing every subject.
void build_benchmark(const std::string& root, const BenchmarkConfig& cfg,
                     uint64_t seed);

} // namespace emg::data
