#pragma once

// Raw per-timestep accuracy and the transition event metric (reaction-buffer
// detection plus flicker-free maintenance), scored over aligned ground-truth
// and prediction label streams.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emgadapt/datagen.hpp"
#include "emgadapt/model.hpp"

namespace emg::metrics {

struct LabeledPrediction {
    std::vector<int> truth;
    std::vector<int> pred;
    int sample_rate_hz = 200;
};

// Exact fraction of timesteps where pred matches truth.
double raw_accuracy(const LabeledPrediction& lp);

struct Transition {
    int64_t index = 0; // first sample of the new class
    int from_class = 0;
    int to_class = 0;
};

std::vector<Transition> extract_transitions(const std::vector<int>& truth);

struct TransitionEvent {
    int64_t index = 0;
    int from_class = 0;
    int to_class = 0;
    int64_t buffer_end = 0;      // exclusive; truncated at the next transition
    int64_t maintenance_end = 0; // next transition or stream end (exclusive)
    int64_t detect_index = -1;   // sample of the first in-buffer switch, or -1
    bool detected = false;
    bool flicker_free = false;
    bool passed = false; // detected AND flicker_free
};

struct TransitionScore {
    std::optional<double> accuracy; // undefined when there are no events
    std::vector<TransitionEvent> events;
    std::vector<std::string> warnings;
};

// Buffer starts at the transition sample: an event is detected if any
// prediction in [index, buffer_end) equals the new class, and passes if the
// predictions from the first detection through maintenance_end never leave it.
TransitionScore transition_accuracy(const LabeledPrediction& lp,
                                    double buffer_s = 1.0);

struct MetricsReport {
    std::string subject_id;
    std::string set_kind;
    std::string condition;
    double raw = 0.0;
    std::optional<double> transition;
    std::vector<TransitionEvent> events;
    std::vector<int64_t> confusion; // [num_classes x num_classes], row = truth
    int num_classes = 0;
    double buffer_s = 1.0;
    std::vector<std::string> warnings;

    nlohmann::json to_json() const;
};

// Scores one aligned pair of label streams (both metrics plus confusion).
MetricsReport score_streams(const LabeledPrediction& lp, int num_classes,
                            double buffer_s = 1.0);

struct TestsuiteResult {
    std::vector<MetricsReport> per_recording;
    double mean_raw = 0.0;
    std::optional<double> mean_transition; // over recordings where defined
    std::vector<std::string> warnings;

    nlohmann::json to_json() const;
};

// Sliding-window prediction over each recording (hop in samples), scored
// against the cue labels; means are unweighted across recordings.
TestsuiteResult evaluate_testsuite(const model::Model& m,
                                   const std::vector<data::Recording>& recordings,
                                   double buffer_s = 1.0, int hop = 10);

} // namespace emg::metrics
