#include "emgadapt/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "emgadapt/errors.hpp"

namespace emg::metrics {

using nlohmann::json;

namespace {

void check_pair(const LabeledPrediction& lp) {
    if (lp.truth.empty())
        throw ShapeError("metric input streams must be nonempty");
    if (lp.truth.size() != lp.pred.size())
        throw ShapeError("truth/pred length mismatch: " +
                         std::to_string(lp.truth.size()) + " vs " +
                         std::to_string(lp.pred.size()));
    if (lp.sample_rate_hz <= 0)
        throw ConfigError("sample_rate_hz must be positive");
}

} // namespace

double raw_accuracy(const LabeledPrediction& lp) {
    check_pair(lp);
    int64_t hits = 0;
    for (size_t t = 0; t < lp.truth.size(); ++t)
        if (lp.truth[t] == lp.pred[t]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(lp.truth.size());
}

std::vector<Transition> extract_transitions(const std::vector<int>& truth) {
    if (truth.empty()) throw ShapeError("extract_transitions: empty stream");
    std::vector<Transition> out;
    for (size_t t = 1; t < truth.size(); ++t)
        if (truth[t] != truth[t - 1])
            out.push_back({static_cast<int64_t>(t), truth[t - 1], truth[t]});
    return out;
}

TransitionScore transition_accuracy(const LabeledPrediction& lp, double buffer_s) {
    check_pair(lp);
    if (buffer_s < 0) throw ConfigError("buffer_s must be non-negative");
    const int64_t n = static_cast<int64_t>(lp.truth.size());
    const int64_t buffer_len =
        static_cast<int64_t>(std::llround(buffer_s * lp.sample_rate_hz));

    TransitionScore score;
    const std::vector<Transition> transitions = extract_transitions(lp.truth);
    if (transitions.empty()) {
        score.warnings.push_back(
            "no ground-truth transitions; transition accuracy undefined");
        return score;
    }

    // Configuration sanity: the buffer should fit inside every segment.
    int64_t shortest = n;
    {
        int64_t start = 0;
        for (const Transition& tr : transitions) {
            shortest = std::min(shortest, tr.index - start);
            start = tr.index;
        }
        shortest = std::min(shortest, n - start);
    }
    if (buffer_len > shortest)
        score.warnings.push_back("reaction buffer (" + std::to_string(buffer_len) +
                                 " samples) exceeds the shortest segment (" +
                                 std::to_string(shortest) + " samples)");

    int64_t passed = 0;
    for (size_t e = 0; e < transitions.size(); ++e) {
        const Transition& tr = transitions[e];
        TransitionEvent ev;
        ev.index = tr.index;
        ev.from_class = tr.from_class;
        ev.to_class = tr.to_class;
        ev.maintenance_end =
            e + 1 < transitions.size() ? transitions[e + 1].index : n;
        // Buffer truncated at the next transition (and the stream end) so an
        // over-long buffer can never score against the following event.
        ev.buffer_end = std::min(tr.index + buffer_len, ev.maintenance_end);

        // Detection requires the prediction to *switch* to the new class
        // inside the buffer (transition indices are >= 1, so j-1 is valid).
        // A constant output never detects anything, per the metric's intent
        // of scoring reactive class changes.
        int64_t first_hit = -1;
        for (int64_t j = tr.index; j < ev.buffer_end; ++j)
            if (lp.pred[static_cast<size_t>(j)] == tr.to_class &&
                lp.pred[static_cast<size_t>(j - 1)] != tr.to_class) {
                first_hit = j;
                break;
            }
        ev.detected = first_hit >= 0;
        ev.detect_index = first_hit;

        const int64_t maint_start = ev.detected ? first_hit : ev.buffer_end;
        ev.flicker_free = true;
        for (int64_t j = maint_start; j < ev.maintenance_end; ++j)
            if (lp.pred[static_cast<size_t>(j)] != tr.to_class) {
                ev.flicker_free = false;
                break;
            }
        ev.passed = ev.detected && ev.flicker_free;
        if (ev.passed) ++passed;
        score.events.push_back(ev);
    }
    score.accuracy = static_cast<double>(passed) /
                     static_cast<double>(score.events.size());
    return score;
}

MetricsReport score_streams(const LabeledPrediction& lp, int num_classes,
                            double buffer_s) {
    check_pair(lp);
    if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
    for (size_t t = 0; t < lp.truth.size(); ++t) {
        if (lp.truth[t] < 0 || lp.truth[t] >= num_classes ||
            lp.pred[t] < 0 || lp.pred[t] >= num_classes)
            throw LabelError("label outside [0," + std::to_string(num_classes) +
                             ") at sample " + std::to_string(t));
    }
    MetricsReport rep;
    rep.num_classes = num_classes;
    rep.buffer_s = buffer_s;
    rep.raw = raw_accuracy(lp);
    TransitionScore ts = transition_accuracy(lp, buffer_s);
    rep.transition = ts.accuracy;
    rep.events = std::move(ts.events);
    rep.warnings = std::move(ts.warnings);
    rep.confusion.assign(static_cast<size_t>(num_classes) * num_classes, 0);
    for (size_t t = 0; t < lp.truth.size(); ++t)
        ++rep.confusion[static_cast<size_t>(lp.truth[t]) * num_classes +
                        static_cast<size_t>(lp.pred[t])];
    return rep;
}

json MetricsReport::to_json() const {
    json j;
    j["subject_id"] = subject_id;
    j["set_kind"] = set_kind;
    j["condition"] = condition;
    j["raw_accuracy"] = raw;
    if (transition)
        j["transition_accuracy"] = *transition;
    else
        j["transition_accuracy"] = nullptr;
    j["num_classes"] = num_classes;
    j["buffer_s"] = buffer_s;
    j["buffer_anchor"] = "at_transition"; // buffer starts at the event sample
    j["detection_rule"] = "switch_within_buffer";
    j["confusion"] = confusion;
    j["warnings"] = warnings;
    j["events"] = json::array();
    for (const TransitionEvent& ev : events)
        j["events"].push_back({{"index", ev.index},
                               {"from", ev.from_class},
                               {"to", ev.to_class},
                               {"buffer_end", ev.buffer_end},
                               {"maintenance_end", ev.maintenance_end},
                               {"detect_index", ev.detect_index},
                               {"detected", ev.detected},
                               {"flicker_free", ev.flicker_free},
                               {"passed", ev.passed}});
    return j;
}

json TestsuiteResult::to_json() const {
    json j;
    j["mean_raw_accuracy"] = mean_raw;
    if (mean_transition)
        j["mean_transition_accuracy"] = *mean_transition;
    else
        j["mean_transition_accuracy"] = nullptr;
    j["warnings"] = warnings;
    j["per_recording"] = json::array();
    for (const MetricsReport& rep : per_recording)
        j["per_recording"].push_back(rep.to_json());
    return j;
}

TestsuiteResult evaluate_testsuite(const model::Model& m,
                                   const std::vector<data::Recording>& recordings,
                                   double buffer_s, int hop) {
    if (recordings.empty())
        throw ConfigError("evaluate_testsuite: no recordings");
    TestsuiteResult result;
    double raw_sum = 0.0, trans_sum = 0.0;
    int trans_count = 0;
    for (const data::Recording& rec : recordings) {
        if (rec.samples.cols() != m.config.channels)
            throw ShapeError("recording '" + rec.subject_id + "/" + rec.set_kind +
                             "' has " + std::to_string(rec.samples.cols()) +
                             " channels, model expects " +
                             std::to_string(m.config.channels));
        LabeledPrediction lp;
        lp.truth = rec.labels;
        lp.pred = model::sliding_predict(m, rec.samples, hop);
        lp.sample_rate_hz = rec.sample_rate_hz;
        MetricsReport rep = score_streams(lp, m.config.num_classes, buffer_s);
        rep.subject_id = rec.subject_id;
        rep.set_kind = rec.set_kind;
        rep.condition = rec.condition;
        raw_sum += rep.raw;
        if (rep.transition) {
            trans_sum += *rep.transition;
            ++trans_count;
        } else {
            result.warnings.push_back(rec.subject_id + "/" + rec.set_kind +
                                      ": no transitions; excluded from the "
                                      "transition-accuracy mean");
        }
        result.per_recording.push_back(std::move(rep));
    }
    result.mean_raw = raw_sum / static_cast<double>(recordings.size());
    if (trans_count > 0)
        result.mean_transition = trans_sum / static_cast<double>(trans_count);
    else
        result.warnings.push_back(
            "no recording had transitions; mean transition accuracy undefined");
    return result;
}

} // namespace emg::metrics
