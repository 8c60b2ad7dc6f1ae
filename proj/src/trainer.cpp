#include "emgadapt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <thread>

#include "emgadapt/adam.hpp"
#include "emgadapt/errors.hpp"

namespace emg::train {

using model::ModelConfig;
using model::Window;
using nn::NamedTensors;
using nn::Tape;
using nn::Tensor;

model::NormStats compute_norm_stats(const std::vector<data::Recording>& recs) {
    if (recs.empty())
        throw ConfigError("compute_norm_stats: no recordings");
    const int c = static_cast<int>(recs.front().samples.cols());
    std::vector<double> sum(static_cast<size_t>(c), 0.0);
    std::vector<double> sumsq(static_cast<size_t>(c), 0.0);
    int64_t n = 0;
    for (const data::Recording& rec : recs) {
        if (rec.samples.cols() != c)
            throw DataError("compute_norm_stats: channel count mismatch in '" +
                            rec.subject_id + "/" + rec.set_kind + "'");
        for (int64_t t = 0; t < rec.samples.rows(); ++t)
            for (int ch = 0; ch < c; ++ch) {
                const double v = rec.samples.at(t, ch);
                sum[static_cast<size_t>(ch)] += v;
                sumsq[static_cast<size_t>(ch)] += v * v;
            }
        n += rec.samples.rows();
    }
    if (n == 0) throw DataError("compute_norm_stats: recordings are empty");
    model::NormStats st;
    st.mean.resize(static_cast<size_t>(c));
    st.std.resize(static_cast<size_t>(c));
    for (int ch = 0; ch < c; ++ch) {
        const double mean = sum[static_cast<size_t>(ch)] / static_cast<double>(n);
        const double var =
            std::max(0.0, sumsq[static_cast<size_t>(ch)] / static_cast<double>(n) -
                              mean * mean);
        st.mean[static_cast<size_t>(ch)] = static_cast<float>(mean);
        st.std[static_cast<size_t>(ch)] =
            std::max(1e-6f, static_cast<float>(std::sqrt(var)));
    }
    return st;
}

std::vector<WindowSlice> slice_windows(const std::vector<data::Recording>& recs,
                                       const model::NormStats& norm,
                                       const ModelConfig& cfg, int stride) {
    if (stride < 1) throw ConfigError("slice_windows: stride must be >= 1");
    std::vector<WindowSlice> out;
    for (const data::Recording& rec : recs) {
        if (rec.samples.cols() != cfg.channels)
            throw DataError("slice_windows: recording '" + rec.subject_id + "/" +
                            rec.set_kind + "' has " +
                            std::to_string(rec.samples.cols()) +
                            " channels, config expects " +
                            std::to_string(cfg.channels));
        if (static_cast<int64_t>(rec.labels.size()) != rec.samples.rows())
            throw DataError("slice_windows: labels/samples length mismatch in '" +
                            rec.subject_id + "/" + rec.set_kind + "'");
        const int64_t total = rec.samples.rows();
        for (int64_t start = 0; start + cfg.window_len <= total; start += stride) {
            WindowSlice ws;
            ws.emg = Tensor({cfg.window_len, cfg.channels});
            ws.labels.resize(static_cast<size_t>(cfg.window_len));
            for (int t = 0; t < cfg.window_len; ++t) {
                const int lab = rec.labels[static_cast<size_t>(start + t)];
                if (lab < 0 || lab >= cfg.num_classes)
                    throw LabelError("slice_windows: label " + std::to_string(lab) +
                                     " outside [0," +
                                     std::to_string(cfg.num_classes) + ") in '" +
                                     rec.subject_id + "/" + rec.set_kind + "'");
                ws.labels[static_cast<size_t>(t)] = lab;
                for (int ch = 0; ch < cfg.channels; ++ch)
                    ws.emg.at(t, ch) = rec.samples.at(start + t, ch);
            }
            norm.apply(ws.emg);
            out.push_back(std::move(ws));
        }
    }
    return out;
}

WindowGraph model_objective(const model::Model& m,
                            std::function<bool(const std::string&)> trainable) {
    const model::Model* mp = &m;
    return [mp, trainable = std::move(trainable)](
               Tape& tape, const Window& win, double label_weight,
               double emg_weight, std::mt19937_64* dropout_rng,
               GradLeaves& out) -> Tape::NodeId {
        model::ParamLeaves leaves = model::make_leaves(tape, mp->params, trainable);
        for (const auto& [name, id] : leaves.ids)
            if (trainable(name)) out.emplace_back(name, id);
        return model::window_loss(tape, leaves, mp->config, win, label_weight,
                                  emg_weight, dropout_rng);
    };
}

int thread_budget() {
    if (const char* env = std::getenv("EMGADAPT_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v >= 1)
            return static_cast<int>(std::min<long>(v, 64));
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(std::min(hw, 64u));
}

namespace {

// Per-window gradient payload, accumulated in window order after the
// (possibly parallel) tape evaluations.
struct WindowGrads {
    double loss = 0.0;
    std::vector<std::pair<std::string, Tensor>> grads;
};

WindowGrads eval_window(const ModelConfig& cfg, const WindowGraph& graph,
                        const Window& win, double label_weight, double emg_weight,
                        uint64_t rng_seed) {
    (void)cfg;
    std::mt19937_64 rng(rng_seed);
    Tape tape;
    GradLeaves leaves;
    const Tape::NodeId root =
        graph(tape, win, label_weight, emg_weight, &rng, leaves);
    WindowGrads wg;
    wg.loss = tape.value_f64(root);
    if (leaves.empty()) return wg; // nothing trainable: skip the reverse pass
    tape.backward(root);
    for (const auto& [name, id] : leaves) {
        const Tensor& v = tape.node(id).value;
        Tensor g(v.shape);
        if (!v.grad.empty()) g.data = v.grad;
        wg.grads.emplace_back(name, std::move(g));
    }
    return wg;
}

} // namespace

TrainResult fit(const ModelConfig& cfg, NamedTensors& trained,
                  const WindowGraph& graph, const std::vector<WindowSlice>& windows,
                  const TrainConfig& tc, const EpochCallback& on_epoch) {
    if (windows.empty()) throw ConfigError("train: no windows");
    if (tc.epochs < 0) throw ConfigError("train: epochs must be >= 0");
    if (tc.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (tc.lr <= 0) throw ConfigError("train: lr must be positive");
    if (tc.lambda_recon < 0) throw ConfigError("train: lambda_recon must be >= 0");

    const int threads = thread_budget();
    nn::AdamState state;
    nn::AdamHyper hyper;
    hyper.lr = tc.lr;

    TrainResult result;
    std::vector<size_t> order(windows.size());
    std::iota(order.begin(), order.end(), 0);
    bool any_grads = false;

    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        std::mt19937_64 shuffle_rng(
            nn::mix_seed(tc.seed, "epoch/" + std::to_string(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        size_t epoch_count = order.size();
        if (tc.max_windows_per_epoch > 0)
            epoch_count = std::min(
                epoch_count, static_cast<size_t>(tc.max_windows_per_epoch));

        double loss_sum = 0.0;
        int batches = 0;
        for (size_t b0 = 0; b0 < epoch_count; b0 += static_cast<size_t>(tc.batch_size)) {
            const size_t bn = std::min(epoch_count - b0,
                                       static_cast<size_t>(tc.batch_size));

            // Draw masks first (sequential, seeded per batch slot) so the
            // pooled weights are known before any gradient work starts.
            std::vector<Window> batch(bn);
            std::vector<uint64_t> dropout_seeds(bn);
            int64_t label_rows = 0, emg_elems = 0;
            for (size_t i = 0; i < bn; ++i) {
                const WindowSlice& ws = windows[order[b0 + i]];
                const uint64_t ws_seed = nn::mix_seed(
                    tc.seed, "win/" + std::to_string(epoch) + "/" +
                                 std::to_string(b0 + i));
                std::mt19937_64 mask_rng(ws_seed);
                batch[i] = model::make_training_window(cfg, ws.emg, ws.labels,
                                                       mask_rng,
                                                       tc.all_label_mask_prob);
                dropout_seeds[i] = nn::mix_seed(ws_seed, "dropout");
                const model::WindowLossCounts c =
                    model::count_window_targets(cfg, batch[i]);
                label_rows += c.label_rows;
                emg_elems += c.emg_elems;
            }
            const double label_weight =
                label_rows > 0 ? 1.0 / static_cast<double>(label_rows) : 0.0;
            const double emg_weight =
                emg_elems > 0 ? tc.lambda_recon / static_cast<double>(emg_elems)
                              : 0.0;

            // Per-window tapes, optionally in parallel; results land in a
            // vector indexed by batch position so accumulation order is fixed.
            std::vector<WindowGrads> results(bn);
            const int workers = std::min<int>(threads, static_cast<int>(bn));
            if (workers <= 1) {
                for (size_t i = 0; i < bn; ++i)
                    results[i] = eval_window(cfg, graph, batch[i], label_weight,
                                             emg_weight, dropout_seeds[i]);
            } else {
                std::vector<std::thread> pool;
                pool.reserve(static_cast<size_t>(workers));
                for (int w = 0; w < workers; ++w)
                    pool.emplace_back([&, w] {
                        for (size_t i = static_cast<size_t>(w); i < bn;
                             i += static_cast<size_t>(workers))
                            results[i] =
                                eval_window(cfg, graph, batch[i], label_weight,
                                            emg_weight, dropout_seeds[i]);
                    });
                for (std::thread& t : pool) t.join();
            }

            NamedTensors grads;
            double batch_loss = 0.0;
            for (size_t i = 0; i < bn; ++i) {
                batch_loss += results[i].loss;
                if (!results[i].grads.empty()) any_grads = true;
                for (auto& [name, g] : results[i].grads) {
                    auto it = grads.find(name);
                    if (it == grads.end()) {
                        grads.emplace(name, std::move(g));
                    } else {
                        for (size_t k = 0; k < g.data.size(); ++k)
                            it->second.data[k] += g.data[k];
                    }
                }
            }

            // Decoupled weight decay on the tensors being optimized, applied
            // to the pre-step value, then the Adam update.
            if (tc.weight_decay > 0.0) {
                const float shrink =
                    static_cast<float>(1.0 - tc.lr * tc.weight_decay);
                for (const auto& [name, g] : grads) {
                    auto it = trained.find(name);
                    if (it == trained.end())
                        throw ConfigError("train: gradient for unknown tensor '" +
                                          name + "'");
                    for (float& p : it->second.data) p *= shrink;
                }
            }
            adam_step(trained, grads, state, hyper);

            loss_sum += batch_loss;
            ++batches;
        }
        const double mean_loss =
            batches > 0 ? loss_sum / static_cast<double>(batches) : 0.0;
        result.epoch_loss.push_back(mean_loss);
        if (on_epoch) on_epoch(epoch + 1, mean_loss);

        // Nothing trainable: the parameters cannot move, so further passes
        // would only re-measure the same function; replicate the first
        // epoch's loss as a constant trace instead of wasting the work.
        if (epoch == 0 && !any_grads) {
            for (int e = 1; e < tc.epochs; ++e) {
                result.epoch_loss.push_back(mean_loss);
                if (on_epoch) on_epoch(e + 1, mean_loss);
            }
            break;
        }
    }
    return result;
}

} // namespace emg::train
