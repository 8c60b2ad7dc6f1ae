#pragma once

// Shared masked-modeling training loop: window slicing + normalization,
// deterministic shuffling and mask sampling, pooled-batch Adam updates with
// decoupled weight decay, and a window-graph hook so both plain parameters
// and adapter-augmented forward passes train through the same code path.

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "emgadapt/datagen.hpp"
#include "emgadapt/model.hpp"

namespace emg::train {

// One already-normalized model window cut out of a recording.
struct WindowSlice {
    nn::Tensor emg; // [T x C], normalized units
    std::vector<int> labels;
};

// Per-channel z-normalization statistics over every sample of `recs`
// (float64 accumulation; std floored inside NormStats semantics).
model::NormStats compute_norm_stats(const std::vector<data::Recording>& recs);

// Cuts every complete [T x C] window at the given stride and applies `norm`.
std::vector<WindowSlice> slice_windows(const std::vector<data::Recording>& recs,
                                       const model::NormStats& norm,
                                       const model::ModelConfig& cfg, int stride);

struct TrainConfig {
    double lr = 1e-3;
    double weight_decay = 0.0; // decoupled (AdamW-style), trainable tensors only
    int epochs = 10;
    int batch_size = 16;
    double lambda_recon = 1.0;
    double all_label_mask_prob = 0.25;
    uint64_t seed = 0;
    int max_windows_per_epoch = 0; // 0 = use every window each epoch
};

// Builds one window's loss graph: registers leaves on the tape, returns the
// scalar loss node, and appends the trainable (name, leaf id) pairs whose
// gradients the trainer accumulates under those names.
using GradLeaves = std::vector<std::pair<std::string, nn::Tape::NodeId>>;
using WindowGraph = std::function<nn::Tape::NodeId(
    nn::Tape& tape, const model::Window& win, double label_weight,
    double emg_weight, std::mt19937_64* dropout_rng, GradLeaves& out)>;

// Plain objective over the model's own parameters with a trainability mask.
// The model must outlive the returned function; parameter values are re-read
// on every call, so Adam updates are picked up batch to batch.
WindowGraph model_objective(const model::Model& m,
                            std::function<bool(const std::string&)> trainable);

struct TrainResult {
    std::vector<double> epoch_loss; // mean pooled batch loss per epoch
};

// Called after each completed epoch (1-based) with the mean loss.
using EpochCallback = std::function<void(int epoch, double mean_loss)>;

// Masked-modeling Adam loop over `windows`. `trained` holds the tensors the
// optimizer updates; gradients arrive from the graph keyed by the same
// names. Deterministic for a given (windows, config): the thread budget
// (EMGADAPT_THREADS) only parallelizes per-window gradient computation, and
// accumulation runs in fixed window order.
TrainResult fit(const model::ModelConfig& cfg, nn::NamedTensors& trained,
                  const WindowGraph& graph, const std::vector<WindowSlice>& windows,
                  const TrainConfig& tc, const EpochCallback& on_epoch = {});

// EMGADAPT_THREADS (clamped to [1, 64]); hardware concurrency when unset.
int thread_budget();

} // namespace emg::train
