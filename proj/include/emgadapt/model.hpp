#pragma once

// Encoder-only transformer over patched EMG windows with a dual-modality
// (EMG + intent label) masked-modeling objective, a per-timestep intent head
// and an EMG reconstruction head.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "emgadapt/adam.hpp"
#include "emgadapt/tape.hpp"
#include "emgadapt/tensor.hpp"

namespace emg::model {

using nn::NamedTensors;
using nn::Tape;
using nn::Tensor;

struct ModelConfig {
    int channels = 8;        // C
    int window_len = 200;    // T samples (1 s at 200 Hz)
    int num_classes = 3;     // K: relax=0, open=1, close=2
    int patch_len = 10;      // samples per token (50 ms)
    int d_model = 32;
    int n_layers = 2;
    int n_heads = 4;
    int ff_dim = 64;
    double dropout = 0.1;
    double emg_mask_ratio = 0.15;
    double label_mask_ratio = 0.5;

    int label_mask_token() const { return num_classes; }
    int num_patches() const { return window_len / patch_len; }
    int patch_dim() const { return patch_len * channels; }
    void validate() const; // throws ConfigError on violated invariants
};

// Per-channel z-normalization statistics, computed on training data only and
// stored inside checkpoints.
struct NormStats {
    std::vector<float> mean; // size C
    std::vector<float> std;  // size C, floored at 1e-6

    void apply(Tensor& emg) const; // in place, emg is [T x C]
};

NormStats identity_norm(int channels);

// One training/inference window. emg is [T x C] in normalized units; labels
// are per sample; masks are per patch.
struct Window {
    Tensor emg;
    std::vector<int> labels;
    std::vector<uint8_t> emg_mask;   // patches whose EMG input is zeroed
    std::vector<uint8_t> label_mask; // patches whose label input is the mask token
};

using WindowBatch = std::vector<Window>;

struct Model {
    ModelConfig config;
    NamedTensors params;
    NormStats norm;
};

// Canonical parameter schema: sorted (name, shape) pairs fully determined by
// the config. Checked on checkpoint load.
std::vector<std::pair<std::string, std::vector<int64_t>>> param_schema(const ModelConfig& cfg);

// Deterministic initialization; each tensor gets an independent stream
// derived from (seed, name).
NamedTensors init_params(const ModelConfig& cfg, uint64_t seed);
Model make_model(const ModelConfig& cfg, uint64_t seed, NormStats norm);

// Majority label per patch; ties break toward the lower class index.
std::vector<int> patch_labels(const std::vector<int>& labels, int patch_len, int num_classes);

// Graph-building context used by forward/pretrain graphs: parameter leaves
// registered on a tape (trainable ones flagged for gradients).
struct ParamLeaves {
    std::vector<std::pair<std::string, Tape::NodeId>> ids;
    Tape::NodeId at(const std::string& name) const;
};

ParamLeaves make_leaves(Tape& tape, const NamedTensors& params,
                        const std::function<bool(const std::string&)>& trainable);
ParamLeaves make_leaves_frozen(Tape& tape, const NamedTensors& params);

// Per-window forward pass on the given tape. Returns per-patch intent logits
// [T_p x K] and reconstruction [T_p x patch_len*C]. dropout_rng enables
// inverted dropout (training only).
struct ForwardNodes {
    Tape::NodeId logits;
    Tape::NodeId recon;
};
ForwardNodes forward_window(Tape& tape, const ParamLeaves& leaves, const ModelConfig& cfg,
                            const Window& win, std::mt19937_64* dropout_rng = nullptr);

// Convenience batched forward (inference semantics, no dropout): per-window
// per-patch logits and recon copies.
struct ForwardResult {
    std::vector<Tensor> logits; // each [T_p x K]
    std::vector<Tensor> recon;  // each [T_p x patch_len*C]
};
ForwardResult forward(const Model& model, const WindowBatch& batch);

// Pooled masked-modeling loss over the batch:
//   cross_entropy over label-masked patches + lambda_recon * mse over
//   EMG-masked patches, each averaged over the whole batch.
// Throws ConfigError if no patch is masked in either modality.
double pretrain_loss(const Model& model, const WindowBatch& batch, double lambda_recon = 1.0);

// Single-window loss graph with externally supplied pooling weights
// (1/total masked-label patches, lambda/total masked-EMG elements); used by
// the trainer so per-window tapes reproduce the pooled batch loss exactly.
struct WindowLossCounts {
    int64_t label_rows = 0; // patches with a live label target
    int64_t emg_elems = 0;  // reconstruction elements with a live target
};
WindowLossCounts count_window_targets(const ModelConfig& cfg, const Window& win);
Tape::NodeId window_loss(Tape& tape, const ParamLeaves& leaves, const ModelConfig& cfg,
                         const Window& win, double label_weight, double emg_weight,
                         std::mt19937_64* dropout_rng = nullptr);

// Inference on a raw (unnormalized) window: labels fully masked, EMG fully
// visible. Returns per-timestep argmax labels (ties toward the lower class)
// and per-timestep posteriors [T x K].
struct Prediction {
    std::vector<int> labels;
    Tensor posterior;
};
Prediction predict_window(const Model& model, const Tensor& emg_raw);

// Sliding-window prediction over a long recording with the stream policy:
// command for sample t is the newest-sample prediction of the most recent
// complete window at a hop boundary; samples before the first complete
// window predict relax (class 0).
std::vector<int> sliding_predict(const Model& model, const Tensor& samples, int hop);

// Training-batch assembly: draws per-patch masks. With probability
// all_label_mask_prob the whole window's labels are masked (matching the
// inference condition); otherwise Bernoulli(label_mask_ratio) with at least
// one masked patch. EMG masks are Bernoulli(emg_mask_ratio), at least one.
Window make_training_window(const ModelConfig& cfg, Tensor emg_normalized,
                            std::vector<int> labels, std::mt19937_64& rng,
                            double all_label_mask_prob = 0.25);

} // namespace emg::model
