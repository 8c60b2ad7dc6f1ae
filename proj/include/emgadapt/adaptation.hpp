#pragma once

// The five adaptation variants — zero_shot, scratch, head_only, lora, full —
// expressed as trainability policies over the model's named tensors, plus the
// LoRA low-rank weight algebra (W_eff = W + (α/r)·B·A), adapter training
// through the shared fit() loop, and the "EMGA" adapter sidecar format.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "emgadapt/model.hpp"
#include "emgadapt/trainer.hpp"

namespace emg::adapt {

enum class Variant { zero_shot, scratch, head_only, lora, full };

Variant parse_variant(const std::string& name); // throws ConfigError
std::string variant_name(Variant v);

struct AdaptationSpec {
    Variant variant = Variant::full;
    int lora_rank = 4;
    double lora_alpha = 8.0; // 2 * rank
    // Substring patterns resolved against the linear weight matrices (rank-2
    // tensors excluding the label/positional lookup tables). Empty = default
    // set: every linear weight including both heads.
    std::vector<std::string> lora_targets;
    std::string init_checkpoint; // healthy checkpoint; required except scratch
    uint64_t seed = 0;           // scratch init and LoRA A init
};

// One adapter pair. The base weight is stored [in x out] (activations are
// row vectors), so the delta applied to it is transpose(B·A)·(α/r):
//   A: [r_eff x in]  ~ N(0, 1/r_eff)
//   B: [out x r_eff] zero-initialized (effective weight == base at start)
struct LoraPair {
    std::string base_name;
    int rank = 0; // effective rank = min(requested, in, out)
};

struct LoraState {
    int rank = 4;      // requested rank
    double alpha = 8.0;
    std::vector<LoraPair> pairs;  // sorted by base_name
    nn::NamedTensors adapters;    // "lora.<base>.A" and "lora.<base>.B"
    uint32_t base_crc = 0;        // params_crc of the base weights

    int64_t param_count() const; // Σ r_eff · (in + out)
};

// Base names of the linear weight matrices selected by `patterns` (each
// pattern must match at least one candidate). Empty patterns = all.
std::vector<std::string> resolve_lora_targets(
    const nn::NamedTensors& params, const std::vector<std::string>& patterns);

// Fresh adapters over `params`: per-target effective rank min(rank, in, out),
// A ~ N(0, 1/r_eff) seeded per tensor, B = 0.
LoraState init_lora(const nn::NamedTensors& params, int rank, double alpha,
                    const std::vector<std::string>& patterns, uint64_t seed);

// W + (α/r)·transpose(B·A) on an [in x out] base; never mutates `base`.
// `rank` must equal A's row count and B's column count.
nn::Tensor lora_effective_weight(const nn::Tensor& base, const nn::Tensor& A,
                                 const nn::Tensor& B, double alpha, int rank);

// Plain parameters with every adapter folded into its base weight.
nn::NamedTensors merge_lora(const nn::NamedTensors& params, const LoraState& lora);

// Registers base tensors (frozen) and adapters on `tape`, splicing an
// effective-weight node over each targeted base so model::forward_window and
// model::window_loss run unmodified. When `adapter_leaves` is non-null the
// adapters are trainable and their (name, leaf) pairs are appended to it.
model::ParamLeaves make_lora_leaves(nn::Tape& tape, const nn::NamedTensors& params,
                                    const LoraState& lora,
                                    train::GradLeaves* adapter_leaves = nullptr);

struct VariantBuild {
    Variant variant = Variant::zero_shot;
    model::Model model;
    std::optional<LoraState> lora;
    std::map<std::string, bool> trainable; // model tensors + adapter tensors

    // Lookup closure over `trainable` (absent names are frozen).
    std::function<bool(const std::string&)> mask() const;

    // Inference-ready model: adapters merged for lora, the model itself
    // otherwise.
    model::Model effective_model() const;
};

// Materializes a variant. Non-scratch variants load spec.init_checkpoint and
// validate it against `cfg`; scratch draws a fresh init from spec.seed and
// uses `scratch_norm` (identity stats when null — callers normally pass the
// statistics of the adaptation training data).
VariantBuild build_variant(const AdaptationSpec& spec, const model::ModelConfig& cfg,
                           const model::NormStats* scratch_norm = nullptr);

// Masked-modeling fine-tuning of the variant's trainable tensors via
// train::fit. zero_shot rejects the call (UnsupportedError).
train::TrainResult finetune(VariantBuild& vb,
                            const std::vector<train::WindowSlice>& windows,
                            const train::TrainConfig& tc,
                            const train::EpochCallback& on_epoch = {});

// Adapter sidecar: magic "EMGA", u16 version, length-prefixed JSON header
// (base checkpoint CRC, rank, alpha, targets, tensor manifest), f32 adapter
// data, CRC32 of the data section. Loading verifies the base CRC.
inline constexpr uint16_t kAdapterVersion = 1;
void save_adapters(const LoraState& lora, const std::string& path);
LoraState load_adapters(const std::string& path, const nn::NamedTensors& base);

} // namespace emg::adapt
