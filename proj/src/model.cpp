#include "emgadapt/model.hpp"

#include <algorithm>
#include <cmath>

#include "emgadapt/errors.hpp"

namespace emg::model {

void ModelConfig::validate() const {
    if (channels < 1) throw ConfigError("channels must be >= 1");
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (patch_len < 1 || window_len < 1 || window_len % patch_len != 0)
        throw ConfigError("window_len must be a positive multiple of patch_len");
    if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0)
        throw ConfigError("d_model must be a positive multiple of n_heads");
    if (n_layers < 1) throw ConfigError("n_layers must be >= 1");
    if (ff_dim < 1) throw ConfigError("ff_dim must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0,1)");
    if (emg_mask_ratio < 0.0 || emg_mask_ratio > 1.0 || label_mask_ratio < 0.0 ||
        label_mask_ratio > 1.0)
        throw ConfigError("mask ratios must be in [0,1]");
}

void NormStats::apply(Tensor& emg) const {
    const int64_t c = emg.cols();
    if (static_cast<int64_t>(mean.size()) != c || static_cast<int64_t>(std.size()) != c)
        throw ShapeError("normalization stats cover " + std::to_string(mean.size()) +
                         " channels, window has " + std::to_string(c));
    for (int64_t i = 0; i < emg.rows(); ++i)
        for (int64_t j = 0; j < c; ++j) {
            float& v = emg.at(i, j);
            v = (v - mean[static_cast<size_t>(j)]) / std[static_cast<size_t>(j)];
        }
}

NormStats identity_norm(int channels) {
    NormStats n;
    n.mean.assign(static_cast<size_t>(channels), 0.0f);
    n.std.assign(static_cast<size_t>(channels), 1.0f);
    return n;
}

std::vector<std::pair<std::string, std::vector<int64_t>>> param_schema(const ModelConfig& cfg) {
    cfg.validate();
    const int64_t d = cfg.d_model, f = cfg.ff_dim, pd = cfg.patch_dim();
    std::vector<std::pair<std::string, std::vector<int64_t>>> s;
    s.emplace_back("emg_patch_embed", std::vector<int64_t>{pd, d});
    s.emplace_back("label_embed", std::vector<int64_t>{cfg.num_classes + 1, d});
    s.emplace_back("positional_embed", std::vector<int64_t>{cfg.num_patches(), d});
    for (int l = 0; l < cfg.n_layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        for (const char* w : {"Wq", "Wk", "Wv", "Wo"})
            s.emplace_back(p + w, std::vector<int64_t>{d, d});
        s.emplace_back(p + "ff1", std::vector<int64_t>{d, f});
        s.emplace_back(p + "ff1_b", std::vector<int64_t>{f});
        s.emplace_back(p + "ff2", std::vector<int64_t>{f, d});
        s.emplace_back(p + "ff2_b", std::vector<int64_t>{d});
        for (const char* n : {"ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias"})
            s.emplace_back(p + n, std::vector<int64_t>{d});
    }
    s.emplace_back("head_intent", std::vector<int64_t>{d, cfg.num_classes});
    s.emplace_back("head_intent_b", std::vector<int64_t>{cfg.num_classes});
    s.emplace_back("head_recon", std::vector<int64_t>{d, pd});
    s.emplace_back("head_recon_b", std::vector<int64_t>{pd});
    std::sort(s.begin(), s.end());
    return s;
}

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

} // namespace

NamedTensors init_params(const ModelConfig& cfg, uint64_t seed) {
    NamedTensors params;
    for (const auto& [name, shape] : param_schema(cfg)) {
        Tensor t(shape);
        if (ends_with(name, "_gain")) {
            std::fill(t.data.begin(), t.data.end(), 1.0f);
        } else if (ends_with(name, "_b") || ends_with(name, "_bias")) {
            // zeros
        } else {
            std::mt19937_64 rng(nn::mix_seed(seed, name));
            const bool lookup = name == "label_embed" || name == "positional_embed";
            const double stddev =
                lookup ? 0.02 : 1.0 / std::sqrt(static_cast<double>(shape[0]));
            nn::fill_normal(t, rng, stddev);
        }
        params.emplace(name, std::move(t));
    }
    return params;
}

Model make_model(const ModelConfig& cfg, uint64_t seed, NormStats norm) {
    cfg.validate();
    if (static_cast<int>(norm.mean.size()) != cfg.channels ||
        static_cast<int>(norm.std.size()) != cfg.channels)
        throw ConfigError("normalization stats do not match channel count");
    return Model{cfg, init_params(cfg, seed), std::move(norm)};
}

std::vector<int> patch_labels(const std::vector<int>& labels, int patch_len, int num_classes) {
    if (patch_len < 1 || labels.size() % static_cast<size_t>(patch_len) != 0)
        throw ShapeError("label stream length not a multiple of patch_len");
    const size_t n_patches = labels.size() / static_cast<size_t>(patch_len);
    std::vector<int> out(n_patches);
    std::vector<int> counts(static_cast<size_t>(num_classes));
    for (size_t p = 0; p < n_patches; ++p) {
        std::fill(counts.begin(), counts.end(), 0);
        for (int s = 0; s < patch_len; ++s) {
            const int lab = labels[p * static_cast<size_t>(patch_len) + static_cast<size_t>(s)];
            if (lab < 0 || lab >= num_classes)
                throw LabelError("label " + std::to_string(lab) + " outside [0," +
                                 std::to_string(num_classes) + ")");
            ++counts[static_cast<size_t>(lab)];
        }
        int best = 0;
        for (int k = 1; k < num_classes; ++k)
            if (counts[static_cast<size_t>(k)] > counts[static_cast<size_t>(best)]) best = k;
        out[p] = best; // lower class wins ties by scan order
    }
    return out;
}

Tape::NodeId ParamLeaves::at(const std::string& name) const {
    for (const auto& [n, id] : ids)
        if (n == name) return id;
    throw ConfigError("unknown parameter '" + name + "'");
}

ParamLeaves make_leaves(Tape& tape, const NamedTensors& params,
                        const std::function<bool(const std::string&)>& trainable) {
    ParamLeaves leaves;
    for (const auto& [name, t] : params)
        leaves.ids.emplace_back(name, tape.leaf(t, trainable(name), name));
    return leaves;
}

ParamLeaves make_leaves_frozen(Tape& tape, const NamedTensors& params) {
    return make_leaves(tape, params, [](const std::string&) { return false; });
}

namespace {

void check_window(const ModelConfig& cfg, const Window& win) {
    if (win.emg.rank() != 2 || win.emg.rows() != cfg.window_len ||
        win.emg.cols() != cfg.channels)
        throw ShapeError("window EMG shape " + win.emg.shape_str() + ", expected [" +
                         std::to_string(cfg.window_len) + "x" + std::to_string(cfg.channels) +
                         "]");
    if (static_cast<int>(win.labels.size()) != cfg.window_len)
        throw ShapeError("window labels length " + std::to_string(win.labels.size()) +
                         ", expected " + std::to_string(cfg.window_len));
    const size_t tp = static_cast<size_t>(cfg.num_patches());
    if (win.emg_mask.size() != tp || win.label_mask.size() != tp)
        throw ShapeError("window masks must have one entry per patch");
}

// Flatten window samples into per-patch rows (sample-major within a patch).
Tensor make_patches(const ModelConfig& cfg, const Tensor& emg, const std::vector<uint8_t>* zero_mask) {
    const int tp = cfg.num_patches(), pl = cfg.patch_len, c = cfg.channels;
    Tensor patches({tp, cfg.patch_dim()});
    for (int p = 0; p < tp; ++p) {
        if (zero_mask && (*zero_mask)[static_cast<size_t>(p)]) continue;
        for (int s = 0; s < pl; ++s)
            for (int j = 0; j < c; ++j)
                patches.at(p, s * c + j) = emg.at(static_cast<int64_t>(p) * pl + s, j);
    }
    return patches;
}

Tensor dropout_mask(const std::vector<int64_t>& shape, double p, std::mt19937_64& rng) {
    Tensor mask(shape);
    const float keep = static_cast<float>(1.0 / (1.0 - p));
    for (float& v : mask.data) {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        v = (u < p) ? 0.0f : keep;
    }
    return mask;
}

} // namespace

ForwardNodes forward_window_impl(Tape& tape, const ParamLeaves& leaves, const ModelConfig& cfg,
                                 const Window& win, std::mt19937_64* dropout_rng,
                                 bool want_recon) {
    check_window(cfg, win);
    const int tp = cfg.num_patches();

    // Token assembly: EMG patch projection + label embedding + positions.
    Tensor patches = make_patches(cfg, win.emg, &win.emg_mask);
    std::vector<int> ids = patch_labels(win.labels, cfg.patch_len, cfg.num_classes);
    for (int p = 0; p < tp; ++p)
        if (win.label_mask[static_cast<size_t>(p)]) ids[static_cast<size_t>(p)] = cfg.label_mask_token();

    auto x = tape.add(
        tape.add(tape.matmul(tape.leaf(std::move(patches), false, "patches"),
                             leaves.at("emg_patch_embed"), "patch_proj"),
                 tape.embed_rows(leaves.at("label_embed"), ids, "label_embed"), "tok_sum"),
        leaves.at("positional_embed"), "tok_pos");
    const bool drop = dropout_rng != nullptr && cfg.dropout > 0.0;
    if (drop)
        x = tape.hadamard_const(x, dropout_mask({tp, cfg.d_model}, cfg.dropout, *dropout_rng),
                                "tok_dropout");

    const int dh = cfg.d_model / cfg.n_heads;
    for (int l = 0; l < cfg.n_layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        // Pre-norm attention block.
        auto h1 = tape.layer_norm(x, leaves.at(p + "ln1_gain"), leaves.at(p + "ln1_bias"),
                                  1e-5, p + "ln1");
        auto q = tape.matmul(h1, leaves.at(p + "Wq"), p + "q");
        auto k = tape.matmul(h1, leaves.at(p + "Wk"), p + "k");
        auto v = tape.matmul(h1, leaves.at(p + "Wv"), p + "v");
        std::vector<Tape::NodeId> heads;
        for (int h = 0; h < cfg.n_heads; ++h) {
            const std::string ht = p + "attn_h" + std::to_string(h);
            heads.push_back(tape.attention(tape.slice_cols(q, h * dh, dh),
                                           tape.slice_cols(k, h * dh, dh),
                                           tape.slice_cols(v, h * dh, dh), std::nullopt, ht));
        }
        auto att = tape.matmul(tape.concat_cols(heads, p + "attn_cat"), leaves.at(p + "Wo"),
                               p + "attn_out");
        if (drop)
            att = tape.hadamard_const(
                att, dropout_mask({tp, cfg.d_model}, cfg.dropout, *dropout_rng), p + "attn_drop");
        x = tape.add(x, att, p + "res1");

        // Pre-norm feedforward block.
        auto h2 = tape.layer_norm(x, leaves.at(p + "ln2_gain"), leaves.at(p + "ln2_bias"),
                                  1e-5, p + "ln2");
        auto ff = tape.add_bias(
            tape.matmul(tape.gelu(tape.add_bias(tape.matmul(h2, leaves.at(p + "ff1"), p + "ff1"),
                                                leaves.at(p + "ff1_b"), p + "ff1_bias"),
                                  p + "gelu"),
                        leaves.at(p + "ff2"), p + "ff2"),
            leaves.at(p + "ff2_b"), p + "ff2_bias");
        if (drop)
            ff = tape.hadamard_const(
                ff, dropout_mask({tp, cfg.d_model}, cfg.dropout, *dropout_rng), p + "ff_drop");
        x = tape.add(x, ff, p + "res2");
    }

    ForwardNodes out;
    out.logits = tape.add_bias(tape.matmul(x, leaves.at("head_intent"), "head_intent"),
                               leaves.at("head_intent_b"), "head_intent_bias");
    out.recon = want_recon
                    ? tape.add_bias(tape.matmul(x, leaves.at("head_recon"), "head_recon"),
                                    leaves.at("head_recon_b"), "head_recon_bias")
                    : -1;
    return out;
}

ForwardNodes forward_window(Tape& tape, const ParamLeaves& leaves, const ModelConfig& cfg,
                            const Window& win, std::mt19937_64* dropout_rng) {
    return forward_window_impl(tape, leaves, cfg, win, dropout_rng, true);
}

ForwardResult forward(const Model& model, const WindowBatch& batch) {
    ForwardResult res;
    for (const Window& win : batch) {
        Tape tape;
        ParamLeaves leaves = make_leaves_frozen(tape, model.params);
        ForwardNodes nodes = forward_window(tape, leaves, model.config, win, nullptr);
        res.logits.push_back(tape.value(nodes.logits));
        res.recon.push_back(tape.value(nodes.recon));
    }
    return res;
}

WindowLossCounts count_window_targets(const ModelConfig& cfg, const Window& win) {
    check_window(cfg, win);
    WindowLossCounts c;
    for (uint8_t m : win.label_mask) c.label_rows += m ? 1 : 0;
    int64_t emg_patches = 0;
    for (uint8_t m : win.emg_mask) emg_patches += m ? 1 : 0;
    c.emg_elems = emg_patches * cfg.patch_dim();
    return c;
}

namespace {

// Shared by pretrain_loss and window_loss: CE over label-masked patches plus
// squared error over EMG-masked patches, as weighted sums on the tape.
Tape::NodeId masked_objective(Tape& tape, const ParamLeaves& leaves, const ModelConfig& cfg,
                              const Window& win, double label_weight, double emg_weight,
                              std::mt19937_64* dropout_rng) {
    ForwardNodes nodes =
        forward_window_impl(tape, leaves, cfg, win, dropout_rng, emg_weight != 0.0);
    const int tp = cfg.num_patches();

    std::vector<int> targets = patch_labels(win.labels, cfg.patch_len, cfg.num_classes);
    bool any_label = false;
    for (int p = 0; p < tp; ++p) {
        if (win.label_mask[static_cast<size_t>(p)])
            any_label = true;
        else
            targets[static_cast<size_t>(p)] = -1;
    }

    std::optional<Tape::NodeId> total;
    if (any_label && label_weight != 0.0) {
        auto ce = tape.cross_entropy_sum(nodes.logits, targets, -1, nullptr, "masked_ce");
        total = tape.scale(ce, label_weight, "ce_weight");
    }
    bool any_emg = false;
    for (uint8_t m : win.emg_mask) any_emg |= m != 0;
    if (any_emg && emg_weight != 0.0) {
        Tensor target = make_patches(cfg, win.emg, nullptr);
        Tensor include({tp, cfg.patch_dim()});
        for (int p = 0; p < tp; ++p)
            if (win.emg_mask[static_cast<size_t>(p)])
                for (int j = 0; j < cfg.patch_dim(); ++j) include.at(p, j) = 1.0f;
        auto se = tape.sq_error_sum(nodes.recon, target, &include, nullptr, "masked_recon");
        auto weighted = tape.scale(se, emg_weight, "recon_weight");
        total = total ? tape.add(*total, weighted, "loss_sum") : weighted;
    }
    if (!total) {
        // No live target in this window: a structurally zero scalar keeps the
        // trainer's pooled-loss algebra uniform.
        auto ce = tape.cross_entropy_sum(nodes.logits, std::vector<int>(tp, -1), -1, nullptr,
                                         "empty_ce");
        total = tape.scale(ce, 0.0, "empty_loss");
    }
    return *total;
}

} // namespace

Tape::NodeId window_loss(Tape& tape, const ParamLeaves& leaves, const ModelConfig& cfg,
                         const Window& win, double label_weight, double emg_weight,
                         std::mt19937_64* dropout_rng) {
    return masked_objective(tape, leaves, cfg, win, label_weight, emg_weight, dropout_rng);
}

double pretrain_loss(const Model& model, const WindowBatch& batch, double lambda_recon) {
    if (batch.empty()) throw ConfigError("pretrain_loss: empty batch");
    int64_t label_rows = 0, emg_elems = 0;
    for (const Window& win : batch) {
        WindowLossCounts c = count_window_targets(model.config, win);
        label_rows += c.label_rows;
        emg_elems += c.emg_elems;
    }
    if (label_rows == 0 && (emg_elems == 0 || lambda_recon == 0.0))
        throw ConfigError("pretrain_loss: no masked patches in either modality");
    const double lw = label_rows > 0 ? 1.0 / static_cast<double>(label_rows) : 0.0;
    const double ew = emg_elems > 0 ? lambda_recon / static_cast<double>(emg_elems) : 0.0;
    double total = 0.0;
    for (const Window& win : batch) {
        Tape tape;
        ParamLeaves leaves = make_leaves_frozen(tape, model.params);
        total += tape.value_f64(window_loss(tape, leaves, model.config, win, lw, ew, nullptr));
    }
    return total;
}

Prediction predict_window(const Model& model, const Tensor& emg_raw) {
    const ModelConfig& cfg = model.config;
    if (emg_raw.rank() != 2 || emg_raw.cols() != cfg.channels)
        throw ShapeError("predict_window: EMG shape " + emg_raw.shape_str() + ", expected [" +
                         std::to_string(cfg.window_len) + "x" + std::to_string(cfg.channels) +
                         "]");
    Window win;
    win.emg = emg_raw;
    model.norm.apply(win.emg);
    win.labels.assign(static_cast<size_t>(cfg.window_len), 0);
    win.emg_mask.assign(static_cast<size_t>(cfg.num_patches()), 0);
    win.label_mask.assign(static_cast<size_t>(cfg.num_patches()), 1);

    Tape tape;
    ParamLeaves leaves = make_leaves_frozen(tape, model.params);
    ForwardNodes nodes = forward_window_impl(tape, leaves, cfg, win, nullptr, false);
    const Tensor& post_patch = tape.value(tape.softmax_rows(nodes.logits, "posterior"));
    const Tensor& logits = tape.value(nodes.logits);

    Prediction pred;
    pred.labels.assign(static_cast<size_t>(cfg.window_len), 0);
    pred.posterior = Tensor({cfg.window_len, cfg.num_classes});
    for (int p = 0; p < cfg.num_patches(); ++p) {
        int best = 0;
        for (int k = 1; k < cfg.num_classes; ++k)
            if (logits.at(p, k) > logits.at(p, best)) best = k; // strict: ties keep lower index
        for (int s = 0; s < cfg.patch_len; ++s) {
            const int64_t t = static_cast<int64_t>(p) * cfg.patch_len + s;
            pred.labels[static_cast<size_t>(t)] = best;
            for (int k = 0; k < cfg.num_classes; ++k)
                pred.posterior.at(t, k) = post_patch.at(p, k);
        }
    }
    return pred;
}

std::vector<int> sliding_predict(const Model& model, const Tensor& samples, int hop) {
    const ModelConfig& cfg = model.config;
    if (hop < 1 || hop > cfg.window_len) throw ConfigError("hop must be in [1, window_len]");
    if (samples.rank() != 2 || samples.cols() != cfg.channels)
        throw ShapeError("sliding_predict: sample shape " + samples.shape_str());
    const int64_t total = samples.rows();
    std::vector<int> preds(static_cast<size_t>(total), 0); // warm-up predicts relax
    Tensor window({cfg.window_len, cfg.channels});
    for (int64_t newest = cfg.window_len - 1; newest < total; newest += hop) {
        const int64_t start = newest - cfg.window_len + 1;
        std::copy_n(&samples.data[static_cast<size_t>(start) * cfg.channels],
                    static_cast<size_t>(cfg.window_len) * cfg.channels, window.data.begin());
        Prediction p = predict_window(model, window);
        const int cls = p.labels.back(); // newest-sample prediction
        const int64_t until = std::min<int64_t>(total, newest + hop);
        for (int64_t t = newest; t < until; ++t) preds[static_cast<size_t>(t)] = cls;
    }
    return preds;
}

Window make_training_window(const ModelConfig& cfg, Tensor emg_normalized,
                            std::vector<int> labels, std::mt19937_64& rng,
                            double all_label_mask_prob) {
    Window win;
    win.emg = std::move(emg_normalized);
    win.labels = std::move(labels);
    const size_t tp = static_cast<size_t>(cfg.num_patches());
    win.emg_mask.assign(tp, 0);
    win.label_mask.assign(tp, 0);
    auto uniform = [&rng] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };

    if (cfg.emg_mask_ratio > 0.0) {
        bool any = false;
        for (size_t p = 0; p < tp; ++p)
            any |= (win.emg_mask[p] = uniform() < cfg.emg_mask_ratio ? 1 : 0) != 0;
        if (!any) win.emg_mask[static_cast<size_t>(rng() % tp)] = 1;
    }
    if (cfg.label_mask_ratio > 0.0) {
        if (uniform() < all_label_mask_prob) {
            std::fill(win.label_mask.begin(), win.label_mask.end(), 1);
        } else {
            bool any = false;
            for (size_t p = 0; p < tp; ++p)
                any |= (win.label_mask[p] = uniform() < cfg.label_mask_ratio ? 1 : 0) != 0;
            if (!any) win.label_mask[static_cast<size_t>(rng() % tp)] = 1;
        }
    }
    check_window(cfg, win);
    return win;
}

} // namespace emg::model
