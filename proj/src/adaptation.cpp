#include "emgadapt/adaptation.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "emgadapt/checkpoint.hpp"
#include "emgadapt/errors.hpp"
#include "emgadapt/io_util.hpp"

namespace emg::adapt {

using model::Model;
using model::ModelConfig;
using model::ParamLeaves;
using nlohmann::json;
using nn::NamedTensors;
using nn::Tape;
using nn::Tensor;

Variant parse_variant(const std::string& name) {
    std::string n = name;
    std::replace(n.begin(), n.end(), '-', '_');
    if (n == "zero_shot") return Variant::zero_shot;
    if (n == "scratch") return Variant::scratch;
    if (n == "head_only") return Variant::head_only;
    if (n == "lora") return Variant::lora;
    if (n == "full") return Variant::full;
    throw ConfigError("unknown variant '" + name +
                      "' (valid: zero_shot, scratch, head_only, lora, full)");
}

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::zero_shot: return "zero_shot";
        case Variant::scratch: return "scratch";
        case Variant::head_only: return "head_only";
        case Variant::lora: return "lora";
        case Variant::full: return "full";
    }
    return "?";
}

namespace {

// Linear weight matrices: rank-2 tensors that act as maps on activations.
// The label/positional tables are lookups, not linear layers, and stay out.
bool is_linear_weight(const std::string& name, const Tensor& t) {
    return t.rank() == 2 && name != "label_embed" && name != "positional_embed";
}

std::string adapter_a_name(const std::string& base) { return "lora." + base + ".A"; }
std::string adapter_b_name(const std::string& base) { return "lora." + base + ".B"; }

} // namespace

std::vector<std::string> resolve_lora_targets(
    const NamedTensors& params, const std::vector<std::string>& patterns) {
    std::vector<std::string> candidates;
    for (const auto& [name, t] : params)
        if (is_linear_weight(name, t)) candidates.push_back(name);
    if (patterns.empty()) return candidates; // map order: already sorted
    std::set<std::string> selected;
    for (const std::string& pat : patterns) {
        bool hit = false;
        for (const std::string& name : candidates)
            if (name.find(pat) != std::string::npos) {
                selected.insert(name);
                hit = true;
            }
        if (!hit)
            throw ConfigError("lora target pattern '" + pat +
                              "' matches no linear weight");
    }
    return {selected.begin(), selected.end()};
}

int64_t LoraState::param_count() const {
    int64_t total = 0;
    for (const LoraPair& p : pairs) {
        const Tensor& a = adapters.at(adapter_a_name(p.base_name));
        const Tensor& b = adapters.at(adapter_b_name(p.base_name));
        total += a.numel() + b.numel();
    }
    return total;
}

LoraState init_lora(const NamedTensors& params, int rank, double alpha,
                    const std::vector<std::string>& patterns, uint64_t seed) {
    if (rank < 1) throw ConfigError("lora rank must be >= 1");
    LoraState st;
    st.rank = rank;
    st.alpha = alpha;
    st.base_crc = model::params_crc(params);
    for (const std::string& name : resolve_lora_targets(params, patterns)) {
        const Tensor& base = params.at(name);
        const int64_t in = base.rows(), out = base.cols();
        // The requested rank is clamped per target: a rank above min(in, out)
        // adds parameters without adding expressive power, and the default
        // targets include the [d_model x K] intent head whose min dimension
        // is below the default rank.
        const int r_eff = static_cast<int>(std::min<int64_t>(rank, std::min(in, out)));
        Tensor a({r_eff, in});
        std::mt19937_64 rng(nn::mix_seed(seed, "lora/" + name + "/A"));
        nn::fill_normal(a, rng, 1.0 / std::sqrt(static_cast<double>(r_eff)));
        Tensor b({out, r_eff}); // zeros: W_eff starts exactly at the base
        st.pairs.push_back({name, r_eff});
        st.adapters.emplace(adapter_a_name(name), std::move(a));
        st.adapters.emplace(adapter_b_name(name), std::move(b));
    }
    return st;
}

Tensor lora_effective_weight(const Tensor& base, const Tensor& A, const Tensor& B,
                             double alpha, int rank) {
    if (base.rank() != 2 || A.rank() != 2 || B.rank() != 2)
        throw ShapeError("lora_effective_weight: all tensors must be 2-D");
    const int64_t in = base.rows(), out = base.cols();
    if (A.rows() != rank || A.cols() != in || B.rows() != out || B.cols() != rank)
        throw ShapeError("lora_effective_weight: base " + base.shape_str() +
                         " expects A [" + std::to_string(rank) + "x" +
                         std::to_string(in) + "] and B [" + std::to_string(out) +
                         "x" + std::to_string(rank) + "], got A " + A.shape_str() +
                         " and B " + B.shape_str());
    if (rank < 1) throw ConfigError("lora_effective_weight: rank must be >= 1");

    // Mirrors the graph path exactly — f64-accumulated (B·A) rounded to f32,
    // then the f32 scale and add — so merged weights match the spliced
    // effective-weight nodes bitwise.
    const double scale = alpha / static_cast<double>(rank);
    Tensor w = base;
    for (int64_t o = 0; o < out; ++o)
        for (int64_t i = 0; i < in; ++i) {
            double acc = 0.0;
            for (int64_t k = 0; k < rank; ++k)
                acc += static_cast<double>(B.at(o, k)) * static_cast<double>(A.at(k, i));
            const float prod = static_cast<float>(acc);
            const float delta = static_cast<float>(scale * prod);
            w.at(i, o) = base.at(i, o) + delta;
        }
    return w;
}

NamedTensors merge_lora(const NamedTensors& params, const LoraState& lora) {
    NamedTensors merged = params;
    for (const LoraPair& p : lora.pairs) {
        auto base_it = merged.find(p.base_name);
        if (base_it == merged.end())
            throw ConfigError("merge_lora: adapter targets missing tensor '" +
                              p.base_name + "'");
        auto a_it = lora.adapters.find(adapter_a_name(p.base_name));
        auto b_it = lora.adapters.find(adapter_b_name(p.base_name));
        if (a_it == lora.adapters.end() || b_it == lora.adapters.end())
            throw ConfigError("merge_lora: adapter tensors missing for '" +
                              p.base_name + "'");
        base_it->second = lora_effective_weight(base_it->second, a_it->second,
                                                b_it->second, lora.alpha, p.rank);
    }
    return merged;
}

ParamLeaves make_lora_leaves(Tape& tape, const NamedTensors& params,
                             const LoraState& lora,
                             train::GradLeaves* adapter_leaves) {
    ParamLeaves leaves = model::make_leaves_frozen(tape, params);
    const bool trainable = adapter_leaves != nullptr;
    for (const LoraPair& p : lora.pairs) {
        const std::string an = adapter_a_name(p.base_name);
        const std::string bn = adapter_b_name(p.base_name);
        auto a_it = lora.adapters.find(an);
        auto b_it = lora.adapters.find(bn);
        if (a_it == lora.adapters.end() || b_it == lora.adapters.end())
            throw ConfigError("lora adapters missing tensors for '" + p.base_name +
                              "'");
        const Tape::NodeId a_id = tape.leaf(a_it->second, trainable, an);
        const Tape::NodeId b_id = tape.leaf(b_it->second, trainable, bn);
        if (adapter_leaves) {
            adapter_leaves->emplace_back(an, a_id);
            adapter_leaves->emplace_back(bn, b_id);
        }
        const Tape::NodeId delta = tape.transpose(
            tape.matmul(b_id, a_id, "lora." + p.base_name + ".BA"),
            "lora." + p.base_name + ".dT");
        const Tape::NodeId eff = tape.add(
            model::ParamLeaves{leaves}.at(p.base_name),
            tape.scale(delta, lora.alpha / static_cast<double>(p.rank),
                       "lora." + p.base_name + ".scale"),
            "lora." + p.base_name + ".eff");
        bool replaced = false;
        for (auto& [name, id] : leaves.ids)
            if (name == p.base_name) {
                id = eff;
                replaced = true;
                break;
            }
        if (!replaced)
            throw ConfigError("lora target '" + p.base_name +
                              "' absent from base parameters");
    }
    return leaves;
}

std::function<bool(const std::string&)> VariantBuild::mask() const {
    std::map<std::string, bool> copy = trainable;
    return [copy = std::move(copy)](const std::string& name) {
        auto it = copy.find(name);
        return it != copy.end() && it->second;
    };
}

Model VariantBuild::effective_model() const {
    if (!lora) return model;
    Model m;
    m.config = model.config;
    m.norm = model.norm;
    m.params = merge_lora(model.params, *lora);
    return m;
}

VariantBuild build_variant(const AdaptationSpec& spec, const ModelConfig& cfg,
                           const model::NormStats* scratch_norm) {
    VariantBuild vb;
    vb.variant = spec.variant;
    if (spec.variant == Variant::scratch) {
        vb.model = model::make_model(
            cfg, spec.seed,
            scratch_norm ? *scratch_norm : model::identity_norm(cfg.channels));
    } else {
        if (spec.init_checkpoint.empty())
            throw ConfigError("variant '" + variant_name(spec.variant) +
                              "' requires an init checkpoint");
        vb.model = model::load_checkpoint(spec.init_checkpoint, &cfg);
    }

    const bool all_trainable =
        spec.variant == Variant::scratch || spec.variant == Variant::full;
    for (const auto& [name, t] : vb.model.params) {
        (void)t;
        bool on = all_trainable;
        if (spec.variant == Variant::head_only)
            on = name == "head_intent" || name == "head_intent_b";
        vb.trainable[name] = on;
    }
    if (spec.variant == Variant::lora) {
        vb.lora = init_lora(vb.model.params, spec.lora_rank, spec.lora_alpha,
                            spec.lora_targets, spec.seed);
        for (const auto& [name, t] : vb.lora->adapters) {
            (void)t;
            vb.trainable[name] = true;
        }
    }
    return vb;
}

train::TrainResult finetune(VariantBuild& vb,
                            const std::vector<train::WindowSlice>& windows,
                            const train::TrainConfig& tc,
                            const train::EpochCallback& on_epoch) {
    if (vb.variant == Variant::zero_shot)
        throw UnsupportedError(
            "zero_shot has no trainable parameters; evaluate the checkpoint "
            "directly instead of fine-tuning");
    if (vb.variant == Variant::lora) {
        const Model* m = &vb.model;
        const LoraState* lora = &*vb.lora;
        train::WindowGraph graph =
            [m, lora](Tape& tape, const model::Window& win, double label_weight,
                      double emg_weight, std::mt19937_64* dropout_rng,
                      train::GradLeaves& out) -> Tape::NodeId {
            ParamLeaves leaves = make_lora_leaves(tape, m->params, *lora, &out);
            return model::window_loss(tape, leaves, m->config, win, label_weight,
                                      emg_weight, dropout_rng);
        };
        return train::fit(vb.model.config, vb.lora->adapters, graph, windows, tc,
                          on_epoch);
    }
    return train::fit(vb.model.config, vb.model.params,
                      train::model_objective(vb.model, vb.mask()), windows, tc,
                      on_epoch);
}

// ------------------------------------------------------------- EMGA sidecar

namespace {

constexpr char kAdapterMagic[4] = {'E', 'M', 'G', 'A'};

std::string adapter_section(const LoraState& lora) {
    std::ostringstream os;
    for (const auto& [name, t] : lora.adapters)
        io::write_bytes(os, t.data.data(), t.data.size() * sizeof(float));
    return os.str();
}

} // namespace

void save_adapters(const LoraState& lora, const std::string& path) {
    json targets = json::array();
    for (const LoraPair& p : lora.pairs)
        targets.push_back({{"base", p.base_name}, {"rank", p.rank}});
    json manifest = json::array();
    uint64_t offset = 0;
    for (const auto& [name, t] : lora.adapters) {
        manifest.push_back({{"name", name}, {"shape", t.shape}, {"offset", offset}});
        offset += t.data.size() * sizeof(float);
    }
    json header{{"base_crc", lora.base_crc},
                {"rank", lora.rank},
                {"alpha", lora.alpha},
                {"targets", targets},
                {"tensors", manifest}};
    const std::string header_str = header.dump();
    const std::string section = adapter_section(lora);

    std::ostringstream os;
    io::write_bytes(os, kAdapterMagic, 4);
    io::write_u16(os, kAdapterVersion);
    io::write_u32(os, static_cast<uint32_t>(header_str.size()));
    io::write_bytes(os, header_str.data(), header_str.size());
    io::write_bytes(os, section.data(), section.size());
    io::write_u32(os, io::crc32(section.data(), section.size()));
    io::write_file(path, os.str());
}

LoraState load_adapters(const std::string& path, const NamedTensors& base) {
    std::istringstream is(io::read_file(path));
    char magic[4];
    io::read_bytes(is, magic, 4, "adapter magic");
    if (std::memcmp(magic, kAdapterMagic, 4) != 0)
        throw FormatError(path + ": not an EMGA adapter sidecar");
    const uint16_t version = io::read_u16(is);
    if (version != kAdapterVersion)
        throw FormatError(path + ": unsupported adapter version " +
                          std::to_string(version));
    const uint32_t header_len = io::read_u32(is);
    std::string header_str(header_len, '\0');
    io::read_bytes(is, header_str.data(), header_len, "adapter header");

    json header;
    try {
        header = json::parse(header_str);
    } catch (const json::exception& e) {
        throw FormatError(path + ": malformed adapter header: " + e.what());
    }

    LoraState st;
    try {
        st.base_crc = header.at("base_crc").get<uint32_t>();
        st.rank = header.at("rank").get<int>();
        st.alpha = header.at("alpha").get<double>();
        for (const json& t : header.at("targets"))
            st.pairs.push_back(
                {t.at("base").get<std::string>(), t.at("rank").get<int>()});
    } catch (const json::exception& e) {
        throw FormatError(path + ": adapter header: " + e.what());
    }

    const uint32_t actual_crc = model::params_crc(base);
    if (actual_crc != st.base_crc)
        throw ConfigError(path + ": adapter sidecar was built for a base "
                          "checkpoint with CRC " + std::to_string(st.base_crc) +
                          ", but the supplied base has CRC " +
                          std::to_string(actual_crc));

    std::string section;
    {
        std::ostringstream raw;
        raw << is.rdbuf();
        section = raw.str();
    }
    if (section.size() < 4) throw FormatError(path + ": truncated adapter file");
    const std::string body = section.substr(0, section.size() - 4);
    uint32_t stored_crc;
    std::memcpy(&stored_crc, section.data() + body.size(), 4);
    if (io::crc32(body.data(), body.size()) != stored_crc)
        throw FormatError(path + ": adapter data checksum mismatch");

    try {
        uint64_t offset = 0;
        for (const json& entry : header.at("tensors")) {
            const std::string name = entry.at("name").get<std::string>();
            const std::vector<int64_t> shape =
                entry.at("shape").get<std::vector<int64_t>>();
            if (entry.at("offset").get<uint64_t>() != offset)
                throw FormatError(path + ": tensor '" + name +
                                  "': bad section offset");
            Tensor t(shape);
            const size_t bytes = t.data.size() * sizeof(float);
            if (offset + bytes > body.size())
                throw FormatError(path + ": tensor '" + name +
                                  "': section truncated");
            std::memcpy(t.data.data(), body.data() + offset, bytes);
            if (!t.all_finite())
                throw FormatError(path + ": tensor '" + name +
                                  "': non-finite values");
            st.adapters.emplace(name, std::move(t));
            offset += bytes;
        }
        if (offset != body.size())
            throw FormatError(path + ": trailing bytes after adapter section");
    } catch (const json::exception& e) {
        throw FormatError(path + ": adapter manifest: " + e.what());
    }

    // Shape consistency against the base and the declared targets.
    for (const LoraPair& p : st.pairs) {
        auto base_it = base.find(p.base_name);
        if (base_it == base.end())
            throw ConfigError(path + ": adapter targets missing tensor '" +
                              p.base_name + "'");
        auto a_it = st.adapters.find(adapter_a_name(p.base_name));
        auto b_it = st.adapters.find(adapter_b_name(p.base_name));
        if (a_it == st.adapters.end() || b_it == st.adapters.end())
            throw FormatError(path + ": adapter tensors missing for '" +
                              p.base_name + "'");
        const Tensor& w = base_it->second;
        if (a_it->second.rows() != p.rank || a_it->second.cols() != w.rows() ||
            b_it->second.rows() != w.cols() || b_it->second.cols() != p.rank)
            throw FormatError(path + ": adapter shapes for '" + p.base_name +
                              "' do not match the base weight " + w.shape_str());
    }
    return st;
}

} // namespace emg::adapt
