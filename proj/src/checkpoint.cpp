#include "emgadapt/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

#include "emgadapt/errors.hpp"
#include "emgadapt/io_util.hpp"

namespace emg::model {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'E', 'M', 'G', 'M'};

std::string tensor_section(const NamedTensors& params) {
    std::ostringstream os;
    for (const auto& [name, t] : params) // std::map: manifest order == name order
        io::write_bytes(os, t.data.data(), t.data.size() * sizeof(float));
    return os.str();
}

json config_to_json(const ModelConfig& c) {
    return json{{"channels", c.channels},
                {"window_len", c.window_len},
                {"num_classes", c.num_classes},
                {"patch_len", c.patch_len},
                {"d_model", c.d_model},
                {"n_layers", c.n_layers},
                {"n_heads", c.n_heads},
                {"ff_dim", c.ff_dim},
                {"dropout", c.dropout},
                {"emg_mask_ratio", c.emg_mask_ratio},
                {"label_mask_ratio", c.label_mask_ratio}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    try {
        c.channels = j.at("channels").get<int>();
        c.window_len = j.at("window_len").get<int>();
        c.num_classes = j.at("num_classes").get<int>();
        c.patch_len = j.at("patch_len").get<int>();
        c.d_model = j.at("d_model").get<int>();
        c.n_layers = j.at("n_layers").get<int>();
        c.n_heads = j.at("n_heads").get<int>();
        c.ff_dim = j.at("ff_dim").get<int>();
        c.dropout = j.at("dropout").get<double>();
        c.emg_mask_ratio = j.at("emg_mask_ratio").get<double>();
        c.label_mask_ratio = j.at("label_mask_ratio").get<double>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("checkpoint header config: ") + e.what());
    }
    return c;
}

} // namespace

uint32_t params_crc(const NamedTensors& params) {
    const std::string section = tensor_section(params);
    return io::crc32(section.data(), section.size());
}

void save_checkpoint(const Model& model, const std::string& path) {
    model.config.validate();
    json manifest = json::array();
    uint64_t offset = 0;
    for (const auto& [name, t] : model.params) {
        manifest.push_back({{"name", name}, {"shape", t.shape}, {"offset", offset}});
        offset += t.data.size() * sizeof(float);
    }
    json header{{"config", config_to_json(model.config)},
                {"norm", {{"mean", model.norm.mean}, {"std", model.norm.std}}},
                {"tensors", manifest}};
    const std::string header_str = header.dump();
    const std::string section = tensor_section(model.params);

    std::ostringstream os;
    io::write_bytes(os, kMagic, 4);
    io::write_u16(os, kCheckpointVersion);
    io::write_u32(os, static_cast<uint32_t>(header_str.size()));
    io::write_bytes(os, header_str.data(), header_str.size());
    io::write_bytes(os, section.data(), section.size());
    io::write_u32(os, io::crc32(section.data(), section.size()));
    io::write_file(path, os.str());
}

Model load_checkpoint(const std::string& path, const ModelConfig* expect) {
    std::istringstream is(io::read_file(path));
    char magic[4];
    io::read_bytes(is, magic, 4, "checkpoint magic");
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError(path + ": not an EMGM checkpoint");
    const uint16_t version = io::read_u16(is);
    if (version != kCheckpointVersion)
        throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
    const uint32_t header_len = io::read_u32(is);
    std::string header_str(header_len, '\0');
    io::read_bytes(is, header_str.data(), header_len, "checkpoint header");

    json header;
    try {
        header = json::parse(header_str);
    } catch (const json::exception& e) {
        throw FormatError(path + ": malformed checkpoint header: " + e.what());
    }

    Model model;
    try {
        model.config = config_from_json(header.at("config"));
        model.config.validate();
        model.norm.mean = header.at("norm").at("mean").get<std::vector<float>>();
        model.norm.std = header.at("norm").at("std").get<std::vector<float>>();
    } catch (const json::exception& e) {
        throw FormatError(path + ": checkpoint header: " + e.what());
    }
    if (static_cast<int>(model.norm.mean.size()) != model.config.channels ||
        static_cast<int>(model.norm.std.size()) != model.config.channels)
        throw FormatError(path + ": norm stats do not match channel count");

    // The manifest must match the schema of the governing config exactly.
    const ModelConfig& governing = expect ? *expect : model.config;
    auto schema = param_schema(governing);
    uint64_t offset = 0;
    std::string section;
    {
        std::ostringstream raw;
        raw << is.rdbuf();
        section = raw.str();
    }
    if (section.size() < 4) throw FormatError(path + ": truncated checkpoint");
    const std::string body = section.substr(0, section.size() - 4);
    uint32_t stored_crc;
    std::memcpy(&stored_crc, section.data() + body.size(), 4);
    if (io::crc32(body.data(), body.size()) != stored_crc)
        throw FormatError(path + ": tensor section checksum mismatch");

    try {
        const json& tensors = header.at("tensors");
        if (tensors.size() != schema.size())
            throw FormatError(path + ": manifest lists " + std::to_string(tensors.size()) +
                              " tensors, expected " + std::to_string(schema.size()));
        for (size_t i = 0; i < schema.size(); ++i) {
            const auto& [name, shape] = schema[i];
            const json& entry = tensors.at(i);
            if (entry.at("name").get<std::string>() != name ||
                entry.at("shape").get<std::vector<int64_t>>() != shape)
                throw FormatError(path + ": tensor '" + name + "': manifest mismatch (found '" +
                                  entry.at("name").get<std::string>() + "' shaped " +
                                  entry.at("shape").dump() + ", expected " +
                                  json(shape).dump() + ")");
            if (entry.at("offset").get<uint64_t>() != offset)
                throw FormatError(path + ": tensor '" + name + "': bad section offset");
            Tensor t(shape);
            const size_t bytes = t.data.size() * sizeof(float);
            if (offset + bytes > body.size())
                throw FormatError(path + ": tensor '" + name + "': section truncated");
            std::memcpy(t.data.data(), body.data() + offset, bytes);
            if (!t.all_finite())
                throw FormatError(path + ": tensor '" + name + "': non-finite values");
            model.params.emplace(name, std::move(t));
            offset += bytes;
        }
    } catch (const json::exception& e) {
        throw FormatError(path + ": checkpoint manifest: " + e.what());
    }
    if (offset != body.size())
        throw FormatError(path + ": " + std::to_string(body.size() - offset) +
                          " trailing bytes after tensor section");
    return model;
}

} // namespace emg::model
