#pragma once

// Versioned binary model checkpoints: magic "EMGM", u16 format version,
// length-prefixed JSON header (config, normalization stats, tensor manifest),
// raw little-endian f32 tensor section, trailing CRC32 of that section.

#include <cstdint>
#include <string>

#include "emgadapt/model.hpp"

namespace emg::model {

inline constexpr uint16_t kCheckpointVersion = 1;

// CRC32 over the serialized tensor section (manifest order); identifies the
// exact weights, used to bind adapter sidecars to their base checkpoint.
uint32_t params_crc(const NamedTensors& params);

void save_checkpoint(const Model& model, const std::string& path);

// Loads and fully validates a checkpoint. When `expect` is given, the stored
// manifest must match that config's schema (error names the first offending
// tensor).
Model load_checkpoint(const std::string& path, const ModelConfig* expect = nullptr);

} // namespace emg::model
