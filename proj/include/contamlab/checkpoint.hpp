#pragma once

#include <string>

#include "contamlab/model.hpp"
#include "contamlab/optimizer.hpp"

namespace contamlab {

struct TrainingMeta {
    std::string config_fingerprint;
    int64_t step_count = 0;
    std::string manifest_digest;
    // Fingerprints of earlier stages when continuing pretraining.
    std::vector<std::string> fingerprint_chain;
};

// Versioned container: magic "CTLB0001", little-endian u64 length + UTF-8
// JSON metadata (configs, fingerprints, named-tensor directory with offsets),
// then raw little-endian float32 payloads in directory order.
struct ModelCheckpoint {
    ModelConfig config;
    ModelParams<float> params;
    bool has_optimizer_state = false;
    OptimizerState<float> optimizer_state;
    TrainingMeta meta;

    void save(const std::string& path) const;
    static ModelCheckpoint load(const std::string& path);
};

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& json_text);

}  // namespace contamlab
