#include "contamlab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>

namespace contamlab {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'C', 'T', 'L', 'B', '0', '0', '0', '1'};

json config_to_obj(const ModelConfig& c) {
    return json{{"num_layers", c.num_layers},
                {"hidden_dim", c.hidden_dim},
                {"num_heads", c.num_heads},
                {"ffn_dim", c.ffn_dim},
                {"vocab_size", c.vocab_size},
                {"max_seq_len", c.max_seq_len},
                {"tie_mlm_to_embeddings", c.tie_mlm_to_embeddings},
                {"dropout_rate", c.dropout_rate},
                {"layer_norm_eps", c.layer_norm_eps}};
}

ModelConfig config_from_obj(const json& j) {
    ModelConfig c;
    c.num_layers = j.at("num_layers").get<int64_t>();
    c.hidden_dim = j.at("hidden_dim").get<int64_t>();
    c.num_heads = j.at("num_heads").get<int64_t>();
    c.ffn_dim = j.at("ffn_dim").get<int64_t>();
    c.vocab_size = j.at("vocab_size").get<int64_t>();
    c.max_seq_len = j.at("max_seq_len").get<int64_t>();
    c.tie_mlm_to_embeddings = j.at("tie_mlm_to_embeddings").get<bool>();
    c.dropout_rate = j.at("dropout_rate").get<double>();
    c.layer_norm_eps = j.at("layer_norm_eps").get<double>();
    return c;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& cfg) { return config_to_obj(cfg).dump(); }

ModelConfig model_config_from_json(const std::string& json_text) {
    return config_from_obj(json::parse(json_text));
}

void ModelCheckpoint::save(const std::string& path) const {
    json meta;
    meta["model_config"] = config_to_obj(config);
    meta["num_classes"] = params.num_classes;
    meta["config_fingerprint"] = this->meta.config_fingerprint;
    meta["step_count"] = this->meta.step_count;
    meta["manifest_digest"] = this->meta.manifest_digest;
    meta["fingerprint_chain"] = this->meta.fingerprint_chain;
    meta["has_optimizer_state"] = has_optimizer_state;
    meta["optimizer_step"] = has_optimizer_state ? optimizer_state.step : 0;

    // Directory order: parameters, then optimizer moment tensors.
    json dir = json::array();
    int64_t offset = 0;
    auto add_entry = [&](const std::string& name, const Tensor<float>& t) {
        dir.push_back(json{{"name", name}, {"shape", t.shape()}, {"offset", offset},
                           {"bytes", t.numel() * 4}});
        offset += t.numel() * 4;
    };
    for (const auto& [name, t] : params.named()) add_entry(name, t);
    if (has_optimizer_state) {
        const auto& named = params.named();
        for (size_t i = 0; i < named.size(); ++i) {
            add_entry("opt.m." + named[i].first, optimizer_state.first_moment[i]);
            add_entry("opt.v." + named[i].first, optimizer_state.second_moment[i]);
        }
    }
    meta["tensors"] = std::move(dir);

    std::string meta_text = meta.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write checkpoint " + path);
    out.write(kMagic, 8);
    uint64_t len = meta_text.size();
    out.write(reinterpret_cast<const char*>(&len), 8);
    out.write(meta_text.data(), static_cast<std::streamsize>(meta_text.size()));
    auto write_tensor = [&](const Tensor<float>& t) {
        out.write(reinterpret_cast<const char*>(t.data()),
                  static_cast<std::streamsize>(t.numel() * 4));
    };
    for (const auto& [name, t] : params.named()) write_tensor(t);
    if (has_optimizer_state) {
        const auto& named = params.named();
        for (size_t i = 0; i < named.size(); ++i) {
            write_tensor(optimizer_state.first_moment[i]);
            write_tensor(optimizer_state.second_moment[i]);
        }
    }
    if (!out) throw ValidationError("checkpoint write failed: " + path);
}

ModelCheckpoint ModelCheckpoint::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot read checkpoint " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
        throw ValidationError(path + " is not a CTLB0001 checkpoint");
    uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 8);
    std::string meta_text(len, '\0');
    in.read(meta_text.data(), static_cast<std::streamsize>(len));
    if (!in) throw ValidationError("truncated checkpoint metadata in " + path);
    json meta = json::parse(meta_text);

    ModelCheckpoint ckpt;
    ckpt.config = config_from_obj(meta.at("model_config"));
    ckpt.meta.config_fingerprint = meta.at("config_fingerprint").get<std::string>();
    ckpt.meta.step_count = meta.at("step_count").get<int64_t>();
    ckpt.meta.manifest_digest = meta.at("manifest_digest").get<std::string>();
    ckpt.meta.fingerprint_chain = meta.at("fingerprint_chain").get<std::vector<std::string>>();
    ckpt.has_optimizer_state = meta.at("has_optimizer_state").get<bool>();

    std::vector<std::pair<std::string, Tensor<float>>> opt_tensors;
    for (const auto& entry : meta.at("tensors")) {
        std::string name = entry.at("name").get<std::string>();
        Shape shape = entry.at("shape").get<Shape>();
        Tensor<float> t(shape);
        in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * 4));
        if (!in) throw ValidationError("truncated tensor payload '" + name + "' in " + path);
        if (name.rfind("opt.", 0) == 0)
            opt_tensors.emplace_back(name, std::move(t));
        else
            ckpt.params.add(name, std::move(t));
    }
    ckpt.params.num_classes = meta.at("num_classes").get<int32_t>();
    if (ckpt.has_optimizer_state) {
        ckpt.optimizer_state.step = meta.at("optimizer_step").get<int64_t>();
        for (const auto& [name, t] : ckpt.params.named()) {
            (void)name;
            ckpt.optimizer_state.first_moment.emplace_back();
            ckpt.optimizer_state.second_moment.emplace_back();
        }
        const auto& named = ckpt.params.named();
        for (auto& [name, t] : opt_tensors) {
            std::string kind = name.substr(4, 1);  // "m" or "v"
            std::string pname = name.substr(6);
            bool found = false;
            for (size_t i = 0; i < named.size(); ++i) {
                if (named[i].first == pname) {
                    (kind == "m" ? ckpt.optimizer_state.first_moment
                                 : ckpt.optimizer_state.second_moment)[i] = std::move(t);
                    found = true;
                    break;
                }
            }
            if (!found) throw ValidationError("optimizer tensor without parameter: " + name);
        }
    }
    return ckpt;
}

}  // namespace contamlab
