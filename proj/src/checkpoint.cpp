#include "mtn/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "mtn/error.hpp"

namespace mtn {

namespace {

void write_f32(std::ofstream& out, const float* data, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        uint32_t bits;
        std::memcpy(&bits, data + i, sizeof(float));
        unsigned char buf[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                                static_cast<unsigned char>(bits >> 16),
                                static_cast<unsigned char>(bits >> 24)};
        out.write(reinterpret_cast<const char*>(buf), 4);
    }
}

std::vector<float> read_f32(std::ifstream& in, size_t n, const std::string& path) {
    std::vector<float> out(n);
    for (size_t i = 0; i < n; ++i) {
        unsigned char buf[4];
        if (!in.read(reinterpret_cast<char*>(buf), 4))
            throw DataError("checkpoint payload truncated: " + path);
        const uint32_t bits = static_cast<uint32_t>(buf[0]) | (static_cast<uint32_t>(buf[1]) << 8) |
                              (static_cast<uint32_t>(buf[2]) << 16) |
                              (static_cast<uint32_t>(buf[3]) << 24);
        std::memcpy(&out[i], &bits, sizeof(float));
    }
    return out;
}

}  // namespace

const CheckpointData::TensorEntry* CheckpointData::find(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return &t;
    return nullptr;
}

void save_checkpoint(const std::string& dir, MtnModel& model, const AdamStateT<float>* adam,
                     const Vocabulary& vocab, const nlohmann::json& config, int64_t global_step) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    auto params = model.params();
    if (adam && adam->m.size() != params.size())
        throw ContractError("optimizer state does not match the parameter registry");

    nlohmann::json manifest;
    manifest["config"] = config;
    manifest["global_step"] = global_step;
    manifest["adam_step_count"] = adam ? adam->step_count : 0;
    manifest["vocab"] = vocab.tokens();
    manifest["model"] = {
        {"layers", model.config().layers},
        {"heads", model.config().heads},
        {"d_model", model.config().d_model},
        {"d_ff", model.config().d_ff},
        {"dropout", model.config().dropout},
        {"sim_probability", model.config().sim_probability},
        {"max_history", model.config().max_history},
        {"variant", variant_name(model.config().variant)},
        {"positional_encoding_on_features", model.config().positional_encoding_on_features},
        {"qae_causal", model.config().qae_causal},
        {"seed", model.seed()},
    };
    nlohmann::json modalities = nlohmann::json::array();
    for (const auto& m : model.config().modalities)
        modalities.push_back({{"name", m.name}, {"dim", m.dim}});
    manifest["model"]["modalities"] = modalities;

    nlohmann::json index = nlohmann::json::array();
    std::ofstream bin(fs::path(dir) / "params.bin", std::ios::binary);
    if (!bin) throw DataError("cannot write checkpoint payload in " + dir);
    int64_t offset = 0;
    auto append = [&](const std::string& name, const Shape& shape, const float* data, int64_t n) {
        index.push_back({{"name", name}, {"shape", shape}, {"byte_offset", offset}});
        write_f32(bin, data, static_cast<size_t>(n));
        offset += n * 4;
    };
    for (auto& [name, t] : params) append(name, t->shape(), t->data(), t->numel());
    if (adam)
        for (size_t i = 0; i < params.size(); ++i) {
            append("adam.m." + params[i].first, params[i].second->shape(),
                   adam->m[i].data(), static_cast<int64_t>(adam->m[i].size()));
            append("adam.v." + params[i].first, params[i].second->shape(),
                   adam->v[i].data(), static_cast<int64_t>(adam->v[i].size()));
        }
    bin.flush();
    if (!bin) throw DataError("short write to checkpoint payload in " + dir);
    manifest["tensors"] = index;

    std::ofstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw DataError("cannot write checkpoint manifest in " + dir);
    mf << manifest.dump(2) << "\n";
}

CheckpointData load_checkpoint(const std::string& dir) {
    namespace fs = std::filesystem;
    const auto manifest_path = fs::path(dir) / "manifest.json";
    std::ifstream mf(manifest_path);
    if (!mf) throw DataError("cannot open checkpoint manifest " + manifest_path.string());
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed checkpoint manifest: " + std::string(e.what()));
    }
    CheckpointData data;
    data.config = manifest.value("config", nlohmann::json::object());
    data.model = manifest.value("model", nlohmann::json::object());
    data.global_step = manifest.value("global_step", 0);
    data.adam_step_count = manifest.value("adam_step_count", 0);
    data.vocab = manifest.value("vocab", std::vector<std::string>{});

    const auto bin_path = fs::path(dir) / "params.bin";
    std::ifstream bin(bin_path, std::ios::binary);
    if (!bin) throw DataError("cannot open checkpoint payload " + bin_path.string());
    for (const auto& entry : manifest.value("tensors", nlohmann::json::array())) {
        CheckpointData::TensorEntry t;
        t.name = entry.at("name").get<std::string>();
        t.shape = entry.at("shape").get<Shape>();
        bin.seekg(entry.at("byte_offset").get<int64_t>());
        t.data = read_f32(bin, static_cast<size_t>(shape_numel(t.shape)), bin_path.string());
        data.tensors.push_back(std::move(t));
    }
    return data;
}

void restore_model(MtnModel& model, const CheckpointData& data) {
    auto params = model.params();
    for (auto& [name, t] : params) {
        const auto* entry = data.find(name);
        if (!entry) throw DataError("checkpoint is missing parameter " + name);
        if (entry->shape != t->shape())
            throw DataError("checkpoint parameter " + name + " has shape " +
                            shape_str(entry->shape) + ", model expects " + shape_str(t->shape()));
        t->value() = entry->data;
    }
}

ModelConfig model_config_from_checkpoint(const CheckpointData& data) {
    const auto& m = data.model;
    if (m.empty()) throw DataError("checkpoint has no model block");
    ModelConfig cfg;
    cfg.layers = m.at("layers").get<int64_t>();
    cfg.heads = m.at("heads").get<int64_t>();
    cfg.d_model = m.at("d_model").get<int64_t>();
    cfg.d_ff = m.at("d_ff").get<int64_t>();
    cfg.vocab_size = static_cast<int64_t>(data.vocab.size());
    cfg.dropout = m.at("dropout").get<double>();
    cfg.sim_probability = m.at("sim_probability").get<double>();
    cfg.max_history = m.at("max_history").get<int64_t>();
    cfg.variant = variant_from(m.at("variant").get<std::string>());
    cfg.positional_encoding_on_features = m.at("positional_encoding_on_features").get<bool>();
    cfg.qae_causal = m.at("qae_causal").get<bool>();
    for (const auto& mod : m.at("modalities"))
        cfg.modalities.push_back({mod.at("name").get<std::string>(), mod.at("dim").get<int64_t>()});
    return cfg;
}

uint64_t model_seed_from_checkpoint(const CheckpointData& data) {
    return data.model.value("seed", uint64_t{1});
}

void restore_adam(AdamStateT<float>& state, ParamRegistry<float>& params,
                  const CheckpointData& data) {
    state.init(params);
    state.step_count = data.adam_step_count;
    for (size_t i = 0; i < params.size(); ++i) {
        const auto* m = data.find("adam.m." + params[i].first);
        const auto* v = data.find("adam.v." + params[i].first);
        if (!m || !v) throw DataError("checkpoint is missing optimizer state for " + params[i].first);
        state.m[i] = m->data;
        state.v[i] = v->data;
    }
}

}  // namespace mtn
