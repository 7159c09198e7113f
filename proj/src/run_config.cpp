#include "mtn/run_config.hpp"

#include <fstream>

#include "mtn/error.hpp"

namespace mtn {

namespace {

struct Field {
    const char* key;
    std::function<nlohmann::json(const RunConfig&)> get;
    std::function<void(RunConfig&, const nlohmann::json&)> set;
};

template <typename T, typename M>
Field field(const char* key, M RunConfig::* member) {
    return Field{
        key,
        [member](const RunConfig& c) { return nlohmann::json(c.*member); },
        [member, key](RunConfig& c, const nlohmann::json& v) {
            try {
                c.*member = v.get<T>();
            } catch (const nlohmann::json::exception&) {
                throw ConfigError(std::string("config key \"") + key + "\" has the wrong type");
            }
        },
    };
}

const std::vector<Field>& fields() {
    static const std::vector<Field> f = {
        field<int64_t>("model.layers", &RunConfig::layers),
        field<int64_t>("model.heads", &RunConfig::heads),
        field<int64_t>("model.d_model", &RunConfig::d_model),
        field<int64_t>("model.d_ff", &RunConfig::d_ff),
        field<double>("model.dropout", &RunConfig::dropout),
        field<std::string>("model.variant", &RunConfig::variant),
        field<std::vector<std::string>>("model.modalities", &RunConfig::modalities),
        field<bool>("model.positional_features", &RunConfig::positional_features),
        field<int64_t>("model.max_history", &RunConfig::max_history),
        field<bool>("model.qae_causal", &RunConfig::qae_causal),
        field<int64_t>("train.epochs", &RunConfig::epochs),
        field<int64_t>("train.max_steps", &RunConfig::max_steps),
        field<int64_t>("train.warmup_steps", &RunConfig::warmup_steps),
        field<double>("train.label_smoothing", &RunConfig::label_smoothing),
        field<double>("train.sim_probability", &RunConfig::sim_probability),
        field<int64_t>("train.batch_size", &RunConfig::batch_size),
        field<int64_t>("train.seed", &RunConfig::seed),
        field<int64_t>("train.validate_every", &RunConfig::validate_every),
        field<int64_t>("train.min_freq", &RunConfig::min_freq),
        field<double>("train.clip_norm", &RunConfig::clip_norm),
        field<double>("train.early_stop_ppl", &RunConfig::early_stop_ppl),
        field<int64_t>("infer.beam_size", &RunConfig::beam_size),
        field<double>("infer.length_penalty", &RunConfig::length_penalty),
        field<int64_t>("infer.max_len", &RunConfig::max_len),
        field<std::string>("data.dataset", &RunConfig::dataset),
        field<std::string>("data.val_dataset", &RunConfig::val_dataset),
        field<std::string>("data.features", &RunConfig::features_dir),
        field<std::string>("data.checkpoints", &RunConfig::checkpoint_dir),
        field<std::string>("data.output", &RunConfig::output),
    };
    return f;
}

nlohmann::json parse_scalar(const std::string& text) {
    // bare strings are accepted where JSON parsing fails
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception&) {
        return nlohmann::json(text);
    }
}

}  // namespace

RunConfig RunConfig::from_json(const nlohmann::json& flat) {
    if (!flat.is_object()) throw ConfigError("config root must be a JSON object");
    RunConfig cfg;
    for (const auto& [key, value] : flat.items()) {
        bool known = false;
        for (const auto& f : fields())
            if (key == f.key) {
                f.set(cfg, value);
                known = true;
                break;
            }
        if (!known) throw ConfigError("unknown config key \"" + key + "\"");
    }
    return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed config JSON in " + path + ": " + e.what());
    }
    return from_json(doc);
}

nlohmann::json RunConfig::to_json() const {
    nlohmann::json out = nlohmann::json::object();
    for (const auto& f : fields()) out[f.key] = f.get(*this);
    return out;
}

void RunConfig::apply_overrides(const std::vector<std::string>& overrides) {
    for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw ConfigError("override \"" + kv + "\" must look like key=value");
        const std::string key = kv.substr(0, eq);
        const nlohmann::json value = parse_scalar(kv.substr(eq + 1));
        bool known = false;
        for (const auto& f : fields())
            if (key == f.key) {
                f.set(*this, value);
                known = true;
                break;
            }
        if (!known) throw ConfigError("unknown config key \"" + key + "\"");
    }
}

ModelConfig RunConfig::model_config(int64_t vocab_size) const {
    ModelConfig m;
    m.layers = layers;
    m.heads = heads;
    m.d_model = d_model;
    m.d_ff = d_ff;
    m.vocab_size = vocab_size;
    m.dropout = dropout;
    m.sim_probability = sim_probability;
    m.max_history = max_history;
    m.variant = variant_from(variant);
    m.positional_encoding_on_features = positional_features;
    m.qae_causal = qae_causal;
    for (const auto& spec : modalities) {
        const auto colon = spec.find(':');
        if (colon == std::string::npos)
            throw ConfigError("modality \"" + spec + "\" must look like name:dim");
        Modality mod;
        mod.name = spec.substr(0, colon);
        try {
            mod.dim = std::stoll(spec.substr(colon + 1));
        } catch (const std::exception&) {
            throw ConfigError("modality \"" + spec + "\" has a non-numeric width");
        }
        m.modalities.push_back(std::move(mod));
    }
    return m;
}

TrainConfig RunConfig::train_config() const {
    TrainConfig t;
    t.epochs = epochs;
    t.max_steps = max_steps;
    t.warmup_steps = warmup_steps;
    t.label_smoothing = label_smoothing;
    t.sim_probability = sim_probability;
    t.batch_size = batch_size;
    t.seed = static_cast<uint64_t>(seed);
    t.checkpoint_dir = checkpoint_dir;
    t.validate_every = validate_every;
    t.clip_norm = clip_norm;
    t.early_stop_ppl = early_stop_ppl;
    return t;
}

BeamConfig RunConfig::beam_config() const {
    BeamConfig b;
    b.beam_size = beam_size;
    b.length_penalty = length_penalty;
    b.max_len = max_len;
    return b;
}

}  // namespace mtn
