#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mtn/attention.hpp"
#include "mtn/dataset.hpp"
#include "mtn/error.hpp"
#include "mtn/nn.hpp"
#include "mtn/tensor.hpp"

namespace mtn {

enum class Variant { kFull, kNoQae, kQe, kSelfAttnEnc, kConcatDec };

inline std::string variant_name(Variant v) {
    switch (v) {
        case Variant::kFull: return "full";
        case Variant::kNoQae: return "no_qae";
        case Variant::kQe: return "qe";
        case Variant::kSelfAttnEnc: return "self_attn_enc";
        case Variant::kConcatDec: return "concat_dec";
    }
    return "full";
}

inline Variant variant_from(const std::string& name) {
    if (name == "full") return Variant::kFull;
    if (name == "no_qae") return Variant::kNoQae;
    if (name == "qe") return Variant::kQe;
    if (name == "self_attn_enc") return Variant::kSelfAttnEnc;
    if (name == "concat_dec") return Variant::kConcatDec;
    throw ConfigError("unknown variant \"" + name +
                      "\" (expected full|no_qae|qe|self_attn_enc|concat_dec)");
}

struct Modality {
    std::string name;
    int64_t dim = 0;
};

struct ModelConfig {
    int64_t layers = 6;
    int64_t heads = 8;
    int64_t d_model = 512;
    int64_t d_ff = 2048;
    int64_t vocab_size = 0;
    std::vector<Modality> modalities;     // ordered; decoder video attention follows this order
    double dropout = 0.1;
    double sim_probability = 0.5;
    int64_t max_history = 10;
    Variant variant = Variant::kFull;
    bool positional_encoding_on_features = true;
    bool qae_causal = false;              // causal QAE self-attention + shifted regeneration

    bool has_qae() const { return variant == Variant::kFull || variant == Variant::kQe; }
    bool has_query_head() const { return variant == Variant::kFull; }

    void validate() const {
        if (layers < 1) throw ConfigError("layer count must be >= 1");
        if (heads < 1 || d_model % heads != 0)
            throw ConfigError("head count must divide model width (" + std::to_string(heads) +
                              " vs " + std::to_string(d_model) + ")");
        if (d_model % 2 != 0) throw ConfigError("model width must be even");
        if (d_ff < 1) throw ConfigError("feed-forward width must be >= 1");
        if (vocab_size < 5) throw ConfigError("vocabulary must contain at least one real token");
        if (dropout < 0 || dropout >= 1) throw ConfigError("dropout must be in [0,1)");
        if (sim_probability < 0 || sim_probability > 1)
            throw ConfigError("sim_probability must be in [0,1]");
        if (max_history < 1) throw ConfigError("max_history must be >= 1");
        if (has_qae() && modalities.empty())
            throw ConfigError("variant " + variant_name(variant) +
                              " requires at least one modality");
        for (const auto& m : modalities)
            if (m.name.empty() || m.dim < 1)
                throw ConfigError("modalities need a name and a positive input width");
    }
};

// One decoder layer: self-attention on the offset target, one attention
// sub-layer per text source (or a single one over the concatenated sources),
// then one per modality, video attention last.
template <typename T>
struct DecoderLayerT {
    AttentionSubLayerT<T> self_attn;
    std::vector<AttentionSubLayerT<T>> source_attn;
    std::vector<AttentionSubLayerT<T>> video_attn;

    int64_t sublayer_count() const {
        return 1 + static_cast<int64_t>(source_attn.size() + video_attn.size());
    }
};

// One auto-encoder layer: query self-attention plus one query-aware attention
// per modality; the modality sub-layer outputs are the per-layer feature
// hand-off to the decoder.
template <typename T>
struct QaeLayerT {
    AttentionSubLayerT<T> self_attn;
    std::vector<AttentionSubLayerT<T>> modality_attn;

    int64_t sublayer_count() const { return 1 + static_cast<int64_t>(modality_attn.size()); }
};

template <typename T>
struct ModelOutputT {
    TensorT<T> response_logits;             // batch x (target_len - 1) x vocab
    TensorT<T> query_logits;                // batch x query_len x vocab, when present
    bool has_query_logits = false;
    std::vector<int64_t> response_lengths;  // decoder input rows per example
    std::vector<int64_t> query_lengths;
};

template <typename T>
class MtnModelT {
  public:
    explicit MtnModelT(const ModelConfig& cfg, uint64_t seed = 1)
        : cfg_(cfg), seed_(seed), init_rng_(static_cast<uint32_t>(seed)),
          dropout_rng_(static_cast<uint32_t>(seed ^ 0x9e3779b97f4a7c15ull)),
          pos_table_(512, cfg.d_model) {
        cfg_.validate();
        auto& rng = init_rng_;
        src_embed_ = EmbeddingT<T>(cfg_.vocab_size, cfg_.d_model, rng);
        tgt_embed_ = EmbeddingT<T>(cfg_.vocab_size, cfg_.d_model, rng);
        norm_his_ = LayerNormT<T>(cfg_.d_model);
        norm_cap_ = LayerNormT<T>(cfg_.d_model);
        norm_que_ = LayerNormT<T>(cfg_.d_model);
        norm_tgt_ = LayerNormT<T>(cfg_.d_model);
        for (const auto& m : cfg_.modalities)
            video_proj_.emplace_back(m.dim, cfg_.d_model, rng);
        if (cfg_.variant == Variant::kSelfAttnEnc)
            for (auto* stack : {&enc_stack_his_, &enc_stack_cap_, &enc_stack_que_})
                for (int64_t i = 0; i < kEncoderBlocks; ++i)
                    stack->emplace_back(cfg_.d_model, cfg_.heads, cfg_.d_ff, rng);
        for (int64_t n = 0; n < cfg_.layers; ++n) {
            DecoderLayerT<T> layer;
            layer.self_attn = AttentionSubLayerT<T>(cfg_.d_model, cfg_.heads, cfg_.d_ff, rng);
            const int64_t n_sources = cfg_.variant == Variant::kConcatDec ? 1 : 3;
            for (int64_t s = 0; s < n_sources; ++s)
                layer.source_attn.emplace_back(cfg_.d_model, cfg_.heads, cfg_.d_ff, rng);
            for (size_t m = 0; m < cfg_.modalities.size(); ++m)
                layer.video_attn.emplace_back(cfg_.d_model, cfg_.heads, cfg_.d_ff, rng);
            decoder_.push_back(std::move(layer));
        }
        if (cfg_.has_qae())
            for (int64_t n = 0; n < cfg_.layers; ++n) {
                QaeLayerT<T> layer;
                layer.self_attn = AttentionSubLayerT<T>(cfg_.d_model, cfg_.heads, cfg_.d_ff, rng);
                for (size_t m = 0; m < cfg_.modalities.size(); ++m)
                    layer.modality_attn.emplace_back(cfg_.d_model, cfg_.heads, cfg_.d_ff, rng);
                qae_.push_back(std::move(layer));
            }
        response_head_ = LinearT<T>(cfg_.d_model, cfg_.vocab_size, rng, /*bias=*/false);
        if (cfg_.has_query_head())
            query_head_ = LinearT<T>(cfg_.d_model, cfg_.vocab_size, rng, /*bias=*/false);
    }

    const ModelConfig& config() const { return cfg_; }
    uint64_t seed() const { return seed_; }

    void set_training(bool on) { training_ = on; }
    bool training() const { return training_; }
    std::mt19937& dropout_rng() { return dropout_rng_; }

    ParamRegistry<T> params() {
        ParamRegistry<T> out;
        src_embed_.collect("src_embed", out);
        tgt_embed_.collect("tgt_embed", out);
        norm_his_.collect("enc.his.norm", out);
        norm_cap_.collect("enc.cap.norm", out);
        norm_que_.collect("enc.que.norm", out);
        norm_tgt_.collect("enc.tgt.norm", out);
        for (size_t m = 0; m < video_proj_.size(); ++m)
            video_proj_[m].collect("video." + cfg_.modalities[m].name + ".proj", out);
        const char* stream_names[] = {"his", "cap", "que"};
        std::vector<AttentionSubLayerT<T>>* stacks[] = {&enc_stack_his_, &enc_stack_cap_,
                                                        &enc_stack_que_};
        for (int s = 0; s < 3; ++s)
            for (size_t i = 0; i < stacks[s]->size(); ++i)
                (*stacks[s])[i].collect(
                    "enc." + std::string(stream_names[s]) + ".stack" + std::to_string(i), out);
        for (size_t n = 0; n < decoder_.size(); ++n) {
            const std::string p = "dec." + std::to_string(n);
            decoder_[n].self_attn.collect(p + ".self", out);
            if (cfg_.variant == Variant::kConcatDec) {
                decoder_[n].source_attn[0].collect(p + ".src", out);
            } else {
                decoder_[n].source_attn[0].collect(p + ".his", out);
                decoder_[n].source_attn[1].collect(p + ".cap", out);
                decoder_[n].source_attn[2].collect(p + ".que", out);
            }
            for (size_t m = 0; m < decoder_[n].video_attn.size(); ++m)
                decoder_[n].video_attn[m].collect(p + ".vid." + cfg_.modalities[m].name, out);
        }
        for (size_t n = 0; n < qae_.size(); ++n) {
            const std::string p = "qae." + std::to_string(n);
            qae_[n].self_attn.collect(p + ".self", out);
            for (size_t m = 0; m < qae_[n].modality_attn.size(); ++m)
                qae_[n].modality_attn[m].collect(p + ".att." + cfg_.modalities[m].name, out);
        }
        response_head_.collect("head.response", out);
        if (cfg_.has_query_head()) query_head_.collect("head.query", out);
        return out;
    }

    int64_t param_count() {
        int64_t n = 0;
        for (auto& [name, t] : params()) n += t->numel();
        return n;
    }

    const std::vector<DecoderLayerT<T>>& decoder_layers() const { return decoder_; }
    const std::vector<QaeLayerT<T>>& qae_layers() const { return qae_; }
    EmbeddingT<T>& source_embedding() { return src_embed_; }
    EmbeddingT<T>& target_embedding() { return tgt_embed_; }
    LinearT<T>& response_head() { return response_head_; }
    LinearT<T>& query_head() { return query_head_; }

    // ---- encoders ----

    enum class Stream { kHistory, kCaption, kQuery };

    // layer_norm(embedding + positional encoding); for the self-attention
    // encoder variant a small stack of self-attention blocks follows.
    TensorT<T> encode_text(const std::vector<int32_t>& token_ids, Stream stream) {
        const auto ids = effective_ids(token_ids);
        auto z = add(src_embed_.forward(ids), pos_table_.prefix(static_cast<int64_t>(ids.size())));
        z = stream_norm(stream).forward(z);
        z = maybe_dropout(z);
        if (cfg_.variant == Variant::kSelfAttnEnc)
            for (auto& block : stream_stack(stream)) z = block.forward(z, z, nullptr, ctx());
        return z;
    }

    TensorT<T> encode_target(const std::vector<int32_t>& token_ids) {
        const auto ids = effective_ids(token_ids);
        auto z = add(tgt_embed_.forward(ids), pos_table_.prefix(static_cast<int64_t>(ids.size())));
        return maybe_dropout(norm_tgt_.forward(z));
    }

    // relu(linear(features)) plus positional encoding unless disabled.
    TensorT<T> encode_video(const TensorT<T>& features, size_t modality_idx) {
        const auto& modality = cfg_.modalities.at(modality_idx);
        if (features.rank() != 2 || features.shape().back() != modality.dim)
            throw ShapeError("modality " + modality.name + " expects numSeqs x " +
                             std::to_string(modality.dim) + " features, got " +
                             shape_str(features.shape()));
        auto f = relu(video_proj_[modality_idx].forward(features));
        if (cfg_.positional_encoding_on_features)
            f = add(f, pos_table_.prefix(features.dim(0)));
        return f;
    }

    // ---- auto-encoder ----

    struct QaeOutput {
        // f_att[layer][modality], each of query length x d
        std::vector<std::vector<TensorT<T>>> f_att;
        TensorT<T> z_final;
    };

    // Layer n consumes layer n-1's output (the encoded query at n=1): query
    // self-attention, then one query-aware attention per modality with the
    // encoded features as keys and values.
    QaeOutput qae_forward(const TensorT<T>& z_que, const std::vector<TensorT<T>>& video_feats) {
        if (!cfg_.has_qae()) throw ContractError("variant has no auto-encoder stack");
        if (video_feats.size() != cfg_.modalities.size())
            throw ShapeError("auto-encoder expects " + std::to_string(cfg_.modalities.size()) +
                             " modality feature sets, got " + std::to_string(video_feats.size()));
        QaeOutput out;
        AttentionMask self_mask;
        if (cfg_.qae_causal) self_mask = AttentionMask::causal(z_que.dim(0));
        auto z = z_que;
        for (auto& layer : qae_) {
            z = layer.self_attn.forward(z, z, cfg_.qae_causal ? &self_mask : nullptr, ctx());
            std::vector<TensorT<T>> per_modality;
            for (size_t m = 0; m < layer.modality_attn.size(); ++m) {
                z = layer.modality_attn[m].forward(z, video_feats[m], nullptr, ctx());
                per_modality.push_back(z);
            }
            out.f_att.push_back(std::move(per_modality));
        }
        out.z_final = z;
        return out;
    }

    // ---- decoder ----

    // video_feats_per_layer is indexed [layer][modality]; self-attention uses
    // the causal mask over the offset target.
    TensorT<T> decoder_forward(const TensorT<T>& z_t_offset, const TensorT<T>& z_his,
                               const TensorT<T>& z_cap, const TensorT<T>& z_que,
                               const std::vector<std::vector<TensorT<T>>>& video_feats_per_layer) {
        if (static_cast<int64_t>(video_feats_per_layer.size()) != cfg_.layers)
            throw ShapeError("expected per-layer video features for " +
                             std::to_string(cfg_.layers) + " layers");
        const auto mask = AttentionMask::causal(z_t_offset.dim(0));
        TensorT<T> z_src;
        if (cfg_.variant == Variant::kConcatDec) z_src = concat_rows<T>({z_his, z_cap, z_que});
        auto x = z_t_offset;
        for (size_t n = 0; n < decoder_.size(); ++n) {
            auto& layer = decoder_[n];
            if (layer.video_attn.size() != video_feats_per_layer[n].size())
                throw ShapeError("layer " + std::to_string(n) + " expects " +
                                 std::to_string(layer.video_attn.size()) +
                                 " modality feature sets, got " +
                                 std::to_string(video_feats_per_layer[n].size()));
            x = layer.self_attn.forward(x, x, &mask, ctx());
            if (cfg_.variant == Variant::kConcatDec) {
                x = layer.source_attn[0].forward(x, z_src, nullptr, ctx());
            } else {
                x = layer.source_attn[0].forward(x, z_his, nullptr, ctx());
                x = layer.source_attn[1].forward(x, z_cap, nullptr, ctx());
                x = layer.source_attn[2].forward(x, z_que, nullptr, ctx());
            }
            for (size_t m = 0; m < layer.video_attn.size(); ++m)
                x = layer.video_attn[m].forward(x, video_feats_per_layer[n][m], nullptr, ctx());
        }
        return x;
    }

    // ---- full forward ----

    struct ExampleOutput {
        TensorT<T> response_logits;  // (target_len - 1) x vocab
        TensorT<T> query_logits;     // query_len x vocab, when the variant has a QAE head
        bool has_query_logits = false;
    };

    // Runs one example end to end; target_input is the offset decoder input
    // (the wrapped target without its final token during training/scoring, or
    // the running prefix during generation).
    ExampleOutput forward_example(const std::vector<int32_t>& history,
                                  const std::vector<int32_t>& caption,
                                  const std::vector<int32_t>& query,
                                  const std::vector<int32_t>& target_input,
                                  const std::vector<TensorT<T>>& features) {
        if (features.size() != cfg_.modalities.size())
            throw DataError("expected features for " + std::to_string(cfg_.modalities.size()) +
                            " modalities, got " + std::to_string(features.size()));
        auto z_his = encode_text(history, Stream::kHistory);
        auto z_cap = encode_text(caption, Stream::kCaption);
        auto z_que = encode_text(query, Stream::kQuery);
        auto z_t = encode_target(target_input);
        std::vector<TensorT<T>> f_m;
        for (size_t m = 0; m < features.size(); ++m) f_m.push_back(encode_video(features[m], m));

        std::vector<std::vector<TensorT<T>>> per_layer(static_cast<size_t>(cfg_.layers));
        ExampleOutput out;
        if (cfg_.has_qae()) {
            auto qae = qae_forward(z_que, f_m);
            for (int64_t n = 0; n < cfg_.layers; ++n)
                per_layer[static_cast<size_t>(n)] =
                    cfg_.variant == Variant::kQe ? qae.f_att.back() : qae.f_att[static_cast<size_t>(n)];
            if (cfg_.has_query_head()) {
                out.query_logits = query_head_.forward(qae.z_final);
                out.has_query_logits = true;
            }
        } else {
            for (auto& slot : per_layer) slot = f_m;
        }
        auto z_dec = decoder_forward(z_t, z_his, z_cap, z_que, per_layer);
        out.response_logits = response_head_.forward(z_dec);
        return out;
    }

    // Batch forward over padded streams; per-example logits are stacked into
    // batch x len x vocab tensors, zero-padded past each example's length.
    ModelOutputT<T> forward(const Batch& batch) {
        if (batch.size() == 0) throw ContractError("forward over an empty batch");
        ModelOutputT<T> out;
        std::vector<TensorT<T>> response_parts, query_parts;
        for (int64_t i = 0; i < batch.size(); ++i) {
            auto target = batch.target.row(i);
            if (target.size() < 2)
                throw ContractError("target row " + std::to_string(i) +
                                    " must hold at least <sos> and <eos>");
            target.pop_back();  // offset by one: last token is never decoder input
            std::vector<TensorT<T>> feats;
            for (const auto& block : batch.features) {
                std::vector<T> vals;
                const auto raw = block.example(i);
                vals.assign(raw.begin(), raw.end());
                feats.push_back(TensorT<T>::from_data(
                    {block.rows[static_cast<size_t>(i)], block.dim}, std::move(vals)));
            }
            auto ex = forward_example(batch.history.row(i), batch.caption.row(i),
                                      batch.query.row(i), target, feats);
            out.response_lengths.push_back(ex.response_logits.dim(0));
            response_parts.push_back(ex.response_logits);
            if (ex.has_query_logits) {
                out.query_lengths.push_back(ex.query_logits.dim(0));
                query_parts.push_back(ex.query_logits);
            }
        }
        out.response_logits = stack_rows_padded(response_parts);
        if (!query_parts.empty()) {
            out.query_logits = stack_rows_padded(query_parts);
            out.has_query_logits = true;
        }
        return out;
    }

  private:
    static constexpr int64_t kEncoderBlocks = 2;

    ModelConfig cfg_;
    uint64_t seed_;
    std::mt19937 init_rng_;
    std::mt19937 dropout_rng_;
    bool training_ = false;

    PositionalTableT<T> pos_table_;
    EmbeddingT<T> src_embed_, tgt_embed_;
    LayerNormT<T> norm_his_, norm_cap_, norm_que_, norm_tgt_;
    std::vector<LinearT<T>> video_proj_;
    std::vector<AttentionSubLayerT<T>> enc_stack_his_, enc_stack_cap_, enc_stack_que_;
    std::vector<DecoderLayerT<T>> decoder_;
    std::vector<QaeLayerT<T>> qae_;
    LinearT<T> response_head_, query_head_;

    SublayerCtx ctx() { return SublayerCtx{cfg_.dropout, training_, &dropout_rng_}; }

    TensorT<T> maybe_dropout(const TensorT<T>& x) {
        if (!training_ || cfg_.dropout <= 0) return x;
        return dropout(x, static_cast<T>(cfg_.dropout), true, dropout_rng_);
    }

    // An empty stream attends over a single <eos> key instead of zero rows.
    static std::vector<int32_t> effective_ids(const std::vector<int32_t>& ids) {
        return ids.empty() ? std::vector<int32_t>{Vocabulary::kEos} : ids;
    }

    LayerNormT<T>& stream_norm(Stream s) {
        switch (s) {
            case Stream::kHistory: return norm_his_;
            case Stream::kCaption: return norm_cap_;
            case Stream::kQuery: return norm_que_;
        }
        return norm_que_;
    }

    std::vector<AttentionSubLayerT<T>>& stream_stack(Stream s) {
        switch (s) {
            case Stream::kHistory: return enc_stack_his_;
            case Stream::kCaption: return enc_stack_cap_;
            case Stream::kQuery: return enc_stack_que_;
        }
        return enc_stack_que_;
    }
};

template <typename T>
MtnModelT<T> variant_assemble(const ModelConfig& cfg, uint64_t seed = 1) {
    return MtnModelT<T>(cfg, seed);
}

using Tensor = TensorT<float>;
using MtnModel = MtnModelT<float>;

}  // namespace mtn
