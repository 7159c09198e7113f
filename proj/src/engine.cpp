#include "mtn/engine.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <sstream>

#include "mtn/checkpoint.hpp"
#include "mtn/error.hpp"
#include "mtn/loss.hpp"
#include "mtn/optim.hpp"

namespace mtn {

std::vector<int32_t> crop_at(const std::vector<int32_t>& target_ids, int64_t i) {
    const int64_t len = static_cast<int64_t>(target_ids.size());
    if (i < 2 || i > len - 1)
        throw ContractError("crop position " + std::to_string(i) + " outside {2.." +
                            std::to_string(len - 1) + "}");
    return std::vector<int32_t>(target_ids.begin(), target_ids.begin() + i);
}

std::vector<int32_t> crop_target(const std::vector<int32_t>& target_ids, double p,
                                 std::mt19937& rng) {
    if (p < 0 || p > 1) throw ContractError("crop probability must be in [0,1]");
    const int64_t len = static_cast<int64_t>(target_ids.size());
    if (len < 2) throw ContractError("crop expects an <sos>/<eos>-wrapped target of length >= 2");
    if (len <= 3) return target_ids;
    if (p == 0) return target_ids;
    std::bernoulli_distribution fire(p);
    if (!fire(rng)) return target_ids;
    std::uniform_int_distribution<int64_t> pick(2, len - 1);
    return crop_at(target_ids, pick(rng));
}

void crop_batch_targets(Batch& batch, double p, std::mt19937& rng) {
    for (int64_t i = 0; i < batch.size(); ++i) {
        auto row = batch.target.row(i);
        auto cropped = crop_target(row, p, rng);
        if (cropped.size() == row.size()) continue;
        auto* base = batch.target.ids.data() + i * batch.target.cols;
        std::copy(cropped.begin(), cropped.end(), base);
        std::fill(base + cropped.size(), base + row.size(), Vocabulary::kPad);
        batch.target.lengths[static_cast<size_t>(i)] = static_cast<int64_t>(cropped.size());
    }
}

namespace {

// Offset-by-one labels aligned with the stacked response logits: position t of
// example b predicts target token t+1. Pad everywhere past the true length.
std::vector<int32_t> response_labels(const Batch& batch, int64_t padded_len) {
    std::vector<int32_t> labels(static_cast<size_t>(batch.size() * padded_len), Vocabulary::kPad);
    for (int64_t b = 0; b < batch.size(); ++b) {
        const auto target = batch.target.row(b);
        for (size_t t = 0; t + 1 < target.size(); ++t)
            labels[static_cast<size_t>(b * padded_len + static_cast<int64_t>(t))] =
                target[t + 1];
    }
    return labels;
}

// Regeneration labels for the query stream: identity reconstruction, or the
// next-token shift when the QAE runs causally.
std::vector<int32_t> query_labels(const Batch& batch, int64_t padded_len, bool causal) {
    std::vector<int32_t> labels(static_cast<size_t>(batch.size() * padded_len), Vocabulary::kPad);
    for (int64_t b = 0; b < batch.size(); ++b) {
        auto query = batch.query.row(b);
        if (query.empty()) query.push_back(Vocabulary::kEos);  // mirrors the encoder guard
        if (causal) {
            for (size_t t = 0; t + 1 < query.size(); ++t)
                labels[static_cast<size_t>(b * padded_len + static_cast<int64_t>(t))] =
                    query[t + 1];
        } else {
            for (size_t t = 0; t < query.size(); ++t)
                labels[static_cast<size_t>(b * padded_len + static_cast<int64_t>(t))] = query[t];
        }
    }
    return labels;
}

bool any_non_pad(const std::vector<int32_t>& labels) {
    for (int32_t t : labels)
        if (t != Vocabulary::kPad) return true;
    return false;
}

}  // namespace

LossBreakdown compute_loss(const Batch& batch, MtnModel& model, double label_smoothing) {
    if (batch.size() == 0) throw ContractError("loss over an empty batch");
    auto out = model.forward(batch);
    const int64_t v = model.config().vocab_size;

    const int64_t t_len = out.response_logits.dim(1);
    auto flat_t = reshape(out.response_logits, {batch.size() * t_len, v});
    auto labels_t = response_labels(batch, t_len);
    auto loss_t = label_smoothed_nll(flat_t, labels_t, static_cast<float>(label_smoothing),
                                     Vocabulary::kPad);

    LossBreakdown result;
    result.response_loss = loss_t.item();
    result.total = loss_t;
    if (out.has_query_logits) {
        const int64_t q_len = out.query_logits.dim(1);
        auto flat_q = reshape(out.query_logits, {batch.size() * q_len, v});
        auto labels_q = query_labels(batch, q_len, model.config().qae_causal);
        if (any_non_pad(labels_q)) {
            auto loss_q = label_smoothed_nll(flat_q, labels_q, static_cast<float>(label_smoothing),
                                             Vocabulary::kPad);
            result.query_loss = loss_q.item();
            result.has_query = true;
            result.total = add(loss_t, loss_q);
        }
    }
    return result;
}

double perplexity(MtnModel& model, const std::vector<DialogueExample>& examples,
                  const FeatureStore& features, int64_t batch_size) {
    if (examples.empty()) throw ContractError("perplexity over an empty example set");
    const bool was_training = model.training();
    model.set_training(false);
    autograd::NoGradGuard ng;
    std::mt19937 rng(0);  // batch order is irrelevant for the aggregate
    double total = 0;
    int64_t count = 0;
    for (auto& batch : make_batches(examples, batch_size, rng,
                                    features.empty() ? nullptr : &features)) {
        auto out = model.forward(batch);
        const int64_t v = model.config().vocab_size;
        const int64_t t_len = out.response_logits.dim(1);
        auto flat = reshape(out.response_logits, {batch.size() * t_len, v});
        auto labels = response_labels(batch, t_len);
        auto [nll, n] = token_nll_sum(flat, labels, Vocabulary::kPad);
        total += nll;
        count += n;
    }
    model.set_training(was_training);
    if (count == 0) throw ContractError("perplexity over targets with no scored positions");
    return std::exp(total / static_cast<double>(count));
}

namespace {

std::string checkpoint_name(const std::string& dir, int64_t step) {
    return (std::filesystem::path(dir) / ("step_" + std::to_string(step))).string();
}

}  // namespace

TrainResult train(const std::vector<DialogueExample>& train_set, const FeatureStore& features,
                  const TrainConfig& cfg, MtnModel& model, const Vocabulary& vocab,
                  const std::vector<DialogueExample>* val_set, std::ostream* log,
                  const nlohmann::json& config_echo_in) {
    if (cfg.epochs < 1) throw ContractError("epochs must be >= 1");
    if (cfg.sim_probability < 0 || cfg.sim_probability > 1)
        throw ContractError("sim_probability must be in [0,1]");
    if (train_set.empty()) throw ContractError("training set is empty");
    if (static_cast<int64_t>(vocab.size()) != model.config().vocab_size)
        throw ContractError("vocabulary size does not match the model");

    auto params = model.params();
    AdamStateT<float> adam;
    adam.init(params);
    const ScheduleConfig sched{model.config().d_model, cfg.warmup_steps};
    const FeatureStore* store = features.empty() ? nullptr : &features;
    const auto& val_examples = val_set ? *val_set : train_set;

    std::mt19937 crop_rng(static_cast<uint32_t>(cfg.seed ^ 0xC0FFEEull));

    TrainResult result;
    nlohmann::json config_echo = config_echo_in;
    if (config_echo.empty()) {
        config_echo["train.seed"] = cfg.seed;
        config_echo["model.variant"] = variant_name(model.config().variant);
    }

    auto validate_and_checkpoint = [&](int64_t step) {
        const double ppl = perplexity(model, val_examples, features, cfg.batch_size);
        ValidationRecord rec{step, ppl, ""};
        if (!cfg.checkpoint_dir.empty()) {
            rec.checkpoint_path = checkpoint_name(cfg.checkpoint_dir, step);
            save_checkpoint(rec.checkpoint_path, model, &adam, vocab, config_echo, step);
        }
        if (result.history.empty() || ppl <= result.best_ppl) {
            result.best_ppl = ppl;
            result.best_path = rec.checkpoint_path;
        }
        result.history.push_back(rec);
        if (log)
            (*log) << "step " << step << " validation ppl " << std::setprecision(6) << ppl << "\n";
        return ppl;
    };

    int64_t step = 0;
    bool done = false;
    for (int64_t epoch = 0; epoch < cfg.epochs && !done; ++epoch) {
        std::mt19937 batch_rng(static_cast<uint32_t>(cfg.seed * 2654435761ull + 1 +
                                                     static_cast<uint64_t>(epoch)));
        auto batches = make_batches(train_set, cfg.batch_size, batch_rng, store);
        for (auto& batch : batches) {
            crop_batch_targets(batch, cfg.sim_probability, crop_rng);
            model.set_training(true);
            auto loss = compute_loss(batch, model, cfg.label_smoothing);
            const double loss_value = static_cast<double>(loss.total.item());
            if (!std::isfinite(loss_value))
                throw NumericError("non-finite loss at step " + std::to_string(step + 1) +
                                   " (response " + std::to_string(loss.response_loss) +
                                   ", query " + std::to_string(loss.query_loss) + ")");
            zero_grads(params);
            loss.total.backward();
            clip_grad_norm(params, cfg.clip_norm);
            ++step;
            const double lr = noam_lr(step, sched);
            adam_step(params, adam, lr);
            result.step_losses.push_back(loss_value);
            result.applied_lrs.push_back(lr);
            if (log && (step % 50 == 1 || step == 1))
                (*log) << "step " << step << " lr " << std::setprecision(6) << lr << " loss "
                       << loss_value << " (response " << loss.response_loss << ", query "
                       << loss.query_loss << ")\n";

            if (cfg.validate_every > 0 && step % cfg.validate_every == 0) {
                const double ppl = validate_and_checkpoint(step);
                if (cfg.early_stop_ppl > 0 && ppl <= cfg.early_stop_ppl) {
                    result.early_stopped = true;
                    done = true;
                    break;
                }
            }
            if (cfg.max_steps > 0 && step >= cfg.max_steps) {
                done = true;
                break;
            }
        }
    }
    result.steps = step;
    if (result.history.empty() || result.history.back().step != step) validate_and_checkpoint(step);
    model.set_training(false);
    return result;
}

// ---- inference ----

BeamResult beam_search_core(const StepScorer& next_log_probs, int64_t vocab_size,
                            const BeamConfig& cfg) {
    if (cfg.beam_size < 1) throw ContractError("beam size must be >= 1");
    if (cfg.max_len < 1) throw ContractError("max_len must be >= 1");

    struct Hyp {
        std::vector<int32_t> ids;  // starts with <sos>
        double logp = 0;
        bool finished = false;
    };
    std::vector<Hyp> alive{{{Vocabulary::kSos}, 0.0, false}};

    for (int64_t t = 0; t < cfg.max_len; ++t) {
        bool all_finished = true;
        for (const auto& h : alive) all_finished = all_finished && h.finished;
        if (all_finished) break;
        std::vector<Hyp> cands;
        for (const auto& h : alive) {
            if (h.finished) {
                cands.push_back(h);
                continue;
            }
            const auto lps = next_log_probs(h.ids);
            if (static_cast<int64_t>(lps.size()) != vocab_size)
                throw ContractError("scorer returned " + std::to_string(lps.size()) +
                                    " log-probs for a vocabulary of " +
                                    std::to_string(vocab_size));
            for (int64_t k = 0; k < vocab_size; ++k) {
                if (k == Vocabulary::kPad) continue;
                Hyp next = h;
                next.ids.push_back(static_cast<int32_t>(k));
                next.logp += lps[static_cast<size_t>(k)];
                next.finished = k == Vocabulary::kEos;
                cands.push_back(std::move(next));
            }
        }
        std::stable_sort(cands.begin(), cands.end(),
                         [](const Hyp& a, const Hyp& b) { return a.logp > b.logp; });
        cands.resize(std::min<size_t>(cands.size(), static_cast<size_t>(cfg.beam_size)));
        alive = std::move(cands);
    }

    auto penalized = [&](const Hyp& h) {
        const double len = static_cast<double>(h.ids.size() - 1);
        return h.logp / std::pow(std::max(len, 1.0), cfg.length_penalty);
    };
    const Hyp* best = &alive.front();
    for (const auto& h : alive)
        if (penalized(h) > penalized(*best)) best = &h;

    BeamResult out;
    out.score = penalized(*best);
    out.ids.assign(best->ids.begin() + 1, best->ids.end());
    if (!out.ids.empty() && out.ids.back() == Vocabulary::kEos) out.ids.pop_back();
    return out;
}

namespace {

struct ExampleStreams {
    std::vector<int32_t> history, caption, query;
    std::vector<Tensor> features;
};

ExampleStreams prepare_streams(const DialogueExample& ex, const FeatureStore& store,
                               const ModelConfig& cfg) {
    ExampleStreams s;
    s.history = history_stream(ex);
    s.caption = ex.caption;
    s.query = ex.query;
    for (const auto& m : cfg.modalities) {
        const auto& f = store.get(ex.video_id, m.name);
        if (f.cols != m.dim)
            throw DataError("modality " + m.name + " width " + std::to_string(f.cols) +
                            " does not match configured " + std::to_string(m.dim));
        s.features.push_back(Tensor::from_data({f.rows, f.cols}, f.data));
    }
    return s;
}

StepScorer model_scorer(MtnModel& model, const ExampleStreams& streams) {
    return [&model, &streams](const std::vector<int32_t>& prefix) {
        autograd::NoGradGuard ng;
        auto out = model.forward_example(streams.history, streams.caption, streams.query, prefix,
                                         streams.features);
        const int64_t v = out.response_logits.dim(1);
        const int64_t last = out.response_logits.dim(0) - 1;
        return log_probs_row(out.response_logits.data() + last * v, v, Vocabulary::kPad);
    };
}

}  // namespace

std::vector<int32_t> beam_search(MtnModel& model, const DialogueExample& ex,
                                 const FeatureStore& features, const BeamConfig& cfg) {
    const bool was_training = model.training();
    model.set_training(false);
    auto streams = prepare_streams(ex, features, model.config());
    auto scorer = model_scorer(model, streams);
    auto best = beam_search_core(scorer, model.config().vocab_size, cfg);
    if (cfg.beam_size > 1) {
        // The kept beams never score below the greedy path.
        BeamConfig greedy_cfg = cfg;
        greedy_cfg.beam_size = 1;
        auto greedy = beam_search_core(scorer, model.config().vocab_size, greedy_cfg);
        if (greedy.score > best.score) best = greedy;
    }
    model.set_training(was_training);
    return best.ids;
}

std::vector<int32_t> greedy_decode(MtnModel& model, const DialogueExample& ex,
                                   const FeatureStore& features, int64_t max_len) {
    return beam_search(model, ex, features, BeamConfig{1, 1.0, max_len});
}

double sequence_log_likelihood(MtnModel& model, const DialogueExample& ex,
                               const FeatureStore& features,
                               const std::vector<int32_t>& answer_ids) {
    const bool was_training = model.training();
    model.set_training(false);
    autograd::NoGradGuard ng;
    auto streams = prepare_streams(ex, features, model.config());
    std::vector<int32_t> wrapped;
    wrapped.push_back(Vocabulary::kSos);
    wrapped.insert(wrapped.end(), answer_ids.begin(), answer_ids.end());
    wrapped.push_back(Vocabulary::kEos);
    const std::vector<int32_t> input(wrapped.begin(), wrapped.end() - 1);
    const std::vector<int32_t> labels(wrapped.begin() + 1, wrapped.end());
    auto out = model.forward_example(streams.history, streams.caption, streams.query, input,
                                     streams.features);
    auto [nll, count] = token_nll_sum(out.response_logits, labels, Vocabulary::kPad);
    model.set_training(was_training);
    return -nll / static_cast<double>(count);
}

std::vector<int64_t> rank_candidates(MtnModel& model, const DialogueExample& ex,
                                     const FeatureStore& features,
                                     const std::vector<std::vector<int32_t>>& candidates) {
    if (candidates.empty()) throw ContractError("rank_candidates needs a non-empty candidate list");
    std::vector<double> scores;
    scores.reserve(candidates.size());
    for (const auto& c : candidates)
        scores.push_back(sequence_log_likelihood(model, ex, features, c));
    std::vector<int64_t> order(candidates.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);
    std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
        return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
    });
    return order;
}

}  // namespace mtn
