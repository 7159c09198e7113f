#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>

#include <CLI11.hpp>
#include <json.hpp>

#include "mtn/checkpoint.hpp"
#include "mtn/engine.hpp"
#include "mtn/error.hpp"
#include "mtn/metrics.hpp"
#include "mtn/run_config.hpp"
#include "mtn/synth.hpp"
#include "mtn/tokenize.hpp"

namespace fs = std::filesystem;

namespace {

// exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime error
constexpr int kConfigExit = 2;
constexpr int kDataExit = 3;
constexpr int kRuntimeExit = 4;

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "JSON config file with flat dotted keys");
    cmd->add_option("--set", opts.overrides, "override a config key, e.g. --set train.seed=7");
}

mtn::RunConfig resolve_config(const CommonOpts& opts) {
    mtn::RunConfig cfg;
    if (!opts.config_path.empty()) cfg = mtn::RunConfig::load(opts.config_path);
    cfg.apply_overrides(opts.overrides);
    return cfg;
}

struct LoadedData {
    mtn::Vocabulary vocab;
    std::vector<mtn::DialogueExample> examples;
};

LoadedData load_examples(const std::string& path, const mtn::Vocabulary* vocab, int64_t min_freq,
                         int64_t max_history) {
    auto dialogs = mtn::load_dialogs(path);
    LoadedData out;
    out.vocab = vocab ? *vocab : mtn::Vocabulary::build(mtn::corpus_streams(dialogs), min_freq);
    out.examples = mtn::make_examples(dialogs, out.vocab, max_history);
    return out;
}

mtn::FeatureStore load_store(const std::string& dir, const mtn::ModelConfig& cfg) {
    if (cfg.modalities.empty()) return {};
    if (dir.empty())
        throw mtn::ConfigError("data.features is required for models with video modalities");
    return mtn::FeatureStore::load_dir(dir);
}

struct LoadedModel {
    mtn::CheckpointData data;
    mtn::Vocabulary vocab;
    std::unique_ptr<mtn::MtnModel> model;
};

LoadedModel load_model(const std::string& ckpt_dir) {
    LoadedModel out;
    out.data = mtn::load_checkpoint(ckpt_dir);
    out.vocab = mtn::Vocabulary::from_tokens(out.data.vocab);
    auto cfg = mtn::model_config_from_checkpoint(out.data);
    out.model = std::make_unique<mtn::MtnModel>(cfg, mtn::model_seed_from_checkpoint(out.data));
    mtn::restore_model(*out.model, out.data);
    out.model->set_training(false);
    return out;
}

int cmd_train(const CommonOpts& common) {
    auto run = resolve_config(common);
    if (run.dataset.empty())
        throw mtn::ConfigError("data.dataset is required (set it in the config or with --set)");

    auto data = load_examples(run.dataset, nullptr, run.min_freq, run.max_history);
    auto model_cfg = run.model_config(data.vocab.size());
    auto store = load_store(run.features_dir, model_cfg);

    std::vector<mtn::DialogueExample> val;
    const std::vector<mtn::DialogueExample>* val_ptr = nullptr;
    if (!run.val_dataset.empty()) {
        val = mtn::make_examples(mtn::load_dialogs(run.val_dataset), data.vocab, run.max_history);
        val_ptr = &val;
    }

    mtn::MtnModel model(model_cfg, static_cast<uint64_t>(run.seed));
    const auto echo = run.to_json();
    std::cout << "config " << echo.dump() << "\n";
    std::cout << "examples " << data.examples.size() << " vocab " << data.vocab.size() << "\n";

    std::ofstream log_file;
    if (!run.checkpoint_dir.empty()) {
        fs::create_directories(run.checkpoint_dir);
        log_file.open(fs::path(run.checkpoint_dir) / "train_log.txt");
        log_file << "config " << echo.dump() << "\n";
    }
    auto result = mtn::train(data.examples, store, run.train_config(), model, data.vocab, val_ptr,
                             &std::cout, echo);
    if (log_file.is_open())
        for (const auto& rec : result.history)
            log_file << "step " << rec.step << " ppl " << rec.ppl << " ckpt "
                     << rec.checkpoint_path << "\n";
    std::cout << "trained " << result.steps << " steps; best ppl " << result.best_ppl << " at "
              << (result.best_path.empty() ? std::string("<memory>") : result.best_path) << "\n";
    return 0;
}

int cmd_generate(const CommonOpts& common, const std::string& ckpt, const std::string& gold_out,
                 bool greedy) {
    auto run = resolve_config(common);
    if (run.dataset.empty()) throw mtn::ConfigError("data.dataset is required");
    auto loaded = load_model(ckpt);
    auto data = load_examples(run.dataset, &loaded.vocab, run.min_freq,
                              loaded.model->config().max_history);
    auto store = load_store(run.features_dir, loaded.model->config());

    auto beam = run.beam_config();
    if (greedy) beam.beam_size = 1;

    std::ofstream out(run.output);
    if (!out) throw mtn::DataError("cannot write " + run.output);
    std::ofstream gold;
    if (!gold_out.empty()) {
        gold.open(gold_out);
        if (!gold) throw mtn::DataError("cannot write " + gold_out);
    }
    for (const auto& ex : data.examples) {
        const auto ids = mtn::beam_search(*loaded.model, ex, store, beam);
        nlohmann::json row{{"dialogue_id", ex.video_id},
                           {"turn", ex.turn},
                           {"response", mtn::detokenize(loaded.vocab.decode(ids))}};
        out << row.dump() << "\n";
        if (gold.is_open()) {
            const std::vector<int32_t> answer(ex.target.begin() + 1, ex.target.end() - 1);
            nlohmann::json gold_row{{"dialogue_id", ex.video_id},
                                    {"turn", ex.turn},
                                    {"response", mtn::detokenize(loaded.vocab.decode(answer))}};
            gold << gold_row.dump() << "\n";
        }
    }
    std::cout << "wrote " << data.examples.size() << " responses to " << run.output << "\n";
    return 0;
}

int cmd_rank(const CommonOpts& common, const std::string& ckpt) {
    auto run = resolve_config(common);
    if (run.dataset.empty()) throw mtn::ConfigError("data.dataset is required");
    auto loaded = load_model(ckpt);
    auto data = load_examples(run.dataset, &loaded.vocab, run.min_freq,
                              loaded.model->config().max_history);
    auto store = load_store(run.features_dir, loaded.model->config());

    std::ofstream out(run.output);
    if (!out) throw mtn::DataError("cannot write " + run.output);
    int64_t ranked = 0;
    for (const auto& ex : data.examples) {
        if (ex.candidates.empty()) continue;
        auto order = mtn::rank_candidates(*loaded.model, ex, store, ex.candidates);
        nlohmann::json row{{"dialogue_id", ex.video_id}, {"turn", ex.turn}, {"ranking", order}};
        out << row.dump() << "\n";
        ++ranked;
    }
    if (ranked == 0) throw mtn::DataError("no example carries a candidate list");
    std::cout << "ranked candidates for " << ranked << " examples into " << run.output << "\n";
    return 0;
}

int cmd_evaluate(const std::string& hyp, const std::string& ref, const std::string& report_path) {
    auto report = mtn::evaluate_files(hyp, ref);
    const auto doc = report.to_json();
    std::cout << doc.dump(2) << "\n";
    if (!report_path.empty()) {
        std::ofstream out(report_path);
        if (!out) throw mtn::DataError("cannot write " + report_path);
        out << doc.dump(2) << "\n";
    }
    return 0;
}

int cmd_synth(const std::string& out_dir, int64_t seed, int64_t dialogues, int64_t grammar) {
    auto corpus = mtn::synth_corpus(static_cast<uint64_t>(seed), dialogues, grammar);
    mtn::write_synth(corpus, out_dir);
    std::cout << "wrote " << dialogues << " dialogues and features under " << out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multimodal transformer for video-grounded dialogue"};
    app.require_subcommand(1);

    CommonOpts train_opts, gen_opts, rank_opts;
    std::string gen_ckpt, rank_ckpt, gold_out;
    bool greedy = false;
    std::string hyp_path, ref_path, report_path;
    std::string synth_dir;
    int64_t synth_seed = 7, synth_dialogues = 32, synth_grammar = 6;

    auto* train = app.add_subcommand("train", "train a model and write checkpoints");
    add_common(train, train_opts);

    auto* gen = app.add_subcommand("generate", "decode responses with beam search");
    add_common(gen, gen_opts);
    gen->add_option("--ckpt", gen_ckpt, "checkpoint directory")->required();
    gen->add_option("--gold-out", gold_out, "also write gold responses (JSONL)");
    gen->add_flag("--greedy", greedy, "greedy decoding (beam size 1)");

    auto* rank = app.add_subcommand("rank", "rank answer candidates by log-likelihood");
    add_common(rank, rank_opts);
    rank->add_option("--ckpt", rank_ckpt, "checkpoint directory")->required();

    auto* eval = app.add_subcommand("evaluate", "score hypotheses against references");
    eval->add_option("--hyp", hyp_path, "hypothesis JSONL")->required();
    eval->add_option("--ref", ref_path, "reference JSONL")->required();
    eval->add_option("--out", report_path, "write the metric report JSON here");

    auto* synth = app.add_subcommand("synth", "emit a deterministic synthetic corpus");
    synth->add_option("--out", synth_dir, "output directory")->required();
    synth->add_option("--seed", synth_seed, "generator seed");
    synth->add_option("--dialogues", synth_dialogues, "number of dialogues");
    synth->add_option("--grammar", synth_grammar, "grammar size (distinct verbs)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kConfigExit;
    }

    try {
        if (train->parsed()) return cmd_train(train_opts);
        if (gen->parsed()) return cmd_generate(gen_opts, gen_ckpt, gold_out, greedy);
        if (rank->parsed()) return cmd_rank(rank_opts, rank_ckpt);
        if (eval->parsed()) return cmd_evaluate(hyp_path, ref_path, report_path);
        if (synth->parsed()) return cmd_synth(synth_dir, synth_seed, synth_dialogues, synth_grammar);
    } catch (const mtn::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigExit;
    } catch (const mtn::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kDataExit;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntimeExit;
    }
    return kConfigExit;
}
