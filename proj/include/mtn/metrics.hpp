#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace mtn {

// One hypothesis/reference pair, tokenized with the same rules as training.
struct EvalPair {
    std::string id;
    std::vector<std::string> hyp;
    std::vector<std::string> ref;
};

// Corpus-level BLEU-n: modified n-gram precision with a geometric mean over
// orders 1..n and the brevity penalty; no smoothing, so a zero count at any
// order yields 0.
double bleu(const std::vector<EvalPair>& pairs, int n);

// Mean per-pair LCS F-measure with recall weight beta.
double rouge_l(const std::vector<EvalPair>& pairs, double beta = 1.2);

// CIDEr-D: per order n=1..4, TF-IDF cosine between hypothesis and reference
// with count clipping and a length-difference Gaussian penalty; orders
// averaged and scaled by 10. Document frequencies come from the reference
// corpus.
double cider_d(const std::vector<EvalPair>& pairs, double sigma = 6.0);

struct MetricReport {
    double bleu1 = 0, bleu2 = 0, bleu3 = 0, bleu4 = 0;
    double rouge_l = 0;
    double cider = 0;
    int64_t count = 0;

    nlohmann::json to_json() const;
};

MetricReport compute_metrics(const std::vector<EvalPair>& pairs);

// Reads two generation-output JSONL files ({"dialogue_id", "turn",
// "response"}), joins them by (dialogue_id, turn), tokenizes both sides, and
// computes all metrics. Unmatched ids raise an error listing the orphans.
MetricReport evaluate_files(const std::string& hyp_path, const std::string& ref_path);

}  // namespace mtn
