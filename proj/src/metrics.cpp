#include "mtn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "mtn/error.hpp"
#include "mtn/tokenize.hpp"

namespace mtn {

namespace {

using NgramCounts = std::map<std::string, double>;

std::string ngram_key(const std::vector<std::string>& tokens, size_t start, size_t n) {
    std::string key;
    for (size_t i = 0; i < n; ++i) {
        if (i) key += '\x1f';
        key += tokens[start + i];
    }
    return key;
}

NgramCounts count_ngrams(const std::vector<std::string>& tokens, size_t n) {
    NgramCounts counts;
    if (tokens.size() >= n)
        for (size_t i = 0; i + n <= tokens.size(); ++i) counts[ngram_key(tokens, i, n)] += 1;
    return counts;
}

}  // namespace

double bleu(const std::vector<EvalPair>& pairs, int n) {
    if (pairs.empty()) throw ContractError("BLEU over an empty corpus");
    if (n < 1 || n > 4) throw ContractError("BLEU order must be in {1,2,3,4}");
    double hyp_len = 0, ref_len = 0;
    std::vector<double> matched(static_cast<size_t>(n), 0), total(static_cast<size_t>(n), 0);
    for (const auto& p : pairs) {
        hyp_len += static_cast<double>(p.hyp.size());
        ref_len += static_cast<double>(p.ref.size());
        for (int g = 1; g <= n; ++g) {
            const auto hyp_counts = count_ngrams(p.hyp, static_cast<size_t>(g));
            const auto ref_counts = count_ngrams(p.ref, static_cast<size_t>(g));
            for (const auto& [key, c] : hyp_counts) {
                total[static_cast<size_t>(g - 1)] += c;
                auto it = ref_counts.find(key);
                if (it != ref_counts.end())
                    matched[static_cast<size_t>(g - 1)] += std::min(c, it->second);
            }
        }
    }
    double log_sum = 0;
    for (int g = 0; g < n; ++g) {
        if (matched[static_cast<size_t>(g)] == 0 || total[static_cast<size_t>(g)] == 0) return 0;
        log_sum += std::log(matched[static_cast<size_t>(g)] / total[static_cast<size_t>(g)]);
    }
    if (hyp_len == 0) return 0;
    const double bp = hyp_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / hyp_len);
    return bp * std::exp(log_sum / n);
}

double rouge_l(const std::vector<EvalPair>& pairs, double beta) {
    if (pairs.empty()) throw ContractError("ROUGE-L over an empty corpus");
    double sum = 0;
    for (const auto& p : pairs) {
        const size_t hl = p.hyp.size(), rl = p.ref.size();
        if (hl == 0 || rl == 0) continue;  // scores 0 for this pair
        std::vector<size_t> prev(rl + 1, 0), cur(rl + 1, 0);
        for (size_t i = 1; i <= hl; ++i) {
            for (size_t j = 1; j <= rl; ++j)
                cur[j] = p.hyp[i - 1] == p.ref[j - 1] ? prev[j - 1] + 1
                                                      : std::max(prev[j], cur[j - 1]);
            std::swap(prev, cur);
        }
        const double lcs = static_cast<double>(prev[rl]);
        if (lcs == 0) continue;
        const double prec = lcs / static_cast<double>(hl);
        const double rec = lcs / static_cast<double>(rl);
        const double b2 = beta * beta;
        sum += (1.0 + b2) * rec * prec / (rec + b2 * prec);
    }
    return sum / static_cast<double>(pairs.size());
}

double cider_d(const std::vector<EvalPair>& pairs, double sigma) {
    if (pairs.empty()) throw ContractError("CIDEr over an empty corpus");
    constexpr int kOrders = 4;
    const double n_docs = static_cast<double>(pairs.size());

    // document frequencies over the reference corpus
    std::vector<NgramCounts> df(kOrders);
    for (const auto& p : pairs)
        for (int g = 0; g < kOrders; ++g)
            for (const auto& [key, c] : count_ngrams(p.ref, static_cast<size_t>(g + 1)))
                df[static_cast<size_t>(g)][key] += 1;

    auto tfidf = [&](const std::vector<std::string>& tokens, int g) {
        NgramCounts vec = count_ngrams(tokens, static_cast<size_t>(g + 1));
        double norm_sq = 0;
        for (auto& [key, c] : vec) {
            auto it = df[static_cast<size_t>(g)].find(key);
            const double d = it == df[static_cast<size_t>(g)].end() ? 0.0 : it->second;
            const double idf = std::log(n_docs) - std::log(std::max(1.0, d));
            c *= idf;
            norm_sq += c * c;
        }
        return std::make_pair(vec, std::sqrt(norm_sq));
    };

    double corpus = 0;
    for (const auto& p : pairs) {
        double pair_score = 0;
        const double delta = static_cast<double>(p.hyp.size()) - static_cast<double>(p.ref.size());
        const double penalty = std::exp(-delta * delta / (2.0 * sigma * sigma));
        for (int g = 0; g < kOrders; ++g) {
            auto [hv, hn] = tfidf(p.hyp, g);
            auto [rv, rn] = tfidf(p.ref, g);
            double dot = 0;
            for (const auto& [key, hw] : hv) {
                auto it = rv.find(key);
                if (it != rv.end()) dot += std::min(hw, it->second) * it->second;
            }
            if (hn > 0 && rn > 0) pair_score += penalty * dot / (hn * rn);
        }
        corpus += pair_score / kOrders * 10.0;
    }
    return corpus / n_docs;
}

nlohmann::json MetricReport::to_json() const {
    return nlohmann::json{{"bleu1", bleu1}, {"bleu2", bleu2},     {"bleu3", bleu3},
                          {"bleu4", bleu4}, {"rouge_l", rouge_l}, {"cider", cider},
                          {"count", count}};
}

MetricReport compute_metrics(const std::vector<EvalPair>& pairs) {
    MetricReport r;
    r.bleu1 = bleu(pairs, 1);
    r.bleu2 = bleu(pairs, 2);
    r.bleu3 = bleu(pairs, 3);
    r.bleu4 = bleu(pairs, 4);
    r.rouge_l = rouge_l(pairs);
    r.cider = cider_d(pairs);
    r.count = static_cast<int64_t>(pairs.size());
    return r;
}

namespace {

std::map<std::string, std::string> read_jsonl_responses(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    std::map<std::string, std::string> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json row;
        try {
            row = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        for (const char* field : {"dialogue_id", "turn", "response"})
            if (!row.contains(field))
                throw DataError(path + ":" + std::to_string(lineno) + ": missing \"" +
                                field + "\"");
        const std::string key =
            row["dialogue_id"].get<std::string>() + "#" + std::to_string(row["turn"].get<int64_t>());
        out[key] = row["response"].get<std::string>();
    }
    return out;
}

}  // namespace

MetricReport evaluate_files(const std::string& hyp_path, const std::string& ref_path) {
    const auto hyp = read_jsonl_responses(hyp_path);
    const auto ref = read_jsonl_responses(ref_path);
    std::vector<std::string> orphans;
    for (const auto& [key, text] : hyp)
        if (!ref.count(key)) orphans.push_back(key + " (hypothesis only)");
    for (const auto& [key, text] : ref)
        if (!hyp.count(key)) orphans.push_back(key + " (reference only)");
    if (!orphans.empty()) {
        std::string msg = "unmatched ids between " + hyp_path + " and " + ref_path + ":";
        for (const auto& o : orphans) msg += " " + o;
        throw DataError(msg);
    }
    std::vector<EvalPair> pairs;
    for (const auto& [key, text] : hyp)
        pairs.push_back({key, tokenize(text), tokenize(ref.at(key))});
    return compute_metrics(pairs);
}

}  // namespace mtn
