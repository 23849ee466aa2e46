#include "zsslu/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace zsslu {

namespace {

// Two-row DP; the tests hold this against an independent full-matrix oracle.
template <typename Seq>
int edit_distance(const Seq& a, const Seq& b) {
  const int m = static_cast<int>(a.size()), n = static_cast<int>(b.size());
  std::vector<int> prev(n + 1), cur(n + 1);
  for (int j = 0; j <= n; ++j) prev[j] = j;
  for (int i = 1; i <= m; ++i) {
    cur[0] = i;
    for (int j = 1; j <= n; ++j) {
      if (a[i - 1] == b[j - 1]) {
        cur[j] = prev[j - 1];
      } else {
        cur[j] = 1 + std::min({prev[j], cur[j - 1], prev[j - 1]});
      }
    }
    std::swap(prev, cur);
  }
  return prev[n];
}

std::string normalize_value(const std::string& s) {
  std::string out;
  bool in_space = true;
  for (char raw : s) {
    char c = static_cast<char>(std::tolower(static_cast<unsigned char>(raw)));
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!in_space && !out.empty()) out.push_back(' ');
      in_space = true;
    } else {
      out.push_back(c);
      in_space = false;
    }
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> words;
  std::istringstream in(s);
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

double value_credit(const std::string& gold_raw, const std::string& pred_raw, MatchMode mode) {
  const std::string gold = normalize_value(gold_raw);
  const std::string pred = normalize_value(pred_raw);
  switch (mode) {
    case MatchMode::Exact:
      return gold == pred ? 1.0 : 0.0;
    case MatchMode::Word: {
      auto gw = split_words(gold), pw = split_words(pred);
      const size_t longest = std::max(gw.size(), pw.size());
      if (longest == 0) return 1.0;
      return std::max(0.0, 1.0 - static_cast<double>(edit_distance(gw, pw)) /
                               static_cast<double>(longest));
    }
    case MatchMode::Char: {
      const size_t longest = std::max(gold.size(), pred.size());
      if (longest == 0) return 1.0;
      return std::max(0.0, 1.0 - static_cast<double>(edit_distance(gold, pred)) /
                               static_cast<double>(longest));
    }
  }
  return 0.0;
}

PRF prf_from_credit(double credit, size_t n_gold, size_t n_pred) {
  if (n_gold == 0 && n_pred == 0) return PRF{1.0, 1.0, 1.0};
  if (n_gold == 0 || n_pred == 0) return PRF{0.0, 0.0, 0.0};
  PRF out;
  out.precision = credit / static_cast<double>(n_pred);
  out.recall = credit / static_cast<double>(n_gold);
  out.f1 = (out.precision + out.recall) > 0
               ? 2.0 * out.precision * out.recall / (out.precision + out.recall)
               : 0.0;
  return out;
}

double harmonic(double a, double b) { return (a > 0 && b > 0) ? 2.0 * a * b / (a + b) : 0.0; }

}  // namespace

int levenshtein_words(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  return edit_distance(a, b);
}

int levenshtein_chars(const std::string& a, const std::string& b) { return edit_distance(a, b); }

double wer(const std::vector<std::string>& reference, const std::vector<std::string>& hypothesis) {
  if (reference.empty()) {
    throw std::invalid_argument("wer: reference is empty");
  }
  return static_cast<double>(edit_distance(reference, hypothesis)) /
         static_cast<double>(reference.size());
}

double matching_credit(const std::vector<SLUEntity>& gold, const std::vector<SLUEntity>& pred,
                       MatchMode mode) {
  const size_t ns = std::min(gold.size(), pred.size());
  const size_t nl = std::max(gold.size(), pred.size());
  if (ns == 0) return 0.0;
  const bool gold_small = gold.size() <= pred.size();
  const auto& small = gold_small ? gold : pred;
  const auto& large = gold_small ? pred : gold;

  auto credit = [&](size_t li, size_t sj) {
    if (large[li].slot_id != small[sj].slot_id) return 0.0;
    return gold_small ? value_credit(small[sj].value, large[li].value, mode)
                      : value_credit(large[li].value, small[sj].value, mode);
  };

  // Exact maximum-credit one-to-one assignment via subset DP over the
  // smaller side. Entity counts per utterance are single digits, so the
  // 2^ns table stays tiny.
  if (ns > 20) {
    throw std::invalid_argument("matching_credit: more than 20 entities on both sides");
  }
  std::vector<double> dp(1ull << ns, 0.0);
  for (size_t li = 0; li < nl; ++li) {
    std::vector<double> next = dp;  // leaving large[li] unmatched
    for (size_t mask = 0; mask < dp.size(); ++mask) {
      for (size_t sj = 0; sj < ns; ++sj) {
        if (mask & (1ull << sj)) continue;
        double cand = dp[mask] + credit(li, sj);
        size_t nm = mask | (1ull << sj);
        if (cand > next[nm]) next[nm] = cand;
      }
    }
    dp = std::move(next);
  }
  double best = 0.0;
  for (double v : dp) best = std::max(best, v);
  return best;
}

PRF entity_f1(const std::vector<SLUEntity>& gold, const std::vector<SLUEntity>& pred,
              MatchMode mode) {
  return prf_from_credit(matching_credit(gold, pred, mode), gold.size(), pred.size());
}

double slu_f1(const std::vector<SLUEntity>& gold, const std::vector<SLUEntity>& pred) {
  return harmonic(entity_f1(gold, pred, MatchMode::Word).f1,
                  entity_f1(gold, pred, MatchMode::Char).f1);
}

bool perfect_parse(const SLUExample& gold, const PredictedUtterance& pred) {
  if (gold.intent_id != pred.intent_id) return false;
  auto canon = [](const std::vector<SLUEntity>& ents) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& e : ents) out.emplace_back(e.slot_id, normalize_value(e.value));
    std::sort(out.begin(), out.end());
    return out;
  };
  return canon(gold.entities) == canon(pred.entities);
}

double intent_accuracy(const std::vector<std::string>& golds,
                       const std::vector<std::string>& preds) {
  if (golds.size() != preds.size()) {
    throw std::invalid_argument("intent_accuracy: " + std::to_string(golds.size()) +
                                " golds vs " + std::to_string(preds.size()) + " predictions");
  }
  if (golds.empty()) return 0.0;
  int64_t hits = 0;
  for (size_t i = 0; i < golds.size(); ++i) hits += golds[i] == preds[i];
  return static_cast<double>(hits) / static_cast<double>(golds.size());
}

EvalReport evaluate(const std::vector<SLUExample>& golds,
                    const std::vector<PredictedUtterance>& preds) {
  if (golds.size() != preds.size()) {
    throw std::invalid_argument("evaluate: " + std::to_string(golds.size()) + " golds vs " +
                                std::to_string(preds.size()) + " predictions");
  }
  EvalReport report;
  report.n_utterances = static_cast<int64_t>(golds.size());

  int64_t edit_total = 0, ref_words = 0;
  double credit_exact = 0, credit_word = 0, credit_char = 0;
  double perfect = 0;
  std::vector<std::string> gold_intents, pred_intents;
  for (size_t i = 0; i < golds.size(); ++i) {
    auto ref = split_words(normalize_value(golds[i].transcript));
    auto hyp = split_words(normalize_value(preds[i].transcript));
    edit_total += levenshtein_words(ref, hyp);
    ref_words += static_cast<int64_t>(ref.size());

    report.n_gold_entities += static_cast<int64_t>(golds[i].entities.size());
    report.n_pred_entities += static_cast<int64_t>(preds[i].entities.size());
    credit_exact += matching_credit(golds[i].entities, preds[i].entities, MatchMode::Exact);
    credit_word += matching_credit(golds[i].entities, preds[i].entities, MatchMode::Word);
    credit_char += matching_credit(golds[i].entities, preds[i].entities, MatchMode::Char);
    perfect += perfect_parse(golds[i], preds[i]) ? 1.0 : 0.0;
    gold_intents.push_back(golds[i].intent_id);
    pred_intents.push_back(preds[i].intent_id);
  }
  report.wer = ref_words > 0 ? static_cast<double>(edit_total) / static_cast<double>(ref_words)
                             : 0.0;
  report.intent_accuracy = golds.empty() ? 0.0 : intent_accuracy(gold_intents, pred_intents);
  const size_t ng = static_cast<size_t>(report.n_gold_entities);
  const size_t np = static_cast<size_t>(report.n_pred_entities);
  report.f1_exact = prf_from_credit(credit_exact, ng, np).f1;
  report.f1_word = prf_from_credit(credit_word, ng, np).f1;
  report.f1_char = prf_from_credit(credit_char, ng, np).f1;
  report.slu_f1 = harmonic(report.f1_word, report.f1_char);
  report.perfect_parsing = golds.empty() ? 0.0 : perfect / static_cast<double>(golds.size());
  return report;
}

std::string eval_report_json(const EvalReport& r) {
  nlohmann::json j{{"wer", r.wer},
                   {"intent_accuracy", r.intent_accuracy},
                   {"f1_exact", r.f1_exact},
                   {"f1_word", r.f1_word},
                   {"f1_char", r.f1_char},
                   {"slu_f1", r.slu_f1},
                   {"perfect_parsing", r.perfect_parsing},
                   {"n_utterances", r.n_utterances},
                   {"n_gold_entities", r.n_gold_entities},
                   {"n_pred_entities", r.n_pred_entities}};
  return j.dump(2);
}

std::string eval_report_csv(const EvalReport& r) {
  std::ostringstream out;
  out << "wer,intent_accuracy,slu_f1,perfect_parsing\n";
  out << r.wer << "," << r.intent_accuracy << "," << r.slu_f1 << "," << r.perfect_parsing << "\n";
  return out.str();
}

}  // namespace zsslu
