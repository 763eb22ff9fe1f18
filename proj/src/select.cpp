#include "nrs/select.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "nrs/errors.hpp"

namespace nrs {

using nlohmann::json;

size_t argmax_stable(const std::vector<double>& scores) {
  if (scores.empty()) throw DataError("argmax of empty score list");
  size_t best = 0;
  for (size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  return best;
}

std::pair<size_t, std::vector<ScoredCandidate>> select_best(
    const ScorerParams& params, const FeatureBuilder& features,
    const std::vector<std::string>& context, const std::string& query,
    const std::vector<Candidate>& candidates) {
  if (candidates.empty()) throw DataError("select_best: no candidates");
  std::vector<ScoredCandidate> scored;
  std::vector<double> scores;
  scored.reserve(candidates.size());
  for (const Candidate& cand : candidates) {
    double s = forward_score(params, features.features(context, query, cand.text));
    scored.push_back({cand.agent_id, s});
    scores.push_back(s);
  }
  return {argmax_stable(scores), std::move(scored)};
}

double cosine(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) throw DataError("cosine: dimension mismatch");
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / std::max(std::sqrt(na) * std::sqrt(nb), 1e-8);
}

namespace {

Vec sentence_embedding(const EmbeddingProvider& provider,
                       const std::string& text) {
  return pool_tokens(provider.embed(tokenize(text)), TokenPool::kAvg);
}

std::vector<double> cosine_scores(const EmbeddingProvider& provider,
                                  const Vec& reference,
                                  const std::vector<Candidate>& candidates) {
  std::vector<double> scores;
  scores.reserve(candidates.size());
  for (const Candidate& cand : candidates)
    scores.push_back(cosine(reference, sentence_embedding(provider, cand.text)));
  return scores;
}

}  // namespace

size_t baseline_qr(const EmbeddingProvider& provider, const std::string& query,
                   const std::vector<Candidate>& candidates) {
  if (candidates.empty()) throw DataError("baseline_qr: no candidates");
  Vec ref = sentence_embedding(provider, query);
  return argmax_stable(cosine_scores(provider, ref, candidates));
}

size_t baseline_cqr(const EmbeddingProvider& provider,
                    const std::vector<std::string>& context,
                    const std::string& query,
                    const std::vector<Candidate>& candidates) {
  if (candidates.empty()) throw DataError("baseline_cqr: no candidates");
  Vec ref = sentence_embedding(provider, query);
  for (const std::string& text : context) {
    Vec u = sentence_embedding(provider, text);
    for (size_t d = 0; d < ref.size(); ++d) ref[d] += u[d];
  }
  double denom = static_cast<double>(context.size() + 1);
  for (double& x : ref) x /= denom;
  return argmax_stable(cosine_scores(provider, ref, candidates));
}

Selector model_selector(const ScorerParams& params,
                        const FeatureBuilder& features) {
  return [&params, &features](const std::vector<std::string>& context,
                              const std::string& query,
                              const std::vector<Candidate>& cands) {
    std::vector<double> scores;
    scores.reserve(cands.size());
    for (const Candidate& cand : cands)
      scores.push_back(
          forward_score(params, features.features(context, query, cand.text)));
    return scores;
  };
}

Selector qr_selector(std::shared_ptr<const EmbeddingProvider> provider) {
  return [provider](const std::vector<std::string>&, const std::string& query,
                    const std::vector<Candidate>& cands) {
    Vec ref = sentence_embedding(*provider, query);
    return cosine_scores(*provider, ref, cands);
  };
}

Selector cqr_selector(std::shared_ptr<const EmbeddingProvider> provider) {
  return [provider](const std::vector<std::string>& context,
                    const std::string& query,
                    const std::vector<Candidate>& cands) {
    Vec ref = sentence_embedding(*provider, query);
    for (const std::string& text : context) {
      Vec u = sentence_embedding(*provider, text);
      for (size_t d = 0; d < ref.size(); ++d) ref[d] += u[d];
    }
    double denom = static_cast<double>(context.size() + 1);
    for (double& x : ref) x /= denom;
    return cosine_scores(*provider, ref, cands);
  };
}

namespace {

// One protocol decision: scores the turn, applies the gold-injection rule.
SelectionRecord judge_turn(const Selector& selector,
                           const std::vector<std::string>& context,
                           const Turn& turn, const std::string& conv_id,
                           size_t turn_index) {
  if (!turn.labels)
    throw DataError("evaluation requires labels; conversation '" + conv_id +
                    "' turn " + std::to_string(turn_index) + " is unlabeled");
  SelectionRecord rec;
  rec.conversation_id = conv_id;
  rec.turn_index = turn_index;

  std::vector<Candidate> cands = turn.candidates;
  bool gold_fallback = turn.labels->empty();
  if (gold_fallback) cands.push_back({"gold", turn.gold});
  if (cands.empty())
    throw DataError("conversation '" + conv_id + "' turn " +
                    std::to_string(turn_index) + " has no candidates");

  std::vector<double> scores = selector(context, turn.user_query, cands);
  if (scores.size() != cands.size())
    throw DataError("selector returned wrong score count");
  size_t chosen = argmax_stable(scores);
  rec.chosen = cands[chosen].agent_id;
  for (size_t i = 0; i < cands.size(); ++i)
    rec.scores.push_back({cands[i].agent_id, scores[i]});
  if (gold_fallback) {
    rec.correct = rec.chosen == "gold";
  } else {
    rec.correct = std::find(turn.labels->begin(), turn.labels->end(),
                            rec.chosen) != turn.labels->end();
  }
  return rec;
}

EvalReport finalize_report(std::vector<SelectionRecord> records) {
  EvalReport report;
  report.records = std::move(records);
  report.n = report.records.size();
  for (const SelectionRecord& rec : report.records)
    if (rec.correct) ++report.correct;
  report.accuracy =
      report.n == 0 ? 0.0
                    : static_cast<double>(report.correct) /
                          static_cast<double>(report.n);
  if (report.n > 0) {
    auto [lo, hi] = clopper_pearson(report.correct, report.n);
    report.ci_lo = lo;
    report.ci_hi = hi;
  }
  return report;
}

}  // namespace

EvalReport evaluate_oracle(const Selector& selector,
                           const std::vector<Conversation>& convs,
                           int window) {
  std::vector<SelectionRecord> records;
  for (const Conversation& conv : convs) {
    auto instances = build_utterance_instances(conv, window);
    for (size_t t = 0; t < conv.turns.size(); ++t) {
      records.push_back(judge_turn(selector, instances[t].context,
                                   conv.turns[t], conv.id, t));
    }
  }
  return finalize_report(std::move(records));
}

EvalReport evaluate_rollout(const ScorerParams& params,
                            const FeatureBuilder& features,
                            const std::vector<Conversation>& convs) {
  Selector selector = model_selector(params, features);
  int window = features.window();
  std::vector<SelectionRecord> records;
  for (const Conversation& conv : convs) {
    std::vector<std::string> realized;
    if (conv.engine_open) realized.push_back(*conv.engine_open);
    for (size_t t = 0; t < conv.turns.size(); ++t) {
      const Turn& turn = conv.turns[t];
      size_t take = std::min<size_t>(window, realized.size());
      std::vector<std::string> context(realized.end() - take, realized.end());
      records.push_back(judge_turn(selector, context, turn, conv.id, t));

      // History advances with the model's own pick among agent candidates.
      auto [pick, scores] =
          select_best(params, features, context, turn.user_query,
                      turn.candidates);
      realized.push_back(turn.user_query);
      realized.push_back(turn.candidates[pick].text);
    }
  }
  return finalize_report(std::move(records));
}

json EvalReport::to_json(bool with_records) const {
  json out;
  out["n"] = n;
  out["correct"] = correct;
  out["accuracy"] = accuracy;
  out["ci95"] = {ci_lo, ci_hi};
  if (with_records) {
    json recs = json::array();
    for (const SelectionRecord& rec : records) {
      json jr;
      jr["conversation"] = rec.conversation_id;
      jr["turn"] = rec.turn_index;
      jr["chosen"] = rec.chosen;
      jr["correct"] = rec.correct;
      json scores = json::array();
      for (const ScoredCandidate& sc : rec.scores)
        scores.push_back({{"agent", sc.agent_id}, {"score", sc.score}});
      jr["scores"] = std::move(scores);
      recs.push_back(std::move(jr));
    }
    out["records"] = std::move(recs);
  }
  return out;
}

namespace {

// log P(Bin(n,p) = k)
double log_binom_pmf(size_t k, size_t n, double p) {
  if (p <= 0.0) return k == 0 ? 0.0 : -INFINITY;
  if (p >= 1.0) return k == n ? 0.0 : -INFINITY;
  double lc = std::lgamma(static_cast<double>(n) + 1) -
              std::lgamma(static_cast<double>(k) + 1) -
              std::lgamma(static_cast<double>(n - k) + 1);
  return lc + static_cast<double>(k) * std::log(p) +
         static_cast<double>(n - k) * std::log1p(-p);
}

double binom_tail_ge(size_t k, size_t n, double p) {
  double sum = 0;
  for (size_t i = k; i <= n; ++i) sum += std::exp(log_binom_pmf(i, n, p));
  return std::min(sum, 1.0);
}

double binom_tail_le(size_t k, size_t n, double p) {
  double sum = 0;
  for (size_t i = 0; i <= k; ++i) sum += std::exp(log_binom_pmf(i, n, p));
  return std::min(sum, 1.0);
}

}  // namespace

std::pair<double, double> clopper_pearson(size_t successes, size_t trials,
                                          double alpha) {
  if (trials < 1 || successes > trials)
    throw ConfigError("clopper_pearson: need 0 <= k <= n, n >= 1");
  if (alpha <= 0 || alpha >= 1)
    throw ConfigError("clopper_pearson: alpha must be in (0,1)");
  double half = alpha / 2.0;

  double lo = 0.0;
  if (successes > 0) {
    // P(Bin(n,p) >= k) grows with p; find p with tail == alpha/2.
    double a = 0.0, b = 1.0;
    while (b - a > 1e-10) {
      double mid = 0.5 * (a + b);
      if (binom_tail_ge(successes, trials, mid) < half) a = mid;
      else b = mid;
    }
    lo = 0.5 * (a + b);
  }
  double hi = 1.0;
  if (successes < trials) {
    // P(Bin(n,p) <= k) shrinks with p.
    double a = 0.0, b = 1.0;
    while (b - a > 1e-10) {
      double mid = 0.5 * (a + b);
      if (binom_tail_le(successes, trials, mid) > half) a = mid;
      else b = mid;
    }
    hi = 0.5 * (a + b);
  }
  return {lo, hi};
}

bool significantly_different(const EvalReport& a, const EvalReport& b) {
  return a.ci_hi < b.ci_lo || b.ci_hi < a.ci_lo;
}

double cohens_kappa(
    const std::vector<std::pair<std::string, std::string>>& pairs) {
  if (pairs.empty()) throw DataError("cohens_kappa: empty input");
  std::unordered_map<std::string, double> marg_a, marg_b;
  double agree = 0;
  for (const auto& [la, lb] : pairs) {
    marg_a[la] += 1;
    marg_b[lb] += 1;
    if (la == lb) agree += 1;
  }
  double n = static_cast<double>(pairs.size());
  double p_o = agree / n;
  double p_e = 0;
  for (const auto& [label, ca] : marg_a) {
    auto it = marg_b.find(label);
    if (it != marg_b.end()) p_e += (ca / n) * (it->second / n);
  }
  if (1.0 - p_e < 1e-15) {
    if (p_o >= 1.0 - 1e-15) return 1.0;
    throw DataError("cohens_kappa: degenerate marginals with disagreement");
  }
  return (p_o - p_e) / (1.0 - p_e);
}

}  // namespace nrs
