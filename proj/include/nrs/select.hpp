#ifndef NRS_SELECT_HPP_
#define NRS_SELECT_HPP_

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "nrs/corpus.hpp"
#include "nrs/embed.hpp"
#include "nrs/model.hpp"

namespace nrs {

struct ScoredCandidate {
  std::string agent_id;
  double score = 0.0;
};

// Argmax over candidate scores; ties go to the lowest index.
std::pair<size_t, std::vector<ScoredCandidate>> select_best(
    const ScorerParams& params, const FeatureBuilder& features,
    const std::vector<std::string>& context, const std::string& query,
    const std::vector<Candidate>& candidates);

double cosine(const Vec& a, const Vec& b);

size_t baseline_qr(const EmbeddingProvider& provider, const std::string& query,
                   const std::vector<Candidate>& candidates);

size_t baseline_cqr(const EmbeddingProvider& provider,
                    const std::vector<std::string>& context,
                    const std::string& query,
                    const std::vector<Candidate>& candidates);

struct SelectionRecord {
  std::string conversation_id;
  size_t turn_index = 0;
  std::string chosen;  // agent_id or "gold"
  std::vector<ScoredCandidate> scores;
  bool correct = false;
};

struct EvalReport {
  size_t n = 0;
  size_t correct = 0;
  double accuracy = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 1.0;
  std::vector<SelectionRecord> records;

  nlohmann::json to_json(bool with_records = true) const;
};

// A selector returns one score per candidate; the evaluation harness takes
// the argmax with lowest-index tie-breaking.
using Selector = std::function<std::vector<double>(
    const std::vector<std::string>& context, const std::string& query,
    const std::vector<Candidate>& cands)>;

size_t argmax_stable(const std::vector<double>& scores);

Selector model_selector(const ScorerParams& params,
                        const FeatureBuilder& features);
Selector qr_selector(std::shared_ptr<const EmbeddingProvider> provider);
Selector cqr_selector(std::shared_ptr<const EmbeddingProvider> provider);

// Oracle protocol over gold-history contexts. Every turn must carry labels;
// empty labels inject the gold response as pseudo-candidate "gold".
EvalReport evaluate_oracle(const Selector& selector,
                           const std::vector<Conversation>& convs, int window);

// Same protocol, but contexts come from the model's own roll-out: each engine
// slot in the history is the model's argmax pick among agent candidates.
EvalReport evaluate_rollout(const ScorerParams& params,
                            const FeatureBuilder& features,
                            const std::vector<Conversation>& convs);

std::pair<double, double> clopper_pearson(size_t successes, size_t trials,
                                          double alpha = 0.05);

// Disjoint 95% intervals => significant difference.
bool significantly_different(const EvalReport& a, const EvalReport& b);

double cohens_kappa(
    const std::vector<std::pair<std::string, std::string>>& pairs);

}  // namespace nrs

#endif  // NRS_SELECT_HPP_
