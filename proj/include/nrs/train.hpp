#ifndef NRS_TRAIN_HPP_
#define NRS_TRAIN_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nrs/corpus.hpp"
#include "nrs/embed.hpp"
#include "nrs/model.hpp"
#include "nrs/optim.hpp"
#include "nrs/rng.hpp"

namespace nrs {

struct TrainPlan {
  int t_utterance = 10;
  int t_conv_ss = 20;
  int t0 = 10;  // conversation/SS phase cutoff
  int window = 2;
  uint64_t seed = 1;
  int patience = 2;
  double delta = 1.0;
  bool gradual_unfreeze = true;
  LrSchedule lr;

  void validate() const;
};

// Mixing factor for SS epoch i of the combined conversation/SS run.
double mixing_factor(int epoch, int t0, int t_total);

struct EpochLog {
  std::string phase;
  int epoch = 0;
  std::optional<double> p;
  double lr = 0.0;
  long steps = 0;
  double mean_loss = 0.0;
  double valid_accuracy = 0.0;

  nlohmann::json to_json() const;
};

struct HistoryPolicy {
  enum class Kind { kGold, kAgent, kMixed };
  Kind kind = Kind::kGold;
  std::string agent_id;  // for kAgent
  double p = 0.0;        // for kMixed

  static HistoryPolicy gold() { return {}; }
  static HistoryPolicy agent(std::string id) {
    return {Kind::kAgent, std::move(id), 0.0};
  }
  static HistoryPolicy mixed(double p) { return {Kind::kMixed, "", p}; }
};

// Per-turn context lists under the given history policy. Mixed policy draws
// one uniform per engine slot; r <= p takes the model's argmax pick.
std::vector<std::vector<std::string>> rollout_history(
    const Conversation& conv, const HistoryPolicy& policy, int window,
    const ScorerParams* params = nullptr,
    const FeatureBuilder* features = nullptr, Rng* rng = nullptr);

std::vector<EpochLog> train_utterance_phase(
    const std::vector<Conversation>& train_set,
    const std::vector<Conversation>& valid_set, ScorerParams& params,
    AdamState& adam, const TrainPlan& plan, const FeatureBuilder& features);

struct ConvSsResult {
  std::vector<EpochLog> logs;
  // Snapshot at the end of the conversation phase (epoch t0, or at early
  // stop if that came first).
  ScorerParams conv_checkpoint;
};

ConvSsResult train_conversation_ss(const std::vector<Conversation>& train_set,
                                   const std::vector<Conversation>& valid_set,
                                   ScorerParams& params, AdamState& adam,
                                   const TrainPlan& plan,
                                   const FeatureBuilder& features);

}  // namespace nrs

#endif  // NRS_TRAIN_HPP_
