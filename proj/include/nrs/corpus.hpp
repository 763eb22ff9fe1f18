#ifndef NRS_CORPUS_HPP_
#define NRS_CORPUS_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace nrs {

enum class Speaker { kUser, kEngine };

struct Utterance {
  Speaker speaker;
  std::string text;
};

struct Candidate {
  std::string agent_id;
  std::string text;
};

struct Turn {
  std::string user_query;
  std::string gold;
  std::vector<Candidate> candidates;
  // nullopt = unlabeled; empty = evaluator found no candidate correct.
  std::optional<std::vector<std::string>> labels;
};

struct Conversation {
  std::string id;
  std::string topic;
  std::optional<std::string> engine_open;
  std::vector<Turn> turns;
};

struct UtteranceInstance {
  std::vector<std::string> context;  // most recent last, length <= W
  std::string query;
  std::string gold;
  std::vector<Candidate> candidates;
};

struct DatasetSplits {
  std::vector<Conversation> train;
  std::vector<Conversation> valid;
  std::vector<Conversation> test;
  std::vector<std::string> warnings;  // topics too small to stratify
};

std::vector<Conversation> load_dataset(const std::string& path);
void save_dataset(const std::vector<Conversation>& convs,
                  const std::string& path);
std::string serialize_conversation(const Conversation& conv);

// Realized gold-history sequence: [engine_open?, q_0, g_0, q_1, g_1, ...].
std::vector<std::string> realized_gold_sequence(const Conversation& conv);

std::vector<UtteranceInstance> build_utterance_instances(
    const Conversation& conv, int window);

DatasetSplits split_dataset(const std::vector<Conversation>& convs,
                            double r_train, double r_valid, double r_test,
                            uint64_t seed);

enum class AgentKind {
  kParaphrase,    // correct with p_correct, token order permuted
  kContextFree,   // correct only on self-contained queries
  kRandomCorpus,  // answer lifted from an unrelated (topic, slot)
  kOffTopic,      // fixed chit-chat
  kFollowUp       // asks back instead of answering
};

struct AgentSpec {
  std::string id;
  AgentKind kind = AgentKind::kParaphrase;
  double p_correct = 1.0;  // only the paraphrase agent uses this
};

struct GenConfig {
  int topics = 10;
  int conversations_per_topic = 50;
  int mean_turns = 6;
  int turn_jitter = 2;
  int slots_per_topic = 5;
  double context_dependent_prob = 0.6;
  std::vector<AgentSpec> roster = default_roster();

  static std::vector<AgentSpec> default_roster();
};

// Deterministic value token bound to (topic, slot) under a generator seed.
std::string oracle_value(int topic, int slot, uint64_t seed);

// A candidate is correct iff it contains the topic, slot and value tokens.
bool oracle_correct(const std::string& text, int topic, int slot,
                    uint64_t seed);

std::vector<Conversation> generate_synthetic(const GenConfig& config,
                                             uint64_t seed);

// Topic token "t<i>" present among the query's tokens?
bool query_is_self_contained(const std::string& query);

}  // namespace nrs

#endif  // NRS_CORPUS_HPP_
