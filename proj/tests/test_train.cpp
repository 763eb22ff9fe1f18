#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "nrs/corpus.hpp"
#include "nrs/errors.hpp"
#include "nrs/train.hpp"

using namespace nrs;

namespace {

FeatureBuilder small_features(int window = 2, size_t k = 8) {
  return FeatureBuilder(std::make_shared<HashedEmbedder>(k, 1),
                        PoolingSpec{TokenPool::kAvg, Combine::kConcat},
                        window);
}

Conversation one_turn_conv(int n_candidates) {
  Conversation conv;
  conv.id = "c";
  conv.topic = "x";
  Turn turn;
  turn.user_query = "hello there";
  turn.gold = "general reply";
  for (int j = 0; j < n_candidates; ++j)
    turn.candidates.push_back(
        {"a" + std::to_string(j), "candidate number " + std::to_string(j)});
  turn.labels = std::vector<std::string>{};
  conv.turns.push_back(turn);
  return conv;
}

Conversation multi_turn_conv() {
  Conversation conv;
  conv.id = "m";
  conv.topic = "x";
  conv.engine_open = "open";
  for (int t = 0; t < 3; ++t) {
    Turn turn;
    turn.user_query = "query " + std::to_string(t);
    turn.gold = "gold " + std::to_string(t);
    turn.candidates = {{"a1", "alpha " + std::to_string(t)},
                       {"a2", "beta " + std::to_string(t)}};
    turn.labels = std::vector<std::string>{"a1"};
    conv.turns.push_back(turn);
  }
  return conv;
}

}  // namespace

TEST_CASE("mixing factor follows (i - t0) / (t - t0)") {
  CHECK(mixing_factor(11, 10, 20) == doctest::Approx(0.1));
  CHECK(mixing_factor(15, 10, 20) == doctest::Approx(0.5));
  CHECK(mixing_factor(20, 10, 20) == doctest::Approx(1.0));
  CHECK(mixing_factor(10, 10, 20) == 0.0);
  CHECK(mixing_factor(25, 10, 20) == 1.0);  // clamped
  CHECK_THROWS_AS(mixing_factor(5, 10, 10), ConfigError);
}

TEST_CASE("one instance with one candidate takes one optimizer step") {
  auto features = small_features();
  ScorerParams params = init_params(features.feature_dim(), 8, 3, 1);
  AdamState adam = AdamState::init(params);
  TrainPlan plan;
  plan.t_utterance = 1;
  std::vector<Conversation> train_set{one_turn_conv(1)};
  auto logs = train_utterance_phase(train_set, {}, params, adam, plan, features);
  REQUIRE(logs.size() == 1);
  CHECK(logs[0].steps == 1);
  CHECK(adam.step_count == 1);
}

TEST_CASE("five candidates take five optimizer steps per epoch") {
  auto features = small_features();
  ScorerParams params = init_params(features.feature_dim(), 8, 3, 1);
  AdamState adam = AdamState::init(params);
  TrainPlan plan;
  plan.t_utterance = 1;
  std::vector<Conversation> train_set{one_turn_conv(5)};
  auto logs = train_utterance_phase(train_set, {}, params, adam, plan, features);
  CHECK(logs[0].steps == 5);
  CHECK(adam.step_count == 5);
}

TEST_CASE("step count per epoch equals the sum of candidate counts") {
  GenConfig config;
  config.topics = 2;
  config.conversations_per_topic = 3;
  auto train_set = generate_synthetic(config, 6);
  long expected = 0;
  for (const auto& conv : train_set)
    for (const auto& turn : conv.turns) expected += turn.candidates.size();

  auto features = small_features();
  ScorerParams params = init_params(features.feature_dim(), 8, 3, 1);
  AdamState adam = AdamState::init(params);
  TrainPlan plan;
  plan.t_utterance = 2;
  auto logs = train_utterance_phase(train_set, {}, params, adam, plan, features);
  REQUIRE(logs.size() == 2);
  CHECK(logs[0].steps == expected);
  CHECK(logs[1].steps == expected);
}

TEST_CASE("training is bit-deterministic under a fixed seed") {
  GenConfig config;
  config.topics = 2;
  config.conversations_per_topic = 3;
  auto data = generate_synthetic(config, 6);
  auto splits = split_dataset(data, 0.6, 0.2, 0.2, 3);

  auto run = [&](ScorerParams& params) {
    auto features = small_features();
    AdamState adam = AdamState::init(params);
    TrainPlan plan;
    plan.t_utterance = 2;
    plan.t_conv_ss = 4;
    plan.t0 = 2;
    plan.patience = 10;
    plan.seed = 42;
    auto logs1 = train_utterance_phase(splits.train, splits.valid, params,
                                       adam, plan, features);
    auto result = train_conversation_ss(splits.train, splits.valid, params,
                                        adam, plan, features);
    return std::make_pair(logs1, result.logs);
  };

  auto features = small_features();
  ScorerParams p1 = init_params(features.feature_dim(), 8, 3, 9);
  ScorerParams p2 = p1;
  auto [ua, ca] = run(p1);
  auto [ub, cb] = run(p2);
  CHECK(p1.head_weights == p2.head_weights);
  for (size_t b = 0; b < 3; ++b)
    CHECK(p1.blocks[b].weights == p2.blocks[b].weights);
  REQUIRE(ua.size() == ub.size());
  for (size_t i = 0; i < ua.size(); ++i) {
    CHECK(ua[i].mean_loss == ub[i].mean_loss);
    CHECK(ua[i].valid_accuracy == ub[i].valid_accuracy);
  }
  REQUIRE(ca.size() == cb.size());
  for (size_t i = 0; i < ca.size(); ++i)
    CHECK(ca[i].mean_loss == cb[i].mean_loss);
}

TEST_CASE("gold rollout equals mixed(p=0)") {
  Conversation conv = multi_turn_conv();
  auto features = small_features();
  ScorerParams params = init_params(features.feature_dim(), 8, 3, 1);
  Rng rng(5);
  auto gold = rollout_history(conv, HistoryPolicy::gold(), 2);
  auto mixed = rollout_history(conv, HistoryPolicy::mixed(0.0), 2, &params,
                               &features, &rng);
  CHECK(gold == mixed);
  // gold contexts match the utterance-instance builder
  auto inst = build_utterance_instances(conv, 2);
  for (size_t t = 0; t < inst.size(); ++t) CHECK(gold[t] == inst[t].context);
}

TEST_CASE("mixed(p=1) uses the model's pick at every engine slot") {
  Conversation conv = multi_turn_conv();
  auto features = small_features();
  // Zero network: all scores tie, the first candidate (a1) wins.
  ScorerParams params = init_params(features.feature_dim(), 8, 3, 1);
  for (auto& block : params.blocks)
    std::fill(block.weights.begin(), block.weights.end(), 0.0);
  std::fill(params.head_weights.begin(), params.head_weights.end(), 0.0);
  Rng rng(5);
  auto contexts = rollout_history(conv, HistoryPolicy::mixed(1.0), 2, &params,
                                  &features, &rng);
  // turn 2 context = last two of [open, q0, alpha 0, q1, alpha 1]
  CHECK(contexts[2] == std::vector<std::string>{"query 1", "alpha 1"});
  auto agent1 = rollout_history(conv, HistoryPolicy::agent("a1"), 2);
  CHECK(contexts == agent1);
}

TEST_CASE("agent rollout threads that agent's own responses") {
  Conversation conv = multi_turn_conv();
  auto contexts = rollout_history(conv, HistoryPolicy::agent("a2"), 2);
  CHECK(contexts[1] == std::vector<std::string>{"query 0", "beta 0"});
  CHECK(contexts[2] == std::vector<std::string>{"query 1", "beta 1"});
  CHECK_THROWS_AS(rollout_history(conv, HistoryPolicy::agent("missing"), 2),
                  DataError);
}

TEST_CASE("mixed rollout selection frequency matches p") {
  Conversation conv;
  conv.id = "f";
  conv.topic = "x";
  for (int t = 0; t < 2; ++t) {
    Turn turn;
    turn.user_query = "q" + std::to_string(t);
    turn.gold = "gold";
    turn.candidates = {{"a", "agent"}};
    conv.turns.push_back(turn);
  }
  auto features = small_features(2, 4);
  ScorerParams params = init_params(features.feature_dim(), 4, 1, 1);
  Rng rng(77);
  const double p = 0.3;
  const int calls = 5000;  // 2 engine slots per call
  long model_picks = 0;
  for (int i = 0; i < calls; ++i) {
    auto contexts = rollout_history(conv, HistoryPolicy::mixed(p), 2, &params,
                                    &features, &rng);
    // The engine slot of turn 0 is visible in turn 1's context.
    if (contexts[1].back() == "agent") ++model_picks;
    // Rebuild turn-2-would-be context from realized turn 1: not visible;
    // count only the observable slot and call again.
  }
  double n = calls;
  double frac = model_picks / n;
  double sigma = std::sqrt(p * (1 - p) / n);
  CHECK(std::fabs(frac - p) <= 3 * sigma);
}

TEST_CASE("blocks 1 and 2 stay frozen during early conversation epochs") {
  GenConfig config;
  config.topics = 1;
  config.conversations_per_topic = 3;
  config.mean_turns = 3;
  config.turn_jitter = 0;
  auto train_set = generate_synthetic(config, 2);

  auto features = small_features();
  ScorerParams params = init_params(features.feature_dim(), 8, 3, 4);
  AdamState adam = AdamState::init(params);
  TrainPlan plan;
  plan.t_conv_ss = 2;  // both epochs below the unfreeze point
  plan.t0 = 1;
  plan.patience = 10;
  ScorerParams before = params;
  auto result = train_conversation_ss(train_set, {}, params, adam, plan,
                                      features);
  CHECK(params.blocks[0].weights == before.blocks[0].weights);
  CHECK(params.blocks[1].weights == before.blocks[1].weights);
  CHECK(params.blocks[2].weights != before.blocks[2].weights);
  REQUIRE(result.logs.size() == 2);
  CHECK(result.logs[0].phase == "conversation");
  CHECK_FALSE(result.logs[0].p.has_value());
  CHECK(result.logs[1].phase == "scheduled_sampling");
  CHECK(*result.logs[1].p == doctest::Approx(1.0));
}

TEST_CASE("separable single instance trains to zero hinge loss") {
  std::vector<Conversation> train_set{one_turn_conv(2)};
  auto features = small_features();
  ScorerParams params = init_params(features.feature_dim(), 8, 3, 3);
  AdamState adam = AdamState::init(params);
  TrainPlan plan;
  plan.t_utterance = 250;  // 2 steps per epoch, bounded by 500 total
  auto logs = train_utterance_phase(train_set, {}, params, adam, plan, features);
  CHECK(logs.back().mean_loss == 0.0);
}

TEST_CASE("empty train set is rejected") {
  auto features = small_features();
  ScorerParams params = init_params(features.feature_dim(), 8, 3, 1);
  AdamState adam = AdamState::init(params);
  TrainPlan plan;
  CHECK_THROWS_AS(
      train_utterance_phase({}, {}, params, adam, plan, features), DataError);
  CHECK_THROWS_AS(
      train_conversation_ss({}, {}, params, adam, plan, features), DataError);
}

TEST_CASE("invalid plans are rejected") {
  TrainPlan plan;
  plan.t0 = 20;
  plan.t_conv_ss = 10;
  CHECK_THROWS_AS(plan.validate(), ConfigError);
  plan = TrainPlan{};
  plan.patience = 0;
  CHECK_THROWS_AS(plan.validate(), ConfigError);
}
