#include "nrs/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nrs/errors.hpp"
#include "nrs/select.hpp"

namespace nrs {

using nlohmann::json;

void TrainPlan::validate() const {
  if (t_utterance < 1) throw ConfigError("plan: t_utterance must be >= 1");
  if (!(0 < t0 && t0 < t_conv_ss))
    throw ConfigError("plan: need 0 < t0 < t_conv_ss");
  if (window < 0) throw ConfigError("plan: window must be >= 0");
  if (patience < 1) throw ConfigError("plan: patience must be >= 1");
  if (delta < 0) throw ConfigError("plan: delta must be >= 0");
}

double mixing_factor(int epoch, int t0, int t_total) {
  if (t_total <= t0) throw ConfigError("mixing_factor: need t0 < t_total");
  double p = static_cast<double>(epoch - t0) / static_cast<double>(t_total - t0);
  return std::clamp(p, 0.0, 1.0);
}

json EpochLog::to_json() const {
  json out;
  out["phase"] = phase;
  out["epoch"] = epoch;
  out["p"] = p ? json(*p) : json(nullptr);
  out["lr"] = lr;
  out["steps"] = steps;
  out["mean_loss"] = mean_loss;
  out["valid_accuracy"] = valid_accuracy;
  return out;
}

std::vector<std::vector<std::string>> rollout_history(
    const Conversation& conv, const HistoryPolicy& policy, int window,
    const ScorerParams* params, const FeatureBuilder* features, Rng* rng) {
  if (policy.kind == HistoryPolicy::Kind::kMixed &&
      (params == nullptr || features == nullptr || rng == nullptr))
    throw ConfigError("mixed rollout needs a model, features and an rng");

  std::vector<std::vector<std::string>> contexts;
  std::vector<std::string> realized;
  if (conv.engine_open) realized.push_back(*conv.engine_open);
  for (size_t t = 0; t < conv.turns.size(); ++t) {
    const Turn& turn = conv.turns[t];
    size_t take = std::min<size_t>(window, realized.size());
    contexts.emplace_back(realized.end() - take, realized.end());
    realized.push_back(turn.user_query);

    std::string engine_slot;
    switch (policy.kind) {
      case HistoryPolicy::Kind::kGold:
        engine_slot = turn.gold;
        break;
      case HistoryPolicy::Kind::kAgent: {
        auto it = std::find_if(turn.candidates.begin(), turn.candidates.end(),
                               [&](const Candidate& c) {
                                 return c.agent_id == policy.agent_id;
                               });
        if (it == turn.candidates.end())
          throw DataError("conversation '" + conv.id + "' turn " +
                          std::to_string(t) + " has no candidate from agent '" +
                          policy.agent_id + "'");
        engine_slot = it->text;
        break;
      }
      case HistoryPolicy::Kind::kMixed: {
        double r = rng->next_unit();
        if (r <= policy.p && !turn.candidates.empty()) {
          auto [pick, scores] = select_best(*params, *features,
                                            contexts.back(), turn.user_query,
                                            turn.candidates);
          engine_slot = turn.candidates[pick].text;
        } else {
          engine_slot = turn.gold;
        }
        break;
      }
    }
    realized.push_back(std::move(engine_slot));
  }
  return contexts;
}

namespace {

struct StepScratch {
  Gradients grads;
  Gradients zeros;
};

double hinge_step(ScorerParams& params, AdamState& adam,
                  const FreezeMask& mask, const FeatureBuilder& features,
                  const std::vector<std::string>& context,
                  const std::string& query, const std::string& gold,
                  const std::string& candidate, double delta,
                  StepScratch& scratch) {
  auto [s_gold, tape_gold] =
      forward(params, features.features(context, query, gold));
  auto [s_agent, tape_agent] =
      forward(params, features.features(context, query, candidate));
  HingeResult h = hinge_loss(s_gold, s_agent, delta);
  if (h.loss > 0) {
    Gradients& g = scratch.grads;
    for (size_t b = 0; b < g.blocks.size(); ++b) {
      std::fill(g.blocks[b].weights.begin(), g.blocks[b].weights.end(), 0.0);
      std::fill(g.blocks[b].bias.begin(), g.blocks[b].bias.end(), 0.0);
    }
    std::fill(g.head_weights.begin(), g.head_weights.end(), 0.0);
    g.head_bias = 0.0;
    backward_accumulate(params, tape_gold, h.d_gold, g);
    backward_accumulate(params, tape_agent, h.d_agent, g);
    adam_step(adam, params, g, mask);
  } else {
    adam_step(adam, params, scratch.zeros, mask);
  }
  return h.loss;
}

double validation_accuracy(const ScorerParams& params,
                           const FeatureBuilder& features,
                           const std::vector<Conversation>& valid_set,
                           int window) {
  if (valid_set.empty()) return 0.0;
  return evaluate_oracle(model_selector(params, features), valid_set, window)
      .accuracy;
}

class EarlyStop {
 public:
  EarlyStop(bool enabled, int patience)
      : enabled_(enabled), patience_(patience) {}

  // Returns true when training should stop.
  bool observe(double accuracy) {
    if (!enabled_) return false;
    if (accuracy > best_ + 1e-12) {
      best_ = accuracy;
      stale_ = 0;
      return false;
    }
    return ++stale_ >= patience_;
  }

 private:
  bool enabled_;
  int patience_;
  double best_ = -1.0;
  int stale_ = 0;
};

}  // namespace

std::vector<EpochLog> train_utterance_phase(
    const std::vector<Conversation>& train_set,
    const std::vector<Conversation>& valid_set, ScorerParams& params,
    AdamState& adam, const TrainPlan& plan, const FeatureBuilder& features) {
  plan.validate();
  if (train_set.empty()) throw DataError("utterance phase: empty train set");

  std::vector<UtteranceInstance> instances;
  for (const Conversation& conv : train_set) {
    auto built = build_utterance_instances(conv, plan.window);
    instances.insert(instances.end(), std::make_move_iterator(built.begin()),
                     std::make_move_iterator(built.end()));
  }

  Rng rng(hash_combine(plan.seed, fnv1a("utterance")));
  FreezeMask mask = FreezeMask::all_trainable(params.n_blocks());
  StepScratch scratch{zeros_like(params), zeros_like(params)};
  EarlyStop stopper(!valid_set.empty(), plan.patience);
  std::vector<EpochLog> logs;

  std::vector<size_t> order(instances.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= plan.t_utterance; ++epoch) {
    adam.lr = lr_for(plan.lr, Phase::kUtterance, epoch);
    rng.shuffle(order);
    long steps = 0;
    double loss_sum = 0;
    for (size_t idx : order) {
      const UtteranceInstance& inst = instances[idx];
      for (const Candidate& cand : inst.candidates) {
        loss_sum += hinge_step(params, adam, mask, features, inst.context,
                               inst.query, inst.gold, cand.text, plan.delta,
                               scratch);
        ++steps;
      }
    }
    EpochLog log;
    log.phase = "utterance";
    log.epoch = epoch;
    log.lr = adam.lr;
    log.steps = steps;
    log.mean_loss = steps ? loss_sum / static_cast<double>(steps) : 0.0;
    log.valid_accuracy =
        validation_accuracy(params, features, valid_set, plan.window);
    logs.push_back(log);
    if (stopper.observe(log.valid_accuracy)) break;
  }
  return logs;
}

ConvSsResult train_conversation_ss(const std::vector<Conversation>& train_set,
                                   const std::vector<Conversation>& valid_set,
                                   ScorerParams& params, AdamState& adam,
                                   const TrainPlan& plan,
                                   const FeatureBuilder& features) {
  plan.validate();
  if (train_set.empty())
    throw DataError("conversation/SS phase: empty train set");

  Rng rng(hash_combine(plan.seed, fnv1a("conv_ss")));
  StepScratch scratch{zeros_like(params), zeros_like(params)};
  EarlyStop stopper(!valid_set.empty(), plan.patience);
  ConvSsResult result;
  bool snapshot_taken = false;

  std::vector<size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= plan.t_conv_ss; ++epoch) {
    adam.lr = lr_for(plan.lr, Phase::kConversation, epoch);
    FreezeMask mask = plan.gradual_unfreeze && epoch < plan.lr.drop_epoch
                          ? FreezeMask::last_block_and_head(params.n_blocks())
                          : FreezeMask::all_trainable(params.n_blocks());
    rng.shuffle(order);

    long steps = 0;
    double loss_sum = 0;
    bool ss = epoch > plan.t0;
    std::optional<double> p;
    if (ss) p = mixing_factor(epoch, plan.t0, plan.t_conv_ss);

    for (size_t ci : order) {
      const Conversation& conv = train_set[ci];
      if (!ss) {
        // Conversation phase: each agent trains against its own history.
        for (const Candidate& roster : conv.turns.front().candidates) {
          auto contexts = rollout_history(
              conv, HistoryPolicy::agent(roster.agent_id), plan.window);
          for (size_t t = 0; t < conv.turns.size(); ++t) {
            const Turn& turn = conv.turns[t];
            auto it = std::find_if(
                turn.candidates.begin(), turn.candidates.end(),
                [&](const Candidate& c) { return c.agent_id == roster.agent_id; });
            loss_sum += hinge_step(params, adam, mask, features, contexts[t],
                                   turn.user_query, turn.gold, it->text,
                                   plan.delta, scratch);
            ++steps;
          }
        }
      } else {
        // SS phase: one mixed rollout shared by all agents of a turn.
        auto contexts = rollout_history(conv, HistoryPolicy::mixed(*p),
                                        plan.window, &params, &features, &rng);
        for (size_t t = 0; t < conv.turns.size(); ++t) {
          const Turn& turn = conv.turns[t];
          for (const Candidate& cand : turn.candidates) {
            loss_sum += hinge_step(params, adam, mask, features, contexts[t],
                                   turn.user_query, turn.gold, cand.text,
                                   plan.delta, scratch);
            ++steps;
          }
        }
      }
    }

    EpochLog log;
    log.phase = ss ? "scheduled_sampling" : "conversation";
    log.epoch = epoch;
    log.p = p;
    log.lr = adam.lr;
    log.steps = steps;
    log.mean_loss = steps ? loss_sum / static_cast<double>(steps) : 0.0;
    log.valid_accuracy =
        validation_accuracy(params, features, valid_set, plan.window);
    result.logs.push_back(log);

    if (epoch == plan.t0) {
      result.conv_checkpoint = params;
      snapshot_taken = true;
    }
    if (stopper.observe(log.valid_accuracy)) break;
  }
  if (!snapshot_taken) result.conv_checkpoint = params;
  return result;
}

}  // namespace nrs
