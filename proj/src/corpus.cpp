#include "nrs/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "nrs/errors.hpp"
#include "nrs/rng.hpp"

namespace nrs {

using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

Conversation parse_conversation(const json& rec, size_t line_no) {
  auto fail = [&](const std::string& msg) -> void {
    throw DataError("line " + std::to_string(line_no) + ": " + msg);
  };
  if (!rec.is_object()) fail("record is not a JSON object");
  Conversation conv;
  try {
    conv.id = rec.at("id").get<std::string>();
    conv.topic = rec.at("topic").get<std::string>();
    if (rec.contains("engine_open") && !rec.at("engine_open").is_null()) {
      conv.engine_open = rec.at("engine_open").get<std::string>();
    }
    for (const auto& jt : rec.at("turns")) {
      Turn turn;
      turn.user_query = jt.at("user").get<std::string>();
      turn.gold = jt.at("gold").get<std::string>();
      for (const auto& jc : jt.at("candidates")) {
        turn.candidates.push_back(
            {jc.at("agent").get<std::string>(), jc.at("text").get<std::string>()});
      }
      if (jt.contains("labels") && !jt.at("labels").is_null()) {
        turn.labels = jt.at("labels").get<std::vector<std::string>>();
      }
      conv.turns.push_back(std::move(turn));
    }
  } catch (const json::exception& e) {
    fail(std::string("schema error: ") + e.what());
  }

  if (conv.id.empty()) fail("empty conversation id");
  if (conv.turns.empty())
    fail("conversation '" + conv.id + "' has no turns");
  for (size_t t = 0; t < conv.turns.size(); ++t) {
    const Turn& turn = conv.turns[t];
    if (trim(turn.user_query).empty())
      fail("conversation '" + conv.id + "' turn " + std::to_string(t) +
           ": empty user query");
    std::unordered_set<std::string> ids;
    for (const auto& cand : turn.candidates) {
      if (!ids.insert(cand.agent_id).second)
        fail("conversation '" + conv.id + "' turn " + std::to_string(t) +
             ": duplicate agent_id '" + cand.agent_id + "'");
    }
    if (turn.labels) {
      for (const auto& label : *turn.labels) {
        if (!ids.count(label))
          fail("conversation '" + conv.id + "' turn " + std::to_string(t) +
               ": label references unknown agent_id '" + label + "'");
      }
    }
  }
  return conv;
}

}  // namespace

std::vector<Conversation> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file: " + path);
  std::vector<Conversation> convs;
  std::unordered_set<std::string> seen_ids;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError("line " + std::to_string(line_no) +
                      ": JSON parse error: " + e.what());
    }
    Conversation conv = parse_conversation(rec, line_no);
    if (!seen_ids.insert(conv.id).second)
      throw DataError("line " + std::to_string(line_no) +
                      ": duplicate conversation id '" + conv.id + "'");
    convs.push_back(std::move(conv));
  }
  return convs;
}

std::string serialize_conversation(const Conversation& conv) {
  json rec;
  rec["id"] = conv.id;
  rec["topic"] = conv.topic;
  rec["engine_open"] =
      conv.engine_open ? json(*conv.engine_open) : json(nullptr);
  json turns = json::array();
  for (const Turn& turn : conv.turns) {
    json jt;
    jt["user"] = turn.user_query;
    jt["gold"] = turn.gold;
    json cands = json::array();
    for (const Candidate& cand : turn.candidates) {
      cands.push_back({{"agent", cand.agent_id}, {"text", cand.text}});
    }
    jt["candidates"] = std::move(cands);
    jt["labels"] = turn.labels ? json(*turn.labels) : json(nullptr);
    turns.push_back(std::move(jt));
  }
  rec["turns"] = std::move(turns);
  return rec.dump();
}

void save_dataset(const std::vector<Conversation>& convs,
                  const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write dataset file: " + path);
  for (const Conversation& conv : convs) {
    out << serialize_conversation(conv) << '\n';
  }
  if (!out) throw IoError("write failure: " + path);
}

std::vector<std::string> realized_gold_sequence(const Conversation& conv) {
  std::vector<std::string> seq;
  if (conv.engine_open) seq.push_back(*conv.engine_open);
  for (const Turn& turn : conv.turns) {
    seq.push_back(turn.user_query);
    seq.push_back(turn.gold);
  }
  return seq;
}

std::vector<UtteranceInstance> build_utterance_instances(
    const Conversation& conv, int window) {
  if (window < 0) throw ConfigError("context window must be >= 0");
  std::vector<UtteranceInstance> out;
  std::vector<std::string> realized;
  if (conv.engine_open) realized.push_back(*conv.engine_open);
  for (const Turn& turn : conv.turns) {
    UtteranceInstance inst;
    size_t take = std::min<size_t>(window, realized.size());
    inst.context.assign(realized.end() - take, realized.end());
    inst.query = turn.user_query;
    inst.gold = turn.gold;
    inst.candidates = turn.candidates;
    out.push_back(std::move(inst));
    realized.push_back(turn.user_query);
    realized.push_back(turn.gold);
  }
  return out;
}

DatasetSplits split_dataset(const std::vector<Conversation>& convs,
                            double r_train, double r_valid, double r_test,
                            uint64_t seed) {
  if (r_train <= 0 || r_valid <= 0 || r_test <= 0)
    throw ConfigError("split ratios must be positive");
  if (std::fabs(r_train + r_valid + r_test - 1.0) > 1e-9)
    throw ConfigError("split ratios must sum to 1");

  // Group by topic, preserving first-appearance order.
  std::vector<std::string> topic_order;
  std::unordered_map<std::string, std::vector<size_t>> by_topic;
  for (size_t i = 0; i < convs.size(); ++i) {
    auto [it, inserted] = by_topic.try_emplace(convs[i].topic);
    if (inserted) topic_order.push_back(convs[i].topic);
    it->second.push_back(i);
  }

  DatasetSplits splits;
  for (const std::string& topic : topic_order) {
    std::vector<size_t> idx = by_topic.at(topic);
    size_t n = idx.size();
    if (n < 3) {
      for (size_t i : idx) splits.train.push_back(convs[i]);
      splits.warnings.push_back(topic);
      continue;
    }
    Rng rng(hash_combine(seed, fnv1a(topic)));
    rng.shuffle(idx);
    size_t n_test = std::max<size_t>(
        1, static_cast<size_t>(std::floor(n * r_test)));
    size_t n_valid = std::max<size_t>(
        1, static_cast<size_t>(std::floor(n * r_valid)));
    while (n_test + n_valid >= n) {
      if (n_test > 1) --n_test;
      else --n_valid;
    }
    for (size_t i = 0; i < n; ++i) {
      const Conversation& conv = convs[idx[i]];
      if (i < n_test) splits.test.push_back(conv);
      else if (i < n_test + n_valid) splits.valid.push_back(conv);
      else splits.train.push_back(conv);
    }
  }
  return splits;
}

std::vector<AgentSpec> GenConfig::default_roster() {
  return {
      {"para", AgentKind::kParaphrase, 0.8},
      {"ctxfree", AgentKind::kContextFree, 1.0},
      {"randcorp", AgentKind::kRandomCorpus, 1.0},
      {"offtopic", AgentKind::kOffTopic, 1.0},
      {"followup", AgentKind::kFollowUp, 1.0},
  };
}

std::string oracle_value(int topic, int slot, uint64_t seed) {
  uint64_t h = hash_combine(hash_combine(hash_combine(fnv1a("oracle"), seed),
                                         static_cast<uint64_t>(topic)),
                            static_cast<uint64_t>(slot));
  char buf[16];
  std::snprintf(buf, sizeof(buf), "v%08x",
                static_cast<uint32_t>(h & 0xffffffffULL));
  return buf;
}

bool oracle_correct(const std::string& text, int topic, int slot,
                    uint64_t seed) {
  std::vector<std::string> toks = split_ws(text);
  auto has = [&](const std::string& t) {
    return std::find(toks.begin(), toks.end(), t) != toks.end();
  };
  return has("t" + std::to_string(topic)) &&
         has("s" + std::to_string(slot)) &&
         has(oracle_value(topic, slot, seed));
}

bool query_is_self_contained(const std::string& query) {
  std::vector<std::string> toks = split_ws(query);
  return !toks.empty() && toks.front() == "topic";
}

namespace {

const char* kOffTopicPhrases[] = {
    "i had lunch already today",
    "my cat sleeps all afternoon",
    "it rained on my commute",
    "let us talk about music instead",
    "that reminds me of my holiday",
};

std::string answer_text(int topic, int slot, uint64_t seed) {
  return "topic t" + std::to_string(topic) + " answer s" +
         std::to_string(slot) + " " + oracle_value(topic, slot, seed);
}

std::string wrong_value_token(int topic, int slot, uint64_t seed) {
  std::string wrong = oracle_value(topic, slot, seed ^ 0x5bd1e995ULL);
  if (wrong == oracle_value(topic, slot, seed)) wrong += "x";
  return wrong;
}

}  // namespace

std::vector<Conversation> generate_synthetic(const GenConfig& config,
                                             uint64_t seed) {
  if (config.topics <= 0 || config.conversations_per_topic <= 0 ||
      config.mean_turns <= 0 || config.slots_per_topic <= 0)
    throw ConfigError("generator counts must be positive");
  if (config.turn_jitter < 0)
    throw ConfigError("turn_jitter must be >= 0");
  if (config.context_dependent_prob < 0 || config.context_dependent_prob > 1)
    throw ConfigError("context_dependent_prob must be in [0,1]");
  if (config.roster.empty()) throw ConfigError("agent roster is empty");
  {
    std::unordered_set<std::string> ids;
    for (const AgentSpec& agent : config.roster) {
      if (agent.id.empty() || !ids.insert(agent.id).second)
        throw ConfigError("agent ids must be non-empty and unique");
      if (agent.p_correct < 0 || agent.p_correct > 1)
        throw ConfigError("agent p_correct must be in [0,1] for '" +
                          agent.id + "'");
    }
  }

  std::vector<Conversation> convs;
  for (int topic = 0; topic < config.topics; ++topic) {
    for (int ci = 0; ci < config.conversations_per_topic; ++ci) {
      Rng rng(hash_combine(hash_combine(hash_u64(seed), topic), ci));
      Conversation conv;
      conv.id = "syn-t" + std::to_string(topic) + "-c" + std::to_string(ci);
      conv.topic = "t" + std::to_string(topic);
      if (ci % 2 == 0) conv.engine_open = "hello nice to meet you";

      int n_turns = config.mean_turns;
      if (config.turn_jitter > 0) {
        n_turns += static_cast<int>(rng.below(2 * config.turn_jitter + 1)) -
                   config.turn_jitter;
      }
      n_turns = std::max(1, n_turns);

      for (int t = 0; t < n_turns; ++t) {
        int slot = static_cast<int>(rng.below(config.slots_per_topic));
        bool self_contained =
            t == 0 || rng.next_unit() >= config.context_dependent_prob;
        Turn turn;
        std::string slot_tok = "s" + std::to_string(slot);
        std::string topic_tok = "t" + std::to_string(topic);
        turn.user_query = self_contained
                              ? "topic " + topic_tok + " ask " + slot_tok
                              : "ask " + slot_tok;
        turn.gold = answer_text(topic, slot, seed);

        for (const AgentSpec& agent : config.roster) {
          std::string text;
          switch (agent.kind) {
            case AgentKind::kParaphrase: {
              bool correct = rng.next_unit() < agent.p_correct;
              std::vector<std::string> toks = split_ws(turn.gold);
              if (!correct) toks.back() = wrong_value_token(topic, slot, seed);
              rng.shuffle(toks);
              for (size_t i = 0; i < toks.size(); ++i) {
                if (i) text += ' ';
                text += toks[i];
              }
              break;
            }
            case AgentKind::kContextFree: {
              if (self_contained) {
                text = turn.gold;
              } else {
                // Cannot see the history, so it guesses the topic.
                int guess = topic;
                if (config.topics > 1) {
                  guess = static_cast<int>(rng.below(config.topics - 1));
                  if (guess >= topic) ++guess;
                  text = answer_text(guess, slot, seed);
                } else {
                  text = "topic " + topic_tok + " answer " + slot_tok + " " +
                         wrong_value_token(topic, slot, seed);
                }
              }
              break;
            }
            case AgentKind::kRandomCorpus: {
              int rt = topic;
              int rs = static_cast<int>(rng.below(config.slots_per_topic));
              if (config.topics > 1) {
                rt = static_cast<int>(rng.below(config.topics - 1));
                if (rt >= topic) ++rt;
                text = answer_text(rt, rs, seed);
              } else if (config.slots_per_topic > 1) {
                rs = static_cast<int>(rng.below(config.slots_per_topic - 1));
                if (rs >= slot) ++rs;
                text = answer_text(rt, rs, seed);
              } else {
                text = "topic " + topic_tok + " answer " + slot_tok + " " +
                       wrong_value_token(topic, slot, seed);
              }
              break;
            }
            case AgentKind::kOffTopic: {
              size_t n = sizeof(kOffTopicPhrases) / sizeof(kOffTopicPhrases[0]);
              text = kOffTopicPhrases[rng.below(n)];
              break;
            }
            case AgentKind::kFollowUp: {
              text = "topic " + topic_tok + " ask " + slot_tok + " really";
              break;
            }
          }
          turn.candidates.push_back({agent.id, std::move(text)});
        }

        std::vector<std::string> labels;
        for (const Candidate& cand : turn.candidates) {
          if (oracle_correct(cand.text, topic, slot, seed))
            labels.push_back(cand.agent_id);
        }
        turn.labels = std::move(labels);
        conv.turns.push_back(std::move(turn));
      }
      convs.push_back(std::move(conv));
    }
  }
  return convs;
}

}  // namespace nrs
