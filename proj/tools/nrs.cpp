#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>

#include <CLI11.hpp>
#include <json.hpp>

#include "nrs/config.hpp"
#include "nrs/corpus.hpp"
#include "nrs/embed.hpp"
#include "nrs/errors.hpp"
#include "nrs/model.hpp"
#include "nrs/optim.hpp"
#include "nrs/select.hpp"
#include "nrs/serve.hpp"
#include "nrs/train.hpp"

using nlohmann::json;

namespace {

nrs::AgentKind agent_kind_from_string(const std::string& name) {
  if (name == "paraphrase") return nrs::AgentKind::kParaphrase;
  if (name == "context_free") return nrs::AgentKind::kContextFree;
  if (name == "random_corpus") return nrs::AgentKind::kRandomCorpus;
  if (name == "off_topic") return nrs::AgentKind::kOffTopic;
  if (name == "follow_up") return nrs::AgentKind::kFollowUp;
  throw nrs::ConfigError("unknown agent kind: " + name);
}

nrs::GenConfig gen_config_from_json(const json& j) {
  nrs::GenConfig config;
  if (j.is_null()) return config;
  config.topics = j.value("topics", config.topics);
  config.conversations_per_topic =
      j.value("conversations_per_topic", config.conversations_per_topic);
  config.mean_turns = j.value("mean_turns", config.mean_turns);
  config.turn_jitter = j.value("turn_jitter", config.turn_jitter);
  config.slots_per_topic = j.value("slots_per_topic", config.slots_per_topic);
  config.context_dependent_prob =
      j.value("context_dependent_prob", config.context_dependent_prob);
  if (j.contains("roster")) {
    config.roster.clear();
    for (const json& ja : j.at("roster")) {
      nrs::AgentSpec agent;
      agent.id = ja.at("id").get<std::string>();
      agent.kind = agent_kind_from_string(ja.value("kind", "paraphrase"));
      agent.p_correct = ja.value("p_correct", 1.0);
      config.roster.push_back(std::move(agent));
    }
  }
  return config;
}

nrs::TrainPlan plan_from_json(const json& j) {
  nrs::TrainPlan plan;
  if (j.is_null()) return plan;
  plan.t_utterance = j.value("t_utterance", plan.t_utterance);
  plan.t_conv_ss = j.value("t_conv_ss", plan.t_conv_ss);
  plan.t0 = j.value("t0", plan.t0);
  plan.window = j.value("window", plan.window);
  plan.seed = j.value("seed", plan.seed);
  plan.patience = j.value("patience", plan.patience);
  plan.delta = j.value("delta", plan.delta);
  plan.gradual_unfreeze = j.value("gradual_unfreeze", plan.gradual_unfreeze);
  if (j.contains("lr")) {
    const json& lr = j.at("lr");
    plan.lr.utterance_lr = lr.value("utterance", plan.lr.utterance_lr);
    plan.lr.conv_early_lr = lr.value("conv_early", plan.lr.conv_early_lr);
    plan.lr.conv_late_lr = lr.value("conv_late", plan.lr.conv_late_lr);
    plan.lr.drop_epoch = lr.value("drop_epoch", plan.lr.drop_epoch);
  }
  return plan;
}

struct SplitSettings {
  double train = 0.8, valid = 0.1, test = 0.1;
  uint64_t seed = 7;
};

SplitSettings split_from_json(const json& j) {
  SplitSettings s;
  if (j.is_null()) return s;
  s.train = j.value("train", s.train);
  s.valid = j.value("valid", s.valid);
  s.test = j.value("test", s.test);
  s.seed = j.value("seed", s.seed);
  return s;
}

json load_config_or_empty(const std::string& path) {
  if (path.empty()) return json(nullptr);
  return nrs::load_json_file(path);
}

json value_or_null(const json& config, const char* key) {
  if (config.is_object() && config.contains(key)) return config.at(key);
  return json(nullptr);
}

int cmd_gen_data(const std::string& config_path, uint64_t seed,
                 const std::string& out_path) {
  json config_json = load_config_or_empty(config_path);
  nrs::GenConfig config = gen_config_from_json(config_json);
  std::vector<nrs::Conversation> convs = nrs::generate_synthetic(config, seed);
  nrs::save_dataset(convs, out_path);

  std::map<std::string, size_t> per_topic;
  size_t turns = 0;
  for (const nrs::Conversation& conv : convs) {
    per_topic[conv.topic] += 1;
    turns += conv.turns.size();
  }
  json manifest;
  manifest["conversations"] = convs.size();
  manifest["turns"] = turns;
  manifest["topics"] = per_topic;
  json agents = json::array();
  for (const nrs::AgentSpec& agent : config.roster) agents.push_back(agent.id);
  manifest["agents"] = std::move(agents);
  manifest["seed"] = seed;

  std::ofstream mf(out_path + ".manifest.json");
  if (!mf) throw nrs::IoError("cannot write manifest for " + out_path);
  mf << manifest.dump(2) << '\n';
  std::cout << manifest.dump() << std::endl;
  return 0;
}

json checkpoint_meta(const json& provider_settings,
                     const nrs::FeatureBuilder& features, uint64_t seed,
                     const std::vector<std::string>& phases) {
  json meta;
  meta["k"] = features.embed_dim();
  meta["window"] = features.window();
  meta["pooling"] = nrs::pooling_to_json(features.spec());
  meta["provider"] = provider_settings;
  meta["seed"] = seed;
  meta["phases"] = phases;
  return meta;
}

int cmd_train(const std::string& config_path, const std::string& data_path,
              const std::string& out_prefix, const std::string& skip_phases) {
  json config = load_config_or_empty(config_path);
  nrs::TrainPlan plan = plan_from_json(value_or_null(config, "plan"));
  plan.validate();
  SplitSettings split = split_from_json(value_or_null(config, "split"));
  json provider_settings =
      nrs::provider_settings_or_default(value_or_null(config, "provider"));
  auto provider = nrs::make_provider(provider_settings);
  nrs::PoolingSpec pooling =
      nrs::pooling_from_json(value_or_null(config, "pooling"));

  bool skip_conv = skip_phases.find("conv") != std::string::npos;
  bool skip_ss = skip_phases.find("ss") != std::string::npos;
  if (skip_conv != skip_ss)
    throw nrs::ConfigError(
        "conversation and SS phases form one loop; skip both or neither");

  std::vector<nrs::Conversation> convs = nrs::load_dataset(data_path);
  nrs::DatasetSplits splits =
      nrs::split_dataset(convs, split.train, split.valid, split.test,
                         split.seed);

  nrs::FeatureBuilder features(provider, pooling, plan.window);
  nrs::ScorerParams params =
      nrs::init_params(features.feature_dim(), 128, 3, plan.seed);
  nrs::AdamState adam = nrs::AdamState::init(params);

  std::ofstream log_out(out_prefix + ".log.jsonl");
  if (!log_out) throw nrs::IoError("cannot write log: " + out_prefix);
  auto append_logs = [&](const std::vector<nrs::EpochLog>& logs) {
    for (const nrs::EpochLog& log : logs)
      log_out << log.to_json().dump() << '\n';
    log_out.flush();
  };

  std::vector<std::string> phases = {"utterance"};
  auto utt_logs = nrs::train_utterance_phase(splits.train, splits.valid,
                                             params, adam, plan, features);
  append_logs(utt_logs);
  nrs::save_checkpoint(out_prefix + ".utt", params,
                       checkpoint_meta(provider_settings, features, plan.seed,
                                       phases));
  std::cerr << "utterance phase done: " << utt_logs.size() << " epochs\n";

  if (!skip_conv && !skip_ss) {
    auto result = nrs::train_conversation_ss(splits.train, splits.valid,
                                             params, adam, plan, features);
    append_logs(result.logs);
    phases.push_back("conversation");
    nrs::save_checkpoint(out_prefix + ".conv", result.conv_checkpoint,
                         checkpoint_meta(provider_settings, features,
                                         plan.seed, phases));
    phases.push_back("scheduled_sampling");
    nrs::save_checkpoint(out_prefix + ".ss", params,
                         checkpoint_meta(provider_settings, features,
                                         plan.seed, phases));
    std::cerr << "conversation/SS phases done: " << result.logs.size()
              << " epochs\n";
  }
  return 0;
}

std::vector<nrs::Conversation> pick_split(const nrs::DatasetSplits& splits,
                                          const std::string& name,
                                          const std::vector<nrs::Conversation>& all) {
  if (name == "train") return splits.train;
  if (name == "valid") return splits.valid;
  if (name == "test") return splits.test;
  if (name == "all") return all;
  throw nrs::ConfigError("unknown split: " + name);
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint,
             const std::string& baseline, const std::string& data_path,
             const std::string& split_name, const std::string& out_path,
             const std::string& compare_path, bool with_records) {
  json config = load_config_or_empty(config_path);
  SplitSettings split = split_from_json(value_or_null(config, "split"));
  std::vector<nrs::Conversation> convs = nrs::load_dataset(data_path);
  nrs::DatasetSplits splits =
      nrs::split_dataset(convs, split.train, split.valid, split.test,
                         split.seed);
  std::vector<nrs::Conversation> eval_set =
      pick_split(splits, split_name, convs);

  nrs::EvalReport report;
  if (!checkpoint.empty()) {
    auto [params, meta] = nrs::load_checkpoint(checkpoint);
    auto provider = nrs::make_provider(nrs::provider_settings_or_default(
        meta.value("provider", json())));
    nrs::FeatureBuilder features(
        provider, nrs::pooling_from_json(meta.value("pooling", json())),
        meta.value("window", 2));
    if (features.feature_dim() != params.input_dim)
      throw nrs::ConfigError("checkpoint metadata inconsistent with shapes");
    report = nrs::evaluate_oracle(nrs::model_selector(params, features),
                                  eval_set, features.window());
  } else {
    json provider_settings =
        nrs::provider_settings_or_default(value_or_null(config, "provider"));
    auto provider = nrs::make_provider(provider_settings);
    int window = plan_from_json(value_or_null(config, "plan")).window;
    nrs::Selector selector = baseline == "qr" ? nrs::qr_selector(provider)
                                              : nrs::cqr_selector(provider);
    report = nrs::evaluate_oracle(selector, eval_set, window);
  }

  json out = report.to_json(with_records);
  if (!compare_path.empty()) {
    json other = nrs::load_json_file(compare_path);
    nrs::EvalReport other_report;
    other_report.ci_lo = other.at("ci95").at(0).get<double>();
    other_report.ci_hi = other.at("ci95").at(1).get<double>();
    out["significant_vs_compare"] =
        nrs::significantly_different(report, other_report);
  }
  std::cout << out.dump() << std::endl;
  if (!out_path.empty()) {
    std::ofstream f(out_path);
    if (!f) throw nrs::IoError("cannot write report: " + out_path);
    f << out.dump(2) << '\n';
  }
  return 0;
}

int cmd_select(const std::string& checkpoint, const std::string& history_path,
               const std::string& query, const std::string& candidates_path) {
  auto [params, meta] = nrs::load_checkpoint(checkpoint);
  auto provider = nrs::make_provider(
      nrs::provider_settings_or_default(meta.value("provider", json())));
  nrs::FeatureBuilder features(
      provider, nrs::pooling_from_json(meta.value("pooling", json())),
      meta.value("window", 2));
  if (features.feature_dim() != params.input_dim)
    throw nrs::ConfigError("checkpoint metadata inconsistent with shapes");

  std::vector<std::string> history;
  if (!history_path.empty()) {
    json jh = nrs::load_json_file(history_path);
    for (const json& ju : jh) history.push_back(ju.at("text").get<std::string>());
  }
  json jc = nrs::load_json_file(candidates_path);
  std::vector<nrs::Candidate> candidates;
  for (const json& cand : jc)
    candidates.push_back({cand.at("agent").get<std::string>(),
                          cand.at("text").get<std::string>()});
  if (candidates.empty()) throw nrs::DataError("empty candidate list");

  size_t take = std::min<size_t>(features.window(), history.size());
  std::vector<std::string> context(history.end() - take, history.end());
  auto [pick, scored] =
      nrs::select_best(params, features, context, query, candidates);
  json scores = json::array();
  for (const nrs::ScoredCandidate& sc : scored)
    scores.push_back({{"agent", sc.agent_id}, {"score", sc.score}});
  json out = {{"selected",
               {{"agent", candidates[pick].agent_id},
                {"text", candidates[pick].text}}},
              {"scores", std::move(scores)}};
  std::cout << out.dump() << std::endl;
  return 0;
}

nrs::SelectionService* g_service = nullptr;

int cmd_serve(const std::string& config_path) {
  json config = nrs::load_json_file(config_path);
  nrs::SelectionService service(nrs::ServiceConfig::from_json(config));
  g_service = &service;
  std::signal(SIGHUP, [](int) {
    if (g_service) {
      try {
        g_service->reload_checkpoint();
      } catch (const std::exception& e) {
        std::fprintf(stderr, "reload failed: %s\n", e.what());
      }
    }
  });
  service.run();
  g_service = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ensemble response selection toolkit"};
  app.require_subcommand(1);

  std::string config_path, data_path, out_path, seed_str;
  uint64_t seed = 1;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen->add_option("--config", config_path, "generator config JSON");
  gen->add_option("--seed", seed, "generator seed");
  gen->add_option("--out", out_path, "output JSONL path")->required();

  std::string skip_phases;
  auto* train = app.add_subcommand("train", "run the training curriculum");
  train->add_option("--config", config_path, "run config JSON");
  train->add_option("--data", data_path, "dataset JSONL")->required();
  train->add_option("--out", out_path, "checkpoint prefix")->required();
  train->add_option("--skip-phases", skip_phases,
                    "comma list of phases to skip (conv,ss)");

  std::string checkpoint, baseline, split_name = "test", compare_path,
              report_path;
  bool with_records = false;
  auto* eval = app.add_subcommand("eval", "evaluate a selector");
  eval->add_option("--config", config_path, "run config JSON");
  eval->add_option("--checkpoint", checkpoint, "model checkpoint");
  eval->add_option("--baseline", baseline, "qr or cqr");
  eval->add_option("--data", data_path, "dataset JSONL")->required();
  eval->add_option("--split", split_name, "train|valid|test|all");
  eval->add_option("--out", report_path, "report output path");
  eval->add_option("--compare", compare_path, "report JSON to compare against");
  eval->add_flag("--records", with_records, "include per-instance records");

  std::string history_path, query, candidates_path;
  auto* select = app.add_subcommand("select", "score one candidate set");
  select->add_option("--checkpoint", checkpoint, "model checkpoint")
      ->required();
  select->add_option("--history", history_path, "history JSON file");
  select->add_option("--query", query, "user query")->required();
  select->add_option("--candidates", candidates_path, "candidates JSON file")
      ->required();

  auto* serve = app.add_subcommand("serve", "run the orchestration service");
  serve->add_option("--config", config_path, "service config JSON")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(config_path, seed, out_path);
    if (train->parsed())
      return cmd_train(config_path, data_path, out_path, skip_phases);
    if (eval->parsed()) {
      if (checkpoint.empty() == baseline.empty())
        throw nrs::ConfigError("eval needs exactly one of --checkpoint/--baseline");
      if (!baseline.empty() && baseline != "qr" && baseline != "cqr")
        throw nrs::ConfigError("--baseline must be qr or cqr");
      return cmd_eval(config_path, checkpoint, baseline, data_path, split_name,
                      report_path, compare_path, with_records);
    }
    if (select->parsed())
      return cmd_select(checkpoint, history_path, query, candidates_path);
    if (serve->parsed()) return cmd_serve(config_path);
  } catch (const nrs::ConfigError& e) {
    std::cerr << "config error: " << e.what() << std::endl;
    return 1;
  } catch (const nrs::DataError& e) {
    std::cerr << "data error: " << e.what() << std::endl;
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 3;
  }
  return 1;
}
