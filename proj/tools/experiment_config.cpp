#include "experiment_config.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace pdisent::cli {

namespace {

void overlay(nlohmann::json& base, const nlohmann::json& user, const std::string& where) {
  if (!user.is_object()) throw SchemaError("'" + (where.empty() ? "config" : where) + "' must be an object");
  for (const auto& [key, value] : user.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!base.contains(key)) throw SchemaError("unknown config key '" + path + "'");
    if (base[key].is_object())
      overlay(base[key], value, path);
    else
      base[key] = value;
  }
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  base.source_tag = "base";
  base.num_identities = 200;
  base.pose_mode = PoseMode::FrontalHeavy;
  base.poses_per_identity = 12;
  target.source_tag = "target";
  target.num_identities = 80;
}

nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json abl = c.ablation;
  return {{"generation", {{"base", c.base}, {"target", c.target}, {"base_seed", c.base_seed},
                          {"target_seed", c.target_seed}}},
          {"arch", c.arch},
          {"split", {{"train_identities", abl["train_identities"]},
                     {"validation_identities", abl["validation_identities"]},
                     {"test_identities", abl["test_identities"]}}},
          {"stage2", abl["stage2"]},
          {"finetune", abl["finetune"]},
          {"stage3", abl["stage3"]},
          {"eval", {{"protocol", c.protocol == Protocol::P1 ? "p1" : "p2"}, {"trials", c.ablation.eval.trials},
                    {"metric", metric_name(c.ablation.eval.metric)}, {"seed", c.ablation.eval.seed}}},
          {"ablation", {{"seeds", c.ablation.seeds}}},
          {"gradcheck", {{"seed", c.gradcheck.seed}, {"epsilon", c.gradcheck.epsilon},
                         {"max_per_tensor", c.gradcheck.max_per_tensor}}},
          {"paths", {{"output", c.paths.output}, {"base_corpus", c.paths.base_corpus},
                     {"target_corpus", c.paths.target_corpus}, {"stage2_checkpoint", c.paths.stage2_checkpoint},
                     {"ss_checkpoint", c.paths.ss_checkpoint}, {"checkpoint", c.paths.checkpoint}}}};
}

ExperimentConfig config_from_json(const nlohmann::json& user) {
  nlohmann::json j = to_json(ExperimentConfig{});
  overlay(j, user, "");
  ExperimentConfig c;
  try {
    const auto& g = j.at("generation");
    c.base = g.at("base").get<GenerationConfig>();
    c.target = g.at("target").get<GenerationConfig>();
    c.base_seed = g.at("base_seed").get<std::uint64_t>();
    c.target_seed = g.at("target_seed").get<std::uint64_t>();
    c.arch = j.at("arch").get<ArchConfig>();

    nlohmann::json abl = j.at("split");
    abl["stage2"] = j.at("stage2");
    abl["finetune"] = j.at("finetune");
    abl["stage3"] = j.at("stage3");
    abl["eval"] = {{"trials", j.at("eval").at("trials")}, {"metric", j.at("eval").at("metric")},
                   {"seed", j.at("eval").at("seed")}};
    abl["seeds"] = j.at("ablation").at("seeds");
    c.ablation = abl.get<AblationConfig>();
    c.ablation.arch = c.arch;

    const auto protocol = j.at("eval").at("protocol").get<std::string>();
    if (protocol == "p1")
      c.protocol = Protocol::P1;
    else if (protocol == "p2")
      c.protocol = Protocol::P2;
    else
      throw SchemaError("eval.protocol must be p1 or p2, got '" + protocol + "'");

    const auto& gc = j.at("gradcheck");
    c.gradcheck.seed = gc.at("seed").get<std::uint64_t>();
    c.gradcheck.epsilon = gc.at("epsilon").get<double>();
    c.gradcheck.max_per_tensor = gc.at("max_per_tensor").get<std::size_t>();

    const auto& p = j.at("paths");
    c.paths.output = p.at("output").get<std::string>();
    c.paths.base_corpus = p.at("base_corpus").get<std::string>();
    c.paths.target_corpus = p.at("target_corpus").get<std::string>();
    c.paths.stage2_checkpoint = p.at("stage2_checkpoint").get<std::string>();
    c.paths.ss_checkpoint = p.at("ss_checkpoint").get<std::string>();
    c.paths.checkpoint = p.at("checkpoint").get<std::string>();

    c.base.validate();
    c.target.validate();
    c.ablation.validate();
    if (c.ablation.seeds.empty()) throw SchemaError("ablation.seeds must not be empty");
    if (!(c.gradcheck.epsilon > 0.0) || c.gradcheck.max_per_tensor == 0)
      throw SchemaError("gradcheck.epsilon and gradcheck.max_per_tensor must be positive");
    if (c.paths.output.empty()) throw SchemaError("paths.output must not be empty");
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(e.what());
  } catch (const SchemaError&) {
    throw;
  } catch (const std::exception& e) {
    // invalid_argument / ConfigurationError from the validators
    throw SchemaError(e.what());
  }
  return c;
}

void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw SchemaError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  std::vector<std::string> parts;
  std::string rest = key;
  for (std::size_t dot; (dot = rest.find('.')) != std::string::npos; rest = rest.substr(dot + 1))
    parts.push_back(rest.substr(0, dot));
  parts.push_back(rest);
  for (const auto& p : parts)
    if (p.empty()) throw SchemaError("override key '" + key + "' has an empty component");

  // unknown keys are caught later by config_from_json
  if (!j.is_object()) j = nlohmann::json::object();
  nlohmann::json* node = &j;
  for (std::size_t k = 0; k + 1 < parts.size(); ++k) {
    if (!node->contains(parts[k])) (*node)[parts[k]] = nlohmann::json::object();
    node = &(*node)[parts[k]];
    if (!node->is_object()) throw SchemaError("override '" + key + "' descends into a non-object");
  }
  (*node)[parts.back()] = value;
}

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  nlohmann::json user = nlohmann::json::object();
  if (!path.empty()) {
    if (!std::filesystem::is_regular_file(path)) throw MissingFileError("config '" + path + "' does not exist");
    std::ifstream f(path);
    if (!f) throw std::ios_base::failure("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    user = nlohmann::json::parse(ss.str(), nullptr, false);
    if (user.is_discarded()) throw SchemaError("config '" + path + "' is not valid JSON");
  }
  for (const auto& o : overrides) apply_override(user, o);
  return config_from_json(user);
}

}  // namespace pdisent::cli
