#include "pdisent/ablation.hpp"

#include "pdisent/errors.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace pdisent {

TargetSplit split_target_identities(const Corpus& target, int train, int validation, int test) {
  if (train < 1 || validation < 1 || test < 1)
    throw std::invalid_argument("every target split needs at least one identity");
  const std::vector<int> ids = target.identities();
  const auto need = static_cast<std::size_t>(train + validation + test);
  if (ids.size() < need)
    throw std::invalid_argument("target corpus has " + std::to_string(ids.size()) + " identities, split needs " +
                                std::to_string(need));
  TargetSplit s;
  const auto a = ids.begin() + train, b = a + validation;
  s.train.assign(ids.begin(), a);
  s.validation.assign(a, b);
  s.test.assign(b, b + test);
  return s;
}

void AblationConfig::validate() const {
  if (seeds.empty()) throw ConfigurationError("ablation needs at least one seed");
  if (train_identities < 1 || validation_identities < 1 || test_identities < 1)
    throw ConfigurationError("ablation identity counts must be positive");
  arch.validate();
  pdisent::validate(stage2);
  pdisent::validate(finetune);
  pdisent::validate(stage3);
  if (eval.trials < 1) throw ConfigurationError("eval.trials must be at least 1");
}

void to_json(nlohmann::json& j, const AblationConfig& c) {
  j = {{"train_identities", c.train_identities},
       {"validation_identities", c.validation_identities},
       {"test_identities", c.test_identities},
       {"stage2", c.stage2},
       {"finetune", c.finetune},
       {"stage3", c.stage3},
       {"eval", c.eval},
       {"seeds", c.seeds}};
}

void from_json(const nlohmann::json& j, AblationConfig& c) {
  c.train_identities = j.at("train_identities").get<int>();
  c.validation_identities = j.at("validation_identities").get<int>();
  c.test_identities = j.at("test_identities").get<int>();
  c.stage2 = j.at("stage2").get<Stage2Config>();
  c.finetune = j.at("finetune").get<Stage2Config>();
  c.stage3 = j.at("stage3").get<Stage3Config>();
  c.eval = j.at("eval").get<EvalConfig>();
  c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
}

ProtocolResult average_over_seeds(const std::vector<ProtocolResult>& results) {
  return aggregate_trials(results);
}

namespace {

template <typename F>
auto guarded(const std::string& row, std::uint64_t seed, F&& f) {
  try {
    return f();
  } catch (const DivergenceError& e) {
    throw DivergenceError(row + " (seed " + std::to_string(seed) + "): " + e.what());
  } catch (const std::exception& e) {
    throw std::runtime_error(row + " (seed " + std::to_string(seed) + "): " + e.what());
  }
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

AblationReport run_ablation(const Corpus& base, const Corpus& target, const AblationConfig& config,
                            const ProgressFn& progress) {
  config.validate();
  const auto say = [&](const std::string& m) {
    if (progress) progress(m);
  };
  const TargetSplit split =
      split_target_identities(target, config.train_identities, config.validation_identities, config.test_identities);
  const std::vector<int> base_ids = base.identities();
  const int base_classes = static_cast<int>(base_ids.size());

  ArchConfig arch = config.arch;
  arch.image_size = base.manifest.image_size;
  arch.landmark_dim = base.landmark_dim();
  arch.num_classes = base_classes + config.train_identities;

  const SourceSpec base_src{&base, base_ids, 0};
  const SourceSpec target_src{&target, split.train, base_classes};
  const LabeledSet base_set = assemble_labeled_set(std::span(&base_src, 1));
  const LabeledSet target_set = assemble_labeled_set(std::span(&target_src, 1));
  const std::vector<SourceSpec> both{base_src, target_src};
  const LabeledSet joint_set = assemble_labeled_set(both);

  const Corpus validation = target.subset(split.validation);
  const Corpus test = target.subset(split.test);

  AblationReport report;
  for (std::uint64_t seed : config.seeds) {
    const auto evaluate = [&](const std::string& name, const ModelParams& params) {
      Rng rng = make_rng(config.eval.seed, {seed});
      const CorpusEmbeddings emb = embed_corpus(params, test);
      AblationRow row{name, seed, run_protocol_p1(test, emb, config.eval.trials, rng, config.eval.metric), {}};
      row.leakage = pose_leakage_probe(emb.e_i, emb.e_n, emb.yaw, derive_seed(config.eval.seed, {seed}));
      say(name + " seed " + std::to_string(seed) + ": avg " + fmt(row.result.avg) + ", leakage ratio " +
          fmt(row.leakage.ratio));
      report.rows.push_back(std::move(row));
    };

    Stage2Config ss_cfg = config.stage2;
    ss_cfg.seed = seed;
    ss_cfg.weights.pose = 0.0;
    ss_cfg.weights.landmark = 0.0;
    const ModelParams ss = guarded("SS", seed, [&] { return train_stage2(base_set, arch, ss_cfg).params; });
    evaluate("SS", ss);

    Stage2Config ft_cfg = config.finetune;
    ft_cfg.seed = seed;
    ft_cfg.weights.pose = 0.0;
    ft_cfg.weights.landmark = 0.0;
    const ModelParams ssft = guarded("SS-FT", seed, [&] { return train_stage2(target_set, ss, ft_cfg).params; });
    evaluate("SS-FT", ssft);

    Stage2Config msmt_cfg = config.stage2;
    msmt_cfg.seed = seed;
    const ModelParams msmt = guarded("MSMT", seed, [&] { return train_stage2(joint_set, arch, msmt_cfg).params; });
    evaluate("MSMT", msmt);

    EvalConfig val_cfg = config.eval;
    val_cfg.seed = derive_seed(config.eval.seed, {seed, 0x76});
    const Validator validator = make_rank1_validator(validation, val_cfg);

    Stage3Config l2_cfg = config.stage3;
    l2_cfg.seed = seed;
    l2_cfg.loss = FinetuneLoss::L2;
    const ModelParams l2 =
        guarded("MSMT+L2", seed, [&] { return train_stage3(msmt, target_set, l2_cfg, validator).params; });
    evaluate("MSMT+L2", l2);

    Stage3Config sr_cfg = config.stage3;
    sr_cfg.seed = seed;
    sr_cfg.loss = FinetuneLoss::Reconstruction;
    const ModelParams sr =
        guarded("MSMT+SR", seed, [&] { return train_stage3(msmt, target_set, sr_cfg, validator).params; });
    evaluate("MSMT+SR", sr);
  }

  for (const char* name : kAblationModels) {
    std::vector<ProtocolResult> per;
    LeakageResult leak;
    for (const auto& r : report.rows)
      if (r.model == name) {
        per.push_back(r.result);
        leak.mse_id += r.leakage.mse_id;
        leak.mse_nonid += r.leakage.mse_nonid;
        leak.ratio += r.leakage.ratio;
        leak.yaw_variance += r.leakage.yaw_variance;
      }
    const double n = static_cast<double>(per.size());
    report.mean[name] = average_over_seeds(per);
    report.mean_leakage[name] = {leak.mse_id / n, leak.mse_nonid / n, leak.ratio / n, leak.yaw_variance / n};
  }

  nlohmann::json arch_json = arch;
  report.metadata = {{"config", config},
                     {"arch", arch_json},
                     {"base", {{"seed", base.manifest.seed}, {"identities", base_classes}, {"samples", base.size()}}},
                     {"target", {{"seed", target.manifest.seed}, {"samples", target.size()}}},
                     {"split", {{"train", split.train}, {"validation", split.validation}, {"test", split.test}}}};
  return report;
}

std::string AblationReport::to_csv() const {
  std::ostringstream os;
  std::string header = protocol_csv_header();
  header.insert(header.find(',') + 1, "seed,");
  os << header << '\n';
  const auto with_seed = [](std::string row, const std::string& seed) {
    row.insert(row.find(',') + 1, seed + ",");
    return row;
  };
  for (const auto& r : rows) os << with_seed(protocol_csv_row(r.model, r.result), std::to_string(r.seed)) << '\n';
  for (const char* name : kAblationModels) {
    const auto it = mean.find(name);
    if (it != mean.end()) os << with_seed(protocol_csv_row(name, it->second), "mean") << '\n';
  }
  return os.str();
}

nlohmann::json AblationReport::to_json() const {
  nlohmann::json j;
  j["models"] = kAblationModels;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rows)
    j["rows"].push_back({{"model", r.model}, {"seed", r.seed}, {"result", r.result}, {"leakage", r.leakage}});
  j["mean"] = nlohmann::json::object();
  for (const auto& [name, res] : mean) j["mean"][name] = {{"result", res}, {"leakage", mean_leakage.at(name)}};
  j["metadata"] = metadata;
  return j;
}

}  // namespace pdisent
