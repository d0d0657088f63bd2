#include "commands.hpp"

#include "pdisent/container.hpp"
#include "pdisent/errors.hpp"
#include "pdisent/renderer.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;

namespace pdisent::cli {

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::ios_base::failure("cannot open '" + path.string() + "' for writing");
  f << text;
  if (!f) throw std::ios_base::failure("failed writing '" + path.string() + "'");
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

fs::path prepare_output(const ExperimentConfig& c, const std::string& snapshot_name) {
  const fs::path out = output_dir(c);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw std::ios_base::failure("cannot create output directory '" + out.string() + "': " + ec.message());
  write_json(out / (snapshot_name + ".config.json"), to_json(c));
  return out;
}

fs::path input_path(const std::string& configured, const fs::path& fallback) {
  return configured.empty() ? fallback : fs::path(configured);
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw MissingFileError(what + " '" + p.string() + "' does not exist");
}

Corpus load_required_corpus(const fs::path& p, const std::string& what) {
  require_file(p, what);
  return load_corpus(p.string());
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

struct Workspace {
  Corpus base, target;
  TargetSplit split;
  ArchConfig arch;
};

Workspace load_workspace(const ExperimentConfig& c, const fs::path& out) {
  Workspace w;
  w.base = load_required_corpus(input_path(c.paths.base_corpus, out / "base.pdc"), "base corpus");
  w.target = load_required_corpus(input_path(c.paths.target_corpus, out / "target.pdc"), "target corpus");
  const auto& a = c.ablation;
  try {
    w.split = split_target_identities(w.target, a.train_identities, a.validation_identities, a.test_identities);
  } catch (const std::invalid_argument& e) {
    throw SchemaError(e.what());
  }
  w.arch = c.arch;
  w.arch.image_size = w.base.manifest.image_size;
  w.arch.landmark_dim = w.base.landmark_dim();
  w.arch.num_classes = static_cast<int>(w.base.identities().size()) + a.train_identities;
  if (w.target.manifest.image_size != w.arch.image_size || w.target.landmark_dim() != w.arch.landmark_dim)
    throw SchemaError("base and target corpora differ in image size or landmark count");
  return w;
}

EpochCallback epoch_printer(const std::string& label) {
  return [label](const EpochRecord& r) {
    std::cerr << label << " epoch " << r.epoch << " lr " << fmt(r.lr) << " loss " << fmt(r.terms.total);
    if (!std::isnan(r.train_accuracy)) std::cerr << " train_acc " << fmt(r.train_accuracy);
    if (!std::isnan(r.val_rank1)) std::cerr << " val_rank1 " << fmt(r.val_rank1);
    std::cerr << '\n';
  };
}

ModelParams load_required_checkpoint(const fs::path& p, const std::string& what) {
  require_file(p, what);
  return load_checkpoint(p.string());
}

Corpus split_corpus(const Workspace& w, SplitChoice s) {
  switch (s) {
    case SplitChoice::Train: return w.target.subset(w.split.train);
    case SplitChoice::Validation: return w.target.subset(w.split.validation);
    case SplitChoice::Test: return w.target.subset(w.split.test);
    case SplitChoice::All: return w.target;
  }
  return w.target;
}

}  // namespace

fs::path output_dir(const ExperimentConfig& c) {
  fs::path out(c.paths.output);
  if (out.is_relative())
    if (const char* root = std::getenv(kOutputRootEnv); root && *root) out = fs::path(root) / out;
  return out;
}

TrainStage parse_stage(const std::string& s) {
  if (s == "2") return TrainStage::Stage2;
  if (s == "3") return TrainStage::Stage3;
  if (s == "ss") return TrainStage::SS;
  if (s == "ssft") return TrainStage::SSFT;
  if (s == "l2") return TrainStage::L2;
  throw SchemaError("unknown stage '" + s + "' (expected 2, 3, ss, ssft or l2)");
}

SplitChoice parse_split(const std::string& s) {
  if (s == "train") return SplitChoice::Train;
  if (s == "validation") return SplitChoice::Validation;
  if (s == "test") return SplitChoice::Test;
  if (s == "all") return SplitChoice::All;
  throw SchemaError("unknown split '" + s + "' (expected train, validation, test or all)");
}

void cmd_generate(const ExperimentConfig& c, const GenerateOptions& o) {
  const fs::path out = prepare_output(c, "generate");
  nlohmann::json hashes = nlohmann::json::object();
  for (const auto& [name, gen, seed] : {std::tuple{"base", &c.base, c.base_seed},
                                        std::tuple{"target", &c.target, c.target_seed}}) {
    const Corpus corpus = generate_corpus(*gen, seed);
    const fs::path file = out / (std::string(name) + ".pdc");
    save_corpus(corpus, file.string());
    hashes[name] = {{"file", file.filename().string()}, {"fnv1a64", hex(file_hash(file.string()))},
                    {"samples", corpus.size()}};
    if (o.pgm_samples > 0) {
      const fs::path dir = out / "pgm" / name;
      fs::create_directories(dir);
      const std::size_t n = std::min(corpus.size(), static_cast<std::size_t>(o.pgm_samples));
      for (std::size_t i = 0; i < n; ++i) {
        char stem[64];
        std::snprintf(stem, sizeof stem, "%05zu_id%d.pgm", i, corpus.samples[i].identity);
        write_pgm(corpus.samples[i].image, (dir / stem).string());
      }
    }
    std::cerr << "wrote " << file.string() << " (" << corpus.size() << " samples)\n";
  }
  write_json(out / "corpus_hashes.json", hashes);
}

void cmd_train(const ExperimentConfig& c, TrainStage stage) {
  static const char* names[] = {"stage2", "stage3", "ss", "ssft", "l2"};
  const std::string name = names[static_cast<int>(stage)];
  const fs::path out = output_dir(c);

  // stage-3 style runs need their starting checkpoint before anything is written
  fs::path init_path;
  if (stage == TrainStage::Stage3 || stage == TrainStage::L2) {
    init_path = input_path(c.paths.stage2_checkpoint, out / "stage2.ckpt");
    if (!fs::is_regular_file(init_path))
      throw SchemaError("train --stage " + std::string(stage == TrainStage::L2 ? "l2" : "3") +
                        " requires a stage-2 checkpoint; '" + init_path.string() + "' not found");
  } else if (stage == TrainStage::SSFT) {
    init_path = input_path(c.paths.ss_checkpoint, out / "ss.ckpt");
    if (!fs::is_regular_file(init_path))
      throw SchemaError("train --stage ssft requires an SS checkpoint; '" + init_path.string() + "' not found");
  }

  const Workspace w = load_workspace(c, out);
  prepare_output(c, "train_" + name);
  const int base_classes = w.arch.num_classes - c.ablation.train_identities;
  const SourceSpec base_src{&w.base, w.base.identities(), 0};
  const SourceSpec target_src{&w.target, w.split.train, base_classes};
  const auto progress = epoch_printer(name);

  TrainResult result;
  nlohmann::json extra = {{"stage", name}};
  switch (stage) {
    case TrainStage::Stage2: {
      const std::vector<SourceSpec> sources{base_src, target_src};
      Stage2Config cfg = c.ablation.stage2;
      result = train_stage2(assemble_labeled_set(sources), w.arch, cfg, progress);
      break;
    }
    case TrainStage::SS: {
      Stage2Config cfg = c.ablation.stage2;
      cfg.weights.pose = 0.0;
      cfg.weights.landmark = 0.0;
      result = train_stage2(assemble_labeled_set(std::span(&base_src, 1)), w.arch, cfg, progress);
      break;
    }
    case TrainStage::SSFT: {
      Stage2Config cfg = c.ablation.finetune;
      cfg.weights.pose = 0.0;
      cfg.weights.landmark = 0.0;
      ModelParams init = load_required_checkpoint(init_path, "SS checkpoint");
      if (!(init.arch == w.arch)) throw SchemaError("SS checkpoint architecture differs from the configured one");
      result = train_stage2(assemble_labeled_set(std::span(&target_src, 1)), std::move(init), cfg, progress);
      break;
    }
    case TrainStage::Stage3:
    case TrainStage::L2: {
      Stage3Config cfg = c.ablation.stage3;
      cfg.loss = stage == TrainStage::L2 ? FinetuneLoss::L2 : FinetuneLoss::Reconstruction;
      const ModelParams init = load_required_checkpoint(init_path, "stage-2 checkpoint");
      if (!(init.arch == w.arch)) throw SchemaError("stage-2 checkpoint architecture differs from the configured one");
      const Corpus validation = w.target.subset(w.split.validation);
      const Validator validator = make_rank1_validator(validation, c.ablation.eval);
      result = train_stage3(init, assemble_labeled_set(std::span(&target_src, 1)), cfg, validator, progress);
      extra["best_epoch"] = result.log.best_epoch;
      break;
    }
  }
  save_checkpoint(result.params, (out / (name + ".ckpt")).string(), extra);
  result.log.write_csv((out / (name + "_log.csv")).string());
  std::cerr << "wrote " << (out / (name + ".ckpt")).string() << '\n';
}

void cmd_eval(const ExperimentConfig& c, const std::string& checkpoint) {
  const fs::path out = output_dir(c);
  const fs::path ckpt = input_path(checkpoint.empty() ? c.paths.checkpoint : checkpoint, out / "stage3.ckpt");
  const ModelParams params = load_required_checkpoint(ckpt, "checkpoint");
  const Workspace w = load_workspace(c, out);
  prepare_output(c, "eval");
  const Corpus test = w.target.subset(w.split.test);
  const CorpusEmbeddings emb = embed_corpus(params, test);
  Rng rng = make_rng(c.ablation.eval.seed);
  const ProtocolResult r = c.protocol == Protocol::P1
                               ? run_protocol_p1(test, emb, c.ablation.eval.trials, rng, c.ablation.eval.metric)
                               : run_protocol_p2(test, emb, c.ablation.eval.metric);
  const LeakageResult leak = pose_leakage_probe(emb.e_i, emb.e_n, emb.yaw, c.ablation.eval.seed);
  const std::string stem = ckpt.stem().string();
  write_text(out / ("metrics_" + stem + ".csv"), protocol_csv_header() + "\n" + protocol_csv_row(stem, r) + "\n");
  write_json(out / ("metrics_" + stem + ".json"),
             {{"model", stem},
              {"protocol", c.protocol == Protocol::P1 ? "p1" : "p2"},
              {"metric", metric_name(c.ablation.eval.metric)},
              {"result", r},
              {"leakage", leak}});
  std::cerr << stem << ": avg rank-1 " << fmt(r.avg) << ", leakage ratio " << fmt(leak.ratio) << '\n';
}

void cmd_ablate(const ExperimentConfig& c) {
  const fs::path out = output_dir(c);
  const Workspace w = load_workspace(c, out);
  prepare_output(c, "ablate");
  AblationConfig cfg = c.ablation;
  cfg.arch = w.arch;
  const AblationReport report = run_ablation(w.base, w.target, cfg, [](const std::string& m) { std::cerr << m << '\n'; });
  write_text(out / "ablation.csv", report.to_csv());
  write_json(out / "ablation.json", report.to_json());
}

void cmd_export(const ExperimentConfig& c, const std::string& checkpoint, SplitChoice split) {
  const fs::path out = output_dir(c);
  const fs::path ckpt = input_path(checkpoint.empty() ? c.paths.checkpoint : checkpoint, out / "stage3.ckpt");
  const ModelParams params = load_required_checkpoint(ckpt, "checkpoint");
  const Workspace w = load_workspace(c, out);
  prepare_output(c, "export");
  const CorpusEmbeddings emb = embed_corpus(params, split_corpus(w, split));
  const std::string stem = "embeddings_" + ckpt.stem().string();
  export_embeddings(emb, (out / (stem + ".bin")).string(), (out / (stem + ".csv")).string());
  std::cerr << "wrote " << (out / (stem + ".bin")).string() << " (" << emb.size() << " samples)\n";
}

double cmd_gradcheck(const ExperimentConfig& c) {
  const fs::path out = prepare_output(c, "gradcheck");
  const auto checks = check_training_losses(c.gradcheck.seed, c.gradcheck);
  nlohmann::json j = nlohmann::json::array();
  double worst = 0.0;
  for (const auto& lc : checks) {
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& t : lc.report.tensors)
      tensors.push_back({{"tensor", t.tensor}, {"checked", t.checked}, {"max_rel", t.max_rel}, {"mean_rel", t.mean_rel}});
    j.push_back({{"loss", lc.loss},
                 {"checked", lc.report.checked},
                 {"max_rel", lc.report.max_rel},
                 {"mean_rel", lc.report.mean_rel},
                 {"worst_tensor", lc.report.worst_tensor},
                 {"tensors", tensors}});
    worst = std::max(worst, lc.report.max_rel);
    std::cerr << lc.loss << ": max rel err " << fmt(lc.report.max_rel) << " (" << lc.report.worst_tensor << ")\n";
  }
  write_json(out / "gradcheck.json", {{"epsilon", c.gradcheck.epsilon}, {"losses", j}});
  return worst;
}

}  // namespace pdisent::cli
