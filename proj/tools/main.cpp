#include "commands.hpp"

#include "pdisent/container.hpp"
#include "pdisent/errors.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

using namespace pdisent;
using namespace pdisent::cli;

namespace {

int fail(ExitCode code, const char* kind, const std::string& message) {
  std::string flat = message;
  for (char& ch : flat)
    if (ch == '\n' || ch == '\r') ch = ' ';
  std::cerr << "error kind=" << kind << " exit=" << static_cast<int>(code) << " message=" << flat << '\n';
  return code;
}

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config, "experiment config JSON (defaults when omitted)");
    app->add_option("--set", overrides, "override a config value, e.g. --set stage2.epochs=3")->take_all();
    app->add_option("-o,--out", out, "output directory (overrides paths.output)");
  }

  ExperimentConfig load() const {
    ExperimentConfig c = load_config(config, overrides);
    if (!out.empty()) c.paths.output = out;
    return c;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pose/identity disentanglement experiments on synthetic faces"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  Common gen_opts, train_opts, eval_opts, ablate_opts, export_opts, grad_opts;
  GenerateOptions gen;
  std::string stage = "2", eval_ckpt, export_ckpt, export_split = "test";
  double grad_threshold = 1e-4;

  auto* g = app.add_subcommand("generate", "render the base and target corpora");
  gen_opts.attach(g);
  g->add_option("--pgm", gen.pgm_samples, "also write the first N images of each corpus as PGM");

  auto* t = app.add_subcommand("train", "train one model");
  train_opts.attach(t);
  t->add_option("--stage", stage, "2 | 3 | ss | ssft | l2")->required();

  auto* e = app.add_subcommand("eval", "pose-binned rank-1 on the test identities");
  eval_opts.attach(e);
  e->add_option("--checkpoint", eval_ckpt, "model to evaluate (default paths.checkpoint)");

  auto* a = app.add_subcommand("ablate", "train and evaluate the five-model ladder");
  ablate_opts.attach(a);

  auto* x = app.add_subcommand("export", "write identity / non-identity embeddings");
  export_opts.attach(x);
  x->add_option("--checkpoint", export_ckpt, "model to embed with (default paths.checkpoint)");
  x->add_option("--split", export_split, "train | validation | test | all");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the training losses");
  grad_opts.attach(gc);
  gc->add_option("--threshold", grad_threshold, "fail when the max relative error reaches this");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    return fail(kSchema, "schema", err.what());
  }

  try {
    if (g->parsed()) {
      cmd_generate(gen_opts.load(), gen);
    } else if (t->parsed()) {
      const TrainStage s = parse_stage(stage);
      cmd_train(train_opts.load(), s);
    } else if (e->parsed()) {
      cmd_eval(eval_opts.load(), eval_ckpt);
    } else if (a->parsed()) {
      cmd_ablate(ablate_opts.load());
    } else if (x->parsed()) {
      const SplitChoice s = parse_split(export_split);
      cmd_export(export_opts.load(), export_ckpt, s);
    } else if (gc->parsed()) {
      const double worst = cmd_gradcheck(grad_opts.load());
      if (!(worst < grad_threshold))
        return fail(kInternal, "gradcheck", "max relative error " + std::to_string(worst) + " exceeds threshold");
    }
  } catch (const SchemaError& err) {
    return fail(kSchema, "schema", err.what());
  } catch (const ConfigurationError& err) {
    return fail(kSchema, "schema", err.what());
  } catch (const MissingFileError& err) {
    return fail(kMissingFile, "missing_file", err.what());
  } catch (const DivergenceError& err) {
    return fail(kDivergence, "divergence", err.what());
  } catch (const ContainerError& err) {
    return fail(kIo, "io", err.what());
  } catch (const std::ios_base::failure& err) {
    return fail(kIo, "io", err.what());
  } catch (const std::exception& err) {
    return fail(kInternal, "internal", err.what());
  }
  return kOk;
}
