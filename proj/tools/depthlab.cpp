// depthlab: command-line driver for the desk-scale experiment pipeline.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "depthlab/errors.hpp"
#include "depthlab/numgrid/blob.hpp"
#include "depthlab/pipeline/experiment.hpp"

namespace fs = std::filesystem;
using namespace depthlab;
using namespace depthlab::pipeline;

namespace {

enum Exit { kOk = 0, kConfig = 2, kStage = 3, kNumeric = 4 };

struct Common {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  bool force = false;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c, bool needs_out = true) {
  cmd->add_option("--config", c.config, "experiment config (JSON); defaults when omitted");
  if (needs_out) cmd->add_option("--out", c.out, "output directory")->capture_default_str();
  cmd->add_option("--seed", c.seed, "override the master seed");
  cmd->add_flag("--force", c.force, "recreate existing outputs");
  cmd->add_flag("--quiet", c.quiet, "no progress messages");
}

ExperimentConfig load(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_experiment_config(c.config);
  if (c.seed) {
    cfg.seed = *c.seed;
    cfg.scene.seed = *c.seed;
  }
  cfg.validate();
  return cfg;
}

std::vector<std::uint64_t> runs_for(const ExperimentConfig& cfg, const std::optional<std::uint64_t>& run) {
  if (!run) return cfg.run_seeds;
  return {*run};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"depthlab: depth-guided semi-supervised segmentation at desk scale"};
  app.require_subcommand(1);
  Common common;
  std::optional<std::uint64_t> run_seed;

  auto* gen = app.add_subcommand("gen-scenes", "render the synthetic dataset");
  add_common(gen, common);

  bool no_feature = false;
  auto* pre = app.add_subcommand("pretrain-sde", "self-supervised depth pretraining");
  add_common(pre, common);
  pre->add_option("--run-seed", run_seed, "single run seed (default: all)");
  pre->add_flag("--no-feature-distance", no_feature, "pretrain with lambda_F = 0");

  auto* sel = app.add_subcommand("select", "automatic label selection (and the random baseline)");
  add_common(sel, common);
  sel->add_option("--run-seed", run_seed, "single run seed (default: all)");

  auto* prev = app.add_subcommand("mix-preview", "DepthMix / ClassMix previews as PPM/PGM");
  add_common(prev, common);

  std::vector<std::string> arms;
  auto* tr = app.add_subcommand("train", "train and evaluate ablation arms");
  add_common(tr, common);
  tr->add_option("--arm", arms, "arm name(s) (default: all)");
  tr->add_option("--run-seed", run_seed, "single run seed (default: all)");

  std::string checkpoint, dataset, eval_out;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the validation split");
  ev->add_option("--checkpoint", checkpoint, "checkpoint blob")->required();
  ev->add_option("--dataset", dataset, "dataset directory")->required();
  ev->add_option("--output", eval_out, "write the report JSON here instead of stdout");

  std::vector<std::string> report_dirs;
  std::string report_out;
  auto* rep = app.add_subcommand("report", "ablation table over run directories");
  rep->add_option("dirs", report_dirs, "run directories (searched recursively)")->required();
  rep->add_option("--output", report_out, "write CSV here instead of stdout");

  auto* run = app.add_subcommand("run", "every stage, then summary.json and report.csv");
  add_common(run, common);

  auto* show = app.add_subcommand("show-config", "print the effective config");
  add_common(show, common, false);

  CLI11_PARSE(app, argc, argv);

  try {
    const Layout out{common.out};
    const StageOptions opt{common.force, common.quiet};
    if (*gen) {
      gen_scenes(load(common), out, opt);
    } else if (*pre) {
      const auto cfg = load(common);
      for (auto r : runs_for(cfg, run_seed)) pretrain_sde(cfg, out, r, !no_feature, opt);
    } else if (*sel) {
      const auto cfg = load(common);
      for (auto r : runs_for(cfg, run_seed)) select_labels(cfg, out, r, opt);
    } else if (*prev) {
      mix_preview(load(common), out, opt);
    } else if (*tr) {
      const auto cfg = load(common);
      if (arms.empty())
        for (const auto& a : cfg.arms) arms.push_back(a.name);
      for (const auto& a : arms)
        for (auto r : runs_for(cfg, run_seed)) {
          const auto s = train_arm(cfg, out, a, r, opt);
          if (!opt.quiet) std::fprintf(stderr, "[depthlab] %s seed %llu mIoU %.4f\n", a.c_str(),
                                       static_cast<unsigned long long>(r), s["miou"].get<double>());
        }
    } else if (*ev) {
      const std::string text = learner::to_json(evaluate_checkpoint(checkpoint, dataset)).dump(2) + "\n";
      if (eval_out.empty())
        std::cout << text;
      else
        numgrid::write_file(eval_out, text);
    } else if (*rep) {
      std::vector<fs::path> dirs(report_dirs.begin(), report_dirs.end());
      const std::string csv = report_csv(build_report(collect_run_summaries(dirs)));
      if (report_out.empty())
        std::cout << csv;
      else
        numgrid::write_file(report_out, csv);
    } else if (*run) {
      const auto s = run_all(load(common), out, opt);
      std::cout << numgrid::read_file(out.report());
      (void)s;
    } else if (*show) {
      std::cout << to_json(load(common)).dump(2) << "\n";
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kStage;
  }
  return kOk;
}
