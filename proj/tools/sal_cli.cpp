// Experiment runner. `sal run` executes the whole pipeline; the stage
// subcommands execute one stage each against a shared output directory and
// compose to the identical result under the same config and seed.

#include <cstdint>
#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "sal/config.hpp"
#include "sal/pipeline.hpp"

namespace {

struct CliOptions {
  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> score_kind;
  std::optional<bool> class_conditional;
  std::optional<std::size_t> num_vectors;
  std::optional<double> percentile;
  std::optional<bool> posthoc;
  std::optional<double> pi;
  std::optional<int> scenario;
};

void add_common_options(CLI::App* sub, CliOptions& o) {
  sub->add_option("--config", o.config_path,
                  "Configuration file (key = value lines); defaults "
                  "reproduce scenario 1");
  sub->add_option("--out", o.out_dir, "Output directory for artifact files")
      ->capture_default_str();
  sub->add_option("--seed", o.seed, "Root seed (overrides the config)");
  sub->add_option("--score-kind", o.score_kind,
                  "Filtering score: sal or gradnorm")
      ->check(CLI::IsMember({"sal", "gradnorm"}));
  sub->add_flag("--class-conditional,!--no-class-conditional",
                o.class_conditional,
                "Per-class reference gradients and singular vectors");
  sub->add_option("--num-vectors", o.num_vectors,
                  "Singular vectors averaged per filtering score");
  sub->add_option("--percentile", o.percentile,
                  "ID percentile for the filtering threshold");
  sub->add_flag("--posthoc,!--no-posthoc", o.posthoc,
                "Also evaluate the filtering score as a direct detector");
  sub->add_option("--pi", o.pi, "Wild contamination fraction");
  sub->add_option("--scenario", o.scenario, "Toy scenario (1 or 2)")
      ->check(CLI::IsMember({1, 2}));
}

sal::ExperimentConfig effective_config(const CliOptions& o) {
  sal::ExperimentConfig cfg;
  if (!o.config_path.empty()) cfg = sal::load_config(o.config_path);
  if (o.seed) cfg.seed = *o.seed;
  if (o.score_kind)
    cfg.filter.score_kind = *o.score_kind == "gradnorm"
                                ? sal::ScoreKind::kGradNorm
                                : sal::ScoreKind::kSalProjection;
  if (o.class_conditional) cfg.filter.class_conditional = *o.class_conditional;
  if (o.num_vectors) cfg.filter.num_vectors = *o.num_vectors;
  if (o.percentile) cfg.filter.percentile = *o.percentile;
  if (o.posthoc) cfg.eval_posthoc = *o.posthoc;
  if (o.pi) cfg.pi = *o.pi;
  if (o.scenario)
    cfg.scenario = *o.scenario == 2 ? sal::ScenarioChoice::kTwo
                                    : sal::ScenarioChoice::kOne;
  sal::validate_config(cfg);
  return cfg;
}

void print_metrics(const char* label, const sal::MetricsReport& r) {
  std::printf("%s: fpr_at_95tpr=%.6f auroc=%.6f id_accuracy=%.6f\n", label,
              r.fpr_at_95tpr, r.auroc, r.id_accuracy);
  if (r.contamination)
    std::printf("%s: err_in=%.6f err_out=%.6f contamination=%.6f\n", label,
                r.err_in.value_or(0.0), r.err_out.value_or(0.0),
                *r.contamination);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Wild-data outlier filtering and OOD-classifier experiments"};
  app.require_subcommand(1);

  CliOptions o;
  sal::TheoryConstants tc;

  CLI::App* cmd_run = app.add_subcommand("run", "Run the full pipeline");
  CLI::App* cmd_gen = app.add_subcommand("gen-data", "Write the datasets");
  CLI::App* cmd_erm =
      app.add_subcommand("train-id", "Train the ID classifier");
  CLI::App* cmd_filter =
      app.add_subcommand("filter", "Score wild data and extract candidates");
  CLI::App* cmd_ood =
      app.add_subcommand("train-ood", "Train the binary OOD classifier");
  CLI::App* cmd_eval = app.add_subcommand("eval", "Compute test metrics");
  CLI::App* cmd_theory =
      app.add_subcommand("theory-check", "Discrepancy sweep over ratios");

  for (CLI::App* sub : {cmd_run, cmd_gen, cmd_erm, cmd_filter, cmd_ood,
                        cmd_eval, cmd_theory})
    add_common_options(sub, o);

  cmd_theory->add_option("--beta1", tc.beta1,
                         "Smoothness constant for the error-bound diagnostics");
  cmd_theory->add_option("--eta", tc.eta,
                         "Score-retention factor in (0,1) for the bound");
  cmd_theory->add_option(
      "--r-in-star", tc.r_in_star,
      "Optimal ID risk (default: the sweep backbone's final risk)");
  cmd_theory->add_option("--t", tc.t, "Filtering threshold for the bound");
  cmd_theory->add_option(
      "--m-prime", tc.m_prime,
      "Score upper bound (default: largest observed filtering score)");

  CLI11_PARSE(app, argc, argv);

  try {
    const sal::ExperimentConfig cfg = effective_config(o);
    if (cmd_run->parsed()) {
      sal::run_experiment(cfg, o.out_dir);
      const sal::MetricsReport r = sal::load_metrics(
          (std::filesystem::path(o.out_dir) / sal::artifact::kMetrics)
              .string());
      print_metrics("metrics", r);
      if (cfg.eval_posthoc)
        print_metrics(
            "posthoc",
            sal::load_metrics((std::filesystem::path(o.out_dir) /
                               sal::artifact::kMetricsPosthoc)
                                  .string()));
      std::printf("artifacts: %s (config hash %s)\n", o.out_dir.c_str(),
                  sal::config_hash(cfg).c_str());
    } else if (cmd_gen->parsed()) {
      sal::stage_gen_data(cfg, o.out_dir);
      std::printf("datasets written to %s\n", o.out_dir.c_str());
    } else if (cmd_erm->parsed()) {
      sal::stage_train_id(cfg, o.out_dir);
      std::printf("ID model written to %s/%s\n", o.out_dir.c_str(),
                  sal::artifact::kParamsId);
    } else if (cmd_filter->parsed()) {
      sal::stage_filter(cfg, o.out_dir);
      const sal::FilterSummary s = sal::load_filter_summary(
          (std::filesystem::path(o.out_dir) / sal::artifact::kFilterSummary)
              .string());
      std::printf("threshold=%.6g candidates=%zu/%zu", s.threshold,
                  s.candidates.size(), s.num_wild);
      if (s.contamination) std::printf(" contamination=%.6f", *s.contamination);
      std::printf("\n");
    } else if (cmd_ood->parsed()) {
      sal::stage_train_ood(cfg, o.out_dir);
      std::printf("OOD model written to %s/%s\n", o.out_dir.c_str(),
                  sal::artifact::kParamsOod);
    } else if (cmd_eval->parsed()) {
      sal::stage_eval(cfg, o.out_dir);
      const std::string metrics_path =
          (std::filesystem::path(o.out_dir) / sal::artifact::kMetrics)
              .string();
      if (std::filesystem::exists(metrics_path))
        print_metrics("metrics", sal::load_metrics(metrics_path));
      if (cfg.eval_posthoc)
        print_metrics(
            "posthoc",
            sal::load_metrics((std::filesystem::path(o.out_dir) /
                               sal::artifact::kMetricsPosthoc)
                                  .string()));
    } else if (cmd_theory->parsed()) {
      const sal::DiscrepancyReport report =
          sal::run_theory(cfg, o.out_dir, tc);
      std::printf("pi        zeta_hat   rhs        holds\n");
      for (const auto& row : report.per_pi)
        std::printf("%-9.4g %-10.6g %-10.6g %s\n", row.pi, row.zeta_hat,
                    row.condition_rhs, row.condition_holds ? "yes" : "no");
      if (report.error_bound)
        std::printf("delta_zeta_eta=%.6g delta_t=%.6g (r_in_star=%.6g)\n",
                    report.error_bound->delta_zeta_eta,
                    report.error_bound->delta_t,
                    report.r_in_star.value_or(0.0));
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
