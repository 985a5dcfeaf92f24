#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "genrec/errors.hpp"
#include "genrec/pipeline.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
};

genrec::Config load_config(const CommonArgs& args) {
  genrec::Config c = args.config_path.empty()
                         ? genrec::Config::from_string("")
                         : genrec::Config::load(args.config_path);
  c.apply_env();
  for (const std::string& kv : args.overrides) {
    size_t eq = kv.find('=');
    if (eq == std::string::npos)
      throw genrec::ConfigError("--set expects key=value, got '" + kv + "'");
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return c;
}

void add_common(CLI::App* cmd, CommonArgs* args) {
  cmd->add_option("-c,--config", args->config_path, "configuration file");
  cmd->add_option("--set", args->overrides,
                  "override a config key, e.g. --set train.epochs=5");
}

uint32_t mask_from_names(const genrec::PipelineConfig& cfg,
                         const std::string& csv) {
  if (csv == "all") return genrec::full_modality_mask(cfg);
  if (csv == "none" || csv.empty()) return 0;
  uint32_t mask = 0;
  std::stringstream ss(csv);
  std::string name;
  while (std::getline(ss, name, ',')) {
    bool found = false;
    for (size_t d = 0; d < cfg.modalities.size(); ++d)
      if (cfg.modalities[d].name == name) {
        mask |= 1u << d;
        found = true;
      }
    if (!found)
      throw genrec::ConfigError("unknown modality '" + name + "'");
  }
  return mask;
}

std::string subset_tag(std::string csv) {
  if (csv == "all") return "full";
  if (csv.empty()) return "none";
  for (char& ch : csv)
    if (ch == ',') ch = '+';
  return csv;
}

void print_report(const genrec::MetricReport& report) {
  std::cout << "cases = " << report.cases << "\n";
  for (const auto& [key, value] : report.entries)
    std::cout << key << " = " << std::setprecision(17) << value << "\n";
}

int run(int argc, char** argv) {
  CLI::App app{"generative recommendation over multimodal semantic ids"};
  app.require_subcommand(1);

  CommonArgs synth_args, fit_args, train_args, eval_args, ablate_args,
      decode_args;

  CLI::App* synth = app.add_subcommand(
      "synth", "generate a synthetic interaction corpus with embeddings");
  add_common(synth, &synth_args);

  CLI::App* fit = app.add_subcommand(
      "fit-codecs", "fit per-modality quantizers and write semantic-id tables");
  add_common(fit, &fit_args);

  CLI::App* train = app.add_subcommand(
      "train", "train the seq2seq recommender on the semantic-id tables");
  add_common(train, &train_args);

  CLI::App* eval = app.add_subcommand(
      "eval", "constrained-beam evaluation over the test split");
  add_common(eval, &eval_args);
  std::string eval_checkpoint, eval_subset = "all";
  eval->add_option("--checkpoint", eval_checkpoint,
                   "model checkpoint (default: <out>/model.bin)");
  eval->add_option("--modalities", eval_subset,
                   "comma-separated unmasked modalities, 'all' or 'none'");

  CLI::App* ablate = app.add_subcommand(
      "ablate-shapley", "exact per-modality attribution over all subsets");
  add_common(ablate, &ablate_args);
  std::string ablate_checkpoint;
  ablate->add_option("--checkpoint", ablate_checkpoint,
                     "model checkpoint (default: <out>/model.bin)");

  CLI::App* decode = app.add_subcommand(
      "decode", "beam query for a single explicit item history");
  add_common(decode, &decode_args);
  std::vector<int64_t> decode_items;
  int decode_topk = 10;
  std::string decode_checkpoint;
  decode->add_option("--items", decode_items, "history item ids, oldest first")
      ->required();
  decode->add_option("--topk", decode_topk, "number of results to print");
  decode->add_option("--checkpoint", decode_checkpoint,
                     "model checkpoint (default: <out>/model.bin)");

  CLI11_PARSE(app, argc, argv);

  if (synth->parsed()) {
    genrec::Config c = load_config(synth_args);
    genrec::cmd_synth(genrec::parse_pipeline_config(c),
                      genrec::parse_synth_spec(c));
    return 0;
  }
  if (fit->parsed()) {
    genrec::cmd_fit_codecs(
        genrec::parse_pipeline_config(load_config(fit_args)));
    return 0;
  }
  if (train->parsed()) {
    genrec::PipelineConfig cfg =
        genrec::parse_pipeline_config(load_config(train_args));
    genrec::TrainResult result = genrec::cmd_train(cfg);
    std::cout << "epochs = " << result.history.size() << "\n"
              << "best_epoch = " << result.best_epoch << "\n"
              << "best_val_loss = " << std::setprecision(17)
              << result.best_val_loss << "\n";
    return 0;
  }
  if (eval->parsed()) {
    genrec::PipelineConfig cfg =
        genrec::parse_pipeline_config(load_config(eval_args));
    std::string checkpoint =
        eval_checkpoint.empty() ? genrec::model_file(cfg) : eval_checkpoint;
    genrec::MetricReport report =
        genrec::cmd_eval(cfg, checkpoint, mask_from_names(cfg, eval_subset));
    std::string tag = subset_tag(eval_subset);
    std::filesystem::path out(cfg.out_dir);
    genrec::write_metric_report_text((out / ("metrics." + tag + ".txt")).string(),
                                     report);
    genrec::write_metric_report_json((out / ("metrics." + tag + ".json")).string(),
                                     report);
    print_report(report);
    return 0;
  }
  if (ablate->parsed()) {
    genrec::PipelineConfig cfg =
        genrec::parse_pipeline_config(load_config(ablate_args));
    std::string checkpoint =
        ablate_checkpoint.empty() ? genrec::model_file(cfg) : ablate_checkpoint;
    genrec::ShapleyReport report = genrec::cmd_ablate_shapley(cfg, checkpoint);
    std::filesystem::path out(cfg.out_dir);
    genrec::write_shapley_report_text((out / "shapley.txt").string(), report);
    genrec::write_shapley_report_json((out / "shapley.json").string(), report);
    for (size_t mi = 0; mi < report.metrics.size(); ++mi)
      for (size_t d = 0; d < report.modalities.size(); ++d)
        std::cout << report.metrics[mi] << "." << report.modalities[d]
                  << " = " << std::setprecision(17) << report.phi[mi][d]
                  << "\n";
    return 0;
  }
  if (decode->parsed()) {
    genrec::PipelineConfig cfg =
        genrec::parse_pipeline_config(load_config(decode_args));
    std::string checkpoint =
        decode_checkpoint.empty() ? genrec::model_file(cfg) : decode_checkpoint;
    std::vector<genrec::ScoredItem> items =
        genrec::cmd_decode(cfg, checkpoint, decode_items, decode_topk);
    for (const genrec::ScoredItem& s : items) {
      std::cout << s.item << "\t" << std::setprecision(17) << s.score << "\t";
      for (size_t l = 0; l < s.codes.size(); ++l) {
        if (l) std::cout << ".";
        std::cout << s.codes[l];
      }
      std::cout << "\n";
    }
    return 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const genrec::Error& e) {
    std::cerr << "error [" << e.category() << "]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error [internal]: " << e.what() << "\n";
    return 2;
  }
}
