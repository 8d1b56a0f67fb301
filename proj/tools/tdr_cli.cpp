// Experiment runner: semi-synthetic relative-error tables, Monte-Carlo
// bias/variance checks, debiased training/evaluation, and the clipping sweep.
// Every run copies its effective config, seed list, and a version string into
// the output directory; re-running from that config reproduces the result
// files byte for byte.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tdr/common.hpp"
#include "tdr/core.hpp"
#include "tdr/datasets.hpp"
#include "tdr/estimators.hpp"
#include "tdr/io.hpp"
#include "tdr/mclab.hpp"
#include "tdr/metrics.hpp"
#include "tdr/models.hpp"
#include "tdr/rng.hpp"
#include "tdr/synthgen.hpp"
#include "tdr/targeting.hpp"
#include "tdr/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Config plumbing. The JSON file is merged over built-in defaults; command
// line flags win over the file. json orders keys lexicographically, so
// dump() of the merged config is canonical.

json default_config() {
  return json{
      {"seeds", {1, 2, 3, 4, 5}},
      {"synth",
       {{"n_users", 300},
        {"n_items", 400},
        {"alpha", 0.7},
        {"p_base", 1.0},
        {"target_obs_rate", 0.02},
        {"n_replicates", 20},
        {"rating_file", ""},
        {"rating_format", "triples"}}},
      {"mc",
       {{"n_users", 100},
        {"n_items", 100},
        {"replicates", 2000},
        {"accurate_propensity", true},
        {"accurate_imputation", true},
        {"beta", 0.5},
        {"imputation_shift", 0.5},
        {"low_p", 0.05},
        {"low_p_share", 0.05},
        {"p_lo", 0.2},
        {"p_hi", 0.9},
        {"sweep_p_min", json::array()}}},
      {"train",
       {{"variant", "TDR_CL"},
        {"dim", 32},
        {"lr", 0.01},
        {"weight_decay", 1e-5},
        {"d_batch", 8192},
        {"o_batch", 2048},
        {"max_epochs", 60},
        {"patience", 5},
        {"clip", 0.05},
        {"warm_epochs", 5},
        {"pretrain_epochs", 100},
        {"pretrain_lr", 0.1},
        {"oracle_propensities", false},
        {"binarize_threshold", 4.0},
        {"checkpoint", ""},
        {"dataset",
         {{"train_file", ""},
          {"test_file", ""},
          {"format", "triples"},
          {"val_fraction", 0.1},
          {"synthetic",
           {{"n_users", 200},
            {"n_items", 300},
            {"alpha", 0.5},
            {"target_obs_rate", 0.05},
            {"test_rate", 0.03}}}}}}},
      {"sweep",
       {{"thresholds", {0.05, 0.10, 0.15, 0.20}},
        {"variants", {"TDR_CL", "DR_CL"}}}},
  };
}

void merge_into(json& base, const json& overlay) {
  if (!overlay.is_object()) {
    base = overlay;
    return;
  }
  for (auto it = overlay.begin(); it != overlay.end(); ++it) {
    if (base.contains(it.key()) && base[it.key()].is_object() && it.value().is_object()) {
      merge_into(base[it.key()], it.value());
    } else {
      base[it.key()] = it.value();
    }
  }
}

struct Cli {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> variant;
  std::optional<double> clip;
};

json load_effective_config(const Cli& cli) {
  json cfg = default_config();
  if (!cli.config_path.empty()) {
    json file = json::parse(tdr::read_text_file(cli.config_path));
    merge_into(cfg, file);
  }
  if (cli.seed) cfg["seeds"] = json::array({*cli.seed});
  if (cli.variant) cfg["train"]["variant"] = *cli.variant;
  if (cli.clip) cfg["train"]["clip"] = *cli.clip;
  return cfg;
}

std::vector<std::uint64_t> seed_list(const json& cfg) {
  std::vector<std::uint64_t> seeds;
  for (const auto& s : cfg.at("seeds")) seeds.push_back(s.get<std::uint64_t>());
  tdr::require(!seeds.empty(), "config: empty seed list");
  return seeds;
}

void write_run_artifacts(const fs::path& out, const json& cfg) {
  tdr::ensure_dir(out);
  const std::string canonical = cfg.dump(2) + "\n";
  tdr::write_text_file(out / "config.json", canonical);
  std::string seeds_text;
  for (const auto& s : seed_list(cfg)) seeds_text += std::to_string(s) + "\n";
  tdr::write_text_file(out / "seeds.txt", seeds_text);
  tdr::write_text_file(out / "VERSION", tdr::version_string(canonical) + "\n");
}

void write_table(const fs::path& out, const std::string& stem, const tdr::CsvTable& table,
                 const json& rows_json) {
  tdr::write_text_file(out / (stem + ".csv"), table.to_string());
  tdr::write_text_file(out / (stem + ".json"), rows_json.dump(2) + "\n");
}

tdr::TrainerConfig trainer_config_from(const json& t, std::uint64_t seed) {
  tdr::TrainerConfig cfg;
  cfg.variant = tdr::parse_variant(t.at("variant").get<std::string>());
  cfg.dim = t.at("dim").get<std::size_t>();
  const double lr = t.at("lr").get<double>();
  cfg.adam_pred.lr = cfg.adam_imp.lr = cfg.adam_prop.lr = lr;
  cfg.weight_decay = t.at("weight_decay").get<double>();
  cfg.d_batch = t.at("d_batch").get<std::size_t>();
  cfg.o_batch = t.at("o_batch").get<std::size_t>();
  cfg.max_epochs = t.at("max_epochs").get<std::size_t>();
  cfg.patience = t.at("patience").get<std::size_t>();
  cfg.clip_threshold = t.at("clip").get<double>();
  cfg.warm_epochs = t.at("warm_epochs").get<std::size_t>();
  cfg.pretrain_epochs = t.at("pretrain_epochs").get<std::size_t>();
  cfg.pretrain_lr = t.at("pretrain_lr").get<double>();
  cfg.oracle_propensities = t.at("oracle_propensities").get<bool>();
  cfg.seed = seed;
  return cfg;
}

tdr::RatingFileSpec rating_spec(const std::string& format) {
  tdr::RatingFileSpec spec;
  if (format == "matrix") {
    spec.format = tdr::RatingFileFormat::AsciiMatrix;
  } else if (format == "triples") {
    spec.format = tdr::RatingFileFormat::DelimitedTriples;
  } else {
    throw tdr::ConfigError("config: rating format must be 'matrix' or 'triples'");
  }
  return spec;
}

// Builds the training view either from real MNAR/MAR files or from the
// built-in synthetic world. Synthetic runs carry true propensities along for
// oracle-propensity training.
tdr::TrainingData make_training_data(const json& t, std::uint64_t seed) {
  const json& ds = t.at("dataset");
  const std::string train_file = ds.at("train_file").get<std::string>();
  const double binarize_threshold = t.at("binarize_threshold").get<double>();
  if (!train_file.empty()) {
    const auto spec = rating_spec(ds.at("format").get<std::string>());
    const tdr::TripleLoad mnar = tdr::load_rating_file(train_file, spec);
    const tdr::TripleLoad mar =
        tdr::load_rating_file(ds.at("test_file").get<std::string>(), spec);
    tdr::PairSpace space{
        std::max(mnar.space.n_users, mar.space.n_users),
        std::max(mnar.space.n_items, mar.space.n_items)};
    const tdr::SplitDataset split = tdr::make_split(
        mnar.triples, mar.triples, space, ds.at("val_fraction").get<double>(), seed);
    return tdr::build_training_data(split, binarize_threshold);
  }
  const json& syn = ds.at("synthetic");
  tdr::SynthConfig scfg;
  scfg.alpha = syn.at("alpha").get<double>();
  scfg.target_obs_rate = syn.at("target_obs_rate").get<double>();
  tdr::SeededRng rng(seed);
  const tdr::PairSpace space{syn.at("n_users").get<std::size_t>(),
                             syn.at("n_items").get<std::size_t>()};
  tdr::BuiltinRatingsConfig rcfg;
  // Mixed marginal keeps the binarized labels balanced for AUC.
  rcfg.marginal = {0.06, 0.11, 0.27, 0.34, 0.22};
  const tdr::SynthWorld world = tdr::make_builtin_world(space, scfg, rcfg, rng);
  tdr::SynthSplitConfig split_cfg;
  split_cfg.val_fraction = ds.at("val_fraction").get<double>();
  split_cfg.test_rate = syn.at("test_rate").get<double>();
  const tdr::SplitDataset split = tdr::make_synthetic_split(world, split_cfg, rng);
  tdr::TrainingData data = tdr::build_training_data(split, 0.5);
  data.p_true = world.p_true;
  return data;
}

// ---------------------------------------------------------------------------
// synth: six-scenario relative-error table, mean +/- SD over replicates.

int cmd_synth(const Cli& cli) {
  const json cfg = load_effective_config(cli);
  const fs::path out(cli.out_dir);
  write_run_artifacts(out, cfg);

  const json& s = cfg.at("synth");
  tdr::SynthConfig scfg;
  scfg.alpha = s.at("alpha").get<double>();
  scfg.p_base = s.at("p_base").get<double>();
  scfg.target_obs_rate = s.at("target_obs_rate").get<double>();
  scfg.n_replicates = s.at("n_replicates").get<std::size_t>();

  tdr::CsvTable table;
  table.header = {"seed", "scenario"};
  for (const std::string& name : tdr::re_table_estimators()) {
    table.header.push_back(name + "_mean");
    table.header.push_back(name + "_sd");
  }
  json rows = json::array();

  for (std::uint64_t seed : seed_list(cfg)) {
    tdr::SeededRng rng(seed);
    tdr::SynthWorld world;
    const std::string rating_file = s.at("rating_file").get<std::string>();
    if (!rating_file.empty()) {
      const auto spec = rating_spec(s.at("rating_format").get<std::string>());
      const tdr::TripleLoad load = tdr::load_rating_file(rating_file, spec);
      const std::vector<int> completed =
          tdr::complete_ratings(load.space, load.triples.user, load.triples.item,
                                load.triples.rating, tdr::CompletionConfig{}, rng);
      world = tdr::make_world(load.space, completed, scfg);
    } else {
      const tdr::PairSpace space{s.at("n_users").get<std::size_t>(),
                                 s.at("n_items").get<std::size_t>()};
      world = tdr::make_builtin_world(space, scfg, tdr::BuiltinRatingsConfig{}, rng);
    }
    const std::vector<tdr::RETableRow> re =
        tdr::run_re_table(world, tdr::kAllScenarios, scfg.n_replicates, rng);
    for (const auto& row : re) {
      std::vector<std::string> cells = {std::to_string(seed),
                                        tdr::scenario_name(row.scenario)};
      json jrow = {{"seed", seed}, {"scenario", tdr::scenario_name(row.scenario)}};
      for (const auto& cell : row.cells) {
        cells.push_back(tdr::fmt_double(cell.mean_re));
        cells.push_back(tdr::fmt_double(cell.sd_re));
        jrow[cell.estimator + "_mean"] = cell.mean_re;
        jrow[cell.estimator + "_sd"] = cell.sd_re;
      }
      table.add_row(std::move(cells));
      rows.push_back(std::move(jrow));
    }
  }
  write_table(out, "re_table", table, rows);
  std::cout << table.to_string();
  return 0;
}

// ---------------------------------------------------------------------------
// mc: bias/variance Monte Carlo. Exits nonzero if the variance ordering or
// the unbiasedness checks fail.

int cmd_mc(const Cli& cli) {
  const json cfg = load_effective_config(cli);
  const fs::path out(cli.out_dir);
  write_run_artifacts(out, cfg);

  const json& m = cfg.at("mc");
  tdr::MCWorldConfig wcfg;
  wcfg.low_p = m.at("low_p").get<double>();
  wcfg.low_p_share = m.at("low_p_share").get<double>();
  wcfg.p_lo = m.at("p_lo").get<double>();
  wcfg.p_hi = m.at("p_hi").get<double>();
  tdr::MCScenario sc;
  sc.accurate_propensity = m.at("accurate_propensity").get<bool>();
  sc.accurate_imputation = m.at("accurate_imputation").get<bool>();
  sc.beta = m.at("beta").get<double>();
  sc.imputation_shift = m.at("imputation_shift").get<double>();
  const std::size_t replicates = m.at("replicates").get<std::size_t>();
  const tdr::PairSpace space{m.at("n_users").get<std::size_t>(),
                             m.at("n_items").get<std::size_t>()};

  tdr::CsvTable table;
  table.header = {"seed", "estimator", "mean", "variance", "se_mean", "se_var"};
  json rows = json::array();
  bool ok = true;

  for (std::uint64_t seed : seed_list(cfg)) {
    tdr::SeededRng rng(seed);
    const tdr::MCWorld world = tdr::make_mc_world(space, wcfg, rng);
    const tdr::MCReport report = tdr::run_bias_variance(world, sc, replicates, rng);
    for (const auto& st : report.stats) {
      table.add_row({std::to_string(seed), st.name, tdr::fmt_double(st.mean),
                     tdr::fmt_double(st.variance), tdr::fmt_double(st.se_mean),
                     tdr::fmt_double(st.se_var)});
      rows.push_back({{"seed", seed},
                      {"estimator", st.name},
                      {"mean", st.mean},
                      {"variance", st.variance},
                      {"se_mean", st.se_mean},
                      {"se_var", st.se_var}});
    }
    const auto& eib = report.by_name("eib");
    const auto& dr = report.by_name("dr");
    const auto& ips = report.by_name("ips");
    const auto& tdr_s = report.by_name("tdr");
    if (sc.accurate_propensity && sc.accurate_imputation) {
      if (!(eib.variance <= dr.variance && dr.variance <= ips.variance)) {
        std::cerr << "mc: variance ordering violated at seed " << seed << "\n";
        ok = false;
      }
      for (const auto* st : {&eib, &dr, &ips}) {
        if (std::abs(st->mean - report.ideal) > 4.0 * st->se_mean) {
          std::cerr << "mc: " << st->name << " mean off ideal at seed " << seed << "\n";
          ok = false;
        }
      }
    }
    if (sc.accurate_propensity && !sc.accurate_imputation) {
      if (std::abs(tdr_s.mean - report.ideal) > 4.0 * tdr_s.se_mean) {
        std::cerr << "mc: tdr biased under accurate propensities at seed " << seed << "\n";
        ok = false;
      }
    }
  }

  const json sweep_grid = m.at("sweep_p_min");
  if (!sweep_grid.empty()) {
    std::vector<double> grid;
    for (const auto& v : sweep_grid) grid.push_back(v.get<double>());
    tdr::SeededRng rng(seed_list(cfg).front());
    const auto sweep = tdr::small_propensity_sweep(space, wcfg, grid, replicates, rng);
    tdr::CsvTable stable;
    stable.header = {"p_min",   "var_ips",        "var_dr",        "var_eib",
                     "var_tdr", "closed_var_ips", "closed_var_dr", "closed_var_eib"};
    json srows = json::array();
    for (const auto& row : sweep) {
      const double v_ips = row.report.by_name("ips").variance;
      const double v_dr = row.report.by_name("dr").variance;
      const double v_eib = row.report.by_name("eib").variance;
      const double v_tdr = row.report.by_name("tdr").variance;
      stable.add_row({tdr::fmt_double(row.p_min), tdr::fmt_double(v_ips),
                      tdr::fmt_double(v_dr), tdr::fmt_double(v_eib), tdr::fmt_double(v_tdr),
                      tdr::fmt_double(row.closed.ips), tdr::fmt_double(row.closed.dr),
                      tdr::fmt_double(row.closed.eib)});
      srows.push_back({{"p_min", row.p_min},
                       {"var_ips", v_ips},
                       {"var_dr", v_dr},
                       {"var_eib", v_eib},
                       {"var_tdr", v_tdr},
                       {"closed_var_ips", row.closed.ips},
                       {"closed_var_dr", row.closed.dr},
                       {"closed_var_eib", row.closed.eib}});
    }
    write_table(out, "p_min_sweep", stable, srows);
  }

  write_table(out, "mc_report", table, rows);
  std::cout << table.to_string();
  return ok ? 0 : 1;
}

// ---------------------------------------------------------------------------
// train / eval: one metric row per (seed, variant).

json metric_row(std::uint64_t seed, const std::string& variant, const tdr::TrainResult& res,
                const tdr::EvalRow& eval) {
  return {{"seed", seed},          {"variant", variant},
          {"mse", eval.mse},       {"auc", eval.auc_value},
          {"ndcg5", eval.ndcg5},   {"ndcg10", eval.ndcg10},
          {"best_epoch", res.best_epoch}, {"best_val_auc", res.best_val_auc},
          {"diverged", res.diverged}};
}

int cmd_train(const Cli& cli) {
  const json cfg = load_effective_config(cli);
  const fs::path out(cli.out_dir);
  write_run_artifacts(out, cfg);

  const json& t = cfg.at("train");
  tdr::CsvTable table;
  table.header = {"seed", "variant", "mse", "auc", "ndcg5", "ndcg10", "best_epoch",
                  "best_val_auc", "diverged"};
  json rows = json::array();

  tdr::CsvTable history;
  history.header = {"seed", "epoch", "val_auc", "joint_loss", "imp_loss", "eta_star",
                    "validity", "omega_abs_mean"};

  for (std::uint64_t seed : seed_list(cfg)) {
    const tdr::TrainingData data = make_training_data(t, seed);
    const tdr::TrainerConfig tcfg = trainer_config_from(t, seed);
    const tdr::TrainResult res = tdr::run_training(data, tcfg);
    if (res.diverged) {
      std::cerr << "train: divergence at seed " << seed << "; last snapshot epoch "
                << (res.history.empty() ? 0 : res.history.back().epoch) << "\n";
    }
    const tdr::EvalRow eval = tdr::evaluate_model(data.test, res.bundle.pred);
    const std::string vname = tdr::variant_name(tcfg.variant);
    table.add_row({std::to_string(seed), vname, tdr::fmt_double(eval.mse),
                   tdr::fmt_double(eval.auc_value), tdr::fmt_double(eval.ndcg5),
                   tdr::fmt_double(eval.ndcg10), std::to_string(res.best_epoch),
                   tdr::fmt_double(res.best_val_auc), res.diverged ? "1" : "0"});
    rows.push_back(metric_row(seed, vname, res, eval));
    for (const auto& snap : res.history) {
      history.add_row({std::to_string(seed), std::to_string(snap.epoch),
                       tdr::fmt_double(snap.val_auc), tdr::fmt_double(snap.joint_loss),
                       tdr::fmt_double(snap.imp_loss), tdr::fmt_double(snap.eta_star),
                       tdr::fmt_double(snap.validity), tdr::fmt_double(snap.omega_abs_mean)});
    }
    const std::string ckpt = t.at("checkpoint").get<std::string>();
    if (!ckpt.empty() || seed == seed_list(cfg).front()) {
      const fs::path path =
          ckpt.empty() ? out / ("model_seed" + std::to_string(seed) + ".bin") : fs::path(ckpt);
      std::ofstream os(path, std::ios::binary);
      if (!os) throw tdr::DataError("train: cannot open checkpoint " + path.string());
      tdr::save_bundle(os, res.bundle);
    }
  }
  write_table(out, "metrics", table, rows);
  tdr::write_text_file(out / "history.csv", history.to_string());
  std::cout << table.to_string();
  return 0;
}

int cmd_eval(const Cli& cli) {
  const json cfg = load_effective_config(cli);
  const fs::path out(cli.out_dir);
  write_run_artifacts(out, cfg);

  const json& t = cfg.at("train");
  const std::string ckpt = t.at("checkpoint").get<std::string>();
  tdr::require(!ckpt.empty(), "eval: train.checkpoint path required");
  const std::uint64_t seed = seed_list(cfg).front();
  const tdr::TrainingData data = make_training_data(t, seed);
  std::ifstream is(ckpt, std::ios::binary);
  if (!is) throw tdr::DataError("eval: cannot open checkpoint " + ckpt);
  const tdr::ModelBundle bundle = tdr::load_bundle(is);
  const tdr::EvalRow eval = tdr::evaluate_model(data.test, bundle.pred);

  tdr::CsvTable table;
  table.header = {"seed", "variant", "mse", "auc", "ndcg5", "ndcg10"};
  table.add_row({std::to_string(seed), t.at("variant").get<std::string>(),
                 tdr::fmt_double(eval.mse), tdr::fmt_double(eval.auc_value),
                 tdr::fmt_double(eval.ndcg5), tdr::fmt_double(eval.ndcg10)});
  json rows = json::array();
  rows.push_back({{"seed", seed},
                  {"variant", t.at("variant").get<std::string>()},
                  {"mse", eval.mse},
                  {"auc", eval.auc_value},
                  {"ndcg5", eval.ndcg5},
                  {"ndcg10", eval.ndcg10}});
  write_table(out, "metrics", table, rows);
  std::cout << table.to_string();
  return 0;
}

// ---------------------------------------------------------------------------
// sweep: clipping-threshold sensitivity for a set of variants.

int cmd_sweep(const Cli& cli) {
  const json cfg = load_effective_config(cli);
  const fs::path out(cli.out_dir);
  write_run_artifacts(out, cfg);

  const json& sw = cfg.at("sweep");
  std::vector<double> thresholds;
  for (const auto& v : sw.at("thresholds")) thresholds.push_back(v.get<double>());
  tdr::require(!thresholds.empty(), "sweep: empty threshold grid");
  std::vector<std::string> variants;
  for (const auto& v : sw.at("variants")) variants.push_back(v.get<std::string>());

  tdr::CsvTable table;
  table.header = {"seed", "variant", "clip", "auc", "ndcg5", "ndcg10"};
  json rows = json::array();

  for (std::uint64_t seed : seed_list(cfg)) {
    const tdr::TrainingData data = make_training_data(cfg.at("train"), seed);
    for (const std::string& vname : variants) {
      for (double clip : thresholds) {
        json t = cfg.at("train");
        t["variant"] = vname;
        t["clip"] = clip;
        const tdr::TrainerConfig tcfg = trainer_config_from(t, seed);
        const tdr::TrainResult res = tdr::run_training(data, tcfg);
        const tdr::EvalRow eval = tdr::evaluate_model(data.test, res.bundle.pred);
        table.add_row({std::to_string(seed), vname, tdr::fmt_double(clip),
                       tdr::fmt_double(eval.auc_value), tdr::fmt_double(eval.ndcg5),
                       tdr::fmt_double(eval.ndcg10)});
        rows.push_back({{"seed", seed},
                        {"variant", vname},
                        {"clip", clip},
                        {"auc", eval.auc_value},
                        {"ndcg5", eval.ndcg5},
                        {"ndcg10", eval.ndcg10}});
      }
    }
  }
  write_table(out, "sweep", table, rows);
  std::cout << table.to_string();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Debiased recommendation experiment runner"};
  app.require_subcommand(1);

  Cli cli;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", cli.config_path, "JSON config file");
    sub->add_option("--out", cli.out_dir, "output directory")->required();
    sub->add_option("--seed", cli.seed, "override: run this single seed");
    sub->add_option("--variant", cli.variant, "override: trainer variant");
    sub->add_option("--clip", cli.clip, "override: propensity clipping threshold");
  };

  CLI::App* synth = app.add_subcommand("synth", "semi-synthetic relative-error table");
  CLI::App* mc = app.add_subcommand("mc", "Monte-Carlo bias/variance checks");
  CLI::App* train = app.add_subcommand("train", "train a variant and evaluate");
  CLI::App* eval = app.add_subcommand("eval", "evaluate a saved checkpoint");
  CLI::App* sweep = app.add_subcommand("sweep", "clipping-threshold sensitivity");
  for (CLI::App* sub : {synth, mc, train, eval, sweep}) add_common(sub);

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(cli);
    if (mc->parsed()) return cmd_mc(cli);
    if (train->parsed()) return cmd_train(cli);
    if (eval->parsed()) return cmd_eval(cli);
    if (sweep->parsed()) return cmd_sweep(cli);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  }
  return 2;
}
