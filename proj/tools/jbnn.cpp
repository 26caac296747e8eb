// Copyright 2026 The JBNN Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// jbnn: command-line front end for data generation, training, evaluation,
// prediction, parameter counting, benchmarking and run comparison.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "jbnn/jbnn.hpp"

namespace fs = std::filesystem;
using namespace jbnn;

namespace {

// Flat key=value file. Blank lines and lines starting with '#' are ignored.
std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t line_no = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key=value");
    }
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

// Maps a mode name to its enum value before CLI11 converts it.
CLI::Validator mode_option() {
  return CLI::Validator(
      [](std::string& s) {
        try {
          s = std::to_string(static_cast<int>(parse_run_mode(s)));
          return std::string();
        } catch (const ConfigError& e) {
          return std::string(e.what());
        }
      },
      "");
}

struct TrainFlags {
  TrainConfig tc;
  std::string relation_angles;
  std::string relation_matrix;
};

void add_train_options(CLI::App* app, TrainFlags& f) {
  TrainConfig& tc = f.tc;
  app->add_option("--seed", tc.seed, "Seed for every random choice")->capture_default_str();
  app->add_option("--workers", tc.workers, "Parallel fold workers")->capture_default_str();
  app->add_option("--mode", tc.mode, "jbnn | brnn | jbnn-no-bi | jbnn-no-att | jbnn-no-emorel")->type_name("MODE")
      ->transform(mode_option());
  app->add_option("--lr", tc.learning_rate, "Adam learning rate")->capture_default_str();
  app->add_option("--epochs", tc.epochs, "Training epochs per fold")->capture_default_str();
  app->add_option("--batch-size", tc.batch_size, "Mini-batch size")->capture_default_str();
  app->add_option("--lambda1", tc.lambda1, "Emotion relation weight")->capture_default_str();
  app->add_option("--lambda2", tc.lambda2, "L2 weight")->capture_default_str();
  app->add_option("--relation-angles", f.relation_angles, "JSON object mapping label name to wheel angle");
  app->add_option("--relation-matrix", f.relation_matrix, "CSV relation matrix (m x m)");
  app->add_flag("--train-embeddings", tc.train_embeddings, "Update the embedding table during training");
  app->add_option("--clip-norm", tc.clip_norm, "Global gradient-norm clip (0 disables)")->capture_default_str();
  app->add_option("--folds", tc.folds, "Cross-validation folds; 1 trains on a single held-out split")
      ->capture_default_str();
  app->add_option("--validation-fraction", tc.validation_fraction, "Share of each training fold used for model selection")
      ->capture_default_str();
  app->add_option("--test-fraction", tc.test_fraction, "Held-out share when --folds 1")->capture_default_str();
  app->add_option("--hidden", tc.hidden, "LSTM hidden size per direction")->capture_default_str();
  app->add_option("--attention-dim", tc.attention_dim, "Attention projection size (0 means 2 x hidden)")
      ->capture_default_str();
  app->add_option("--max-len", tc.max_len, "Sentences are truncated to this many tokens")->capture_default_str();
  app->add_option("--init-scale", tc.init_scale, "Uniform initialization half-width")->capture_default_str();
}

struct Inputs {
  LoadedEmbeddings embeddings;
  Dataset dataset;
};

Inputs load_inputs(const std::string& corpus, const std::string& embeddings, std::size_t max_len) {
  Inputs in;
  in.embeddings = load_embeddings(embeddings);
  in.dataset = load_dataset(corpus, in.embeddings.vocab, max_len);
  return in;
}

RelationSource resolve_relation(const TrainFlags& f, const std::vector<std::string>& labels) {
  RelationSource r;
  if (!f.relation_angles.empty() && !f.relation_matrix.empty()) {
    throw ConfigError("give at most one of --relation-angles and --relation-matrix");
  }
  if (!f.relation_matrix.empty()) {
    r.kind = "matrix";
    r.path = f.relation_matrix;
    r.matrix = load_relation_csv(f.relation_matrix, labels.size());
  } else if (!f.relation_angles.empty()) {
    r.kind = "angles";
    r.path = f.relation_angles;
    r.matrix = load_relation_angles(f.relation_angles, labels);
  } else if (loss_config_for(f.tc).relation_weight != 0.0) {
    r.kind = "angles-default";
    r.matrix = plutchik_weights(default_angles(labels));
  }
  return r;
}

std::string metrics_block(const MetricsReport& r) {
  std::ostringstream out;
  for (Metric m : kAllMetrics) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%-18s %s  (evaluated %zu, skipped %zu)\n", metric_title(m),
                  format_value(r[m]).c_str(), r[m].evaluated, r[m].skipped);
    out << buf;
  }
  return out.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

std::string fold_checkpoint_name(std::size_t fold) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "fold_%02zu.ckpt", fold);
  return buf;
}

// Runs fit and writes checkpoints, manifest and reports into `dir`.
RunManifest train_into(const fs::path& dir, const Inputs& in, const TrainFlags& flags, LogLevel log) {
  fs::create_directories(dir);
  FitInputs fi{in.dataset, in.embeddings.vocab, in.embeddings.table, resolve_relation(flags, in.dataset.label_names)};
  FitResult r = fit(fi, flags.tc, log);
  for (std::size_t f = 0; f < r.models.size(); ++f) {
    const std::string name = fold_checkpoint_name(f);
    save_checkpoint((dir / name).string(), r.models[f]);
    r.manifest.folds[f].checkpoint = name;
  }
  save_checkpoint((dir / "best.ckpt").string(), r.models[r.best_fold]);
  write_json(dir / "manifest.json", manifest_to_json(r.manifest));
  write_json(dir / "report.json", aggregate_to_json(r.manifest.aggregate));
  std::string text = format_table({aggregate_row(run_mode_title(flags.tc.mode), r.manifest.aggregate)});
  text += "folds: " + std::to_string(r.manifest.folds.size()) + ", best validation fold: " +
          std::to_string(r.best_fold) + "\n";
  write_text(dir / "report.txt", text);
  return r.manifest;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint binary neural network for multi-label emotion classification"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  std::string config_path;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Flat key=value file; keys are long flag names, command line wins");
  };

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic corpus, its header and embeddings");
  std::string spec_path, gen_out;
  std::uint64_t gen_seed = 1;
  gen->add_option("--spec", spec_path, "JSON generator spec (defaults apply to missing keys)");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--seed", gen_seed, "Generator seed")->capture_default_str();
  add_config(gen);

  // train
  auto* train = app.add_subcommand("train", "Cross-validated (or held-out) training");
  TrainFlags train_flags;
  std::string corpus, embeddings, out_dir;
  train->add_option("--corpus", corpus, "Corpus JSONL (labels from the sidecar .header.json)")->required();
  train->add_option("--embeddings", embeddings, "word2vec text embeddings")->required();
  train->add_option("--out", out_dir, "Output directory")->required();
  add_train_options(train, train_flags);
  add_config(train);

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint or a results file");
  std::string ckpt, manifest_path, results_path, write_results;
  std::optional<std::size_t> eval_fold;
  bool eval_json = false;
  eval->add_option("--checkpoint", ckpt, "Checkpoint file");
  eval->add_option("--corpus", corpus, "Corpus JSONL");
  eval->add_option("--manifest", manifest_path, "Run manifest; with --fold restricts to that fold's test split");
  eval->add_option("--fold", eval_fold, "Fold index in the manifest");
  eval->add_option("--results", results_path, "JSONL of {y, p, y_hat} records to score instead of a checkpoint");
  eval->add_option("--write-results", write_results, "Also write per-instance {y, p, y_hat} JSONL here");
  eval->add_flag("--json", eval_json, "Print the report as JSON");
  add_config(eval);

  // predict
  auto* pred = app.add_subcommand("predict", "Score token lists with a checkpoint");
  std::string input_path;
  pred->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  pred->add_option("--input", input_path, "JSONL, one {\"tokens\": [...]} per line")->required();
  add_config(pred);

  // count-params
  auto* count = app.add_subcommand("count-params", "Print the trainable parameter count (embeddings excluded)");
  TrainFlags count_flags;
  count_flags.tc.hidden = 100;
  std::size_t count_dim = 200, count_labels = 8;
  count->add_option("--embedding-dim", count_dim, "Word vector size")->capture_default_str();
  count->add_option("--labels", count_labels, "Number of labels")->capture_default_str();
  count->add_option("--hidden", count_flags.tc.hidden, "LSTM hidden size per direction")->capture_default_str();
  count->add_option("--attention-dim", count_flags.tc.attention_dim, "Attention size (0 means 2 x hidden)")
      ->capture_default_str();
  count->add_option("--mode", count_flags.tc.mode, "jbnn | brnn | jbnn-no-bi | jbnn-no-att | jbnn-no-emorel")->type_name("MODE")
      ->transform(mode_option());
  add_config(count);

  // bench
  auto* bench = app.add_subcommand("bench", "Parameter counts and median seconds per training epoch");
  TrainFlags bench_flags;
  std::vector<std::string> bench_modes = {"jbnn", "brnn"};
  std::size_t bench_epochs = 3;
  bench->add_option("--corpus", corpus, "Corpus JSONL")->required();
  bench->add_option("--embeddings", embeddings, "word2vec text embeddings")->required();
  bench->add_option("--modes", bench_modes, "Modes to time")->delimiter(',')->capture_default_str();
  bench->add_option("--bench-epochs", bench_epochs, "Timed epochs per mode (at least 3)")->capture_default_str();
  add_train_options(bench, bench_flags);
  add_config(bench);

  // ttest
  auto* ttest = app.add_subcommand("ttest", "Paired two-tailed t-tests between runs (folds paired by index)");
  std::vector<std::string> runs_a, runs_b;
  std::string name_a = "A", name_b = "B";
  double alpha = 0.05;
  ttest->add_option("--a", runs_a, "Manifest(s) of the first model; several are pooled")
      ->required()
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  ttest->add_option("--b", runs_b, "Manifest(s) of the second model, same order")
      ->required()
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  ttest->add_option("--name-a", name_a, "Display name of the first model");
  ttest->add_option("--name-b", name_b, "Display name of the second model");
  ttest->add_option("--alpha", alpha, "Significance level")->capture_default_str();
  add_config(ttest);

  // ablate
  auto* ablate = app.add_subcommand("ablate", "Train JBNN and its three ablations; table plus t-tests");
  TrainFlags ablate_flags;
  ablate->add_option("--corpus", corpus, "Corpus JSONL")->required();
  ablate->add_option("--embeddings", embeddings, "word2vec text embeddings")->required();
  ablate->add_option("--out", out_dir, "Output directory")->required();
  add_train_options(ablate, ablate_flags);
  add_config(ablate);

  // A config file is expanded into flags placed before the real arguments,
  // so TakeLast lets the command line override it.
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    for (std::size_t i = 0; i < args.size(); ++i) {
      std::string path;
      if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
      if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
      if (path.empty() || args.empty()) continue;
      CLI::App* sub = app.get_subcommand_no_throw(args[0]);
      if (sub == nullptr) throw ConfigError("--config must follow a subcommand");
      std::vector<std::string> injected;
      for (const auto& [key, value] : read_config_file(path)) {
        const CLI::Option* opt = sub->get_option_no_throw("--" + key);
        if (opt == nullptr || key == "config" || key == "help") {
          throw ConfigError(path + ": unknown key '" + key + "' for " + args[0]);
        }
        injected.push_back("--" + key + "=" + value);
      }
      args.insert(args.begin() + 1, injected.begin(), injected.end());
      break;
    }
  } catch (const std::exception& e) {
    std::cerr << "jbnn: error: " << e.what() << '\n';
    return 2;
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    const LogLevel log = log_level_from_env();

    if (*gen) {
      SynthSpec spec;
      if (!spec_path.empty()) spec = synth_spec_from_json(read_json(spec_path));
      const auto c = generate_synthetic(spec, gen_seed);
      fs::create_directories(gen_out);
      const fs::path dir(gen_out);
      write_dataset((dir / "corpus.jsonl").string(), c.dataset, c.vocab);
      save_embeddings((dir / "embeddings.txt").string(), c.vocab, c.embeddings);
      std::cout << "wrote " << c.dataset.size() << " examples, " << c.vocab.size() << " tokens, dim "
                << c.embeddings.dim() << " to " << gen_out << '\n';
    } else if (*train) {
      train_flags.tc.validate();
      const Inputs in = load_inputs(corpus, embeddings, train_flags.tc.max_len);
      const RunManifest m = train_into(out_dir, in, train_flags, log);
      std::cout << format_table({aggregate_row(run_mode_title(train_flags.tc.mode), m.aggregate)});
    } else if (*eval) {
      std::vector<EvalInstance> results;
      if (!results_path.empty()) {
        std::ifstream rin(results_path);
        if (!rin) throw ParseError("cannot open " + results_path);
        results = parse_results(rin, results_path);
        for (auto& e : results)
          if (e.y_hat.empty()) e.y_hat = predict(e.p);
      } else {
        if (ckpt.empty() || corpus.empty()) throw ConfigError("eval needs --checkpoint and --corpus, or --results");
        const Classifier c = load_checkpoint(ckpt);
        const Dataset ds = load_dataset(corpus, c.vocab, c.config.max_len);
        if (!manifest_path.empty()) {
          if (!eval_fold) throw ConfigError("--manifest needs --fold");
          const RunManifest m = manifest_from_json(read_json(manifest_path));
          if (*eval_fold >= m.folds.size()) throw ConfigError("fold " + std::to_string(*eval_fold) + " is not in the manifest");
          results = predict_all(c, ds, m.folds[*eval_fold].test);
        } else {
          results = predict_all(c, ds);
        }
      }
      if (!write_results.empty()) {
        std::ofstream wout(write_results);
        if (!wout) throw Error("cannot write " + write_results);
        for (const auto& e : results) wout << instance_to_json(e).dump() << '\n';
      }
      const MetricsReport r = evaluate(results);
      if (eval_json) {
        std::cout << report_to_json(r).dump(2) << '\n';
      } else {
        std::cout << "instances: " << r.instances << '\n' << metrics_block(r);
      }
    } else if (*pred) {
      const Classifier c = load_checkpoint(ckpt);
      std::ifstream pin(input_path);
      if (!pin) throw ParseError("cannot open " + input_path);
      std::string line;
      std::size_t line_no = 0;
      while (std::getline(pin, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = input_path + ":" + std::to_string(line_no);
        Sentence s;
        try {
          const auto j = nlohmann::json::parse(line);
          const auto& tokens = j.is_array() ? j : j.at("tokens");
          for (const auto& t : tokens) {
            if (s.ids.size() == c.config.max_len) break;
            s.ids.push_back(c.vocab.lookup(t.get<std::string>()));
          }
        } catch (const std::exception& e) {
          throw ParseError(where + ": " + e.what());
        }
        if (s.ids.empty()) throw ParseError(where + ": empty token list");
        const ProbVector p = c.predict_proba(s);
        const LabelVector y = predict(p);
        std::vector<std::string> active;
        for (std::size_t j = 0; j < y.size(); ++j)
          if (y[j]) active.push_back(c.label_names[j]);
        std::cout << nlohmann::json{{"p", p}, {"y_hat", y}, {"labels", active}}.dump() << '\n';
      }
    } else if (*count) {
      std::cout << count_params(model_config_for(count_flags.tc, count_dim, count_labels)) << '\n';
    } else if (*bench) {
      bench_flags.tc.validate();
      const Inputs in = load_inputs(corpus, embeddings, bench_flags.tc.max_len);
      std::vector<BenchReport> reports;
      for (const auto& name : bench_modes) {
        TrainFlags f = bench_flags;
        f.tc.mode = parse_run_mode(name);
        FitInputs fi{in.dataset, in.embeddings.vocab, in.embeddings.table, resolve_relation(f, in.dataset.label_names)};
        reports.push_back(benchmark(fi, f.tc, bench_epochs));
        log_line(LogLevel::kInfo, log, std::string("benchmarked ") + name);
      }
      std::cout << format_bench(reports);
    } else if (*ttest) {
      if (runs_a.size() != runs_b.size()) throw ConfigError("--a and --b need the same number of manifests");
      std::vector<RunManifest> a, b;
      for (const auto& p : runs_a) a.push_back(manifest_from_json(read_json(p)));
      for (const auto& p : runs_b) b.push_back(manifest_from_json(read_json(p)));
      std::cout << format_comparisons(name_a, name_b, compare_pooled(a, b, alpha));
    } else if (*ablate) {
      ablate_flags.tc.validate();
      const Inputs in = load_inputs(corpus, embeddings, ablate_flags.tc.max_len);
      const fs::path dir(out_dir);
      std::vector<RunManifest> runs;
      std::vector<TableRow> rows;
      const std::vector<RunMode> modes = {RunMode::kJbnn, RunMode::kJbnnNoBi, RunMode::kJbnnNoAtt,
                                          RunMode::kJbnnNoEmoRel};
      for (RunMode mode : modes) {
        TrainFlags f = ablate_flags;
        f.tc.mode = mode;
        runs.push_back(train_into(dir / run_mode_name(mode), in, f, log));
        rows.push_back(aggregate_row(run_mode_title(mode), runs.back().aggregate));
      }
      std::string text = format_table(rows);
      if (runs[0].folds.size() >= 2) {
        for (std::size_t i = 1; i < runs.size(); ++i) {
          text += format_comparisons(run_mode_title(modes[0]), run_mode_title(modes[i]), compare_runs(runs[0], runs[i]));
        }
      }
      write_text(dir / "ablation.txt", text);
      std::cout << text;
    }
  } catch (const std::exception& e) {
    std::cerr << "jbnn: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
