// Copyright 2026 The MotionScope Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command-line front end: gen, train, eval, ablate, report.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <regex>
#include <string>

#include "CLI11.hpp"
#include "mscope/ablation.hpp"

namespace fs = std::filesystem;
using namespace mscope;

namespace {

SeedRange parse_seeds(const std::string& s) {
  static const std::regex re(R"(^\s*(\d+)\s*\.\.\s*(\d+)\s*$)");
  std::smatch m;
  if (!std::regex_match(s, m, re)) throw InputError("--seeds expects A..B, got '" + s + "'");
  const SeedRange r{std::stoull(m[1]), std::stoull(m[2])};
  if (r.last < r.first) throw InputError("--seeds: empty range " + s);
  return r;
}

nlohmann::json metrics_json(const EvalMetrics& e) {
  return {{"J", e.J},
          {"F", e.F},
          {"JF", e.JF},
          {"accuracy", e.accuracy},
          {"long_accuracy", e.long_accuracy},
          {"separation", std::isnan(e.separation) ? nlohmann::json(nullptr) : nlohmann::json(e.separation)},
          {"val_loss_frame", e.loss_frame},
          {"val_loss_video", e.loss_video}};
}

int cmd_gen(const std::string& seeds, const fs::path& out, const std::string& config) {
  BenchmarkConfig b;
  if (!config.empty()) {
    std::ifstream is(config);
    if (!is) throw InputError("cannot open " + config);
    const auto j = nlohmann::json::parse(is);
    b = benchmark_config_from_json(j.contains("benchmark") ? j.at("benchmark") : j);
  }
  const SeedRange r = parse_seeds(seeds);
  fs::create_directories(out);
  fs::remove(out / "expressions.jsonl");
  std::size_t expressions = 0;
  for (std::uint64_t s = r.first; s <= r.last; ++s) {
    const Scene scene = generate_scene(s, b);
    if (auto bad = audit_scene(scene)) throw GenerationError("seed " + std::to_string(s) + ": " + *bad);
    write_scene(out, scene);
    expressions += scene.expressions.size();
  }
  std::ofstream(out / "benchmark.json") << to_json(b).dump(2) << '\n';
  std::cout << "wrote " << r.count() << " scenes, " << expressions << " expressions to " << out.string() << "\n";
  return 0;
}

int cmd_train(const fs::path& config, const fs::path& out) {
  const TrainConfig cfg = load_train_config(config);
  const RunReport r = train(cfg, out);
  std::cout << report_csv(r);
  return 0;
}

int cmd_eval(const fs::path& model_path, const fs::path& data, std::string config) {
  if (config.empty()) config = (model_path.parent_path() / "config.json").string();
  const TrainConfig cfg = load_train_config(config);
  Model model(cfg.model_config(), cfg.seed);
  model.load(model_path);
  const Dataset d = read_dataset(data);
  std::cout << metrics_json(evaluate(model, d, cfg.weights)).dump(2) << "\n";
  return 0;
}

int cmd_ablate(const std::string& axis, std::size_t seeds, const std::string& config, const fs::path& out,
               std::string csv) {
  const TrainConfig base = config.empty() ? TrainConfig{} : load_train_config(config);
  AblationRunner runner([&](const TrainConfig& c) {
    const fs::path dir = out / ("run_" + std::to_string(std::hash<std::string>{}(run_key(c))));
    return train(c, dir);
  });
  const auto results = runner.run_axis(base, axis, seeds, [](const std::string& line) {
    std::cerr << line << std::endl;
  });
  if (csv.empty()) csv = (out / ("ablation_" + axis + ".csv")).string();
  fs::create_directories(fs::path(csv).parent_path().empty() ? fs::path(".") : fs::path(csv).parent_path());
  std::ofstream(csv) << ablation_csv(results);
  std::cout << ablation_csv(results);
  return 0;
}

int cmd_report(const fs::path& runs, const fs::path& csv) {
  if (!fs::is_directory(runs)) throw InputError("not a directory: " + runs.string());
  std::vector<fs::path> dirs;
  for (const auto& e : fs::recursive_directory_iterator(runs))
    if (e.is_regular_file() && e.path().filename() == "report.csv") dirs.push_back(e.path().parent_path());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw InputError("no report.csv under " + runs.string());
  std::ofstream os(csv);
  if (!os) throw InputError("cannot write " + csv.string());
  os << "run,step,J,F,JF,accuracy,long_accuracy,separation\n";
  for (const auto& d : dirs) {
    std::ifstream is(d / "report.csv");
    std::string line, last;
    while (std::getline(is, line))
      if (!line.empty()) last = line;
    std::vector<std::string> cells;
    std::stringstream ss(last);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    if (cells.size() < 7 || cells[0] == "step") throw InputError("malformed " + (d / "report.csv").string());
    os << fs::relative(d, runs).string();
    for (std::size_t i = 0; i < 7; ++i) os << "," << cells[i];
    os << "\n";
  }
  std::cout << "summarised " << dirs.size() << " runs into " << csv.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Referring video segmentation on a synthetic motion benchmark"};
  app.require_subcommand(1);

  std::string seeds, out, config, model, data, axis, csv, runs;
  std::size_t ablate_seeds = 5;

  auto* gen = app.add_subcommand("gen", "Generate benchmark scenes");
  gen->add_option("--seeds", seeds, "Seed range A..B (inclusive)")->required();
  gen->add_option("--out", out, "Output dataset directory")->required();
  gen->add_option("--config", config, "Benchmark or train config JSON");

  auto* tr = app.add_subcommand("train", "Train one model");
  tr->add_option("--config", config, "Train config JSON")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", out, "Run directory")->required();

  auto* ev = app.add_subcommand("eval", "Evaluate a trained model on a dataset");
  ev->add_option("--model", model, "model.bin")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--config", config, "Train config (defaults to config.json next to the model)");

  auto* ab = app.add_subcommand("ablate", "Run an ablation axis over several seeds");
  ab->add_option("--axis", axis, "components | input-query | nh | nn | hungarian")->required();
  ab->add_option("--seeds", ablate_seeds, "Number of seeds per variant")->required()->check(CLI::PositiveNumber);
  ab->add_option("--config", config, "Base train config JSON");
  ab->add_option("--out", out, "Directory for run artifacts")->default_val("ablation");
  ab->add_option("--csv", csv, "Summary CSV path");

  auto* rp = app.add_subcommand("report", "Summarise run directories");
  rp->add_option("--runs", runs, "Directory searched for report.csv files")->required();
  rp->add_option("--csv", csv, "Output CSV")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) return cmd_gen(seeds, out, config);
    if (*tr) return cmd_train(config, out);
    if (*ev) return cmd_eval(model, data, config);
    if (*ab) return cmd_ablate(axis, ablate_seeds, config, out, csv);
    if (*rp) return cmd_report(runs, csv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
