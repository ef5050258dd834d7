#pragma once

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "radet/bound/side_bound.hpp"
#include "radet/det/checkpoint.hpp"
#include "radet/det/train.hpp"
#include "radet/eval/evaluate.hpp"
#include "radet/io/config.hpp"
#include "radet/io/dataset_file.hpp"
#include "radet/io/exit_codes.hpp"
#include "radet/io/plot_emit.hpp"
#include "radet/io/reports.hpp"
#include "radet/io/toy_data.hpp"
#include "radet/shift/shift.hpp"

namespace radet::io {

struct CommonOptions {
  std::string config_path;
  std::string out_dir;
  int threads = -1;  // -1: from config; 0: all cores
};

inline RunConfig load_run_config(const CommonOptions& o) {
  RunConfig c;
  if (!o.config_path.empty()) c = parse_run_config(read_text(o.config_path));
  if (o.threads == 0)
    c.threads = std::max(1u, std::thread::hardware_concurrency());
  else if (o.threads > 0)
    c.threads = static_cast<unsigned>(o.threads);
  if (!o.out_dir.empty())
    c.output_dir = o.out_dir;
  else if (c.output_dir.empty())
    c.output_dir = default_output_dir();
  return c;
}

/// Creates the output directory and writes the resolved-config echo into it.
inline void prepare_output(const RunConfig& c, const std::string& command) {
  ensure_dir(c.output_dir);
  Json echo = to_json(c);
  echo["command"] = command;
  write_text(join_path(c.output_dir, "resolved_config.json"), echo.dump(2) + "\n");
}

inline det::ImageSet dataset_or_synth(const std::string& path, const RunConfig& c, bool train_split) {
  if (!path.empty()) return load_dataset(path);
  auto splits = make_toy_splits(c.data.spec, train_split ? c.data.n_train : 1, train_split ? 1 : c.data.n_test);
  return train_split ? std::move(splits.train) : std::move(splits.test);
}

inline std::string train_log_csv(const det::TrainResult& r) {
  std::string out = "epoch,loss_bce,loss_ra,loss_comp,s_real,s_fake,ra_skipped\n";
  for (const auto& e : r.epochs)
    out += std::to_string(e.epoch) + "," + num(e.loss_bce) + "," + num(e.loss_ra) + "," + num(e.loss_comp) + "," +
           num(e.s_real) + "," + num(e.s_fake) + "," + std::to_string(e.ra_skipped) + "\n";
  return out;
}

inline SimilarityHistogram model_similarity_histogram(const det::Detector& model, const det::ImageSet& data,
                                                      unsigned threads) {
  std::vector<double> sims(data.size());
  parallel_for(data.size(), threads, [&](std::size_t i) { sims[i] = model.forward(data.images[i], true).s; });
  return similarity_histogram(sims, data.labels);
}

// ---------------------------------------------------------------------------
// Subcommands

inline int cmd_shift_scan(const CommonOptions& o, std::ostream& out) {
  const auto c = load_run_config(o);
  prepare_output(c, "shift-scan");
  const auto manifold = build_manifold(c);
  const auto encoder = build_encoder(c, manifold);
  const auto anchors = build_anchors(c, *manifold);
  const auto gen = build_generator(c, anchors);
  const auto curve = shift::shift_scan(encoder, *manifold, gen, c.shift_scan.eps_grid, build_scan_options(c));
  write_text(join_path(c.output_dir, "shift_curve.csv"), shift_curve_csv(curve));
  PlotInputs p;
  p.curve = curve;
  plot_emit(p, c.output_dir);
  out << "shift-scan: " << curve.rows.size() << " rows, argmax eps " << curve.eps_turn
      << (curve.interior_argmax ? " (interior)" : " (boundary)") << "\n";
  return kExitOk;
}

inline int cmd_bound_sweep(const CommonOptions& o, std::ostream& out, std::ostream& err) {
  const auto c = load_run_config(o);
  prepare_output(c, "bound-sweep");
  const auto report = bound::bound_sweep(build_bound_config(c));
  write_text(join_path(c.output_dir, "bound_report.csv"), bound_report_csv(report));
  write_text(join_path(c.output_dir, "bound_report.json"), to_json(report).dump(2) + "\n");
  PlotInputs p;
  p.bound = report;
  plot_emit(p, c.output_dir);
  out << "bound-sweep: " << report.rows.size() << " rows at eps " << report.eps << ", status "
      << (report.failed ? "FAILED" : "OK") << "\n";
  if (report.failed) {
    err << "bound-sweep: FAILED rows:";
    for (auto i : report.failed_rows) err << ' ' << i;
    err << "\n";
    return kExitNumeric;
  }
  return kExitOk;
}

inline int cmd_make_data(const CommonOptions& o, std::ostream& out) {
  const auto c = load_run_config(o);
  prepare_output(c, "make-data");
  const auto splits = make_toy_splits(c.data.spec, c.data.n_train, c.data.n_test);
  save_dataset(splits.train, join_path(c.output_dir, "train.radat"));
  save_dataset(splits.test, join_path(c.output_dir, "test.radat"));
  Json summary;
  for (const auto& [name, set] : {std::pair<std::string, const det::ImageSet*>{"train", &splits.train},
                                  std::pair<std::string, const det::ImageSet*>{"test", &splits.test}}) {
    const auto s = summarize_classes(*set);
    for (int y = 0; y < 2; ++y)
      summary[name][y == 1 ? "real" : "fake"] = {{"n", s[y].n},
                                                 {"pixel_mean", s[y].pixel_mean},
                                                 {"pixel_std", s[y].pixel_std},
                                                 {"residual_rms", s[y].residual_rms}};
  }
  write_text(join_path(c.output_dir, "data_summary.json"), summary.dump(2) + "\n");
  out << "make-data: " << splits.train.size() << " train, " << splits.test.size() << " test images\n";
  return kExitOk;
}

inline int cmd_train(const CommonOptions& o, const std::string& data_path, const std::string& test_path,
                     std::ostream& out) {
  const auto c = load_run_config(o);
  prepare_output(c, "train");
  const auto train_set = dataset_or_synth(data_path, c, true);
  det::Detector model(c.detector);
  const auto tc = build_train_config(c);
  const auto result = det::train(model, train_set, tc, [&](const det::EpochStats& e) {
    out << "epoch " << e.epoch << ": loss " << e.loss_comp << " (bce " << e.loss_bce << ", ra " << e.loss_ra << ")\n";
  });
  det::save_checkpoint(model, join_path(c.output_dir, "checkpoint.radet"));
  write_text(join_path(c.output_dir, "train_log.csv"), train_log_csv(result));
  const auto test_set = dataset_or_synth(test_path, c, false);
  PlotInputs p;
  p.similarity = model_similarity_histogram(model, test_set, c.threads);
  plot_emit(p, c.output_dir);
  const auto report = eval::evaluate(model, {{"test", test_set}}, c.threads);
  write_text(join_path(c.output_dir, "eval.json"), eval::to_json(report).dump(2) + "\n");
  out << "train: test ACC " << report.mean_acc << "%, AP " << report.mean_ap << "%\n";
  return kExitOk;
}

inline std::vector<std::pair<std::string, det::ImageSet>> parse_sources(const std::vector<std::string>& specs,
                                                                        const RunConfig& c) {
  std::vector<std::pair<std::string, det::ImageSet>> sources;
  for (const auto& s : specs) {
    const auto eq = s.find('=');
    const std::string name = eq == std::string::npos ? std::filesystem::path(s).stem().string() : s.substr(0, eq);
    const std::string path = eq == std::string::npos ? s : s.substr(eq + 1);
    if (name.empty() || path.empty()) throw ConfigError("--data: expected NAME=PATH or PATH");
    sources.emplace_back(name, load_dataset(path));
  }
  if (sources.empty()) sources.emplace_back("toy", dataset_or_synth("", c, false));
  return sources;
}

inline int cmd_eval(const CommonOptions& o, const std::string& ckpt, const std::vector<std::string>& data,
                    std::ostream& out) {
  const auto c = load_run_config(o);
  prepare_output(c, "eval");
  const auto model = det::load_checkpoint(ckpt);
  const auto report = eval::evaluate(model, parse_sources(data, c), c.threads);
  write_text(join_path(c.output_dir, "eval_sources.csv"), eval::sources_csv(report));
  write_text(join_path(c.output_dir, "eval.json"), eval::to_json(report).dump(2) + "\n");
  for (const auto& r : report.sources) out << r.source << ": ACC " << r.acc << "%, AP " << r.ap << "%\n";
  return kExitOk;
}

inline int cmd_robustness(const CommonOptions& o, const std::string& ckpt, const std::string& data_path,
                          std::ostream& out) {
  const auto c = load_run_config(o);
  prepare_output(c, "robustness");
  const auto model = det::load_checkpoint(ckpt);
  const auto data = dataset_or_synth(data_path, c, false);
  const auto report = eval::robustness_sweep(model, data, c.eval, c.threads);
  write_text(join_path(c.output_dir, "robustness.csv"), eval::degradations_csv(report));
  write_text(join_path(c.output_dir, "robustness.json"), eval::to_json(report).dump(2) + "\n");
  for (const auto& r : report.degradations)
    out << r.kind << " " << r.strength << ": ACC " << r.acc << "%, AP " << r.ap << "%\n";
  return kExitOk;
}

inline int cmd_ingest(const CommonOptions& o, const std::string& input, const std::string& ckpt, std::ostream& out) {
  const auto c = load_run_config(o);
  prepare_output(c, "ingest-embeddings");
  const bool csv = std::filesystem::path(input).extension() == ".csv";
  const auto set = csv ? det::embeddings_from_csv(read_text(input)) : det::load_embeddings(input);
  std::size_t n_real = 0;
  for (const auto& r : set.rows) n_real += r.label == 1;
  Json index{{"source", input},
             {"format", csv ? "csv" : "RAEMB1"},
             {"count", set.rows.size()},
             {"dim", set.dim},
             {"residual_dim", set.res_dim},
             {"n_real", n_real},
             {"n_fake", set.rows.size() - n_real}};
  if (!ckpt.empty()) {
    const auto model = det::load_checkpoint(ckpt);
    std::vector<double> scores;
    std::vector<int> labels;
    std::string scores_csv = "index,label,score\n";
    for (std::size_t i = 0; i < set.rows.size(); ++i) {
      scores.push_back(det::logits_from_row(model, set.rows[i]).probability());
      labels.push_back(set.rows[i].label);
      scores_csv += std::to_string(i) + "," + std::to_string(labels.back()) + "," + num(scores.back()) + "\n";
    }
    write_text(join_path(c.output_dir, "embedding_scores.csv"), scores_csv);
    if (!scores.empty()) index["acc"] = 100.0 * eval::accuracy(scores, labels);
    if (n_real > 0) index["ap"] = 100.0 * eval::average_precision(scores, labels);
  }
  write_text(join_path(c.output_dir, "embeddings_index.json"), index.dump(2) + "\n");
  out << "ingest-embeddings: " << set.rows.size() << " rows, D = " << set.dim << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

/// Entry point shared by the executable and the tests.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"radet: robustness-asymmetry toolkit"};
  app.require_subcommand(1);
  CommonOptions common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", common.config_path, "JSON run configuration");
    sub->add_option("-o,--out", common.out_dir, "Output directory (default: $RADET_OUT_DIR or ./radet_out)");
    sub->add_option("-j,--threads", common.threads, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
  };
  std::string data, test, ckpt, input;
  std::vector<std::string> sources;

  auto* scan = app.add_subcommand("shift-scan", "Differential shift against probe scale");
  auto* sweep = app.add_subcommand("bound-sweep", "Lower-bound validation over memorization levels");
  auto* make = app.add_subcommand("make-data", "Synthesize the toy image dataset");
  auto* tr = app.add_subcommand("train", "Train a detector");
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  auto* rob = app.add_subcommand("robustness", "Evaluate a checkpoint under degradations");
  auto* ing = app.add_subcommand("ingest-embeddings", "Validate and index an embedding file");
  for (auto* s : {scan, sweep, make, tr, ev, rob, ing}) add_common(s);
  tr->add_option("--data", data, "Training set file (default: synthesize)");
  tr->add_option("--test", test, "Held-out set file (default: synthesize)");
  ev->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  ev->add_option("--data", sources, "Dataset as NAME=PATH (repeatable; default: synthesized test split)");
  rob->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  rob->add_option("--data", data, "Dataset file (default: synthesized test split)");
  ing->add_option("--input", input, "RAEMB1 or CSV embedding file")->required();
  ing->add_option("--checkpoint", ckpt, "Score rows with this checkpoint");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (*scan) return cmd_shift_scan(common, out);
    if (*sweep) return cmd_bound_sweep(common, out, err);
    if (*make) return cmd_make_data(common, out);
    if (*tr) return cmd_train(common, data, test, out);
    if (*ev) return cmd_eval(common, ckpt, sources, out);
    if (*rob) return cmd_robustness(common, ckpt, data, out);
    if (*ing) return cmd_ingest(common, input, ckpt, out);
  } catch (const std::exception& e) {
    const int code = exit_code_for_current_exception();
    err << "error: " << e.what() << "\n";
    return code;
  }
  return kExitConfig;
}

}  // namespace radet::io
