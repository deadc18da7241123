#include "voxattn/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "voxattn/cam.hpp"
#include "voxattn/checkpoint.hpp"
#include "voxattn/dataset.hpp"
#include "voxattn/errors.hpp"
#include "voxattn/gradcheck_suite.hpp"
#include "voxattn/metrics.hpp"
#include "voxattn/network.hpp"
#include "voxattn/runconfig.hpp"
#include "voxattn/trainer.hpp"

namespace voxattn {

namespace {

namespace fs = std::filesystem;

// Exclusive ownership of an output directory for the duration of one run.
// The marker survives a crash; the diagnostic says how to clear it.
class LockFile {
 public:
  explicit LockFile(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
    path_ = (fs::path(dir) / ".lock").string();
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) {
      throw StateError("output directory " + dir + " is locked by another run (remove " +
                       path_ + " if it is stale)");
    }
    std::fputs("run in progress\n", f);
    std::fclose(f);
  }
  ~LockFile() { std::remove(path_.c_str()); }
  LockFile(const LockFile&) = delete;
  LockFile& operator=(const LockFile&) = delete;

 private:
  std::string path_;
};

struct CliOptions {
  std::string config_path;
  std::string out_dir;
  std::string checkpoint;
  std::string manifest;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::int64_t folds = 1;
};

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  f << content;
  f.flush();
  if (!f) throw IoError("short write to " + path);
}

std::string hash_hex(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::array<std::int64_t, 3> input_geometry(const NetworkConfig& cfg) {
  return {cfg.input_depth, cfg.input_height, cfg.input_width};
}

std::int64_t argmax_row(const Tensor<float>& probs, std::int64_t row) {
  const std::int64_t cols = probs.extent(1);
  std::int64_t best = 0;
  for (std::int64_t c = 1; c < cols; ++c) {
    if (probs[row * cols + c] > probs[row * cols + best]) best = c;
  }
  return best;
}

// Eval-mode metrics over the given sample indices. The positive class for
// the binary metrics is label 2, so three-way heads are required.
MetricsReport evaluate_split(ModelParams<float>& params, const Dataset& data,
                             const std::vector<std::int64_t>& indices,
                             std::int64_t batch_size) {
  if (params.config.num_classes != 3) {
    throw ConfigError("evaluation requires a 3-class head, checkpoint has " +
                      std::to_string(params.config.num_classes));
  }
  Tensor<float> probs = predict_probabilities(params, data, indices, batch_size);
  std::vector<std::int64_t> predictions, labels;
  std::vector<double> scores;
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const std::int64_t row = static_cast<std::int64_t>(r);
    predictions.push_back(argmax_row(probs, row));
    scores.push_back(static_cast<double>(probs[row * 3 + 2]));
    labels.push_back(data.samples[static_cast<std::size_t>(indices[r])].label);
  }
  return compute_metrics(predictions, scores, labels);
}

void write_metrics_files(const std::string& dir, const MetricsReport& report) {
  write_text_file((fs::path(dir) / "metrics.txt").string(), format_metrics_report(report));
  write_text_file((fs::path(dir) / "metrics.csv").string(),
                  metrics_csv_header() + "\n" + metrics_csv_line(report) + "\n");
}

std::vector<std::int64_t> all_indices(std::size_t n) {
  std::vector<std::int64_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<std::int64_t>(i);
  return idx;
}

int cmd_params(const RunConfig& cfg, std::ostream& out) {
  const ParamCount count = count_parameters(cfg.network);
  out << "trainable parameters by component:\n";
  for (const auto& [name, n] : count.by_component) {
    char line[96];
    std::snprintf(line, sizeof line, "  %-12s %12lld\n", name.c_str(),
                  static_cast<long long>(n));
    out << line;
  }
  char total[96];
  std::snprintf(total, sizeof total, "total parameters: %lld (%.2fM)\n",
                static_cast<long long>(count.total), static_cast<double>(count.total) / 1e6);
  out << total;
  return 0;
}

int cmd_gradcheck(std::ostream& out) {
  constexpr double kTolerance = 1e-4;
  const GradSuiteResult suite = run_gradcheck_suite(5);
  // Worst error per op across all seeds, in first-appearance order.
  std::vector<std::pair<std::string, double>> per_op;
  for (const auto& entry : suite.entries) {
    auto it = std::find_if(per_op.begin(), per_op.end(),
                           [&](const auto& p) { return p.first == entry.name; });
    if (it == per_op.end()) {
      per_op.emplace_back(entry.name, entry.report.max_rel_error);
    } else {
      it->second = std::max(it->second, entry.report.max_rel_error);
    }
  }
  for (const auto& [name, worst] : per_op) {
    char line[96];
    std::snprintf(line, sizeof line, "  %-28s %.3e\n", name.c_str(), worst);
    out << line;
  }
  char summary[96];
  std::snprintf(summary, sizeof summary, "worst relative error %.3e (tolerance %.0e)\n",
                suite.worst_rel_error, kTolerance);
  out << summary;
  const bool ok = suite.passes(kTolerance);
  out << (ok ? "gradcheck passed\n" : "gradcheck FAILED\n");
  return ok ? 0 : 5;
}

int cmd_synth(const RunConfig& cfg, const CliOptions& opts, std::ostream& out) {
  if (opts.out_dir.empty()) throw ConfigError("synth requires --out");
  LockFile lock(opts.out_dir);

  SynthConfig train_cfg = cfg.synth.cfg;
  SynthConfig test_cfg = cfg.synth.cfg;
  test_cfg.counts = cfg.synth.test_counts;
  test_cfg.prefix = cfg.synth.cfg.prefix + "t";
  // Independent stream so test volumes never duplicate training ones.
  test_cfg.seed = Rng::derive(cfg.synth.cfg.seed, 0x74657374, 1).next_u64();

  const std::string train_dir = (fs::path(opts.out_dir) / "train").string();
  const std::string test_dir = (fs::path(opts.out_dir) / "test").string();
  const Manifest train_manifest = synth_generate(train_cfg, train_dir);
  const Manifest test_manifest = synth_generate(test_cfg, test_dir);
  out << "wrote " << train_manifest.rows.size() << " training volumes under " << train_dir
      << " (manifest.csv)\n";
  out << "wrote " << test_manifest.rows.size() << " test volumes under " << test_dir
      << " (manifest.csv)\n";
  return 0;
}

struct SplitOutcome {
  MetricsReport report;
  bool evaluated = false;
  std::string checkpoint_path;
  std::string log_path;
  double final_loss = 0.0;
  double final_train_accuracy = 0.0;
};

SplitOutcome train_one_split(const RunConfig& cfg, const TrainConfig& tc, const Dataset& data,
                             const std::vector<std::int64_t>& train_idx,
                             const std::vector<std::int64_t>* eval_idx, const Dataset* eval_data,
                             const std::string& dir, std::ostream& out) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());

  SplitOutcome outcome;
  outcome.log_path = (fs::path(dir) / "epochs.csv").string();
  outcome.checkpoint_path = (fs::path(dir) / "checkpoint.vxck").string();

  ModelParams<float> params = build_network<float>(cfg.network, tc.seed);
  auto on_epoch = [&](const EpochSummary& s) {
    char line[128];
    std::snprintf(line, sizeof line, "epoch %lld/%lld  loss %.4f  acc %.3f  lr %.3g\n",
                  static_cast<long long>(s.epoch + 1), static_cast<long long>(tc.epochs),
                  s.mean_loss, s.accuracy, s.lr);
    out << line << std::flush;
    if (tc.checkpoint_every > 0 && (s.epoch + 1) % tc.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof name, "checkpoint_epoch%04lld.vxck",
                    static_cast<long long>(s.epoch + 1));
      save_checkpoint(params, (fs::path(dir) / name).string());
    }
  };
  const std::vector<EpochSummary> history =
      train_run(params, data, train_idx, tc, outcome.log_path, on_epoch);
  save_checkpoint(params, outcome.checkpoint_path);
  if (!history.empty()) {
    outcome.final_loss = history.back().mean_loss;
    outcome.final_train_accuracy = history.back().accuracy;
  }

  if (eval_idx != nullptr) {
    outcome.report = evaluate_split(params, *eval_data, *eval_idx, cfg.eval.batch_size);
    outcome.evaluated = true;
    write_metrics_files(dir, outcome.report);
  }
  return outcome;
}

// Sample mean and standard deviation (n-1 denominator) of the defined values.
std::string mean_std_line(const std::string& name,
                          const std::vector<std::optional<double>>& values) {
  std::vector<double> defined;
  for (const auto& v : values) {
    if (v.has_value()) defined.push_back(*v);
  }
  char line[96];
  if (defined.empty()) {
    std::snprintf(line, sizeof line, "%-12s = undefined\n", name.c_str());
    return line;
  }
  double mean = 0.0;
  for (double v : defined) mean += v;
  mean /= static_cast<double>(defined.size());
  double var = 0.0;
  for (double v : defined) var += (v - mean) * (v - mean);
  const double stddev =
      defined.size() > 1 ? std::sqrt(var / static_cast<double>(defined.size() - 1)) : 0.0;
  std::snprintf(line, sizeof line, "%-12s = %.4f +- %.4f\n", name.c_str(), mean, stddev);
  return line;
}

int cmd_train(const RunConfig& cfg, const CliOptions& opts, std::ostream& out) {
  if (opts.out_dir.empty()) throw ConfigError("train requires --out");
  if (cfg.data.train_manifest.empty()) {
    throw ConfigError("train requires data.train_manifest in the config file");
  }
  if (cfg.network.input_channels != 1) {
    throw ConfigError("train requires network.input_channels = 1 (volume files carry one "
                      "channel)");
  }
  if (opts.folds < 1 || opts.folds > kMaxFolds) {
    throw ConfigError("--folds must be in [1, " + std::to_string(kMaxFolds) + "]");
  }
  LockFile lock(opts.out_dir);
  const auto t0 = std::chrono::steady_clock::now();

  const Dataset data = load_dataset(cfg.data.train_manifest, input_geometry(cfg.network));
  const std::string hash = hash_hex(run_config_hash(cfg));
  out << "config hash " << hash << ", seed " << cfg.train.seed << ", " << data.samples.size()
      << " training samples\n";

  std::string summary = "config_hash = " + hash + "\n";
  summary += "seed = " + std::to_string(cfg.train.seed) + "\n";

  if (opts.folds == 1) {
    SplitOutcome outcome;
    if (!cfg.data.test_manifest.empty()) {
      const Dataset test = load_dataset(cfg.data.test_manifest, input_geometry(cfg.network));
      const auto test_idx = all_indices(test.samples.size());
      outcome = train_one_split(cfg, cfg.train, data, all_indices(data.samples.size()),
                                &test_idx, &test, opts.out_dir, out);
    } else {
      outcome = train_one_split(cfg, cfg.train, data, all_indices(data.samples.size()),
                                nullptr, nullptr, opts.out_dir, out);
    }
    // Paths relative to the summary's own directory, so the file is
    // byte-identical wherever the run lands.
    summary += "epoch_log = epochs.csv\n";
    summary += "checkpoint = checkpoint.vxck\n";
    if (outcome.evaluated) {
      summary += format_metrics_report(outcome.report);
      out << format_metrics_report(outcome.report);
    }
    write_text_file((fs::path(opts.out_dir) / "summary.txt").string(), summary);
  } else {
    // Cross-validation over the manifest's own fold column.
    for (std::size_t i = 0; i < data.folds.size(); ++i) {
      if (data.folds[i] >= opts.folds) {
        throw ConfigError("manifest fold index " + std::to_string(data.folds[i]) +
                          " exceeds --folds " + std::to_string(opts.folds) +
                          "; re-split the manifest");
      }
    }
    std::vector<MetricsReport> reports;
    for (std::int64_t fold = 0; fold < opts.folds; ++fold) {
      std::vector<std::int64_t> train_idx, eval_idx;
      for (std::size_t i = 0; i < data.folds.size(); ++i) {
        if (data.folds[i] == fold) {
          eval_idx.push_back(static_cast<std::int64_t>(i));
        } else {
          train_idx.push_back(static_cast<std::int64_t>(i));
        }
      }
      if (train_idx.empty() || eval_idx.empty()) {
        throw ConfigError("fold " + std::to_string(fold) +
                          " leaves an empty train or eval split");
      }
      TrainConfig tc = cfg.train;
      tc.seed = Rng::derive(cfg.train.seed, 0x464f4c44, static_cast<std::uint64_t>(fold))
                    .next_u64();
      out << "fold " << fold << ": " << train_idx.size() << " train / " << eval_idx.size()
          << " eval\n";
      const std::string fold_dir =
          (fs::path(opts.out_dir) / ("fold" + std::to_string(fold))).string();
      SplitOutcome outcome =
          train_one_split(cfg, tc, data, train_idx, &eval_idx, &data, fold_dir, out);
      reports.push_back(outcome.report);
    }
    auto collect = [&](auto getter) {
      std::vector<std::optional<double>> vs;
      for (const auto& r : reports) vs.push_back(getter(r));
      return vs;
    };
    std::string agg;
    agg += mean_std_line("accuracy", collect([](const MetricsReport& r) { return r.accuracy; }));
    agg += mean_std_line("sensitivity",
                         collect([](const MetricsReport& r) { return r.sensitivity; }));
    agg += mean_std_line("specificity",
                         collect([](const MetricsReport& r) { return r.specificity; }));
    agg += mean_std_line("f1", collect([](const MetricsReport& r) { return r.f1; }));
    agg += mean_std_line("auc", collect([](const MetricsReport& r) { return r.auc; }));
    out << "cross-validation over " << opts.folds << " folds:\n" << agg;
    summary += "folds = " + std::to_string(opts.folds) + "\n" + agg;
    write_text_file((fs::path(opts.out_dir) / "summary.txt").string(), summary);
  }

  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  char done[64];
  std::snprintf(done, sizeof done, "done in %.1f s\n", seconds);
  out << done;
  return 0;
}

int cmd_eval(const RunConfig& cfg, const CliOptions& opts, std::ostream& out) {
  const std::string ckpt = !opts.checkpoint.empty() ? opts.checkpoint : cfg.eval.checkpoint;
  if (ckpt.empty()) throw ConfigError("eval requires --checkpoint (or eval.checkpoint)");
  const std::string manifest =
      !opts.manifest.empty() ? opts.manifest : cfg.data.test_manifest;
  if (manifest.empty()) throw ConfigError("eval requires --manifest (or data.test_manifest)");

  ModelParams<float> params = load_checkpoint(ckpt);
  const Dataset data = load_dataset(manifest, input_geometry(params.config));
  const MetricsReport report =
      evaluate_split(params, data, all_indices(data.samples.size()), cfg.eval.batch_size);
  out << format_metrics_report(report);
  out << metrics_csv_header() << "\n" << metrics_csv_line(report) << "\n";
  if (!opts.out_dir.empty()) {
    LockFile lock(opts.out_dir);
    write_metrics_files(opts.out_dir, report);
  }
  return 0;
}

int cmd_cam(const RunConfig& cfg, const CliOptions& opts, std::ostream& out) {
  const std::string ckpt = !opts.checkpoint.empty() ? opts.checkpoint : cfg.eval.checkpoint;
  if (ckpt.empty()) throw ConfigError("cam requires --checkpoint (or eval.checkpoint)");
  const std::string manifest =
      !opts.manifest.empty() ? opts.manifest : cfg.data.test_manifest;
  if (manifest.empty()) throw ConfigError("cam requires --manifest (or data.test_manifest)");
  if (opts.out_dir.empty()) throw ConfigError("cam requires --out");

  ModelParams<float> params = load_checkpoint(ckpt);
  if (params.config.num_classes < 1) throw ConfigError("checkpoint head is empty");
  const Dataset data = load_dataset(manifest, input_geometry(params.config));
  LockFile lock(opts.out_dir);

  const Tensor<float>& head = params.at("head.fc.weight");
  const Triple target = {params.config.input_depth, params.config.input_height,
                         params.config.input_width};
  std::int64_t limit = static_cast<std::int64_t>(data.samples.size());
  if (cfg.eval.cam_limit > 0) limit = std::min(limit, cfg.eval.cam_limit);

  std::string index_csv = "sample_id,label,predicted\n";
  for (std::int64_t i = 0; i < limit; ++i) {
    const VolumeSample& sample = data.samples[static_cast<std::size_t>(i)];
    Tape<float> tape;
    const int x = tape.add_leaf(stack_batch<float>({&sample}));
    ForwardResult<float> fr = network_forward(tape, params, x, Mode::kEval);
    const Tensor<float>& logits = tape.value(fr.logits);
    std::int64_t pred = 0;
    for (std::int64_t c = 1; c < params.config.num_classes; ++c) {
      if (logits[c] > logits[pred]) pred = c;
    }
    const Tensor<float>& fmap = tape.value(fr.features);  // (1, C, Df, Hf, Wf)
    Tensor<float> features(
        {fmap.extent(1), fmap.extent(2), fmap.extent(3), fmap.extent(4)});
    for (std::int64_t j = 0; j < features.numel(); ++j) features[j] = fmap[j];

    CamVolume cam = cam_compute(features, head, pred);
    cam.sample_id = sample.patient_id;
    cam_export(cam, target, (fs::path(opts.out_dir) / ("cam_" + sample.patient_id)).string());
    index_csv += sample.patient_id + "," + std::to_string(sample.label) + "," +
                 std::to_string(pred) + "\n";
  }
  write_text_file((fs::path(opts.out_dir) / "cam.csv").string(), index_csv);
  out << "wrote " << limit << " heatmaps under " << opts.out_dir << "\n";
  return 0;
}

// All failure paths funnel through here so exit codes stay consistent:
// configuration and state problems 2, unreadable or malformed data 3,
// non-finite numerics 4.
int report_failure(std::ostream& err) {
  try {
    throw;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const IoError& e) {
    err << "data error: " << e.what() << "\n";
    return 3;
  } catch (const ParseError& e) {
    err << "data error: " << e.what() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DimensionError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const StateError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"volumetric residual classifier with channel and depth attention"};
  app.require_subcommand(1);

  CliOptions opts;
  CLI::Option* seed_opt = nullptr;

  auto add_common = [&](CLI::App* sub, bool with_seed) {
    sub->add_option("--config", opts.config_path, "JSON run configuration");
    if (with_seed) {
      seed_opt = sub->add_option("--seed", opts.seed, "override the config seed");
    }
  };

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  add_common(synth, true);
  synth->add_option("--out", opts.out_dir, "output directory")->required();

  CLI::App* train = app.add_subcommand("train", "train a classifier");
  add_common(train, true);
  train->add_option("--out", opts.out_dir, "output directory")->required();
  train->add_option("--folds", opts.folds, "cross-validation folds (1 = single split)");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  add_common(eval, false);
  eval->add_option("--checkpoint", opts.checkpoint, "model checkpoint");
  eval->add_option("--manifest", opts.manifest, "dataset manifest");
  eval->add_option("--out", opts.out_dir, "optional directory for metrics files");

  CLI::App* cam = app.add_subcommand("cam", "export activation heatmaps");
  add_common(cam, false);
  cam->add_option("--checkpoint", opts.checkpoint, "model checkpoint");
  cam->add_option("--manifest", opts.manifest, "dataset manifest");
  cam->add_option("--out", opts.out_dir, "output directory")->required();

  CLI::App* params = app.add_subcommand("params", "print the parameter count breakdown");
  add_common(params, false);

  app.add_subcommand("gradcheck", "finite-difference check of every kernel");

  std::vector<const char*> argv;
  argv.push_back("voxattn");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  }

  opts.seed_given = seed_opt != nullptr && seed_opt->count() > 0;

  // Configuration phase: every failure here is a config error.
  RunConfig cfg;
  try {
    if (!opts.config_path.empty()) cfg = parse_run_config(opts.config_path);
    if (opts.seed_given) {
      cfg.train.seed = opts.seed;
      cfg.synth.cfg.seed = opts.seed;
    }
  } catch (const std::exception& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (synth->parsed()) return cmd_synth(cfg, opts, out);
    if (train->parsed()) return cmd_train(cfg, opts, out);
    if (eval->parsed()) return cmd_eval(cfg, opts, out);
    if (cam->parsed()) return cmd_cam(cfg, opts, out);
    if (params->parsed()) return cmd_params(cfg, out);
    return cmd_gradcheck(out);
  } catch (...) {
    return report_failure(err);
  }
}

}  // namespace voxattn
