#include "misd/cli.hpp"

#include <CLI11.hpp>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <thread>

#include "misd/data_io.hpp"
#include "misd/errors.hpp"
#include "misd/gradcheck.hpp"
#include "misd/metrics.hpp"
#include "misd/model_io.hpp"
#include "misd/trainer.hpp"

namespace misd {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

const char* error_kind(const Error& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return "configuration error";
  if (dynamic_cast<const DegenerateTaskError*>(&e)) return "degenerate task";
  if (dynamic_cast<const ShapeError*>(&e)) return "shape error";
  if (dynamic_cast<const DataError*>(&e)) return "data error";
  if (dynamic_cast<const UndefinedSimilarityError*>(&e)) return "undefined similarity";
  if (dynamic_cast<const UndefinedMetricError*>(&e)) return "undefined metric";
  if (dynamic_cast<const FormatError*>(&e)) return "format error";
  if (dynamic_cast<const LengthError*>(&e)) return "length error";
  if (dynamic_cast<const ParseError*>(&e)) return "parse error";
  if (dynamic_cast<const CompatibilityError*>(&e)) return "compatibility error";
  if (dynamic_cast<const IoError*>(&e)) return "I/O error";
  return "error";
}

std::string num(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

fs::path default_run_dir(const std::string& command) {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  localtime_r(&now, &tm);
  std::ostringstream s;
  s << command << "-" << std::put_time(&tm, "%Y%m%d-%H%M%S");
  return fs::path("runs") / s.str();
}

fs::path ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
  return dir;
}

// "out/report.json" -> "out/report.<suffix>"
fs::path sibling(const fs::path& path, const std::string& suffix) {
  return path.parent_path() / (path.stem().string() + "." + suffix);
}

CropSchedule parse_schedule(const std::string& name) {
  if (name == "adaptive") return CropSchedule::adaptive;
  if (name == "static" || name == "fixed") return CropSchedule::fixed;
  throw ConfigError("unknown crop schedule '" + name + "' (expected adaptive or static)");
}

struct Split {
  std::optional<ImageDataset> images;
  std::optional<EmbeddingDataset> embeddings;
  fs::path source;
};

std::string file_magic(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string magic(8, '\0');
  in.read(magic.data(), 8);
  magic.resize(static_cast<std::size_t>(in.gcount()));
  return magic;
}

// A data directory holds <split>.img and/or <split>.emb; images win.
Split load_split(const fs::path& data, const std::string& split) {
  fs::path file = data;
  if (fs::is_directory(data)) {
    file = data / (split + ".img");
    if (!fs::exists(file)) file = data / (split + ".emb");
    if (!fs::exists(file)) {
      throw IoError("'" + data.string() + "' holds neither " + split + ".img nor " + split +
                    ".emb");
    }
  } else if (!fs::exists(data)) {
    throw IoError("data path '" + data.string() + "' does not exist");
  }
  Split s;
  s.source = file;
  const std::string magic = file_magic(file);
  if (magic == "MISDIMG1") {
    s.images = read_images(file);
  } else if (magic == "MISDEMB1") {
    s.embeddings = read_embeddings(file);
  } else {
    throw FormatError("'" + file.string() + "' is neither an image nor an embedding file");
  }
  return s;
}

struct TrainFlags {
  TrainConfig config;
  std::string schedule = "adaptive";
  std::string augment = "random-crop";
  std::string neg_mode = "global";

  TrainConfig resolve() const {
    TrainConfig c = config;
    c.crops.schedule = parse_schedule(schedule);
    c.augment = parse_augment_strategy(augment);
    c.negative_mode = parse_negative_mode(neg_mode);
    validate(c);
    return c;
  }
};

void add_train_flags(CLI::App* cmd, TrainFlags& f, bool with_shots) {
  auto& c = f.config;
  if (with_shots) cmd->add_option("--shots", c.shots, "Shots per class")->capture_default_str();
  cmd->add_option("--epochs", c.epochs, "Training epochs")->capture_default_str();
  cmd->add_option("--lr", c.lr, "Base learning rate (cosine schedule)")->capture_default_str();
  cmd->add_option("--momentum", c.momentum, "SGD momentum")->capture_default_str();
  cmd->add_option("--lambda-neg", c.lambda_neg, "Weight of the negative loss")
      ->capture_default_str();
  cmd->add_option("--lambda-orth", c.lambda_orth, "Weight of the orthogonality loss")
      ->capture_default_str();
  cmd->add_option("--temperature", c.temperature, "Softmax temperature")->capture_default_str();
  cmd->add_option("--context-length", c.context_length, "Context tokens per prompt")
      ->capture_default_str();
  cmd->add_option("--neg-prompts", c.negative_prompts, "Number of negative prompts")
      ->capture_default_str();
  cmd->add_option("--crops", c.crops.k, "Random crops per training image")->capture_default_str();
  cmd->add_option("--crop-schedule", f.schedule, "adaptive or static")->capture_default_str();
  cmd->add_option("--augment", f.augment, "random-crop, cutout or gaussian-noise")
      ->capture_default_str();
  cmd->add_option("--neg-mode", f.neg_mode, "global, local or global-local")
      ->capture_default_str();
}

std::shared_ptr<const Backbone> backbone_for(const TrainConfig& c) {
  BackboneConfig b;
  b.context_length = c.context_length;
  return Backbone::create(b);
}

TrainedModel train_on(const Split& data, const TrainConfig& config) {
  auto backbone = backbone_for(config);
  const ShotSet shots = data.images ? shots_from_images(*data.images, backbone->vision, config)
                                    : shots_from_embeddings(*data.embeddings, config);
  return train(backbone, shots, config);
}

std::vector<ScoredPrediction> evaluate_on(const TrainedModel& model, const Split& data) {
  return data.images ? evaluate_images(model, *data.images)
                     : evaluate_embeddings(model, *data.embeddings);
}

std::string fmt_metric(const std::optional<double>& v) {
  if (!v) return "N/A";
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << *v;
  return s.str();
}

void print_report(std::ostream& out, const MisDReport& r) {
  out << "ACC " << fmt_metric(r.acc) << "  FPR95 " << fmt_metric(r.fpr95) << "  AURC "
      << fmt_metric(r.aurc) << "  E-AURC " << fmt_metric(r.e_aurc) << "  AUROC "
      << fmt_metric(r.auroc) << "  AUPR-S " << fmt_metric(r.aupr_success) << "  AUPR-E "
      << fmt_metric(r.aupr_error) << "\n";
  for (const auto& n : r.notes) out << "note: " << n << "\n";
}

// report.json, report.csv and scores next to it.
std::vector<std::string> write_report_bundle(const fs::path& report_path, const MisDReport& r) {
  ensure_dir(report_path.parent_path().empty() ? fs::path(".") : report_path.parent_path());
  write_report(report_path, r);
  const fs::path row = sibling(report_path, "csv");
  write_text_file(row, report_csv_header() + "\n" + report_csv_row(r) + "\n");
  return {report_path.string(), row.string()};
}

// ---------------------------------------------------------------------------

struct GenSynthArgs {
  int classes = 10;
  int per_class = 20;
  int train_per_class = 32;
  std::uint64_t seed = 0;
  int crops = 8;
  std::string out;
};

int cmd_gen_synth(const GenSynthArgs& a, std::ostream& out) {
  const auto start = Clock::now();
  if (a.classes < 2) {
    throw DegenerateTaskError("--classes must be at least 2, got " + std::to_string(a.classes));
  }
  const fs::path dir = ensure_dir(a.out.empty() ? default_run_dir("gen-synth") : fs::path(a.out));
  const auto backbone = Backbone::create(BackboneConfig{});
  SynthConfig synth;
  synth.image_size = backbone->config.vision.image_size;
  synth.channels = backbone->config.vision.channels;
  synth.world_seed = backbone->config.world_seed;

  const ImageDataset train = gen_synth(a.classes, a.train_per_class,
                                       derive_seed(a.seed, "train"), synth);
  const ImageDataset val = gen_synth(a.classes, a.per_class, derive_seed(a.seed, "val"), synth);
  CropConfig crops;
  crops.k = a.crops;
  validate(crops);
  CropConfig full;
  full.k = 1;

  write_images(dir / "train.img", train);
  write_images(dir / "val.img", val);
  write_embeddings(dir / "train.emb", embed_dataset(train, backbone->vision, crops, a.seed));
  write_embeddings(dir / "val.emb", embed_dataset(val, backbone->vision, full, a.seed));

  RunManifest m;
  m.command = "gen-synth";
  m.seed = a.seed;
  m.config = {{"classes", a.classes},
              {"per_class", a.per_class},
              {"train_per_class", a.train_per_class},
              {"crops", a.crops},
              {"image", to_json(backbone->config)},
              {"noise_amplitude", synth.noise_amplitude},
              {"embedding_provenance", "toy-encoder"}};
  m.outputs = {(dir / "train.img").string(), (dir / "val.img").string(),
               (dir / "train.emb").string(), (dir / "val.emb").string()};
  m.wall_time_seconds = seconds_since(start);
  write_manifest(dir / "manifest.json", m);
  out << "wrote " << train.size() << " training and " << val.size() << " validation images ("
      << a.classes << " classes) to " << dir.string() << "\n";
  return 0;
}

struct TrainArgs {
  std::string data;
  std::string out;
  TrainFlags flags;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  const auto start = Clock::now();
  const TrainConfig config = a.flags.resolve();
  const Split data = load_split(a.data, "train");
  const TrainedModel model = train_on(data, config);
  const fs::path dir = ensure_dir(a.out.empty() ? default_run_dir("train") : fs::path(a.out));
  write_model(dir / "model.json", model);
  write_loss_trace(dir / "loss_trace.csv", model.trace);

  RunManifest m;
  m.command = "train";
  m.seed = config.seed;
  m.config = {{"train", to_json(config)}, {"backbone", to_json(model.backbone->config)}};
  m.inputs = {data.source.string()};
  m.outputs = {(dir / "model.json").string(), (dir / "loss_trace.csv").string()};
  m.wall_time_seconds = seconds_since(start);
  write_manifest(dir / "manifest.json", m);
  out << "trained " << model.bank.num_classes() << " classes x " << config.shots << " shots for "
      << config.epochs << " epochs";
  if (!model.trace.empty()) {
    out << "; total loss " << num(model.trace.front().loss.total) << " -> "
        << num(model.trace.back().loss.total);
  }
  out << "\nmodel: " << (dir / "model.json").string() << "\n";
  return 0;
}

struct EvalArgs {
  std::string data;
  std::string model;
  std::string report;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const auto start = Clock::now();
  const TrainedModel model = read_model(a.model);
  const Split data = load_split(a.data, "val");
  const auto preds = evaluate_on(model, data);
  const MisDReport report = full_report(preds);
  const fs::path report_path =
      a.report.empty() ? default_run_dir("eval") / "report.json" : fs::path(a.report);
  auto outputs = write_report_bundle(report_path, report);
  const fs::path scores = sibling(report_path, "scores.csv");
  write_scores(scores, preds);
  outputs.push_back(scores.string());

  RunManifest m;
  m.command = "eval";
  m.seed = model.config.seed;
  m.config = {{"samples", preds.size()}, {"temperature", model.config.temperature}};
  m.inputs = {data.source.string(), a.model};
  m.outputs = outputs;
  m.wall_time_seconds = seconds_since(start);
  write_manifest(sibling(report_path, "manifest.json"), m);
  print_report(out, report);
  return 0;
}

struct MetricsArgs {
  std::string scores;
  std::string report;
};

int cmd_metrics(const MetricsArgs& a, std::ostream& out) {
  const auto start = Clock::now();
  const ScoresFile scores = read_scores(a.scores);
  const MisDReport report =
      scores.binary ? binary_report(scores.outcomes) : full_report(scores.predictions);
  const fs::path report_path =
      a.report.empty() ? sibling(fs::path(a.scores), "report.json") : fs::path(a.report);
  RunManifest m;
  m.command = "metrics";
  m.config = {{"variant", scores.binary ? "confidence,correct" : "confidence,predicted,label"},
              {"samples", report.count}};
  m.inputs = {a.scores};
  m.outputs = write_report_bundle(report_path, report);
  m.wall_time_seconds = seconds_since(start);
  write_manifest(sibling(report_path, "manifest.json"), m);
  print_report(out, report);
  return 0;
}

struct SweepArgs {
  std::string data;
  std::string out;
  std::vector<int> shots{1, 2, 4, 8, 16};
  int seeds = 3;
  std::uint64_t seed = 0;
  int jobs = 0;
  TrainFlags flags;
};

int default_jobs() {
  if (const char* env = std::getenv("MISD_JOBS")) {
    try {
      const int j = std::stoi(env);
      if (j >= 1) return j;
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("MISD_JOBS must be a positive integer, got '") + env + "'");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

// Mean and sample standard deviation; NA when any run lacks the metric.
std::string aggregate(const std::vector<MisDReport>& reports,
                      std::optional<double> MisDReport::*field) {
  std::vector<double> xs;
  for (const auto& r : reports) {
    if (!(r.*field)) return "NA,NA";
    xs.push_back(*(r.*field));
  }
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  if (xs.size() < 2) return num(mean) + ",NA";
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return num(mean) + "," + num(std::sqrt(ss / static_cast<double>(xs.size() - 1)));
}

int cmd_sweep(const SweepArgs& a, std::ostream& out) {
  const auto start = Clock::now();
  if (a.shots.empty()) throw ConfigError("--shots needs at least one value");
  for (int s : a.shots) {
    if (s < 1) throw ConfigError("every --shots value must be >= 1");
  }
  if (a.seeds < 1) throw ConfigError("--seeds must be >= 1");
  const int jobs = a.jobs > 0 ? a.jobs : default_jobs();
  const TrainConfig base = a.flags.resolve();
  const Split train_data = load_split(a.data, "train");
  const Split val_data = load_split(a.data, "val");
  const fs::path dir = ensure_dir(a.out.empty() ? default_run_dir("sweep") : fs::path(a.out));

  struct Task {
    int shots;
    std::uint64_t seed;
    fs::path dir;
  };
  std::vector<Task> tasks;
  for (int s : a.shots) {
    for (int i = 0; i < a.seeds; ++i) {
      const std::uint64_t seed = a.seed + static_cast<std::uint64_t>(i);
      tasks.push_back({s, seed, dir / ("shots-" + std::to_string(s)) /
                                    ("seed-" + std::to_string(seed))});
    }
  }
  std::vector<MisDReport> reports(tasks.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::mutex error_mutex;
  std::string first_error;

  auto worker = [&] {
    while (!failed) {
      const std::size_t i = next++;
      if (i >= tasks.size()) return;
      const Task& t = tasks[i];
      try {
        TrainConfig c = base;
        c.shots = t.shots;
        c.seed = t.seed;
        const TrainedModel model = train_on(train_data, c);
        const auto preds = evaluate_on(model, val_data);
        reports[i] = full_report(preds);
        ensure_dir(t.dir);
        write_model(t.dir / "model.json", model);
        write_loss_trace(t.dir / "loss_trace.csv", model.trace);
        write_scores(t.dir / "scores.csv", preds);
        write_report_bundle(t.dir / "report.json", reports[i]);
      } catch (const std::exception& e) {
        std::lock_guard lock(error_mutex);
        if (!failed.exchange(true)) {
          const auto* me = dynamic_cast<const Error*>(&e);
          first_error = "run shots=" + std::to_string(t.shots) + " seed=" +
                        std::to_string(t.seed) + " failed: " +
                        (me ? std::string(error_kind(*me)) + ": " : std::string()) + e.what();
        }
      }
    }
  };
  std::vector<std::thread> pool;
  const int workers = std::min<int>(jobs, static_cast<int>(tasks.size()));
  for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (failed) throw Error(first_error);

  const std::vector<std::pair<const char*, std::optional<double> MisDReport::*>> fields = {
      {"acc", &MisDReport::acc},         {"fpr95", &MisDReport::fpr95},
      {"aurc", &MisDReport::aurc},       {"e_aurc", &MisDReport::e_aurc},
      {"auroc", &MisDReport::auroc},     {"aupr_s", &MisDReport::aupr_success},
      {"aupr_e", &MisDReport::aupr_error}};
  std::string table = "shots,runs";
  for (const auto& [name, field] : fields) {
    table += std::string(",") + name + "_mean," + name + "_std";
  }
  table += "\n";
  std::map<int, std::vector<MisDReport>> by_shots;
  for (std::size_t i = 0; i < tasks.size(); ++i) by_shots[tasks[i].shots].push_back(reports[i]);
  for (const auto& [shots, rs] : by_shots) {
    table += std::to_string(shots) + "," + std::to_string(rs.size());
    for (const auto& [name, field] : fields) table += "," + aggregate(rs, field);
    table += "\n";
  }
  write_text_file(dir / "sweep.csv", table);

  RunManifest m;
  m.command = "sweep";
  m.seed = a.seed;
  m.config = {{"shots", a.shots}, {"seeds", a.seeds}, {"train", to_json(base)}};
  m.inputs = {train_data.source.string(), val_data.source.string()};
  m.outputs = {(dir / "sweep.csv").string()};
  for (const auto& t : tasks) m.outputs.push_back(t.dir.string());
  m.wall_time_seconds = seconds_since(start);
  write_manifest(dir / "manifest.json", m);
  out << table;
  return 0;
}

struct GradcheckArgs {
  GradcheckConfig config;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out, std::ostream& err) {
  const auto start = Clock::now();
  const GradcheckResult r = run_gradcheck(a.config);
  const auto& w = r.worst;
  out << "gradcheck: " << r.trials << " trials, " << r.coordinates
      << " coordinates, max relative error " << std::scientific << std::setprecision(3)
      << w.relative_error << " (" << w.term << " wrt " << w.parameter << ", trial " << w.trial
      << ") in " << std::fixed << std::setprecision(2) << seconds_since(start) << " s\n";
  if (r.passed) {
    out << "PASS (tolerance " << std::scientific << std::setprecision(1) << a.config.tolerance
        << ")\n";
    return 0;
  }
  err << "FAIL: relative error above " << std::scientific << std::setprecision(1)
      << a.config.tolerance << " at:\n";
  for (const auto& f : r.failures) {
    err << "  trial " << f.trial << " " << f.term << " d/d " << f.parameter << ": analytic "
        << std::setprecision(9) << f.analytic << " numeric " << f.numeric << " rel "
        << std::setprecision(3) << f.relative_error << "\n";
  }
  return 1;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Few-shot misclassification detection with learned prompts", "misd"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(engine_version()));

  GenSynthArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-synth", "Generate the synthetic benchmark");
  gen_cmd->add_option("--classes", gen.classes, "Number of classes")->capture_default_str();
  gen_cmd->add_option("--per-class", gen.per_class, "Validation images per class")
      ->capture_default_str();
  gen_cmd->add_option("--train-per-class", gen.train_per_class, "Training images per class")
      ->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "Random seed")->capture_default_str();
  gen_cmd->add_option("--crops", gen.crops, "Crop views per image in train.emb")
      ->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "Output directory");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Learn category and negative prompts");
  train_cmd->add_option("--data", tr.data, "Data directory or train.img/.emb file")->required();
  train_cmd->add_option("--seed", tr.flags.config.seed, "Random seed")->capture_default_str();
  train_cmd->add_option("--out", tr.out, "Output directory");
  add_train_flags(train_cmd, tr.flags, true);

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Score the validation split with a model");
  eval_cmd->add_option("--data", ev.data, "Data directory or val.img/.emb file")->required();
  eval_cmd->add_option("--model", ev.model, "Model file")->required();
  eval_cmd->add_option("--report", ev.report, "Report path (JSON)");

  MetricsArgs me;
  auto* metrics_cmd = app.add_subcommand("metrics", "Compute metrics from a scores file");
  metrics_cmd->add_option("--scores", me.scores, "Scores CSV")->required();
  metrics_cmd->add_option("--report", me.report, "Report path (JSON)");

  SweepArgs sw;
  auto* sweep_cmd = app.add_subcommand("sweep", "Train and evaluate over shots x seeds");
  sweep_cmd->add_option("--data", sw.data, "Data directory")->required();
  sweep_cmd->add_option("--shots", sw.shots, "Comma-separated shot counts")
      ->delimiter(',')
      ->capture_default_str();
  sweep_cmd->add_option("--seeds", sw.seeds, "Seeds per shot count")->capture_default_str();
  sweep_cmd->add_option("--seed", sw.seed, "First seed")->capture_default_str();
  sweep_cmd->add_option("--jobs", sw.jobs, "Parallel runs (default: $MISD_JOBS or all cores)");
  sweep_cmd->add_option("--out", sw.out, "Output directory");
  add_train_flags(sweep_cmd, sw.flags, false);

  GradcheckArgs gc;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  grad_cmd->add_option("--trials", gc.config.trials, "Random trials")->capture_default_str();
  grad_cmd->add_option("--seed", gc.config.seed, "Random seed")->capture_default_str();
  grad_cmd->add_option("--perturb", gc.config.perturbation,
                       "Add this to one analytic coordinate per trial (harness self-test)")
      ->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // --help and friends exit 0; usage errors share the error status.
    return app.exit(e, out, err) == 0 ? 0 : 2;
  }

  try {
    if (*gen_cmd) return cmd_gen_synth(gen, out);
    if (*train_cmd) return cmd_train(tr, out);
    if (*eval_cmd) return cmd_eval(ev, out);
    if (*metrics_cmd) return cmd_metrics(me, out);
    if (*sweep_cmd) return cmd_sweep(sw, out);
    if (*grad_cmd) return cmd_gradcheck(gc, out, err);
  } catch (const Error& e) {
    err << "error: " << error_kind(e) << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}

}  // namespace misd
