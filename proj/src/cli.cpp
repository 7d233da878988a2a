#include "ssp/cli.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "CLI11.hpp"
#include "httplib.h"
#include "ssp/ensemble_eval.hpp"
#include "ssp/errors.hpp"
#include "ssp/featurize.hpp"
#include "ssp/hashing.hpp"

namespace ssp {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// A finding the command reports through exit status 1 rather than an error.
struct Finding : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Advisory lock on an output directory, released on destruction or when the
// process dies.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) {
    fs::create_directories(dir);
    const fs::path lock = dir / ".ssp.lock";
    fd_ = ::open(lock.c_str(), O_CREAT | O_RDWR, 0644);
    if (fd_ < 0) throw std::runtime_error("cannot open lock file " + lock.string());
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(fd_);
      throw std::runtime_error("output directory " + dir.string() + " is in use by another run");
    }
  }
  ~DirLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  int fd_ = -1;
};

// Writes through a temporary file so readers never see a partial result.
void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

fs::path manifest_path(const fs::path& output) { return output.string() + ".manifest.json"; }

void write_manifest(const fs::path& output, json manifest) {
  manifest["output"] = output.filename().string();
  manifest["output_sha256"] = sha256_file(output);
  write_file(manifest_path(output), manifest.dump(2) + "\n");
}

std::string dataset_name(const fs::path& path) {
  std::string name = path.filename().string();
  for (const char* ext : {".gz", ".npy"}) {
    if (name.size() > std::strlen(ext) && name.ends_with(ext)) name.resize(name.size() - std::strlen(ext));
  }
  return name;
}

std::vector<ProteinRecord> load_dataset(const fs::path& path, const RawLayout& layout, std::size_t limit = 0) {
  if (!fs::exists(path)) throw ConfigError("dataset not found: " + path.string());
  auto records = load_raw(path, layout, dataset_name(path));
  if (limit > 0 && records.size() > limit) records.resize(limit);
  return records;
}

RawLayout load_layout(const std::string& path) {
  if (path.empty()) return RawLayout{};
  RawLayout layout = read_json(path).get<RawLayout>();
  layout.validate();
  return layout;
}

fs::path find_in(const fs::path& dir, std::initializer_list<const char*> names) {
  for (const char* name : names) {
    for (const char* ext : {"", ".gz"}) {
      fs::path p = dir / (std::string(name) + ext);
      if (fs::exists(p)) return p;
    }
  }
  throw ConfigError("none of the expected files found in " + dir.string() + " (first choice: " +
                    std::string(*names.begin()) + ")");
}

template <typename T>
std::vector<T> slice(const std::vector<T>& v, std::size_t begin, std::size_t end) {
  begin = std::min(begin, v.size());
  end = std::min(end, v.size());
  return {v.begin() + static_cast<std::ptrdiff_t>(begin), v.begin() + static_cast<std::ptrdiff_t>(end)};
}

void print_hygiene(std::ostream& out, const std::vector<ProteinRecord>& records,
                   const std::vector<DuplicateGroup>& groups) {
  std::size_t residues = 0;
  int shortest = records.empty() ? 0 : kMaxLen;
  int longest = 0;
  for (const auto& r : records) {
    residues += static_cast<std::size_t>(r.length);
    shortest = std::min(shortest, r.length);
    longest = std::max(longest, r.length);
  }
  std::size_t redundant = 0;
  for (const auto& g : groups) redundant += g.size() - 1;
  out << "records: " << records.size() << "\n"
      << "residues: " << residues << "\n"
      << "length range: " << shortest << ".." << longest << "\n"
      << "duplicate groups: " << groups.size() << " (" << redundant << " redundant records)\n";
  for (const auto& g : groups) {
    out << "  duplicate:";
    for (auto i : g) out << ' ' << records[i].id;
    out << "\n";
  }
}

// Downloads `url` to `dest` (http or https).
void fetch(const std::string& url, const fs::path& dest) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("fetch URL needs a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  const std::string origin = url.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);
  httplib::Client client(origin);
  client.set_follow_location(true);
  client.set_read_timeout(600, 0);
  auto res = client.Get(path);
  if (!res) throw std::runtime_error("fetch failed for " + url + ": " + httplib::to_string(res.error()));
  if (res->status != 200) throw std::runtime_error("fetch failed for " + url + ": HTTP " + std::to_string(res->status));
  write_file(dest, res->body);
}

// ------------------------------------------------------------------ data

struct DataArgs {
  std::string input;
  std::string sha256;
  std::string url;
  std::string layout;
  bool cache = false;
};

int cmd_data(const DataArgs& a, const fs::path& out_dir, std::ostream& out) {
  const fs::path input = a.input;
  if (!fs::exists(input)) {
    if (a.url.empty()) throw ConfigError("dataset not found: " + input.string() + " (pass --fetch URL to download)");
    out << "fetching " << a.url << "\n";
    fetch(a.url, input);
  }
  const std::string digest = sha256_file(input);
  out << "file: " << input.string() << "\nsha256: " << digest << "\n";
  if (!a.sha256.empty() && a.sha256 != digest) {
    throw Finding("checksum mismatch for " + input.string() + ": expected " + a.sha256);
  }
  const RawLayout layout = load_layout(a.layout);
  const auto records = load_dataset(input, layout);
  const auto groups = find_duplicates(records);
  print_hygiene(out, records, groups);

  if (!out_dir.empty()) {
    DirLock lock(out_dir);
    const std::string name = dataset_name(input);
    json manifest = {{"input", input.string()},
                     {"input_sha256", digest},
                     {"layout", layout},
                     {"records", records.size()},
                     {"duplicate_groups", groups}};
    if (a.cache) {
      const std::string hash = digest.substr(0, 16);
      const fs::path features = out_dir / cache_file_name(name, "features", layout, 0.0, hash);
      const fs::path bigrams = out_dir / cache_file_name(name, "bigrams", layout, 0.0, hash);
      save_features(features, encode_features(records));
      save_bigrams(bigrams, make_bigrams(records));
      manifest["caches"] = {{"features", {{"file", features.filename().string()}, {"sha256", sha256_file(features)}}},
                            {"bigrams", {{"file", bigrams.filename().string()}, {"sha256", sha256_file(bigrams)}}}};
    }
    const fs::path path = out_dir / (name + ".data.json");
    write_file(path, manifest.dump(2) + "\n");
    out << "manifest: " << path.string() << "\n";
  }
  if (!groups.empty()) throw Finding(std::to_string(groups.size()) + " duplicate group(s) in " + input.string());
  return kExitOk;
}

// ------------------------------------------------------------------ check

struct CheckArgs {
  std::string train, validation, test;
  std::string layout;
};

int cmd_check(const CheckArgs& a, const fs::path& out_dir, std::ostream& out) {
  const RawLayout layout = load_layout(a.layout);
  std::vector<ProteinRecord> combined;
  std::array<std::size_t, 3> counts{};
  std::array<std::string, 3> paths = {a.train, a.validation, a.test};
  json hashes = json::object();
  int given = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    if (paths[s].empty()) continue;
    ++given;
    auto records = load_dataset(paths[s], layout);
    counts[s] = records.size();
    hashes[paths[s]] = sha256_file(paths[s]);
    combined.insert(combined.end(), std::make_move_iterator(records.begin()), std::make_move_iterator(records.end()));
  }
  if (given < 2) throw ConfigError("check needs at least two of --train, --val, --test");

  const auto report = check_disjoint(combined, SplitSpec::contiguous(counts[0], counts[1], counts[2]));
  out << "train: " << counts[0] << "  validation: " << counts[1] << "  test: " << counts[2] << "\n";
  write_leakage_text(out, report, combined);
  if (!out_dir.empty()) {
    DirLock lock(out_dir);
    std::ostringstream tsv;
    write_leakage_tsv(tsv, report, combined);
    const fs::path path = out_dir / ("leakage." + short_hash(tsv.str()) + ".tsv");
    write_file(path, tsv.str());
    write_manifest(path, {{"command", "check"}, {"inputs", hashes}, {"leaking_pairs", report.pairs.size()}});
    out << "report: " << path.string() << "\n";
  }
  if (!report.clean()) throw Finding(std::to_string(report.pairs.size()) + " leaking pair(s) across splits");
  return kExitOk;
}

// ------------------------------------------------------------------ train

int cmd_train(const RunConfig& cfg, const fs::path& out_dir, std::ostream& out) {
  if (out_dir.empty()) throw ConfigError("train needs --out DIR");
  const ResolvedRun run = resolve_run(cfg);
  DirLock lock(out_dir);
  DatasetBundle data = load_datasets(cfg);
  if (data.train.empty()) throw ConfigError("training set is empty");

  json run_json = cfg;
  run_json["resolved"] = {{"arch", run.arch}, {"train", run.train}, {"clip_grad_norm", run.clip_grad_norm}};
  const std::string run_key = sha256_hex(run_json.dump() + data.input_hashes.dump());

  const fs::path manifest_file = out_dir / "manifest.json";
  if (fs::exists(manifest_file) && fs::exists(out_dir / "weights.pt")) {
    const json previous = read_json(manifest_file);
    if (previous.value("run_key", "") == run_key &&
        previous.value("weights_sha256", "") == sha256_file(out_dir / "weights.pt")) {
      out << "up to date: " << out_dir.string() << " (run " << run_key.substr(0, 16) << ")\n";
      return kExitOk;
    }
  }

  if (cfg.deterministic) torch::set_num_threads(1);
  ModelHandle model = build_model(run.arch);
  out << "model " << model_letter(run.arch.model_id) << " (" << model_name(run.arch.model_id) << "), "
      << model.parameter_count() << " parameters\n"
      << "optimizer " << to_string(run.train.optimizer) << " lr " << run.train.learning_rate << " decay "
      << run.train.decay << " epochs " << run.train.epochs << " batch " << run.train.batch_size << "\n"
      << "train " << data.train.size() << " records, validation " << data.validation.size() << " records\n";
  for (const auto& d : run.arch.departures()) out << "departure: " << d << "\n";

  FitOptions options;
  options.deterministic = cfg.deterministic;
  options.allow_leakage = cfg.allow_leakage;
  options.clip_grad_norm = run.clip_grad_norm;
  options.history_path = out_dir / "history.tsv";
  options.on_epoch = [&out](const EpochRecord& r) {
    out << "epoch " << r.epoch << " lr " << r.learning_rate << " loss " << r.train_loss << " val_loss " << r.val_loss
        << " val_q8 " << r.val_accuracy << "\n";
  };
  const FitResult result = fit(model, data.train, data.validation, run.train, options);

  json extra = {{"command", "train"},
                {"run_key", run_key},
                {"run", run_json},
                {"train_config", run.train},
                {"inputs", data.input_hashes},
                {"best_epoch", result.best_epoch},
                {"best_val_accuracy", result.best_val_accuracy},
                {"epochs_completed", result.history.epochs.size()},
                {"diverged", result.diverged},
                {"selection", data.validation.empty() ? "training accuracy" : "validation accuracy"}};
  save_checkpoint(out_dir, model, extra);
  json manifest = read_json(manifest_file);
  manifest["weights_sha256"] = sha256_file(out_dir / "weights.pt");
  manifest["history_sha256"] = sha256_file(out_dir / "history.tsv");
  write_file(manifest_file, manifest.dump(2) + "\n");
  write_file(out_dir / "run.json", run_json.dump(2) + "\n");

  if (result.diverged) throw std::runtime_error("training diverged: " + result.message);
  out << "best epoch " << result.best_epoch << ", q8 " << result.best_val_accuracy << "\ncheckpoint: "
      << out_dir.string() << "\n";
  return kExitOk;
}

// ------------------------------------------------------------------ predict

struct PredictArgs {
  std::string checkpoint;
  std::string input;
  std::string output;
  std::string layout;
  std::size_t limit = 0;
};

int cmd_predict(const PredictArgs& a, const fs::path& out_dir, std::ostream& out) {
  json ck_manifest;
  ModelHandle model = load_checkpoint(a.checkpoint, &ck_manifest);
  const auto records = load_dataset(a.input, load_layout(a.layout), a.limit);
  if (records.empty()) throw ConfigError("no records in " + a.input);
  fs::path output = a.output;
  if (output.empty()) {
    const fs::path dir = out_dir.empty() ? fs::path(a.checkpoint) : out_dir;
    output = dir / (dataset_name(a.input) + "." + model_letter(model.config.model_id) + ".probs.npy");
  }
  std::optional<DirLock> lock;
  if (output.has_parent_path()) lock.emplace(output.parent_path());

  const ProbTensor probs = predict_probs(model, records);
  save_probs(output, probs);
  json ids = json::array();
  for (const auto& r : records) ids.push_back(r.id);
  write_manifest(output, {{"command", "predict"},
                          {"checkpoint", a.checkpoint},
                          {"checkpoint_weights_sha256", sha256_file(fs::path(a.checkpoint) / "weights.pt")},
                          {"model_id", std::string(1, model_letter(model.config.model_id))},
                          {"input", a.input},
                          {"input_sha256", sha256_file(a.input)},
                          {"limit", a.limit},
                          {"shape", {probs.n, probs.max_len, LabelVocab::kSize}},
                          {"ids", ids}});
  out << "probabilities (" << probs.n << ", " << probs.max_len << ", " << LabelVocab::kSize
      << "): " << output.string() << "\n";
  return kExitOk;
}

// ------------------------------------------------------------------ ensemble

struct EnsembleArgs {
  std::vector<std::string> members;
  std::string input;
  std::string output;
  std::string layout;
  std::size_t limit = 0;
};

int cmd_ensemble(const EnsembleArgs& a, const fs::path& out_dir, std::ostream& out) {
  if (a.members.empty()) throw ConfigError("ensemble needs at least one --probs file");
  const auto records = load_dataset(a.input, load_layout(a.layout), a.limit);
  std::vector<ProbTensor> members;
  std::vector<std::string> member_hashes;
  for (const auto& m : a.members) {
    members.push_back(load_probs(m));
    member_hashes.push_back(sha256_file(m));
    if (members.back().n != records.size()) {
      throw ShapeError(m + " holds " + std::to_string(members.back().n) + " records, dataset has " +
                       std::to_string(records.size()));
    }
  }
  const LabelTensor pred = ensemble_predict(members, gold_mask(records));
  std::vector<PredictionEntry> entries;
  for (std::size_t i = 0; i < records.size(); ++i) {
    std::string labels;
    for (int p = 0; p < records[i].length; ++p) labels += LabelVocab::kLetters[pred.at(i, p)];
    entries.push_back({records[i].id, std::move(labels)});
  }

  fs::path output = a.output;
  if (output.empty()) {
    std::vector<std::string> sorted = member_hashes;
    std::sort(sorted.begin(), sorted.end());
    std::string key;
    for (const auto& h : sorted) key += h;
    const fs::path dir = out_dir.empty() ? fs::path(".") : out_dir;
    output = dir / (dataset_name(a.input) + ".ensemble." + short_hash(key) + ".tsv");
  }
  std::optional<DirLock> lock;
  if (output.has_parent_path()) lock.emplace(output.parent_path());
  write_predictions(output, entries);
  // Sorted so that the manifest, like the predictions, ignores member order.
  std::sort(member_hashes.begin(), member_hashes.end());
  write_manifest(output, {{"command", "ensemble"},
                          {"members_sha256", member_hashes},
                          {"input", a.input},
                          {"input_sha256", sha256_file(a.input)},
                          {"limit", a.limit}});
  out << members.size() << "-member ensemble over " << records.size() << " records: " << output.string() << "\n";
  return kExitOk;
}

// ------------------------------------------------------------------ evaluate

std::string format_extension(ReportFormat f) {
  switch (f) {
    case ReportFormat::kText: return "txt";
    case ReportFormat::kCsv: return "csv";
    case ReportFormat::kJson: return "json";
  }
  return "txt";
}

struct EvaluateArgs {
  std::string predictions;
  std::string gold;
  std::string format = "text";
  std::string output;
  std::string layout;
  std::size_t limit = 0;
};

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  const ReportFormat format = parse_report_format(a.format);
  const auto records = load_dataset(a.gold, load_layout(a.layout), a.limit);
  const LabelTensor pred = align_predictions(read_predictions(a.predictions), records);
  const auto mask = gold_mask(records);
  EvalReport report = evaluate(pred, gold_labels(records), mask);
  report.record_count = records.size();
  report.macro_accuracy = q8_macro_accuracy(pred, gold_labels(records), mask);

  const std::string document = render_report(report, format);
  fs::path output = a.output;
  if (output.empty()) {
    const fs::path p = a.predictions;
    output = p.parent_path() / (p.stem().string() + ".report." + short_hash(document) + "." + format_extension(format));
  }
  write_file(output, document);
  write_manifest(output, {{"command", "evaluate"},
                          {"predictions", a.predictions},
                          {"predictions_sha256", sha256_file(a.predictions)},
                          {"gold", a.gold},
                          {"gold_sha256", sha256_file(a.gold)},
                          {"q8_accuracy", report.q8_accuracy}});
  out << render_report(report, ReportFormat::kText) << "report: " << output.string() << "\n";
  return kExitOk;
}

// ------------------------------------------------------------------ report

struct ReportArgs {
  std::string confusion;
  std::string from;
  std::string from_format = "json";
  std::string format = "text";
  std::string output;
  std::optional<double> stated_accuracy;
  double tolerance = 0.0005;
};

ConfusionMatrix read_confusion(const fs::path& path) {
  std::istringstream in(read_file(path));
  ConfusionMatrix m{};
  std::size_t filled = 0;
  std::string line;
  while (std::getline(in, line)) {
    const auto start = line.find_first_not_of(" \t\r");
    if (start == std::string::npos || line[start] == '#') continue;
    if (filled == LabelVocab::kClasses) throw FormatError(path.string() + ": more than 8 matrix rows");
    std::istringstream row(line);
    for (auto& cell : m[filled]) {
      if (!(row >> cell)) throw FormatError(path.string() + ": matrix row " + std::to_string(filled + 1) +
                                            " needs 8 non-negative integers");
    }
    ++filled;
  }
  if (filled != LabelVocab::kClasses) throw FormatError(path.string() + ": expected 8 matrix rows");
  return m;
}

int cmd_report(const ReportArgs& a, std::ostream& out) {
  if (a.confusion.empty() == a.from.empty()) throw ConfigError("report needs exactly one of --confusion, --from");
  const ReportFormat format = parse_report_format(a.format);
  const EvalReport report = a.confusion.empty() ? parse_report(read_file(a.from), parse_report_format(a.from_format))
                                                : report_from_confusion(read_confusion(a.confusion));
  const std::string document = render_report(report, format);
  if (!a.output.empty()) {
    write_file(a.output, document);
    write_manifest(a.output, {{"command", "report"},
                              {"source", a.confusion.empty() ? a.from : a.confusion},
                              {"source_sha256", sha256_file(a.confusion.empty() ? a.from : a.confusion)}});
  }
  out << document;
  if (!report.self_consistent()) throw std::logic_error("report accuracy disagrees with its confusion matrix");
  out << "accuracy check: trace " << trace(report.confusion) << " / total " << total(report.confusion) << " = "
      << std::setprecision(17) << report.q8_accuracy << " (exact)\n";
  if (a.stated_accuracy) {
    const double gap = std::abs(*a.stated_accuracy - report.q8_accuracy);
    out << "stated accuracy " << *a.stated_accuracy << ": " << (gap <= a.tolerance ? "consistent" : "INCONSISTENT")
        << " (difference " << gap << ")\n";
    if (gap > a.tolerance) {
      throw Finding("stated accuracy " + std::to_string(*a.stated_accuracy) +
                    " does not match the confusion matrix (" + std::to_string(report.q8_accuracy) + ")");
    }
  }
  return kExitOk;
}

}  // namespace

// ------------------------------------------------------------------ RunConfig

void to_json(json& j, const RunConfig& c) {
  j = {{"model", c.model},
       {"preset", c.preset},
       {"widths", c.widths},
       {"data_preset", c.data_preset},
       {"data_dir", c.data_dir.string()},
       {"train", c.train_path.string()},
       {"validation", c.validation_path.string()},
       {"test", c.test_path.string()},
       {"limit", c.limit},
       {"layout", c.layout},
       {"arch", c.arch_overrides},
       {"train_config", c.train_overrides},
       {"allow_leakage", c.allow_leakage},
       {"deterministic", c.deterministic}};
  j["clip_grad_norm"] = c.clip_grad_norm ? json(*c.clip_grad_norm) : json(nullptr);
  j["seed"] = c.seed ? json(*c.seed) : json(nullptr);
}

void from_json(const json& j, RunConfig& c) {
  const RunConfig d;
  c.model = j.value("model", d.model);
  c.preset = j.value("preset", d.preset);
  c.widths = j.value("widths", d.widths);
  c.data_preset = j.value("data_preset", d.data_preset);
  c.data_dir = j.value("data_dir", std::string());
  c.train_path = j.value("train", std::string());
  c.validation_path = j.value("validation", std::string());
  c.test_path = j.value("test", std::string());
  c.limit = j.value("limit", d.limit);
  c.layout = j.value("layout", d.layout);
  c.arch_overrides = j.value("arch", json::object());
  c.train_overrides = j.value("train_config", json::object());
  c.allow_leakage = j.value("allow_leakage", d.allow_leakage);
  c.deterministic = j.value("deterministic", d.deterministic);
  c.clip_grad_norm.reset();
  c.seed.reset();
  if (j.contains("clip_grad_norm") && !j["clip_grad_norm"].is_null()) c.clip_grad_norm = j["clip_grad_norm"].get<double>();
  if (j.contains("seed") && !j["seed"].is_null()) c.seed = j["seed"].get<std::uint64_t>();
}

TrainConfig smoke_train_config() {
  TrainConfig c;
  c.optimizer = OptimizerName::kAdam;
  c.learning_rate = 0.003;
  c.decay = 0.0;
  c.epochs = 40;
  c.batch_size = 1;
  return c;
}

ResolvedRun resolve_run(const RunConfig& cfg) {
  const ModelId id = parse_model_id(cfg.model);
  ResolvedRun run;
  if (cfg.widths == "full") {
    run.arch = ArchConfig::defaults(id);
  } else if (cfg.widths == "reduced") {
    run.arch = ArchConfig::reduced(id);
  } else {
    throw ConfigError("unknown widths '" + cfg.widths + "' (expected full or reduced)");
  }
  if (cfg.preset == "table1") {
    run.train = TrainConfig::preset(id);
  } else if (cfg.preset == "smoke") {
    // Memorisation run: regularisers off, clipped steps.
    run.train = smoke_train_config();
    run.arch.dropout = 0.0;
    run.arch.gru_conv.dropout = 0.0;
    run.clip_grad_norm = 1.0;
  } else {
    throw ConfigError("unknown preset '" + cfg.preset + "' (expected table1 or smoke)");
  }

  try {
    json arch = run.arch;
    arch.merge_patch(cfg.arch_overrides);
    arch["model_id"] = std::string(1, model_letter(id));
    run.arch = arch.get<ArchConfig>();
    json train = run.train;
    train.merge_patch(cfg.train_overrides);
    run.train = train.get<TrainConfig>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad override: ") + e.what());
  }
  if (cfg.clip_grad_norm) run.clip_grad_norm = *cfg.clip_grad_norm;
  if (cfg.seed) {
    run.arch.seed = static_cast<std::int64_t>(*cfg.seed);
    run.train.seed = *cfg.seed;
  }
  run.arch.validate();
  run.train.validate();
  if (run.clip_grad_norm < 0.0) throw ConfigError("clip_grad_norm must be non-negative");
  return run;
}

DatasetBundle load_datasets(const RunConfig& cfg) {
  DatasetBundle b;
  auto note = [&b](const fs::path& p) { b.input_hashes[p.string()] = sha256_file(p); };

  if (!cfg.data_preset.empty()) {
    fs::path dir = cfg.data_dir;
    if (dir.empty()) {
      const char* env = std::getenv("SSP_DATA_DIR");
      if (env == nullptr) throw ConfigError("data preset '" + cfg.data_preset + "' needs --data-dir or SSP_DATA_DIR");
      dir = env;
    }
    if (cfg.data_preset == "cb513") {
      // Train on the filtered set minus its last 256 proteins, which select
      // the checkpoint; test on CB513.
      const fs::path train = find_in(dir, {"cullpdb+profile_5926_filtered.npy", "cullpdb+profile_6133_filtered.npy"});
      const fs::path test = find_in(dir, {"cb513+profile_split1.npy"});
      auto all = load_dataset(train, cfg.layout);
      const std::size_t cut = all.size() > 256 ? all.size() - 256 : 0;
      b.train = slice(all, 0, cut);
      b.validation = slice(all, cut, all.size());
      b.test = load_dataset(test, cfg.layout);
      note(train);
      note(test);
    } else if (cfg.data_preset == "cb6133") {
      // The published split: 5600 train, 272 test, 256 validation.
      const fs::path file = find_in(dir, {"cullpdb+profile_6133.npy", "cullpdb+profile_5926.npy"});
      auto all = load_dataset(file, cfg.layout);
      b.train = slice(all, 0, 5600);
      b.test = slice(all, 5605, 5877);
      b.validation = slice(all, 5877, all.size());
      note(file);
    } else {
      throw ConfigError("unknown data preset '" + cfg.data_preset + "' (expected cb513 or cb6133)");
    }
  } else {
    if (cfg.train_path.empty()) throw ConfigError("no training data: give --train or --data-preset");
    b.train = load_dataset(cfg.train_path, cfg.layout);
    note(cfg.train_path);
    if (!cfg.validation_path.empty()) {
      b.validation = load_dataset(cfg.validation_path, cfg.layout);
      note(cfg.validation_path);
    }
    if (!cfg.test_path.empty()) {
      b.test = load_dataset(cfg.test_path, cfg.layout);
      note(cfg.test_path);
    }
  }
  if (cfg.limit > 0 && b.train.size() > cfg.limit) b.train.resize(cfg.limit);
  return b;
}

// ------------------------------------------------------------------ entry

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Q8 protein secondary-structure prediction suite", "ssp"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  bool deterministic = false;
  app.add_option("--config", config_path, "JSON run config; flags override its entries")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Seed for weights, dropout and shuffling");
  app.add_option("--out", out_dir, "Output directory");
  app.add_flag("--deterministic", deterministic, "Require reproducible kernels");

  DataArgs data_args;
  auto* data = app.add_subcommand("data", "Fetch or verify a dataset container and audit it for duplicates");
  data->add_option("--input", data_args.input, "Dataset container (.npy or .npy.gz)")->required();
  data->add_option("--sha256", data_args.sha256, "Expected SHA-256 of the container");
  data->add_option("--fetch", data_args.url, "Download from this URL when the file is missing");
  data->add_option("--layout", data_args.layout, "Raw column layout JSON");
  data->add_flag("--cache", data_args.cache, "Write feature and bigram caches to --out");

  CheckArgs check_args;
  auto* check = app.add_subcommand("check", "Report sequences shared between splits");
  check->add_option("--train", check_args.train, "Training container");
  check->add_option("--val", check_args.validation, "Validation container");
  check->add_option("--test", check_args.test, "Test container");
  check->add_option("--layout", check_args.layout, "Raw column layout JSON");

  struct TrainFlags {
    std::optional<std::string> model, preset, widths, data_preset, data_dir, train, val, test, optimizer, layout;
    std::optional<std::size_t> limit;
    std::optional<int> epochs, batch_size;
    std::optional<double> lr, decay, dropout, clip;
    bool allow_leakage = false;
  } tf;
  auto* train = app.add_subcommand("train", "Train one architecture and write a checkpoint");
  train->add_option("--model", tf.model, "A-F or a model name");
  train->add_option("--preset", tf.preset, "table1 (published settings) or smoke (overfit run)");
  train->add_option("--widths", tf.widths, "full or reduced");
  train->add_option("--data-preset", tf.data_preset, "cb513 or cb6133");
  train->add_option("--data-dir", tf.data_dir, "Directory holding the benchmark containers");
  train->add_option("--train", tf.train, "Training container");
  train->add_option("--val", tf.val, "Validation container");
  train->add_option("--test", tf.test, "Test container");
  train->add_option("--layout", tf.layout, "Raw column layout JSON");
  train->add_option("--limit", tf.limit, "Keep only the first N training records");
  train->add_option("--epochs", tf.epochs);
  train->add_option("--batch-size", tf.batch_size);
  train->add_option("--lr", tf.lr, "Initial learning rate");
  train->add_option("--decay", tf.decay, "Inverse-time decay per epoch");
  train->add_option("--optimizer", tf.optimizer, "rmsprop, nadam or adam");
  train->add_option("--dropout", tf.dropout);
  train->add_option("--clip", tf.clip, "Gradient norm limit (0 disables)");
  train->add_flag("--allow-leakage", tf.allow_leakage, "Train even if splits share sequences");

  PredictArgs predict_args;
  auto* predict = app.add_subcommand("predict", "Write per-residue probabilities for a dataset");
  predict->add_option("--checkpoint", predict_args.checkpoint, "Checkpoint directory")->required();
  predict->add_option("--input", predict_args.input, "Dataset container")->required();
  predict->add_option("--output", predict_args.output, "Probability file (.npy)");
  predict->add_option("--layout", predict_args.layout, "Raw column layout JSON");
  predict->add_option("--limit", predict_args.limit, "Keep only the first N records");

  EnsembleArgs ensemble_args;
  auto* ensemble = app.add_subcommand("ensemble", "Average member probabilities and take the argmax");
  ensemble->add_option("--probs", ensemble_args.members, "Member probability files")->required();
  ensemble->add_option("--input", ensemble_args.input, "Dataset the probabilities were computed on")->required();
  ensemble->add_option("--output", ensemble_args.output, "Prediction file (id<TAB>labels)");
  ensemble->add_option("--layout", ensemble_args.layout, "Raw column layout JSON");
  ensemble->add_option("--limit", ensemble_args.limit, "Keep only the first N records");

  EvaluateArgs evaluate_args;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Score predictions against gold labels");
  evaluate_cmd->add_option("--predictions", evaluate_args.predictions, "Prediction file")->required();
  evaluate_cmd->add_option("--gold", evaluate_args.gold, "Dataset container with labels")->required();
  evaluate_cmd->add_option("--format", evaluate_args.format, "text, csv or json");
  evaluate_cmd->add_option("--output", evaluate_args.output, "Report path");
  evaluate_cmd->add_option("--layout", evaluate_args.layout, "Raw column layout JSON");
  evaluate_cmd->add_option("--limit", evaluate_args.limit, "Keep only the first N records");

  ReportArgs report_args;
  auto* report = app.add_subcommand("report", "Render or convert an evaluation report");
  report->add_option("--confusion", report_args.confusion, "8x8 matrix, predicted rows, whitespace separated");
  report->add_option("--from", report_args.from, "Existing report to convert");
  report->add_option("--from-format", report_args.from_format, "Format of --from");
  report->add_option("--format", report_args.format, "text, csv or json");
  report->add_option("--output", report_args.output, "Write the rendered report here");
  report->add_option("--stated-accuracy", report_args.stated_accuracy, "Accuracy claimed alongside the matrix");
  report->add_option("--tolerance", report_args.tolerance, "Allowed gap for --stated-accuracy");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg = read_json(config_path).get<RunConfig>();
    if (seed) cfg.seed = seed;
    if (deterministic) {
      cfg.deterministic = true;
      at::globalContext().setDeterministicAlgorithms(true, /*warn_only=*/false);
    }
    const fs::path out_path = out_dir;

    if (*data) return cmd_data(data_args, out_path, out);
    if (*check) return cmd_check(check_args, out_path, out);
    if (*train) {
      if (tf.model) cfg.model = *tf.model;
      if (tf.preset) cfg.preset = *tf.preset;
      if (tf.widths) cfg.widths = *tf.widths;
      if (tf.data_preset) cfg.data_preset = *tf.data_preset;
      if (tf.data_dir) cfg.data_dir = *tf.data_dir;
      if (tf.train) cfg.train_path = *tf.train;
      if (tf.val) cfg.validation_path = *tf.val;
      if (tf.test) cfg.test_path = *tf.test;
      if (tf.layout) cfg.layout = load_layout(*tf.layout);
      if (tf.limit) cfg.limit = *tf.limit;
      if (tf.epochs) cfg.train_overrides["epochs"] = *tf.epochs;
      if (tf.batch_size) cfg.train_overrides["batch_size"] = *tf.batch_size;
      if (tf.lr) cfg.train_overrides["learning_rate"] = *tf.lr;
      if (tf.decay) cfg.train_overrides["decay"] = *tf.decay;
      if (tf.optimizer) cfg.train_overrides["optimizer"] = *tf.optimizer;
      if (tf.dropout) cfg.arch_overrides["dropout"] = *tf.dropout;
      if (tf.clip) cfg.clip_grad_norm = *tf.clip;
      if (tf.allow_leakage) cfg.allow_leakage = true;
      return cmd_train(cfg, out_path, out);
    }
    if (*predict) return cmd_predict(predict_args, out_path, out);
    if (*ensemble) return cmd_ensemble(ensemble_args, out_path, out);
    if (*evaluate_cmd) return cmd_evaluate(evaluate_args, out);
    if (*report) return cmd_report(report_args, out);
  } catch (const Finding& e) {
    err << "finding: " << e.what() << "\n";
    return kExitFinding;
  } catch (const LeakageError& e) {
    err << "leakage: " << e.what() << "\n";
    return kExitFinding;
  } catch (const IntegrityError& e) {
    err << "integrity: " << e.what() << "\n";
    return kExitFinding;
  } catch (const AlignmentError& e) {
    err << "alignment: " << e.what() << "\n";
    return kExitFinding;
  } catch (const FormatError& e) {
    err << "format: " << e.what() << "\n";
    return kExitFinding;
  } catch (const ConfigError& e) {
    err << "usage: " << e.what() << "\n";
    return kExitUsage;
  } catch (const SpecError& e) {
    err << "usage: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  argv.push_back("ssp");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace ssp
