#include "ssp/ensemble_eval.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <unordered_map>

#include "ssp/npy.hpp"

namespace ssp {
namespace {

constexpr int kClasses = LabelVocab::kClasses;

void check_members(std::span<const ProbTensor> members) {
  if (members.empty()) throw ConfigError("ensemble: at least one member is required");
  for (const auto& m : members) {
    if (m.n != members[0].n || m.max_len != members[0].max_len ||
        m.values.size() != m.n * static_cast<std::size_t>(m.max_len) * LabelVocab::kSize) {
      throw ShapeError("ensemble: members differ in shape");
    }
  }
}

// Mean probability of each class at one position. Member values are summed in
// sorted order so the result does not depend on member order.
std::array<double, LabelVocab::kSize> mean_row(std::span<const ProbTensor> members, std::size_t offset) {
  std::array<double, LabelVocab::kSize> mean{};
  std::vector<double> column(members.size());
  for (int c = 0; c < LabelVocab::kSize; ++c) {
    for (std::size_t i = 0; i < members.size(); ++i) column[i] = members[i].values[offset + static_cast<std::size_t>(c)];
    std::sort(column.begin(), column.end());
    double sum = 0.0;
    for (double v : column) sum += v;
    mean[static_cast<std::size_t>(c)] = sum / static_cast<double>(members.size());
  }
  return mean;
}

int argmax_prefix(const std::array<double, LabelVocab::kSize>& row, int classes) {
  int best = 0;
  for (int c = 1; c < classes; ++c) {
    if (row[static_cast<std::size_t>(c)] > row[static_cast<std::size_t>(best)]) best = c;
  }
  return best;
}

void check_shapes(const LabelTensor& pred, const LabelTensor& gold, std::span<const std::uint8_t> mask) {
  if (pred.n != gold.n || pred.max_len != gold.max_len || pred.labels.size() != gold.labels.size() ||
      mask.size() != gold.labels.size()) {
    throw ShapeError("metrics: prediction, gold and mask shapes disagree");
  }
}

std::string fmt_double(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

double parse_double(const std::string& s) {
  std::size_t used = 0;
  double v = std::stod(s, &used);
  if (used != s.size()) throw FormatError("report: bad number '" + s + "'");
  return v;
}

std::uint64_t parse_count(const std::string& s) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw FormatError("report: bad count '" + s + "'");
  return v;
}

std::vector<std::string> split(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, delim)) out.push_back(field);
  if (!line.empty() && line.back() == delim) out.emplace_back();
  return out;
}

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

EvalReport finish(const ConfusionMatrix& confusion, std::optional<double> macro, std::size_t records) {
  EvalReport r = report_from_confusion(confusion);
  r.macro_accuracy = macro;
  r.record_count = records;
  return r;
}

}  // namespace

LabelTensor gold_labels(const std::vector<ProteinRecord>& records) {
  LabelTensor out;
  out.n = records.size();
  out.max_len = records.empty() ? kMaxLen : records.front().max_len;
  for (const auto& r : records) {
    if (r.max_len != out.max_len) throw ShapeError("gold_labels: records disagree on max_len");
    out.labels.insert(out.labels.end(), r.labels.begin(), r.labels.end());
  }
  return out;
}

std::vector<std::uint8_t> gold_mask(const std::vector<ProteinRecord>& records) {
  std::vector<std::uint8_t> out;
  for (const auto& r : records) out.insert(out.end(), r.mask.begin(), r.mask.end());
  return out;
}

LabelTensor ensemble_argmax(std::span<const ProbTensor> members) {
  check_members(members);
  LabelTensor out;
  out.n = members[0].n;
  out.max_len = members[0].max_len;
  const std::size_t positions = out.n * static_cast<std::size_t>(out.max_len);
  out.labels.resize(positions);
  for (std::size_t p = 0; p < positions; ++p) {
    out.labels[p] = static_cast<std::uint8_t>(argmax_prefix(mean_row(members, p * LabelVocab::kSize), LabelVocab::kSize));
  }
  return out;
}

LabelTensor ensemble_predict(std::span<const ProbTensor> members, std::span<const std::uint8_t> mask) {
  check_members(members);
  LabelTensor out;
  out.n = members[0].n;
  out.max_len = members[0].max_len;
  const std::size_t positions = out.n * static_cast<std::size_t>(out.max_len);
  if (mask.size() != positions) throw ShapeError("ensemble_predict: mask shape disagrees with members");
  out.labels.assign(positions, LabelVocab::kNoSeq);
  for (std::size_t p = 0; p < positions; ++p) {
    if (mask[p] == 0) continue;
    out.labels[p] = static_cast<std::uint8_t>(argmax_prefix(mean_row(members, p * LabelVocab::kSize), kClasses));
  }
  return out;
}

double q8_accuracy(const LabelTensor& pred, const LabelTensor& gold, std::span<const std::uint8_t> mask) {
  check_shapes(pred, gold, mask);
  std::uint64_t correct = 0;
  std::uint64_t counted = 0;
  for (std::size_t p = 0; p < mask.size(); ++p) {
    if (mask[p] == 0) continue;
    ++counted;
    if (pred.labels[p] == gold.labels[p]) ++correct;
  }
  if (counted == 0) throw ConfigError("q8_accuracy: no masked positions");
  return static_cast<double>(correct) / static_cast<double>(counted);
}

double q8_macro_accuracy(const LabelTensor& pred, const LabelTensor& gold, std::span<const std::uint8_t> mask) {
  check_shapes(pred, gold, mask);
  const auto L = static_cast<std::size_t>(gold.max_len);
  double sum = 0.0;
  std::size_t records = 0;
  for (std::size_t r = 0; r < gold.n; ++r) {
    std::uint64_t correct = 0;
    std::uint64_t counted = 0;
    for (std::size_t i = r * L; i < (r + 1) * L; ++i) {
      if (mask[i] == 0) continue;
      ++counted;
      if (pred.labels[i] == gold.labels[i]) ++correct;
    }
    if (counted == 0) continue;
    sum += static_cast<double>(correct) / static_cast<double>(counted);
    ++records;
  }
  if (records == 0) throw ConfigError("q8_macro_accuracy: no masked positions");
  return sum / static_cast<double>(records);
}

ConfusionMatrix confusion_matrix(const LabelTensor& pred, const LabelTensor& gold, std::span<const std::uint8_t> mask) {
  check_shapes(pred, gold, mask);
  ConfusionMatrix m{};
  const auto L = static_cast<std::size_t>(gold.max_len);
  for (std::size_t p = 0; p < mask.size(); ++p) {
    if (mask[p] == 0) continue;
    const int predicted = pred.labels[p];
    const int truth = gold.labels[p];
    if (predicted >= kClasses || truth >= kClasses) {
      throw IntegrityError("confusion_matrix: noSeq at masked position " + std::to_string(p % L) + " of record " +
                           std::to_string(p / L));
    }
    ++m[static_cast<std::size_t>(predicted)][static_cast<std::size_t>(truth)];
  }
  return m;
}

std::array<ClassScores, LabelVocab::kClasses> per_class_prf(const ConfusionMatrix& m) {
  std::array<ClassScores, kClasses> out{};
  for (std::size_t k = 0; k < kClasses; ++k) {
    auto& s = out[k];
    for (std::size_t j = 0; j < kClasses; ++j) {
      s.predicted += m[k][j];
      s.support += m[j][k];
    }
    const auto hit = static_cast<double>(m[k][k]);
    s.precision = s.predicted == 0 ? 0.0 : hit / static_cast<double>(s.predicted);
    s.recall = s.support == 0 ? 0.0 : hit / static_cast<double>(s.support);
    const double denom = s.precision + s.recall;
    s.f_score = denom == 0.0 ? 0.0 : 2.0 * s.precision * s.recall / denom;
  }
  return out;
}

std::uint64_t trace(const ConfusionMatrix& m) {
  std::uint64_t t = 0;
  for (std::size_t k = 0; k < kClasses; ++k) t += m[k][k];
  return t;
}

std::uint64_t total(const ConfusionMatrix& m) {
  std::uint64_t t = 0;
  for (const auto& row : m) {
    for (auto v : row) t += v;
  }
  return t;
}

bool EvalReport::self_consistent() const {
  const std::uint64_t n = total(confusion);
  if (n != residue_count || n == 0) return false;
  return static_cast<double>(trace(confusion)) / static_cast<double>(n) == q8_accuracy;
}

EvalReport report_from_confusion(const ConfusionMatrix& confusion) {
  EvalReport r;
  r.confusion = confusion;
  r.per_class = per_class_prf(confusion);
  r.residue_count = total(confusion);
  if (r.residue_count == 0) throw ConfigError("report: empty confusion matrix");
  r.q8_accuracy = static_cast<double>(trace(confusion)) / static_cast<double>(r.residue_count);
  return r;
}

EvalReport evaluate(const LabelTensor& pred, const LabelTensor& gold, std::span<const std::uint8_t> mask) {
  const ConfusionMatrix confusion = confusion_matrix(pred, gold, mask);
  EvalReport r = report_from_confusion(confusion);
  const double direct = q8_accuracy(pred, gold, mask);
  if (direct != r.q8_accuracy) {
    throw std::logic_error("evaluate: accuracy " + fmt_double(direct) + " differs from confusion trace/total " +
                           fmt_double(r.q8_accuracy));
  }
  r.macro_accuracy = q8_macro_accuracy(pred, gold, mask);
  r.record_count = gold.n;
  return r;
}

ReportFormat parse_report_format(const std::string& name) {
  if (name == "text" || name == "txt") return ReportFormat::kText;
  if (name == "csv") return ReportFormat::kCsv;
  if (name == "json") return ReportFormat::kJson;
  throw ConfigError("unknown report format '" + name + "' (expected text, csv or json)");
}

std::string render_report(const EvalReport& r, ReportFormat format) {
  std::ostringstream out;
  switch (format) {
    case ReportFormat::kText: {
      out << "Q8 accuracy (residue micro): " << fmt_double(r.q8_accuracy) << " (" << trace(r.confusion) << " / "
          << r.residue_count << ")\n";
      out << "Q8 accuracy (per-record macro): "
          << (r.macro_accuracy ? fmt_double(*r.macro_accuracy) : std::string("n/a")) << "\n";
      out << "records: " << r.record_count << "\n\n";
      out << "Confusion matrix (rows = predicted, columns = truth)\n";
      out << std::setw(3) << "";
      for (int c = 0; c < kClasses; ++c) out << std::setw(9) << LabelVocab::letter(c);
      out << "\n";
      for (int k = 0; k < kClasses; ++k) {
        out << std::setw(3) << LabelVocab::letter(k);
        for (int c = 0; c < kClasses; ++c) out << std::setw(9) << r.confusion[static_cast<std::size_t>(k)][static_cast<std::size_t>(c)];
        out << "\n";
      }
      out << "\nPer-class scores\n";
      out << std::setw(3) << "" << std::setw(11) << "precision" << std::setw(9) << "recall" << std::setw(9) << "f-score"
          << std::setw(10) << "support\n";
      out << std::fixed << std::setprecision(2);
      for (int k = 0; k < kClasses; ++k) {
        const auto& s = r.per_class[static_cast<std::size_t>(k)];
        out << std::setw(3) << LabelVocab::letter(k) << std::setw(11) << s.precision << std::setw(9) << s.recall
            << std::setw(9) << s.f_score << std::setw(9) << s.support << "\n";
      }
      break;
    }
    case ReportFormat::kCsv: {
      out << "metric,value\n";
      out << "q8_accuracy," << fmt_double(r.q8_accuracy) << "\n";
      out << "macro_accuracy," << (r.macro_accuracy ? fmt_double(*r.macro_accuracy) : std::string()) << "\n";
      out << "residue_count," << r.residue_count << "\n";
      out << "record_count," << r.record_count << "\n\n";
      out << "predicted\\truth";
      for (int c = 0; c < kClasses; ++c) out << ',' << LabelVocab::letter(c);
      out << "\n";
      for (int k = 0; k < kClasses; ++k) {
        out << LabelVocab::letter(k);
        for (int c = 0; c < kClasses; ++c) out << ',' << r.confusion[static_cast<std::size_t>(k)][static_cast<std::size_t>(c)];
        out << "\n";
      }
      out << "\nclass,precision,recall,f_score,support,predicted\n";
      for (int k = 0; k < kClasses; ++k) {
        const auto& s = r.per_class[static_cast<std::size_t>(k)];
        out << LabelVocab::letter(k) << ',' << fmt_double(s.precision) << ',' << fmt_double(s.recall) << ','
            << fmt_double(s.f_score) << ',' << s.support << ',' << s.predicted << "\n";
      }
      break;
    }
    case ReportFormat::kJson: {
      nlohmann::json j;
      j["q8_accuracy"] = r.q8_accuracy;
      j["macro_accuracy"] = r.macro_accuracy ? nlohmann::json(*r.macro_accuracy) : nlohmann::json(nullptr);
      j["residue_count"] = r.residue_count;
      j["record_count"] = r.record_count;
      j["classes"] = std::string(LabelVocab::kLetters);
      j["confusion"] = r.confusion;
      nlohmann::json classes = nlohmann::json::object();
      for (int k = 0; k < kClasses; ++k) {
        const auto& s = r.per_class[static_cast<std::size_t>(k)];
        classes[std::string(1, LabelVocab::letter(k))] = {{"precision", s.precision}, {"recall", s.recall},
                                                          {"f_score", s.f_score},     {"support", s.support},
                                                          {"predicted", s.predicted}};
      }
      j["per_class"] = classes;
      out << j.dump(2) << "\n";
      break;
    }
  }
  return out.str();
}

EvalReport parse_report(const std::string& document, ReportFormat format) {
  ConfusionMatrix m{};
  std::optional<double> macro;
  std::size_t records = 0;
  double stated_accuracy = 0.0;
  std::istringstream in(document);
  std::string line;
  switch (format) {
    case ReportFormat::kText: {
      int row = -1;
      while (std::getline(in, line)) {
        auto toks = split_ws(line);
        if (line.starts_with("Q8 accuracy (residue micro):")) {
          stated_accuracy = parse_double(toks.at(4));
        } else if (line.starts_with("Q8 accuracy (per-record macro):")) {
          if (toks.at(4) != "n/a") macro = parse_double(toks.at(4));
        } else if (line.starts_with("records:")) {
          records = parse_count(toks.at(1));
        } else if (line.starts_with("Confusion matrix")) {
          row = 0;
          std::getline(in, line);  // column header
        } else if (row >= 0 && row < kClasses) {
          if (toks.size() != kClasses + 1 || toks[0] != std::string(1, LabelVocab::letter(row))) {
            throw FormatError("report: malformed confusion row '" + line + "'");
          }
          for (int c = 0; c < kClasses; ++c) m[static_cast<std::size_t>(row)][static_cast<std::size_t>(c)] = parse_count(toks[static_cast<std::size_t>(c) + 1]);
          ++row;
        }
      }
      if (row != kClasses) throw FormatError("report: confusion matrix incomplete");
      break;
    }
    case ReportFormat::kCsv: {
      int row = -1;
      while (std::getline(in, line)) {
        auto f = split(line, ',');
        if (f.empty()) continue;
        if (f[0] == "q8_accuracy") stated_accuracy = parse_double(f.at(1));
        else if (f[0] == "macro_accuracy") { if (f.size() > 1 && !f[1].empty()) macro = parse_double(f[1]); }
        else if (f[0] == "record_count") records = parse_count(f.at(1));
        else if (f[0] == "predicted\\truth") row = 0;
        else if (row >= 0 && row < kClasses) {
          if (f.size() != kClasses + 1) throw FormatError("report: malformed confusion row '" + line + "'");
          for (int c = 0; c < kClasses; ++c) m[static_cast<std::size_t>(row)][static_cast<std::size_t>(c)] = parse_count(f[static_cast<std::size_t>(c) + 1]);
          ++row;
        }
      }
      if (row != kClasses) throw FormatError("report: confusion matrix incomplete");
      break;
    }
    case ReportFormat::kJson: {
      auto j = nlohmann::json::parse(document);
      m = j.at("confusion").get<ConfusionMatrix>();
      stated_accuracy = j.at("q8_accuracy").get<double>();
      if (!j.at("macro_accuracy").is_null()) macro = j.at("macro_accuracy").get<double>();
      records = j.at("record_count").get<std::size_t>();
      break;
    }
  }
  EvalReport r = finish(m, macro, records);
  if (r.q8_accuracy != stated_accuracy) {
    throw FormatError("report: stated accuracy " + fmt_double(stated_accuracy) +
                      " disagrees with its confusion matrix (" + fmt_double(r.q8_accuracy) + ")");
  }
  return r;
}

void save_probs(const std::filesystem::path& path, const ProbTensor& probs) {
  const std::vector<std::int64_t> shape = {static_cast<std::int64_t>(probs.n), probs.max_len, LabelVocab::kSize};
  npy::write(path, shape, probs.values);
}

ProbTensor load_probs(const std::filesystem::path& path) {
  auto arr = npy::read_floats(path);
  if (arr.shape.size() != 3 || arr.shape[2] != LabelVocab::kSize) {
    throw FormatError("load_probs: expected (N, L, 9) in " + path.string());
  }
  ProbTensor p;
  p.n = static_cast<std::size_t>(arr.shape[0]);
  p.max_len = static_cast<int>(arr.shape[1]);
  p.values = std::move(arr.data);
  return p;
}

void write_predictions(const std::filesystem::path& path, const std::vector<PredictionEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& e : entries) out << e.id << '\t' << e.labels << '\n';
}

std::vector<PredictionEntry> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<PredictionEntry> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected '<id>\\t<labels>'");
    }
    out.push_back({line.substr(0, tab), line.substr(tab + 1)});
  }
  return out;
}

LabelTensor align_predictions(const std::vector<PredictionEntry>& entries, const std::vector<ProteinRecord>& gold) {
  std::unordered_map<std::string, const PredictionEntry*> by_id;
  for (const auto& e : entries) {
    if (!by_id.emplace(e.id, &e).second) throw AlignmentError("predictions: duplicate id " + e.id);
  }
  LabelTensor out;
  out.n = gold.size();
  out.max_len = gold.empty() ? kMaxLen : gold.front().max_len;
  out.labels.assign(out.n * static_cast<std::size_t>(out.max_len), LabelVocab::kNoSeq);
  for (std::size_t r = 0; r < gold.size(); ++r) {
    auto it = by_id.find(gold[r].id);
    if (it == by_id.end()) throw AlignmentError("predictions: no entry for record " + gold[r].id);
    const std::string& labels = it->second->labels;
    if (static_cast<int>(labels.size()) != gold[r].length) {
      throw AlignmentError("predictions: record " + gold[r].id + " has " + std::to_string(labels.size()) +
                           " labels, expected " + std::to_string(gold[r].length));
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
      auto idx = LabelVocab::index_of(labels[i]);
      if (!idx) throw FormatError("predictions: record " + gold[r].id + " has unknown label '" + labels[i] + "'");
      out.labels[r * static_cast<std::size_t>(out.max_len) + i] = static_cast<std::uint8_t>(*idx);
    }
    by_id.erase(it);
  }
  if (!by_id.empty()) throw AlignmentError("predictions: entry " + by_id.begin()->first + " matches no gold record");
  return out;
}

}  // namespace ssp
