#include "ssp/data_ingest.hpp"

#include <algorithm>
#include <map>
#include <ostream>
#include <sstream>
#include <tuple>
#include <unordered_map>

#include "ssp/hashing.hpp"
#include "ssp/npy.hpp"

namespace ssp {
namespace {

std::string where(const std::string& id, std::size_t record_index, int pos) {
  return "record " + std::to_string(record_index) + " (" + id + "), position " + std::to_string(pos);
}

// Returns the single active column of a one-hot block or throws.
int onehot_index(std::span<const float> row, ColumnRange cols, const char* what, const std::string& id,
                 std::size_t record_index, int pos) {
  int active = -1;
  int count = 0;
  for (int c = cols.begin; c < cols.end; ++c) {
    float v = row[static_cast<std::size_t>(c)];
    if (v == 0.0f) continue;
    if (v != 1.0f) {
      throw IntegrityError(where(id, record_index, pos) + ": " + what + " one-hot has non-binary value " +
                           std::to_string(v));
    }
    active = c - cols.begin;
    ++count;
  }
  if (count != 1) {
    throw IntegrityError(where(id, record_index, pos) + ": " + what + " one-hot has " + std::to_string(count) +
                         " active entries");
  }
  return active;
}

void derive_terminal_flags(ProteinRecord& r) {
  std::fill(r.terminal_flags.begin(), r.terminal_flags.end(), 0);
  if (r.length > 0) {
    r.terminal_flags[0] = 1;
    r.terminal_flags[static_cast<std::size_t>(r.length - 1) * 2 + 1] = 1;
  }
}

void check_width(const ColumnRange& r, int width, const char* name) {
  if (r.width() != width) {
    throw ConfigError(std::string("layout: ") + name + " must span " + std::to_string(width) + " columns");
  }
}

}  // namespace

void RawLayout::validate() const {
  check_width(residue_onehot_cols, ResidueVocab::kSize, "residue_onehot_cols");
  check_width(label_cols, LabelVocab::kSize, "label_cols");
  check_width(terminal_flag_cols, 2, "terminal_flag_cols");
  check_width(profile_cols, ResidueVocab::kSize, "profile_cols");
  if (max_len <= 0) throw ConfigError("layout: max_len must be positive");
  std::vector<int> owner(static_cast<std::size_t>(std::max(row_width, 0)), 0);
  std::vector<ColumnRange> all = {residue_onehot_cols, label_cols, terminal_flag_cols, profile_cols};
  all.insert(all.end(), unused_cols.begin(), unused_cols.end());
  for (const auto& r : all) {
    if (r.begin < 0 || r.end > row_width || r.begin >= r.end) {
      throw ConfigError("layout: column range [" + std::to_string(r.begin) + ", " + std::to_string(r.end) +
                        ") is outside the row");
    }
    for (int c = r.begin; c < r.end; ++c) {
      if (owner[static_cast<std::size_t>(c)]++ != 0) {
        throw ConfigError("layout: column " + std::to_string(c) + " belongs to two ranges");
      }
    }
  }
  for (std::size_t c = 0; c < owner.size(); ++c) {
    if (owner[c] == 0) throw ConfigError("layout: column " + std::to_string(c) + " is not covered");
  }
}

void to_json(nlohmann::json& j, const ColumnRange& r) { j = nlohmann::json::array({r.begin, r.end}); }

void from_json(const nlohmann::json& j, ColumnRange& r) {
  r.begin = j.at(0).get<int>();
  r.end = j.at(1).get<int>();
}

void to_json(nlohmann::json& j, const RawLayout& l) {
  j = {{"residue_onehot_cols", l.residue_onehot_cols},
       {"label_cols", l.label_cols},
       {"terminal_flag_cols", l.terminal_flag_cols},
       {"profile_cols", l.profile_cols},
       {"unused_cols", l.unused_cols},
       {"row_width", l.row_width},
       {"max_len", l.max_len},
       {"verify_terminal_flags", l.verify_terminal_flags}};
}

void from_json(const nlohmann::json& j, RawLayout& l) {
  RawLayout d;
  l.residue_onehot_cols = j.value("residue_onehot_cols", d.residue_onehot_cols);
  l.label_cols = j.value("label_cols", d.label_cols);
  l.terminal_flag_cols = j.value("terminal_flag_cols", d.terminal_flag_cols);
  l.profile_cols = j.value("profile_cols", d.profile_cols);
  l.unused_cols = j.value("unused_cols", d.unused_cols);
  l.row_width = j.value("row_width", d.row_width);
  l.max_len = j.value("max_len", d.max_len);
  l.verify_terminal_flags = j.value("verify_terminal_flags", d.verify_terminal_flags);
}

void ProteinRecord::validate() const {
  const auto n = static_cast<std::size_t>(max_len);
  if (residues.size() != n || labels.size() != n || mask.size() != n || terminal_flags.size() != 2 * n ||
      profile.size() != n * ResidueVocab::kSize) {
    throw IntegrityError("record " + id + ": field sizes do not match max_len");
  }
  if (length < 1 || length > max_len) {
    throw IntegrityError("record " + id + ": length " + std::to_string(length) + " outside [1, max_len]");
  }
  for (int i = 0; i < max_len; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const bool real = i < length;
    if (mask[k] != (real ? 1 : 0) || (residues[k] != ResidueVocab::kNoSeq) != real ||
        (labels[k] != LabelVocab::kNoSeq) != real) {
      throw IntegrityError("record " + id + ", position " + std::to_string(i) + ": mask/residue/label mismatch");
    }
    if (residues[k] >= ResidueVocab::kSize || labels[k] >= LabelVocab::kSize) {
      throw IntegrityError("record " + id + ", position " + std::to_string(i) + ": token out of range");
    }
    if (terminal_flags[2 * k] != (i == 0 ? 1 : 0) || terminal_flags[2 * k + 1] != (i == length - 1 ? 1 : 0)) {
      throw IntegrityError("record " + id + ", position " + std::to_string(i) + ": bad terminal flags");
    }
  }
}

ProteinRecord make_record(std::string id, std::string_view sequence, std::string_view labels,
                          std::vector<float> profile, int max_len) {
  if (sequence.size() != labels.size()) throw ConfigError("make_record: sequence and labels differ in length");
  if (sequence.empty() || static_cast<int>(sequence.size()) > max_len) {
    throw ConfigError("make_record: length must lie in [1, max_len]");
  }
  ProteinRecord r;
  r.id = std::move(id);
  r.max_len = max_len;
  r.length = static_cast<int>(sequence.size());
  const auto n = static_cast<std::size_t>(max_len);
  r.residues.assign(n, ResidueVocab::kNoSeq);
  r.labels.assign(n, LabelVocab::kNoSeq);
  r.mask.assign(n, 0);
  r.terminal_flags.assign(2 * n, 0);
  if (profile.empty()) profile.assign(n * ResidueVocab::kSize, 0.0f);
  if (profile.size() != n * ResidueVocab::kSize) throw ConfigError("make_record: profile must be max_len x 22");
  r.profile = std::move(profile);
  for (std::size_t i = 0; i < sequence.size(); ++i) {
    auto res = ResidueVocab::index_of(sequence[i]);
    auto lab = LabelVocab::index_of(labels[i]);
    if (!res) throw ConfigError(std::string("make_record: unknown residue '") + sequence[i] + "'");
    if (!lab) throw ConfigError(std::string("make_record: unknown label '") + labels[i] + "'");
    r.residues[i] = static_cast<std::uint8_t>(*res);
    r.labels[i] = static_cast<std::uint8_t>(*lab);
    r.mask[i] = 1;
  }
  derive_terminal_flags(r);
  return r;
}

ProteinRecord parse_raw_row(std::span<const float> row, const RawLayout& layout, std::string id,
                            std::size_t record_index) {
  const auto n = static_cast<std::size_t>(layout.max_len);
  const auto width = static_cast<std::size_t>(layout.row_width);
  if (row.size() != n * width) throw FormatError("record " + id + ": row has wrong number of values");

  ProteinRecord r;
  r.id = std::move(id);
  r.max_len = layout.max_len;
  r.residues.resize(n);
  r.labels.resize(n);
  r.mask.resize(n);
  r.terminal_flags.assign(2 * n, 0);
  r.profile.resize(n * ResidueVocab::kSize);

  for (int pos = 0; pos < layout.max_len; ++pos) {
    auto cells = row.subspan(static_cast<std::size_t>(pos) * width, width);
    r.residues[static_cast<std::size_t>(pos)] =
        static_cast<std::uint8_t>(onehot_index(cells, layout.residue_onehot_cols, "residue", r.id, record_index, pos));
    r.labels[static_cast<std::size_t>(pos)] =
        static_cast<std::uint8_t>(onehot_index(cells, layout.label_cols, "label", r.id, record_index, pos));
    for (int c = 0; c < ResidueVocab::kSize; ++c) {
      r.profile[static_cast<std::size_t>(pos) * ResidueVocab::kSize + static_cast<std::size_t>(c)] =
          cells[static_cast<std::size_t>(layout.profile_cols.begin + c)];
    }
  }

  r.length = static_cast<int>(std::count_if(r.residues.begin(), r.residues.end(),
                                            [](std::uint8_t t) { return t != ResidueVocab::kNoSeq; }));
  if (r.length == 0) throw IntegrityError("record " + std::to_string(record_index) + " (" + r.id + "): empty sequence");
  for (int pos = 0; pos < layout.max_len; ++pos) {
    const auto k = static_cast<std::size_t>(pos);
    const bool real = pos < r.length;
    if ((r.residues[k] != ResidueVocab::kNoSeq) != real) {
      throw IntegrityError(where(r.id, record_index, pos) + ": padding is not a contiguous suffix");
    }
    if ((r.labels[k] != LabelVocab::kNoSeq) != real) {
      throw IntegrityError(where(r.id, record_index, pos) + ": label padding disagrees with residue padding");
    }
    r.mask[k] = real ? 1 : 0;
  }
  derive_terminal_flags(r);

  if (layout.verify_terminal_flags) {
    for (int pos = 0; pos < layout.max_len; ++pos) {
      auto cells = row.subspan(static_cast<std::size_t>(pos) * width, width);
      for (int f = 0; f < 2; ++f) {
        float stored = cells[static_cast<std::size_t>(layout.terminal_flag_cols.begin + f)];
        if (stored != static_cast<float>(r.terminal_flags[static_cast<std::size_t>(pos) * 2 + f])) {
          throw IntegrityError(where(r.id, record_index, pos) + ": stored terminal flag disagrees with length");
        }
      }
    }
  }
  return r;
}

std::vector<float> encode_raw_row(const ProteinRecord& r, const RawLayout& layout) {
  if (r.max_len != layout.max_len) throw ConfigError("encode_raw_row: record max_len differs from layout");
  const auto width = static_cast<std::size_t>(layout.row_width);
  std::vector<float> row(static_cast<std::size_t>(layout.max_len) * width, 0.0f);
  for (int pos = 0; pos < layout.max_len; ++pos) {
    const auto k = static_cast<std::size_t>(pos);
    float* cells = row.data() + k * width;
    cells[layout.residue_onehot_cols.begin + r.residues[k]] = 1.0f;
    cells[layout.label_cols.begin + r.labels[k]] = 1.0f;
    cells[layout.terminal_flag_cols.begin] = r.terminal_flags[2 * k];
    cells[layout.terminal_flag_cols.begin + 1] = r.terminal_flags[2 * k + 1];
    for (int c = 0; c < ResidueVocab::kSize; ++c) {
      cells[layout.profile_cols.begin + c] = r.profile[k * ResidueVocab::kSize + static_cast<std::size_t>(c)];
    }
  }
  return row;
}

std::vector<ProteinRecord> load_raw(const std::filesystem::path& path, const RawLayout& layout,
                                    std::string dataset_name) {
  layout.validate();
  if (dataset_name.empty()) {
    dataset_name = path.filename().string();
    for (const char* ext : {".gz", ".npy"}) {
      if (dataset_name.ends_with(ext)) dataset_name.resize(dataset_name.size() - std::string_view(ext).size());
    }
  }
  npy::Reader reader(path);
  const auto& shape = reader.header().shape;
  const std::int64_t per_record = static_cast<std::int64_t>(layout.max_len) * layout.row_width;
  const bool flat = shape.size() == 2 && shape[1] == per_record;
  const bool cube = shape.size() == 3 && shape[1] == layout.max_len && shape[2] == layout.row_width;
  if (!flat && !cube) {
    std::string dims;
    for (auto d : shape) dims += std::to_string(d) + " ";
    throw FormatError("load_raw: " + path.string() + " has shape ( " + dims + ") but the layout expects (N, " +
                      std::to_string(per_record) + ") or (N, " + std::to_string(layout.max_len) + ", " +
                      std::to_string(layout.row_width) + ")");
  }
  std::vector<ProteinRecord> records;
  records.reserve(static_cast<std::size_t>(reader.rows()));
  std::vector<float> row(static_cast<std::size_t>(per_record));
  for (std::int64_t i = 0; i < reader.rows(); ++i) {
    reader.read_row(row);
    records.push_back(parse_raw_row(row, layout, dataset_name + "#" + std::to_string(i), static_cast<std::size_t>(i)));
  }
  return records;
}

void save_raw(const std::filesystem::path& path, const std::vector<ProteinRecord>& records, const RawLayout& layout) {
  layout.validate();
  const std::size_t per_record = static_cast<std::size_t>(layout.max_len) * static_cast<std::size_t>(layout.row_width);
  std::vector<float> data;
  data.reserve(records.size() * per_record);
  for (const auto& r : records) {
    auto row = encode_raw_row(r, layout);
    data.insert(data.end(), row.begin(), row.end());
  }
  std::vector<std::int64_t> shape = {static_cast<std::int64_t>(records.size()), static_cast<std::int64_t>(per_record)};
  npy::write(path, shape, data);
}

std::string decode_sequence(const ProteinRecord& record) {
  std::string out(static_cast<std::size_t>(record.length), '?');
  for (int i = 0; i < record.length; ++i) {
    out[static_cast<std::size_t>(i)] = ResidueVocab::letter(record.residues[static_cast<std::size_t>(i)]);
  }
  return out;
}

std::string decode_labels(const ProteinRecord& record) {
  std::string out(static_cast<std::size_t>(record.length), '?');
  for (int i = 0; i < record.length; ++i) {
    out[static_cast<std::size_t>(i)] = LabelVocab::letter(record.labels[static_cast<std::size_t>(i)]);
  }
  return out;
}

std::vector<DuplicateGroup> find_duplicates(const std::vector<ProteinRecord>& records) {
  std::unordered_map<std::string, DuplicateGroup> by_sequence;
  for (std::size_t i = 0; i < records.size(); ++i) by_sequence[decode_sequence(records[i])].push_back(i);
  std::vector<DuplicateGroup> groups;
  for (auto& [seq, group] : by_sequence) {
    if (group.size() > 1) groups.push_back(std::move(group));
  }
  std::sort(groups.begin(), groups.end(), [](const auto& a, const auto& b) { return a.front() < b.front(); });
  return groups;
}

std::string_view to_string(SplitName split) {
  switch (split) {
    case SplitName::kTrain: return "train";
    case SplitName::kValidation: return "validation";
    case SplitName::kTest: return "test";
  }
  return "?";
}

void SplitSpec::validate(std::size_t record_count) const {
  std::map<std::size_t, SplitName> owner;
  auto claim = [&](const std::vector<std::size_t>& set, SplitName name) {
    for (auto idx : set) {
      if (idx >= record_count) {
        throw SpecError("split " + std::string(to_string(name)) + ": index " + std::to_string(idx) +
                        " is out of range (" + std::to_string(record_count) + " records)");
      }
      auto [it, inserted] = owner.emplace(idx, name);
      if (!inserted) {
        throw SpecError("index " + std::to_string(idx) + " appears in " + std::string(to_string(it->second)) +
                        (it->second == name ? " twice" : " and " + std::string(to_string(name))));
      }
    }
  };
  claim(train, SplitName::kTrain);
  claim(validation, SplitName::kValidation);
  claim(test, SplitName::kTest);
}

SplitSpec SplitSpec::contiguous(std::size_t n_train, std::size_t n_validation, std::size_t n_test) {
  SplitSpec s;
  std::size_t next = 0;
  for (std::size_t i = 0; i < n_train; ++i) s.train.push_back(next++);
  for (std::size_t i = 0; i < n_validation; ++i) s.validation.push_back(next++);
  for (std::size_t i = 0; i < n_test; ++i) s.test.push_back(next++);
  return s;
}

void to_json(nlohmann::json& j, const SplitSpec& s) {
  j = {{"train", s.train}, {"validation", s.validation}, {"test", s.test}};
}

void from_json(const nlohmann::json& j, SplitSpec& s) {
  s.train = j.value("train", std::vector<std::size_t>{});
  s.validation = j.value("validation", std::vector<std::size_t>{});
  s.test = j.value("test", std::vector<std::size_t>{});
}

LeakageReport check_disjoint(const std::vector<ProteinRecord>& records, const SplitSpec& spec) {
  spec.validate(records.size());

  struct Member {
    SplitName split;
    std::size_t index;
  };
  std::unordered_map<std::string, std::vector<Member>> by_sequence;
  auto add = [&](const std::vector<std::size_t>& set, SplitName name) {
    for (auto idx : set) by_sequence[decode_sequence(records[idx])].push_back({name, idx});
  };
  add(spec.train, SplitName::kTrain);
  add(spec.validation, SplitName::kValidation);
  add(spec.test, SplitName::kTest);

  LeakageReport report;
  for (const auto& [seq, members] : by_sequence) {
    if (members.size() < 2) continue;
    const std::string hash = short_hash(seq);
    for (std::size_t a = 0; a < members.size(); ++a) {
      for (std::size_t b = a + 1; b < members.size(); ++b) {
        if (members[a].split == members[b].split) continue;
        report.pairs.push_back({members[a].split, members[a].index, members[b].split, members[b].index, hash});
      }
    }
  }
  std::sort(report.pairs.begin(), report.pairs.end(), [](const LeakagePair& x, const LeakagePair& y) {
    return std::tie(x.split_a, x.index_a, x.split_b, x.index_b) < std::tie(y.split_a, y.index_a, y.split_b, y.index_b);
  });
  return report;
}

void write_leakage_text(std::ostream& out, const LeakageReport& report, const std::vector<ProteinRecord>& records) {
  if (report.clean()) {
    out << "no leakage: splits are disjoint by sequence\n";
    return;
  }
  out << report.pairs.size() << " leaking pair(s)\n";
  for (const auto& p : report.pairs) {
    out << to_string(p.split_a) << "[" << p.index_a << "] " << records[p.index_a].id << " == "
        << to_string(p.split_b) << "[" << p.index_b << "] " << records[p.index_b].id << "  sha256:" << p.sequence_hash
        << "\n";
  }
}

void write_leakage_tsv(std::ostream& out, const LeakageReport& report, const std::vector<ProteinRecord>& records) {
  out << "split_a\tindex_a\tid_a\tsplit_b\tindex_b\tid_b\tsequence_hash\n";
  for (const auto& p : report.pairs) {
    out << to_string(p.split_a) << '\t' << p.index_a << '\t' << records[p.index_a].id << '\t' << to_string(p.split_b)
        << '\t' << p.index_b << '\t' << records[p.index_b].id << '\t' << p.sequence_hash << '\n';
  }
}

LeakageError::LeakageError(LeakageReport report)
    : std::runtime_error("split leakage: " + std::to_string(report.pairs.size()) +
                         " cross-split pair(s) share identical sequences"),
      report_(std::move(report)) {}

SplitData apply_split(const std::vector<ProteinRecord>& records, const SplitSpec& spec, bool allow_leakage) {
  LeakageReport report = check_disjoint(records, spec);
  SplitData out;
  if (!report.clean()) {
    if (!allow_leakage) throw LeakageError(std::move(report));
    std::ostringstream msg;
    msg << "proceeding despite leakage: ";
    write_leakage_text(msg, report, records);
    out.warnings.push_back(msg.str());
  }
  for (auto i : spec.train) out.train.push_back(records[i]);
  for (auto i : spec.validation) out.validation.push_back(records[i]);
  for (auto i : spec.test) out.test.push_back(records[i]);
  return out;
}

}  // namespace ssp
