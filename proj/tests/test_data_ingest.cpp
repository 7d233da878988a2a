#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "ssp/data_ingest.hpp"
#include "ssp/npy.hpp"
#include "support.hpp"

using namespace ssp;
using ssp::testing::random_record;
using ssp::testing::random_records;
using ssp::testing::TempDir;

namespace {

std::vector<ProteinRecord> from_sequences(const std::vector<std::string>& seqs) {
  std::vector<ProteinRecord> out;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    out.push_back(make_record("s" + std::to_string(i), seqs[i], std::string(seqs[i].size(), 'H')));
  }
  return out;
}

// Flattened raw rows for the given records under the default layout.
std::vector<float> raw_rows(const std::vector<ProteinRecord>& records, const RawLayout& layout = {}) {
  std::vector<float> all;
  for (const auto& r : records) {
    auto row = encode_raw_row(r, layout);
    all.insert(all.end(), row.begin(), row.end());
  }
  return all;
}

void expect_integrity_error(const std::vector<float>& row, const std::string& fragment) {
  try {
    parse_raw_row(row, RawLayout{}, "x#4", 4);
    FAIL() << "expected IntegrityError containing '" << fragment << "'";
  } catch (const IntegrityError& e) {
    EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
  }
}

std::size_t col(int pos, int c) { return static_cast<std::size_t>(pos) * 57 + static_cast<std::size_t>(c); }

}  // namespace

TEST(Vocab, ResidueAndLabelAlphabets) {
  EXPECT_EQ(ResidueVocab::kTokens.size(), 22u);
  EXPECT_EQ(ResidueVocab::kTokens[ResidueVocab::kUnknown], "X");
  EXPECT_EQ(ResidueVocab::kTokens[ResidueVocab::kNoSeq], "noSeq");
  EXPECT_EQ(ResidueVocab::kLetters, "ACEDGFIHKMLNQPSRTWVYX");
  EXPECT_EQ(LabelVocab::kTokens.size(), 9u);
  EXPECT_EQ(LabelVocab::kTokens[LabelVocab::kNoSeq], "noSeq");
  EXPECT_EQ(LabelVocab::kLetters, "LBEGIHST");
  EXPECT_EQ(ResidueVocab::index_of('D'), 3);
  EXPECT_FALSE(ResidueVocab::index_of('Z').has_value());
}

TEST(RawLayout, DefaultTilesTheRow) {
  RawLayout layout;
  EXPECT_NO_THROW(layout.validate());
  EXPECT_EQ(layout.row_width, 57);
  EXPECT_EQ(layout.profile_cols.width(), 22);
}

TEST(RawLayout, RejectsBadLayouts) {
  RawLayout overlap;
  overlap.profile_cols = {30, 52};
  overlap.unused_cols = {{52, 57}};
  EXPECT_THROW(overlap.validate(), ConfigError);

  RawLayout narrow;
  narrow.label_cols = {22, 30};
  EXPECT_THROW(narrow.validate(), ConfigError);

  RawLayout gap;
  gap.unused_cols = {};
  EXPECT_THROW(gap.validate(), ConfigError);
}

TEST(RawLayout, JsonRoundTrip) {
  RawLayout layout;
  layout.verify_terminal_flags = true;
  const nlohmann::json j = layout;
  EXPECT_EQ(j.get<RawLayout>(), layout);
}

TEST(Record, MakeRecordSatisfiesInvariants) {
  const auto r = make_record("p", "ACD", "HHE");
  EXPECT_NO_THROW(r.validate());
  EXPECT_EQ(r.length, 3);
  EXPECT_EQ(std::accumulate(r.mask.begin(), r.mask.end(), 0), 3);
  EXPECT_EQ(r.residues[3], ResidueVocab::kNoSeq);
  EXPECT_EQ(r.labels[3], LabelVocab::kNoSeq);
  EXPECT_EQ(r.terminal_flags[0], 1);
  EXPECT_EQ(r.terminal_flags[1], 0);
  EXPECT_EQ(r.terminal_flags[2 * 2 + 1], 1);
  EXPECT_THROW(make_record("p", "ACD", "HH"), ConfigError);
  EXPECT_THROW(make_record("p", "", ""), ConfigError);
  EXPECT_THROW(make_record("p", "AZD", "HHH"), ConfigError);
}

TEST(Record, DecodeSequence) {
  EXPECT_EQ(decode_sequence(make_record("p", "ACD", "LLL")), "ACD");
  EXPECT_EQ(decode_sequence(make_record("p", "AXD", "LLL")), "AXD");
  const std::string full(700, 'W');
  const auto r = make_record("p", full, std::string(700, 'T'));
  EXPECT_EQ(decode_sequence(r).size(), 700u);
  EXPECT_EQ(decode_labels(r), std::string(700, 'T'));
}

TEST(LoadRaw, TwoRecordsBothShapes) {
  TempDir dir;
  const auto records = std::vector<ProteinRecord>{make_record("a", "ACDE", "HHEE"), make_record("b", "WY", "LT")};
  const auto flat = raw_rows(records);
  const std::vector<std::int64_t> shape2 = {2, 700 * 57};
  const std::vector<std::int64_t> shape3 = {2, 700, 57};
  npy::write(dir / "two.npy", shape2, flat);
  npy::write(dir / "three.npy.gz", shape3, flat);

  for (const auto& [file, stem] : {std::pair{"two.npy", "two"}, std::pair{"three.npy.gz", "three"}}) {
    const auto loaded = load_raw(dir / file, RawLayout{});
    ASSERT_EQ(loaded.size(), 2u);
    EXPECT_EQ(loaded[0].id, std::string(stem) + "#0");
    EXPECT_EQ(loaded[1].id, std::string(stem) + "#1");
    EXPECT_EQ(loaded[0].length, 4);
    EXPECT_EQ(loaded[1].length, 2);
    EXPECT_EQ(decode_sequence(loaded[0]), "ACDE");
    EXPECT_EQ(decode_labels(loaded[1]), "LT");
    for (const auto& r : loaded) {
      EXPECT_EQ(std::accumulate(r.mask.begin(), r.mask.end(), 0), r.length);
      EXPECT_NO_THROW(r.validate());
    }
  }
  EXPECT_EQ(load_raw(dir / "two.npy", RawLayout{}, "cb")[1].id, "cb#1");
}

TEST(LoadRaw, MalformedShapeIsFormatError) {
  TempDir dir;
  const std::vector<std::int64_t> shape = {2, 100};
  npy::write(dir / "bad.npy", shape, std::vector<float>(200, 0.0f));
  EXPECT_THROW(load_raw(dir / "bad.npy", RawLayout{}), FormatError);
}

TEST(ParseRawRow, EmptyOneHotNamesRecordAndPosition) {
  auto row = encode_raw_row(make_record("x", "ACDEF", "LLLLL"), RawLayout{});
  row[col(3, *ResidueVocab::index_of('E'))] = 0.0f;
  expect_integrity_error(row, "record 4 (x#4), position 3");
}

TEST(ParseRawRow, TwoActiveEntries) {
  auto row = encode_raw_row(make_record("x", "ACDEF", "LLLLL"), RawLayout{});
  row[col(1, 7)] = 1.0f;
  expect_integrity_error(row, "position 1");
}

TEST(ParseRawRow, NonBinaryOneHot) {
  auto row = encode_raw_row(make_record("x", "ACDEF", "LLLLL"), RawLayout{});
  row[col(2, 2)] = 0.5f;
  expect_integrity_error(row, "position 2");
}

TEST(ParseRawRow, LabelPaddingMismatch) {
  auto row = encode_raw_row(make_record("x", "ACDEF", "LLLLL"), RawLayout{});
  // Real label at a padded residue position.
  row[col(6, 22 + LabelVocab::kNoSeq)] = 0.0f;
  row[col(6, 22)] = 1.0f;
  expect_integrity_error(row, "position 6");
}

TEST(ParseRawRow, PaddingMustBeSuffix) {
  auto row = encode_raw_row(make_record("x", "ACDEF", "LLLLL"), RawLayout{});
  row[col(2, 2)] = 0.0f;
  row[col(2, ResidueVocab::kNoSeq)] = 1.0f;
  row[col(2, 22)] = 0.0f;
  row[col(2, 22 + LabelVocab::kNoSeq)] = 1.0f;
  expect_integrity_error(row, "position 2");
}

TEST(ParseRawRow, AllPaddingIsEmptySequence) {
  std::vector<float> row(700 * 57, 0.0f);
  for (int p = 0; p < 700; ++p) {
    row[col(p, ResidueVocab::kNoSeq)] = 1.0f;
    row[col(p, 22 + LabelVocab::kNoSeq)] = 1.0f;
  }
  expect_integrity_error(row, "empty sequence");
}

TEST(ParseRawRow, TerminalFlagsDerivedAndOptionallyVerified) {
  auto row = encode_raw_row(make_record("x", "ACDEF", "LLLLL"), RawLayout{});
  row[col(2, 31)] = 1.0f;  // stray first-position flag
  EXPECT_NO_THROW(parse_raw_row(row, RawLayout{}, "x", 0));
  RawLayout strict;
  strict.verify_terminal_flags = true;
  EXPECT_THROW(parse_raw_row(row, strict, "x", 0), IntegrityError);
}

TEST(LoadRaw, FuzzRoundTrip) {
  std::mt19937_64 rng(11);
  TempDir dir;
  const auto records = random_records(rng, 60, 1, 700);
  for (const auto& r : records) {
    const auto back = parse_raw_row(encode_raw_row(r, RawLayout{}), RawLayout{}, r.id, 0);
    ASSERT_EQ(back, r);
  }
  save_raw(dir / "fuzz.npy.gz", records, RawLayout{});
  auto loaded = load_raw(dir / "fuzz.npy.gz", RawLayout{});
  ASSERT_EQ(loaded.size(), records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    loaded[i].id = records[i].id;
    EXPECT_EQ(loaded[i], records[i]);
    for (int p = loaded[i].length; p < kMaxLen; ++p) {
      ASSERT_EQ(loaded[i].residues[static_cast<std::size_t>(p)], ResidueVocab::kNoSeq);
    }
  }
}

TEST(LoadRaw, CustomLayout) {
  RawLayout layout;
  layout.profile_cols = {0, 22};
  layout.residue_onehot_cols = {22, 44};
  layout.label_cols = {44, 53};
  layout.terminal_flag_cols = {53, 55};
  layout.unused_cols = {{55, 57}};
  std::mt19937_64 rng(5);
  const auto r = random_record(rng, "c", 3, 50);
  EXPECT_EQ(parse_raw_row(encode_raw_row(r, layout), layout, "c", 0), r);
}

TEST(Duplicates, Examples) {
  const auto groups = find_duplicates(from_sequences({"ACD", "WWW", "ACD"}));
  ASSERT_EQ(groups.size(), 1u);
  EXPECT_EQ(groups[0], (DuplicateGroup{0, 2}));
  EXPECT_TRUE(find_duplicates(from_sequences({"A", "C", "D", "AC"})).empty());
}

TEST(Duplicates, PlantedPairs) {
  std::mt19937_64 rng(3);
  auto records = random_records(rng, 30, 20, 80);
  records[17] = records[4];
  records[25] = records[9];
  const auto groups = find_duplicates(records);
  ASSERT_EQ(groups.size(), 2u);
  EXPECT_EQ(groups[0], (DuplicateGroup{4, 17}));
  EXPECT_EQ(groups[1], (DuplicateGroup{9, 25}));
}

TEST(Duplicates, LabelsDoNotMatter) {
  auto records = from_sequences({"ACD", "ACD"});
  records[1] = make_record("t", "ACD", "EEE");
  EXPECT_EQ(find_duplicates(records).size(), 1u);
}

TEST(Duplicates, PermutationEquivariant) {
  std::mt19937_64 rng(21);
  std::vector<std::string> pool = {"ACDE", "WY", "KKLM", "ACDE", "WY", "ACDE", "PQ"};
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::size_t> perm(pool.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::string> shuffled;
    for (auto p : perm) shuffled.push_back(pool[p]);

    auto as_sets = [](const std::vector<DuplicateGroup>& gs, const std::vector<std::size_t>& map) {
      std::set<std::set<std::size_t>> out;
      for (const auto& g : gs) {
        std::set<std::size_t> s;
        for (auto i : g) s.insert(map[i]);
        out.insert(s);
      }
      return out;
    };
    std::vector<std::size_t> identity(pool.size());
    std::iota(identity.begin(), identity.end(), 0);
    EXPECT_EQ(as_sets(find_duplicates(from_sequences(shuffled)), perm),
              as_sets(find_duplicates(from_sequences(pool)), identity));
  }
}

TEST(Split, CleanSplitHasNoLeakage) {
  const auto records = from_sequences({"AA", "CC", "DD", "EE"});
  EXPECT_TRUE(check_disjoint(records, SplitSpec::contiguous(2, 1, 1)).clean());
}

TEST(Split, TestRecordDuplicatedInTrain) {
  const auto records = from_sequences({"AA", "CC", "DD", "EE", "CC"});
  const auto report = check_disjoint(records, SplitSpec::contiguous(3, 1, 1));
  ASSERT_EQ(report.pairs.size(), 1u);
  EXPECT_EQ(report.pairs[0].split_a, SplitName::kTrain);
  EXPECT_EQ(report.pairs[0].index_a, 1u);
  EXPECT_EQ(report.pairs[0].split_b, SplitName::kTest);
  EXPECT_EQ(report.pairs[0].index_b, 4u);
}

TEST(Split, OverlappingSpecIsSpecErrorBeforeComparison) {
  const auto records = from_sequences({"AA", "CC", "DD"});
  SplitSpec spec{{0, 1}, {1}, {2}};
  EXPECT_THROW(check_disjoint(records, spec), SpecError);
  SplitSpec out_of_range{{0, 5}, {}, {}};
  EXPECT_THROW(check_disjoint(records, out_of_range), SpecError);
}

TEST(Split, SelfHealingFixpoint) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    auto records = random_records(rng, 40, 5, 30);
    std::uniform_int_distribution<std::size_t> train_idx(0, 29), other_idx(30, 39);
    for (int k = 0; k < 6; ++k) records[other_idx(rng)] = records[train_idx(rng)];
    SplitSpec spec = SplitSpec::contiguous(30, 5, 5);
    const auto report = check_disjoint(records, spec);
    std::set<std::size_t> offending;
    for (const auto& p : report.pairs) {
      if (p.split_a == SplitName::kTrain) offending.insert(p.index_a);
      if (p.split_b == SplitName::kTrain) offending.insert(p.index_b);
    }
    std::erase_if(spec.train, [&](std::size_t i) { return offending.contains(i); });
    const auto healed = check_disjoint(records, spec);
    // Validation and test may still share sequences with each other; train is clean.
    for (const auto& p : healed.pairs) {
      EXPECT_NE(p.split_a, SplitName::kTrain);
      EXPECT_NE(p.split_b, SplitName::kTrain);
    }
  }
}

TEST(Split, ApplySplitSizes) {
  std::mt19937_64 rng(2);
  const auto records = random_records(rng, 10, 10, 20);
  SplitSpec spec{{0, 1, 2, 3, 4, 5}, {6, 7}, {8, 9}};
  const auto parts = apply_split(records, spec);
  EXPECT_EQ(parts.train.size(), 6u);
  EXPECT_EQ(parts.validation.size(), 2u);
  EXPECT_EQ(parts.test.size(), 2u);
  EXPECT_EQ(parts.validation[1], records[7]);
  EXPECT_TRUE(parts.warnings.empty());
}

TEST(Split, LeakyApplySplitRefusedOrWarned) {
  const auto records = from_sequences({"AA", "CC", "AA", "DD"});
  SplitSpec spec{{0, 1}, {2}, {3}};
  try {
    apply_split(records, spec);
    FAIL() << "expected LeakageError";
  } catch (const LeakageError& e) {
    ASSERT_EQ(e.report().pairs.size(), 1u);
    EXPECT_EQ(e.report().pairs[0].index_a, 0u);
    EXPECT_EQ(e.report().pairs[0].index_b, 2u);
  }
  const auto parts = apply_split(records, spec, /*allow_leakage=*/true);
  EXPECT_EQ(parts.train.size(), 2u);
  EXPECT_FALSE(parts.warnings.empty());
}

TEST(Split, LeakageTsvHasOneRowPerPair) {
  const auto records = from_sequences({"AA", "CC", "AA", "CC"});
  const auto report = check_disjoint(records, SplitSpec::contiguous(2, 0, 2));
  std::ostringstream tsv;
  write_leakage_tsv(tsv, report, records);
  std::istringstream in(tsv.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "split_a\tindex_a\tid_a\tsplit_b\tindex_b\tid_b\tsequence_hash");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 2);
}

TEST(Split, SpecJsonRoundTrip) {
  SplitSpec spec{{0, 3}, {1}, {2}};
  const nlohmann::json j = spec;
  const auto back = j.get<SplitSpec>();
  EXPECT_EQ(back.train, spec.train);
  EXPECT_EQ(back.validation, spec.validation);
  EXPECT_EQ(back.test, spec.test);
}
