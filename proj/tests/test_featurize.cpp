#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ssp/featurize.hpp"
#include "support.hpp"

using namespace ssp;
using ssp::testing::random_records;
using ssp::testing::TempDir;

namespace {

int residue(char c) { return *ResidueVocab::index_of(c); }

// Direct evaluation of the normalised exponential window at one position.
std::array<double, 22> brute_window(const ProteinRecord& r, int pos, double decay, bool before) {
  std::array<double, 22> acc{};
  double total = 0.0;
  for (int j = 0; j < r.length; ++j) {
    const int k = before ? pos - j : j - pos;
    if (k < 1) continue;
    const double w = std::pow(decay, k);
    acc[r.residues[static_cast<std::size_t>(j)]] += w;
    total += w;
  }
  if (total > 0.0) {
    for (auto& v : acc) v /= total;
  }
  return acc;
}

}  // namespace

TEST(Features, SingleShortRecord) {
  const auto f = encode_features({make_record("p", "ACD", "HHH")});
  ASSERT_EQ(f.n, 1u);
  EXPECT_EQ(f.values.size(), 700u * 46u);
  int mask_sum = 0;
  int real_onehots = 0;
  for (int p = 0; p < 700; ++p) {
    mask_sum += f.mask[static_cast<std::size_t>(p)];
    float row_sum = 0.0f;
    for (int c = 0; c < 22; ++c) row_sum += f.at(0, p, c);
    EXPECT_EQ(row_sum, 1.0f);
    if (f.at(0, p, ResidueVocab::kNoSeq) == 0.0f) ++real_onehots;
  }
  EXPECT_EQ(mask_sum, 3);
  EXPECT_EQ(real_onehots, 3);
}

TEST(Features, TerminalFlagColumns) {
  const auto f = encode_features({make_record("p", "ACDEFG", "HHHHHH")});
  for (int p = 0; p < 700; ++p) {
    EXPECT_EQ(f.at(0, p, kFlagOffset), p == 0 ? 1.0f : 0.0f) << p;
    EXPECT_EQ(f.at(0, p, kFlagOffset + 1), p == 5 ? 1.0f : 0.0f) << p;
  }
}

TEST(Features, ProfileCopiedVerbatimUnlessSquashed) {
  std::mt19937_64 rng(4);
  const auto records = random_records(rng, 3, 5, 40);
  const auto plain = encode_features(records);
  FeatureOptions squash;
  squash.squash_profile = true;
  const auto squashed = encode_features(records, squash);
  for (std::size_t i = 0; i < records.size(); ++i) {
    for (int p = 0; p < records[i].length; ++p) {
      for (int c = 0; c < 22; ++c) {
        const float v = records[i].profile_at(p, c);
        EXPECT_EQ(plain.at(i, p, kProfileOffset + c), v);
        EXPECT_FLOAT_EQ(squashed.at(i, p, kProfileOffset + c), 1.0f / (1.0f + std::exp(-v)));
      }
    }
  }
}

TEST(Features, OneHotColumnsInvertDecodeSequence) {
  std::mt19937_64 rng(9);
  const auto records = random_records(rng, 40, 1, 700);
  const auto f = encode_features(records);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const std::string seq = decode_sequence(records[i]);
    std::string rebuilt;
    for (int p = 0; p < 700; ++p) {
      int hot = -1;
      for (int c = 0; c < 22; ++c) {
        if (f.at(i, p, c) == 1.0f) hot = c;
      }
      ASSERT_GE(hot, 0);
      if (hot != ResidueVocab::kNoSeq) rebuilt += ResidueVocab::letter(hot);
    }
    EXPECT_EQ(rebuilt, seq);
  }
}

TEST(Bigrams, HandComputedPair) {
  const auto b = make_bigrams({make_record("p", "AC", "HH")});
  EXPECT_EQ(b.at(0, 0), 1);
  EXPECT_EQ(b.at(0, 1), 43);
  EXPECT_EQ(b.at(0, 2), kBigramPad);
  EXPECT_EQ(kBigramPad, 483);
  EXPECT_EQ(kBigramVocab, 484);
}

TEST(Bigrams, BijectionAndRange) {
  std::mt19937_64 rng(12);
  const auto records = random_records(rng, 40, 1, 700);
  const auto b = make_bigrams(records);
  for (std::size_t i = 0; i < records.size(); ++i) {
    for (int p = 0; p < 700; ++p) {
      const int t = b.at(i, p);
      ASSERT_GE(t, 0);
      ASSERT_LT(t, kBigramVocab);
      const int here = records[i].residues[static_cast<std::size_t>(p)];
      const int next = p + 1 < records[i].length ? records[i].residues[static_cast<std::size_t>(p + 1)]
                                                 : ResidueVocab::kNoSeq;
      ASSERT_EQ(t / 22, here);
      ASSERT_EQ(t % 22, next);
      ASSERT_EQ(t == kBigramPad, p >= records[i].length);
    }
  }
}

TEST(WindowMix, Examples) {
  const auto empty_context = window_mix({make_record("p", "ACD", "HHH")});
  for (int c = 0; c < 22; ++c) EXPECT_EQ(empty_context.preceding_at(0, 0, c), 0.0f);

  const auto uniform = window_mix({make_record("p", "AAA", "HHH")}, 1.0);
  EXPECT_FLOAT_EQ(uniform.preceding_at(0, 2, residue('A')), 1.0f);

  const auto ac = window_mix({make_record("p", "AC", "HH")}, 0.5);
  for (int c = 0; c < 22; ++c) {
    EXPECT_FLOAT_EQ(ac.preceding_at(0, 1, c), c == residue('A') ? 1.0f : 0.0f);
    EXPECT_EQ(ac.following_at(0, 1, c), 0.0f);
  }
}

TEST(WindowMix, RejectsDecayOutsideUnitInterval) {
  const std::vector<ProteinRecord> r = {make_record("p", "AC", "HH")};
  EXPECT_THROW(window_mix(r, 0.0), ConfigError);
  EXPECT_THROW(window_mix(r, 1.5), ConfigError);
  EXPECT_THROW(window_mix(r, -0.2), ConfigError);
  EXPECT_NO_THROW(window_mix(r, 1.0));
}

TEST(WindowMix, MatchesDirectSumAndIsConvex) {
  std::mt19937_64 rng(31);
  const auto records = random_records(rng, 6, 1, 120);
  for (double decay : {0.3, 0.5, 0.9, 1.0}) {
    const auto w = window_mix(records, decay);
    for (std::size_t i = 0; i < records.size(); ++i) {
      for (int p = 0; p < 700; ++p) {
        float pre_sum = 0.0f, post_sum = 0.0f;
        const bool real = p < records[i].length;
        const auto pre = real ? brute_window(records[i], p, decay, true) : std::array<double, 22>{};
        const auto post = real ? brute_window(records[i], p, decay, false) : std::array<double, 22>{};
        for (int c = 0; c < 22; ++c) {
          ASSERT_GE(w.preceding_at(i, p, c), 0.0f);
          ASSERT_NEAR(w.preceding_at(i, p, c), pre[static_cast<std::size_t>(c)], 1e-5);
          ASSERT_NEAR(w.following_at(i, p, c), post[static_cast<std::size_t>(c)], 1e-5);
          pre_sum += w.preceding_at(i, p, c);
          post_sum += w.following_at(i, p, c);
        }
        const bool has_before = real && p > 0;
        const bool has_after = real && p + 1 < records[i].length;
        EXPECT_NEAR(pre_sum, has_before ? 1.0f : 0.0f, 1e-5);
        EXPECT_NEAR(post_sum, has_after ? 1.0f : 0.0f, 1e-5);
      }
    }
  }
}

TEST(WindowMix, Causality) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    auto records = random_records(rng, 1, 8, 60);
    const auto base = window_mix(records);
    const int len = records[0].length;
    const int j = std::uniform_int_distribution<int>(0, len - 1)(rng);
    auto& r = records[0].residues[static_cast<std::size_t>(j)];
    r = static_cast<std::uint8_t>((r + 1) % 21);
    const auto changed = window_mix(records);
    for (int i = 0; i < len; ++i) {
      bool pre_diff = false, post_diff = false;
      for (int c = 0; c < 22; ++c) {
        pre_diff |= base.preceding_at(0, i, c) != changed.preceding_at(0, i, c);
        post_diff |= base.following_at(0, i, c) != changed.following_at(0, i, c);
      }
      // Never on the wrong side; always nearby on the right side (far weights
      // fall below float resolution).
      if (i <= j) EXPECT_FALSE(pre_diff) << "i=" << i << " j=" << j;
      if (i >= j) EXPECT_FALSE(post_diff) << "i=" << i << " j=" << j;
      if (i > j && i - j <= 16) EXPECT_TRUE(pre_diff) << "i=" << i << " j=" << j;
      if (i < j && j - i <= 16) EXPECT_TRUE(post_diff) << "i=" << i << " j=" << j;
    }
  }
}

TEST(Cache, RoundTripAndNaming) {
  TempDir dir;
  std::mt19937_64 rng(6);
  const auto records = random_records(rng, 4, 3, 50);
  const auto f = encode_features(records);
  const auto b = make_bigrams(records);
  save_features(dir / "f.npy", f);
  save_bigrams(dir / "b.npy.gz", b);
  const auto f2 = load_features(dir / "f.npy");
  EXPECT_EQ(f2.values, f.values);
  EXPECT_EQ(f2.mask, f.mask);
  EXPECT_EQ(load_bigrams(dir / "b.npy.gz").tokens, b.tokens);

  const std::string name = cache_file_name("cb513", "features", RawLayout{}, 0.5, "abc");
  EXPECT_TRUE(name.starts_with("cb513.features."));
  EXPECT_TRUE(name.ends_with(".npy"));
  EXPECT_EQ(name.size(), std::string("cb513.features.").size() + 16 + 4);
  EXPECT_NE(name, cache_file_name("cb513", "features", RawLayout{}, 0.6, "abc"));
  EXPECT_NE(name, cache_file_name("cb513", "features", RawLayout{}, 0.5, "abd"));
  RawLayout other;
  other.verify_terminal_flags = true;
  EXPECT_NE(name, cache_file_name("cb513", "features", other, 0.5, "abc"));
  EXPECT_EQ(name, cache_file_name("cb513", "features", RawLayout{}, 0.5, "abc"));
}
