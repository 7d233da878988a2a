#include "ssp/synthetic.hpp"

#include <array>
#include <cmath>
#include <random>
#include <string>

namespace ssp {
namespace {

struct SegmentModel {
  char label;
  double weight;
  int min_len;
  int max_len;
  std::string_view favoured;  // residues over-represented in this state
};

// Rough DSSP state frequencies and segment lengths.
constexpr std::array<SegmentModel, 8> kSegments = {{
    {'H', 0.34, 6, 18, "AELMQKR"},
    {'E', 0.22, 3, 9, "VIYFWT"},
    {'L', 0.19, 2, 8, "GPNDS"},
    {'T', 0.11, 2, 4, "GNDPS"},
    {'S', 0.08, 1, 3, "GSPN"},
    {'G', 0.04, 3, 4, "APDW"},
    {'B', 0.015, 1, 1, "VIT"},
    {'I', 0.005, 5, 5, "ALEH"},
}};

}  // namespace

std::vector<ProteinRecord> synthetic_records(const SyntheticOptions& options) {
  std::mt19937_64 rng(options.seed);
  std::vector<double> weights;
  for (const auto& s : kSegments) weights.push_back(s.weight);
  std::discrete_distribution<std::size_t> pick_segment(weights.begin(), weights.end());
  std::uniform_int_distribution<int> pick_length(options.min_length, std::min(options.max_length, options.max_len));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.6);

  std::vector<ProteinRecord> out;
  out.reserve(options.count);
  for (std::size_t n = 0; n < options.count; ++n) {
    const int length = pick_length(rng);
    std::string sequence;
    std::string labels;
    std::vector<std::size_t> states;
    std::size_t previous = kSegments.size();
    while (static_cast<int>(labels.size()) < length) {
      std::size_t s = pick_segment(rng);
      if (s == previous) continue;
      previous = s;
      const auto& seg = kSegments[s];
      int seg_len = std::uniform_int_distribution<int>(seg.min_len, seg.max_len)(rng);
      for (int k = 0; k < seg_len && static_cast<int>(labels.size()) < length; ++k) {
        char residue;
        const double u = unit(rng);
        if (u < 0.01) {
          residue = 'X';
        } else if (u < 0.7) {
          residue = seg.favoured[std::uniform_int_distribution<std::size_t>(0, seg.favoured.size() - 1)(rng)];
        } else {
          residue = ResidueVocab::kLetters[std::uniform_int_distribution<std::size_t>(0, 19)(rng)];
        }
        sequence.push_back(residue);
        labels.push_back(seg.label);
        states.push_back(s);
      }
    }

    std::vector<float> profile(static_cast<std::size_t>(options.max_len) * ResidueVocab::kSize, 0.0f);
    for (int i = 0; i < length; ++i) {
      const int res = *ResidueVocab::index_of(sequence[static_cast<std::size_t>(i)]);
      const auto& seg = kSegments[states[static_cast<std::size_t>(i)]];
      for (int c = 0; c < ResidueVocab::kSize - 1; ++c) {
        double score = -1.5 + noise(rng);
        if (c == res) score += 3.0;
        if (c < 20 && seg.favoured.find(ResidueVocab::letter(c)) != std::string_view::npos) score += 1.0;
        profile[static_cast<std::size_t>(i) * ResidueVocab::kSize + static_cast<std::size_t>(c)] =
            static_cast<float>(1.0 / (1.0 + std::exp(-score)));
      }
    }
    out.push_back(make_record(options.dataset_name + "#" + std::to_string(n), sequence, labels, std::move(profile),
                              options.max_len));
  }
  return out;
}

}  // namespace ssp
