#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>

namespace ssp {

inline constexpr int kMaxLen = 700;

// Residue alphabet. Indices are fixed across the suite; X marks non-standard
// residues and noSeq is padding.
struct ResidueVocab {
  static constexpr int kSize = 22;
  static constexpr int kUnknown = 20;
  static constexpr int kNoSeq = 21;
  static constexpr std::array<std::string_view, kSize> kTokens = {
      "A", "C", "E", "D", "G", "F", "I", "H", "K", "M", "L",
      "N", "Q", "P", "S", "R", "T", "W", "V", "Y", "X", "noSeq"};

  // One character per non-padding token.
  static constexpr std::string_view kLetters = "ACEDGFIHKMLNQPSRTWVYX";

  static constexpr char letter(int index) { return kLetters[static_cast<std::size_t>(index)]; }

  static std::optional<int> index_of(char c) {
    auto pos = kLetters.find(c);
    if (pos == std::string_view::npos) return std::nullopt;
    return static_cast<int>(pos);
  }
};

// DSSP eight-state alphabet plus the padding class.
struct LabelVocab {
  static constexpr int kSize = 9;
  static constexpr int kClasses = 8;
  static constexpr int kNoSeq = 8;
  static constexpr std::array<std::string_view, kSize> kTokens = {"L", "B", "E", "G", "I",
                                                                  "H", "S", "T", "noSeq"};
  static constexpr std::string_view kLetters = "LBEGIHST";

  static constexpr char letter(int index) { return kLetters[static_cast<std::size_t>(index)]; }

  static std::optional<int> index_of(char c) {
    auto pos = kLetters.find(c);
    if (pos == std::string_view::npos) return std::nullopt;
    return static_cast<int>(pos);
  }
};

}  // namespace ssp
