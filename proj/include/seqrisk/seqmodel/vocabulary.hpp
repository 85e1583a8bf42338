#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "seqrisk/core.hpp"

SEQRISK_BEGIN_NAMESPACE
namespace seqmodel {

/// Token <-> id map. Ids 0..3 are reserved for PAD, BOS, EOS and UNK.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kNumSpecials = 4;

  Vocabulary();

  // Returns the existing id when the token is already present.
  int add(const std::string& token);
  std::optional<int> find(const std::string& token) const;
  // Unknown tokens map to UNK.
  int id(const std::string& token) const;
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(tokens_.size()); }

  static bool is_special(int id) { return id >= 0 && id < kNumSpecials; }

  std::vector<int> encode(std::span<const std::string> tokens) const;
  std::vector<std::string> decode(std::span<const int> ids, bool strip_specials = true) const;

  // One token per line, ids in line order; the specials come first.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

/// Content tokens of a framed sequence: drops PAD, BOS, EOS (UNK is kept).
std::vector<int> strip_specials(std::span<const int> ids);

}  // namespace seqmodel
SEQRISK_END_NAMESPACE
