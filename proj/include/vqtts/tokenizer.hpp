#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <vector>

namespace vqtts {

class TokenizerError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct MergeRule {
  int left;
  int right;
  int id;
  bool operator==(const MergeRule&) const = default;
};

// Byte-pair units over a fixed base alphabet [0, base_size). Merged units get
// ids base_size, base_size + 1, ... in learning order. Sentinel ids follow the
// unit ids: PAD, BOS, EOS.
class SubwordModel {
 public:
  SubwordModel() : SubwordModel(0, {}) {}
  SubwordModel(std::size_t base_size, std::vector<MergeRule> merges);

  std::size_t base_size() const { return base_size_; }
  const std::vector<MergeRule>& merges() const { return merges_; }
  // Number of real units (base symbols plus merges).
  std::size_t unit_count() const { return expansions_.size(); }
  // Units plus the three sentinels; the width of an output layer.
  std::size_t vocab_size() const { return unit_count() + 3; }
  int pad() const { return static_cast<int>(unit_count()); }
  int bos() const { return pad() + 1; }
  int eos() const { return pad() + 2; }

  const std::vector<int>& expansion(int unit) const;

  // Applies the merges in learned order and appends EOS.
  std::vector<int> encode(std::span<const int> symbols) const;
  // Inverse of encode. A leading BOS is skipped and decoding stops at EOS.
  std::vector<int> decode(std::span<const int> units) const;

  void save(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;
  static SubwordModel load(std::istream& in);
  static SubwordModel load(const std::filesystem::path& path);

  bool operator==(const SubwordModel& other) const {
    return base_size_ == other.base_size_ && merges_ == other.merges_;
  }

 private:
  std::size_t base_size_;
  std::vector<MergeRule> merges_;
  std::vector<std::vector<int>> expansions_;
};

// Greedy BPE. The budget vocab_size counts the distinct symbols seen in the
// corpus, the three sentinels and the merged units, so the number of merges
// is at most vocab_size - (distinct + 3). Stops early once no adjacent pair
// occurs twice. Ties go to the lexicographically smallest pair. Pairs never
// span two utterances.
SubwordModel learn_subwords(const std::vector<std::vector<int>>& corpus, std::size_t vocab_size,
                            std::size_t base_size);

// One utterance per line, ids separated by spaces.
void write_id_corpus(std::ostream& out, const std::vector<std::vector<int>>& corpus);
void write_id_corpus(const std::filesystem::path& path, const std::vector<std::vector<int>>& corpus);
std::vector<std::vector<int>> read_id_corpus(std::istream& in);
std::vector<std::vector<int>> read_id_corpus(const std::filesystem::path& path);

}  // namespace vqtts
