#include "vqtts/tokenizer.hpp"

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

namespace vqtts {

namespace {

void apply_merge(std::vector<int>& seq, const MergeRule& m) {
  std::size_t out = 0;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (i + 1 < seq.size() && seq[i] == m.left && seq[i + 1] == m.right) {
      seq[out++] = m.id;
      ++i;
    } else {
      seq[out++] = seq[i];
    }
  }
  seq.resize(out);
}

}  // namespace

SubwordModel::SubwordModel(std::size_t base_size, std::vector<MergeRule> merges)
    : base_size_(base_size), merges_(std::move(merges)) {
  expansions_.reserve(base_size_ + merges_.size());
  for (std::size_t s = 0; s < base_size_; ++s) expansions_.push_back({static_cast<int>(s)});
  for (const MergeRule& m : merges_) {
    const int next = static_cast<int>(expansions_.size());
    if (m.id != next) {
      throw TokenizerError("merge rule id " + std::to_string(m.id) + " should be " + std::to_string(next));
    }
    if (m.left < 0 || m.left >= next || m.right < 0 || m.right >= next) {
      throw TokenizerError("merge rule " + std::to_string(m.id) + " refers to an unknown unit");
    }
    std::vector<int> e = expansions_[m.left];
    const auto& r = expansions_[m.right];
    e.insert(e.end(), r.begin(), r.end());
    expansions_.push_back(std::move(e));
  }
}

const std::vector<int>& SubwordModel::expansion(int unit) const {
  if (unit < 0 || static_cast<std::size_t>(unit) >= expansions_.size()) {
    throw TokenizerError("unit id " + std::to_string(unit) + " is not a subword unit");
  }
  return expansions_[unit];
}

std::vector<int> SubwordModel::encode(std::span<const int> symbols) const {
  std::vector<int> seq(symbols.begin(), symbols.end());
  for (int s : seq) {
    if (s < 0 || static_cast<std::size_t>(s) >= base_size_) {
      throw TokenizerError("symbol " + std::to_string(s) + " outside the base alphabet of size " +
                           std::to_string(base_size_));
    }
  }
  for (const MergeRule& m : merges_) {
    if (seq.size() < 2) break;
    apply_merge(seq, m);
  }
  seq.push_back(eos());
  return seq;
}

std::vector<int> SubwordModel::decode(std::span<const int> units) const {
  std::vector<int> out;
  std::size_t i = 0;
  if (!units.empty() && units[0] == bos()) i = 1;
  for (; i < units.size(); ++i) {
    if (units[i] == eos()) break;
    const auto& e = expansion(units[i]);
    out.insert(out.end(), e.begin(), e.end());
  }
  return out;
}

void SubwordModel::save(std::ostream& out) const {
  out << base_size_ << '\n';
  for (const MergeRule& m : merges_) out << m.left << ' ' << m.right << ' ' << m.id << '\n';
}

void SubwordModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write subword model " + path.string());
  save(out);
}

SubwordModel SubwordModel::load(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw TokenizerError("subword model is empty");
  std::size_t base = 0;
  {
    std::istringstream head(line);
    if (!(head >> base)) throw TokenizerError("subword model: bad base alphabet line '" + line + "'");
  }
  std::vector<MergeRule> merges;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream row(line);
    MergeRule m{};
    std::string extra;
    if (!(row >> m.left >> m.right >> m.id) || (row >> extra)) {
      throw TokenizerError("subword model line " + std::to_string(lineno) + ": expected 'left right id'");
    }
    merges.push_back(m);
  }
  return SubwordModel(base, std::move(merges));
}

SubwordModel SubwordModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read subword model " + path.string());
  return load(in);
}

SubwordModel learn_subwords(const std::vector<std::vector<int>>& corpus, std::size_t vocab_size,
                            std::size_t base_size) {
  std::set<int> distinct;
  for (const auto& seq : corpus) {
    for (int s : seq) {
      if (s < 0 || static_cast<std::size_t>(s) >= base_size) {
        throw TokenizerError("symbol " + std::to_string(s) + " outside the base alphabet");
      }
      distinct.insert(s);
    }
  }
  const std::size_t floor = distinct.size() + 3;
  if (vocab_size < floor) {
    throw TokenizerError("vocab_size " + std::to_string(vocab_size) + " is below the " +
                         std::to_string(distinct.size()) + " corpus symbols plus 3 sentinels");
  }

  std::vector<std::vector<int>> work = corpus;
  std::vector<MergeRule> merges;
  const std::size_t budget = vocab_size - floor;
  while (merges.size() < budget) {
    std::map<std::pair<int, int>, long> counts;
    for (const auto& seq : work) {
      for (std::size_t i = 0; i + 1 < seq.size(); ++i) ++counts[{seq[i], seq[i + 1]}];
    }
    // Ordered iteration with a strict comparison keeps the smallest pair on ties.
    auto best = counts.end();
    for (auto it = counts.begin(); it != counts.end(); ++it) {
      if (best == counts.end() || it->second > best->second) best = it;
    }
    if (best == counts.end() || best->second < 2) break;
    MergeRule m{best->first.first, best->first.second, static_cast<int>(base_size + merges.size())};
    for (auto& seq : work) apply_merge(seq, m);
    merges.push_back(m);
  }
  return SubwordModel(base_size, std::move(merges));
}

void write_id_corpus(std::ostream& out, const std::vector<std::vector<int>>& corpus) {
  for (const auto& seq : corpus) {
    for (std::size_t i = 0; i < seq.size(); ++i) out << (i ? " " : "") << seq[i];
    out << '\n';
  }
}

void write_id_corpus(const std::filesystem::path& path, const std::vector<std::vector<int>>& corpus) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_id_corpus(out, corpus);
}

std::vector<std::vector<int>> read_id_corpus(std::istream& in) {
  std::vector<std::vector<int>> corpus;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream row(line);
    std::vector<int> seq;
    int v;
    while (row >> v) seq.push_back(v);
    if (!row.eof()) throw TokenizerError("non-numeric token in line " + std::to_string(corpus.size() + 1));
    corpus.push_back(std::move(seq));
  }
  return corpus;
}

std::vector<std::vector<int>> read_id_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return read_id_corpus(in);
}

}  // namespace vqtts
