#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace vrt {

// Word-level toy vocabulary. Layout: reserved control tokens first, then
// ordinary words, then the action-token block at the very end of the id range
// (symbol tuning: action token for bin i has id size() - action_count + i).
class Vocabulary {
 public:
  Vocabulary() = default;

  // The standard 512-token vocabulary: <pad>, <begin>, "!" (filler), template
  // words, task-catalog words, a filler word pool, and 256 action tokens.
  static Vocabulary standard(int vocab_size = 512, int action_count = 256);

  // Bare vocabulary with no reserved and no action tokens; used by tiny test
  // models where every id is an ordinary token.
  static Vocabulary plain(std::vector<std::string> tokens);

  static Vocabulary from_parts(std::vector<std::string> tokens,
                               std::vector<int> reserved_ids, int action_count);

  int size() const { return static_cast<int>(tokens_.size()); }
  int action_token_count() const { return action_count_; }
  int action_begin() const { return size() - action_count_; }

  bool is_action(int id) const {
    return action_count_ > 0 && id >= action_begin() && id < size();
  }
  bool is_reserved(int id) const;

  // pad/begin/filler ids; -1 when the vocabulary has no reserved block.
  int pad_id() const { return pad_id_; }
  int begin_id() const { return begin_id_; }
  int filler_id() const { return filler_id_; }

  int action_id_for_bin(int bin) const;
  int bin_for_action_id(int id) const;

  const std::string& token(int id) const { return tokens_.at(id); }
  // -1 when the word is not in the vocabulary.
  int lookup(const std::string& word) const;

  // Ids an attacker may substitute in: neither reserved nor action tokens.
  const std::vector<int>& candidate_ids() const { return candidate_ids_; }

  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::vector<int>& reserved_ids() const { return reserved_ids_; }

  bool operator==(const Vocabulary& other) const {
    return tokens_ == other.tokens_ && reserved_ids_ == other.reserved_ids_ &&
           action_count_ == other.action_count_;
  }

 private:
  void rebuild_index();

  std::vector<std::string> tokens_;
  std::vector<int> reserved_ids_;
  int action_count_ = 0;
  int pad_id_ = -1, begin_id_ = -1, filler_id_ = -1;
  std::unordered_map<std::string, int> index_;
  std::vector<int> candidate_ids_;
};

}  // namespace vrt
