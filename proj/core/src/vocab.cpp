#include "vrt/vocab.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>

namespace vrt {

namespace {

const char* kTemplateWords[] = {"In:", "What",  "action", "should", "the",
                                "robot", "take", "to",     "?",      "\n",
                                "Out:"};

// Words used by the task catalog instructions (env-sim).
const char* kInstructionWords[] = {
    "pick", "up",    "red",    "block", "lift",  "blue",   "ball",  "from",
    "tray", "move",  "green",  "cube",  "left",  "bin",    "push",  "yellow",
    "disk", "right", "plate",  "place", "white", "peg",    "in",    "round",
    "slot", "stack", "small",  "brick", "on",    "tall",   "tower", "slide",
    "orange", "chip", "into",  "near",  "corner", "drop",  "purple",
    "token", "far",  "basket"};

// Generic word pool for attack substitutions; mirrors the word-soup texture
// of token-level adversarial strings.
const char* kFillerWords[] = {
    "a",     "an",    "and",   "any",   "are",   "as",    "at",    "be",
    "big",   "bird",  "boat",  "book",  "bottom","box",   "boy",   "but",
    "by",    "call",  "came",  "can",   "car",   "cat",   "cold",  "come",
    "could", "cut",   "day",   "did",   "dog",   "door",  "down",  "draw",
    "dry",   "each",  "eat",   "eight", "end",   "even",  "eye",   "face",
    "fall",  "fast",  "find",  "fire",  "fish",  "five",  "flat",  "fly",
    "food",  "foot",  "for",   "four",  "fox",   "full",  "gave",  "get",
    "girl",  "give",  "go",    "gold",  "good",  "got",   "grab",  "gray",
    "grow",  "had",   "hand",  "hard",  "has",   "hat",   "have",  "he",
    "heat",  "held",  "help",  "her",   "here",  "high",  "him",   "his",
    "hold",  "home",  "hood",  "hop",   "horn",  "hot",   "house", "how",
    "ice",   "if",    "it",    "its",   "jump",  "just",  "keep",  "key",
    "kind",  "king",  "know",  "lake",  "land",  "large", "last",  "late",
    "lead",  "leaf",  "let",   "life",  "light", "like",  "line",  "lion",
    "list",  "little","long",  "look",  "low",   "made",  "make",  "man",
    "many",  "map",   "may",   "me",    "men",   "met",   "milk",  "mind",
    "mine",  "miss",  "moon",  "more",  "most",  "much",  "must",  "my",
    "name",  "net",   "new",   "next",  "nine",  "no",    "nod",   "north",
    "not",   "note",  "now",   "nut",   "of",    "off",   "old",   "once",
    "one",   "only",  "open",  "or",    "our",   "out",   "over",  "own",
    "page",  "pair",  "paper", "part",  "path",  "pen",   "pet",   "pig",
    "pin",   "play",  "point", "pond",  "pool",  "post",  "pot",   "pull",
    "put",   "rain",  "ran",   "rat",   "read",  "rest",  "ride",  "ring",
    "rise",  "road",  "rock",  "roll",  "roof",  "room",  "rope",  "rose",
    "run",   "sad",   "said",  "sand",  "saw",   "say",   "sea",   "seat",
    "see",   "seed",  "seven", "she",   "ship",  "shoe",  "shop",  "show",
    "side",  "sing",  "sit",   "six",   "sky",   "snow",  "so",    "some",
    "son",   "song",  "soon",  "sort",  "south", "spin",  "spot",  "star",
    "stay",  "stem",  "step",  "stone", "stop",  "sun",   "swim",  "tail",
    "tap",   "team",  "tell",  "ten",   "tent",  "test",  "that",  "them",
    "then",  "they",  "thin",  "this",  "three", "tie",   "time",  "tin",
    "tip",   "top",   "toy",   "tree",  "trip",  "try",   "turn",  "two",
    "under", "us",    "use",   "van",   "very",  "vine",  "walk",  "wall",
    "warm",  "was",   "water", "wave",  "way",   "we",    "well",  "went",
    "wet",   "when",  "which", "while", "who",   "why",   "will",  "wind",
    "wing",  "winter","wish",  "with",  "wolf",  "wood",  "word",  "work",
    "world", "worm",  "would", "yard",  "year",  "yes",   "yet",   "you",
    "your",  "zero",  "zoo"};

}  // namespace

Vocabulary Vocabulary::standard(int vocab_size, int action_count) {
  if (action_count < 0 || action_count > vocab_size)
    throw std::invalid_argument("Vocabulary::standard: bad action count");
  const int word_count = vocab_size - action_count;

  std::vector<std::string> tokens;
  tokens.reserve(vocab_size);
  tokens.push_back("<pad>");
  tokens.push_back("<begin>");
  tokens.push_back("!");  // filler / suffix-initialization token

  auto push_unique = [&tokens](const char* w) {
    if (std::find(tokens.begin(), tokens.end(), w) == tokens.end())
      tokens.push_back(w);
  };
  for (const char* w : kTemplateWords) push_unique(w);
  for (const char* w : kInstructionWords) push_unique(w);
  for (const char* w : kFillerWords) {
    if (static_cast<int>(tokens.size()) >= word_count) break;
    push_unique(w);
  }
  // Deterministic padding in case the pool is smaller than requested.
  while (static_cast<int>(tokens.size()) < word_count)
    tokens.push_back("w" + std::to_string(tokens.size()));
  if (static_cast<int>(tokens.size()) > word_count)
    throw std::invalid_argument(
        "Vocabulary::standard: vocab_size too small for the word pool");

  char name[32];
  for (int i = 0; i < action_count; ++i) {
    std::snprintf(name, sizeof(name), "<act_%03d>", i);
    tokens.push_back(name);
  }
  return from_parts(std::move(tokens), {0, 1, 2}, action_count);
}

Vocabulary Vocabulary::plain(std::vector<std::string> tokens) {
  return from_parts(std::move(tokens), {}, 0);
}

Vocabulary Vocabulary::from_parts(std::vector<std::string> tokens,
                                  std::vector<int> reserved_ids,
                                  int action_count) {
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  v.reserved_ids_ = std::move(reserved_ids);
  v.action_count_ = action_count;
  if (action_count < 0 || action_count > v.size())
    throw std::invalid_argument("Vocabulary: action count out of range");
  if (v.reserved_ids_.size() >= 3) {
    v.pad_id_ = v.reserved_ids_[0];
    v.begin_id_ = v.reserved_ids_[1];
    v.filler_id_ = v.reserved_ids_[2];
  }
  v.rebuild_index();
  return v;
}

void Vocabulary::rebuild_index() {
  index_.clear();
  for (int i = 0; i < size(); ++i) index_.emplace(tokens_[i], i);
  if (static_cast<int>(index_.size()) != size())
    throw std::invalid_argument("Vocabulary: duplicate token strings");
  candidate_ids_.clear();
  for (int i = 0; i < size(); ++i)
    if (!is_reserved(i) && !is_action(i)) candidate_ids_.push_back(i);
}

bool Vocabulary::is_reserved(int id) const {
  return std::find(reserved_ids_.begin(), reserved_ids_.end(), id) !=
         reserved_ids_.end();
}

int Vocabulary::action_id_for_bin(int bin) const {
  if (bin < 0 || bin >= action_count_)
    throw std::out_of_range("Vocabulary: bin " + std::to_string(bin) +
                            " outside [0," + std::to_string(action_count_) +
                            ")");
  return action_begin() + bin;
}

int Vocabulary::bin_for_action_id(int id) const {
  if (!is_action(id))
    throw std::out_of_range("Vocabulary: id " + std::to_string(id) +
                            " is not an action token");
  return id - action_begin();
}

int Vocabulary::lookup(const std::string& word) const {
  auto it = index_.find(word);
  return it == index_.end() ? -1 : it->second;
}

}  // namespace vrt
