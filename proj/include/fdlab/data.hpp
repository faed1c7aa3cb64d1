#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

namespace fdlab {

enum class TokenMode { word, character };

std::string to_string(TokenMode mode);
TokenMode token_mode_from_string(const std::string& s);

inline constexpr const char* kUnk = "<unk>";
inline constexpr const char* kEos = "<eos>";

class Vocabulary {
 public:
  Vocabulary() = default;
  /// Tokens in id order; `<unk>` and `<eos>` must be present.
  explicit Vocabulary(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  /// Id of `token`, or the `<unk>` id when absent.
  int id(const std::string& token) const;
  bool contains(const std::string& token) const { return index_.count(token) != 0; }
  int unk() const { return unk_; }
  int eos() const { return eos_; }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  int unk_ = -1;
  int eos_ = -1;
};

/// Word mode splits on whitespace and ends every line with `<eos>`; character
/// mode emits one token per UTF-8 code point, newlines included.
std::vector<std::string> tokenize(const std::string& text, TokenMode mode);

/// Frequency-descending, then lexicographic, vocabulary over `tokens`, with
/// `<eos>` and `<unk>` appended when missing.
Vocabulary build_vocabulary(const std::vector<std::string>& tokens);

struct Corpus {
  Vocabulary vocab;
  TokenMode mode = TokenMode::word;
  std::vector<int> train, valid, test;

  /// "train", "valid" or "test".
  const std::vector<int>& split(const std::string& name) const;
};

/// Builds a corpus from in-memory split texts; the vocabulary comes from `train`.
Corpus corpus_from_text(const std::string& train, const std::string& valid, const std::string& test, TokenMode mode);
/// Reads train.txt, valid.txt and test.txt from `dir`.
Corpus load_corpus(const std::filesystem::path& dir, TokenMode mode);

/// Column-wise batchify of a token stream: column b holds the b-th contiguous
/// slice of the stream, so consecutive windows continue each column. Tokens
/// past rows()*batch() are dropped.
class BatchStream {
 public:
  BatchStream(const std::vector<int>& ids, std::size_t batch, std::size_t bptt);

  struct Window {
    std::vector<std::vector<int>> inputs;   ///< [len][batch]
    std::vector<std::vector<int>> targets;  ///< [len][batch]
    std::size_t start = 0;                  ///< first row
  };

  std::size_t batch() const { return batch_; }
  std::size_t bptt() const { return bptt_; }
  std::size_t rows() const { return rows_; }
  std::size_t windows() const;
  std::size_t dropped() const { return dropped_; }
  Window window(std::size_t index) const;
  int at(std::size_t row, std::size_t col) const { return data_[col * rows_ + row]; }
  /// The kept part of the original stream, in order.
  std::vector<int> unbatchify() const;

 private:
  std::vector<int> data_;
  std::size_t batch_, bptt_, rows_ = 0, dropped_ = 0;
};

}  // namespace fdlab
