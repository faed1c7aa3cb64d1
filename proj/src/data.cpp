#include "fdlab/data.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "fdlab/error.hpp"

namespace fdlab {

std::string to_string(TokenMode mode) { return mode == TokenMode::word ? "word" : "char"; }

TokenMode token_mode_from_string(const std::string& s) {
  if (s == "word") return TokenMode::word;
  if (s == "char" || s == "character") return TokenMode::character;
  throw FormatError("unknown token mode '" + s + "' (expected word or char)");
}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) throw FormatError("duplicate token " + tokens_[i]);
  }
  if (!contains(kUnk) || !contains(kEos)) throw FormatError("vocabulary lacks <unk> or <eos>");
  unk_ = index_.at(kUnk);
  eos_ = index_.at(kEos);
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? unk_ : it->second;
}

std::vector<std::string> tokenize(const std::string& text, TokenMode mode) {
  std::vector<std::string> out;
  if (mode == TokenMode::word) {
    std::istringstream lines(text);
    std::string line;
    while (std::getline(lines, line)) {
      std::istringstream words(line);
      std::string w;
      while (words >> w) out.push_back(w);
      out.emplace_back(kEos);
    }
    return out;
  }
  for (std::size_t i = 0; i < text.size();) {
    const auto lead = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if (lead >= 0xF0) len = 4;
    else if (lead >= 0xE0) len = 3;
    else if (lead >= 0xC0) len = 2;
    if (i + len > text.size()) throw FormatError("truncated UTF-8 sequence at byte " + std::to_string(i));
    out.push_back(text.substr(i, len));
    i += len;
  }
  return out;
}

Vocabulary build_vocabulary(const std::vector<std::string>& tokens) {
  std::map<std::string, std::size_t> counts;
  for (const std::string& t : tokens) ++counts[t];
  std::vector<std::pair<std::string, std::size_t>> sorted(counts.begin(), counts.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> ids;
  for (auto& [tok, n] : sorted) ids.push_back(tok);
  for (const char* special : {kEos, kUnk}) {
    if (!counts.count(special)) ids.emplace_back(special);
  }
  return Vocabulary(std::move(ids));
}

const std::vector<int>& Corpus::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "valid") return valid;
  if (name == "test") return test;
  throw std::invalid_argument("unknown split '" + name + "'");
}

namespace {

std::vector<int> encode(const Vocabulary& vocab, const std::vector<std::string>& tokens) {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const std::string& t : tokens) ids.push_back(vocab.id(t));
  return ids;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

Corpus corpus_from_text(const std::string& train, const std::string& valid, const std::string& test, TokenMode mode) {
  const std::vector<std::string> train_tokens = tokenize(train, mode);
  if (train_tokens.empty()) throw FormatError("train split is empty");
  Corpus c;
  c.mode = mode;
  c.vocab = build_vocabulary(train_tokens);
  c.train = encode(c.vocab, train_tokens);
  c.valid = encode(c.vocab, tokenize(valid, mode));
  c.test = encode(c.vocab, tokenize(test, mode));
  return c;
}

Corpus load_corpus(const std::filesystem::path& dir, TokenMode mode) {
  return corpus_from_text(read_file(dir / "train.txt"), read_file(dir / "valid.txt"), read_file(dir / "test.txt"),
                          mode);
}

// ---------------------------------------------------------------------------

BatchStream::BatchStream(const std::vector<int>& ids, std::size_t batch, std::size_t bptt)
    : batch_(batch), bptt_(bptt) {
  if (batch == 0 || bptt == 0) throw std::invalid_argument("batch size and bptt must be positive");
  rows_ = ids.size() / batch;
  dropped_ = ids.size() - rows_ * batch;
  data_.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(rows_ * batch));
}

std::size_t BatchStream::windows() const { return rows_ < 2 ? 0 : (rows_ - 1 + bptt_ - 1) / bptt_; }

BatchStream::Window BatchStream::window(std::size_t index) const {
  if (index >= windows()) throw std::out_of_range("window " + std::to_string(index) + " of " + std::to_string(windows()));
  Window w;
  w.start = index * bptt_;
  const std::size_t len = std::min(bptt_, rows_ - 1 - w.start);
  w.inputs.assign(len, std::vector<int>(batch_));
  w.targets.assign(len, std::vector<int>(batch_));
  for (std::size_t t = 0; t < len; ++t) {
    for (std::size_t b = 0; b < batch_; ++b) {
      w.inputs[t][b] = at(w.start + t, b);
      w.targets[t][b] = at(w.start + t + 1, b);
    }
  }
  return w;
}

std::vector<int> BatchStream::unbatchify() const { return data_; }

}  // namespace fdlab
