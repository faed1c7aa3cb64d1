#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "fdlab/checkpoint.hpp"
#include "fdlab/data.hpp"
#include "fdlab/error.hpp"
#include "fdlab/eval.hpp"

using namespace fdlab;
namespace fs = std::filesystem;

namespace {

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Mask-free perplexity of a single-layer untied model over one unbroken
// sequence, recomputed with scalar loops and no tape.
double scalar_perplexity(const LmModel& m, const std::vector<int>& ids) {
  const LmConfig& c = m.config();
  const std::size_t e = c.embed_dim, d = c.hidden_dim, v = c.vocab_size;
  const Tensor& emb = m.parameter("embedding").value;
  const Tensor& wih = m.parameter("lstm.0.w_ih").value;
  const Tensor& whh = m.parameter("lstm.0.w_hh").value;
  const Tensor& bias = m.parameter("lstm.0.bias").value;
  const Tensor& dec = m.parameter("decoder.weight").value;
  const Tensor& db = m.parameter("decoder.bias").value;
  std::vector<double> h(d, 0.0), cell(d, 0.0);
  double nll = 0.0;
  for (std::size_t t = 0; t + 1 < ids.size(); ++t) {
    std::vector<double> hn(d), cn(d);
    for (std::size_t u = 0; u < d; ++u) {
      double g[4];
      for (std::size_t q = 0; q < 4; ++q) {
        double s = bias[q * d + u];
        for (std::size_t k = 0; k < e; ++k) s += emb.at(static_cast<std::size_t>(ids[t]), k) * wih.at(k, q * d + u);
        for (std::size_t k = 0; k < d; ++k) s += h[k] * whh.at(k, q * d + u);
        g[q] = s;
      }
      cn[u] = sig(g[1]) * cell[u] + sig(g[0]) * std::tanh(g[2]);
      hn[u] = sig(g[3]) * std::tanh(cn[u]);
    }
    h = hn;
    cell = cn;
    std::vector<double> logits(v);
    double mx = -1e300;
    for (std::size_t j = 0; j < v; ++j) {
      logits[j] = db[j];
      for (std::size_t u = 0; u < d; ++u) logits[j] += h[u] * dec.at(u, j);
      mx = std::max(mx, logits[j]);
    }
    double z = 0.0;
    for (double l : logits) z += std::exp(l - mx);
    nll += std::log(z) + mx - logits[static_cast<std::size_t>(ids[t + 1])];
  }
  return std::exp(nll / static_cast<double>(ids.size() - 1));
}

LmModel small_model(double rate, bool tied = true) {
  LmConfig c;
  c.vocab_size = 9;
  c.embed_dim = 4;
  c.hidden_dim = 4;
  c.tie_embeddings = tied;
  c.input.rate = rate;
  c.output.rate = rate;
  c.weight.rate = rate;
  return LmModel::initialize(c, 31);
}

std::vector<int> stream_of(std::size_t n, std::size_t vocab, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<int> ids(n);
  for (int& i : ids) i = static_cast<int>(rng.below(vocab));
  return ids;
}

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("fdlab_test_" + name); }

std::vector<char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const fs::path& p, const std::vector<char>& b) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
}

}  // namespace

TEST(Vocabulary, WordModeExample) {
  const std::vector<std::string> toks = tokenize("a a b\n", TokenMode::word);
  EXPECT_EQ(toks, (std::vector<std::string>{"a", "a", "b", "<eos>"}));
  const Vocabulary v = build_vocabulary(toks);
  EXPECT_EQ(v.tokens(), (std::vector<std::string>{"a", "<eos>", "b", "<unk>"}));
  EXPECT_EQ(v.id("b"), 2);
  EXPECT_EQ(v.id("zebra"), v.unk());
}

TEST(Vocabulary, CharModeExample) {
  const std::vector<std::string> toks = tokenize("ab", TokenMode::character);
  EXPECT_EQ(toks, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(build_vocabulary(toks).size(), 4u);
  EXPECT_EQ(tokenize("h\xC3\xA9", TokenMode::character).size(), 2u);
  EXPECT_THROW(tokenize("\xC3", TokenMode::character), FormatError);
}

TEST(Corpus, UnseenValidTokenMapsToUnk) {
  const Corpus c = corpus_from_text("x y\n", "x q\n", "y\n", TokenMode::word);
  EXPECT_EQ(c.valid[1], c.vocab.unk());
  EXPECT_EQ(c.valid[2], c.vocab.eos());
  EXPECT_THROW(c.split("dev"), std::invalid_argument);
}

TEST(Corpus, MissingDirectoryRaises) {
  EXPECT_ANY_THROW(load_corpus("/nonexistent/fdlab", TokenMode::word));
}

TEST(BatchStream, RoundTripMinusRemainder) {
  const std::vector<int> ids = stream_of(103, 50, 2);
  const BatchStream s(ids, 4, 7);
  EXPECT_EQ(s.rows(), 25u);
  EXPECT_EQ(s.dropped(), 3u);
  EXPECT_EQ(s.unbatchify(), std::vector<int>(ids.begin(), ids.begin() + 100));
  EXPECT_EQ(s.at(0, 1), ids[25]);
  EXPECT_EQ(s.windows(), 4u);
  const BatchStream::Window last = s.window(3);
  EXPECT_EQ(last.inputs.size(), 3u);
  EXPECT_EQ(last.targets.back()[2], ids[2 * 25 + 24]);
}

TEST(Perplexity, UniformModelGivesVocabularySize) {
  LmModel m = small_model(0.0);
  for (Parameter& p : m.parameters()) p.value.fill(0.0);
  const EvalResult r = perplexity(m, stream_of(200, 9, 1), 3, 5);
  EXPECT_NEAR(r.ppl, 9.0, 1e-12);
}

TEST(Perplexity, MatchesScalarRecomputation) {
  const LmModel m = small_model(0.3, false);
  const std::vector<int> ids = stream_of(60, 9, 4);
  // One column, several windows: the carried state makes it one sequence.
  EXPECT_NEAR(perplexity(m, ids, 1, 7).ppl, scalar_perplexity(m, ids), 1e-10);
}

TEST(Perplexity, IsExpOfMeanLoss) {
  const EvalResult r = perplexity(small_model(0.5), stream_of(300, 9, 5), 4, 10);
  EXPECT_NEAR(r.ppl, std::exp(r.mean_ce), 1e-12);
  EXPECT_EQ(r.tokens, 296u);
}

TEST(McEval, RateZeroMatchesMaskFree) {
  const LmModel m = small_model(0.0);
  const std::vector<int> ids = stream_of(300, 9, 6);
  for (std::size_t k : {1, 5}) {
    McOptions o;
    o.samples = k;
    o.batch = 4;
    o.bptt = 10;
    EXPECT_NEAR(mc_eval(m, ids, o).ppl, perplexity(m, ids, 4, 10).ppl, 1e-12);
  }
  McOptions one;
  one.batch = 4;
  one.bptt = 10;
  EXPECT_NEAR(mc_eval(m, ids, one).ppl, perplexity(m, ids, 4, 10).ppl, 1e-12);
}

TEST(McEval, IdenticalDrawsEqualOneDraw) {
  const LmModel m = small_model(0.5);
  const std::vector<int> ids = stream_of(300, 9, 7);
  McOptions o;
  o.batch = 4;
  o.bptt = 10;
  o.seed = 3;
  const double one = mc_eval(m, ids, o).ppl;
  o.samples = 6;
  o.identical_masks = true;
  EXPECT_EQ(mc_eval(m, ids, o).ppl, one);
}

TEST(McEval, AveragedRowsAreDistributions) {
  const LmModel m = small_model(0.5);
  McOptions o;
  o.samples = 4;
  o.batch = 3;
  o.bptt = 8;
  double worst = 0.0;
  o.on_step = [&](const Tensor& p) {
    for (std::size_t r = 0; r < p.rows(); ++r) {
      double s = 0.0;
      for (std::size_t k = 0; k < p.cols(); ++k) s += p.at(r, k);
      worst = std::max(worst, std::abs(s - 1.0));
    }
  };
  mc_eval(m, stream_of(200, 9, 8), o);
  EXPECT_LE(worst, 1e-12);
}

TEST(McEval, PrefixesAreNestedRuns) {
  const LmModel m = small_model(0.5);
  const std::vector<int> ids = stream_of(200, 9, 9);
  McOptions o;
  o.samples = 5;
  o.batch = 4;
  o.bptt = 10;
  o.seed = 2;
  const std::vector<EvalResult> r = mc_eval_prefixes(m, ids, o, {1, 3, 5});
  for (std::size_t i = 0; i < 3; ++i) {
    McOptions k = o;
    k.samples = std::vector<std::size_t>{1, 3, 5}[i];
    EXPECT_EQ(r[i].ppl, mc_eval(m, ids, k).ppl);
  }
  EXPECT_THROW(mc_eval_prefixes(m, ids, o, {6}), std::invalid_argument);
}

TEST(Checkpoint, RoundTrip) {
  const LmModel m = small_model(0.25, false);
  const fs::path p = temp_file("roundtrip.ckpt");
  save_checkpoint(p, m, TokenMode::character);
  const Checkpoint c = load_checkpoint(p);
  EXPECT_EQ(c.mode, TokenMode::character);
  EXPECT_TRUE(c.model.config() == m.config());
  for (std::size_t i = 0; i < m.parameters().size(); ++i) {
    EXPECT_EQ(c.model.parameters()[i].name, m.parameters()[i].name);
    EXPECT_EQ(c.model.parameters()[i].value, m.parameters()[i].value);
  }
  fs::remove(p);
}

TEST(Checkpoint, CorruptionIsRejected) {
  const LmModel m = small_model(0.25);
  const fs::path p = temp_file("corrupt.ckpt");
  save_checkpoint(p, m, TokenMode::word);
  const std::vector<char> good = read_bytes(p);

  std::vector<char> b = good;
  b[0] = 'X';
  write_bytes(p, b);
  EXPECT_THROW(load_checkpoint(p), FormatError) << "magic";

  b = good;
  b[8] = 2;  // version
  write_bytes(p, b);
  EXPECT_THROW(load_checkpoint(p), FormatError) << "version";

  b.assign(good.begin(), good.end() - 5);
  write_bytes(p, b);
  EXPECT_THROW(load_checkpoint(p), FormatError) << "truncated";

  b = good;
  b.push_back(0);
  write_bytes(p, b);
  EXPECT_THROW(load_checkpoint(p), FormatError) << "trailing";

  b = good;
  b[12] = static_cast<char>(b[12] + 1);  // vocab size no longer matches the stored tensors
  write_bytes(p, b);
  EXPECT_THROW(load_checkpoint(p), FormatError) << "shape";
  fs::remove(p);
}
