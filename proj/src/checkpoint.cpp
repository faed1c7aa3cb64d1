#include "fdlab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "fdlab/error.hpp"

namespace fdlab {

namespace {

constexpr char kMagic[8] = {'F', 'D', 'L', 'M', 'C', 'K', 'P', 'T'};
// Generous bounds that catch garbage headers before large allocations.
constexpr std::uint64_t kMaxDim = std::uint64_t{1} << 32;
constexpr std::uint32_t kMaxName = 4096;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <typename U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  const std::vector<char>& data() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  explicit Reader(std::vector<char> buf) : buf_(std::move(buf)) {}
  void bytes(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  template <typename U>
  U uint() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<U>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i));
    }
    pos_ += sizeof(U);
    return v;
  }
  double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }
  bool at_end() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw FormatError("checkpoint is truncated");
  }
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

void write_scheme(Writer& w, const DropScheme& s) {
  w.f64(s.rate);
  w.uint(static_cast<std::uint8_t>(s.granularity));
}

DropScheme read_scheme(Reader& r) {
  DropScheme s;
  s.rate = r.f64();
  const auto g = r.uint<std::uint8_t>();
  if (g > static_cast<std::uint8_t>(Granularity::weight_matrix)) throw FormatError("checkpoint: bad granularity");
  s.granularity = static_cast<Granularity>(g);
  return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const LmModel& model, TokenMode mode) {
  const LmConfig& c = model.config();
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.uint(kCheckpointVersion);
  for (std::size_t v : {c.vocab_size, c.embed_dim, c.hidden_dim, c.num_layers}) w.uint(static_cast<std::uint64_t>(v));
  w.uint(static_cast<std::uint8_t>(c.tie_embeddings ? 1 : 0));
  w.uint(static_cast<std::uint8_t>(mode == TokenMode::word ? 0 : 1));
  for (const DropScheme* s : {&c.embedding, &c.input, &c.hidden, &c.output, &c.weight}) write_scheme(w, *s);
  w.uint(static_cast<std::uint32_t>(model.parameters().size()));
  for (const Parameter& p : model.parameters()) {
    w.uint(static_cast<std::uint32_t>(p.name.size()));
    w.bytes(p.name.data(), p.name.size());
    w.uint(static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t d : p.value.shape()) w.uint(static_cast<std::uint64_t>(d));
    for (double v : p.value.data()) w.f64(v);
  }
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
  Reader r(std::vector<char>(std::istreambuf_iterator<char>(in), {}));

  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw FormatError(path.string() + " is not a checkpoint");
  const auto version = r.uint<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  LmConfig c;
  for (std::size_t* f : {&c.vocab_size, &c.embed_dim, &c.hidden_dim, &c.num_layers}) {
    const auto v = r.uint<std::uint64_t>();
    if (v == 0 || v > kMaxDim) throw FormatError("checkpoint: implausible model dimension");
    *f = static_cast<std::size_t>(v);
  }
  c.tie_embeddings = r.uint<std::uint8_t>() != 0;
  const auto mode_byte = r.uint<std::uint8_t>();
  if (mode_byte > 1) throw FormatError("checkpoint: bad token mode");
  for (DropScheme* s : {&c.embedding, &c.input, &c.hidden, &c.output, &c.weight}) *s = read_scheme(r);
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  }

  const auto count = r.uint<std::uint32_t>();
  if (count != LmModel::parameter_shapes(c).size()) throw FormatError("checkpoint: wrong parameter count");
  std::vector<Parameter> params;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.uint<std::uint32_t>();
    if (len > kMaxName) throw FormatError("checkpoint: parameter name too long");
    std::string name(len, '\0');
    r.bytes(name.data(), len);
    const auto rank = r.uint<std::uint32_t>();
    if (rank > 2) throw FormatError("checkpoint: parameter rank " + std::to_string(rank));
    Shape shape;
    std::uint64_t total = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto d = r.uint<std::uint64_t>();
      if (d > kMaxDim) throw FormatError("checkpoint: implausible dimension");
      total *= d;
      shape.push_back(static_cast<std::size_t>(d));
    }
    const auto expected = LmModel::parameter_shapes(c)[i];
    if (name != expected.first || shape != expected.second) {
      throw FormatError("checkpoint: parameter " + name + shape_str(shape) + " does not match " + expected.first +
                        shape_str(expected.second));
    }
    std::vector<double> data(static_cast<std::size_t>(total));
    for (double& v : data) v = r.f64();
    Tensor value(shape, std::move(data));
    if (!value.all_finite()) throw FormatError("checkpoint: non-finite value in " + name);
    params.emplace_back(name, std::move(value));
  }
  if (!r.at_end()) throw FormatError("checkpoint has trailing bytes");
  return {LmModel::from_parameters(c, std::move(params)), mode_byte == 0 ? TokenMode::word : TokenMode::character};
}

}  // namespace fdlab
