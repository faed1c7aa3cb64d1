#include "fdlab/rnn_lm.hpp"

#include <cmath>
#include <stdexcept>

#include "fdlab/error.hpp"
#include "fdlab/rng.hpp"

namespace fdlab {

std::size_t LmConfig::layer_input_dim(std::size_t layer) const {
  return layer == 0 ? embed_dim : layer_output_dim(layer - 1);
}

std::size_t LmConfig::layer_output_dim(std::size_t layer) const {
  return (tie_embeddings && layer + 1 == num_layers) ? embed_dim : hidden_dim;
}

void LmConfig::validate() const {
  if (vocab_size == 0) throw std::invalid_argument("model: vocab_size must be positive");
  if (embed_dim == 0 || hidden_dim == 0) throw std::invalid_argument("model: dimensions must be positive");
  if (num_layers == 0) throw std::invalid_argument("model: num_layers must be positive");
  for (const DropScheme* s : {&embedding, &input, &hidden, &output, &weight}) s->validate();
  if (embedding.granularity != Granularity::embedding_row) {
    throw std::invalid_argument("model: embedding dropout must use embedding_row granularity");
  }
  if (weight.granularity != Granularity::weight_matrix) {
    throw std::invalid_argument("model: weight dropout must use weight_matrix granularity");
  }
  for (const DropScheme* s : {&input, &hidden, &output}) {
    if (s->granularity != Granularity::per_step && s->granularity != Granularity::per_sequence) {
      throw std::invalid_argument("model: activation dropout must be per_step or per_sequence");
    }
  }
}

std::vector<SiteSpec> LmConfig::mask_layout(std::size_t batch) const {
  std::vector<SiteSpec> layout;
  layout.push_back({0, Site::embedding, embedding, Shape{vocab_size}});
  layout.push_back({0, Site::input, input, Shape{batch, embed_dim}});
  for (std::size_t l = 0; l < num_layers; ++l) {
    const int li = static_cast<int>(l);
    const std::size_t out = layer_output_dim(l);
    layout.push_back({li, Site::weight, weight, Shape{out, 4 * out}});
    if (l + 1 < num_layers) {
      layout.push_back({li, Site::hidden, hidden, Shape{batch, out}});
    } else {
      layout.push_back({li, Site::output, output, Shape{batch, out}});
    }
  }
  return layout;
}

LmConfig LmConfig::without_dropout() const {
  LmConfig c = *this;
  for (DropScheme* s : {&c.embedding, &c.input, &c.hidden, &c.output, &c.weight}) s->rate = 0.0;
  return c;
}

// ---------------------------------------------------------------------------

std::vector<std::pair<std::string, Shape>> LmModel::parameter_shapes(const LmConfig& config) {
  std::vector<std::pair<std::string, Shape>> shapes;
  shapes.emplace_back("embedding", Shape{config.vocab_size, config.embed_dim});
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    const std::size_t in = config.layer_input_dim(l);
    const std::size_t out = config.layer_output_dim(l);
    const std::string prefix = "lstm." + std::to_string(l) + ".";
    shapes.emplace_back(prefix + "w_ih", Shape{in, 4 * out});
    shapes.emplace_back(prefix + "w_hh", Shape{out, 4 * out});
    shapes.emplace_back(prefix + "bias", Shape{4 * out});
  }
  if (!config.tie_embeddings) shapes.emplace_back("decoder.weight", Shape{config.final_dim(), config.vocab_size});
  shapes.emplace_back("decoder.bias", Shape{config.vocab_size});
  return shapes;
}

LmModel LmModel::initialize(const LmConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  std::vector<Parameter> params;
  for (auto& [name, shape] : parameter_shapes(config)) {
    Tensor value(shape);
    double bound = 0.0;
    if (name == "embedding") {
      bound = 0.1;
    } else if (name == "decoder.bias") {
      bound = 0.0;
    } else {
      // Fan of the unit the weight feeds.
      const std::size_t units = name == "decoder.weight" ? config.final_dim() : shape.back() / 4;
      bound = 1.0 / std::sqrt(static_cast<double>(units));
    }
    for (double& v : value.data()) v = bound == 0.0 ? 0.0 : rng.uniform(-bound, bound);
    params.emplace_back(name, std::move(value));
  }
  return from_parameters(config, std::move(params));
}

LmModel LmModel::from_parameters(const LmConfig& config, std::vector<Parameter> params) {
  config.validate();
  const auto shapes = parameter_shapes(config);
  if (params.size() != shapes.size()) {
    throw FormatError("model expects " + std::to_string(shapes.size()) + " parameters, got " +
                      std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (params[i].name != shapes[i].first || params[i].value.shape() != shapes[i].second) {
      throw FormatError("parameter " + std::to_string(i) + " is " + params[i].name + shape_str(params[i].value.shape()) +
                        ", expected " + shapes[i].first + shape_str(shapes[i].second));
    }
    if (params[i].grad.shape() != params[i].value.shape()) params[i].grad = Tensor(params[i].value.shape());
  }
  LmModel m;
  m.config_ = config;
  m.params_ = std::move(params);
  return m;
}

Parameter& LmModel::parameter(const std::string& name) {
  for (Parameter& p : params_)
    if (p.name == name) return p;
  throw std::out_of_range("no parameter named " + name);
}

const Parameter& LmModel::parameter(const std::string& name) const {
  for (const Parameter& p : params_)
    if (p.name == name) return p;
  throw std::out_of_range("no parameter named " + name);
}

std::size_t LmModel::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter& p : params_) n += p.value.size();
  return n;
}

void LmModel::zero_grad() {
  for (Parameter& p : params_) p.zero_grad();
}

Carry zero_carry(const LmConfig& config, std::size_t batch) {
  Carry carry;
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    const std::size_t d = config.layer_output_dim(l);
    carry.push_back({Tensor(Shape{batch, d}), Tensor(Shape{batch, d})});
  }
  return carry;
}

// ---------------------------------------------------------------------------

namespace {

template <typename Model, typename Place>
BoundModel bind_with(Tape& tape, Model& model, const MaskSet& masks, Place place) {
  const LmConfig& cfg = model.config();
  BoundModel b;
  b.config = &cfg;
  b.embedding = place(model.parameter("embedding"));
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const std::string prefix = "lstm." + std::to_string(l) + ".";
    BoundLayer layer;
    layer.w_ih = place(model.parameter(prefix + "w_ih"));
    layer.w_hh = place(model.parameter(prefix + "w_hh"));
    layer.bias = place(model.parameter(prefix + "bias"));
    const MaskSet::Entry& wd = masks.entry(static_cast<int>(l), Site::weight);
    if (!wd.identity) layer.w_hh = mul(layer.w_hh, tape.constant(wd.masks.front()));
    b.layers.push_back(layer);
  }
  b.projection = cfg.tie_embeddings ? b.embedding : place(model.parameter("decoder.weight"));
  b.projection_bias = place(model.parameter("decoder.bias"));
  return b;
}

}  // namespace

BoundModel bind(Tape& tape, LmModel& model, const MaskSet& masks) {
  return bind_with(tape, model, masks, [&tape](Parameter& p) { return tape.param(p); });
}

BoundModel bind(Tape& tape, const LmModel& model, const MaskSet& masks) {
  return bind_with(tape, model, masks, [&tape](const Parameter& p) { return tape.constant(p.value); });
}

namespace {

Var apply_mask(Var x, const MaskSet& masks, int layer, Site site, std::size_t step) {
  const MaskSet::Entry& e = masks.entry(layer, site);
  if (e.identity) return x;
  return mul(x, x.tape().constant(masks.at(layer, site, step)));
}

}  // namespace

LstmStepResult lstm_step(Var x, Var h, Var c, const BoundModel& bound, std::size_t layer, const MaskSet& masks,
                         std::size_t step) {
  const LmConfig& cfg = *bound.config;
  const BoundLayer& w = bound.layers.at(layer);
  const std::size_t d = cfg.layer_output_dim(layer);
  const Var gates = add_row(add(matmul(x, w.w_ih), matmul(h, w.w_hh)), w.bias);
  const Var in_gate = sigmoid(slice_cols(gates, 0, d));
  const Var forget_gate = sigmoid(slice_cols(gates, d, d));
  const Var cell_in = tanh(slice_cols(gates, 2 * d, d));
  const Var out_gate = sigmoid(slice_cols(gates, 3 * d, d));
  const Var c_new = add(mul(forget_gate, c), mul(in_gate, cell_in));
  const Var h_new = mul(out_gate, tanh(c_new));
  const Site site = layer + 1 == cfg.num_layers ? Site::output : Site::hidden;
  const Var out = apply_mask(h_new, masks, static_cast<int>(layer), site, step);
  return {h_new, c_new, out};
}

ForwardResult forward(const BoundModel& bound, const std::vector<std::vector<int>>& tokens, const MaskSet& masks,
                      const Carry& carry) {
  const LmConfig& cfg = *bound.config;
  Tape& tape = bound.embedding.tape();
  if (carry.size() != cfg.num_layers) throw ShapeError("forward: carry has wrong number of layers");
  const std::size_t batch = carry.front().h.rows();
  for (const auto& row : tokens) {
    if (row.size() != batch) throw ShapeError("forward: token row size does not match carry batch");
    for (int id : row) {
      if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size) {
        throw std::out_of_range("forward: token id " + std::to_string(id) + " outside vocabulary of " +
                                std::to_string(cfg.vocab_size));
      }
    }
  }

  std::vector<Var> h, c;
  for (const LayerState& s : carry) {
    h.push_back(tape.constant(s.h));
    c.push_back(tape.constant(s.c));
  }
  ForwardResult result;
  result.initial_hidden = h.back();

  const MaskSet::Entry& row_drop = masks.entry(0, Site::embedding);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    Var x = gather_rows(bound.embedding, tokens[t]);
    if (!row_drop.identity) {
      const Tensor& rows = row_drop.masks.front();
      Tensor scale_rows(Shape{batch, cfg.embed_dim});
      for (std::size_t b = 0; b < batch; ++b) {
        const double s = rows[static_cast<std::size_t>(tokens[t][b])];
        for (std::size_t k = 0; k < cfg.embed_dim; ++k) scale_rows.at(b, k) = s;
      }
      x = mul(x, tape.constant(std::move(scale_rows)));
    }
    x = apply_mask(x, masks, 0, Site::input, t);
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
      LstmStepResult r = lstm_step(x, h[l], c[l], bound, l, masks, t);
      h[l] = r.h;
      c[l] = r.c;
      x = r.out;
    }
    const Var logits = cfg.tie_embeddings ? matmul_nt(x, bound.projection) : matmul(x, bound.projection);
    result.steps.push_back({add_row(logits, bound.projection_bias), h.back(), x});
  }
  for (std::size_t l = 0; l < cfg.num_layers; ++l) result.carry.push_back({h[l].value(), c[l].value()});
  return result;
}

}  // namespace fdlab
