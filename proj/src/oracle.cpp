#include "fdlab/oracle.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "fdlab/rng.hpp"

namespace fdlab {

std::string TinyProblem::describe() const {
  const LmConfig& c = model.config();
  std::ostringstream os;
  os << "seed=" << seed << " vocab=" << c.vocab_size << " embed=" << c.embed_dim << " hidden=" << c.hidden_dim
     << " layers=" << c.num_layers << " tied=" << (c.tie_embeddings ? 1 : 0) << " T=" << tokens.size()
     << " input=" << c.input.rate << "/" << to_string(c.input.granularity) << " output=" << c.output.rate << "/"
     << to_string(c.output.granularity) << " bits=" << mask_bits(*this);
  return os.str();
}

std::vector<MaskSlot> stochastic_slots(const TinyProblem& problem) {
  std::vector<MaskSlot> slots;
  for (const SiteSpec& spec : problem.model.config().mask_layout(1)) {
    if (spec.scheme.rate == 0.0) continue;
    if (spec.scheme.granularity == Granularity::per_step) {
      for (std::size_t t = 0; t < problem.tokens.size(); ++t) {
        slots.push_back({spec.layer, spec.site, t, true, spec.scheme, spec.shape});
      }
    } else {
      slots.push_back({spec.layer, spec.site, 0, false, spec.scheme, spec.shape});
    }
  }
  return slots;
}

std::size_t mask_bits(const TinyProblem& problem) {
  std::size_t bits = 0;
  for (const MaskSlot& s : stochastic_slots(problem)) bits += Tensor(s.shape).size();
  return bits;
}

Tensor tiny_prediction(const TinyProblem& problem, const MaskSet& masks) {
  Tape tape;
  tape.set_grad_enabled(false);
  const LmModel& model = problem.model;
  const BoundModel bound = bind(tape, model, masks);
  std::vector<std::vector<int>> tokens;
  for (int id : problem.tokens) tokens.push_back({id});
  const ForwardResult out = forward(bound, tokens, masks, zero_carry(model.config(), 1));
  const Tensor& logits = out.steps.back().logits.value();
  return Tensor(Shape{logits.size()}, std::vector<double>(logits.data().begin(), logits.data().end()));
}

OutcomeTable enumerate_outcomes(const TinyProblem& problem) {
  if (problem.tokens.empty()) throw std::invalid_argument("tiny problem has no tokens");
  const std::size_t bits = mask_bits(problem);
  if (bits > kMaxEnumerationBits) {
    throw std::length_error("problem has " + std::to_string(bits) + " mask bits; the enumeration budget is " +
                            std::to_string(kMaxEnumerationBits));
  }
  const std::vector<SiteSpec> layout = problem.model.config().mask_layout(1);
  const std::vector<MaskSlot> slots = stochastic_slots(problem);
  std::vector<std::vector<WeightedMask>> choices;
  for (const MaskSlot& s : slots) choices.push_back(enumerate_all(s.scheme, s.shape));

  OutcomeTable table;
  const MaskSet base = MaskSet::expected(layout);
  table.mean_mask_output = tiny_prediction(problem, base);

  std::vector<std::size_t> digit(slots.size(), 0);
  while (true) {
    MaskSet masks = base;
    double prob = 1.0;
    for (std::size_t k = 0; k < slots.size(); ++k) {
      const MaskSlot& s = slots[k];
      const WeightedMask& wm = choices[k][digit[k]];
      prob *= wm.probability;
      MaskSet::Entry e = masks.entry(s.layer, s.site);
      if (e.identity) {
        e.identity = false;
        e.masks.assign(s.per_step ? problem.tokens.size() : 1, Tensor(s.shape, 1.0));
      }
      e.masks[s.per_step ? s.step : 0] = wm.mask;
      masks.set(s.layer, s.site, std::move(e));
    }
    table.outputs.push_back(tiny_prediction(problem, masks));
    table.probabilities.push_back(prob);

    std::size_t k = 0;
    while (k < digit.size() && ++digit[k] == choices[k].size()) digit[k++] = 0;
    if (k == digit.size()) break;
  }
  return table;
}

double Expectations::two_sum_var() const {
  double s = 0.0;
  for (double v : unit_variance) s += v;
  return 2.0 * s;
}

Expectations expectations_from(const OutcomeTable& table) {
  const std::size_t n = table.outputs.size();
  if (n == 0 || n != table.probabilities.size()) throw std::invalid_argument("empty or inconsistent outcome table");
  const std::size_t m = table.outputs.front().size();

  Expectations ex;
  ex.outcomes = n;
  ex.e_prediction = Tensor(Shape{m});
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t q = 0; q < m; ++q) ex.e_prediction[q] += table.probabilities[k] * table.outputs[k][q];
  }
  ex.unit_variance.assign(m, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    double eld = 0.0;
    for (std::size_t q = 0; q < m; ++q) {
      const double centered = table.outputs[k][q] - ex.e_prediction[q];
      ex.unit_variance[q] += table.probabilities[k] * centered * centered;
      const double diff = table.outputs[k][q] - table.mean_mask_output[q];
      eld += diff * diff;
    }
    ex.r_eld_tilde += table.probabilities[k] * eld;
  }

  if (n <= kExplicitPairLimit) {
    // Ordered pairs, including k == l, exactly as two i.i.d. draws.
    for (std::size_t k = 0; k < n; ++k) {
      double inner = 0.0;
      for (std::size_t l = 0; l < n; ++l) {
        double d2 = 0.0;
        for (std::size_t q = 0; q < m; ++q) {
          const double diff = table.outputs[k][q] - table.outputs[l][q];
          d2 += diff * diff;
        }
        inner += table.probabilities[l] * d2;
      }
      ex.e_pair_sq_dist += table.probabilities[k] * inner;
    }
  } else {
    ex.explicit_pairs = false;
    ex.e_pair_sq_dist = ex.two_sum_var();
  }
  return ex;
}

Expectations exact_expectations(const TinyProblem& problem) { return expectations_from(enumerate_outcomes(problem)); }

// ---------------------------------------------------------------------------
// Second enumerator. Deliberately written against raw parameter arrays with
// plain loops so that it shares no code with the tape, the model forward or
// the mask enumeration above.

namespace {

struct ScalarLayer {
  std::size_t in = 0, out = 0;
  const double* w_ih = nullptr;
  const double* w_hh = nullptr;
  const double* bias = nullptr;
};

struct ScalarNet {
  std::size_t vocab = 0, embed = 0;
  bool tied = false;
  const double* embedding = nullptr;
  const double* decoder = nullptr;  // [final, vocab] when untied
  const double* decoder_bias = nullptr;
  std::vector<ScalarLayer> layers;
};

// Dropout bits of one activation site: either one block of `width` bits shared
// by every step, or one block per step.
struct BitBlock {
  std::size_t offset = 0, width = 0;
  bool per_step = false;
  double rate = 0.0;
  std::size_t bit(std::size_t step, std::size_t unit) const { return offset + (per_step ? step * width : 0) + unit; }
  std::size_t total(std::size_t steps) const { return per_step ? steps * width : width; }
};

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

ScalarNet scalar_view(const LmModel& model) {
  const LmConfig& c = model.config();
  if (c.embedding.rate != 0.0 || c.weight.rate != 0.0) {
    throw std::invalid_argument("reference enumerator supports activation dropout only");
  }
  ScalarNet net;
  net.vocab = c.vocab_size;
  net.embed = c.embed_dim;
  net.tied = c.tie_embeddings;
  net.embedding = model.parameter("embedding").value.ptr();
  std::size_t in = c.embed_dim;
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    const std::string p = "lstm." + std::to_string(l) + ".";
    ScalarLayer layer;
    layer.in = in;
    layer.out = model.parameter(p + "w_hh").value.shape()[0];
    layer.w_ih = model.parameter(p + "w_ih").value.ptr();
    layer.w_hh = model.parameter(p + "w_hh").value.ptr();
    layer.bias = model.parameter(p + "bias").value.ptr();
    net.layers.push_back(layer);
    in = layer.out;
  }
  if (!net.tied) net.decoder = model.parameter("decoder.weight").value.ptr();
  net.decoder_bias = model.parameter("decoder.bias").value.ptr();
  return net;
}

// Final-step logits with activation masks decoded from `assignment`
// (bit set = dropped). Blocks: [0] input, [1..L-1] between layers, [L] output.
std::vector<double> scalar_logits(const ScalarNet& net, const std::vector<int>& tokens,
                                  const std::vector<BitBlock>& blocks, std::uint64_t assignment) {
  auto mask_value = [&](const BitBlock& b, std::size_t step, std::size_t unit) {
    if (b.rate == 0.0) return 1.0;
    const bool dropped = (assignment >> b.bit(step, unit)) & 1U;
    return dropped ? 0.0 : 1.0 / (1.0 - b.rate);
  };

  const std::size_t nl = net.layers.size();
  std::vector<std::vector<double>> h(nl), c(nl);
  for (std::size_t l = 0; l < nl; ++l) {
    h[l].assign(net.layers[l].out, 0.0);
    c[l].assign(net.layers[l].out, 0.0);
  }
  std::vector<double> x;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    x.assign(net.embed, 0.0);
    for (std::size_t k = 0; k < net.embed; ++k) {
      x[k] = net.embedding[static_cast<std::size_t>(tokens[t]) * net.embed + k] * mask_value(blocks[0], t, k);
    }
    for (std::size_t l = 0; l < nl; ++l) {
      const ScalarLayer& L = net.layers[l];
      const std::size_t d = L.out;
      std::vector<double> z(4 * d);
      for (std::size_t g = 0; g < 4 * d; ++g) {
        double acc = L.bias[g];
        for (std::size_t k = 0; k < L.in; ++k) acc += x[k] * L.w_ih[k * 4 * d + g];
        for (std::size_t k = 0; k < d; ++k) acc += h[l][k] * L.w_hh[k * 4 * d + g];
        z[g] = acc;
      }
      std::vector<double> next(d);
      for (std::size_t u = 0; u < d; ++u) {
        const double ig = logistic(z[u]);
        const double fg = logistic(z[d + u]);
        const double gg = std::tanh(z[2 * d + u]);
        const double og = logistic(z[3 * d + u]);
        c[l][u] = fg * c[l][u] + ig * gg;
        h[l][u] = og * std::tanh(c[l][u]);
        next[u] = h[l][u] * mask_value(blocks[l + 1], t, u);
      }
      x = std::move(next);
    }
  }
  std::vector<double> logits(net.vocab);
  for (std::size_t v = 0; v < net.vocab; ++v) {
    double acc = net.decoder_bias[v];
    for (std::size_t k = 0; k < x.size(); ++k) {
      acc += x[k] * (net.tied ? net.embedding[v * net.embed + k] : net.decoder[k * net.vocab + v]);
    }
    logits[v] = acc;
  }
  return logits;
}

}  // namespace

Expectations reference_expectations(const TinyProblem& problem) {
  const LmConfig& cfg = problem.model.config();
  const ScalarNet net = scalar_view(problem.model);
  const std::size_t steps = problem.tokens.size();

  std::vector<BitBlock> blocks;
  std::size_t offset = 0;
  auto add_block = [&](const DropScheme& s, std::size_t width) {
    BitBlock b{offset, width, s.granularity == Granularity::per_step, s.rate};
    if (s.rate != 0.0) offset += b.total(steps);
    blocks.push_back(b);
  };
  add_block(cfg.input, cfg.embed_dim);
  for (std::size_t l = 0; l + 1 < cfg.num_layers; ++l) add_block(cfg.hidden, net.layers[l].out);
  add_block(cfg.output, net.layers.back().out);
  const std::size_t bits = offset;
  if (bits > kMaxEnumerationBits) throw std::length_error("reference enumerator: bit budget exceeded");

  const std::uint64_t count = std::uint64_t{1} << bits;
  std::vector<std::vector<double>> outputs(count);
  std::vector<long double> prob(count);
  for (std::uint64_t a = 0; a < count; ++a) {
    long double p = 1.0L;
    for (const BitBlock& b : blocks) {
      if (b.rate == 0.0) continue;
      for (std::size_t k = 0; k < b.total(steps); ++k) {
        const bool dropped = (a >> (b.offset + k)) & 1U;
        p *= dropped ? static_cast<long double>(b.rate) : 1.0L - static_cast<long double>(b.rate);
      }
    }
    prob[a] = p;
    outputs[a] = scalar_logits(net, problem.tokens, blocks, a);
  }
  std::vector<BitBlock> clean = blocks;
  for (BitBlock& b : clean) b.rate = 0.0;
  const std::vector<double> bar = scalar_logits(net, problem.tokens, clean, 0);

  const std::size_t m = net.vocab;
  std::vector<long double> first(m, 0.0L), second(m, 0.0L);
  long double eld = 0.0L;
  for (std::uint64_t a = 0; a < count; ++a) {
    for (std::size_t q = 0; q < m; ++q) {
      const long double v = outputs[a][q];
      first[q] += prob[a] * v;
      second[q] += prob[a] * v * v;
      const long double d = v - bar[q];
      eld += prob[a] * d * d;
    }
  }
  Expectations ex;
  ex.outcomes = count;
  ex.e_prediction = Tensor(Shape{m});
  ex.unit_variance.assign(m, 0.0);
  for (std::size_t q = 0; q < m; ++q) {
    ex.e_prediction[q] = static_cast<double>(first[q]);
    long double var = 0.0L;
    for (std::uint64_t a = 0; a < count; ++a) {
      const long double d = outputs[a][q] - first[q];
      var += prob[a] * d * d;
    }
    ex.unit_variance[q] = static_cast<double>(var);
  }
  ex.r_eld_tilde = static_cast<double>(eld);
  if (count <= kExplicitPairLimit) {
    long double pair = 0.0L;
    for (std::uint64_t a = 0; a < count; ++a) {
      for (std::uint64_t b = 0; b < count; ++b) {
        long double d2 = 0.0L;
        for (std::size_t q = 0; q < m; ++q) {
          const long double d = static_cast<long double>(outputs[a][q]) - outputs[b][q];
          d2 += d * d;
        }
        pair += prob[a] * prob[b] * d2;
      }
    }
    ex.e_pair_sq_dist = static_cast<double>(pair);
  } else {
    // Raw second moments: E||si - sj||^2 = 2 sum_q (E[p_q^2] - E[p_q]^2).
    ex.explicit_pairs = false;
    long double pair = 0.0L;
    for (std::size_t q = 0; q < m; ++q) pair += 2.0L * (second[q] - first[q] * first[q]);
    ex.e_pair_sq_dist = static_cast<double>(pair);
  }
  return ex;
}

// ---------------------------------------------------------------------------

TinyProblem random_tiny_problem(std::uint64_t seed, std::size_t max_bits, double rate, Granularity granularity) {
  if (max_bits > kMaxEnumerationBits) {
    throw std::length_error("requested " + std::to_string(max_bits) + " mask bits; the enumeration budget is " +
                            std::to_string(kMaxEnumerationBits));
  }
  if (max_bits < 2) throw std::invalid_argument("tiny problems need at least 2 mask bits");
  Rng rng(seed);
  LmConfig cfg;
  std::size_t steps = 1;
  while (true) {
    cfg = LmConfig{};
    cfg.vocab_size = 2 + rng.below(2);
    cfg.embed_dim = 1 + rng.below(4);
    cfg.hidden_dim = 1 + rng.below(4);
    cfg.tie_embeddings = rng.below(2) == 1;
    cfg.input = {rate, granularity};
    cfg.output = {rate, granularity};
    steps = 1 + rng.below(3);
    const std::size_t per_draw = cfg.embed_dim + cfg.final_dim();
    const std::size_t bits = granularity == Granularity::per_step ? steps * per_draw : per_draw;
    if (bits <= max_bits) break;
  }
  LmModel model = LmModel::initialize(cfg, derive_seed(seed, {1}));
  // Unit-scale parameters give predictions that move visibly with the masks.
  for (Parameter& p : model.parameters()) {
    for (double& v : p.value.data()) v = rng.normal();
  }
  TinyProblem problem{std::move(model), {}, seed};
  for (std::size_t t = 0; t < steps; ++t) problem.tokens.push_back(static_cast<int>(rng.below(cfg.vocab_size)));
  return problem;
}

std::vector<TinyProblem> tiny_population(std::size_t count, std::uint64_t seed, std::size_t max_bits) {
  std::vector<TinyProblem> out;
  for (std::size_t i = 0; i < count; ++i) {
    const double rate = i % 2 == 0 ? 0.1 : 0.5;
    const Granularity g = (i / 2) % 2 == 0 ? Granularity::per_step : Granularity::per_sequence;
    out.push_back(random_tiny_problem(derive_seed(seed, {i}), max_bits, rate, g));
  }
  return out;
}

namespace {

double relative_gap(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(a)); }

double enumerator_gap(const Expectations& a, const Expectations& b) {
  double gap = std::max(relative_gap(a.e_pair_sq_dist, b.e_pair_sq_dist), relative_gap(a.r_eld_tilde, b.r_eld_tilde));
  gap = std::max(gap, relative_gap(a.two_sum_var(), b.two_sum_var()));
  for (std::size_t q = 0; q < a.e_prediction.size(); ++q) {
    gap = std::max(gap, relative_gap(a.e_prediction[q], b.e_prediction[q]));
  }
  return gap;
}

}  // namespace

ClaimReport check_remark1(const std::vector<TinyProblem>& problems) {
  ClaimReport report;
  report.claim = "variance_identity";
  for (const TinyProblem& p : problems) {
    const Expectations ex = exact_expectations(p);
    const Expectations ref = reference_expectations(p);
    const double gap = enumerator_gap(ex, ref);
    report.max_enumerator_gap = std::max(report.max_enumerator_gap, gap);

    const double lhs = ex.e_pair_sq_dist;
    const double rhs = ex.two_sum_var();
    const double dev = std::abs(lhs - rhs);
    const double rel = dev / std::max(1.0, std::abs(lhs));
    if (rel >= report.worst_rel_deviation) {
      report.worst_rel_deviation = rel;
      report.worst_seed = p.seed;
    }
    report.worst_abs_deviation = std::max(report.worst_abs_deviation, dev);
    ++report.checked;
    if (rel > 1e-9) report.violations.push_back({p.seed, p.describe(), lhs, rhs});
    if (gap > 1e-12) report.violations.push_back({p.seed, "enumerator mismatch: " + p.describe(), lhs, ref.e_pair_sq_dist});
  }
  return report;
}

ClaimReport check_prop1(const std::vector<TinyProblem>& problems) {
  ClaimReport report;
  report.claim = "eld_bound";
  for (const TinyProblem& p : problems) {
    const Expectations ex = exact_expectations(p);
    const double lhs = ex.e_pair_sq_dist;
    const double rhs = 4.0 * ex.r_eld_tilde;
    const double excess = lhs - rhs;
    if (excess > report.worst_abs_deviation || report.checked == 0) {
      report.worst_abs_deviation = std::max(excess, 0.0);
      report.worst_rel_deviation = std::max(excess, 0.0) / std::max(1.0, std::abs(rhs));
      report.worst_seed = p.seed;
    }
    if (ex.r_eld_tilde > 0.0) report.max_ratio = std::max(report.max_ratio, lhs / ex.r_eld_tilde);
    ++report.checked;
    if (lhs > rhs + 1e-12) report.violations.push_back({p.seed, p.describe(), lhs, rhs});
  }
  return report;
}

McReport mc_estimator_consistency(const TinyProblem& problem, std::size_t samples, std::uint64_t seed) {
  if (samples == 0) throw std::invalid_argument("mc_estimator_consistency needs at least one sample");
  McReport report;
  report.samples = samples;
  report.seed = seed;
  report.exact = exact_expectations(problem).e_pair_sq_dist;
  const std::vector<SiteSpec> layout = problem.model.config().mask_layout(1);
  const std::size_t steps = problem.tokens.size();
  double mean = 0.0, m2 = 0.0;
  for (std::size_t k = 0; k < samples; ++k) {
    const Tensor pi = tiny_prediction(problem, MaskSet::sample(layout, steps, derive_seed(seed, {k, 0})));
    const Tensor pj = tiny_prediction(problem, MaskSet::sample(layout, steps, derive_seed(seed, {k, 1})));
    double r = 0.0;
    for (std::size_t q = 0; q < pi.size(); ++q) r += (pi[q] - pj[q]) * (pi[q] - pj[q]);
    const double delta = r - mean;
    mean += delta / static_cast<double>(k + 1);
    m2 += delta * (r - mean);
  }
  report.mean = mean;
  const double var = samples > 1 ? m2 / static_cast<double>(samples - 1) : 0.0;
  report.std_error = std::sqrt(var / static_cast<double>(samples));
  const double dev = std::abs(mean - report.exact);
  if (report.std_error > 0.0) {
    report.z = dev / report.std_error;
    report.passed = samples > 1 && report.z <= 5.0;
  } else {
    report.passed = dev <= 1e-12 * std::max(1.0, std::abs(report.exact));
  }
  return report;
}

}  // namespace fdlab
