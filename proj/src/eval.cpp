#include "fdlab/eval.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "fdlab/data.hpp"
#include "fdlab/rng.hpp"

namespace fdlab {

namespace {

// Probabilities can underflow for extreme logits; score them as the smallest
// normal double instead of producing an infinite loss.
double neg_log(double p) { return -std::log(std::max(p, std::numeric_limits<double>::min())); }

double act_norm_sum(const Tensor& h) {
  const std::size_t d = h.cols();
  double total = 0.0;
  for (std::size_t r = 0; r < h.rows(); ++r) {
    double row = 0.0;
    for (std::size_t k = 0; k < d; ++k) row += h.at(r, k) * h.at(r, k);
    total += row / static_cast<double>(d);
  }
  return total;
}

EvalResult finish(double ce_sum, double act_sum, std::size_t tokens) {
  EvalResult r;
  r.tokens = tokens;
  r.mean_ce = ce_sum / static_cast<double>(tokens);
  r.ppl = std::exp(r.mean_ce);
  r.act_norm = act_sum / static_cast<double>(tokens);
  return r;
}

}  // namespace

EvalResult perplexity(const LmModel& model, const std::vector<int>& ids, std::size_t batch, std::size_t bptt) {
  const BatchStream stream(ids, batch, bptt);
  if (stream.windows() == 0) throw std::invalid_argument("perplexity: split too short for batch size " +
                                                         std::to_string(batch));
  const MaskSet masks = MaskSet::expected(model.config().mask_layout(batch));
  Carry carry = zero_carry(model.config(), batch);
  double ce = 0.0, act = 0.0;
  std::size_t tokens = 0;
  for (std::size_t w = 0; w < stream.windows(); ++w) {
    const BatchStream::Window win = stream.window(w);
    Tape tape;
    tape.set_grad_enabled(false);
    const ForwardResult out = forward(bind(tape, model, masks), win.inputs, masks, carry);
    for (std::size_t t = 0; t < out.steps.size(); ++t) {
      const Tensor probs = softmax_rows(out.steps[t].logits.value());
      const std::size_t m = probs.cols();
      for (std::size_t b = 0; b < batch; ++b) ce += neg_log(probs[b * m + static_cast<std::size_t>(win.targets[t][b])]);
      act += act_norm_sum(out.steps[t].masked_hidden.value());
      tokens += batch;
    }
    carry = out.carry;
  }
  return finish(ce, act, tokens);
}

std::vector<EvalResult> mc_eval_prefixes(const LmModel& model, const std::vector<int>& ids,
                                         const McOptions& options, const std::vector<std::size_t>& prefixes) {
  if (options.samples < 1) throw std::invalid_argument("mc_eval: K must be at least 1");
  for (std::size_t k : prefixes) {
    if (k < 1 || k > options.samples) throw std::invalid_argument("mc_eval: prefix outside 1..K");
  }
  const std::size_t batch = options.batch;
  const BatchStream stream(ids, batch, options.bptt);
  if (stream.windows() == 0) throw std::invalid_argument("mc_eval: split too short for batch size " +
                                                         std::to_string(batch));
  const std::vector<SiteSpec> layout = model.config().mask_layout(batch);
  std::vector<Carry> carries(options.samples, zero_carry(model.config(), batch));
  std::vector<double> ce(prefixes.size(), 0.0);
  double act = 0.0;
  std::size_t tokens = 0;
  auto score = [&](const Tensor& probs, const BatchStream::Window& win, std::size_t t) {
    const std::size_t m = probs.cols();
    double sum = 0.0;
    for (std::size_t b = 0; b < batch; ++b) sum += neg_log(probs[b * m + static_cast<std::size_t>(win.targets[t][b])]);
    return sum;
  };
  for (std::size_t w = 0; w < stream.windows(); ++w) {
    const BatchStream::Window win = stream.window(w);
    const std::size_t len = win.inputs.size();
    std::vector<Tensor> mean(len);
    for (std::size_t k = 0; k < options.samples; ++k) {
      const std::uint64_t draw = options.identical_masks ? 0 : k;
      const MaskSet masks = MaskSet::sample(layout, len, derive_seed(options.seed, {draw, w}));
      Tape tape;
      tape.set_grad_enabled(false);
      const ForwardResult out = forward(bind(tape, model, masks), win.inputs, masks, carries[k]);
      for (std::size_t t = 0; t < len; ++t) {
        const Tensor probs = softmax_rows(out.steps[t].logits.value());
        if (k == 0) mean[t] = Tensor(probs.shape());
        // Running mean, so that K identical draws reproduce a single draw exactly.
        const double inv = 1.0 / static_cast<double>(k + 1);
        for (std::size_t i = 0; i < probs.size(); ++i) mean[t][i] += (probs[i] - mean[t][i]) * inv;
        if (k == 0) act += act_norm_sum(out.steps[t].masked_hidden.value());
      }
      carries[k] = out.carry;
      for (std::size_t p = 0; p < prefixes.size(); ++p) {
        if (prefixes[p] != k + 1) continue;
        for (std::size_t t = 0; t < len; ++t) ce[p] += score(mean[t], win, t);
      }
    }
    if (options.on_step) {
      for (std::size_t t = 0; t < len; ++t) options.on_step(mean[t]);
    }
    tokens += batch * len;
  }
  std::vector<EvalResult> results;
  for (double c : ce) results.push_back(finish(c, act, tokens));
  return results;
}

EvalResult mc_eval(const LmModel& model, const std::vector<int>& ids, const McOptions& options) {
  return mc_eval_prefixes(model, ids, options, {options.samples}).front();
}

}  // namespace fdlab
