#include "fdlab/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "fdlab/error.hpp"

namespace fdlab {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size() || !std::isfinite(out)) throw FormatError(key + ": '" + v + "' is not a number");
  return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  if (v.empty() || !std::all_of(v.begin(), v.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    throw FormatError(key + ": '" + v + "' is not a non-negative integer");
  }
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw FormatError(key + ": '" + v + "' is out of range");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw FormatError(key + ": '" + v + "' is not a boolean");
}

// Shortest text that parses back to the same double.
std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

struct KeyDef {
  std::string name;
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename Access>
KeyDef make_double(std::string name, Access access) {
  return {name,
          [access](ExperimentConfig& c, const std::string& k, const std::string& v) { access(c) = parse_double(k, v); },
          [access](const ExperimentConfig& c) { return fmt_double(access(c)); }};
}

template <typename Access>
KeyDef make_size(std::string name, Access access) {
  return {name,
          [access](ExperimentConfig& c, const std::string& k, const std::string& v) {
            access(c) = static_cast<std::remove_cvref_t<decltype(access(c))>>(parse_uint(k, v));
          },
          [access](const ExperimentConfig& c) { return std::to_string(access(c)); }};
}

template <typename Access>
KeyDef make_bool(std::string name, Access access) {
  return {name,
          [access](ExperimentConfig& c, const std::string& k, const std::string& v) { access(c) = parse_bool(k, v); },
          [access](const ExperimentConfig& c) { return fmt_bool(access(c)); }};
}

template <typename Access>
KeyDef make_granularity(std::string name, Access access) {
  return {name,
          [access](ExperimentConfig& c, const std::string& k, const std::string& v) {
            try {
              access(c) = granularity_from_string(v);
            } catch (const FormatError& e) {
              throw FormatError(k + ": " + e.what());
            }
          },
          [access](const ExperimentConfig& c) { return to_string(access(c)); }};
}

const std::vector<KeyDef>& key_table() {
  static const std::vector<KeyDef> table = [] {
    std::vector<KeyDef> t;
    // [model]
    t.push_back(make_size("model.vocab_size", [](auto& c) -> auto& { return c.run.model.vocab_size; }));
    t.push_back(make_size("model.embed_dim", [](auto& c) -> auto& { return c.run.model.embed_dim; }));
    t.push_back(make_size("model.hidden_dim", [](auto& c) -> auto& { return c.run.model.hidden_dim; }));
    t.push_back(make_size("model.num_layers", [](auto& c) -> auto& { return c.run.model.num_layers; }));
    t.push_back(make_bool("model.tie_embeddings", [](auto& c) -> auto& { return c.run.model.tie_embeddings; }));
    t.push_back(make_double("model.dropout_embedding", [](auto& c) -> auto& { return c.run.model.embedding.rate; }));
    t.push_back(make_double("model.dropout_input", [](auto& c) -> auto& { return c.run.model.input.rate; }));
    t.push_back(make_double("model.dropout_hidden", [](auto& c) -> auto& { return c.run.model.hidden.rate; }));
    t.push_back(make_double("model.dropout_output", [](auto& c) -> auto& { return c.run.model.output.rate; }));
    t.push_back(make_double("model.dropout_weight", [](auto& c) -> auto& { return c.run.model.weight.rate; }));
    t.push_back(make_granularity("model.input_granularity",
                                 [](auto& c) -> auto& { return c.run.model.input.granularity; }));
    t.push_back(make_granularity("model.hidden_granularity",
                                 [](auto& c) -> auto& { return c.run.model.hidden.granularity; }));
    t.push_back(make_granularity("model.output_granularity",
                                 [](auto& c) -> auto& { return c.run.model.output.granularity; }));
    // [data]
    t.push_back({"data.dir", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.data_dir = v; },
                 [](const ExperimentConfig& c) { return c.data_dir.string(); }});
    t.push_back({"data.mode",
                 [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                   try {
                     c.mode = token_mode_from_string(v);
                   } catch (const FormatError& e) {
                     throw FormatError(k + ": " + e.what());
                   }
                 },
                 [](const ExperimentConfig& c) { return to_string(c.mode); }});
    // [regularizer]
    t.push_back({"regularizer.kinds",
                 [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                   c.run.regularizer.kinds.clear();
                   std::stringstream ss(v);
                   std::string item;
                   while (std::getline(ss, item, ',')) {
                     item = trim(item);
                     if (item.empty()) continue;
                     try {
                       const RegKind kind = reg_kind_from_string(item);
                       if (kind != RegKind::none) c.run.regularizer.kinds.push_back(kind);
                     } catch (const FormatError& e) {
                       throw FormatError(k + ": " + e.what());
                     }
                   }
                 },
                 [](const ExperimentConfig& c) {
                   std::string out;
                   for (RegKind k : c.run.regularizer.kinds) out += (out.empty() ? "" : ",") + to_string(k);
                   return out.empty() ? std::string("none") : out;
                 }});
    t.push_back(make_double("regularizer.kappa", [](auto& c) -> auto& { return c.run.regularizer.kappa; }));
    t.push_back(make_double("regularizer.alpha", [](auto& c) -> auto& { return c.run.regularizer.alpha; }));
    t.push_back(make_double("regularizer.beta", [](auto& c) -> auto& { return c.run.regularizer.beta; }));
    t.push_back(make_double("regularizer.gamma", [](auto& c) -> auto& { return c.run.regularizer.gamma; }));
    // [optimizer]
    t.push_back(make_double("optimizer.lr", [](auto& c) -> auto& { return c.run.optimizer.lr; }));
    t.push_back(make_double("optimizer.weight_decay",
                            [](auto& c) -> auto& { return c.run.optimizer.weight_decay; }));
    t.push_back(make_double("optimizer.clip", [](auto& c) -> auto& { return c.run.optimizer.clip; }));
    t.push_back(make_bool("optimizer.asgd", [](auto& c) -> auto& { return c.run.optimizer.asgd; }));
    t.push_back(make_size("optimizer.nonmono", [](auto& c) -> auto& { return c.run.optimizer.nonmono; }));
    t.push_back(make_size("optimizer.lr_decay_patience",
                          [](auto& c) -> auto& { return c.run.optimizer.lr_decay_patience; }));
    t.push_back(make_double("optimizer.lr_decay_factor",
                            [](auto& c) -> auto& { return c.run.optimizer.lr_decay_factor; }));
    // [run]
    t.push_back(make_size("run.batch_size", [](auto& c) -> auto& { return c.run.batch_size; }));
    t.push_back(make_bool("run.halve_batch", [](auto& c) -> auto& { return c.run.halve_batch; }));
    t.push_back(make_size("run.bptt", [](auto& c) -> auto& { return c.run.bptt; }));
    t.push_back(make_size("run.epochs", [](auto& c) -> auto& { return c.run.epochs; }));
    t.push_back(make_size("run.epoch_tokens", [](auto& c) -> auto& { return c.run.epoch_tokens; }));
    t.push_back(make_size("run.seed", [](auto& c) -> auto& { return c.run.seed; }));
    t.push_back(make_size("run.eval_batch_size", [](auto& c) -> auto& { return c.run.eval_batch_size; }));
    t.push_back({"run.carry",
                 [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                   if (v == "separate") c.run.carry = CarryMode::separate;
                   else if (v == "shared") c.run.carry = CarryMode::shared;
                   else throw FormatError(k + ": expected separate or shared, got '" + v + "'");
                 },
                 [](const ExperimentConfig& c) {
                   return std::string(c.run.carry == CarryMode::separate ? "separate" : "shared");
                 }});
    t.push_back({"run.siamese_masks",
                 [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                   if (v == "independent") c.run.siamese_masks = SiameseMasks::independent;
                   else if (v == "shared") c.run.siamese_masks = SiameseMasks::shared;
                   else throw FormatError(k + ": expected independent or shared, got '" + v + "'");
                 },
                 [](const ExperimentConfig& c) {
                   return std::string(c.run.siamese_masks == SiameseMasks::independent ? "independent" : "shared");
                 }});
    t.push_back(make_double("run.labeled_fraction", [](auto& c) -> auto& { return c.run.labeled_fraction; }));
    t.push_back(make_bool("run.record_wall_time", [](auto& c) -> auto& { return c.run.record_wall_time; }));
    return t;
  }();
  return table;
}

const KeyDef* find_key(const std::string& name) {
  for (const KeyDef& k : key_table())
    if (k.name == name) return &k;
  return nullptr;
}

}  // namespace

KeyValues read_ini(const std::string& text) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  KeyValues out;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw FormatError("config: key '" + section + "' is outside any section");
    for (const auto& [key, node] : body) out[section + "." + key] = trim(node.get_value<std::string>());
  }
  return out;
}

KeyValues read_ini_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return read_ini(ss.str());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const KeyDef& d : key_table()) k.push_back(d.name);
    return k;
  }();
  return keys;
}

ExperimentConfig config_from_values(const KeyValues& values) {
  ExperimentConfig cfg;
  for (const auto& [name, value] : values) {
    const KeyDef* def = find_key(name);
    if (def == nullptr) throw FormatError("unknown config key '" + name + "'");
    def->set(cfg, name, value);
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  try {
    return config_from_values(read_ini_file(path));
  } catch (const FormatError& e) {
    const std::string what = e.what();
    if (what.rfind(path.string(), 0) == 0) throw;
    throw FormatError(path.string() + ": " + what);
  }
}

std::string render_config(const ExperimentConfig& cfg) {
  std::ostringstream os;
  std::string section;
  for (const KeyDef& k : key_table()) {
    const std::string sec = k.name.substr(0, k.name.find('.'));
    if (sec != section) {
      os << (section.empty() ? "" : "\n") << "[" << sec << "]\n";
      section = sec;
    }
    os << k.name.substr(k.name.find('.') + 1) << " = " << k.get(cfg) << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------

namespace {

bool is_integer_literal(const std::string& s) {
  if (s.empty()) return false;
  std::size_t i = s[0] == '-' || s[0] == '+' ? 1 : 0;
  if (i == s.size()) return false;
  return std::all_of(s.begin() + static_cast<std::ptrdiff_t>(i), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

}  // namespace

std::optional<RangeSpec> parse_range(const std::string& raw) {
  const std::string text = trim(raw);
  if (!text.empty() && text.front() == '{') {
    if (text.back() != '}') throw FormatError("range '" + text + "': missing closing brace");
    RangeSpec r;
    r.kind = RangeSpec::Kind::set;
    std::stringstream ss(text.substr(1, text.size() - 2));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) throw FormatError("range '" + text + "': empty member");
      r.members.push_back(item);
    }
    if (r.members.empty()) throw FormatError("range '" + text + "': empty set");
    return r;
  }
  if (text.rfind("U(", 0) == 0) {
    if (text.back() != ')') throw FormatError("range '" + text + "': missing closing parenthesis");
    const std::string inner = text.substr(2, text.size() - 3);
    const auto comma = inner.find(',');
    if (comma == std::string::npos || inner.find(',', comma + 1) != std::string::npos) {
      throw FormatError("range '" + text + "': expected U(lo,hi)");
    }
    const std::string a = trim(inner.substr(0, comma)), b = trim(inner.substr(comma + 1));
    RangeSpec r;
    r.kind = RangeSpec::Kind::uniform;
    r.lo = parse_double("range '" + text + "'", a);
    r.hi = parse_double("range '" + text + "'", b);
    r.integer = is_integer_literal(a) && is_integer_literal(b);
    if (!(r.lo <= r.hi)) throw FormatError("range '" + text + "': lower bound exceeds upper bound");
    return r;
  }
  return std::nullopt;
}

std::string draw(const RangeSpec& range, Rng& rng) {
  if (range.kind == RangeSpec::Kind::set) return range.members[rng.below(range.members.size())];
  if (range.integer) {
    const auto lo = static_cast<long long>(range.lo), hi = static_cast<long long>(range.hi);
    return std::to_string(lo + static_cast<long long>(rng.below(static_cast<std::uint64_t>(hi - lo + 1))));
  }
  return fmt_double(rng.uniform(range.lo, range.hi));
}

GridSpec parse_grid(const KeyValues& values) {
  GridSpec grid;
  for (const auto& [name, value] : values) {
    if (name.rfind("grid.", 0) == 0) {
      const std::string key = name.substr(5);
      if (key == "runs") grid.runs = parse_uint(name, value);
      else if (key == "seed") grid.seed = parse_uint(name, value);
      else if (key == "baseline") grid.baseline = parse_double(name, value);
      else if (key == "dropout_scale") {
        grid.dropout_scale = parse_range(value);
        if (!grid.dropout_scale) grid.dropout_scale = RangeSpec{RangeSpec::Kind::set, {value}, 0, 0, false};
        // Validate members eagerly.
        for (const std::string& m : grid.dropout_scale->members) parse_double(name, m);
      } else {
        throw FormatError("unknown config key '" + name + "'");
      }
      continue;
    }
    if (!find_key(name)) throw FormatError("unknown config key '" + name + "'");
    grid.base[name] = value;
  }
  if (grid.runs == 0) throw FormatError("grid.runs must be positive");
  // Surface bad ranges and bad plain values before any run starts.
  for (std::size_t i = 0; i < std::min<std::size_t>(grid.runs, 8); ++i) grid_run(grid, i);
  return grid;
}

GridSpec load_grid(const std::filesystem::path& path) {
  try {
    return parse_grid(read_ini_file(path));
  } catch (const FormatError& e) {
    const std::string what = e.what();
    if (what.rfind(path.string(), 0) == 0) throw;
    throw FormatError(path.string() + ": " + what);
  }
}

ExperimentConfig grid_run(const GridSpec& grid, std::size_t index) {
  Rng rng(derive_seed(grid.seed, {index, 0x67726964}));
  KeyValues concrete;
  for (const auto& [name, value] : grid.base) {
    const std::optional<RangeSpec> range = parse_range(value);
    concrete[name] = range ? draw(*range, rng) : value;
  }
  if (!grid.base.count("run.seed")) concrete["run.seed"] = std::to_string(derive_seed(grid.seed, {index}) >> 1);
  ExperimentConfig cfg = config_from_values(concrete);
  if (grid.dropout_scale) {
    const double s = std::stod(draw(*grid.dropout_scale, rng));
    for (DropScheme* d : {&cfg.run.model.embedding, &cfg.run.model.input, &cfg.run.model.hidden, &cfg.run.model.output,
                          &cfg.run.model.weight}) {
      d->rate *= s;
      if (d->rate >= 1.0) throw FormatError("dropout_scale " + fmt_double(s) + " pushes a dropout rate to >= 1");
    }
  }
  return cfg;
}

GridSummary summarize_grid(std::vector<double> perplexities, std::optional<double> baseline) {
  GridSummary s;
  s.runs = perplexities.size();
  if (perplexities.empty()) return s;
  std::sort(perplexities.begin(), perplexities.end());
  auto top_mean = [&](std::size_t k) {
    k = std::min(k, perplexities.size());
    return std::accumulate(perplexities.begin(), perplexities.begin() + static_cast<std::ptrdiff_t>(k), 0.0) /
           static_cast<double>(k);
  };
  s.best = perplexities.front();
  s.top5_mean = top_mean(5);
  s.top10_mean = top_mean(10);
  if (baseline) {
    s.beating_baseline = static_cast<std::size_t>(
        std::count_if(perplexities.begin(), perplexities.end(), [&](double p) { return p < *baseline; }));
  }
  return s;
}

}  // namespace fdlab
