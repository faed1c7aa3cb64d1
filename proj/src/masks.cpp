#include "fdlab/masks.hpp"

#include <stdexcept>

#include "fdlab/error.hpp"

namespace fdlab {

std::string to_string(Granularity g) {
  switch (g) {
    case Granularity::per_step: return "per_step";
    case Granularity::per_sequence: return "per_sequence";
    case Granularity::embedding_row: return "embedding_row";
    case Granularity::weight_matrix: return "weight_matrix";
  }
  return "?";
}

Granularity granularity_from_string(const std::string& s) {
  if (s == "per_step") return Granularity::per_step;
  if (s == "per_sequence") return Granularity::per_sequence;
  if (s == "embedding_row") return Granularity::embedding_row;
  if (s == "weight_matrix") return Granularity::weight_matrix;
  throw FormatError("unknown dropout granularity '" + s + "'");
}

std::string to_string(Site s) {
  switch (s) {
    case Site::embedding: return "embedding";
    case Site::input: return "input";
    case Site::hidden: return "hidden";
    case Site::output: return "output";
    case Site::weight: return "weight";
  }
  return "?";
}

void DropScheme::validate() const {
  if (!(rate >= 0.0)) throw std::invalid_argument("dropout rate must be >= 0, got " + std::to_string(rate));
  if (!(rate < 1.0)) throw std::invalid_argument("dropout rate must be < 1, got " + std::to_string(rate));
}

Tensor sample(const DropScheme& scheme, const Shape& shape, Rng& rng) {
  scheme.validate();
  Tensor mask(shape, 1.0);
  if (scheme.rate == 0.0) return mask;
  const double keep = scheme.keep_value();
  for (double& v : mask.data()) v = rng.uniform() < scheme.rate ? 0.0 : keep;
  return mask;
}

Tensor sample(const DropScheme& scheme, const Shape& shape, std::uint64_t seed) {
  Rng rng(seed);
  return sample(scheme, shape, rng);
}

Tensor expected_mask(const DropScheme& scheme, const Shape& shape) {
  scheme.validate();
  return Tensor(shape, 1.0);
}

std::vector<WeightedMask> enumerate_all(const DropScheme& scheme, const Shape& shape) {
  scheme.validate();
  const Tensor proto(shape);
  const std::size_t bits = proto.size();
  if (bits > kMaxEnumerationBits) {
    throw std::length_error("enumerate_all: " + std::to_string(bits) + " mask bits exceed the budget of " +
                            std::to_string(kMaxEnumerationBits));
  }
  const double keep = scheme.keep_value();
  const std::size_t count = std::size_t{1} << bits;
  std::vector<WeightedMask> out;
  out.reserve(count);
  for (std::size_t idx = 0; idx < count; ++idx) {
    WeightedMask wm{Tensor(shape), 1.0};
    for (std::size_t k = 0; k < bits; ++k) {
      const bool dropped = (idx >> k) & 1U;
      wm.mask[k] = dropped ? 0.0 : keep;
      wm.probability *= dropped ? scheme.rate : 1.0 - scheme.rate;
    }
    out.push_back(std::move(wm));
  }
  return out;
}

MaskSet MaskSet::sample(const std::vector<SiteSpec>& layout, std::size_t steps, std::uint64_t seed) {
  MaskSet set;
  set.seed_ = seed;
  for (const SiteSpec& spec : layout) {
    spec.scheme.validate();
    Entry entry;
    entry.identity = spec.scheme.rate == 0.0;
    const std::size_t draws = spec.scheme.granularity == Granularity::per_step ? steps : 1;
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(spec.layer), static_cast<std::uint64_t>(spec.site)}));
    for (std::size_t d = 0; d < draws; ++d) entry.masks.push_back(fdlab::sample(spec.scheme, spec.shape, rng));
    set.entries_[{spec.layer, spec.site}] = std::move(entry);
  }
  return set;
}

MaskSet MaskSet::expected(const std::vector<SiteSpec>& layout) {
  MaskSet set;
  for (const SiteSpec& spec : layout) {
    Entry entry;
    entry.identity = true;
    entry.masks.push_back(expected_mask(spec.scheme, spec.shape));
    set.entries_[{spec.layer, spec.site}] = std::move(entry);
  }
  return set;
}

const MaskSet::Entry& MaskSet::entry(int layer, Site site) const {
  auto it = entries_.find({layer, site});
  if (it == entries_.end()) {
    throw std::out_of_range("no dropout mask for layer " + std::to_string(layer) + " site " + to_string(site));
  }
  return it->second;
}

const Tensor& MaskSet::at(int layer, Site site, std::size_t step) const {
  const Entry& e = entry(layer, site);
  if (e.masks.size() == 1) return e.masks.front();
  if (step >= e.masks.size()) {
    throw std::out_of_range("per-step mask requested for step " + std::to_string(step) + " of " +
                            std::to_string(e.masks.size()));
  }
  return e.masks[step];
}

bool MaskSet::contains(int layer, Site site) const { return entries_.count({layer, site}) != 0; }

void MaskSet::set(int layer, Site site, Entry entry) { entries_[{layer, site}] = std::move(entry); }

std::size_t MaskSet::count_bits() const {
  std::size_t bits = 0;
  for (const auto& [key, e] : entries_) {
    if (e.identity) continue;
    for (const Tensor& m : e.masks) bits += m.size();
  }
  return bits;
}

}  // namespace fdlab
