#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fdlab/rng.hpp"
#include "fdlab/tensor.hpp"

namespace fdlab {

/// How often a dropout mask is redrawn and what it covers.
enum class Granularity {
  per_step,       ///< fresh mask at every time step
  per_sequence,   ///< one mask per TBPTT window (variational dropout)
  embedding_row,  ///< whole vocabulary rows, once per window
  weight_matrix,  ///< DropConnect on a weight matrix, once per window
};

std::string to_string(Granularity g);
Granularity granularity_from_string(const std::string& s);

/// Inverted dropout: kept entries are scaled by 1/(1-rate), dropped entries are 0.
struct DropScheme {
  double rate = 0.0;
  Granularity granularity = Granularity::per_sequence;

  double keep_value() const { return 1.0 / (1.0 - rate); }
  void validate() const;
  bool operator==(const DropScheme&) const = default;
};

/// Independent Bernoulli(1-rate) keep decisions, one per element of `shape`.
Tensor sample(const DropScheme& scheme, const Shape& shape, Rng& rng);
/// Seeded form; a pure function of its arguments.
Tensor sample(const DropScheme& scheme, const Shape& shape, std::uint64_t seed);

/// Expectation of the inverted-scaled mask, i.e. all ones.
Tensor expected_mask(const DropScheme& scheme, const Shape& shape);

struct WeightedMask {
  Tensor mask;
  double probability = 0.0;
};

inline constexpr std::size_t kMaxEnumerationBits = 20;

/// Every mask over `shape` with its exact probability. Mask index bit k set
/// means element k is dropped. Refuses more than kMaxEnumerationBits bits.
std::vector<WeightedMask> enumerate_all(const DropScheme& scheme, const Shape& shape);

/// Dropout sites of the language model.
enum class Site { embedding, input, hidden, output, weight };

std::string to_string(Site s);

/// One stochastic site: where it is, how it drops, and the shape of one draw.
struct SiteSpec {
  int layer = 0;
  Site site = Site::input;
  DropScheme scheme;
  Shape shape;
};

/// Concrete masks for one forward pass over a window of `steps` time steps.
class MaskSet {
 public:
  struct Entry {
    std::vector<Tensor> masks;  ///< one per step for per_step sites, else one
    bool identity = false;      ///< all masks are all-ones
  };

  MaskSet() = default;

  static MaskSet sample(const std::vector<SiteSpec>& layout, std::size_t steps, std::uint64_t seed);
  /// All-ones masks at every site: the expected-mask (mask-free) network.
  static MaskSet expected(const std::vector<SiteSpec>& layout);

  /// Mask for (layer, site) at time `step`; throws std::out_of_range when absent.
  const Tensor& at(int layer, Site site, std::size_t step) const;
  const Entry& entry(int layer, Site site) const;
  bool contains(int layer, Site site) const;
  void set(int layer, Site site, Entry entry);

  std::uint64_t seed() const { return seed_; }
  std::size_t count_bits() const;

 private:
  std::map<std::pair<int, Site>, Entry> entries_;
  std::uint64_t seed_ = 0;
};

}  // namespace fdlab
