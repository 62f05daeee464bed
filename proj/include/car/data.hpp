#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "car/matrix.hpp"

namespace car::data {

enum class Provenance { kSynthetic, kIngested };

struct LabeledDataset {
  Matrix features;  // m×d
  std::vector<int> labels;
  int k = 0;
  std::vector<std::size_t> class_counts;
  double b_max = 0.0;  // largest row ℓ2 norm
  Provenance provenance = Provenance::kSynthetic;
  double imbalance_factor = 1.0;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return features.cols(); }
  std::size_t min_class_count() const;
  std::vector<double> class_frequencies() const;

  // Recomputes class_counts and b_max from features/labels.
  void refresh_statistics();
  // Throws ParameterError if counts or b_max disagree with the data.
  void check_invariants() const;

  LabeledDataset subset(std::span<const std::size_t> rows) const;
};

// n_j = round_half_up(n_max · IF^(−j/(K−1))).
struct LongTailProfile {
  double imbalance_factor = 1.0;
  std::vector<std::size_t> counts;
};
LongTailProfile longtail_profile(int k, std::size_t n_max, double imbalance_factor);

struct SynthParams {
  int k = 10;
  std::size_t d = 2;
  std::size_t n_max = 500;
  double imbalance_factor = 100.0;
  double cluster_spread = 1.0;
  std::uint64_t seed = 0;
  // Seed for the per-sample noise; defaults to `seed`. Two datasets with the
  // same `seed` share their class means, so a held-out split can be drawn by
  // varying only this.
  std::optional<std::uint64_t> sample_seed;
};

// Class means placed on the radius-3 sphere in R^d (directions drawn from
// the seed); isotropic Gaussian samples; class j receives n_j samples.
LabeledDataset synth_longtail_gaussians(const SynthParams& params);
std::vector<std::vector<double>> class_means(int k, std::size_t d, std::uint64_t seed);

// CSV with rows "label,f1,...,fd" and an optional header line starting with
// "label". Errors name the offending line.
LabeledDataset ingest_csv(const std::filesystem::path& path);
LabeledDataset parse_csv(std::string_view text, std::string_view source = "<memory>");
std::string to_csv(const LabeledDataset& ds);
void export_csv(const LabeledDataset& ds, const std::filesystem::path& path);

// Classes ranked by original count (descending, ties by index) receive the
// exponential profile anchored at the largest count; each is sampled without
// replacement. Labels keep their original ids and rows keep their order.
LabeledDataset make_longtail_subset(const LabeledDataset& ds, double imbalance_factor,
                                    std::uint64_t seed);

struct ClassSplit {
  std::vector<int> head;
  std::vector<int> medium;
  std::vector<int> tail;
};
// head: count > head_min; tail: count < tail_max; medium: the rest.
ClassSplit split_head_medium_tail(std::span<const std::size_t> class_counts,
                                  std::size_t head_min = 100, std::size_t tail_max = 20);

// Seeded shuffle of 0..m−1 cut into consecutive batches; the last one may be
// short.
std::vector<std::vector<std::size_t>> batch_iterator(std::size_t m, std::size_t batch_size,
                                                     std::uint64_t epoch_seed);

// {"k":..,"m":..,"imbalance_factor":..,"counts":[..],"b_max":..}
std::string profile_json(const LabeledDataset& ds);

}  // namespace car::data
