#include "car/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"

#include "car/error.hpp"
#include "car/io.hpp"
#include "car/rng.hpp"

namespace car::data {

namespace {

constexpr double kMeanRadius = 3.0;

// Decorrelates the noise stream from the means stream for equal seeds.
std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

double row_norm(const Matrix& m, std::size_t r) { return norm2(m.row(r)); }

}  // namespace

std::size_t LabeledDataset::min_class_count() const {
  if (class_counts.empty()) return 0;
  return *std::min_element(class_counts.begin(), class_counts.end());
}

std::vector<double> LabeledDataset::class_frequencies() const {
  std::vector<double> f(class_counts.size(), 0.0);
  const double m = static_cast<double>(size());
  for (std::size_t j = 0; j < f.size(); ++j) f[j] = static_cast<double>(class_counts[j]) / m;
  return f;
}

void LabeledDataset::refresh_statistics() {
  class_counts.assign(static_cast<std::size_t>(k), 0);
  for (int y : labels) ++class_counts.at(static_cast<std::size_t>(y));
  b_max = 0.0;
  for (std::size_t r = 0; r < features.rows(); ++r) b_max = std::max(b_max, row_norm(features, r));
}

void LabeledDataset::check_invariants() const {
  if (features.rows() != labels.size()) {
    throw ParameterError("dataset: feature rows differ from label count");
  }
  std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
  for (int y : labels) {
    if (y < 0 || y >= k) throw ParameterError("dataset: label out of range");
    ++counts[static_cast<std::size_t>(y)];
  }
  if (counts != class_counts) throw ParameterError("dataset: class_counts disagree with labels");
  double b = 0.0;
  for (std::size_t r = 0; r < features.rows(); ++r) b = std::max(b, row_norm(features, r));
  if (std::abs(b - b_max) > 1e-12) throw ParameterError("dataset: b_max is stale");
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> rows) const {
  LabeledDataset out;
  out.k = k;
  out.provenance = provenance;
  out.imbalance_factor = imbalance_factor;
  out.features = Matrix(rows.size(), dim());
  out.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = features.row(rows[i]);
    std::copy(src.begin(), src.end(), out.features.values().begin() + static_cast<std::ptrdiff_t>(i * dim()));
    out.labels.push_back(labels[rows[i]]);
  }
  out.refresh_statistics();
  return out;
}

LongTailProfile longtail_profile(int k, std::size_t n_max, double imbalance_factor) {
  if (k < 2) throw ParameterError("profile: k must be >= 2");
  if (!(imbalance_factor >= 1.0) || !std::isfinite(imbalance_factor)) {
    throw ParameterError("profile: imbalance factor must be >= 1, got " +
                         io::format_double(imbalance_factor));
  }
  LongTailProfile p;
  p.imbalance_factor = imbalance_factor;
  for (int j = 0; j < k; ++j) {
    const double exponent = -static_cast<double>(j) / static_cast<double>(k - 1);
    const double target = static_cast<double>(n_max) * std::pow(imbalance_factor, exponent);
    p.counts.push_back(static_cast<std::size_t>(std::floor(target + 0.5)));
  }
  if (p.counts.back() == 0) {
    throw ProfileError("profile: smallest class rounds to 0 samples (n_max=" +
                       std::to_string(n_max) + ", IF=" + io::format_double(imbalance_factor) + ")");
  }
  return p;
}

std::vector<std::vector<double>> class_means(int k, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<double>> means;
  for (int j = 0; j < k; ++j) {
    std::vector<double> mu(d);
    double n = 0.0;
    while (n == 0.0) {
      for (double& x : mu) x = rng.normal();
      n = norm2(mu);
    }
    for (double& x : mu) x *= kMeanRadius / n;
    means.push_back(std::move(mu));
  }
  return means;
}

LabeledDataset synth_longtail_gaussians(const SynthParams& params) {
  if (params.k < 2) throw ParameterError("synth: k must be >= 2");
  if (params.d < 1) throw ParameterError("synth: d must be >= 1");
  if (params.n_max < static_cast<std::size_t>(params.k)) {
    throw ParameterError("synth: n_max must be >= k");
  }
  if (!(params.cluster_spread >= 0.0)) throw ParameterError("synth: spread must be >= 0");
  const LongTailProfile profile = longtail_profile(params.k, params.n_max, params.imbalance_factor);
  const auto means = class_means(params.k, params.d, params.seed);

  const std::size_t m = std::accumulate(profile.counts.begin(), profile.counts.end(), std::size_t{0});
  LabeledDataset ds;
  ds.k = params.k;
  ds.provenance = Provenance::kSynthetic;
  ds.imbalance_factor = params.imbalance_factor;
  ds.features = Matrix(m, params.d);
  ds.labels.reserve(m);

  Rng rng(mix_seed(params.sample_seed.value_or(params.seed)));
  std::size_t row = 0;
  for (int j = 0; j < params.k; ++j) {
    for (std::size_t s = 0; s < profile.counts[static_cast<std::size_t>(j)]; ++s, ++row) {
      for (std::size_t c = 0; c < params.d; ++c) {
        ds.features(row, c) = means[static_cast<std::size_t>(j)][c] + params.cluster_spread * rng.normal();
      }
      ds.labels.push_back(j);
    }
  }
  ds.refresh_statistics();
  return ds;
}

LabeledDataset parse_csv(std::string_view text, std::string_view source) {
  const std::string where(source);
  LabeledDataset ds;
  ds.provenance = Provenance::kIngested;
  std::vector<double> values;
  std::size_t dim = 0;
  std::size_t line_no = 0;
  bool seen_row = false;

  for (auto line : io::split(text, '\n')) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    const auto fields = io::split(line);
    if (!seen_row && line_no == 1 && fields[0].starts_with("label")) continue;

    if (fields.size() < 2) {
      throw IngestionError(where + ":" + std::to_string(line_no) +
                           ": expected label and at least one feature");
    }
    if (!seen_row) {
      dim = fields.size() - 1;
      seen_row = true;
    } else if (fields.size() - 1 != dim) {
      throw IngestionError(where + ":" + std::to_string(line_no) + ": ragged row with " +
                           std::to_string(fields.size() - 1) + " features, expected " +
                           std::to_string(dim));
    }
    try {
      const long long y = io::parse_int(fields[0]);
      if (y < 0 || y > 1'000'000) throw FormatError("label out of range");
      ds.labels.push_back(static_cast<int>(y));
      for (std::size_t c = 1; c < fields.size(); ++c) {
        const double v = io::parse_double(fields[c]);
        if (!std::isfinite(v)) throw FormatError("non-finite feature");
        values.push_back(v);
      }
    } catch (const FormatError& e) {
      throw IngestionError(where + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (ds.labels.empty()) throw IngestionError(where + ": empty dataset");

  const int k = *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
  std::vector<bool> seen(static_cast<std::size_t>(k), false);
  for (int y : ds.labels) seen[static_cast<std::size_t>(y)] = true;
  for (int j = 0; j < k; ++j) {
    if (!seen[static_cast<std::size_t>(j)]) {
      throw IngestionError(where + ": non-contiguous labels, class " + std::to_string(j) +
                           " is missing below max label " + std::to_string(k - 1));
    }
  }
  ds.k = k;
  ds.features = Matrix(ds.labels.size(), dim, std::move(values));
  ds.refresh_statistics();
  const std::size_t lo = ds.min_class_count();
  const std::size_t hi = *std::max_element(ds.class_counts.begin(), ds.class_counts.end());
  ds.imbalance_factor = static_cast<double>(hi) / static_cast<double>(lo);
  return ds;
}

LabeledDataset ingest_csv(const std::filesystem::path& path) {
  return parse_csv(io::read_text_file(path), path.string());
}

std::string to_csv(const LabeledDataset& ds) {
  std::string out = "label";
  for (std::size_t c = 0; c < ds.dim(); ++c) out += ",f" + std::to_string(c + 1);
  out += '\n';
  for (std::size_t r = 0; r < ds.size(); ++r) {
    out += std::to_string(ds.labels[r]);
    for (double x : ds.features.row(r)) {
      out += ',';
      out += io::format_double(x);
    }
    out += '\n';
  }
  return out;
}

void export_csv(const LabeledDataset& ds, const std::filesystem::path& path) {
  io::write_text_file(path, to_csv(ds));
}

LabeledDataset make_longtail_subset(const LabeledDataset& ds, double imbalance_factor,
                                    std::uint64_t seed) {
  if (ds.k < 2) throw ParameterError("longtail subset: need k >= 2");
  std::vector<int> ranked(static_cast<std::size_t>(ds.k));
  std::iota(ranked.begin(), ranked.end(), 0);
  std::stable_sort(ranked.begin(), ranked.end(), [&](int a, int b) {
    return ds.class_counts[static_cast<std::size_t>(a)] > ds.class_counts[static_cast<std::size_t>(b)];
  });
  const std::size_t n_max = ds.class_counts[static_cast<std::size_t>(ranked[0])];
  const LongTailProfile profile = longtail_profile(ds.k, n_max, imbalance_factor);

  std::vector<std::vector<std::size_t>> rows_of(static_cast<std::size_t>(ds.k));
  for (std::size_t r = 0; r < ds.size(); ++r) rows_of[static_cast<std::size_t>(ds.labels[r])].push_back(r);

  Rng rng(seed);
  std::vector<std::size_t> keep;
  for (std::size_t rank = 0; rank < ranked.size(); ++rank) {
    auto& rows = rows_of[static_cast<std::size_t>(ranked[rank])];
    const std::size_t want = profile.counts[rank];
    if (rows.size() < want) {
      throw ProfileError("longtail subset: class " + std::to_string(ranked[rank]) + " has " +
                         std::to_string(rows.size()) + " samples, profile needs " +
                         std::to_string(want));
    }
    rng.shuffle(rows);
    keep.insert(keep.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(want));
  }
  std::sort(keep.begin(), keep.end());
  LabeledDataset out = ds.subset(keep);
  out.imbalance_factor = imbalance_factor;
  return out;
}

ClassSplit split_head_medium_tail(std::span<const std::size_t> class_counts,
                                  std::size_t head_min, std::size_t tail_max) {
  if (!(head_min > tail_max && tail_max >= 1)) {
    throw ParameterError("split: need head_min > tail_max >= 1");
  }
  ClassSplit s;
  for (std::size_t j = 0; j < class_counts.size(); ++j) {
    const int id = static_cast<int>(j);
    if (class_counts[j] > head_min) {
      s.head.push_back(id);
    } else if (class_counts[j] < tail_max) {
      s.tail.push_back(id);
    } else {
      s.medium.push_back(id);
    }
  }
  return s;
}

std::vector<std::vector<std::size_t>> batch_iterator(std::size_t m, std::size_t batch_size,
                                                     std::uint64_t epoch_seed) {
  if (batch_size < 1) throw ParameterError("batch_iterator: batch_size must be >= 1");
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(epoch_seed);
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < m; start += batch_size) {
    const std::size_t end = std::min(m, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

std::string profile_json(const LabeledDataset& ds) {
  nlohmann::ordered_json j;
  j["k"] = ds.k;
  j["m"] = ds.size();
  j["imbalance_factor"] = ds.imbalance_factor;
  j["counts"] = ds.class_counts;
  j["b_max"] = ds.b_max;
  return j.dump(2) + "\n";
}

}  // namespace car::data
