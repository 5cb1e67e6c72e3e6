// Copyright 2026 The Prunelab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Pruning-quality metrics: perplexity, normalized layer-wise pruning error
// and SNR in decibels.

#pragma once

#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "prunelab/numerics.hpp"
#include "prunelab/toymodel.hpp"

namespace prunelab {

struct LayerMetric {
  std::size_t layer = 0;
  double value = 0.0;
  bool infinite = false;
};

/// exp(mean next-token NLL) over every position of every sequence.
inline double perplexity(const ToyModel& model, const std::vector<Sequence>& corpus) {
  if (corpus.empty()) throw ArgumentError("perplexity: empty corpus");
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& seq : corpus) {
    for (double v : negative_log_likelihood(model, seq)) total += v;
    count += seq.size() - 1;
  }
  return std::exp(total / static_cast<double>(count));
}

namespace detail {

inline void check_trace_pair(const HiddenTrace& full, const HiddenTrace& pruned) {
  if (full.hidden.size() != pruned.hidden.size())
    throw ArgumentError("pruning metrics: layer count mismatch");
  for (std::size_t k = 0; k < full.hidden.size(); ++k)
    if (full.hidden[k].rows() != pruned.hidden[k].rows() ||
        full.hidden[k].cols() != pruned.hidden[k].cols())
      throw ArgumentError("pruning metrics: shape mismatch at layer " + std::to_string(k));
}

// μ = mean over tokens of ‖h_i‖₂.
inline double mean_vector_norm(const Matrix& h) {
  double s = 0.0;
  for (std::size_t i = 0; i < h.rows(); ++i) s += norm2(h.row(i));
  return h.rows() ? s / static_cast<double>(h.rows()) : 0.0;
}

struct LayerPowers {
  double signal;  // (1/Nd) Σ (h/μ)²
  double error;   // (1/Nd) Σ ((h − h̃)/μ)²
};

inline LayerPowers layer_powers(const Matrix& full, const Matrix& pruned, std::size_t layer) {
  const double mu = mean_vector_norm(full);
  if (!(mu > 0.0))
    throw NumericError("pruning metrics: zero mean hidden-state norm at layer " + std::to_string(layer));
  double sig = 0.0;
  double err = 0.0;
  auto f = full.data();
  auto p = pruned.data();
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double a = f[i] / mu;
    const double e = (f[i] - p[i]) / mu;
    sig += a * a;
    err += e * e;
  }
  const double nd = static_cast<double>(f.size());
  return {sig / nd, err / nd};
}

}  // namespace detail

/// Normalized pruning error per layer; μ is taken from the full model.
inline std::vector<LayerMetric> pruning_error(const HiddenTrace& full, const HiddenTrace& pruned) {
  detail::check_trace_pair(full, pruned);
  std::vector<LayerMetric> out;
  for (std::size_t k = 0; k < full.hidden.size(); ++k)
    out.push_back({k, detail::layer_powers(full.hidden[k], pruned.hidden[k], k).error, false});
  return out;
}

struct SnrResult {
  std::vector<LayerMetric> layers;
  /// Mean over finite layers; +inf when every layer is error-free.
  double model_average = 0.0;
  std::vector<std::size_t> infinite_layers;
};

inline SnrResult snr(const HiddenTrace& full, const HiddenTrace& pruned) {
  detail::check_trace_pair(full, pruned);
  SnrResult out;
  double sum = 0.0;
  std::size_t finite = 0;
  for (std::size_t k = 0; k < full.hidden.size(); ++k) {
    const auto pw = detail::layer_powers(full.hidden[k], pruned.hidden[k], k);
    if (pw.error == 0.0) {
      out.layers.push_back({k, std::numeric_limits<double>::infinity(), true});
      out.infinite_layers.push_back(k);
      continue;
    }
    const double db = 10.0 * std::log10(pw.signal / pw.error);
    out.layers.push_back({k, db, false});
    sum += db;
    ++finite;
  }
  out.model_average = finite ? sum / static_cast<double>(finite)
                             : std::numeric_limits<double>::infinity();
  return out;
}

inline double mean_value(const std::vector<LayerMetric>& metrics) {
  double s = 0.0;
  for (const auto& m : metrics) s += m.value;
  return metrics.empty() ? 0.0 : s / static_cast<double>(metrics.size());
}

/// Locale-independent shortest-roundtrip-ish rendering used in every report.
inline std::string format_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

/// One CSV row: run_id, layer (-1 for model-level values), metric, value.
struct MetricRow {
  std::string run_id;
  long layer = -1;
  std::string metric;
  double value = 0.0;
};

inline void write_metrics_csv(std::ostream& os, const std::vector<MetricRow>& rows,
                              const std::string& config_hash) {
  os << "# config=" << config_hash << '\n';
  os << "run_id,layer,metric,value\n";
  for (const auto& r : rows)
    os << r.run_id << ',' << r.layer << ',' << r.metric << ',' << format_number(r.value) << '\n';
}

}  // namespace prunelab
