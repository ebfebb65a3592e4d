#include "bapc/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>

#include "bapc/rng.hpp"

namespace bapc {

void SyntheticSpec::validate() const {
  if (num_utterances < 1) throw std::invalid_argument("synthetic spec: num_utterances must be >= 1");
  if (min_len < 1 || max_len < min_len) throw std::invalid_argument("synthetic spec: need 1 <= min_len <= max_len");
  if (dim < 1) throw std::invalid_argument("synthetic spec: dim must be >= 1");
  if (num_classes < 2) throw std::invalid_argument("synthetic spec: num_classes must be >= 2");
  if (ar_order < 1) throw std::invalid_argument("synthetic spec: ar_order must be >= 1");
  if (!(mean_dwell >= 1.0)) throw std::invalid_argument("synthetic spec: mean_dwell must be >= 1");
  if (!(noise >= 0.0)) throw std::invalid_argument("synthetic spec: noise must be >= 0");
  if (!(min_radius > 0.0 && min_radius <= max_radius && max_radius < 1.0)) {
    throw std::invalid_argument("synthetic spec: need 0 < min_radius <= max_radius < 1");
  }
  if (coefficients.empty()) {
    if (ar_order != 2) throw std::invalid_argument("synthetic spec: drawn processes are AR(2); give coefficients");
    return;
  }
  if (coefficients.size() != static_cast<std::size_t>(num_classes)) {
    throw std::invalid_argument("synthetic spec: coefficients must list every class");
  }
  for (std::size_t c = 0; c < coefficients.size(); ++c) {
    if (coefficients[c].size() != static_cast<std::size_t>(dim)) {
      throw std::invalid_argument("synthetic spec: class " + std::to_string(c) + " needs one process per dimension");
    }
    for (std::size_t d = 0; d < coefficients[c].size(); ++d) {
      const auto& a = coefficients[c][d];
      if (a.size() != static_cast<std::size_t>(ar_order)) {
        throw std::invalid_argument("synthetic spec: process order differs from ar_order");
      }
      if (!ar_is_stable(a)) {
        throw std::invalid_argument("unstable AR process for class " + std::to_string(c) + ", dim " +
                                    std::to_string(d));
      }
    }
  }
}

bool ar_is_stable(std::span<const double> coeffs) {
  // Step-down recursion on the reflection coefficients of
  // A(z) = 1 - a_1 z^-1 - ... - a_p z^-p.
  std::vector<double> a(coeffs.begin(), coeffs.end());
  for (double v : a) {
    if (!std::isfinite(v)) return false;
  }
  for (std::size_t p = a.size(); p > 0; --p) {
    const double k = a[p - 1];
    if (!(std::abs(k) < 1.0)) return false;
    std::vector<double> next(p - 1);
    const double denom = 1.0 - k * k;
    for (std::size_t i = 0; i + 1 < p; ++i) next[i] = (a[i] + k * a[p - 2 - i]) / denom;
    a = std::move(next);
  }
  return true;
}

double ar_unit_innovation(std::span<const double> coeffs) {
  if (!ar_is_stable(coeffs)) throw std::invalid_argument("unstable AR process");
  // Stationary variance per unit innovation = sum of squared impulse response.
  const std::size_t p = coeffs.size();
  std::vector<double> psi(p, 0.0);  // most recent first
  double energy = 1.0;
  double last = 1.0;
  psi[0] = 1.0;
  for (int k = 1; k < 100000; ++k) {
    double next = 0.0;
    for (std::size_t i = 0; i < p; ++i) next += coeffs[i] * psi[i];
    for (std::size_t i = p - 1; i > 0; --i) psi[i] = psi[i - 1];
    psi[0] = next;
    energy += next * next;
    last = std::abs(next);
    if (k > 50 && last < 1e-14) break;
  }
  return 1.0 / std::sqrt(energy);
}

namespace {

// Lower Cholesky factor of the p x p autocorrelation matrix of a stationary
// AR(p) process, state ordered most recent first.
std::vector<double> autocorrelation_cholesky(std::span<const double> coeffs) {
  const std::size_t p = coeffs.size();
  std::vector<double> psi{1.0};
  for (std::size_t k = 1; k < 200000; ++k) {
    double next = 0.0;
    for (std::size_t i = 0; i < p && i < k; ++i) next += coeffs[i] * psi[k - 1 - i];
    psi.push_back(next);
    if (k > 50 && std::abs(next) < 1e-16 && std::abs(psi[k - 1]) < 1e-16) break;
  }
  std::vector<double> gamma(p, 0.0);
  for (std::size_t k = 0; k < p; ++k) {
    for (std::size_t j = 0; j + k < psi.size(); ++j) gamma[k] += psi[j] * psi[j + k];
  }
  std::vector<double> L(p * p, 0.0);
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double acc = gamma[i > j ? i - j : j - i] / gamma[0];
      for (std::size_t k = 0; k < j; ++k) acc -= L[i * p + k] * L[j * p + k];
      L[i * p + j] = i == j ? std::sqrt(std::max(acc, 1e-300)) : acc / L[j * p + j];
    }
  }
  return L;
}

// h <- L_to * L_from^{-1} * h
void recolor(std::vector<double>& h, const std::vector<double>& L_from, const std::vector<double>& L_to) {
  const std::size_t p = h.size();
  std::vector<double> w(p);
  for (std::size_t i = 0; i < p; ++i) {
    double acc = h[i];
    for (std::size_t k = 0; k < i; ++k) acc -= L_from[i * p + k] * w[k];
    w[i] = acc / L_from[i * p + i];
  }
  for (std::size_t i = 0; i < p; ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k <= i; ++k) acc += L_to[i * p + k] * w[k];
    h[i] = acc;
  }
}

}  // namespace

ArCoefficients draw_coefficients(const SyntheticSpec& spec) {
  Rng rng = make_rng(spec.seed, "ar_coefficients");
  ArCoefficients out(static_cast<std::size_t>(spec.num_classes));
  for (auto& cls : out) {
    cls.resize(static_cast<std::size_t>(spec.dim));
    for (auto& a : cls) {
      // Complex pole pair r e^{+-i theta}: x_t = 2 r cos(theta) x_{t-1} - r^2 x_{t-2}.
      const double r = uniform(rng, spec.min_radius, spec.max_radius);
      const double theta = uniform(rng, 0.1 * std::numbers::pi, 0.9 * std::numbers::pi);
      a = {2.0 * r * std::cos(theta), -r * r};
    }
  }
  return out;
}

SyntheticCorpus generate_corpus(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticCorpus corpus;
  corpus.coefficients = spec.coefficients.empty() ? draw_coefficients(spec) : spec.coefficients;
  const auto C = static_cast<std::size_t>(spec.num_classes);
  const auto D = static_cast<std::size_t>(spec.dim);
  const auto p = static_cast<std::size_t>(spec.ar_order);

  std::vector<std::vector<double>> sigma(C, std::vector<double>(D));
  std::vector<std::vector<std::vector<double>>> chol(C, std::vector<std::vector<double>>(D));
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t d = 0; d < D; ++d) {
      sigma[c][d] = spec.noise * ar_unit_innovation(corpus.coefficients[c][d]);
      chol[c][d] = autocorrelation_cholesky(corpus.coefficients[c][d]);
    }
  }
  const double switch_prob = 1.0 / spec.mean_dwell;

  const int digits = static_cast<int>(std::to_string(spec.num_utterances - 1).size());
  for (int u = 0; u < spec.num_utterances; ++u) {
    Rng rng = make_rng(spec.seed, "utterance", static_cast<std::uint64_t>(u));
    const auto span_len = static_cast<std::size_t>(spec.max_len - spec.min_len + 1);
    const std::size_t T =
        static_cast<std::size_t>(spec.min_len) +
        std::min(span_len - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(span_len)));

    std::string id = std::to_string(u);
    id = "utt" + std::string(static_cast<std::size_t>(std::max(0, digits - static_cast<int>(id.size()))), '0') + id;
    FeatureSequence seq;
    seq.utterance_id = id;
    seq.frames = Tensor<float>::matrix(T, D);
    AlignmentLabels lab;
    lab.utterance_id = id;
    lab.labels.resize(T);

    // history[d][i] = x_{t-1-i}
    std::vector<std::vector<double>> history(D, std::vector<double>(p));
    for (auto& h : history) {
      for (double& v : h) v = standard_normal(rng);
    }
    auto cls = std::min(C - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(C)));
    for (std::size_t t = 0; t < T; ++t) {
      if (t > 0 && uniform01(rng) < switch_prob) {
        // Move to a different class, uniformly among the others.
        const auto step = 1 + std::min(C - 2, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(C - 1)));
        const std::size_t next = (cls + step) % C;
        // Carrying raw history from one stable process into another can pump
        // energy without bound; re-expressing it in the new process's
        // stationary coordinates keeps the most recent sample and the scale.
        for (std::size_t d = 0; d < D; ++d) recolor(history[d], chol[cls][d], chol[next][d]);
        cls = next;
      }
      lab.labels[t] = static_cast<std::int32_t>(cls);
      for (std::size_t d = 0; d < D; ++d) {
        const auto& a = corpus.coefficients[cls][d];
        auto& h = history[d];
        double x = 0.0;
        for (std::size_t i = 0; i < p; ++i) x += a[i] * h[i];
        const double e = standard_normal(rng);
        x += sigma[cls][d] * e;
        for (std::size_t i = p - 1; i > 0; --i) h[i] = h[i - 1];
        h[0] = x;
        seq.frames(t, d) = static_cast<float>(x);
      }
    }
    corpus.features.push_back(std::move(seq));
    corpus.labels.push_back(std::move(lab));
  }
  return corpus;
}

std::pair<SyntheticCorpus, SyntheticCorpus> split_corpus(const SyntheticCorpus& corpus, std::size_t n) {
  if (n > corpus.features.size()) throw std::invalid_argument("split_corpus: split point beyond corpus size");
  SyntheticCorpus a;
  SyntheticCorpus b;
  a.coefficients = b.coefficients = corpus.coefficients;
  const auto mid = static_cast<std::ptrdiff_t>(n);
  a.features.assign(corpus.features.begin(), corpus.features.begin() + mid);
  a.labels.assign(corpus.labels.begin(), corpus.labels.begin() + mid);
  b.features.assign(corpus.features.begin() + mid, corpus.features.end());
  b.labels.assign(corpus.labels.begin() + mid, corpus.labels.end());
  return {std::move(a), std::move(b)};
}

SyntheticCorpus labeled_subset(const SyntheticCorpus& corpus, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("labeled_subset: fraction must be in (0, 1]");
  const std::size_t n = corpus.features.size();
  const auto k = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(seed, "labeled_subset");
  for (std::size_t i = n; i > 1; --i) {
    const auto j = std::min(i - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i)));
    std::swap(order[i - 1], order[j]);
  }
  order.resize(std::min(k, n));
  std::sort(order.begin(), order.end());
  SyntheticCorpus out;
  out.coefficients = corpus.coefficients;
  for (std::size_t i : order) {
    out.features.push_back(corpus.features[i]);
    out.labels.push_back(corpus.labels[i]);
  }
  return out;
}

double frame_accuracy(std::span<const Tensor<float>> logits, std::span<const AlignmentLabels> labels) {
  if (logits.size() != labels.size()) {
    throw std::invalid_argument("frame_accuracy: " + std::to_string(logits.size()) + " logit sequences but " +
                                std::to_string(labels.size()) + " label sequences");
  }
  std::size_t correct = 0;
  std::size_t total = 0;
  for (std::size_t u = 0; u < logits.size(); ++u) {
    const Tensor<float>& y = logits[u];
    const auto& lab = labels[u].labels;
    if (y.rows() != lab.size()) {
      throw std::invalid_argument("frame_accuracy: utterance '" + labels[u].utterance_id + "' has " +
                                  std::to_string(y.rows()) + " logit frames but " + std::to_string(lab.size()) +
                                  " labels");
    }
    for (std::size_t t = 0; t < lab.size(); ++t) {
      auto row = y.row(t);
      const auto best = static_cast<std::int32_t>(std::max_element(row.begin(), row.end()) - row.begin());
      correct += best == lab[t] ? 1 : 0;
      ++total;
    }
  }
  if (total == 0) throw std::invalid_argument("frame_accuracy: no frames");
  return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace bapc
