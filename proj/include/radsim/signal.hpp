#pragma once

#include "radsim/parallel.hpp"
#include "radsim/sequence.hpp"
#include "radsim/walker.hpp"

#include <complex>
#include <optional>

namespace radsim {

/// How a compartment-filtered signal is scaled.
enum class Normalization {
  kSelection,  // by the selected spins' own b=0 signal, so s(0) = 1
  kEnsemble,   // by the whole ensemble's, so s(0) is the compartment's spin share
};

/// Finite-ensemble PGSE signal: mean of exp(-i phi) over the selected spins,
/// normalized by the scheme's b=0 entry. Sums run in fixed blocks so the
/// result is identical for any thread count.
inline SignalVector synthesize_signal(const SpinEnsemble& e, const GradientScheme& scheme,
                                      std::optional<Compartment> filter = std::nullopt, unsigned threads = 0,
                                      Normalization norm = Normalization::kSelection) {
  if (e.groups != scheme.timing_groups())
    throw Error(ErrorCode::kDimensionMismatch, "ensemble was not walked with this gradient scheme");

  std::vector<std::size_t> selected;
  selected.reserve(e.size());
  for (std::size_t j = 0; j < e.size(); ++j)
    if (!filter || e.compartment[j] == *filter) selected.push_back(j);
  if (selected.empty()) throw Error(ErrorCode::kEmptySelection, "no spins to synthesize a signal from");

  constexpr std::size_t kBlock = 4096;
  const std::size_t n_acq = scheme.size();
  SignalVector out;
  out.n_spins = selected.size();
  out.mean.resize(n_acq);

  parallel_for(n_acq, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      const PgseAcquisition& a = scheme[k];
      const std::size_t group = scheme.group_of(k);
      std::complex<double> total{0.0, 0.0};
      for (std::size_t b = 0; b < selected.size(); b += kBlock) {
        std::complex<double> block{0.0, 0.0};
        const std::size_t stop = std::min(selected.size(), b + kBlock);
        for (std::size_t i = b; i < stop; ++i) {
          const double phi = phase_from_moment(a, e.moment(selected[i], group));
          block += std::complex<double>(std::cos(phi), -std::sin(phi));
        }
        total += block;
      }
      out.mean[k] = total / static_cast<double>(selected.size());
    }
  });

  const std::complex<double> ref = out.mean[scheme.b0_index()];
  out.s.resize(n_acq);
  out.real.resize(n_acq);
  if (norm == Normalization::kEnsemble) {
    // Every spin contributes exactly 1 at b=0, so the ensemble reference is 1.
    const double share = static_cast<double>(selected.size()) / static_cast<double>(e.size());
    for (std::size_t k = 0; k < n_acq; ++k) {
      out.s[k] = std::abs(out.mean[k]) * share;
      out.real[k] = out.mean[k].real() * share;
    }
    out.s[scheme.b0_index()] = share;
    out.real[scheme.b0_index()] = share;
    return out;
  }
  const double ref_abs = std::abs(ref);
  for (std::size_t k = 0; k < n_acq; ++k) {
    out.s[k] = std::abs(out.mean[k]) / ref_abs;
    out.real[k] = out.mean[k].real() / ref.real();
  }
  out.s[scheme.b0_index()] = 1.0;
  out.real[scheme.b0_index()] = 1.0;
  return out;
}

}  // namespace radsim
