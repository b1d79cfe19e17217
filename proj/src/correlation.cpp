#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>

#include "selfeval/error.hpp"
#include "selfeval/meta_eval.hpp"

namespace selfeval {

namespace {

void check_inputs(std::span<const double> x, std::span<const double> y, const char* op) {
  if (x.size() != y.size()) {
    throw PreconditionError(std::string(op) + ": inputs differ in length (" + std::to_string(x.size()) + " vs " +
                            std::to_string(y.size()) + ")");
  }
  if (x.size() < 2) throw PreconditionError(std::string(op) + ": needs at least 2 pairs");
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) {
      throw PreconditionError(std::string(op) + ": non-finite value at index " + std::to_string(i));
    }
  }
}

double mean_of(std::span<const double> v) {
  // Mean plus one refinement pass over the residuals.
  double s = 0.0;
  for (double a : v) s += a;
  const double m = s / static_cast<double>(v.size());
  double c = 0.0;
  for (double a : v) c += a - m;
  return m + c / static_cast<double>(v.size());
}

bool is_constant(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [&](double a) { return a == v.front(); });
}

double clamp_unit(double r) { return std::clamp(r, -1.0, 1.0); }

struct PairCounts {
  std::int64_t n0 = 0;          // n(n-1)/2
  std::int64_t tied_x = 0;      // pairs tied on x
  std::int64_t tied_y = 0;      // pairs tied on y
  std::int64_t tied_xy = 0;     // pairs tied on both
  std::int64_t discordant = 0;  // strictly discordant pairs
};

std::int64_t tied_pairs(std::int64_t run) { return run * (run - 1) / 2; }

// Counts inversions of `keys` while merge-sorting it in place.
std::int64_t merge_count(std::vector<double>& keys, std::vector<double>& scratch, std::size_t lo, std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::int64_t swaps = merge_count(keys, scratch, lo, mid) + merge_count(keys, scratch, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (keys[j] < keys[i]) {
      swaps += static_cast<std::int64_t>(mid - i);
      scratch[k++] = keys[j++];
    } else {
      scratch[k++] = keys[i++];
    }
  }
  while (i < mid) scratch[k++] = keys[i++];
  while (j < hi) scratch[k++] = keys[j++];
  std::copy(scratch.begin() + static_cast<std::ptrdiff_t>(lo), scratch.begin() + static_cast<std::ptrdiff_t>(hi),
            keys.begin() + static_cast<std::ptrdiff_t>(lo));
  return swaps;
}

PairCounts count_pairs(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return x[a] < x[b] || (x[a] == x[b] && y[a] < y[b]);
  });

  PairCounts c;
  c.n0 = static_cast<std::int64_t>(n) * static_cast<std::int64_t>(n - 1) / 2;

  std::int64_t run_x = 1, run_xy = 1;
  for (std::size_t k = 1; k < n; ++k) {
    const std::size_t a = order[k - 1], b = order[k];
    if (x[a] == x[b]) {
      ++run_x;
      if (y[a] == y[b]) {
        ++run_xy;
      } else {
        c.tied_xy += tied_pairs(run_xy);
        run_xy = 1;
      }
    } else {
      c.tied_x += tied_pairs(run_x);
      c.tied_xy += tied_pairs(run_xy);
      run_x = run_xy = 1;
    }
  }
  c.tied_x += tied_pairs(run_x);
  c.tied_xy += tied_pairs(run_xy);

  // With x sorted (ties broken by y), every strict inversion of the y
  // sequence is a discordant pair.
  std::vector<double> ys(n), scratch(n);
  for (std::size_t k = 0; k < n; ++k) ys[k] = y[order[k]];
  c.discordant = merge_count(ys, scratch, 0, n);

  std::int64_t run_y = 1;
  for (std::size_t k = 1; k < n; ++k) {
    if (ys[k] == ys[k - 1]) {
      ++run_y;
    } else {
      c.tied_y += tied_pairs(run_y);
      run_y = 1;
    }
  }
  c.tied_y += tied_pairs(run_y);
  return c;
}

std::int64_t concordant_minus_discordant(const PairCounts& c) {
  // concordant + discordant = n0 - tied_x - tied_y + tied_xy
  return c.n0 - c.tied_x - c.tied_y + c.tied_xy - 2 * c.discordant;
}

}  // namespace

double pearson(std::span<const double> x, std::span<const double> y) {
  check_inputs(x, y, "pearson");
  const double mx = mean_of(x);
  const double my = mean_of(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (is_constant(x) || !(sxx > 0.0)) throw UndefinedStatistic("pearson: x is constant");
  if (is_constant(y) || !(syy > 0.0)) throw UndefinedStatistic("pearson: y is constant");
  return clamp_unit(sxy / std::sqrt(sxx * syy));
}

std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t start = 0;
  while (start < n) {
    std::size_t end = start + 1;
    while (end < n && values[order[end]] == values[order[start]]) ++end;
    // positions start..end-1 are 1-based ranks start+1..end
    const double rank = (static_cast<double>(start + 1) + static_cast<double>(end)) / 2.0;
    for (std::size_t k = start; k < end; ++k) ranks[order[k]] = rank;
    start = end;
  }
  return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  check_inputs(x, y, "spearman");
  const std::vector<double> rx = average_ranks(x);
  const std::vector<double> ry = average_ranks(y);
  return pearson(rx, ry);
}

double kendall(std::span<const double> x, std::span<const double> y) {
  check_inputs(x, y, "kendall");
  const PairCounts c = count_pairs(x, y);
  if (c.tied_x == c.n0) throw UndefinedStatistic("kendall: x is constant");
  if (c.tied_y == c.n0) throw UndefinedStatistic("kendall: y is constant");
  const double denom = std::sqrt(static_cast<double>(c.n0 - c.tied_x) * static_cast<double>(c.n0 - c.tied_y));
  return clamp_unit(static_cast<double>(concordant_minus_discordant(c)) / denom);
}

double kendall_tau_a(std::span<const double> x, std::span<const double> y) {
  check_inputs(x, y, "kendall_tau_a");
  const PairCounts c = count_pairs(x, y);
  return clamp_unit(static_cast<double>(concordant_minus_discordant(c)) / static_cast<double>(c.n0));
}

}  // namespace selfeval
