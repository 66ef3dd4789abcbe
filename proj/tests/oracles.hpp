#pragma once

// Deliberately naive reference implementations, written independently of the
// library code (different formulas, long double, linear scans).

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

namespace wlm::oracle {

inline double cosine(const std::vector<double>& u, const std::vector<double>& v) {
  long double dot = 0, uu = 0, vv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += static_cast<long double>(u[i]) * v[i];
    uu += static_cast<long double>(u[i]) * u[i];
    vv += static_cast<long double>(v[i]) * v[i];
  }
  return static_cast<double>(dot / std::sqrt(uu * vv));
}

// Raw-moment form: (nΣxy − ΣxΣy) / √((nΣx² − (Σx)²)(nΣy² − (Σy)²)).
inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  long double n = x.size(), sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += static_cast<long double>(x[i]) * x[i];
    syy += static_cast<long double>(y[i]) * y[i];
    sxy += static_cast<long double>(x[i]) * y[i];
  }
  return static_cast<double>((n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy)));
}

inline std::vector<std::string> words(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

inline std::vector<std::vector<std::string>> ngrams(const std::vector<std::string>& w, std::size_t n) {
  std::vector<std::vector<std::string>> out;
  for (std::size_t i = 0; i + n <= w.size(); ++i) out.emplace_back(w.begin() + i, w.begin() + i + n);
  return out;
}

// Clipped precision by greedy matching: each candidate n-gram consumes one
// unused identical reference n-gram.
inline double bleu(const std::vector<std::string>& cands, const std::vector<std::string>& refs, double eps = 1e-9) {
  double matches[4] = {0, 0, 0, 0}, totals[4] = {0, 0, 0, 0};
  double c_len = 0, r_len = 0;
  for (std::size_t s = 0; s < cands.size(); ++s) {
    const auto cw = words(cands[s]), rw = words(refs[s]);
    c_len += cw.size();
    r_len += rw.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      auto pool = ngrams(rw, n);
      std::vector<bool> used(pool.size(), false);
      for (const auto& g : ngrams(cw, n)) {
        totals[n - 1] += 1;
        for (std::size_t k = 0; k < pool.size(); ++k)
          if (!used[k] && pool[k] == g) {
            used[k] = true;
            matches[n - 1] += 1;
            break;
          }
      }
    }
  }
  if (c_len == 0 || matches[0] == 0) return 0.0;
  double logp = 0;
  int orders = 0;
  for (int n = 0; n < 4; ++n) {
    if (totals[n] == 0) continue;
    logp += std::log((matches[n] == 0 ? eps : matches[n]) / totals[n]);
    ++orders;
  }
  const double bp = c_len > r_len ? 1.0 : std::exp(1.0 - r_len / c_len);
  return bp * std::exp(logp / orders);
}

inline std::size_t count_pairs(const std::vector<int>& pred, const std::vector<int>& actual, int a, int p) {
  std::size_t c = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) c += (actual[i] == a && pred[i] == p);
  return c;
}

}  // namespace wlm::oracle
