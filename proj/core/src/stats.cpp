// Copyright 2026 the vertenet authors
// SPDX-License-Identifier: Apache-2.0
#include "vertenet/stats.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "vertenet/rng.hpp"

namespace vertenet {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

int region_index(const std::string& name) {
  for (std::size_t i = 0; i < kScoreRegions.size(); ++i) {
    if (name == kScoreRegions[i]) return static_cast<int>(i);
  }
  throw std::invalid_argument("unknown vertebral region '" + name + "'");
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

}  // namespace

std::map<std::string, ScoreSheet> load_score_sheets_csv(
    const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) {
    throw std::runtime_error("cannot open score sheet '" + path.string() + "'");
  }

  // reader -> image_id -> partial row of scores
  std::map<std::string, std::map<std::string, std::array<int, 4>>> table;
  std::map<std::string, std::map<std::string, std::array<bool, 4>>> seen;
  std::string line;
  bool first = true;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    if (first && line == "image_id,region,reader,score") {
      first = false;
      continue;
    }
    first = false;
    std::istringstream row(line);
    std::string image_id, region, reader, score_text;
    if (!std::getline(row, image_id, ',') || !std::getline(row, region, ',') ||
        !std::getline(row, reader, ',') || !std::getline(row, score_text)) {
      throw std::runtime_error("malformed score row at line " +
                               std::to_string(line_no));
    }
    const int region_id = region_index(trim(region));
    const int score = std::stoi(trim(score_text));
    require(score >= 0 && score <= kMaxRegionScore,
            "score " + std::to_string(score) + " outside [0, " +
                std::to_string(kMaxRegionScore) + "] at line " +
                std::to_string(line_no));
    table[trim(reader)][trim(image_id)][region_id] = score;
    seen[trim(reader)][trim(image_id)][region_id] = true;
  }

  std::map<std::string, ScoreSheet> sheets;
  for (auto& [reader, rows] : table) {
    ScoreSheet sheet;
    for (auto& [image_id, scores] : rows) {
      for (int r = 0; r < 4; ++r) {
        require(seen[reader][image_id][r],
                "reader '" + reader + "' image '" + image_id +
                    "' is missing region " + kScoreRegions[r]);
      }
      sheet.image_ids.push_back(image_id);
      sheet.scores.push_back(scores);
    }
    sheets.emplace(reader, std::move(sheet));
  }
  return sheets;
}

double pearson_correlation(std::span<const double> x,
                           std::span<const double> y) {
  require(x.size() == y.size() && x.size() >= 2,
          "pearson_correlation: need two equal-length series");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  require(sxx > 0.0 && syy > 0.0,
          "pearson_correlation: zero variance series");
  return sxy / std::sqrt(sxx * syy);
}

double quadratic_weighted_kappa(std::span<const int> a, std::span<const int> b,
                                int categories) {
  require(a.size() == b.size() && !a.empty(),
          "quadratic_weighted_kappa: need two equal-length series");
  require(categories >= 2, "quadratic_weighted_kappa: need >= 2 categories");
  const int k = categories;
  std::vector<double> observed(static_cast<std::size_t>(k) * k, 0.0);
  std::vector<double> row(k, 0.0), col(k, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    require(a[i] >= 0 && a[i] < k && b[i] >= 0 && b[i] < k,
            "quadratic_weighted_kappa: score outside category range");
    observed[static_cast<std::size_t>(a[i]) * k + b[i]] += 1.0;
    row[a[i]] += 1.0;
    col[b[i]] += 1.0;
  }
  const double n = static_cast<double>(a.size());
  double obs_disagreement = 0.0, exp_disagreement = 0.0;
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      const double w = static_cast<double>(i - j) * (i - j);
      obs_disagreement += w * observed[static_cast<std::size_t>(i) * k + j];
      exp_disagreement += w * row[i] * col[j] / n;
    }
  }
  if (exp_disagreement == 0.0) {
    return obs_disagreement == 0.0 ? 1.0 : 0.0;
  }
  return 1.0 - obs_disagreement / exp_disagreement;
}

AgreementReport agreement_stats(const ScoreSheet& a, const ScoreSheet& b,
                                std::uint64_t bootstrap_seed,
                                int bootstrap_resamples) {
  require(a.image_ids.size() == a.scores.size() &&
              b.image_ids.size() == b.scores.size(),
          "agreement_stats: malformed score sheet");
  require(a.image_ids.size() >= 3, "agreement_stats: needs at least 3 images");
  require(bootstrap_resamples >= 1,
          "agreement_stats: needs at least one bootstrap resample");

  // Align b's rows to a's image order.
  std::map<std::string, std::size_t> b_index;
  for (std::size_t i = 0; i < b.image_ids.size(); ++i) {
    require(b_index.emplace(b.image_ids[i], i).second,
            "agreement_stats: duplicate image '" + b.image_ids[i] +
                "' in the second sheet");
  }
  require(a.image_ids.size() == b.image_ids.size(),
          "agreement_stats: sheets cover different image counts");
  std::vector<std::size_t> b_row(a.image_ids.size());
  for (std::size_t i = 0; i < a.image_ids.size(); ++i) {
    auto it = b_index.find(a.image_ids[i]);
    require(it != b_index.end(), "agreement_stats: image '" + a.image_ids[i] +
                                     "' missing from the second sheet");
    b_row[i] = it->second;
  }

  const std::size_t n = a.image_ids.size();
  const int categories = kMaxRegionScore + 1;
  AgreementReport report;

  for (int region = 0; region < 4; ++region) {
    std::vector<int> sa(n), sb(n);
    std::vector<double> da(n), db(n);
    for (std::size_t i = 0; i < n; ++i) {
      sa[i] = a.scores[i][region];
      sb[i] = b.scores[b_row[i]][region];
      da[i] = sa[i];
      db[i] = sb[i];
    }
    RegionAgreement& out = report.regions[region];

    // Pearson with a Fisher-z interval.
    auto variance_of = [](const std::vector<double>& v) {
      double m = 0.0;
      for (double x : v) m += x;
      m /= v.size();
      double s = 0.0;
      for (double x : v) s += (x - m) * (x - m);
      return s;
    };
    if (variance_of(da) == 0.0 || variance_of(db) == 0.0) {
      out.correlation.reset();
      out.correlation_note =
          std::string("zero variance in region ") + kScoreRegions[region];
    } else {
      IntervalEstimate ci;
      ci.value = pearson_correlation(da, db);
      if (std::fabs(ci.value) >= 1.0 || n <= 3) {
        ci.ci_lo = ci.ci_hi = ci.value;
      } else {
        const double z = std::atanh(ci.value);
        const double se = 1.0 / std::sqrt(static_cast<double>(n) - 3.0);
        ci.ci_lo = std::tanh(z - 1.959963984540054 * se);
        ci.ci_hi = std::tanh(z + 1.959963984540054 * se);
      }
      out.correlation = ci;
    }

    // Kappa with a seeded bootstrap percentile interval over images.
    out.kappa.value = quadratic_weighted_kappa(sa, sb, categories);
    Rng rng(bootstrap_seed);
    std::vector<double> resampled(bootstrap_resamples);
    std::vector<int> ra(n), rb(n);
    for (int rep = 0; rep < bootstrap_resamples; ++rep) {
      for (std::size_t i = 0; i < n; ++i) {
        const int pick = rng.uniform_int(0, static_cast<int>(n) - 1);
        ra[i] = sa[pick];
        rb[i] = sb[pick];
      }
      resampled[rep] = quadratic_weighted_kappa(ra, rb, categories);
    }
    std::sort(resampled.begin(), resampled.end());
    const auto quantile = [&](double q) {
      const double pos = q * (bootstrap_resamples - 1);
      const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
      const std::size_t hi = static_cast<std::size_t>(std::ceil(pos));
      const double t = pos - lo;
      return (1.0 - t) * resampled[lo] + t * resampled[hi];
    };
    out.kappa.ci_lo = quantile(0.025);
    out.kappa.ci_hi = quantile(0.975);
  }
  return report;
}

}  // namespace vertenet
