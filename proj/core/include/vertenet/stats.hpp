// Copyright 2026 the vertenet authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace vertenet {

inline constexpr std::array<const char*, 4> kScoreRegions{"L1", "L2", "L3",
                                                          "L4"};
inline constexpr int kMaxRegionScore = 6;

// One reader's 0-6 scores per vertebral region, keyed by image.
struct ScoreSheet {
  std::vector<std::string> image_ids;
  std::vector<std::array<int, 4>> scores;  // parallel to image_ids
};

// CSV rows: image_id,region,reader,score. Returns one sheet per reader.
std::map<std::string, ScoreSheet> load_score_sheets_csv(
    const std::filesystem::path& path);

double pearson_correlation(std::span<const double> x,
                           std::span<const double> y);

// Quadratic-weighted Cohen's kappa over categories 0..categories-1. Exact
// agreement with zero expected disagreement reports 1.
double quadratic_weighted_kappa(std::span<const int> a, std::span<const int> b,
                                int categories);

struct IntervalEstimate {
  double value = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
};

struct RegionAgreement {
  std::optional<IntervalEstimate> correlation;  // absent on zero variance
  std::string correlation_note;                 // why it is absent
  IntervalEstimate kappa;
};

struct AgreementReport {
  std::array<RegionAgreement, 4> regions;  // L1..L4
};

// Pearson correlation with a Fisher-z 95% CI and quadratic-weighted kappa
// with a seeded bootstrap percentile CI, per region. Requires the two sheets
// to cover the same images, at least three of them.
AgreementReport agreement_stats(const ScoreSheet& a, const ScoreSheet& b,
                                std::uint64_t bootstrap_seed = 42,
                                int bootstrap_resamples = 2000);

}  // namespace vertenet
