#include <numeric>

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "tsattr/error.hpp"
#include "tsattr/masking.hpp"

namespace tsattr {
namespace {

const MaskPolicy kMeans{LabReplacement::kTrainingMean, {0.5, -0.25, 1.0, 0.0, 0.75, -0.5}};

TEST(Mask, EmptyRemovalLeavesRecordUnchanged) {
  const PatientRecord r = testing::small_record(1, 5);
  EXPECT_EQ(mask(r, {}, kMeans), r);
}

TEST(Mask, RemovingEverythingGivesTheBaseline) {
  const PatientRecord r = testing::small_record(2, 5);
  std::vector<std::size_t> all(feature_count(r));
  std::iota(all.begin(), all.end(), std::size_t{0});
  const PatientRecord b = mask(r, all, kMeans);
  EXPECT_EQ(b, baseline_record(r, kMeans));
  for (std::size_t v = 0; v < r.visits.size(); ++v) {
    for (int c : b.visits[v].codes) EXPECT_EQ(c, kPadCode);
    for (std::size_t l = 0; l < b.visits[v].labs.size(); ++l) EXPECT_EQ(b.visits[v].labs[l], kMeans.lab_means[l]);
    EXPECT_EQ(b.visits[v].delta_t, r.visits[v].delta_t);
  }
}

TEST(Mask, RemovingOnePositionChangesOnlyThatPosition) {
  const PatientRecord r = testing::small_record(3, 6);
  const auto grid = feature_positions(r);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const std::size_t one[] = {i};
    const PatientRecord m = mask(r, one, kMeans);
    for (std::size_t j = 0; j < grid.size(); ++j) {
      const FeaturePosition& p = grid[j];
      const Visit& a = r.visits[static_cast<std::size_t>(p.visit)];
      const Visit& b = m.visits[static_cast<std::size_t>(p.visit)];
      const auto s = static_cast<std::size_t>(p.slot);
      if (j == i) {
        if (p.kind == FeatureKind::kCode) {
          EXPECT_EQ(b.codes[s], kPadCode);
        } else {
          EXPECT_EQ(b.labs[s], kMeans.lab_means[s]);
        }
      } else if (p.kind == FeatureKind::kCode) {
        EXPECT_EQ(a.codes[s], b.codes[s]);
      } else {
        EXPECT_EQ(a.labs[s], b.labs[s]);
      }
    }
  }
}

TEST(Mask, ZeroPolicyUsesZero) {
  PatientRecord r = testing::small_record(4, 3);
  r.visits[0].labs = {3.0, 4.0};
  const PatientRecord b = baseline_record(r, MaskPolicy{LabReplacement::kZero, {}});
  EXPECT_EQ(b.visits[0].labs, (std::vector<double>{0.0, 0.0}));
}

TEST(Mask, InvalidRequestsAreRejected) {
  const PatientRecord r = testing::small_record(5, 3);
  const std::size_t outside[] = {feature_count(r)};
  EXPECT_THROW(mask(r, outside, kMeans), InvalidArgument);
  EXPECT_THROW(mask_where(r, std::vector<bool>(feature_count(r) + 1, false), kMeans), InvalidArgument);
  PatientRecord with_lab = r;
  with_lab.visits[0].labs = {1.0};
  EXPECT_THROW(baseline_record(with_lab, MaskPolicy{LabReplacement::kTrainingMean, {}}), InvalidArgument);
  EXPECT_THROW(lab_replacement_from_string("median"), InvalidArgument);
}

TEST(Record, FeatureGridSkipsTrailingPadding) {
  PatientRecord r = testing::small_record(6, 3);
  const auto grid = feature_positions(r);
  EXPECT_EQ(feature_positions(pad_record(r, 9)), grid);
  EXPECT_EQ(effective_length(pad_record(r, 9)), 3U);
  std::size_t expected = 0;
  for (const Visit& v : r.visits) expected += v.codes.size() + v.labs.size();
  EXPECT_EQ(grid.size(), expected);
}

}  // namespace
}  // namespace tsattr
