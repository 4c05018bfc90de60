#include <cstdio>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "tsattr/error.hpp"
#include "tsattr/model.hpp"

namespace tsattr {
namespace {

using testing::all_architectures;
using testing::small_config;
using testing::small_model;
using testing::small_record;

TEST(Model, SameSeedGivesIdenticalParameters) {
  for (Architecture a : all_architectures()) {
    EXPECT_TRUE(Model(small_config(a), 3) == Model(small_config(a), 3));
    EXPECT_FALSE(Model(small_config(a), 3) == Model(small_config(a), 4));
  }
}

TEST(Model, InvalidConfigsAreRejected) {
  ModelConfig c = small_config(Architecture::kTransformer);
  c.n_heads = 3;
  EXPECT_THROW(Model(c, 1), InvalidArgument);
  c = small_config(Architecture::kStageAttn);
  c.dropout = 1.0;
  EXPECT_THROW(Model(c, 1), InvalidArgument);
  c = small_config(Architecture::kStageRecurrent);
  c.n_classes = 1;
  EXPECT_THROW(Model(c, 1), InvalidArgument);
  EXPECT_THROW(architecture_from_string("lstm"), InvalidArgument);
}

TEST(Model, AttentionMapCountsFollowArchitecture) {
  ModelConfig c = small_config(Architecture::kStageAttn);
  c.n_heads = 4;
  c.embed_dim = 64;
  c.hidden_dim = 64;
  const PatientRecord r = small_record(1, 5);
  const ForwardTrace attn = forward_traced(Model(c, 1), r);
  ASSERT_EQ(attn.attention.size(), 1U);
  EXPECT_EQ(attn.attention[0].size(), 4U);
  const ForwardTrace tr = forward_traced(small_model(Architecture::kTransformer), r);
  EXPECT_EQ(tr.attention.size(), 2U);
  EXPECT_TRUE(forward_traced(small_model(Architecture::kStageRecurrent), r).attention.empty());
}

TEST(Model, AttentionRowsSumToOne) {
  for (Architecture a : {Architecture::kTransformer, Architecture::kStageAttn}) {
    for (std::uint64_t s = 0; s < 20; ++s) {
      const PatientRecord r = small_record(s, 1 + static_cast<int>(s % 7));
      const ForwardTrace t = forward_traced(small_model(a), r);
      for (std::size_t l = 0; l < t.attention.size(); ++l) {
        for (std::size_t h = 0; h < t.attention[l].size(); ++h) {
          const Tensor m = t.attention_map(l, h);
          EXPECT_EQ(m.rows(), static_cast<Eigen::Index>(r.visits.size()));
          EXPECT_EQ(m.cols(), m.rows());
          EXPECT_LT((m.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-5);
        }
      }
    }
  }
}

TEST(Model, ProbabilitiesSumToOneAndRepeatExactly) {
  for (Architecture a : all_architectures()) {
    const Model m = small_model(a, 9, 5);
    for (std::uint64_t s = 0; s < 10; ++s) {
      const PatientRecord r = small_record(s);
      const Eigen::VectorXd p = predict_proba(m, r);
      EXPECT_NEAR(p.sum(), 1.0, 1e-6);
      EXPECT_EQ(p, predict_proba(m, r));
    }
  }
}

TEST(Model, EmptyRecordYieldsBiasOnlyLogits) {
  for (Architecture a : all_architectures()) {
    const Model m = small_model(a);
    PatientRecord empty;
    const Eigen::VectorXd bias = m.param("out.bias").row(0).transpose();
    EXPECT_EQ(forward_traced(m, empty).logit_values(), bias);
    EXPECT_EQ(forward_traced(m, pad_record(empty, 4)).logit_values(), bias);
  }
}

TEST(Model, TrailingPaddingDoesNotChangeLogits) {
  for (Architecture a : all_architectures()) {
    const Model m = small_model(a);
    for (std::uint64_t s = 0; s < 10; ++s) {
      const PatientRecord r = small_record(s);
      EXPECT_EQ(forward_traced(m, r).logit_values(), forward_traced(m, pad_record(r, 12)).logit_values());
    }
  }
}

TEST(Model, InputRowsCoverEveryFeaturePositionOnce) {
  const PatientRecord r = small_record(4, 6);
  const ForwardTrace t = forward_traced(small_model(Architecture::kTransformer), r);
  EXPECT_EQ(t.positions, feature_positions(r));
  EXPECT_EQ(t.tape.value(t.input).rows(), static_cast<Eigen::Index>(feature_count(r)));
}

TEST(Model, OutOfVocabularyCodeIsRejected) {
  PatientRecord r = small_record(2);
  r.visits[0].codes[0] = 500;
  EXPECT_THROW(predict_proba(small_model(Architecture::kTransformer), r), InvalidArgument);
  PatientRecord long_record = small_record(3, 40);
  EXPECT_THROW(predict_proba(small_model(Architecture::kStageRecurrent), long_record), InvalidArgument);
}

TEST(Model, PadEmbeddingContributesNothing) {
  Model m = small_model(Architecture::kTransformer);
  m.parameters().at("embed.codes").row(kPadCode).setConstant(3.0);
  m.enforce_invariants();
  EXPECT_TRUE(m.param("embed.codes").row(kPadCode).isZero());
}

TEST(Model, TrainableAndConstantPathsAgree) {
  for (Architecture a : all_architectures()) {
    const Model m = small_model(a);
    const PatientRecord r = small_record(8);
    const ForwardTrace fixed = forward_traced(m, r);
    const ForwardTrace trainable = forward_traced(m, r, TraceOptions{ParameterMode::kTrainable, nullptr});
    EXPECT_LT((fixed.logit_values() - trainable.logit_values()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_FALSE(trainable.parameter_leaves.empty());
  }
}

TEST(Model, InputGradientMatchesFiniteDifferences) {
  for (Architecture a : all_architectures()) {
    const Model m = small_model(a);
    for (std::uint64_t s = 0; s < 3; ++s) {
      const PatientRecord r = small_record(s, 3);
      const Tensor x = input_contributions(m, r);
      ForwardTrace t = forward_traced(m, r, x);
      const ad::Var f = target_score(t, 1);
      const Tensor g = ad::backward(t.tape, f).of(t.tape, t.input);
      const Tensor fd = testing::numeric_gradient(
          [&](const Tensor& v) {
            ForwardTrace u = forward_traced(m, r, v);
            return u.tape.value(target_score(u, 1))(0, 0);
          },
          x);
      EXPECT_LT(testing::max_relative_error(g, fd, 1e-4), 1e-4) << to_string(a);
    }
  }
}

TEST(Model, ZeroIntervalsMakeTheDecayInert) {
  Model m = small_model(Architecture::kStageRecurrent);
  PatientRecord r = small_record(5);
  for (Visit& v : r.visits) v.delta_t = 0.0;
  const Eigen::VectorXd before = predict_proba(m, r);
  m.parameters().at("cell.log_tau").array() += 3.0;
  EXPECT_EQ(before, predict_proba(m, r));
  r.visits[1].delta_t = 100.0;
  EXPECT_NE(before, predict_proba(m, r));
}

TEST(Model, CheckpointRoundTripIsBitExact) {
  const auto dir = std::filesystem::temp_directory_path() / "tsattr_ckpt_test";
  std::filesystem::create_directories(dir);
  for (Architecture a : all_architectures()) {
    const Model m = small_model(a, 21, 3);
    const auto path = dir / (std::string(to_string(a)) + ".ckpt");
    save_checkpoint(m, path);
    const Model loaded = load_checkpoint(path);
    EXPECT_TRUE(loaded == m);
    EXPECT_EQ(loaded.seed(), 21U);
    EXPECT_EQ(predict_proba(loaded, small_record(1)), predict_proba(m, small_record(1)));
  }
  const auto bogus = dir / "bogus.ckpt";
  std::ofstream(bogus) << "not a checkpoint";
  EXPECT_THROW(load_checkpoint(bogus), ParseError);
  const auto path = dir / "transformer.ckpt";
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 8);
  EXPECT_THROW(load_checkpoint(path), ParseError);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace tsattr
