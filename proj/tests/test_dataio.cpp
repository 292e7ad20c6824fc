// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "sentfuse/dataio.hpp"

using namespace sentfuse;
namespace fs = std::filesystem;
namespace op = sentfuse::ops;

namespace {

fs::path temp_dir(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("sentfuse_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

FeatureRecord random_record(std::uint64_t seed, LabelScale scale = LabelScale::one) {
  Rng rng(seed);
  FeatureRecord r;
  r.id = "rec_" + std::to_string(seed);
  r.scale = scale;
  r.label = static_cast<float>(rng.uniform(-scale_bound(scale), scale_bound(scale)));
  r.text = random_normal<float>(rng, {50, 8});
  r.audio = random_normal<float>(rng, {50, 6});
  r.video = random_normal<float>(rng, {50, 6});
  r.expl_audio = random_normal<float>(rng, {20, 8});
  r.expl_video = random_normal<float>(rng, {20, 8});
  r.comments = random_normal<float>(rng, {20, 8});
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST(Txf, RoundTripBitExact) {
  const auto dir = temp_dir("txf_rt");
  const auto rec = random_record(5);
  write_feature_file(rec, dir / "a.txf");
  const auto back = read_feature_file(dir / "a.txf");
  EXPECT_EQ(back.id, rec.id);
  EXPECT_EQ(back.label, rec.label);
  EXPECT_EQ(back.scale, rec.scale);
  EXPECT_EQ(back.text.data(), rec.text.data());
  EXPECT_EQ(back.audio.data(), rec.audio.data());
  EXPECT_EQ(back.comments.data(), rec.comments.data());
  // write∘read is also the identity on bytes
  write_feature_file(back, dir / "b.txf");
  EXPECT_EQ(slurp(dir / "a.txf"), slurp(dir / "b.txf"));
}

TEST(Txf, BadMagicNamesExpected) {
  const auto dir = temp_dir("txf_magic");
  write_feature_file(random_record(6), dir / "a.txf");
  auto bytes = slurp(dir / "a.txf");
  bytes[0] = 'Z';
  std::ofstream(dir / "a.txf", std::ios::binary | std::ios::trunc) << bytes;
  try {
    read_feature_file(dir / "a.txf");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("TXF1"), std::string::npos);
  }
}

TEST(Txf, TruncationReportsOffset) {
  const auto dir = temp_dir("txf_trunc");
  write_feature_file(random_record(7), dir / "a.txf");
  auto bytes = slurp(dir / "a.txf");
  bytes.resize(bytes.size() / 2);
  std::ofstream(dir / "a.txf", std::ios::binary | std::ios::trunc) << bytes;
  try {
    read_feature_file(dir / "a.txf");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos);
  }
}

TEST(Txf, ThreeScaleLabelPreservedExactly) {
  const auto dir = temp_dir("txf_label");
  auto rec = random_record(8, LabelScale::three);
  rec.label = 1.4f;
  write_feature_file(rec, dir / "a.txf");
  EXPECT_EQ(read_feature_file(dir / "a.txf").label, 1.4f);
}

TEST(NormalizeLength, ExactFiftyUnchanged) {
  Rng rng(9);
  auto seq = random_normal<float>(rng, {50, 4});
  auto [out, mask] = normalize_length(seq);
  EXPECT_EQ(out.data(), seq.data());
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(mask[i], 1.0f);
}

TEST(NormalizeLength, TruncatesToFirstFifty) {
  Rng rng(10);
  auto seq = random_normal<float>(rng, {60, 3});
  auto [out, mask] = normalize_length(seq);
  EXPECT_EQ(out.shape()[0], 50u);
  for (std::size_t t = 0; t < 50; ++t)
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(out.at(t, k), seq.at(t, k));
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(mask[i], 1.0f);
}

TEST(NormalizeLength, PadsTailWithZeros) {
  Rng rng(11);
  auto seq = random_normal<float>(rng, {40, 3});
  auto [out, mask] = normalize_length(seq);
  for (std::size_t t = 0; t < 40; ++t)
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(out.at(t, k), seq.at(t, k));
  for (std::size_t t = 40; t < 50; ++t)
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(out.at(t, k), 0.0f);
  for (std::size_t i = 0; i < 40; ++i) EXPECT_EQ(mask[i], 1.0f);
  for (std::size_t i = 40; i < 50; ++i) EXPECT_EQ(mask[i], 0.0f);
}

TEST(AttachAggToken, PrependsAtIndexZero) {
  Rng rng(12);
  Var<float> seq(random_normal<float>(rng, {50, 4}), false);
  Var<float> agg(Tensor<float>({1, 4}, {1, 2, 3, 4}), true);
  auto out = attach_agg_token(seq, agg);
  ASSERT_EQ(out.value().shape()[0], 51u);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_EQ(out.value().at(0, k), static_cast<float>(k + 1));
    EXPECT_EQ(out.value().at(1, k), seq.value().at(0, k));
  }
}

TEST(AttachAggToken, ZeroInitGivesZeroRow) {
  Rng rng(13);
  Var<float> seq(random_normal<float>(rng, {50, 4}), false);
  Var<float> agg(Tensor<float>({1, 4}), true);
  auto out = attach_agg_token(seq, agg);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(out.value().at(0, k), 0.0f);
}

TEST(AttachAggToken, GradientReachesAggToken) {
  Rng rng(14);
  Var<float> seq(random_normal<float>(rng, {50, 4}), false);
  Var<float> agg(random_normal<float>(rng, {1, 4}), true);
  agg.zero_grad();
  auto loss = op::sum_all(op::silu(op::row(attach_agg_token(seq, agg), 0)));
  backward(loss);
  float norm = 0;
  for (float g : agg.grad().data()) norm += std::abs(g);
  EXPECT_GT(norm, 0.0f);
}

TEST(AttachAggToken, DimMismatchRejected) {
  Var<float> seq(Tensor<float>({50, 4}), false);
  Var<float> agg(Tensor<float>({1, 5}), false);
  EXPECT_THROW(attach_agg_token(seq, agg), ShapeError);
}

TEST(Synth, SameSeedByteIdentical) {
  const auto d1 = temp_dir("synth_a"), d2 = temp_dir("synth_b");
  SynthSpec spec;
  spec.n_train = 6;
  spec.n_val = 3;
  spec.n_test = 3;
  spec.seed = 7;
  synth_dataset(spec, d1);
  synth_dataset(spec, d2);
  EXPECT_EQ(slurp(d1 / "manifest.json"), slurp(d2 / "manifest.json"));
  for (const auto& entry : fs::directory_iterator(d1 / "records")) {
    const auto name = entry.path().filename();
    EXPECT_EQ(slurp(entry.path()), slurp(d2 / "records" / name)) << name;
  }
}

TEST(Synth, ZeroSamplesRejected) {
  SynthSpec spec;
  spec.n_train = spec.n_val = spec.n_test = 0;
  EXPECT_THROW(synth_dataset(spec, temp_dir("synth_zero")), ConfigError);
}

TEST(Synth, OutputLoadsAndValidates) {
  const auto dir = temp_dir("synth_load");
  SynthSpec spec;
  spec.n_train = 4;
  spec.n_val = 2;
  spec.n_test = 2;
  auto res = synth_dataset(spec, dir);
  auto m = load_manifest(res.manifest_path);
  EXPECT_EQ(m.train.size(), 4u);
  auto rec = m.load(m.train[0]);
  EXPECT_EQ(rec.text.shape()[0], 50u);
  EXPECT_EQ(rec.text.shape()[1], spec.d_t);
}

// Closed-form probe on the planted direction: project every audio token onto
// u_a, divide out the planted gain, and compare with the label.
TEST(Synth, LinearProbeRecoversStrongSignal) {
  const auto dir = temp_dir("synth_probe");
  SynthSpec spec;
  spec.n_train = 64;
  spec.n_val = 0;
  spec.n_test = 0;
  spec.broadcast = 1.0;
  spec.signal_audio = 1.0;
  spec.noise = 0.05;
  auto res = synth_dataset(spec, dir);
  const double gain = 50.0 * spec.broadcast + spec.signal_audio;
  double mae = 0;
  for (const auto& id : res.manifest.train) {
    auto rec = res.manifest.load(id);
    double dot = 0;
    for (std::size_t t = 0; t < 50; ++t)
      for (std::size_t k = 0; k < spec.d_a; ++k)
        dot += rec.audio.at(t, k) * res.plant.u_a[k];
    mae += std::abs(dot / gain - rec.label);
  }
  mae /= 64.0;
  EXPECT_LT(mae, 0.1);
}

TEST(Synth, NullSignalLeavesLabelsUnpredictable) {
  const auto dir = temp_dir("synth_null");
  SynthSpec spec;
  spec.n_train = 64;
  spec.n_val = 0;
  spec.n_test = 0;
  spec.broadcast = 0.0;
  spec.signal_audio = 0.0;
  spec.signal_video = 0.0;
  spec.signal_text = 0.0;
  auto res = synth_dataset(spec, dir);
  // Pearson correlation between the probe and labels should be noise-level.
  std::vector<double> probe, labels;
  for (const auto& id : res.manifest.train) {
    auto rec = res.manifest.load(id);
    double dot = 0;
    for (std::size_t t = 0; t < 50; ++t)
      for (std::size_t k = 0; k < spec.d_a; ++k)
        dot += rec.audio.at(t, k) * res.plant.u_a[k];
    probe.push_back(dot);
    labels.push_back(rec.label);
  }
  double mp = 0, ml = 0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    mp += probe[i];
    ml += labels[i];
  }
  mp /= probe.size();
  ml /= labels.size();
  double num = 0, dp = 0, dl = 0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    num += (probe[i] - mp) * (labels[i] - ml);
    dp += (probe[i] - mp) * (probe[i] - mp);
    dl += (labels[i] - ml) * (labels[i] - ml);
  }
  EXPECT_LT(std::abs(num / std::sqrt(dp * dl + 1e-12)), 0.35);
}

TEST(Manifest, EmptySplitsRejected) {
  Manifest m;
  m.dims = {4, 4, 4};
  EXPECT_THROW(validate_manifest(m, false), DataError);
}

TEST(Manifest, MissingFileNamesId) {
  const auto dir = temp_dir("manifest_missing");
  Manifest m;
  m.dims = {4, 4, 4};
  m.train = {"ghost"};
  m.paths["ghost"] = "records/ghost.txf";
  m.base_dir = dir;
  try {
    validate_manifest(m);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("ghost"), std::string::npos);
  }
}

TEST(Manifest, OverlappingSplitsRejected) {
  Manifest m;
  m.dims = {4, 4, 4};
  m.train = {"a"};
  m.val = {"a"};
  m.paths["a"] = "a.txf";
  EXPECT_THROW(validate_manifest(m, false), DataError);
}

TEST(Manifest, UnresolvableIdRejected) {
  Manifest m;
  m.dims = {4, 4, 4};
  m.train = {"a"};
  EXPECT_THROW(validate_manifest(m, false), DataError);
}
