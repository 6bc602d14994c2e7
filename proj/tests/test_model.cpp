// SPDX-License-Identifier: Apache-2.0
#include "timepro/grad_check.hpp"
#include "timepro/model.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>

#include <unistd.h>

namespace timepro {
namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.lookback = 32;
  c.horizon = 8;
  c.n_vars = 3;
  c.patch_len = 8;
  c.stride = 4;
  c.embed_dim = 8;
  c.n_layers = 2;
  c.n_samples = 3;
  return c;
}

void zero(TimeProModel& m, const std::string& name) { m.params().get(name).mutable_data().setZero(); }

TEST(Patching, CountFormula) {
  EXPECT_EQ(patch_count(96, 16, 8), 12);
  EXPECT_EQ(patch_count(96, 96, 96), 2);
  EXPECT_THROW(patch_count(8, 16, 8), Error);
  for (Index l = 16; l <= 200; l += 7) {
    for (Index pl = 1; pl <= 16; pl += 3) {
      for (Index s = 1; s <= pl; ++s) EXPECT_EQ(patch_count(l, pl, s), (l - pl) / s + 2);
    }
  }
}

TEST(Patching, WindowsCoverPaddedIndices) {
  const Index l = 21, pl = 6, s = 4;
  Array series(2 * l);
  for (Index i = 0; i < 2 * l; ++i) series(i) = 100.0 * (i / l) + (i % l);
  const Array patches = extract_patches(series, 2, l, pl, s);
  const Index p = patch_count(l, pl, s);
  ASSERT_EQ(patches.size(), 2 * p * pl);
  for (Index r = 0; r < 2; ++r) {
    for (Index q = 0; q < p; ++q) {
      for (Index k = 0; k < pl; ++k) {
        const Index t = q * s + k;               // index into the padded series
        const Index src = std::min(t, l - 1);    // padding repeats the last value
        EXPECT_EQ(patches((r * p + q) * pl + k), 100.0 * r + src);
      }
    }
  }
}

TEST(RevIn, PopulationVarianceArithmetic) {
  Array x(3);
  x << 1, 2, 3;
  const RevInResult exact = revin_normalize(Tensor::from({1, 3}, x), 0.0);
  EXPECT_NEAR(exact.normalized.data()(0), -std::sqrt(1.5), 1e-15);
  EXPECT_EQ(exact.normalized.data()(1), 0.0);
  EXPECT_NEAR(exact.normalized.data()(2), std::sqrt(1.5), 1e-15);
  EXPECT_DOUBLE_EQ(exact.stats.mean(0), 2.0);
  const RevInResult guarded = revin_normalize(Tensor::from({1, 3}, x));
  EXPECT_NEAR(guarded.stats.std(0), std::sqrt(2.0 / 3.0 + 1e-5), 1e-15);
}

TEST(RevIn, ConstantSeriesAndStandardInput) {
  const RevInResult c = revin_normalize(Tensor::full({2, 10}, 4.2));
  EXPECT_TRUE((c.normalized.data() == 0.0).all());
  EXPECT_GE(c.stats.std.minCoeff(), std::sqrt(c.stats.eps));
  Array z(4);
  z << -1, 1, -1, 1;  // mean 0, variance 1
  const RevInResult s = revin_normalize(Tensor::from({1, 4}, z));
  EXPECT_LT((s.normalized.data() - z).abs().maxCoeff(), 1e-5);
}

TEST(RevIn, RoundTripAndDenormalizeArithmetic) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = Tensor::from({3, 4, 17}, rng.normal_array(204, rng.uniform(0.01, 100.0)));
    x.mutable_data() += rng.uniform(-1e3, 1e3);
    const RevInResult r = revin_normalize(x);
    const Tensor back = revin_denormalize(r.normalized, r.stats);
    EXPECT_LT((back.data() - x.data()).abs().maxCoeff(), 1e-9);
  }
  RevInStats st;
  st.mean = Array::Constant(2, 0.0);
  st.mean << 1.5, -2.0;
  st.std = Array::Constant(2, 0.0);
  st.std << 2.0, 0.5;
  Array y(6);
  y << 0, 1, -1, 2, 0, 4;
  const Tensor out = revin_denormalize(Tensor::from({2, 3}, y), st);
  Array expected(6);
  expected << 1.5, 3.5, -0.5, -1.0, -2.0, 0.0;
  EXPECT_TRUE((out.data() == expected).all());
  EXPECT_THROW(revin_denormalize(Tensor::zeros({3, 3}), st), ShapeError);
}

TEST(TimeFfn, HandComputedMlpAlongPatches) {
  ParamStore store;
  Rng rng(2);
  const Index p = 3, d = 2;
  TimeFfnWeights w{make_linear(store, "up", p, 2 * p, true, rng), make_linear(store, "down", 2 * p, p, true, rng)};
  Tensor e = Tensor::from({1, 2, p, d}, rng.normal_array(2 * p * d, 1.0));
  const Tensor out = time_ffn(e, w);
  const Array& wu = w.up.weight.data();
  const Array& bu = w.up.bias.data();
  const Array& wd = w.down.weight.data();
  const Array& bd = w.down.bias.data();
  for (Index n = 0; n < 2; ++n) {
    for (Index c = 0; c < d; ++c) {
      std::vector<double> hidden(2 * p);
      for (Index j = 0; j < 2 * p; ++j) {
        double z = bu(j);
        for (Index q = 0; q < p; ++q) z += e.at({0, n, q, c}) * wu(q * 2 * p + j);
        hidden[j] = z / (1.0 + std::exp(-z));
      }
      for (Index q = 0; q < p; ++q) {
        double z = bd(q);
        for (Index j = 0; j < 2 * p; ++j) z += hidden[j] * wd(j * p + q);
        EXPECT_NEAR(out.at({0, n, q, c}), z, 1e-14);
      }
    }
  }
}

TEST(TimeFfn, VariablePermutationEquivariance) {
  ParamStore store;
  Rng rng(3);
  TimeFfnWeights w{make_linear(store, "up", 4, 8, true, rng), make_linear(store, "down", 8, 4, true, rng)};
  const Index row = 4 * 5;
  Array e = rng.normal_array(3 * row, 1.0);
  Array ep(e.size());
  const Index perm[3] = {2, 0, 1};
  for (Index i = 0; i < 3; ++i) ep.segment(i * row, row) = e.segment(perm[i] * row, row);
  const Array y = time_ffn(Tensor::from({1, 3, 4, 5}, e), w).data();
  const Array yp = time_ffn(Tensor::from({1, 3, 4, 5}, ep), w).data();
  for (Index i = 0; i < 3; ++i) EXPECT_TRUE((yp.segment(i * row, row) == y.segment(perm[i] * row, row)).all());
  w.down.weight.mutable_data().setZero();
  w.down.bias.mutable_data().setZero();
  EXPECT_TRUE((time_ffn(Tensor::from({1, 3, 4, 5}, e), w).data() == 0.0).all());
}

TEST(ProBlock, ZeroSubBlocksAreIdentity) {
  TimeProModel m(tiny_config(), 4);
  zero(m, "blocks.0.hyper.in_proj_z.weight");
  zero(m, "blocks.0.ffn.down.weight");
  zero(m, "blocks.0.ffn.down.bias");
  Rng rng(5);
  const Index p = m.config().n_patches();
  Tensor e = Tensor::from({2, 3, p, 8}, rng.normal_array(2 * 3 * p * 8, 1.0));
  const Tensor out = problock_forward(e, m.blocks()[0], m.config().hypermamba_options());
  EXPECT_TRUE((out.data() == e.data()).all());
}

TEST(Model, ForwardComposesTheStages) {
  TimeProModel m(tiny_config(), 6);
  Rng rng(7);
  Tensor x = Tensor::from({2, 3, 32}, rng.normal_array(192, 2.0));
  const RevInResult rev = revin_normalize(x);
  Tensor e = m.patch_embed(rev.normalized);
  EXPECT_EQ(e.shape(), (Shape{2, 3, m.config().n_patches(), 8}));
  for (const ProBlockWeights& b : m.blocks()) e = problock_forward(e, b, m.config().hypermamba_options());
  const Linear head{m.params().get("head.weight"), m.params().get("head.bias")};
  Tensor y = reshape(head(reshape(e, {6, m.config().n_patches() * 8})), {2, 3, 8});
  y = revin_denormalize(y, rev.stats);
  const Tensor direct = m.forward(x);
  EXPECT_EQ(direct.shape(), (Shape{2, 3, 8}));
  EXPECT_TRUE((direct.data() == y.data()).all());
  EXPECT_TRUE((m.forward(x).data() == direct.data()).all());
  // Unbatched input.
  Tensor x0 = Tensor::from({3, 32}, x.data().head(96));
  const Tensor single = m.forward(x0);
  EXPECT_EQ(single.shape(), (Shape{3, 8}));
  EXPECT_TRUE((single.data() == direct.data().head(24)).all());
  EXPECT_THROW(m.forward(Tensor::zeros({2, 3, 31})), ShapeError);
}

TEST(Model, ZeroHeadForecastsTheLookbackMean) {
  TimeProModel m(tiny_config(), 8);
  zero(m, "head.weight");
  zero(m, "head.bias");
  Rng rng(9);
  Tensor x = Tensor::from({3, 32}, rng.normal_array(96, 3.0));
  const Tensor y = m.forward(x);
  for (Index n = 0; n < 3; ++n) {
    const double mean = x.data().segment(n * 32, 32).mean();
    for (Index h = 0; h < 8; ++h) EXPECT_NEAR(y.at({n, h}), mean, 1e-12);
  }
}

TEST(Model, VariableCountAgnosticParameters) {
  ModelConfig a = tiny_config();
  ModelConfig b = tiny_config();
  b.n_vars = 11;
  TimeProModel ma(a, 1), mb(b, 1);
  EXPECT_EQ(ma.params().total_elements(), mb.params().total_elements());
  Rng rng(10);
  EXPECT_EQ(ma.forward(Tensor::from({1, 11, 32}, rng.normal_array(352, 1.0))).shape(), (Shape{1, 11, 8}));
  EXPECT_EQ(ma.forward(Tensor::from({1, 1, 32}, rng.normal_array(32, 1.0))).shape(), (Shape{1, 1, 8}));
}

TEST(Model, ParameterCountLinearInHorizon) {
  ModelConfig c = tiny_config();
  const Index pd = c.n_patches() * c.embed_dim;
  c.horizon = 8;
  const Index n8 = TimeProModel(c).params().total_elements();
  c.horizon = 24;
  const Index n24 = TimeProModel(c).params().total_elements();
  EXPECT_EQ(n24 - n8, 16 * (pd + 1));
}

TEST(Model, GradientReachesEmbeddingThroughFourBlocks) {
  ModelConfig c = tiny_config();
  c.n_layers = 4;
  TimeProModel m(c, 11);
  Rng rng(12);
  Tensor x = Tensor::from({2, 3, 32}, rng.normal_array(192, 1.0));
  Tensor y = Tensor::from({2, 3, 8}, rng.normal_array(48, 1.0));
  mse_loss(m.forward(x), y).backward();
  EXPECT_GT(m.params().get("embed.weight").grad().abs().maxCoeff(), 1e-8);
  EXPECT_GT(m.params().get("blocks.0.hyper.in_proj_t.weight").grad().abs().maxCoeff(), 1e-8);
}

TEST(Model, EndToEndLossPassesGradCheck) {
  ModelConfig c = tiny_config();
  c.n_layers = 1;
  TimeProModel m(c, 13);
  Rng rng(14);
  Tensor x = Tensor::from({1, 3, 32}, rng.normal_array(96, 1.0));
  Tensor y = Tensor::from({1, 3, 8}, rng.normal_array(24, 1.0));
  std::vector<Tensor> inputs;
  for (const char* name : {"embed.weight", "blocks.0.hyper.in_proj_t.weight", "blocks.0.ffn.up.weight", "head.weight"}) {
    inputs.push_back(m.params().get(name));
  }
  auto loss = [&] { return mse_loss(m.forward(x), y); };
  EXPECT_TRUE(std::isfinite(loss().item()));
  const GradCheckReport rep = grad_check(loss, inputs, {1e-3, Stencil::central4, 24});
  EXPECT_LT(rep.max_rel_error, 1e-3);
}

TEST(Config, ValidationAndJson) {
  ModelConfig c = tiny_config();
  c.embed_dim = 7;
  EXPECT_THROW(c.validate(), Error);
  c = tiny_config();
  c.stride = 9;
  EXPECT_THROW(c.validate(), Error);
  c = tiny_config();
  c.scan_variant = ScanVariant::time_then_var;
  c.residual_sampling = true;
  const ModelConfig back = model_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
}

class CheckpointTest : public ::testing::Test {
 protected:
  std::filesystem::path dir = std::filesystem::temp_directory_path() / ("timepro_model_test_" + std::to_string(::getpid()));
  void SetUp() override { std::filesystem::create_directories(dir); }
  void TearDown() override { std::filesystem::remove_all(dir); }
};

TEST_F(CheckpointTest, RoundTripIsBitwise) {
  ModelConfig c = tiny_config();
  c.scan_variant = ScanVariant::non_adaptive;
  TimeProModel m(c, 15);
  m.save(dir / "ck.json");
  const TimeProModel back = TimeProModel::load(dir / "ck.json");
  EXPECT_EQ(back.config().scan_variant, ScanVariant::non_adaptive);
  ASSERT_EQ(back.params().entries().size(), m.params().entries().size());
  Rng rng(16);
  Tensor x = Tensor::from({2, 3, 32}, rng.normal_array(192, 1.0));
  EXPECT_TRUE((back.forward(x).data() == m.forward(x).data()).all());
}

TEST_F(CheckpointTest, ShapeMismatchNamesTheWeight) {
  TimeProModel m(tiny_config(), 17);
  m.save(dir / "ck.json");
  ModelConfig other = tiny_config();
  other.embed_dim = 12;
  try {
    TimeProModel::load(dir / "ck.json", other);
    FAIL() << "expected CheckpointError";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("weight embed.weight"), std::string::npos) << e.what();
  }
}

TEST_F(CheckpointTest, VersionIsMandatory) {
  nlohmann::json j = TimeProModel(tiny_config(), 18).to_json();
  j["version"] = 99;
  EXPECT_THROW(TimeProModel::from_json(j), CheckpointError);
  j.erase("version");
  EXPECT_THROW(TimeProModel::from_json(j), CheckpointError);
  EXPECT_THROW(TimeProModel::load(dir / "missing.json"), CheckpointError);
}

}  // namespace
}  // namespace timepro
