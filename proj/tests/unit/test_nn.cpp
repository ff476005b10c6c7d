#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "isacbeam/error.hpp"
#include "isacbeam/nn/checkpoint.hpp"
#include "isacbeam/nn/gradient_check.hpp"
#include "isacbeam/nn/qnetwork.hpp"

using namespace isacbeam;
using namespace isacbeam::nn;

namespace {

QNetworkConfig shrunk_config(bool bypass = false) {
  QNetworkConfig c;
  c.image_height = 16;
  c.image_width = 16;
  c.d_model = 10;
  c.ffn_dim = 32;
  c.n_actions = 8;
  c.bypass_mmt = bypass;
  return c;
}

template <typename T>
Tensor<T> uniform_tensor(std::vector<std::size_t> shape, std::uint64_t seed) {
  Tensor<T> t(std::move(shape));
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (T& v : t.values()) v = static_cast<T>(u(rng));
  return t;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("isacbeam_test_" + name);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void dump(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

CheckpointError::Kind load_error_kind(const std::filesystem::path& p) {
  try {
    load_checkpoint<float>(p);
  } catch (const CheckpointError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "load did not throw";
  return CheckpointError::Kind::kIo;
}

}  // namespace

TEST(Config, DefaultShapes) {
  const QNetworkConfig c = QNetworkConfig{}.resolved();
  EXPECT_EQ(c.conv_output_height(), 8u);
  EXPECT_EQ(c.conv_output_width(), 8u);
  EXPECT_EQ(c.conv_feature_length(), 64u);
  // 64 conv features + 2 location entries in chunks of 40.
  EXPECT_EQ(c.token_count(), 2u);
  EXPECT_EQ(c.pool_layers, std::vector<bool>({true, true, true, false, false, false, false, false}));

  QNetworkConfig small;
  small.image_height = 32;
  small.image_width = 32;
  EXPECT_EQ(small.resolved().conv_feature_length(), 64u);
  EXPECT_EQ(default_pool_layers(32, 32, 8)[2], false);
}

TEST(Config, InvalidConfigsThrow) {
  QNetworkConfig c;
  c.n_heads = 3;  // 40 not divisible by 3
  EXPECT_THROW(c.validate(), ConfigError);
  c = QNetworkConfig{};
  c.head_dropout = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = QNetworkConfig{};
  c.pool_layers = {true, false};
  EXPECT_ANY_THROW(c.resolved());
}

TEST(QNetwork, OutputShapeAndDeterministicInit) {
  const QNetworkConfig c = shrunk_config();
  QNetwork<double> a(c, 7);
  QNetwork<double> b(c, 7);
  QNetwork<double> other(c, 8);
  const auto img = uniform_tensor<double>({3, 1, 16, 16}, 1);
  const auto loc = uniform_tensor<double>({3, 2}, 2);
  const Tensor<double> qa = a.predict(img, loc);
  EXPECT_EQ(qa.shape(), (std::vector<std::size_t>{3, 8}));
  EXPECT_EQ(qa, b.predict(img, loc));
  EXPECT_NE(qa, other.predict(img, loc));
}

TEST(QNetwork, TrlAndDrlDiffer) {
  QNetwork<double> trl(shrunk_config(false), 7);
  QNetwork<double> drl(shrunk_config(true), 7);
  EXPECT_EQ(trl.parameters().find("enc0.attn.q.weight") != nullptr, true);
  EXPECT_EQ(drl.parameters().find("enc0.attn.q.weight"), nullptr);
  const auto img = uniform_tensor<double>({2, 1, 16, 16}, 1);
  const auto loc = uniform_tensor<double>({2, 2}, 2);
  EXPECT_NE(trl.predict(img, loc), drl.predict(img, loc));
}

TEST(Tokens, ChunkingPadsWithZeros) {
  ParameterSet<double> ps;
  TokenBuilder<double> tb(ps, "tok", 64, 2, 40);
  for (auto& p : ps) p.value.fill(0.0);  // drop embeddings to expose the raw chunks
  ASSERT_EQ(tb.token_count(), 2u);
  EXPECT_EQ(tb.modality_of(0), 0u);
  EXPECT_EQ(tb.modality_of(1), 1u);

  Tensor<double> conv({1, 64}, 1.0);
  Tensor<double> loc({1, 2}, 2.0);
  const Tensor<double> t = tb.forward(ps, conv, loc);
  ASSERT_EQ(t.shape(), (std::vector<std::size_t>{1, 2, 40}));
  for (std::size_t i = 0; i < 40; ++i) EXPECT_EQ(t[i], 1.0);
  for (std::size_t i = 0; i < 24; ++i) EXPECT_EQ(t[40 + i], 1.0);
  EXPECT_EQ(t[64], 2.0);
  EXPECT_EQ(t[65], 2.0);
  std::size_t zeros = 0;
  for (std::size_t i = 66; i < 80; ++i) zeros += t[i] == 0.0;
  EXPECT_EQ(zeros, 14u);
}

TEST(Attention, RowsSumToOne) {
  QNetwork<double> net(QNetworkConfig{}, 3);
  const auto tokens = uniform_tensor<double>({2, 2, 40}, 4);
  const Tensor<double> w = net.attention_weights(tokens);
  ASSERT_EQ(w.shape(), (std::vector<std::size_t>{2, 5, 2, 2}));
  for (std::size_t row = 0; row < w.size() / 2; ++row) {
    EXPECT_NEAR(w[2 * row] + w[2 * row + 1], 1.0, 1e-12);
    EXPECT_GT(w[2 * row], 0.0);
  }
}

TEST(Attention, IdenticalTokensGiveUniformWeights) {
  QNetworkConfig c;
  c.image_height = 64;
  QNetwork<double> net(c, 3);
  Tensor<double> tokens({1, 4, 40});
  const auto row = uniform_tensor<double>({40}, 9);
  for (std::size_t t = 0; t < 4; ++t) {
    for (std::size_t d = 0; d < 40; ++d) tokens[t * 40 + d] = row[d];
  }
  const Tensor<double> w = net.attention_weights(tokens);
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(w[i], 0.25, 1e-12);
}

TEST(Loss, MaskedMse) {
  Tensor<double> q({2, 3});
  for (std::size_t i = 0; i < 6; ++i) q[i] = static_cast<double>(i);
  const std::vector<std::size_t> actions{0, 2};
  Tensor<double> grad;
  const std::vector<double> exact{0.0, 5.0};
  EXPECT_EQ(mse_loss<double>(q, actions, exact, &grad), 0.0);

  const std::vector<double> off{2.0, 7.0};
  EXPECT_DOUBLE_EQ(mse_loss<double>(q, actions, off, &grad), 4.0);
  // dL/dq = 2 (q - t) / B at the taken actions only.
  const std::vector<double> expected{-2.0, 0.0, 0.0, 0.0, 0.0, -2.0};
  for (std::size_t i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(grad[i], expected[i]);

  const std::vector<std::size_t> bad{0, 3};
  EXPECT_ANY_THROW(mse_loss<double>(q, bad, off, nullptr));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<double> values{1.0, 2.0, -3.0};
  const std::vector<double> grads{0.3, -7.0, 1e-3};
  std::vector<double> m1(3, 0.0), m2(3, 0.0);
  adam_update<double>(values, grads, m1, m2, 1, AdamOptions{});
  EXPECT_NEAR(values[0], 1.0 - 0.005, 1e-9);
  EXPECT_NEAR(values[1], 2.0 + 0.005, 1e-9);
  EXPECT_NEAR(values[2], -3.0 - 0.005, 1e-7);
}

TEST(Adam, ZeroGradientsLeaveParametersUnchanged) {
  QNetwork<double> net(shrunk_config(), 2);
  const QNetwork<double> before = net;
  net.zero_grad();
  net.adam_step(AdamOptions{});
  EXPECT_EQ(net.optimizer_steps(), 1u);
  for (std::size_t i = 0; i < net.parameters().size(); ++i) {
    EXPECT_EQ(net.parameters()[i].value, before.parameters()[i].value) << net.parameters()[i].name;
  }
}

TEST(Adam, NonFiniteGradientThrows) {
  QNetwork<double> net(shrunk_config(), 2);
  net.zero_grad();
  net.parameters()[0].grad[0] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(net.adam_step(AdamOptions{}), NumericError);
}

TEST(Dropout, PreservesExpectation) {
  Dropout<double> drop(0.4);
  Tensor<double> x({200000}, 1.0);
  Rng rng(11);
  Dropout<double>::Cache cache;
  const Tensor<double> y = drop.forward(x, Mode::kTrain, &rng, &cache);
  double sum = 0.0;
  std::size_t zeros = 0;
  for (double v : y.values()) {
    sum += v;
    zeros += v == 0.0;
  }
  EXPECT_NEAR(sum / 200000.0, 1.0, 0.02);
  EXPECT_NEAR(static_cast<double>(zeros) / 200000.0, 0.4, 0.01);
  EXPECT_EQ(drop.forward(x, Mode::kEval, &rng, &cache), x);
}

TEST(BatchNorm, EvalOutputIndependentOfBatch) {
  QNetwork<double> net(shrunk_config(), 5);
  const auto img = uniform_tensor<double>({4, 1, 16, 16}, 1);
  const auto loc = uniform_tensor<double>({4, 2}, 2);
  Rng rng(3);
  for (int i = 0; i < 3; ++i) net.forward(img, loc, Mode::kTrain, &rng);

  const Tensor<double> full = net.predict(img, loc);
  Tensor<double> img1({1, 1, 16, 16});
  Tensor<double> loc1({1, 2});
  for (std::size_t i = 0; i < 256; ++i) img1[i] = img[2 * 256 + i];
  loc1[0] = loc[4];
  loc1[1] = loc[5];
  const Tensor<double> single = net.predict(img1, loc1);
  for (std::size_t a = 0; a < 8; ++a) EXPECT_NEAR(single[a], full[2 * 8 + a], 1e-12);
}

TEST(Training, RepeatedStepsReduceLoss) {
  QNetwork<double> net(shrunk_config(), 5);
  const auto img = uniform_tensor<double>({8, 1, 16, 16}, 1);
  const auto loc = uniform_tensor<double>({8, 2}, 2);
  const std::vector<std::size_t> actions{0, 1, 2, 3, 4, 5, 6, 7};
  const std::vector<double> targets{1.0, 2.0, 0.5, 1.5, 3.0, 0.0, 2.5, 1.0};
  auto eval_loss = [&] {
    return mse_loss<double>(net.predict(img, loc), actions, targets, nullptr);
  };
  const double initial = eval_loss();
  Rng rng(4);
  for (int i = 0; i < 60; ++i) {
    net.zero_grad();
    Tensor<double> grad;
    mse_loss<double>(net.forward(img, loc, Mode::kTrain, &rng), actions, targets, &grad);
    net.backward(grad);
    net.adam_step(AdamOptions{});
  }
  EXPECT_LT(eval_loss(), 0.5 * initial);
}

class GradientCheck : public ::testing::TestWithParam<std::tuple<bool, Mode>> {};

TEST_P(GradientCheck, AnalyticMatchesFiniteDifference) {
  const auto [bypass, mode] = GetParam();
  QNetwork<double> net(shrunk_config(bypass), 3);
  const std::size_t batch = 4;
  const auto img = uniform_tensor<double>({batch, 1, 16, 16}, 5);
  const auto loc = uniform_tensor<double>({batch, 2}, 6);
  Rng rng(5);
  for (int i = 0; i < 5; ++i) net.forward(img, loc, Mode::kTrain, &rng);

  // Targets slightly below the current q keep every residual away from zero.
  const Tensor<double> q = net.predict(img, loc);
  const std::vector<std::size_t> actions{0, 3, 5, 7};
  std::vector<double> targets;
  for (std::size_t b = 0; b < batch; ++b) targets.push_back(q[b * 8 + actions[b]] - 0.01);

  GradientCheckOptions o;
  o.mode = mode;
  const GradientCheckReport r = gradient_check(net, img, loc, actions, targets, o);
  for (const auto& [type, err] : r.max_error) {
    EXPECT_GT(r.samples.at(type), 0u) << type;
    // With batch statistics the conv biases cancel inside the normalisation,
    // so their true gradient is zero and the relative error only measures the
    // 1e-8 denominator floor; attention sits behind replayed dropout masks.
    if (mode == Mode::kTrain && (type == "conv" || type == "attention")) continue;
    EXPECT_LT(err, 1e-4) << type;
  }
  EXPECT_LT(r.max_error.at("linear"), 1e-7);
  EXPECT_LT(r.max_error.at("mse"), 1e-7);
  EXPECT_EQ(r.max_error.count("attention"), bypass ? 0u : 1u);
  EXPECT_EQ(r.max_error.count("conv"), 1u);
  EXPECT_EQ(r.max_error.count("batchnorm"), 1u);
}

INSTANTIATE_TEST_SUITE_P(Variants, GradientCheck,
                         ::testing::Combine(::testing::Bool(),
                                            ::testing::Values(Mode::kEval, Mode::kTrain)));

TEST(GradientCheckHelpers, LayerTypesAndRelativeError) {
  EXPECT_EQ(layer_type_of("conv0.weight"), "conv");
  EXPECT_EQ(layer_type_of("head1.bias"), "linear");
  EXPECT_DOUBLE_EQ(relative_error(1.0, 1.0), 0.0);
  EXPECT_NEAR(relative_error(1.0, 1.1), 0.1 / 2.1, 1e-12);
  EXPECT_DOUBLE_EQ(relative_error(0.0, 1e-12), 1e-4);  // floored denominator
}

TEST(Checkpoint, RoundTripIsBitwise) {
  QNetwork<float> net(QNetworkConfig{}, 9);
  const auto img = uniform_tensor<float>({2, 1, 64, 64}, 1);
  const auto loc = uniform_tensor<float>({2, 2}, 2);
  Rng rng(1);
  net.zero_grad();
  Tensor<float> grad;
  const std::vector<std::size_t> actions{1, 2};
  const std::vector<float> targets{0.5f, -0.5f};
  mse_loss<float>(net.forward(img, loc, Mode::kTrain, &rng), actions, targets, &grad);
  net.backward(grad);
  net.adam_step(AdamOptions{});

  const auto path = temp_file("ckpt_roundtrip.ckpt");
  save_checkpoint(net, path);
  const QNetwork<float> back = load_checkpoint<float>(path);
  EXPECT_EQ(back.config(), net.config());
  EXPECT_EQ(back.optimizer_steps(), 1u);
  for (std::size_t i = 0; i < net.parameters().size(); ++i) {
    const auto& a = net.parameters()[i];
    const auto& b = back.parameters()[i];
    EXPECT_EQ(a.value, b.value) << a.name;
    EXPECT_EQ(a.moment1, b.moment1) << a.name;
    EXPECT_EQ(a.moment2, b.moment2) << a.name;
  }
  EXPECT_EQ(back.predict(img, loc), net.predict(img, loc));

  const CheckpointManifest m = read_checkpoint_manifest(path);
  EXPECT_EQ(m.dtype, "f32");
  EXPECT_EQ(m.version, kCheckpointVersion);
  EXPECT_EQ(m.parameter_count, net.parameters().size());
  std::filesystem::remove(path);
}

TEST(Checkpoint, ErrorKinds) {
  EXPECT_EQ(load_error_kind(temp_file("does_not_exist.ckpt")), CheckpointError::Kind::kIo);

  const auto good = temp_file("ckpt_good.ckpt");
  save_checkpoint(QNetwork<float>(shrunk_config(), 1), good);
  const std::string bytes = slurp(good);
  const auto bad = temp_file("ckpt_bad.ckpt");

  dump(bad, "not a checkpoint\n" + bytes);
  EXPECT_EQ(load_error_kind(bad), CheckpointError::Kind::kFormat);

  std::string other_version = bytes;
  const auto pos = other_version.find("version 1\n");
  ASSERT_NE(pos, std::string::npos);
  other_version.replace(pos, 10, "version 99\n");
  dump(bad, other_version);
  EXPECT_EQ(load_error_kind(bad), CheckpointError::Kind::kVersion);

  dump(bad, bytes.substr(0, bytes.size() - 16));
  EXPECT_EQ(load_error_kind(bad), CheckpointError::Kind::kTruncated);

  std::string wrong_shape = bytes;
  const auto actions = wrong_shape.find("\"n_actions\":8");
  ASSERT_NE(actions, std::string::npos);
  wrong_shape.replace(actions, 13, "\"n_actions\":9");
  dump(bad, wrong_shape);
  EXPECT_EQ(load_error_kind(bad), CheckpointError::Kind::kShape);

  std::filesystem::remove(good);
  std::filesystem::remove(bad);
}

TEST(Checkpoint, CopyParametersAcrossPrecision) {
  QNetwork<float> f(shrunk_config(), 4);
  QNetwork<double> d(shrunk_config(), 99);
  copy_parameters(d, f);
  const auto img = uniform_tensor<double>({2, 1, 16, 16}, 1);
  const auto loc = uniform_tensor<double>({2, 2}, 2);
  const auto imgf = uniform_tensor<float>({2, 1, 16, 16}, 1);
  const auto locf = uniform_tensor<float>({2, 2}, 2);
  const Tensor<double> qd = d.predict(img, loc);
  const Tensor<float> qf = f.predict(imgf, locf);
  for (std::size_t i = 0; i < qd.size(); ++i) EXPECT_NEAR(qd[i], qf[i], 1e-4);

  QNetworkConfig other = shrunk_config();
  other.n_actions = 9;
  QNetwork<double> mismatched(other, 1);
  EXPECT_ANY_THROW(copy_parameters(mismatched, f));
}
