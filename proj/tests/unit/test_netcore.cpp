#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <set>

#include "../support.hpp"
#include "sequifi/checkpoint.hpp"
#include "sequifi/network.hpp"
#include "sequifi/trainer.hpp"

using namespace sequifi;
using testing::TempDir;

namespace {

Architecture tiny_arch() {
  Architecture a;
  a.input_dim = 8;
  a.lstm_units = {4, 4};
  a.dense_units = {3, 3, 3, 3};
  return a;
}

template <typename Scalar>
std::vector<Mat<Scalar>> random_sequences(int count, int dim, int max_len, Rng& rng) {
  std::vector<Mat<Scalar>> seqs;
  for (int i = 0; i < count; ++i) {
    const auto len = 1 + static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(max_len)));
    Mat<Scalar> s(dim, len);
    for (Eigen::Index k = 0; k < s.size(); ++k) s.data()[k] = Scalar(rng.normal());
    seqs.push_back(std::move(s));
  }
  return seqs;
}

template <typename Scalar>
SequenceBatch<Scalar> batch_of(const std::vector<Mat<Scalar>>& seqs) {
  std::vector<const Mat<Scalar>*> ptrs;
  for (const auto& s : seqs) ptrs.push_back(&s);
  return pack_batch<Scalar, Mat<Scalar>>(ptrs);
}

// Randomizes BN scale/shift and biases so every gradient path is exercised.
template <typename Scalar>
void jitter(NetworkParams<Scalar>& p, Rng& rng) {
  zip_tensors(TensorSet::trainable,
              [&](const TensorInfo& info, auto& t) {
                if (info.kind == TensorKind::bias || info.kind == TensorKind::bn_shift) {
                  for (Eigen::Index k = 0; k < t.size(); ++k) t.data()[k] += Scalar(0.3 * rng.normal());
                } else if (info.kind == TensorKind::bn_scale) {
                  for (Eigen::Index k = 0; k < t.size(); ++k) t.data()[k] = Scalar(0.5 + rng.uniform());
                }
              },
              p);
}

std::vector<Sample> separable_toy(int n, std::uint64_t seed) {
  // Two classes (angry vs sad) split by the sign of x0 + x1; happy and neutral never appear.
  Rng rng(seed);
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd x(4);
    for (int j = 0; j < 4; ++j) x[j] = rng.normal();
    const double margin = x[0] + x[1];
    if (std::abs(margin) < 0.3) x[0] += margin > 0 ? 0.3 : -0.3;
    const auto label = x[0] + x[1] > 0 ? EmotionLabel::angry : EmotionLabel::sad;
    out.push_back(testing::make_sample("t" + std::to_string(i), label, x));
  }
  return out;
}

}  // namespace

TEST_CASE("forward") {
  Rng rng(1);
  const auto params = init_params(tiny_arch(), 3);
  const auto seqs = random_sequences<double>(9, 8, 3, rng);
  const auto batch = batch_of(seqs);

  SUBCASE("probability rows sum to one and lie in (0,1)") {
    for (Mode mode : {Mode::train, Mode::eval}) {
      Rng mask_rng(4);
      const auto masks = make_dropout_masks<double>(params.architecture(), batch.size(), 0.2, mask_rng);
      const auto probs = forward(params, batch, mode, mode == Mode::train ? &masks : nullptr).probabilities();
      CHECK(probs.rows() == 9);
      CHECK(((probs.rowwise().sum().array() - 1.0).abs() <= 1e-6).all());
      CHECK((probs.array() > 0.0).all());
      CHECK((probs.array() < 1.0).all());
    }
  }

  SUBCASE("zero head gives exactly uniform probabilities") {
    auto p = params;
    p.head.weights.setZero();
    p.head.bias.setZero();
    CHECK((forward(p, batch, Mode::eval).probabilities().array() == 0.25).all());
  }

  SUBCASE("eval mode is deterministic") {
    CHECK(forward(params, batch, Mode::eval).probs == forward(params, batch, Mode::eval).probs);
  }

  SUBCASE("padding does not leak between samples in eval mode") {
    const auto together = forward(params, batch, Mode::eval).probabilities();
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      const auto alone = forward(params, batch_of(std::vector<Mat<double>>{seqs[i]}), Mode::eval).probabilities();
      CHECK((alone.row(0) - together.row(static_cast<Eigen::Index>(i))).cwiseAbs().maxCoeff() < 1e-12);
    }
  }

  SUBCASE("shape and finiteness errors") {
    std::vector<Mat<double>> wrong{Mat<double>::Zero(7, 1)};
    CHECK_THROWS_AS(forward(params, batch_of(wrong), Mode::eval), ShapeError);
    std::vector<Mat<double>> nan{Mat<double>::Constant(8, 1, std::nan(""))};
    CHECK_THROWS_AS(batch_of(nan), NumericError);
  }

  SUBCASE("train-mode batch norm normalizes each feature") {
    Rng mask_rng(5);
    const auto masks = make_dropout_masks<double>(params.architecture(), batch.size(), 0.2, mask_rng);
    const auto cache = forward(params, batch, Mode::train, &masks);
    for (const auto& d : cache.dense) {
      const Eigen::VectorXd mean = d.normalized.rowwise().mean();
      const Eigen::VectorXd var = (d.normalized.colwise() - mean).array().square().rowwise().mean();
      CHECK(mean.cwiseAbs().maxCoeff() <= 1e-6);
      // Biased variance of x-hat is var / (var + eps); features with tiny spread fall short of 1.
      for (Eigen::Index u = 0; u < var.size(); ++u) {
        const double expected = d.var[u] / (d.var[u] + kBatchNormEpsilon);
        CHECK(std::abs(var[u] - expected) <= 1e-9);
        if (d.var[u] > 0.1) CHECK(std::abs(var[u] - 1.0) <= 1e-4);
      }
    }
  }
}

TEST_CASE("loss") {
  SUBCASE("perfect prediction costs nothing") {
    Mat<double> probs = Mat<double>::Zero(4, 3);
    probs(2, 0) = probs(0, 1) = probs(3, 2) = 1.0;
    const std::vector<int> labels{2, 0, 3};
    CHECK(cross_entropy(probs, labels) == 0.0);
  }
  SUBCASE("uniform probabilities cost ln 4") {
    const Mat<double> probs = Mat<double>::Constant(4, 5, 0.25);
    const std::vector<int> labels{0, 1, 2, 3, 0};
    CHECK(cross_entropy(probs, labels) == doctest::Approx(1.386294).epsilon(1e-6));
  }
  SUBCASE("floor keeps confident mistakes finite") {
    Mat<double> probs = Mat<double>::Zero(4, 1);
    probs(0, 0) = 1.0;
    const std::vector<int> labels{1};
    CHECK(cross_entropy(probs, labels) == doctest::Approx(-std::log(1e-12)));
  }
  SUBCASE("L2 of a 2x2 matrix of ones at lambda 0.5") {
    NetworkParams<double> p;
    p.head.weights = Mat<double>::Ones(2, 2);
    p.head.bias = Vec<double>::Constant(2, 5.0);
    CHECK(l2_penalty(p, Regularization{0.5, true}) == 2.0);
    NetworkParams<double> g = zeros_like(p);
    add_l2_gradient(p, Regularization{0.5, true}, g);
    CHECK(g.head.weights == Mat<double>::Ones(2, 2));
    CHECK(g.head.bias == Vec<double>::Zero(2));
  }
  SUBCASE("L2 gradient is 2 lambda W on every weight matrix, recurrent ones optional") {
    const auto p = init_params(tiny_arch(), 8);
    for (bool rec : {true, false}) {
      auto g = zeros_like(p);
      add_l2_gradient(p, Regularization{0.01, rec}, g);
      zip_tensors(TensorSet::trainable,
                  [&](const TensorInfo& info, const auto& gt, const auto& pt) {
                    CAPTURE(info.name);
                    if (info.kind == TensorKind::input_weight || (rec && info.kind == TensorKind::recurrent_weight)) {
                      CHECK((gt - 0.02 * pt).cwiseAbs().maxCoeff() < 1e-15);
                    } else {
                      CHECK(gt.cwiseAbs().maxCoeff() == 0.0);
                    }
                  },
                  g, p);
    }
  }
}

TEST_CASE("backward matches central finite differences in long double") {
  using LD = long double;
  const LD h = 1e-4L;
  int checked = 0;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(derive_seed(seed, "fd"));
    auto params = cast_params<LD>(init_params(tiny_arch(), derive_seed(seed, "fd-init")));
    jitter(params, rng);
    const auto seqs = random_sequences<LD>(6, 8, 3, rng);
    const auto batch = batch_of(seqs);
    std::vector<int> labels;
    for (int i = 0; i < 6; ++i) labels.push_back(static_cast<int>(rng.below(4)));
    const auto masks = make_dropout_masks<LD>(params.architecture(), batch.size(), 0.2, rng);
    const Regularization reg{1e-3, true};

    const auto objective = [&](const NetworkParams<LD>& p) {
      return loss(forward(p, batch, Mode::train, &masks).probs, labels, p, reg);
    };
    const auto grads = backward(params, forward(params, batch, Mode::train, &masks), labels, &reg);

    auto probe = params;
    zip_tensors(TensorSet::trainable,
                [&](const TensorInfo& info, auto& t, const auto& g) {
                  for (Eigen::Index k = 0; k < t.size(); ++k) {
                    const LD saved = t.data()[k];
                    const auto at = [&](LD offset) {
                      t.data()[k] = saved + offset;
                      const LD v = objective(probe);
                      t.data()[k] = saved;
                      return v;
                    };
                    // Fourth-order central stencil with step h.
                    const LD numeric = (8 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12 * h);
                    const LD analytic = g.data()[k];
                    const LD scale = std::max({std::abs(numeric), std::abs(analytic), LD(1e-7)});
                    const double rel = static_cast<double>(std::abs(numeric - analytic) / scale);
                    worst = std::max(worst, rel);
                    if (rel > 1e-4) {
                      CAPTURE(seed);
                      CAPTURE(info.name);
                      CAPTURE(k);
                      CHECK(rel <= 1e-4);
                    }
                    ++checked;
                  }
                },
                probe, grads);
  }
  MESSAGE("finite-difference checks: " << checked << ", worst relative error " << worst);
  CHECK(checked > 20 * 300);
}

TEST_CASE("dropped units pass no gradient to downstream weights") {
  Rng rng(21);
  const auto params = init_params(tiny_arch(), 22);
  const auto seqs = random_sequences<double>(5, 8, 2, rng);
  const auto batch = batch_of(seqs);
  auto masks = make_dropout_masks<double>(params.architecture(), batch.size(), 0.2, rng);
  for (auto& m : masks) m.setConstant(1.25);
  masks[1].row(2).setZero();
  masks[3].row(0).setZero();
  const std::vector<int> labels{0, 1, 2, 3, 1};
  const auto g = backward(params, forward(params, batch, Mode::train, &masks), labels);
  CHECK(g.dense[2].weights.col(2).cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.head.weights.col(0).cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.head.weights.col(1).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("running statistics use momentum 0.9") {
  Rng rng(31);
  auto params = init_params(tiny_arch(), 32);
  const auto seqs = random_sequences<double>(8, 8, 1, rng);
  const auto cache = forward(params, batch_of(seqs), Mode::train);
  const auto before = params;
  update_running_stats(params, cache, 0.9);
  for (std::size_t l = 0; l < params.bn.size(); ++l) {
    CHECK((params.bn[l].running_mean - (0.9 * before.bn[l].running_mean + 0.1 * cache.dense[l].mean))
              .cwiseAbs()
              .maxCoeff() < 1e-15);
    CHECK((params.bn[l].running_var.array() > 0.0).all());
  }
}

TEST_CASE("adam") {
  auto params = init_params(tiny_arch(), 41);

  SUBCASE("first step moves every element by about lr") {
    auto grads = zeros_like(params);
    zip_tensors(TensorSet::trainable, [](const TensorInfo&, auto& g) { g.setConstant(0.5); }, grads);
    auto state = fresh_adam_state(params);
    auto updated = params;
    adam_step(updated, grads, state, 1e-3);
    CHECK(state.t == 1);
    const double expected = 1e-3 * 0.5 / (0.5 + 1e-8);
    zip_tensors(TensorSet::trainable,
                [&](const TensorInfo&, const auto& after, const auto& prior) {
                  CHECK(((prior - after).array() - expected).abs().maxCoeff() < 1e-12);
                },
                updated, params);
  }

  SUBCASE("zero gradient leaves params unchanged and counts the step") {
    auto state = fresh_adam_state(params);
    auto updated = params;
    adam_step(updated, zeros_like(params), state, 1e-3);
    CHECK(state.t == 1);
    zip_tensors(TensorSet::all, [](const TensorInfo&, const auto& a, const auto& b) { CHECK(a == b); }, updated,
                params);
  }

  SUBCASE("deterministic") {
    Rng rng(42);
    auto grads = zeros_like(params);
    zip_tensors(TensorSet::trainable,
                [&](const TensorInfo&, auto& g) {
                  for (Eigen::Index k = 0; k < g.size(); ++k) g.data()[k] = rng.normal();
                },
                grads);
    auto s1 = fresh_adam_state(params);
    auto s2 = fresh_adam_state(params);
    auto p1 = params;
    auto p2 = params;
    for (int i = 0; i < 3; ++i) {
      adam_step(p1, grads, s1, 1e-3);
      adam_step(p2, grads, s2, 1e-3);
    }
    zip_tensors(TensorSet::all, [](const TensorInfo&, const auto& a, const auto& b) { CHECK(a == b); }, p1, p2);
  }

  SUBCASE("non-finite gradient names the tensor and changes nothing") {
    auto grads = zeros_like(params);
    grads.dense[2].bias[1] = std::numeric_limits<double>::infinity();
    auto state = fresh_adam_state(params);
    auto updated = params;
    try {
      adam_step(updated, grads, state, 1e-3);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("dense2.bias") != std::string::npos);
    }
    CHECK(state.t == 0);
    CHECK(updated.dense[0].weights == params.dense[0].weights);
  }
}

TEST_CASE("train") {
  Architecture arch;
  arch.input_dim = 4;
  const auto init = init_params(arch, 51);
  const auto toy = separable_toy(200, 52);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.seed = 53;

  SUBCASE("separable toy reaches 98% train accuracy with non-increasing smoothed loss") {
    const auto result = train(init, toy, cfg);
    const auto pred = predict(result.params, toy);
    const auto truth = label_codes(toy);
    int correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == truth[i];
    CHECK(correct >= 196);
    REQUIRE(result.log.epochs.size() == 30);
    std::vector<double> smooth;
    for (std::size_t e = 0; e + 5 <= result.log.epochs.size(); ++e) {
      double s = 0.0;
      for (std::size_t k = e; k < e + 5; ++k) s += result.log.epochs[k].mean_loss;
      smooth.push_back(s / 5.0);
    }
    for (std::size_t i = 1; i < smooth.size(); ++i) {
      CAPTURE(i);
      CHECK(smooth[i] <= smooth[i - 1]);
    }
    CHECK(all_finite(result.params));
  }

  SUBCASE("zero epochs returns the input") {
    cfg.epochs = 0;
    const auto result = train(init, toy, cfg);
    zip_tensors(TensorSet::all, [](const TensorInfo&, const auto& a, const auto& b) { CHECK(a == b); },
                result.params, init);
    CHECK(result.log.epoch_units() == 0);
  }

  SUBCASE("bitwise determinism") {
    cfg.epochs = 3;
    const auto a = train(init, toy, cfg);
    const auto b = train(init, toy, cfg);
    zip_tensors(TensorSet::all, [](const TensorInfo&, const auto& x, const auto& y) { CHECK(x == y); }, a.params,
                b.params);
  }

  SUBCASE("batches cover every sample once per epoch, last batch smaller") {
    cfg.epochs = 2;
    TrainHooks hooks;
    hooks.record_batches = true;
    const auto result = train(init, std::span(toy).first(70), cfg, hooks);
    REQUIRE(result.log.batches.size() == 6);
    CHECK(result.log.batches[2].ids.size() == 6);
    std::set<std::string> seen;
    for (std::size_t b = 0; b < 3; ++b) seen.insert(result.log.batches[b].ids.begin(), result.log.batches[b].ids.end());
    CHECK(seen.size() == 70);
    CHECK(result.log.batches[0].ids != result.log.batches[3].ids);
  }

  SUBCASE("empty sample set") {
    CHECK_THROWS_AS(train(init, std::span<const Sample>{}, cfg), DataError);
  }
}

TEST_CASE("predict") {
  SUBCASE("ties go to the lowest class code") {
    Mat<double> p = Mat<double>::Constant(2, 4, 0.25);
    p(1, 0) = 0.1;
    p(1, 1) = 0.7;
    p(1, 2) = 0.1;
    p(1, 3) = 0.1;
    CHECK(argmax_rows(p) == std::vector<int>{0, 1});
  }
  SUBCASE("uniform network predicts class 0") {
    Architecture arch;
    arch.input_dim = 4;
    auto params = init_params(arch, 61);
    params.head.weights.setZero();
    params.head.bias.setZero();
    const auto toy = separable_toy(10, 62);
    CHECK(predict(params, toy) == std::vector<int>(10, 0));
  }
  SUBCASE("adding a constant to every logit changes nothing") {
    Architecture arch;
    arch.input_dim = 4;
    auto params = init_params(arch, 63);
    params.head.bias << 0.3, -0.2, 0.1, 0.0;
    const auto toy = separable_toy(40, 64);
    const auto before = predict(params, toy);
    params.head.bias.array() += 7.5;
    CHECK(predict(params, toy) == before);
  }
}

TEST_CASE("checkpoint round trip") {
  TempDir dir("ckpt");
  Architecture arch = tiny_arch();
  const auto params = init_params(arch, 71);
  const auto toy = [&] {
    std::vector<Sample> s;
    Rng rng(72);
    for (int i = 0; i < 40; ++i) {
      Eigen::VectorXd x(8);
      for (int j = 0; j < 8; ++j) x[j] = rng.normal();
      s.push_back(testing::make_sample("c" + std::to_string(i), static_cast<EmotionLabel>(i % 4), x));
    }
    return s;
  }();
  TrainConfig cfg;
  cfg.epochs = 2;
  const auto trained = train(params, toy, cfg);
  save_checkpoint(dir / "m.json", trained.params, &trained.adam);
  const auto loaded = load_checkpoint(dir / "m.json");
  zip_tensors(TensorSet::all, [](const TensorInfo&, const auto& a, const auto& b) { CHECK(a == b); }, loaded.params,
              trained.params);
  REQUIRE(loaded.adam.has_value());
  CHECK(loaded.adam->t == trained.adam.t);
  zip_tensors(TensorSet::trainable, [](const TensorInfo&, const auto& a, const auto& b) { CHECK(a == b); },
              loaded.adam->m, trained.adam.m);
  CHECK(loaded.params.architecture() == arch);

  testing::write_text(dir / "bad.json", R"({"format": "sequifi-checkpoint", "version": 99})");
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.json"), Error);
}
