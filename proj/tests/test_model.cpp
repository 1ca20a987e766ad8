#include <doctest.h>

#include <cmath>
#include <numeric>

#include "fd_oracle.hpp"
#include "generator_properties.hpp"
#include "leopard/model/encoder.hpp"
#include "leopard/model/generator.hpp"

using namespace leopard;
using namespace leopard::model;
using ad::Tensor;

namespace {

EncoderConfig small_config() {
  EncoderConfig c;
  c.vocab_size = 30;
  c.max_len = 12;
  c.layers = 2;
  c.hidden = 32;
  c.heads = 4;
  c.ff = 48;
  return c;
}

data::EncodedBatch batch_of(const std::vector<std::vector<int>>& rows, std::size_t seq_len) {
  data::EncodedBatch b;
  b.batch = rows.size();
  b.seq_len = seq_len;
  for (auto r : rows) {
    r.resize(seq_len, data::kPadId);
    b.ids.insert(b.ids.end(), r.begin(), r.end());
    b.labels.push_back(0);
  }
  return b;
}

std::vector<double> row(const Tensor& t, std::size_t r) {
  auto v = t.values();
  return {v.begin() + static_cast<long>(r * t.cols()), v.begin() + static_cast<long>((r + 1) * t.cols())};
}

// Plain-loop two-layer MLP, independent of the autodiff ops.
std::vector<double> mlp_oracle(const ParamSet& p, const std::string& prefix, const std::vector<double>& x) {
  auto affine = [&](const std::string& w, const std::string& b, const std::vector<double>& in) {
    const Tensor& W = lookup(p, w);
    const Tensor& B = lookup(p, b);
    std::vector<double> out(W.cols());
    for (std::size_t j = 0; j < W.cols(); ++j) {
      double acc = B.values()[j];
      for (std::size_t i = 0; i < in.size(); ++i) acc += in[i] * W.at(i, j);
      out[j] = acc;
    }
    return out;
  };
  auto h = affine(prefix + ".w1", prefix + ".b1", x);
  for (double& v : h) v = std::tanh(v);
  return affine(prefix + ".w2", prefix + ".b2", h);
}

ParamSet random_generator(std::size_t d, std::size_t l, std::mt19937_64& rng) {
  ParamSet p;
  init_mlp(p, kGenerator, d, d, l + 1, rng);
  for (auto& [path, t] : p) {
    std::normal_distribution<double> n(0.0, 0.5);
    for (double& v : t.mutable_values()) v = n(rng);
  }
  return p;
}

}  // namespace

TEST_CASE("encode returns one CLS vector per sequence") {
  std::mt19937_64 rng(1);
  ParamSet p;
  auto cfg = small_config();
  init_encoder(p, cfg, rng);
  auto b = batch_of({{2, 5, 6}, {2, 7}, {2, 8, 9, 10}}, 12);
  Tensor h = encode(p, cfg, b);
  CHECK(h.shape() == ad::Shape{3, 32});
  for (double v : h.values()) CHECK(std::isfinite(v));
}

TEST_CASE("encode is independent across the batch") {
  std::mt19937_64 rng(2);
  ParamSet p;
  auto cfg = small_config();
  init_encoder(p, cfg, rng);
  std::vector<std::vector<int>> rows{{2, 5, 6}, {2, 7}, {2, 8, 9, 10}};
  Tensor h = encode(p, cfg, batch_of(rows, 12));
  Tensor permuted = encode(p, cfg, batch_of({rows[2], rows[0], rows[1]}, 12));
  CHECK(row(permuted, 0) == row(h, 2));
  CHECK(row(permuted, 1) == row(h, 0));
  CHECK(row(permuted, 2) == row(h, 1));
  Tensor again = encode(p, cfg, batch_of(rows, 12));
  CHECK(std::vector<double>(again.values().begin(), again.values().end()) ==
        std::vector<double>(h.values().begin(), h.values().end()));
}

TEST_CASE("trailing padding does not change the CLS vector") {
  std::mt19937_64 rng(3);
  ParamSet p;
  auto cfg = small_config();
  init_encoder(p, cfg, rng);
  std::vector<int> seq{2, 11, 12, 13};
  Tensor alone = encode(p, cfg, batch_of({seq}, 4));
  Tensor padded = encode(p, cfg, batch_of({seq}, 12));
  // Next to a longer sequence the padded keys are live columns masked out.
  Tensor mixed = encode(p, cfg, batch_of({seq, {2, 5, 5, 5, 5, 5, 5, 5, 5, 5, 5, 5}}, 12));
  for (std::size_t j = 0; j < alone.cols(); ++j) {
    CHECK(padded.at(0, j) == alone.at(0, j));
    CHECK(mixed.at(0, j) == doctest::Approx(alone.at(0, j)).epsilon(1e-12));
  }
}

TEST_CASE("attention rows over real tokens sum to one") {
  std::mt19937_64 rng(4);
  ParamSet p;
  auto cfg = small_config();
  init_encoder(p, cfg, rng);
  auto b = batch_of({{2, 5, 6}, {2, 7, 8, 9, 10, 11}}, 12);
  std::vector<std::vector<double>> maps;
  encode(p, cfg, b, Forward{nullptr, &maps});
  REQUIRE(maps.size() == cfg.layers);
  const std::size_t s = 6;  // trimmed to the longest sequence
  const std::size_t lengths[] = {3, 6};
  for (const auto& m : maps) {
    REQUIRE(m.size() == 2 * cfg.heads * s * s);
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t h = 0; h < cfg.heads; ++h) {
        for (std::size_t q = 0; q < s; ++q) {
          const double* r = m.data() + ((i * cfg.heads + h) * s + q) * s;
          double total = 0.0;
          for (std::size_t k = 0; k < s; ++k) {
            total += r[k];
            if (k >= lengths[i]) CHECK(r[k] == 0.0);
          }
          CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
        }
      }
    }
  }
}

TEST_CASE("encode rejects ids outside the vocabulary") {
  std::mt19937_64 rng(5);
  ParamSet p;
  auto cfg = small_config();
  init_encoder(p, cfg, rng);
  CHECK_THROWS_AS(encode(p, cfg, batch_of({{2, 30}}, 4)), std::out_of_range);
  CHECK_THROWS_AS(encode(p, cfg, batch_of({{2, 3}}, 13)), ad::ShapeError);
}

TEST_CASE("encoder config validation") {
  auto cfg = small_config();
  cfg.heads = 5;
  CHECK_THROWS(cfg.validate());
  cfg = small_config();
  cfg.hidden_dropout = 1.0;
  CHECK_THROWS(cfg.validate());
  auto j = small_config().to_json();
  auto back = EncoderConfig::from_json(j);
  CHECK(back.to_json() == j);
}

TEST_CASE("encoder layer indexing covers every encoder path") {
  std::mt19937_64 rng(6);
  ParamSet p;
  auto cfg = small_config();
  init_encoder(p, cfg, rng);
  std::map<int, int> per_layer;
  for (const auto& [path, t] : p) {
    auto layer = encoder_layer(path);
    REQUIRE(layer.has_value());
    ++per_layer[*layer];
  }
  CHECK(per_layer.size() == cfg.layers + 1);
  CHECK(per_layer[0] == 4);
  CHECK(per_layer[1] == 16);
  CHECK(!encoder_layer("projection.w1").has_value());
  CHECK(!encoder_layer("encoder.layerx.w").has_value());
  CHECK(encoder_layer("encoder.layer12.ffn.w1") == 12);
}

TEST_CASE("dropout draws are seeded") {
  std::mt19937_64 init(7);
  ParamSet p;
  auto cfg = small_config();
  cfg.hidden_dropout = 0.3;
  cfg.attention_dropout = 0.2;
  init_encoder(p, cfg, init);
  auto b = batch_of({{2, 5, 6, 7}}, 12);
  std::mt19937_64 r1(9), r2(9);
  Tensor a = encode(p, cfg, b, Forward{&r1});
  Tensor c = encode(p, cfg, b, Forward{&r2});
  Tensor eval = encode(p, cfg, b);
  CHECK(row(a, 0) == row(c, 0));
  CHECK(row(a, 0) != row(eval, 0));
}

TEST_CASE("encoder gradients match finite differences") {
  std::mt19937_64 rng(8);
  ParamSet p;
  auto cfg = small_config();
  cfg.hidden = 8;
  cfg.heads = 2;
  cfg.ff = 8;
  init_encoder(p, cfg, rng);
  for (auto& [path, t] : p) {
    std::normal_distribution<double> n(0.0, 0.3);
    if (path.find("ln") == std::string::npos) {
      for (double& v : t.mutable_values()) v = n(rng);
    }
  }
  auto b = batch_of({{2, 5, 6}, {2, 7, 8, 9}}, 6);
  // A random readout; sum(h * h) would be constant after the final layer norm.
  Tensor readout = fd::random_tensor({2, cfg.hidden}, rng, 1.0, false);
  auto loss_fn = [&] {
    Tensor h = encode(p, cfg, b);
    return ad::sum(ad::tanh(ad::mul(h, readout)));
  };
  Tensor loss = loss_fn();
  ad::backward(loss);
  for (const char* path : {"encoder.embeddings.token", "encoder.embeddings.position", "encoder.layer1.attn.wq",
                           "encoder.layer2.ffn.w1", "encoder.layer2.ln2.gamma", "encoder.layer1.attn.bv"}) {
    Tensor& t = p.at(path);
    auto numeric = fd::numeric_gradient<double>([&] { return loss_fn().item(); }, t);
    CHECK_MESSAGE(fd::max_relative_error(t.grad(), numeric, 1e-6) < 1e-5, path);
  }
}

TEST_CASE("project shapes and zero parameters") {
  std::mt19937_64 rng(9);
  ParamSet p;
  init_mlp(p, kProjection, 16, 16, 256, rng);
  Tensor h = fd::random_tensor({5, 16}, rng);
  CHECK(project(p, h).shape() == ad::Shape{5, 256});
  for (auto& [path, t] : p) std::fill(t.mutable_values().begin(), t.mutable_values().end(), 0.0);
  Tensor zero = project(p, h);
  for (double v : zero.values()) CHECK(v == 0.0);
  CHECK_THROWS_AS(project(p, fd::random_tensor({5, 15}, rng)), ad::ShapeError);
}

TEST_CASE("project gradients match finite differences") {
  std::mt19937_64 rng(10);
  ParamSet p;
  init_mlp(p, kProjection, 6, 6, 4, rng);
  for (auto& [path, t] : p) {
    std::normal_distribution<double> n(0.0, 0.5);
    for (double& v : t.mutable_values()) v = n(rng);
  }
  Tensor h = fd::random_tensor({3, 6}, rng);
  auto loss_fn = [&] { return ad::sum(ad::tanh(project(p, h))); };
  ad::backward(loss_fn());
  for (auto& [path, t] : p) {
    auto numeric = fd::numeric_gradient<double>([&] { return loss_fn().item(); }, t);
    CHECK_MESSAGE(fd::max_relative_error(t.grad(), numeric, 1e-8) < 1e-6, path);
  }
  auto numeric = fd::numeric_gradient<double>([&] { return loss_fn().item(); }, h);
  CHECK(fd::max_relative_error(h.grad(), numeric, 1e-8) < 1e-6);
}

TEST_CASE("generated class parameters are the mean of per-example outputs") {
  std::mt19937_64 rng(11);
  const std::size_t d = 5, l = 3;
  ParamSet psi = random_generator(d, l, rng);
  Tensor x = fd::random_tensor({3, d}, rng, 1.0, false);

  Tensor one = ad::select_rows(x, std::vector<std::size_t>{1});
  auto single = generate_class_params(psi, one, "c");
  auto expected = mlp_oracle(psi, kGenerator, row(x, 1));
  for (std::size_t j = 0; j < l; ++j) CHECK(single.w.values()[j] == doctest::Approx(expected[j]).epsilon(1e-12));
  CHECK(single.b.item() == doctest::Approx(expected[l]).epsilon(1e-12));

  auto twice = generate_class_params(psi, ad::select_rows(x, std::vector<std::size_t>{1, 1}), "c");
  for (std::size_t j = 0; j < l; ++j) CHECK(twice.w.values()[j] == doctest::Approx(single.w.values()[j]).epsilon(1e-14));
  CHECK(twice.b.item() == doctest::Approx(single.b.item()).epsilon(1e-14));

  auto all = generate_class_params(psi, x, "c");
  std::vector<double> mean(l + 1, 0.0);
  for (std::size_t r = 0; r < 3; ++r) {
    auto o = mlp_oracle(psi, kGenerator, row(x, r));
    for (std::size_t j = 0; j <= l; ++j) mean[j] += o[j] / 3.0;
  }
  for (std::size_t j = 0; j < l; ++j) CHECK(all.w.values()[j] == doctest::Approx(mean[j]).epsilon(1e-12));
  CHECK(all.b.item() == doctest::Approx(mean[l]).epsilon(1e-12));
}

TEST_CASE("generate_softmax reports empty classes by name") {
  std::mt19937_64 rng(12);
  ParamSet psi = random_generator(4, 2, rng);
  Tensor x = fd::random_tensor({2, 4}, rng);
  std::vector<int> labels{0, 0};
  try {
    generate_softmax(psi, x, labels, {"alpha", "beta"});
    FAIL("expected an error");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("beta") != std::string::npos);
  }
}

TEST_CASE("assemble_softmax shapes, order and errors") {
  auto cp = [](std::vector<double> w, double b) {
    return ClassParams{Tensor::from({w.size()}, w), Tensor::from({1}, {b})};
  };
  auto sm = assemble_softmax({cp({1, 2, 3}, 0.5), cp({4, 5, 6}, -1)}, {"x", "y"});
  CHECK(sm.W.shape() == ad::Shape{2, 3});
  CHECK(sm.b.shape() == ad::Shape{2});
  CHECK(sm.W.at(1, 0) == 4.0);
  CHECK(sm.b.values()[0] == 0.5);

  auto swapped = assemble_softmax({cp({4, 5, 6}, -1), cp({1, 2, 3}, 0.5)}, {"y", "x"});
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(swapped.W.at(0, j) == sm.W.at(1, j));
    CHECK(swapped.W.at(1, j) == sm.W.at(0, j));
  }
  CHECK(swapped.b.values()[0] == sm.b.values()[1]);

  std::vector<ClassParams> eight;
  std::vector<std::string> names;
  for (int i = 0; i < 8; ++i) {
    eight.push_back(cp(std::vector<double>(16, i), i));
    names.push_back("c" + std::to_string(i));
  }
  CHECK(assemble_softmax(eight, names).W.shape() == ad::Shape{8, 16});

  CHECK_THROWS_AS(assemble_softmax({cp({1, 2}, 0), cp({1, 2, 3}, 0)}, {"a", "b"}), ad::ShapeError);
  CHECK_THROWS(assemble_softmax({cp({1, 2}, 0)}, {"a"}));
}

TEST_CASE("predict by hand") {
  GeneratedSoftmax sm{Tensor::from({2, 2}, {1, 2, -1, 0.5}), Tensor::from({2}, {0.1, -0.2}), {"a", "b"}};
  Tensor h = Tensor::from({1, 2}, {0.3, -0.4});
  auto probs = predict(sm, h);
  CHECK(probs[0] == doctest::Approx(0.574442516811659).epsilon(1e-12));
  CHECK(probs[1] == doctest::Approx(1.0 - 0.574442516811659).epsilon(1e-12));

  GeneratedSoftmax shifted{sm.W, Tensor::from({2}, {10.1, 9.8}), {"a", "b"}};
  auto p2 = predict(shifted, h);
  CHECK(p2[0] == doctest::Approx(probs[0]).epsilon(1e-12));

  auto zero = predict(zero_softmax(2, {"a", "b", "c"}), Tensor::from({2, 2}, {1, 2, 3, 4}));
  for (double v : zero) CHECK(v == 1.0 / 3.0);
}

TEST_CASE("argmax breaks ties toward the lowest index") {
  std::vector<double> v{0.2, 0.4, 0.4, 0.5, 0.5, 0.0, 1.0 / 3, 1.0 / 3, 1.0 / 3};
  CHECK(argmax_rows(v, 3) == std::vector<int>{1, 0, 0});
}

TEST_CASE("generator invariants over randomized cases") {
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    CAPTURE(seed);
    CHECK(leopard::testing::check_generator_case(seed) == "");
  }
}

TEST_CASE("row mean is exactly invariant to row order") {
  std::mt19937_64 rng(21);
  Tensor x = fd::random_tensor({7, 3}, rng, 1e3, false);
  Tensor reversed = ad::select_rows(x, std::vector<std::size_t>{6, 5, 4, 3, 2, 1, 0});
  Tensor a = ad::mean_rows(x);
  Tensor b = ad::mean_rows(reversed);
  CHECK(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
}
