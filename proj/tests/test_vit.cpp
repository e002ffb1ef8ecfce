#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "pcam/vit.hpp"
#include "test_util.hpp"

using namespace pcam;
using namespace pcam::testing;

namespace {

// Independent single-head pre-LN block: naive loops, no library kernels.
using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Matrix& m) {
  Mat out(m.rows(), std::vector<double>(m.cols()));
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out[r][c] = m(r, c);
  return out;
}

Mat affine(const Mat& x, const Matrix& w, const Matrix& b) {
  Mat y(x.size(), std::vector<double>(w.cols(), 0.0));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j) {
      double s = b(0, j);
      for (std::size_t k = 0; k < w.rows(); ++k) s += x[i][k] * w(k, j);
      y[i][j] = s;
    }
  return y;
}

Mat norm(const Mat& x, const Matrix& g, const Matrix& b, double eps) {
  Mat y = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double mu = 0.0, var = 0.0;
    for (double v : x[i]) mu += v / x[i].size();
    for (double v : x[i]) var += (v - mu) * (v - mu) / x[i].size();
    for (std::size_t j = 0; j < x[i].size(); ++j) y[i][j] = (x[i][j] - mu) / std::sqrt(var + eps) * g(0, j) + b(0, j);
  }
  return y;
}

// residual stream x; queries from qx (default x), keys/values from kv (default x)
Mat oracle_block(const ModelConfig& cfg, const LayerParams& p, const Mat& x, const Mat* kv, const Mat* qx = nullptr) {
  const Mat xn = norm(qx ? *qx : x, p.ln1_gain, p.ln1_bias, cfg.ln_eps);
  const Mat yn = kv ? norm(*kv, p.ln1_gain, p.ln1_bias, cfg.ln_eps) : norm(x, p.ln1_gain, p.ln1_bias, cfg.ln_eps);
  const Mat q = affine(xn, p.wq, p.bq), k = affine(yn, p.wk, p.bk), v = affine(yn, p.wv, p.bv);
  Mat att(x.size(), std::vector<double>(q[0].size(), 0.0));
  for (std::size_t i = 0; i < q.size(); ++i) {
    std::vector<double> s(k.size());
    double mx = -1e300, z = 0.0;
    for (std::size_t j = 0; j < k.size(); ++j) {
      s[j] = 0.0;
      for (std::size_t d = 0; d < q[i].size(); ++d) s[j] += q[i][d] * k[j][d];
      s[j] /= std::sqrt(static_cast<double>(q[i].size()));
      mx = std::max(mx, s[j]);
    }
    for (double& e : s) z += (e = std::exp(e - mx));
    for (std::size_t j = 0; j < k.size(); ++j)
      for (std::size_t d = 0; d < v[j].size(); ++d) att[i][d] += s[j] / z * v[j][d];
  }
  const Mat o = affine(att, p.wo, p.bo);
  Mat h = x;
  for (std::size_t i = 0; i < h.size(); ++i)
    for (std::size_t d = 0; d < h[i].size(); ++d) h[i][d] += o[i][d];
  Mat u = affine(norm(h, p.ln2_gain, p.ln2_bias, cfg.ln_eps), p.w1, p.b1);
  for (auto& row : u)
    for (double& e : row) e = 0.5 * e * (1.0 + std::erf(e / std::sqrt(2.0)));
  const Mat m = affine(u, p.w2, p.b2);
  for (std::size_t i = 0; i < h.size(); ++i)
    for (std::size_t d = 0; d < h[i].size(); ++d) h[i][d] += m[i][d];
  return h;
}

void randomize(ModelParams& p, Rng& rng) {
  p.for_each([&](const std::string&, Matrix& m) {
    for (double& v : m.values()) v = rng.uniform(-0.8, 0.8);
  });
}

}  // namespace

TEST_CASE("model config invariants") {
  ModelConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.grid_side() == 4);
  CHECK(c.patch_count() == 16);
  c.patch_side = 3;
  CHECK_THROWS_AS(c.validate(), ContractError);
  c = ModelConfig{};
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ContractError);
}

TEST_CASE("patchify examples") {
  ModelConfig cfg = tiny_config();
  VitModel m = VitModel::initialize(cfg, 1);
  m.params.patch_w.fill(0.0);
  m.params.cls_token.fill(0.0);
  const TokenSequence t = patchify(blank_image(cfg.image_side), m);
  CHECK(t.tokens == m.params.pos_embed);

  ModelConfig one = cfg;
  one.image_side = one.patch_side;
  CHECK(patchify(blank_image(one.image_side), VitModel::initialize(one, 2)).tokens.rows() == 2);

  CHECK_THROWS_AS(patchify(blank_image(cfg.image_side + 2), m), ContractError);
}

TEST_CASE("patchify matches a flatten-and-project oracle") {
  ModelConfig cfg;
  cfg.image_side = 4;
  cfg.patch_side = 2;
  cfg.channels = 2;
  cfg.embed_dim = 4;
  cfg.heads = 1;
  VitModel m = VitModel::initialize(cfg, 3);
  Rng rng(4);
  randomize(m.params, rng);
  const ImageSample img = noise_image(rng, 4, 2);
  const Matrix tokens = patchify(img, m).tokens;
  REQUIRE(tokens.rows() == 5);
  for (int gr = 0; gr < 2; ++gr)
    for (int gc = 0; gc < 2; ++gc) {
      std::vector<double> flat;
      for (int c = 0; c < 2; ++c)
        for (int y = 0; y < 2; ++y)
          for (int x = 0; x < 2; ++x) flat.push_back(img.pixels[static_cast<std::size_t>(c * 16 + (gr * 2 + y) * 4 + gc * 2 + x)]);
      const std::size_t j = static_cast<std::size_t>(gr * 2 + gc);
      for (std::size_t d = 0; d < 4; ++d) {
        double s = m.params.patch_b(0, d) + m.params.pos_embed(j + 1, d);
        for (std::size_t k = 0; k < flat.size(); ++k) s += flat[k] * m.params.patch_w(k, d);
        CHECK(std::abs(tokens(j + 1, d) - s) < 1e-12);
      }
    }
  for (std::size_t d = 0; d < 4; ++d)
    CHECK(tokens(0, d) == doctest::Approx(m.params.cls_token(0, d) + m.params.pos_embed(0, d)).epsilon(1e-15));
}

TEST_CASE("attention examples") {
  const Matrix v{{3.0, -1.0}};
  const auto single = attention(Matrix{{0.3, 0.7}}, Matrix{{-2.0, 5.0}}, v);
  CHECK(single.weights == Matrix{{1.0}});
  CHECK(single.output == v);

  const Matrix k{{1.0, 2.0}, {1.0, 2.0}, {1.0, 2.0}};
  const Matrix vv{{1.0, 0.0}, {2.0, 3.0}, {6.0, -3.0}};
  const auto uni = attention(Matrix{{0.5, -0.1}, {2.0, 1.0}}, k, vv);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(uni.weights(i, j) - 1.0 / 3.0) < 1e-15);
    CHECK(std::abs(uni.output(i, 0) - 3.0) < 1e-12);
    CHECK(std::abs(uni.output(i, 1) - 0.0) < 1e-12);
  }

  // two tokens, direct evaluation
  const Matrix q{{1.0, 0.0}, {0.0, 2.0}}, kk{{0.5, 1.0}, {-1.0, 0.25}}, v2{{1.0, 2.0}, {3.0, 4.0}};
  const auto r = attention(q, kk, v2);
  for (int i = 0; i < 2; ++i) {
    const double s0 = (q(i, 0) * kk(0, 0) + q(i, 1) * kk(0, 1)) / std::sqrt(2.0);
    const double s1 = (q(i, 0) * kk(1, 0) + q(i, 1) * kk(1, 1)) / std::sqrt(2.0);
    const double w0 = std::exp(s0) / (std::exp(s0) + std::exp(s1));
    CHECK(std::abs(r.weights(i, 0) - w0) < 1e-12);
    CHECK(std::abs(r.output(i, 0) - (w0 * 1.0 + (1 - w0) * 3.0)) < 1e-12);
    CHECK(std::abs(r.output(i, 1) - (w0 * 2.0 + (1 - w0) * 4.0)) < 1e-12);
  }
  CHECK_THROWS_AS(attention(q, Matrix{{1.0, 2.0, 3.0}}, v2), ContractError);
}

TEST_CASE("forward_triple with identical inputs gives identical features") {
  const ModelConfig cfg = tiny_config();
  const VitModel m = VitModel::initialize(cfg, 5);
  Rng rng(6);
  const ImageSample x = noise_image(rng, cfg.image_side);
  const auto out = forward_triple(m, x, x);
  for (std::size_t d = 0; d < out.features.source.size(); ++d) {
    CHECK(std::abs(out.features.source[d] - out.features.target[d]) < 1e-9);
    CHECK(std::abs(out.features.source[d] - out.features.cross[d]) < 1e-9);
  }
}

TEST_CASE("single layer single head forward matches the block oracle") {
  ModelConfig cfg = tiny_config();
  cfg.layers = 1;
  cfg.heads = 1;
  VitModel m = VitModel::initialize(cfg, 7);
  Rng rng(8);
  randomize(m.params, rng);
  const ImageSample xs = noise_image(rng, cfg.image_side), xt = noise_image(rng, cfg.image_side);
  const auto out = forward_triple(m, xs, xt);
  const Mat zs = to_mat(patchify(xs, m).tokens), zt = to_mat(patchify(xt, m).tokens);
  const Mat s = oracle_block(cfg, m.params.layers[0], zs, nullptr);
  const Mat t = oracle_block(cfg, m.params.layers[0], zt, nullptr);
  const Mat c = oracle_block(cfg, m.params.layers[0], zt, &zs);
  for (std::size_t d = 0; d < 4; ++d) {
    CHECK(std::abs(out.features.source[d] - s[0][d]) < 1e-12);
    CHECK(std::abs(out.features.target[d] - t[0][d]) < 1e-12);
    CHECK(std::abs(out.features.cross[d] - c[0][d]) < 1e-12);
  }
}

TEST_CASE("multi-head multi-layer forward matches per-head oracle composition") {
  // heads are independent column groups; check a 2-layer, 1-head stack layer by layer
  ModelConfig cfg = tiny_config();
  cfg.heads = 1;
  VitModel m = VitModel::initialize(cfg, 9);
  Rng rng(10);
  randomize(m.params, rng);
  const ImageSample xs = noise_image(rng, cfg.image_side), xt = noise_image(rng, cfg.image_side);
  const TripleTrace tr = trace_triple(m, xs, xt);
  Mat s = to_mat(patchify(xs, m).tokens), t = to_mat(patchify(xt, m).tokens), c = t;
  for (int l = 0; l < cfg.layers; ++l) {
    const LayerParams& p = m.params.layers[static_cast<std::size_t>(l)];
    const Mat cn = oracle_block(cfg, p, c, &s, &t);
    s = oracle_block(cfg, p, s, nullptr);
    t = oracle_block(cfg, p, t, nullptr);
    c = cn;
    for (std::size_t i = 0; i < s.size(); ++i)
      for (std::size_t d = 0; d < s[i].size(); ++d) {
        CHECK(std::abs(tr.source.state(l + 1)(i, d) - s[i][d]) < 1e-10);
        CHECK(std::abs(tr.target.state(l + 1)(i, d) - t[i][d]) < 1e-10);
        CHECK(std::abs(tr.cross.state(l + 1)(i, d) - c[i][d]) < 1e-10);
      }
  }
}

TEST_CASE("recorded attention rows are distributions") {
  ModelConfig cfg = tiny_config();
  cfg.heads = 2;
  cfg.layers = 3;
  const VitModel m = VitModel::initialize(cfg, 11);
  Rng rng(12);
  for (int t = 0; t < 10; ++t) {
    const auto out = forward_triple(m, noise_image(rng, cfg.image_side), noise_image(rng, cfg.image_side));
    REQUIRE(out.attention.layers() == cfg.layers);
    for (const auto* branch : {&out.attention.source_self, &out.attention.target_self, &out.attention.cross})
      for (const auto& layer : *branch) {
        REQUIRE(layer.size() == 2u);
        for (const auto& w : layer)
          for (std::size_t r = 0; r < w.rows(); ++r) {
            double s = 0.0;
            for (double v : w.row(r)) {
              CHECK(v >= 0.0);
              s += v;
            }
            CHECK(std::abs(s - 1.0) < 1e-9);
          }
      }
  }
}

TEST_CASE("classify examples") {
  ModelConfig cfg = tiny_config();
  cfg.classes = cfg.embed_dim;
  VitModel m = VitModel::initialize(cfg, 13);
  const std::vector<double> f{0.5, -1.0, 2.0, 0.25};
  m.params.head_w.fill(0.0);
  for (double v : classify(m, f)) CHECK(v == 0.0);
  m.params.head_w = Matrix::identity(4);
  CHECK(classify(m, f) == f);

  Rng rng(14);
  randomize(m.params, rng);
  const auto logits = classify(m, f);
  const Matrix oracle = matmul(Matrix::row_vector(f), m.params.head_w) + m.params.head_b;
  for (std::size_t k = 0; k < logits.size(); ++k) CHECK(std::abs(logits[k] - oracle(0, k)) < 1e-12);
}

TEST_CASE("branches share one parameter set") {
  const ModelConfig cfg = tiny_config();
  VitModel m = VitModel::initialize(cfg, 15);
  Rng rng(16);
  const ImageSample xs = noise_image(rng, cfg.image_side), xt = noise_image(rng, cfg.image_side);
  const auto before = forward_triple(m, xs, xt).features;
  const std::size_t count = m.params.parameter_count();
  m.params.layers[1].wv(0, 0) += 0.5;
  CHECK(m.params.parameter_count() == count);
  const auto after = forward_triple(m, xs, xt).features;
  CHECK(before.source != after.source);
  CHECK(before.target != after.target);
  CHECK(before.cross != after.cross);
}

TEST_CASE("forward is deterministic") {
  const ModelConfig cfg = tiny_config();
  Rng rng(17);
  const ImageSample xs = noise_image(rng, cfg.image_side), xt = noise_image(rng, cfg.image_side);
  const auto a = forward_triple(VitModel::initialize(cfg, 18), xs, xt).features;
  const auto b = forward_triple(VitModel::initialize(cfg, 18), xs, xt).features;
  CHECK(a.source == b.source);
  CHECK(a.target == b.target);
  CHECK(a.cross == b.cross);
}

TEST_CASE("cross feature depends on both images") {
  const ModelConfig cfg = tiny_config();
  Rng rng(23);
  VitModel m = VitModel::initialize(cfg, 24);
  randomize(m.params, rng);
  const ImageSample xs = noise_image(rng, cfg.image_side), xt = noise_image(rng, cfg.image_side);
  const ImageSample xs2 = noise_image(rng, cfg.image_side), xt2 = noise_image(rng, cfg.image_side);
  const auto base = forward_triple(m, xs, xt).features.cross;
  CHECK(forward_triple(m, xs2, xt).features.cross != base);
  CHECK(forward_triple(m, xs, xt2).features.cross != base);
}

TEST_CASE("initialization follows the documented scheme") {
  const ModelConfig cfg;
  const VitModel m = VitModel::initialize(cfg, 19);
  const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.embed_dim));
  for (double v : m.params.layers[0].wq.values()) CHECK(std::abs(v) <= bound);
  for (double v : m.params.layers[0].bq.values()) CHECK(v == 0.0);
  for (double v : m.params.layers[0].ln1_gain.values()) CHECK(v == 1.0);
}

TEST_CASE("stream backward matches finite differences") {
  ModelConfig cfg = tiny_config();
  VitModel m = VitModel::initialize(cfg, 20);
  Rng rng(21);
  randomize(m.params, rng);
  const ImageSample xs = noise_image(rng, cfg.image_side), xt = noise_image(rng, cfg.image_side);
  const Matrix w_cls = random_matrix(rng, 1, 4), w_src = random_matrix(rng, cfg.token_count(), 4);

  // scalar probe: weighted cross [CLS] plus weighted final source tokens
  auto loss = [&](const VitModel& model) {
    const TripleTrace t = trace_triple(model, xs, xt);
    double s = 0.0;
    for (std::size_t d = 0; d < 4; ++d) s += w_cls(0, d) * t.cross.states.back()(0, d);
    const Matrix& zs = t.source.states.back();
    for (std::size_t i = 0; i < zs.size(); ++i) s += w_src.values()[i] * zs.values()[i];
    return s;
  };

  const TripleTrace t = trace_triple(m, xs, xt);
  ModelParams grads = m.params.zeros_like();
  std::vector<Matrix> d_cross(t.cross.states.size()), d_src(t.source.states.size()), d_tgt(t.target.states.size());
  d_cross.back() = Matrix(t.cross.states.back().rows(), 4);
  for (std::size_t d = 0; d < 4; ++d) d_cross.back()(0, d) = w_cls(0, d);
  d_src.back() = w_src;
  const Matrix d0c = backward_stream(m, t.cross, d_cross, grads, &t.source, &d_src, &t.target, &d_tgt);
  backward_embed(m, t.target_patches, d0c, grads);
  backward_embed(m, t.target_patches, backward_stream(m, t.target, d_tgt, grads), grads);
  backward_embed(m, t.source_patches, backward_stream(m, t.source, d_src, grads), grads);

  VitModel probe = m;
  std::vector<std::string> names;
  std::vector<Matrix*> analytic;
  grads.for_each([&](const std::string& n, Matrix& g) {
    names.push_back(n);
    analytic.push_back(&g);
  });
  std::size_t idx = 0;
  probe.params.for_each([&](const std::string& name, Matrix& p) {
    if (name.rfind("head", 0) == 0) {
      ++idx;
      return;
    }
    const Matrix saved = p;
    const Matrix fd = finite_diff_grad(
        [&](const Matrix& x) {
          p = x;
          return loss(probe);
        },
        saved, 1e-6);
    p = saved;
    INFO(name);
    // key biases shift every score of a row equally, so their gradient is exactly zero
    if (name.find(".bk") != std::string::npos) CHECK(frobenius_norm(*analytic[idx]) < 1e-12);
    CHECK(frobenius_norm(fd - *analytic[idx]) <= 1e-6 * std::max(1.0, frobenius_norm(fd)));
    ++idx;
  });
}

TEST_CASE("checkpoint round trip is bit exact") {
  const ModelConfig cfg = tiny_config();
  const VitModel m = VitModel::initialize(cfg, 22);
  const auto dir = std::filesystem::temp_directory_path() / "pcam_ckpt_test";
  std::filesystem::remove_all(dir);
  save_checkpoint(m, dir.string());
  const VitModel back = load_checkpoint(dir.string());
  CHECK(back.config.embed_dim == cfg.embed_dim);
  CHECK(back.config.image_side == cfg.image_side);
  bool same = true;
  ModelParams copy = back.params;
  std::vector<const Matrix*> orig;
  m.params.for_each([&](const std::string&, const Matrix& x) { orig.push_back(&x); });
  std::size_t i = 0;
  copy.for_each([&](const std::string&, Matrix& x) { same = same && x == *orig[i++]; });
  CHECK(same);

  std::ifstream manifest(dir / "manifest.txt");
  std::string name;
  std::size_t r = 0, c = 0;
  manifest >> name >> r >> c;
  CHECK(name == "patch_w");
  CHECK(r == static_cast<std::size_t>(cfg.patch_dim()));
  CHECK(c == static_cast<std::size_t>(cfg.embed_dim));
  std::filesystem::remove_all(dir);
}
