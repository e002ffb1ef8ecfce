#include "pcam/vit.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

namespace pcam {

void ModelConfig::validate() const {
  require(image_side >= 1 && channels >= 1 && patch_side >= 1, "ModelConfig: sizes must be >= 1");
  require(image_side % patch_side == 0, "ModelConfig: patch side must divide image side");
  require(embed_dim >= 1 && heads >= 1 && layers >= 1 && classes >= 1 && mlp_ratio >= 1,
          "ModelConfig: counts must be >= 1");
  require(embed_dim % heads == 0, "ModelConfig: embed_dim must equal heads * head_dim");
  require(ln_eps > 0.0, "ModelConfig: ln_eps must be positive");
}

ModelParams ModelParams::zeros_like() const {
  ModelParams z = *this;
  z.for_each([](const std::string&, Matrix& m) { m.fill(0.0); });
  return z;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Matrix& m) { n += m.size(); });
  return n;
}

std::size_t ModelParams::tensor_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Matrix&) { ++n; });
  return n;
}

bool ModelParams::all_finite() const {
  bool ok = true;
  for_each([&](const std::string&, const Matrix& m) { ok = ok && m.all_finite(); });
  return ok;
}

namespace {

Matrix uniform_matrix(std::size_t r, std::size_t c, double bound, Rng& rng) {
  Matrix m(r, c);
  for (double& v : m.values()) v = rng.uniform(-bound, bound);
  return m;
}

Matrix ones_row(std::size_t n) { return Matrix(1, n, 1.0); }

void add_row_bias(Matrix& m, const Matrix& bias) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    for (std::size_t c = 0; c < m.cols(); ++c) row[c] += bias(0, c);
  }
}

void accumulate_colsum(const Matrix& m, Matrix& bias_grad) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    for (std::size_t c = 0; c < m.cols(); ++c) bias_grad(0, c) += row[c];
  }
}

Matrix linear(const Matrix& x, const Matrix& w, const Matrix& b) {
  Matrix y = matmul(x, w);
  add_row_bias(y, b);
  return y;
}

Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, double eps, LayerNormCache& cache) {
  const std::size_t n = x.cols();
  cache.normalized = Matrix(x.rows(), n);
  cache.rstd.assign(x.rows(), 0.0);
  Matrix y(x.rows(), n);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto xr = x.row(r);
    double mean = 0.0;
    for (double v : xr) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : xr) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double rstd = 1.0 / std::sqrt(var + eps);
    cache.rstd[r] = rstd;
    for (std::size_t c = 0; c < n; ++c) {
      const double xh = (xr[c] - mean) * rstd;
      cache.normalized(r, c) = xh;
      y(r, c) = xh * gain(0, c) + bias(0, c);
    }
  }
  return y;
}

Matrix layer_norm_backward(const LayerNormCache& cache, const Matrix& gain, const Matrix& dy, Matrix& d_gain,
                           Matrix& d_bias) {
  const std::size_t n = dy.cols();
  Matrix dx(dy.rows(), n);
  std::vector<double> dxh(n);
  for (std::size_t r = 0; r < dy.rows(); ++r) {
    double mean_dxh = 0.0, mean_dxh_xh = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      const double xh = cache.normalized(r, c);
      d_gain(0, c) += dy(r, c) * xh;
      d_bias(0, c) += dy(r, c);
      dxh[c] = dy(r, c) * gain(0, c);
      mean_dxh += dxh[c];
      mean_dxh_xh += dxh[c] * xh;
    }
    mean_dxh /= static_cast<double>(n);
    mean_dxh_xh /= static_cast<double>(n);
    for (std::size_t c = 0; c < n; ++c)
      dx(r, c) = cache.rstd[r] * (dxh[c] - mean_dxh - cache.normalized(r, c) * mean_dxh_xh);
  }
  return dx;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

Matrix columns(const Matrix& m, std::size_t begin, std::size_t count) {
  Matrix out(m.rows(), count);
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = m(r, begin + c);
  return out;
}

void set_columns(Matrix& m, std::size_t begin, const Matrix& part) {
  for (std::size_t r = 0; r < part.rows(); ++r)
    for (std::size_t c = 0; c < part.cols(); ++c) m(r, begin + c) = part(r, c);
}

Matrix block_forward(const ModelConfig& cfg, const LayerParams& p, const Matrix& x, const Matrix* y, const Matrix* qx,
                     BlockCache& cache) {
  cache.cross = y != nullptr;
  cache.external_query = qx != nullptr;
  if (!cache.cross || !cache.external_query) cache.xn = layer_norm(x, p.ln1_gain, p.ln1_bias, cfg.ln_eps, cache.ln1_x);
  if (cache.cross) cache.yn = layer_norm(*y, p.ln1_gain, p.ln1_bias, cfg.ln_eps, cache.ln1_y);
  if (cache.external_query) cache.qn = layer_norm(*qx, p.ln1_gain, p.ln1_bias, cfg.ln_eps, cache.ln1_q);
  const Matrix& q_in = cache.external_query ? cache.qn : cache.xn;
  const Matrix& kv_in = cache.cross ? cache.yn : cache.xn;
  cache.q = linear(q_in, p.wq, p.bq);
  cache.k = linear(kv_in, p.wk, p.bk);
  cache.v = linear(kv_in, p.wv, p.bv);

  const std::size_t dh = static_cast<std::size_t>(cfg.head_dim());
  cache.concat = Matrix(q_in.rows(), static_cast<std::size_t>(cfg.embed_dim));
  cache.probs.clear();
  for (int h = 0; h < cfg.heads; ++h) {
    const std::size_t off = static_cast<std::size_t>(h) * dh;
    auto res = attention(columns(cache.q, off, dh), columns(cache.k, off, dh), columns(cache.v, off, dh));
    set_columns(cache.concat, off, res.output);
    cache.probs.push_back(std::move(res.weights));
  }
  Matrix xa = x + linear(cache.concat, p.wo, p.bo);

  cache.hn = layer_norm(xa, p.ln2_gain, p.ln2_bias, cfg.ln_eps, cache.ln2);
  cache.u = linear(cache.hn, p.w1, p.b1);
  cache.gel = cache.u;
  for (double& v : cache.gel.values()) v = gelu(v);
  return xa + linear(cache.gel, p.w2, p.b2);
}

// Returns d(residual input). Key/value and external query gradients go to dy and dqx.
Matrix block_backward(const ModelConfig& cfg, const LayerParams& p, const BlockCache& cache, const Matrix& dout,
                      LayerParams& g, Matrix* dy, Matrix* dqx) {
  // MLP branch
  g.w2 += matmul_tn(cache.gel, dout);
  accumulate_colsum(dout, g.b2);
  Matrix du = matmul_nt(dout, p.w2);
  for (std::size_t i = 0; i < du.size(); ++i) du.values()[i] *= gelu_grad(cache.u.values()[i]);
  g.w1 += matmul_tn(cache.hn, du);
  accumulate_colsum(du, g.b1);
  const Matrix dhn = matmul_nt(du, p.w1);
  Matrix dxa = dout + layer_norm_backward(cache.ln2, p.ln2_gain, dhn, g.ln2_gain, g.ln2_bias);

  // attention branch
  g.wo += matmul_tn(cache.concat, dxa);
  accumulate_colsum(dxa, g.bo);
  const Matrix dconcat = matmul_nt(dxa, p.wo);

  const std::size_t dh = static_cast<std::size_t>(cfg.head_dim());
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix dq(cache.q.rows(), cache.q.cols()), dk(cache.k.rows(), cache.k.cols()), dv(cache.v.rows(), cache.v.cols());
  for (int h = 0; h < cfg.heads; ++h) {
    const std::size_t off = static_cast<std::size_t>(h) * dh;
    const Matrix& P = cache.probs[static_cast<std::size_t>(h)];
    const Matrix dO = columns(dconcat, off, dh);
    const Matrix qh = columns(cache.q, off, dh), kh = columns(cache.k, off, dh), vh = columns(cache.v, off, dh);
    Matrix dP = matmul_nt(dO, vh);
    set_columns(dv, off, matmul_tn(P, dO));
    for (std::size_t r = 0; r < dP.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < dP.cols(); ++c) dot += dP(r, c) * P(r, c);
      for (std::size_t c = 0; c < dP.cols(); ++c) dP(r, c) = P(r, c) * (dP(r, c) - dot) * scale;
    }
    set_columns(dq, off, matmul(dP, kh));
    set_columns(dk, off, matmul_tn(dP, qh));
  }
  const Matrix& q_in = cache.external_query ? cache.qn : cache.xn;
  const Matrix& kv_in = cache.cross ? cache.yn : cache.xn;
  g.wq += matmul_tn(q_in, dq);
  accumulate_colsum(dq, g.bq);
  g.wk += matmul_tn(kv_in, dk);
  accumulate_colsum(dk, g.bk);
  g.wv += matmul_tn(kv_in, dv);
  accumulate_colsum(dv, g.bv);
  const Matrix dqn = matmul_nt(dq, p.wq);
  const Matrix dyn = matmul_nt(dk, p.wk) + matmul_nt(dv, p.wv);

  Matrix dx = dxa;
  Matrix dxn(dxa.rows(), dxa.cols());
  if (cache.external_query) {
    Matrix dqin = layer_norm_backward(cache.ln1_q, p.ln1_gain, dqn, g.ln1_gain, g.ln1_bias);
    if (dqx) *dqx = std::move(dqin);
  } else {
    dxn += dqn;
  }
  if (cache.cross) {
    Matrix dyin = layer_norm_backward(cache.ln1_y, p.ln1_gain, dyn, g.ln1_gain, g.ln1_bias);
    if (dy) *dy = std::move(dyin);
  } else {
    dxn += dyn;
  }
  if (!cache.cross || !cache.external_query) dx += layer_norm_backward(cache.ln1_x, p.ln1_gain, dxn, g.ln1_gain, g.ln1_bias);
  return dx;
}

}  // namespace

VitModel VitModel::initialize(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed, 0x76697400);
  const auto D = static_cast<std::size_t>(cfg.embed_dim);
  const auto H = D * static_cast<std::size_t>(cfg.mlp_ratio);
  const auto pd = static_cast<std::size_t>(cfg.patch_dim());
  const double bd = 1.0 / std::sqrt(static_cast<double>(D));
  VitModel m;
  m.config = cfg;
  auto& P = m.params;
  P.patch_w = uniform_matrix(pd, D, 1.0 / std::sqrt(static_cast<double>(pd)), rng);
  P.patch_b = Matrix(1, D);
  P.cls_token = uniform_matrix(1, D, bd, rng);
  P.pos_embed = uniform_matrix(static_cast<std::size_t>(cfg.token_count()), D, bd, rng);
  for (int l = 0; l < cfg.layers; ++l) {
    LayerParams L;
    L.ln1_gain = ones_row(D);
    L.ln1_bias = Matrix(1, D);
    L.wq = uniform_matrix(D, D, bd, rng);
    L.bq = Matrix(1, D);
    L.wk = uniform_matrix(D, D, bd, rng);
    L.bk = Matrix(1, D);
    L.wv = uniform_matrix(D, D, bd, rng);
    L.bv = Matrix(1, D);
    L.wo = uniform_matrix(D, D, bd, rng);
    L.bo = Matrix(1, D);
    L.ln2_gain = ones_row(D);
    L.ln2_bias = Matrix(1, D);
    L.w1 = uniform_matrix(D, H, bd, rng);
    L.b1 = Matrix(1, H);
    L.w2 = uniform_matrix(H, D, 1.0 / std::sqrt(static_cast<double>(H)), rng);
    L.b2 = Matrix(1, D);
    P.layers.push_back(std::move(L));
  }
  P.head_w = uniform_matrix(D, static_cast<std::size_t>(cfg.classes), bd, rng);
  P.head_b = Matrix(1, static_cast<std::size_t>(cfg.classes));
  return m;
}

Matrix patch_matrix(const ImageSample& image, const ModelConfig& cfg) {
  require(image.side == cfg.image_side && image.channels == cfg.channels,
          "patchify: image dimensions do not match the model config");
  require(image.pixels.size() == static_cast<std::size_t>(image.channels) * image.side * image.side,
          "patchify: pixel buffer size mismatch");
  const int G = cfg.grid_side(), P = cfg.patch_side;
  Matrix patches(static_cast<std::size_t>(cfg.patch_count()), static_cast<std::size_t>(cfg.patch_dim()));
  for (int gr = 0; gr < G; ++gr) {
    for (int gc = 0; gc < G; ++gc) {
      auto row = patches.row(static_cast<std::size_t>(gr * G + gc));
      std::size_t k = 0;
      for (int c = 0; c < cfg.channels; ++c)
        for (int y = 0; y < P; ++y)
          for (int x = 0; x < P; ++x) row[k++] = image.pixel(c, gr * P + y, gc * P + x);
    }
  }
  return patches;
}

TokenSequence embed_patches(const Matrix& patches, const VitModel& model) {
  const auto& cfg = model.config;
  const auto& P = model.params;
  require(patches.rows() == static_cast<std::size_t>(cfg.patch_count()) &&
              patches.cols() == static_cast<std::size_t>(cfg.patch_dim()),
          "embed_patches: patch matrix shape mismatch");
  const Matrix proj = linear(patches, P.patch_w, P.patch_b);
  Matrix tokens(static_cast<std::size_t>(cfg.token_count()), static_cast<std::size_t>(cfg.embed_dim));
  for (std::size_t c = 0; c < tokens.cols(); ++c) tokens(0, c) = P.cls_token(0, c) + P.pos_embed(0, c);
  for (std::size_t r = 0; r < proj.rows(); ++r)
    for (std::size_t c = 0; c < tokens.cols(); ++c) tokens(r + 1, c) = proj(r, c) + P.pos_embed(r + 1, c);
  return {std::move(tokens)};
}

TokenSequence patchify(const ImageSample& image, const VitModel& model) {
  return embed_patches(patch_matrix(image, model.config), model);
}

AttentionResult attention(const Matrix& q, const Matrix& k, const Matrix& v) {
  require(q.cols() == k.cols(), "attention: query/key widths differ");
  require(k.rows() == v.rows(), "attention: key/value lengths differ");
  require(q.rows() >= 1 && k.rows() >= 1 && q.cols() >= 1, "attention: empty input");
  Matrix s = matmul_nt(q, k);
  s *= 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Matrix w = softmax_rows(s);
  Matrix out = matmul(w, v);
  return {std::move(out), std::move(w)};
}

std::vector<double> StreamTrace::cls_feature() const {
  auto r = states.back().row(0);
  return {r.begin(), r.end()};
}

StreamTrace run_stream(const VitModel& model, Matrix input, int first_layer, const StreamTrace* kv_stream,
                       const StreamTrace* q_stream) {
  const auto& cfg = model.config;
  require(first_layer >= 0 && first_layer <= cfg.layers, "run_stream: first layer out of range");
  require(input.cols() == static_cast<std::size_t>(cfg.embed_dim), "run_stream: token width mismatch");
  if (kv_stream) require(kv_stream->first_layer <= first_layer, "run_stream: key/value stream starts too late");
  if (q_stream) {
    require(q_stream->first_layer <= first_layer, "run_stream: query stream starts too late");
    require(q_stream->states.front().rows() == input.rows(), "run_stream: query stream length mismatch");
  }
  StreamTrace t;
  t.first_layer = first_layer;
  t.states.push_back(std::move(input));
  for (int l = first_layer; l < cfg.layers; ++l) {
    BlockCache cache;
    const Matrix* y = kv_stream ? &kv_stream->state(l) : nullptr;
    const Matrix* qx = q_stream ? &q_stream->state(l) : nullptr;
    Matrix out = block_forward(cfg, model.params.layers[static_cast<std::size_t>(l)], t.states.back(), y, qx, cache);
    t.blocks.push_back(std::move(cache));
    t.states.push_back(std::move(out));
  }
  return t;
}

namespace {

void add_into(std::vector<Matrix>* d_states, const StreamTrace* stream, int layer, Matrix&& g, const char* what) {
  require(stream && d_states, what);
  Matrix& slot = d_states->at(static_cast<std::size_t>(layer - stream->first_layer));
  if (slot.empty()) slot = std::move(g);
  else slot += g;
}

}  // namespace

Matrix backward_stream(const VitModel& model, const StreamTrace& trace, std::vector<Matrix> d_states,
                       ModelParams& grads, const StreamTrace* kv_stream, std::vector<Matrix>* d_kv_states,
                       const StreamTrace* q_stream, std::vector<Matrix>* d_q_states) {
  const auto& cfg = model.config;
  require(d_states.size() == trace.states.size(), "backward_stream: gradient list length mismatch");
  Matrix d(trace.states.back().rows(), trace.states.back().cols());
  if (!d_states.back().empty()) d += d_states.back();
  for (int l = trace.last_layer() - 1; l >= trace.first_layer; --l) {
    const std::size_t k = static_cast<std::size_t>(l - trace.first_layer);
    const auto& cache = trace.blocks[k];
    Matrix dy, dq;
    d = block_backward(cfg, model.params.layers[static_cast<std::size_t>(l)], cache, d,
                       grads.layers[static_cast<std::size_t>(l)], &dy, &dq);
    if (cache.cross) add_into(d_kv_states, kv_stream, l, std::move(dy), "backward_stream: cross trace needs its key/value stream");
    if (cache.external_query) add_into(d_q_states, q_stream, l, std::move(dq), "backward_stream: cross trace needs its query stream");
    if (!d_states[k].empty()) d += d_states[k];
  }
  return d;
}

void backward_embed(const VitModel& model, const Matrix& patches, const Matrix& d_tokens, ModelParams& grads) {
  grads.pos_embed += d_tokens;
  for (std::size_t c = 0; c < d_tokens.cols(); ++c) grads.cls_token(0, c) += d_tokens(0, c);
  Matrix d_proj(patches.rows(), d_tokens.cols());
  for (std::size_t r = 0; r < patches.rows(); ++r)
    for (std::size_t c = 0; c < d_tokens.cols(); ++c) d_proj(r, c) = d_tokens(r + 1, c);
  grads.patch_w += matmul_tn(patches, d_proj);
  accumulate_colsum(d_proj, grads.patch_b);
  (void)model;
}

TripleTrace trace_triple(const VitModel& model, const ImageSample& source, const ImageSample& target) {
  TripleTrace t;
  t.source_patches = patch_matrix(source, model.config);
  t.target_patches = patch_matrix(target, model.config);
  t.source = run_stream(model, embed_patches(t.source_patches, model).tokens);
  Matrix target_tokens = embed_patches(t.target_patches, model).tokens;
  t.target = run_stream(model, target_tokens);
  t.cross = run_stream(model, std::move(target_tokens), 0, &t.source, &t.target);
  return t;
}

AttentionStack attention_stack(const TripleTrace& trace) {
  AttentionStack a;
  for (std::size_t l = 0; l < trace.source.blocks.size(); ++l) {
    a.source_self.push_back(trace.source.blocks[l].probs);
    a.target_self.push_back(trace.target.blocks[l].probs);
    a.cross.push_back(trace.cross.blocks[l].probs);
    a.source_states.push_back(trace.source.states[l + 1]);
    a.target_states.push_back(trace.target.states[l + 1]);
    a.cross_states.push_back(trace.cross.states[l + 1]);
  }
  return a;
}

Features features_of(const TripleTrace& trace) {
  return {trace.source.cls_feature(), trace.target.cls_feature(), trace.cross.cls_feature()};
}

TripleOutput forward_triple(const VitModel& model, const ImageSample& source, const ImageSample& target) {
  const TripleTrace t = trace_triple(model, source, target);
  return {features_of(t), attention_stack(t)};
}

std::vector<double> encode(const VitModel& model, const ImageSample& image) {
  return run_stream(model, patchify(image, model).tokens).cls_feature();
}

std::vector<double> classify(const VitModel& model, std::span<const double> feature) {
  const auto& P = model.params;
  require(feature.size() == P.head_w.rows(), "classify: feature width mismatch");
  std::vector<double> logits(P.head_w.cols());
  for (std::size_t k = 0; k < logits.size(); ++k) {
    double s = P.head_b(0, k);
    for (std::size_t d = 0; d < feature.size(); ++d) s += feature[d] * P.head_w(d, k);
    logits[k] = s;
  }
  return logits;
}

void save_checkpoint(const VitModel& model, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream manifest(fs::path(dir) / "manifest.txt");
  const auto& c = model.config;
  std::ofstream cfg(fs::path(dir) / "model.txt");
  cfg << "image_side=" << c.image_side << "\nchannels=" << c.channels << "\npatch_side=" << c.patch_side
      << "\nembed_dim=" << c.embed_dim << "\nheads=" << c.heads << "\nlayers=" << c.layers
      << "\nclasses=" << c.classes << "\nmlp_ratio=" << c.mlp_ratio << "\nln_eps=" << format_double(c.ln_eps) << '\n';
  model.params.for_each([&](const std::string& name, const Matrix& m) {
    manifest << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
    save_matrix((fs::path(dir) / (name + ".txt")).string(), m);
  });
}

VitModel load_checkpoint(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream cfg_in(fs::path(dir) / "model.txt");
  if (!cfg_in) throw std::runtime_error("load_checkpoint: missing model.txt in " + dir);
  ModelConfig c;
  std::string line;
  while (std::getline(cfg_in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    if (key == "image_side") c.image_side = std::stoi(val);
    else if (key == "channels") c.channels = std::stoi(val);
    else if (key == "patch_side") c.patch_side = std::stoi(val);
    else if (key == "embed_dim") c.embed_dim = std::stoi(val);
    else if (key == "heads") c.heads = std::stoi(val);
    else if (key == "layers") c.layers = std::stoi(val);
    else if (key == "classes") c.classes = std::stoi(val);
    else if (key == "mlp_ratio") c.mlp_ratio = std::stoi(val);
    else if (key == "ln_eps") c.ln_eps = std::stod(val);
  }
  VitModel m = VitModel::initialize(c, 0);
  std::ifstream manifest(fs::path(dir) / "manifest.txt");
  if (!manifest) throw std::runtime_error("load_checkpoint: missing manifest.txt in " + dir);
  m.params.for_each([&](const std::string& name, Matrix& t) {
    std::string got;
    std::size_t rows = 0, cols = 0;
    if (!(manifest >> got >> rows >> cols) || got != name || rows != t.rows() || cols != t.cols())
      throw std::runtime_error("load_checkpoint: manifest does not match tensor " + name);
    t = load_matrix((fs::path(dir) / (name + ".txt")).string());
  });
  return m;
}

}  // namespace pcam
