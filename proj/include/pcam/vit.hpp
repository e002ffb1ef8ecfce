#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pcam/numerics.hpp"
#include "pcam/synth_data.hpp"

namespace pcam {

struct ModelConfig {
  int image_side = 16;
  int channels = 1;
  int patch_side = 4;
  int embed_dim = 32;
  int heads = 2;
  int layers = 3;
  int classes = 4;
  /// MLP hidden width = mlp_ratio * embed_dim.
  int mlp_ratio = 2;
  double ln_eps = 1e-5;

  int grid_side() const { return image_side / patch_side; }
  int patch_count() const { return grid_side() * grid_side(); }
  int head_dim() const { return embed_dim / heads; }
  int patch_dim() const { return patch_side * patch_side * channels; }
  int token_count() const { return patch_count() + 1; }
  void validate() const;
};

struct LayerParams {
  Matrix ln1_gain, ln1_bias;
  Matrix wq, bq, wk, bk, wv, bv, wo, bo;
  Matrix ln2_gain, ln2_bias;
  Matrix w1, b1, w2, b2;
};

/// One parameter set shared by the source, target and cross branches.
struct ModelParams {
  Matrix patch_w, patch_b, cls_token, pos_embed;
  std::vector<LayerParams> layers;
  Matrix head_w, head_b;

  template <class F>
  void for_each(F&& f) {
    visit(*this, f);
  }
  template <class F>
  void for_each(F&& f) const {
    visit(*this, f);
  }

  /// Same shapes, all zeros.
  ModelParams zeros_like() const;
  std::size_t parameter_count() const;
  std::size_t tensor_count() const;
  bool all_finite() const;

 private:
  template <class Self, class F>
  static void visit(Self& self, F& f) {
    f("patch_w", self.patch_w);
    f("patch_b", self.patch_b);
    f("cls_token", self.cls_token);
    f("pos_embed", self.pos_embed);
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      auto& L = self.layers[l];
      const std::string p = "layer" + std::to_string(l) + ".";
      f(p + "ln1_gain", L.ln1_gain);
      f(p + "ln1_bias", L.ln1_bias);
      f(p + "wq", L.wq);
      f(p + "bq", L.bq);
      f(p + "wk", L.wk);
      f(p + "bk", L.bk);
      f(p + "wv", L.wv);
      f(p + "bv", L.bv);
      f(p + "wo", L.wo);
      f(p + "bo", L.bo);
      f(p + "ln2_gain", L.ln2_gain);
      f(p + "ln2_bias", L.ln2_bias);
      f(p + "w1", L.w1);
      f(p + "b1", L.b1);
      f(p + "w2", L.w2);
      f(p + "b2", L.b2);
    }
    f("head_w", self.head_w);
    f("head_b", self.head_b);
  }
};

struct VitModel {
  ModelConfig config;
  ModelParams params;

  /// Weights uniform in +-1/sqrt(fan_in), biases zero, layer-norm gains one.
  static VitModel initialize(const ModelConfig& cfg, std::uint64_t seed);
};

/// (N+1) x D; row 0 is the [CLS] token, rows 1..N the patch embeddings.
struct TokenSequence {
  Matrix tokens;
};

/// N x (P*P*C); patch j in row-major grid order, flattened channel, row, column.
Matrix patch_matrix(const ImageSample& image, const ModelConfig& cfg);
TokenSequence patchify(const ImageSample& image, const VitModel& model);
TokenSequence embed_patches(const Matrix& patches, const VitModel& model);

struct AttentionResult {
  Matrix output;
  Matrix weights;
};

/// softmax(Q K^T / sqrt(d)) V with d = Q.cols().
AttentionResult attention(const Matrix& q, const Matrix& k, const Matrix& v);

struct LayerNormCache {
  Matrix normalized;
  std::vector<double> rstd;
};

struct BlockCache {
  bool cross = false;
  bool external_query = false;
  LayerNormCache ln1_x, ln1_y, ln1_q;
  Matrix xn, yn, qn;
  Matrix q, k, v;
  std::vector<Matrix> probs;  // per head, rows = query tokens
  Matrix concat;
  LayerNormCache ln2;
  Matrix hn, u, gel;
};

/// Activations of one branch. states[k] is the embedding z^(first_layer + k);
/// states.front() feeds block first_layer and states.back() is z^(L).
struct StreamTrace {
  int first_layer = 0;
  std::vector<Matrix> states;
  std::vector<BlockCache> blocks;

  const Matrix& state(int layer) const { return states.at(static_cast<std::size_t>(layer - first_layer)); }
  int last_layer() const { return first_layer + static_cast<int>(blocks.size()); }
  std::vector<double> cls_feature() const;
};

/// Runs blocks first_layer .. L-1 on `input`. With kv_stream set, every block
/// takes keys/values from kv_stream's state at the same depth; with q_stream
/// set, queries come from q_stream's state instead of this stream. The
/// residual path and MLP always act on this stream.
StreamTrace run_stream(const VitModel& model, Matrix input, int first_layer = 0,
                       const StreamTrace* kv_stream = nullptr, const StreamTrace* q_stream = nullptr);

/// Backpropagates through the blocks of `trace`. d_states mirrors
/// trace.states (empty matrices mean zero). Key/value gradients are added to
/// (*d_kv_states)[layer - kv_stream.first_layer], query gradients likewise to
/// d_q_states. Returns the gradient with respect to trace.states.front().
Matrix backward_stream(const VitModel& model, const StreamTrace& trace, std::vector<Matrix> d_states,
                       ModelParams& grads, const StreamTrace* kv_stream = nullptr,
                       std::vector<Matrix>* d_kv_states = nullptr, const StreamTrace* q_stream = nullptr,
                       std::vector<Matrix>* d_q_states = nullptr);

/// Accumulates patch projection, [CLS] and position-embedding gradients.
void backward_embed(const VitModel& model, const Matrix& patches, const Matrix& d_tokens, ModelParams& grads);

struct Features {
  std::vector<double> source;
  std::vector<double> target;
  std::vector<double> cross;  // target queries attending to source keys/values
};

/// Per-layer attention weights (one matrix per head) and post-block embeddings.
struct AttentionStack {
  std::vector<std::vector<Matrix>> source_self, target_self, cross;
  std::vector<Matrix> source_states, target_states, cross_states;  // z^(1..L)
  int layers() const { return static_cast<int>(source_self.size()); }
};

struct TripleTrace {
  Matrix source_patches, target_patches;
  StreamTrace source, target, cross;
};

TripleTrace trace_triple(const VitModel& model, const ImageSample& source, const ImageSample& target);
AttentionStack attention_stack(const TripleTrace& trace);
Features features_of(const TripleTrace& trace);

struct TripleOutput {
  Features features;
  AttentionStack attention;
};

TripleOutput forward_triple(const VitModel& model, const ImageSample& source, const ImageSample& target);

/// Layer-L [CLS] embedding of a single plain forward pass.
std::vector<double> encode(const VitModel& model, const ImageSample& image);

/// g(f) = f W + b.
std::vector<double> classify(const VitModel& model, std::span<const double> feature);

void save_checkpoint(const VitModel& model, const std::string& dir);
VitModel load_checkpoint(const std::string& dir);

}  // namespace pcam
