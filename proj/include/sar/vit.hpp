#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sar/grid.hpp"

namespace sar {

/// Structure of the final transformer block.
enum class BlockVariant {
  Standard,       // A: z' = MSA(LN(z)) + z,  out = MLP(LN(z')) + z'
  NoMsaSkip,      // B: z' = MSA(LN(z)),      out = MLP(LN(z')) + z'
  NoMsaSkipNoLn,  // C: z' = MSA(LN(z)),      out = MLP(z') + z'
  NoAllSkips,     // D: z' = MSA(LN(z)),      out = MLP(z')
};

std::string_view to_string(BlockVariant v);
BlockVariant parse_block_variant(std::string_view name);

struct ViTConfig {
  int image_size = 56;
  int patch_size = 4;
  int channels = 1;
  int embed_dim = 64;
  int heads = 4;
  int blocks = 4;
  double mlp_ratio = 4.0;
  int num_classes = 3;
  BlockVariant last_block = BlockVariant::Standard;

  int grid_side() const { return image_size / patch_size; }
  int patches() const { return grid_side() * grid_side(); }
  int tokens() const { return patches() + 1; }
  int head_dim() const { return embed_dim / heads; }
  int hidden_dim() const { return static_cast<int>(embed_dim * mlp_ratio); }
  int patch_dim() const { return patch_size * patch_size * channels; }

  /// Throws on an inconsistent configuration.
  void validate() const;
  bool operator==(const ViTConfig&) const = default;
};

/// One named parameter tensor inside the flat parameter vector.
struct ParamInfo {
  std::string name;
  std::size_t offset = 0;
  int rows = 1;
  int cols = 1;
  bool decay = false;  // receives weight decay

  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

class ParameterLayout {
 public:
  explicit ParameterLayout(const ViTConfig& cfg);

  const std::vector<ParamInfo>& entries() const { return entries_; }
  const ParamInfo& find(std::string_view name) const;
  bool contains(std::string_view name) const;
  std::size_t total() const { return total_; }

 private:
  void add(std::string name, int rows, int cols, bool decay);

  std::vector<ParamInfo> entries_;
  std::size_t total_ = 0;
};

/// Activations of one block, kept for the backward pass.
template <class T>
struct BlockCache {
  std::vector<T> input;      // N x d
  std::vector<T> ln1_hat;    // normalised input, N x d
  std::vector<T> ln1_rstd;   // N
  std::vector<T> ln1_out;    // N x d
  std::vector<T> qkv;        // N x 3d
  std::vector<T> attn;       // heads x N x N, post-softmax
  std::vector<T> attn_out;   // N x d, concatenated heads
  std::vector<T> mid;        // z', N x d
  std::vector<T> ln2_hat;    // empty when the block has no second LN
  std::vector<T> ln2_rstd;
  std::vector<T> mlp_in;     // LN2(z') or z'
  std::vector<T> fc1_out;    // N x hidden, pre-GELU
  std::vector<T> gelu_out;   // N x hidden
  std::vector<T> output;     // N x d
};

template <class T>
class VisionTransformer;

/// Everything forward() computed for one image.
template <class T>
struct ForwardTrace {
  const void* owner = nullptr;
  ViTConfig config;
  std::vector<T> patches;  // n x patch_dim
  std::vector<BlockCache<T>> blocks;
  std::vector<T> cls_hat;  // final LN on the CLS token
  T cls_rstd = T(0);
  std::vector<T> cls_norm;
  std::vector<T> logits;
  /// Pre-softmax CLS-query / patch-key scores of the last block, one k x k map per head.
  std::vector<Grid2D> last_block_similarity;

  /// Token embeddings entering block l (l == blocks returns the final output).
  std::span<const T> tokens(int l) const;
  /// Post-softmax attention matrix (N x N) of head h in block l.
  std::span<const T> attention(int l, int h) const;
  /// CLS row of the last-block attention of head h restricted to patch tokens, as k x k.
  Grid2D cls_attention(int h) const;
  /// CLS query and patch keys of head h in block l.
  HeadProjection head_projection(int l, int h) const;
};

/// Softmax cross-entropy and its gradient with respect to the logits.
template <class T>
struct ClassificationLoss {
  double loss;
  std::vector<T> grad;
};

template <class T>
ClassificationLoss<T> classification_loss(std::span<const T> logits, int label);

/// Pre-norm ViT over grayscale (or C-channel) images with a learned CLS
/// token, learned positional embeddings, GELU MLPs and a configurable last
/// block. Parameters live in one flat vector described by layout().
template <class T>
class VisionTransformer {
 public:
  explicit VisionTransformer(ViTConfig cfg);

  /// Truncated normal (std 0.02) weights and embeddings, zero biases, unit LN scales.
  void init(std::mt19937_64& rng);

  const ViTConfig& config() const { return cfg_; }
  const ParameterLayout& layout() const { return layout_; }
  std::size_t parameter_count() const { return params_.size(); }

  std::span<T> parameters() { return params_; }
  std::span<const T> parameters() const { return params_; }
  std::span<T> parameter(std::string_view name);
  std::span<const T> parameter(std::string_view name) const;

  /// `image` is channels x image_size x image_size, row-major.
  ForwardTrace<T> forward(std::span<const T> image) const;

  /// Adds the parameter gradient of a loss into `grads` (parameter_count() long).
  /// `logit_grad` is dLoss/dlogits; `similarity_grads` is either empty or one
  /// k x k map per head holding dLoss/d(last-block similarity).
  void backward(const ForwardTrace<T>& trace, std::span<const T> logit_grad,
                std::span<const Grid2D> similarity_grads, std::span<T> grads) const;

  std::vector<T> backward(const ForwardTrace<T>& trace, std::span<const T> logit_grad,
                          std::span<const Grid2D> similarity_grads = {}) const;

 private:
  struct BlockParams {
    std::size_t ln1_w, ln1_b, qkv_w, qkv_b, proj_w, proj_b;
    std::size_t ln2_w, ln2_b;  // npos when absent
    std::size_t fc1_w, fc1_b, fc2_w, fc2_b;
    bool msa_skip, ln2, mlp_skip;
  };

  void block_forward(int l, BlockCache<T>& cache, ForwardTrace<T>& trace) const;
  void block_backward(int l, const BlockCache<T>& cache, std::span<const Grid2D> similarity_grads,
                      std::vector<T>& dout, std::span<T> grads) const;

  ViTConfig cfg_;
  ParameterLayout layout_;
  std::vector<T> params_;
  std::vector<BlockParams> block_params_;
  std::size_t patch_w_, patch_b_, cls_, pos_, norm_w_, norm_b_, head_w_, head_b_;
};

extern template class VisionTransformer<float>;
extern template class VisionTransformer<double>;

}  // namespace sar
