#include "sar/vit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "sar/error.hpp"
#include "sar/kernels.hpp"

namespace sar {

namespace {

constexpr double kLnEps = 1e-6;
constexpr std::size_t kAbsent = std::numeric_limits<std::size_t>::max();

using kernels::gemm_nn;
using kernels::gemm_nt;
using kernels::gemm_tn;

template <class T>
void layer_norm(std::span<const T> x, std::span<const T> gamma, std::span<const T> beta,
                std::span<T> hat, std::span<T> rstd, std::span<T> out, int rows, int d) {
  for (int r = 0; r < rows; ++r) {
    const T* xr = x.data() + static_cast<std::size_t>(r) * d;
    T mean = 0;
    for (int i = 0; i < d; ++i) mean += xr[i];
    mean /= T(d);
    T var = 0;
    for (int i = 0; i < d; ++i) var += (xr[i] - mean) * (xr[i] - mean);
    var /= T(d);
    const T rs = T(1) / std::sqrt(var + T(kLnEps));
    rstd[r] = rs;
    T* hr = hat.data() + static_cast<std::size_t>(r) * d;
    T* orow = out.data() + static_cast<std::size_t>(r) * d;
    for (int i = 0; i < d; ++i) {
      hr[i] = (xr[i] - mean) * rs;
      orow[i] = hr[i] * gamma[i] + beta[i];
    }
  }
}

// dx += LN'(dy); dgamma, dbeta accumulate.
template <class T>
void layer_norm_backward(std::span<const T> dy, std::span<const T> hat, std::span<const T> rstd,
                         std::span<const T> gamma, std::span<T> dx, std::span<T> dgamma,
                         std::span<T> dbeta, int rows, int d) {
  for (int r = 0; r < rows; ++r) {
    const T* dyr = dy.data() + static_cast<std::size_t>(r) * d;
    const T* hr = hat.data() + static_cast<std::size_t>(r) * d;
    T mean_dhat = 0;
    T mean_dhat_hat = 0;
    for (int i = 0; i < d; ++i) {
      const T dh = dyr[i] * gamma[i];
      mean_dhat += dh;
      mean_dhat_hat += dh * hr[i];
      dgamma[i] += dyr[i] * hr[i];
      dbeta[i] += dyr[i];
    }
    mean_dhat /= T(d);
    mean_dhat_hat /= T(d);
    T* dxr = dx.data() + static_cast<std::size_t>(r) * d;
    for (int i = 0; i < d; ++i) {
      dxr[i] += rstd[r] * (dyr[i] * gamma[i] - mean_dhat - hr[i] * mean_dhat_hat);
    }
  }
}

template <class T>
void add_bias(std::span<T> out, std::span<const T> bias, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    T* o = out.data() + static_cast<std::size_t>(r) * cols;
    for (int c = 0; c < cols; ++c) o[c] += bias[c];
  }
}

template <class T>
void column_sum(std::span<const T> in, std::span<T> out, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    const T* row = in.data() + static_cast<std::size_t>(r) * cols;
    for (int c = 0; c < cols; ++c) out[c] += row[c];
  }
}

// Copy columns [col, col+width) of a rows x stride matrix into a dense rows x width one.
template <class T>
void gather_columns(std::span<const T> src, std::span<T> dst, int rows, int stride, int col,
                    int width) {
  for (int r = 0; r < rows; ++r) {
    std::copy_n(src.data() + static_cast<std::size_t>(r) * stride + col, width,
                dst.data() + static_cast<std::size_t>(r) * width);
  }
}

template <class T>
void scatter_columns(std::span<const T> src, std::span<T> dst, int rows, int stride, int col,
                     int width) {
  for (int r = 0; r < rows; ++r) {
    std::copy_n(src.data() + static_cast<std::size_t>(r) * width, width,
                dst.data() + static_cast<std::size_t>(r) * stride + col);
  }
}

}  // namespace

std::string_view to_string(BlockVariant v) {
  switch (v) {
    case BlockVariant::Standard: return "A";
    case BlockVariant::NoMsaSkip: return "B";
    case BlockVariant::NoMsaSkipNoLn: return "C";
    case BlockVariant::NoAllSkips: return "D";
  }
  return "?";
}

BlockVariant parse_block_variant(std::string_view name) {
  if (name == "A" || name == "standard") return BlockVariant::Standard;
  if (name == "B" || name == "no-msa-skip") return BlockVariant::NoMsaSkip;
  if (name == "C" || name == "no-msa-skip-no-ln") return BlockVariant::NoMsaSkipNoLn;
  if (name == "D" || name == "no-all-skips") return BlockVariant::NoAllSkips;
  throw Error(ErrorCode::InvalidArgument, "unknown block variant '" + std::string(name) +
                                              "' (expected A, B, C or D)");
}

void ViTConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidArgument, msg); };
  if (image_size <= 0 || patch_size <= 0 || channels <= 0) fail("image/patch sizes must be positive");
  if (image_size % patch_size != 0) fail("image_size must be divisible by patch_size");
  if (grid_side() < 2) fail("patch grid must be at least 2 x 2");
  if (embed_dim <= 0 || heads <= 0 || embed_dim % heads != 0) {
    fail("embed_dim must be a positive multiple of heads");
  }
  if (blocks < 1) fail("need at least one block");
  if (!(mlp_ratio > 0) || hidden_dim() < 1) fail("mlp_ratio must give a positive hidden size");
  if (num_classes < 2) fail("need at least two classes");
}

ParameterLayout::ParameterLayout(const ViTConfig& cfg) {
  cfg.validate();
  const int d = cfg.embed_dim;
  add("patch_embed.weight", cfg.patch_dim(), d, true);
  add("patch_embed.bias", 1, d, false);
  add("cls_token", 1, d, false);
  add("pos_embed", cfg.tokens(), d, false);
  for (int l = 0; l < cfg.blocks; ++l) {
    const std::string p = "blocks." + std::to_string(l) + ".";
    const bool last = l == cfg.blocks - 1;
    const bool ln2 = !(last && (cfg.last_block == BlockVariant::NoMsaSkipNoLn ||
                                cfg.last_block == BlockVariant::NoAllSkips));
    add(p + "norm1.weight", 1, d, false);
    add(p + "norm1.bias", 1, d, false);
    add(p + "attn.qkv.weight", d, 3 * d, true);
    add(p + "attn.qkv.bias", 1, 3 * d, false);
    add(p + "attn.proj.weight", d, d, true);
    add(p + "attn.proj.bias", 1, d, false);
    if (ln2) {
      add(p + "norm2.weight", 1, d, false);
      add(p + "norm2.bias", 1, d, false);
    }
    add(p + "mlp.fc1.weight", d, cfg.hidden_dim(), true);
    add(p + "mlp.fc1.bias", 1, cfg.hidden_dim(), false);
    add(p + "mlp.fc2.weight", cfg.hidden_dim(), d, true);
    add(p + "mlp.fc2.bias", 1, d, false);
  }
  add("norm.weight", 1, d, false);
  add("norm.bias", 1, d, false);
  add("head.weight", d, cfg.num_classes, true);
  add("head.bias", 1, cfg.num_classes, false);
}

void ParameterLayout::add(std::string name, int rows, int cols, bool decay) {
  entries_.push_back({std::move(name), total_, rows, cols, decay});
  total_ += entries_.back().size();
}

const ParamInfo& ParameterLayout::find(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e;
  }
  throw Error(ErrorCode::InvalidArgument, "no parameter named '" + std::string(name) + "'");
}

bool ParameterLayout::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const ParamInfo& e) { return e.name == name; });
}

template <class T>
std::span<const T> ForwardTrace<T>::tokens(int l) const {
  if (l < 0 || l > static_cast<int>(blocks.size())) {
    throw Error(ErrorCode::InvalidArgument, "layer index out of range");
  }
  return l == static_cast<int>(blocks.size()) ? std::span<const T>(blocks.back().output)
                                              : std::span<const T>(blocks[l].input);
}

template <class T>
std::span<const T> ForwardTrace<T>::attention(int l, int h) const {
  if (l < 0 || l >= static_cast<int>(blocks.size()) || h < 0 || h >= config.heads) {
    throw Error(ErrorCode::InvalidArgument, "attention index out of range");
  }
  const auto n = static_cast<std::size_t>(config.tokens());
  return std::span<const T>(blocks[l].attn).subspan(h * n * n, n * n);
}

template <class T>
Grid2D ForwardTrace<T>::cls_attention(int h) const {
  const auto a = attention(config.blocks - 1, h);
  std::vector<double> row(a.begin() + 1, a.begin() + config.tokens());
  return Grid2D(config.grid_side(), std::move(row), MapKind::PostSoftmax);
}

template <class T>
HeadProjection ForwardTrace<T>::head_projection(int l, int h) const {
  attention(l, h);  // bounds check
  const int d = config.embed_dim;
  const int hd = config.head_dim();
  const auto& qkv = blocks[l].qkv;
  HeadProjection p;
  p.side = config.grid_side();
  p.cls_query.assign(qkv.begin() + h * hd, qkv.begin() + (h + 1) * hd);
  p.patch_keys.reserve(static_cast<std::size_t>(config.patches()) * hd);
  for (int t = 1; t < config.tokens(); ++t) {
    const auto row = qkv.begin() + static_cast<std::size_t>(t) * 3 * d + d + h * hd;
    p.patch_keys.insert(p.patch_keys.end(), row, row + hd);
  }
  return p;
}

template <class T>
ClassificationLoss<T> classification_loss(std::span<const T> logits, int label) {
  if (label < 0 || label >= static_cast<int>(logits.size())) {
    throw Error(ErrorCode::InvalidArgument, "label " + std::to_string(label) +
                                                " outside [0, " + std::to_string(logits.size()) +
                                                ")");
  }
  const double peak = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (T z : logits) sum += std::exp(double(z) - peak);
  const double lse = peak + std::log(sum);
  ClassificationLoss<T> out{lse - double(logits[label]), std::vector<T>(logits.size())};
  for (std::size_t c = 0; c < logits.size(); ++c) {
    out.grad[c] = T(std::exp(double(logits[c]) - lse));
  }
  out.grad[label] -= T(1);
  return out;
}

template <class T>
VisionTransformer<T>::VisionTransformer(ViTConfig cfg)
    : cfg_(cfg), layout_(cfg), params_(layout_.total(), T(0)) {
  auto off = [&](const std::string& n) { return layout_.find(n).offset; };
  patch_w_ = off("patch_embed.weight");
  patch_b_ = off("patch_embed.bias");
  cls_ = off("cls_token");
  pos_ = off("pos_embed");
  norm_w_ = off("norm.weight");
  norm_b_ = off("norm.bias");
  head_w_ = off("head.weight");
  head_b_ = off("head.bias");
  for (int l = 0; l < cfg_.blocks; ++l) {
    const std::string p = "blocks." + std::to_string(l) + ".";
    const bool last = l == cfg_.blocks - 1;
    BlockParams bp{};
    bp.ln1_w = off(p + "norm1.weight");
    bp.ln1_b = off(p + "norm1.bias");
    bp.qkv_w = off(p + "attn.qkv.weight");
    bp.qkv_b = off(p + "attn.qkv.bias");
    bp.proj_w = off(p + "attn.proj.weight");
    bp.proj_b = off(p + "attn.proj.bias");
    bp.ln2 = layout_.contains(p + "norm2.weight");
    bp.ln2_w = bp.ln2 ? off(p + "norm2.weight") : kAbsent;
    bp.ln2_b = bp.ln2 ? off(p + "norm2.bias") : kAbsent;
    bp.fc1_w = off(p + "mlp.fc1.weight");
    bp.fc1_b = off(p + "mlp.fc1.bias");
    bp.fc2_w = off(p + "mlp.fc2.weight");
    bp.fc2_b = off(p + "mlp.fc2.bias");
    bp.msa_skip = !last || cfg_.last_block == BlockVariant::Standard;
    bp.mlp_skip = !last || cfg_.last_block != BlockVariant::NoAllSkips;
    block_params_.push_back(bp);
  }
  // Identity LayerNorms so an uninitialised model is still well defined.
  for (const auto& e : layout_.entries()) {
    if (e.name.ends_with("norm1.weight") || e.name.ends_with("norm2.weight") ||
        e.name == "norm.weight") {
      std::fill_n(params_.begin() + e.offset, e.size(), T(1));
    }
  }
}

template <class T>
void VisionTransformer<T>::init(std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 0.02);
  auto truncated = [&] {
    for (;;) {
      const double v = normal(rng);
      if (std::abs(v) <= 0.04) return T(v);
    }
  };
  for (const auto& e : layout_.entries()) {
    auto p = std::span<T>(params_).subspan(e.offset, e.size());
    const bool ln_scale = e.name.ends_with("norm1.weight") || e.name.ends_with("norm2.weight") ||
                          e.name == "norm.weight";
    if (ln_scale) {
      std::fill(p.begin(), p.end(), T(1));
    } else if (e.decay || e.name == "cls_token" || e.name == "pos_embed") {
      for (auto& v : p) v = truncated();
    } else {
      std::fill(p.begin(), p.end(), T(0));
    }
  }
}

template <class T>
std::span<T> VisionTransformer<T>::parameter(std::string_view name) {
  const auto& e = layout_.find(name);
  return std::span<T>(params_).subspan(e.offset, e.size());
}

template <class T>
std::span<const T> VisionTransformer<T>::parameter(std::string_view name) const {
  const auto& e = layout_.find(name);
  return std::span<const T>(params_).subspan(e.offset, e.size());
}

template <class T>
ForwardTrace<T> VisionTransformer<T>::forward(std::span<const T> image) const {
  const int side = cfg_.image_size;
  const int P = cfg_.patch_size;
  const int k = cfg_.grid_side();
  const int C = cfg_.channels;
  const int d = cfg_.embed_dim;
  const int n = cfg_.patches();
  const int N = cfg_.tokens();
  const int pd = cfg_.patch_dim();
  if (image.size() != static_cast<std::size_t>(C) * side * side) {
    throw Error(ErrorCode::DimensionMismatch,
                "image has " + std::to_string(image.size()) + " values, model expects " +
                    std::to_string(C * side * side));
  }
  const std::span<const T> w(params_);

  ForwardTrace<T> trace;
  trace.owner = this;
  trace.config = cfg_;
  trace.patches.resize(static_cast<std::size_t>(n) * pd);
  for (int gx = 0; gx < k; ++gx) {
    for (int gy = 0; gy < k; ++gy) {
      T* dst = trace.patches.data() + static_cast<std::size_t>(gx * k + gy) * pd;
      for (int c = 0; c < C; ++c) {
        for (int py = 0; py < P; ++py) {
          const T* src = image.data() + static_cast<std::size_t>(c) * side * side +
                         static_cast<std::size_t>(gx * P + py) * side + gy * P;
          std::copy_n(src, P, dst + (c * P + py) * P);
        }
      }
    }
  }

  trace.blocks.resize(cfg_.blocks);
  auto& x = trace.blocks[0].input;
  x.assign(static_cast<std::size_t>(N) * d, T(0));
  gemm_nn<T>(trace.patches, w.subspan(patch_w_, static_cast<std::size_t>(pd) * d),
             std::span<T>(x).subspan(d), n, pd, d);
  add_bias<T>(std::span<T>(x).subspan(d), w.subspan(patch_b_, d), n, d);
  std::copy_n(w.data() + cls_, d, x.data());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += w[pos_ + i];

  for (int l = 0; l < cfg_.blocks; ++l) {
    if (l > 0) trace.blocks[l].input = trace.blocks[l - 1].output;
    block_forward(l, trace.blocks[l], trace);
  }

  const auto cls = std::span<const T>(trace.blocks.back().output).first(d);
  trace.cls_hat.resize(d);
  trace.cls_norm.resize(d);
  std::vector<T> rstd(1);
  layer_norm<T>(cls, w.subspan(norm_w_, d), w.subspan(norm_b_, d), trace.cls_hat, rstd,
                trace.cls_norm, 1, d);
  trace.cls_rstd = rstd[0];
  trace.logits.assign(cfg_.num_classes, T(0));
  gemm_nn<T>(trace.cls_norm, w.subspan(head_w_, static_cast<std::size_t>(d) * cfg_.num_classes),
             trace.logits, 1, d, cfg_.num_classes);
  add_bias<T>(trace.logits, w.subspan(head_b_, cfg_.num_classes), 1, cfg_.num_classes);
  return trace;
}

template <class T>
void VisionTransformer<T>::block_forward(int l, BlockCache<T>& c, ForwardTrace<T>& trace) const {
  const auto& bp = block_params_[l];
  const int N = cfg_.tokens();
  const int d = cfg_.embed_dim;
  const int H = cfg_.heads;
  const int hd = cfg_.head_dim();
  const int hid = cfg_.hidden_dim();
  const std::size_t Nd = static_cast<std::size_t>(N) * d;
  const std::size_t NN = static_cast<std::size_t>(N) * N;
  const std::span<const T> w(params_);
  const T scale = T(1) / std::sqrt(T(hd));
  const bool last = l == cfg_.blocks - 1;

  c.ln1_hat.resize(Nd);
  c.ln1_rstd.resize(N);
  c.ln1_out.resize(Nd);
  layer_norm<T>(c.input, w.subspan(bp.ln1_w, d), w.subspan(bp.ln1_b, d), c.ln1_hat, c.ln1_rstd,
                c.ln1_out, N, d);

  c.qkv.resize(Nd * 3);
  gemm_nn<T>(c.ln1_out, w.subspan(bp.qkv_w, static_cast<std::size_t>(d) * 3 * d), c.qkv, N, d,
             3 * d);
  add_bias<T>(c.qkv, w.subspan(bp.qkv_b, 3 * d), N, 3 * d);

  c.attn.resize(NN * H);
  c.attn_out.resize(Nd);
  std::vector<T> q(static_cast<std::size_t>(N) * hd), kk(q.size()), v(q.size()), o(q.size());
  for (int h = 0; h < H; ++h) {
    gather_columns<T>(c.qkv, q, N, 3 * d, h * hd, hd);
    gather_columns<T>(c.qkv, kk, N, 3 * d, d + h * hd, hd);
    gather_columns<T>(c.qkv, v, N, 3 * d, 2 * d + h * hd, hd);
    auto a = std::span<T>(c.attn).subspan(h * NN, NN);
    gemm_nt<T>(q, kk, a, N, hd, N);
    for (auto& s : a) s *= scale;
    if (last) {
      std::vector<double> sim(a.begin() + 1, a.begin() + N);
      trace.last_block_similarity.emplace_back(cfg_.grid_side(), std::move(sim),
                                               MapKind::PreSoftmax);
    }
    kernels::softmax_rows<T>(a, N, N);
    gemm_nn<T>(a, v, o, N, N, hd);
    scatter_columns<T>(o, c.attn_out, N, d, h * hd, hd);
  }

  c.mid.assign(Nd, T(0));
  gemm_nn<T>(c.attn_out, w.subspan(bp.proj_w, static_cast<std::size_t>(d) * d), c.mid, N, d, d);
  add_bias<T>(c.mid, w.subspan(bp.proj_b, d), N, d);
  if (bp.msa_skip) {
    for (std::size_t i = 0; i < Nd; ++i) c.mid[i] += c.input[i];
  }

  if (bp.ln2) {
    c.ln2_hat.resize(Nd);
    c.ln2_rstd.resize(N);
    c.mlp_in.resize(Nd);
    layer_norm<T>(c.mid, w.subspan(bp.ln2_w, d), w.subspan(bp.ln2_b, d), c.ln2_hat, c.ln2_rstd,
                  c.mlp_in, N, d);
  } else {
    c.mlp_in = c.mid;
  }

  const std::size_t Nh = static_cast<std::size_t>(N) * hid;
  c.fc1_out.resize(Nh);
  gemm_nn<T>(c.mlp_in, w.subspan(bp.fc1_w, static_cast<std::size_t>(d) * hid), c.fc1_out, N, d,
             hid);
  add_bias<T>(c.fc1_out, w.subspan(bp.fc1_b, hid), N, hid);
  c.gelu_out.resize(Nh);
  kernels::gelu<T>(c.fc1_out, c.gelu_out);

  c.output.resize(Nd);
  gemm_nn<T>(c.gelu_out, w.subspan(bp.fc2_w, static_cast<std::size_t>(hid) * d), c.output, N,
             hid, d);
  add_bias<T>(c.output, w.subspan(bp.fc2_b, d), N, d);
  if (bp.mlp_skip) {
    for (std::size_t i = 0; i < Nd; ++i) c.output[i] += c.mid[i];
  }
}

template <class T>
void VisionTransformer<T>::backward(const ForwardTrace<T>& trace, std::span<const T> logit_grad,
                                    std::span<const Grid2D> similarity_grads,
                                    std::span<T> grads) const {
  if (trace.owner != this || !(trace.config == cfg_) ||
      trace.blocks.size() != static_cast<std::size_t>(cfg_.blocks)) {
    throw Error(ErrorCode::DimensionMismatch, "forward trace was not produced by this model");
  }
  if (logit_grad.size() != static_cast<std::size_t>(cfg_.num_classes)) {
    throw Error(ErrorCode::DimensionMismatch, "logit gradient has wrong length");
  }
  if (!similarity_grads.empty()) {
    if (similarity_grads.size() != static_cast<std::size_t>(cfg_.heads)) {
      throw Error(ErrorCode::DimensionMismatch, "need one similarity gradient per head");
    }
    for (const auto& g : similarity_grads) {
      if (g.side() != cfg_.grid_side()) {
        throw Error(ErrorCode::DimensionMismatch, "similarity gradient has wrong side");
      }
    }
  }
  if (grads.size() != params_.size()) {
    throw Error(ErrorCode::DimensionMismatch, "gradient buffer has wrong length");
  }

  const int d = cfg_.embed_dim;
  const int N = cfg_.tokens();
  const int n = cfg_.patches();
  const int pd = cfg_.patch_dim();
  const int C = cfg_.num_classes;
  const std::span<const T> w(params_);

  gemm_tn<T>(trace.cls_norm, logit_grad, grads.subspan(head_w_, static_cast<std::size_t>(d) * C),
             1, d, C);
  for (int c = 0; c < C; ++c) grads[head_b_ + c] += logit_grad[c];
  std::vector<T> dnorm(d);
  gemm_nt<T>(logit_grad, w.subspan(head_w_, static_cast<std::size_t>(d) * C), dnorm, 1, C, d);

  std::vector<T> dout(static_cast<std::size_t>(N) * d, T(0));
  const std::vector<T> rstd{trace.cls_rstd};
  layer_norm_backward<T>(dnorm, trace.cls_hat, rstd, w.subspan(norm_w_, d),
                         std::span<T>(dout).first(d), grads.subspan(norm_w_, d),
                         grads.subspan(norm_b_, d), 1, d);

  for (int l = cfg_.blocks - 1; l >= 0; --l) {
    block_backward(l, trace.blocks[l], similarity_grads, dout, grads);
  }

  for (int i = 0; i < d; ++i) grads[cls_ + i] += dout[i];
  for (std::size_t i = 0; i < dout.size(); ++i) grads[pos_ + i] += dout[i];
  const auto dpatch = std::span<const T>(dout).subspan(d);
  gemm_tn<T>(trace.patches, dpatch, grads.subspan(patch_w_, static_cast<std::size_t>(pd) * d), n,
             pd, d);
  column_sum<T>(dpatch, grads.subspan(patch_b_, d), n, d);
}

template <class T>
std::vector<T> VisionTransformer<T>::backward(const ForwardTrace<T>& trace,
                                              std::span<const T> logit_grad,
                                              std::span<const Grid2D> similarity_grads) const {
  std::vector<T> grads(params_.size(), T(0));
  backward(trace, logit_grad, similarity_grads, grads);
  return grads;
}

template <class T>
void VisionTransformer<T>::block_backward(int l, const BlockCache<T>& c,
                                          std::span<const Grid2D> similarity_grads,
                                          std::vector<T>& dout, std::span<T> g) const {
  const auto& bp = block_params_[l];
  const int N = cfg_.tokens();
  const int d = cfg_.embed_dim;
  const int H = cfg_.heads;
  const int hd = cfg_.head_dim();
  const int hid = cfg_.hidden_dim();
  const std::size_t Nd = static_cast<std::size_t>(N) * d;
  const std::size_t NN = static_cast<std::size_t>(N) * N;
  const std::size_t Nh = static_cast<std::size_t>(N) * hid;
  const std::span<const T> w(params_);
  const T scale = T(1) / std::sqrt(T(hd));
  const bool last = l == cfg_.blocks - 1;

  // MLP
  std::vector<T> dmid = bp.mlp_skip ? dout : std::vector<T>(Nd, T(0));
  gemm_tn<T>(c.gelu_out, dout, g.subspan(bp.fc2_w, static_cast<std::size_t>(hid) * d), N, hid, d);
  column_sum<T>(dout, g.subspan(bp.fc2_b, d), N, d);
  std::vector<T> dh(Nh);
  gemm_nt<T>(dout, w.subspan(bp.fc2_w, static_cast<std::size_t>(hid) * d), dh, N, d, hid);
  kernels::gelu_backward<T>(c.fc1_out, dh);
  gemm_tn<T>(c.mlp_in, dh, g.subspan(bp.fc1_w, static_cast<std::size_t>(d) * hid), N, d, hid);
  column_sum<T>(dh, g.subspan(bp.fc1_b, hid), N, hid);
  std::vector<T> dc(Nd);
  gemm_nt<T>(dh, w.subspan(bp.fc1_w, static_cast<std::size_t>(d) * hid), dc, N, hid, d);
  if (bp.ln2) {
    layer_norm_backward<T>(dc, c.ln2_hat, c.ln2_rstd, w.subspan(bp.ln2_w, d), dmid,
                           g.subspan(bp.ln2_w, d), g.subspan(bp.ln2_b, d), N, d);
  } else {
    for (std::size_t i = 0; i < Nd; ++i) dmid[i] += dc[i];
  }

  // Attention
  std::vector<T> dx = bp.msa_skip ? dmid : std::vector<T>(Nd, T(0));
  gemm_tn<T>(c.attn_out, dmid, g.subspan(bp.proj_w, static_cast<std::size_t>(d) * d), N, d, d);
  column_sum<T>(dmid, g.subspan(bp.proj_b, d), N, d);
  std::vector<T> dattn_out(Nd);
  gemm_nt<T>(dmid, w.subspan(bp.proj_w, static_cast<std::size_t>(d) * d), dattn_out, N, d, d);

  std::vector<T> dqkv(Nd * 3, T(0));
  const std::size_t Nhd = static_cast<std::size_t>(N) * hd;
  std::vector<T> q(Nhd), kk(Nhd), v(Nhd), dO(Nhd), dq(Nhd), dk(Nhd), dv(Nhd), ds(NN);
  for (int h = 0; h < H; ++h) {
    gather_columns<T>(c.qkv, q, N, 3 * d, h * hd, hd);
    gather_columns<T>(c.qkv, kk, N, 3 * d, d + h * hd, hd);
    gather_columns<T>(c.qkv, v, N, 3 * d, 2 * d + h * hd, hd);
    gather_columns<T>(dattn_out, dO, N, d, h * hd, hd);
    const auto a = std::span<const T>(c.attn).subspan(h * NN, NN);

    gemm_nt<T>(dO, v, ds, N, hd, N);  // dA
    gemm_tn<T>(a, dO, dv, N, N, hd, false);
    for (int r = 0; r < N; ++r) {
      const T* ar = a.data() + static_cast<std::size_t>(r) * N;
      T* dr = ds.data() + static_cast<std::size_t>(r) * N;
      T dot = 0;
      for (int j = 0; j < N; ++j) dot += ar[j] * dr[j];
      for (int j = 0; j < N; ++j) dr[j] = ar[j] * (dr[j] - dot);
    }
    if (last && !similarity_grads.empty()) {
      const auto sg = similarity_grads[h].values();
      for (int p = 0; p + 1 < N; ++p) ds[1 + p] += T(sg[p]);
    }
    for (auto& s : ds) s *= scale;
    gemm_nn<T>(ds, kk, dq, N, N, hd);
    gemm_tn<T>(ds, q, dk, N, N, hd, false);
    scatter_columns<T>(dq, dqkv, N, 3 * d, h * hd, hd);
    scatter_columns<T>(dk, dqkv, N, 3 * d, d + h * hd, hd);
    scatter_columns<T>(dv, dqkv, N, 3 * d, 2 * d + h * hd, hd);
  }

  gemm_tn<T>(c.ln1_out, dqkv, g.subspan(bp.qkv_w, static_cast<std::size_t>(d) * 3 * d), N, d,
             3 * d);
  column_sum<T>(dqkv, g.subspan(bp.qkv_b, 3 * d), N, 3 * d);
  std::vector<T> da(Nd);
  gemm_nt<T>(dqkv, w.subspan(bp.qkv_w, static_cast<std::size_t>(d) * 3 * d), da, N, 3 * d, d);
  layer_norm_backward<T>(da, c.ln1_hat, c.ln1_rstd, w.subspan(bp.ln1_w, d), dx,
                         g.subspan(bp.ln1_w, d), g.subspan(bp.ln1_b, d), N, d);
  dout = std::move(dx);
}

template struct ForwardTrace<float>;
template struct ForwardTrace<double>;
template class VisionTransformer<float>;
template class VisionTransformer<double>;
template ClassificationLoss<float> classification_loss<float>(std::span<const float>, int);
template ClassificationLoss<double> classification_loss<double>(std::span<const double>, int);

}  // namespace sar
