#pragma once

// U-shaped encoder-decoder built from shifted-window transformer blocks.
//
// Token tensors are [B, H*W, C] in row-major grid order. Linear weights are
// stored [in, out]. Canonical parameter names:
//
//   patch_embed.proj.{weight,bias}        conv [E, Cin, p, p]
//   patch_embed.norm.{weight,bias}
//   layers.<s>.blocks.<j>.{norm1,norm2}.{weight,bias}
//   layers.<s>.blocks.<j>.attn.qkv.{weight,bias}
//   layers.<s>.blocks.<j>.attn.relative_position_bias_table
//   layers.<s>.blocks.<j>.attn.proj.{weight,bias}
//   layers.<s>.blocks.<j>.mlp.{fc1,fc2}.{weight,bias}
//   layers.<s>.downsample.{norm.weight,norm.bias,reduction.weight}
//   norm.{weight,bias}
//   layers_up.0.{expand.weight,norm.weight,norm.bias}
//   concat_back_dim.<s>.{weight,bias}
//   layers_up.<s>.blocks.<j>.*            as in the encoder
//   layers_up.<s>.upsample.{expand.weight,norm.weight,norm.bias}
//   norm_up.{weight,bias}
//   up.{expand.weight,norm.weight,norm.bias}   final expansion by the patch size
//   output.weight                         [E, K]

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "s4cv/backbones/network.hpp"
#include "s4cv/core/attention.hpp"
#include "s4cv/core/conv.hpp"
#include "s4cv/core/ops.hpp"

namespace s4cv {

struct AttentionConfig {
  int patch_size = 4;
  int embed_dim = 96;
  std::vector<int> num_heads{3, 6, 12, 24};
  int window_size = 7;
  int depth = 2;  // blocks per stage, alternating plain / shifted windows
  int mlp_ratio = 4;
  bool relative_position_bias = true;
  // Replicates grayscale input to three channels so that externally trained
  // RGB patch projections can be loaded.
  bool replicate_to_rgb = false;

  int stages() const { return static_cast<int>(num_heads.size()); }
  int in_channels() const { return replicate_to_rgb ? 3 : 1; }
  int stage_dim(int s) const { return embed_dim << s; }
  int head_dim(int s) const { return stage_dim(s) / num_heads[static_cast<std::size_t>(s)]; }

  void validate() const {
    if (patch_size <= 0 || embed_dim <= 0 || window_size <= 0 || depth <= 0 || mlp_ratio <= 0)
      throw ConfigError("attention config: sizes must be positive");
    if (num_heads.empty()) throw ConfigError("attention config: at least one stage required");
    for (int s = 0; s < stages(); ++s)
      if (num_heads[s] <= 0 || stage_dim(s) % num_heads[s])
        throw ConfigError("attention config: stage " + std::to_string(s) + " dim " + std::to_string(stage_dim(s)) +
                          " is not divisible by " + std::to_string(num_heads[s]) + " heads");
  }
};

// Window side and shift actually used on a grid: windows never exceed the
// grid, and a grid that fits in one window is not shifted.
struct WindowPlan {
  int window;
  int shift;
};

inline WindowPlan window_plan(std::int64_t grid_h, std::int64_t grid_w, int window, bool shifted) {
  const auto g = std::min(grid_h, grid_w);
  if (g <= window) return {static_cast<int>(g), 0};
  return {window, shifted ? window / 2 : 0};
}

namespace swin_detail {

inline void require_divisible(std::int64_t h, std::int64_t w, std::int64_t m, const char* what) {
  if (m <= 0 || h % m || w % m)
    throw DimensionError(std::string(what) + ": grid " + std::to_string(h) + "x" + std::to_string(w) +
                         " not divisible by window " + std::to_string(m));
}

}  // namespace swin_detail

// [B, H*W, C] -> [B*(H/M)*(W/M), M*M, C], windows in row-major order.
template <typename T>
Var<T> window_partition(const Var<T>& x, std::int64_t H, std::int64_t W, std::int64_t M) {
  swin_detail::require_divisible(H, W, M, "window_partition");
  const auto B = x.dim(0), C = x.dim(2);
  if (x.dim(1) != H * W) throw DimensionError("window_partition: token count != H*W");
  const auto nh = H / M, nw = W / M;
  auto rows = std::make_shared<std::vector<std::int64_t>>();
  rows->reserve(static_cast<std::size_t>(B * H * W));
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t wy = 0; wy < nh; ++wy)
      for (std::int64_t wx = 0; wx < nw; ++wx)
        for (std::int64_t i = 0; i < M; ++i)
          for (std::int64_t j = 0; j < M; ++j) rows->push_back(b * H * W + (wy * M + i) * W + wx * M + j);
  return gather_rows(x, std::move(rows), Shape{B * nh * nw, M * M, C});
}

// Inverse of window_partition.
template <typename T>
Var<T> window_reverse(const Var<T>& windows, std::int64_t H, std::int64_t W, std::int64_t M) {
  swin_detail::require_divisible(H, W, M, "window_reverse");
  const auto nh = H / M, nw = W / M, C = windows.dim(2);
  if (windows.dim(1) != M * M || windows.dim(0) % (nh * nw))
    throw DimensionError("window_reverse: window tensor " + shape_str(windows.shape()) + " does not fit grid");
  const auto B = windows.dim(0) / (nh * nw);
  auto rows = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(B * H * W));
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x) {
        const auto win = (b * nh + y / M) * nw + x / M;
        (*rows)[b * H * W + y * W + x] = win * M * M + (y % M) * M + x % M;
      }
  return gather_rows(windows, std::move(rows), Shape{B, H * W, C});
}

// Cyclic roll of the token grid: out(y, x) = in((y + shift) mod H, (x + shift) mod W).
template <typename T>
Var<T> cyclic_shift(const Var<T>& x, std::int64_t H, std::int64_t W, std::int64_t shift) {
  const auto B = x.dim(0), C = x.dim(2);
  auto rows = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(B * H * W));
  auto wrap = [](std::int64_t v, std::int64_t n) { return ((v % n) + n) % n; };
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t xx = 0; xx < W; ++xx)
        (*rows)[b * H * W + y * W + xx] = b * H * W + wrap(y + shift, H) * W + wrap(xx + shift, W);
  return gather_rows(x, std::move(rows), Shape{B, H * W, C});
}

// Pairwise lookup into a (2*table_window-1)^2 relative-position table for
// an M x M window; a window clamped below the table side uses its centre.
inline IndexList relative_position_index(int M, int table_window) {
  auto idx = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(M * M * M * M));
  const int N = M * M, side = 2 * table_window - 1;
  for (int a = 0; a < N; ++a)
    for (int b = 0; b < N; ++b) {
      const int dy = a / M - b / M + table_window - 1, dx = a % M - b % M + table_window - 1;
      (*idx)[a * N + b] = dy * side + dx;
    }
  return idx;
}

// Mask separating tokens that were not neighbours before the cyclic shift.
template <typename T>
std::shared_ptr<const Tensor<T>> shifted_window_mask(std::int64_t H, std::int64_t W, int M, int shift) {
  std::vector<int> region(static_cast<std::size_t>(H * W));
  auto band = [&](std::int64_t v, std::int64_t n) { return v < n - M ? 0 : (v < n - shift ? 1 : 2); };
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x) region[y * W + x] = band(y, H) * 3 + band(x, W);
  const auto nh = H / M, nw = W / M, N = static_cast<std::int64_t>(M) * M;
  auto mask = std::make_shared<Tensor<T>>(Shape{nh * nw, N, N});
  for (std::int64_t wy = 0; wy < nh; ++wy)
    for (std::int64_t wx = 0; wx < nw; ++wx) {
      const auto w = wy * nw + wx;
      for (std::int64_t a = 0; a < N; ++a)
        for (std::int64_t b = 0; b < N; ++b) {
          const int ra = region[(wy * M + a / M) * W + wx * M + a % M];
          const int rb = region[(wy * M + b / M) * W + wx * M + b % M];
          (*mask)[(w * N + a) * N + b] = ra == rb ? T(0) : T(-100);
        }
    }
  return mask;
}

template <typename T>
struct MsaParams {
  Var<T> qkv_w, qkv_b, proj_w, proj_b;
  Var<T> rel_table;  // undefined when relative bias is disabled
};

// Multi-head self-attention within windows: z [Bw, N, C] -> [Bw, N, C].
// With a relative-position table N must be window^2.
template <typename T>
Var<T> msa(const Var<T>& z, const MsaParams<T>& p, int heads, int window,
           std::shared_ptr<const std::type_identity_t<Tensor<T>>> mask = nullptr, Tensor<T>* probe = nullptr) {
  const auto C = z.dim(2);
  if (p.rel_table.defined() && z.dim(1) != static_cast<std::int64_t>(window) * window)
    throw DimensionError("msa: " + std::to_string(z.dim(1)) + " tokens per window, expected " +
                         std::to_string(window * window));
  if (heads <= 0 || C % heads)
    throw ConfigError("msa: dim " + std::to_string(C) + " not divisible by " + std::to_string(heads) + " heads");
  if (p.qkv_w.dim(0) != C || p.qkv_w.dim(1) != 3 * C) throw ConfigError("msa: qkv projection does not match dim");
  const T scale = T(1) / std::sqrt(T(C / heads));
  auto qkv = linear(z, p.qkv_w, &p.qkv_b);
  AttentionBias<T> bias;
  if (p.rel_table.defined()) {
    const auto side = static_cast<int>(std::lround(std::sqrt(double(p.rel_table.dim(0)))));
    const int table_window = (side + 1) / 2;
    if (side * side != p.rel_table.dim(0) || side % 2 == 0 || table_window < window)
      throw ConfigError("msa: relative position table too small for window " + std::to_string(window));
    bias.table = p.rel_table;
    bias.relative_index = relative_position_index(window, table_window);
  }
  bias.mask = std::move(mask);
  auto att = window_attention(qkv, heads, scale, bias, probe);
  return linear(att, p.proj_w, &p.proj_b);
}

template <typename T>
struct SwinBlockParams {
  Var<T> norm1_w, norm1_b;
  MsaParams<T> attn;
  Var<T> norm2_w, norm2_b;
  Var<T> fc1_w, fc1_b, fc2_w, fc2_b;

  static SwinBlockParams create(ParamStore<T>& store, const std::string& prefix, int dim, int window, int mlp_ratio,
                                int heads, bool rel_bias, Rng& rng) {
    SwinBlockParams p;
    const auto D = static_cast<std::int64_t>(dim), H = static_cast<std::int64_t>(mlp_ratio) * dim;
    p.norm1_w = store.add(prefix + ".norm1.weight", init::constant<T>({D}, 1));
    p.norm1_b = store.add(prefix + ".norm1.bias", init::constant<T>({D}, 0));
    p.attn.qkv_w = store.add(prefix + ".attn.qkv.weight", init::truncated_normal<T>({D, 3 * D}, 0.02, rng));
    p.attn.qkv_b = store.add(prefix + ".attn.qkv.bias", init::constant<T>({3 * D}, 0));
    if (rel_bias) {
      const std::int64_t side = 2 * window - 1;
      p.attn.rel_table = store.add(prefix + ".attn.relative_position_bias_table",
                                   init::truncated_normal<T>({side * side, heads}, 0.02, rng));
    }
    p.attn.proj_w = store.add(prefix + ".attn.proj.weight", init::truncated_normal<T>({D, D}, 0.02, rng));
    p.attn.proj_b = store.add(prefix + ".attn.proj.bias", init::constant<T>({D}, 0));
    p.norm2_w = store.add(prefix + ".norm2.weight", init::constant<T>({D}, 1));
    p.norm2_b = store.add(prefix + ".norm2.bias", init::constant<T>({D}, 0));
    p.fc1_w = store.add(prefix + ".mlp.fc1.weight", init::truncated_normal<T>({D, H}, 0.02, rng));
    p.fc1_b = store.add(prefix + ".mlp.fc1.bias", init::constant<T>({H}, 0));
    p.fc2_w = store.add(prefix + ".mlp.fc2.weight", init::truncated_normal<T>({H, D}, 0.02, rng));
    p.fc2_b = store.add(prefix + ".mlp.fc2.bias", init::constant<T>({D}, 0));
    return p;
  }
};

// One pre-norm transformer block on a token grid; shifted windows when
// `shifted` and the grid is larger than a window.
template <typename T>
Var<T> swin_block(const Var<T>& z, std::int64_t H, std::int64_t W, const SwinBlockParams<T>& p, int heads, int window,
                  bool shifted) {
  const auto plan = window_plan(H, W, window, shifted);
  swin_detail::require_divisible(H, W, plan.window, "swin block");
  auto x = layer_norm(z, p.norm1_w, p.norm1_b);
  std::shared_ptr<const Tensor<T>> mask;
  if (plan.shift) {
    x = cyclic_shift(x, H, W, plan.shift);
    mask = shifted_window_mask<T>(H, W, plan.window, plan.shift);
  }
  auto win = window_partition(x, H, W, plan.window);
  win = msa(win, p.attn, heads, plan.window, mask);
  x = window_reverse(win, H, W, plan.window);
  if (plan.shift) x = cyclic_shift(x, H, W, -plan.shift);
  auto y = add(z, x);
  auto m = layer_norm(y, p.norm2_w, p.norm2_b);
  m = linear(gelu(linear(m, p.fc1_w, &p.fc1_b)), p.fc2_w, &p.fc2_b);
  return add(y, m);
}

// Plain-window block followed by a shifted-window block.
template <typename T>
Var<T> swin_block_pair(const Var<T>& z, std::int64_t H, std::int64_t W, const SwinBlockParams<T>& first,
                       const SwinBlockParams<T>& second, int heads, int window) {
  return swin_block(swin_block(z, H, W, first, heads, window, false), H, W, second, heads, window, true);
}

template <typename T>
struct PatchEmbedParams {
  Var<T> proj_w, proj_b, norm_w, norm_b;
};

// image [B, Cin, H, W] -> tokens [B, (H/p)*(W/p), E], layer-normalized.
template <typename T>
Var<T> patch_embed(const Var<T>& image, const PatchEmbedParams<T>& p, int patch) {
  const auto H = image.dim(2), W = image.dim(3);
  if (H % patch)
    throw DimensionError("patch_embed: height " + std::to_string(H) + " not divisible by patch size " +
                         std::to_string(patch));
  if (W % patch)
    throw DimensionError("patch_embed: width " + std::to_string(W) + " not divisible by patch size " +
                         std::to_string(patch));
  auto f = conv2d(image, p.proj_w, &p.proj_b, patch, 0);
  const auto B = f.dim(0), E = f.dim(1), gh = f.dim(2), gw = f.dim(3);
  auto tokens = reshape(permute(f, {0, 2, 3, 1}), Shape{B, gh * gw, E});
  return layer_norm(tokens, p.norm_w, p.norm_b);
}

template <typename T>
struct PatchMergeParams {
  Var<T> norm_w, norm_b, reduction_w;
};

// [B, H*W, C] -> [B, (H/2)*(W/2), 2C]: 2x2 neighbours concatenated, normalized,
// then linearly reduced from 4C to 2C.
template <typename T>
Var<T> patch_merge(const Var<T>& x, std::int64_t H, std::int64_t W, const PatchMergeParams<T>& p) {
  if (H % 2 || W % 2)
    throw DimensionError("patch_merge: grid " + std::to_string(H) + "x" + std::to_string(W) + " has an odd side");
  const auto B = x.dim(0), C = x.dim(2);
  const auto Ho = H / 2, Wo = W / 2;
  auto rows = std::make_shared<std::vector<std::int64_t>>();
  rows->reserve(static_cast<std::size_t>(B * H * W));
  // channel order (0,0), (1,0), (0,1), (1,1)
  static constexpr int dy[4] = {0, 1, 0, 1}, dx[4] = {0, 0, 1, 1};
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t y = 0; y < Ho; ++y)
      for (std::int64_t xx = 0; xx < Wo; ++xx)
        for (int k = 0; k < 4; ++k) rows->push_back(b * H * W + (2 * y + dy[k]) * W + 2 * xx + dx[k]);
  auto cat = gather_rows(x, std::move(rows), Shape{B, Ho * Wo, 4 * C});
  return linear(layer_norm(cat, p.norm_w, p.norm_b), p.reduction_w);
}

template <typename T>
struct PatchExpandParams {
  Var<T> expand_w, norm_w, norm_b;
};

// Linear expansion then depth-to-space by `factor`: [B, H*W, C] ->
// [B, (fH)*(fW), E/f^2] where E is the expanded width of `p.expand_w`.
template <typename T>
Var<T> patch_expand(const Var<T>& x, std::int64_t H, std::int64_t W, const PatchExpandParams<T>& p, int factor = 2) {
  const auto B = x.dim(0), C = x.dim(2);
  const auto expanded = p.expand_w.dim(1);
  const auto f2 = static_cast<std::int64_t>(factor) * factor;
  if (expanded % f2)
    throw DimensionError("patch_expand: expanded dim " + std::to_string(expanded) + " not divisible by " +
                         std::to_string(f2));
  const auto Co = expanded / f2;
  if (factor == 2 && C % 2) throw DimensionError("patch_expand: dim " + std::to_string(C) + " is odd");
  auto e = linear(x, p.expand_w);  // [B, H*W, f*f*Co], sub-pixel (p1, p2, c)
  auto flat = reshape(e, Shape{B * H * W * f2, Co});
  const auto Ho = H * factor, Wo = W * factor;
  auto rows = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(B * Ho * Wo));
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t y = 0; y < Ho; ++y)
      for (std::int64_t xx = 0; xx < Wo; ++xx) {
        const auto src_tok = b * H * W + (y / factor) * W + xx / factor;
        (*rows)[b * Ho * Wo + y * Wo + xx] = src_tok * f2 + (y % factor) * factor + xx % factor;
      }
  auto out = gather_rows(flat, std::move(rows), Shape{B, Ho * Wo, Co});
  return layer_norm(out, p.norm_w, p.norm_b);
}

template <typename T>
PatchExpandParams<T> make_expand_params(ParamStore<T>& store, const std::string& prefix, std::int64_t in_dim,
                                        std::int64_t out_dim, std::int64_t expanded, Rng& rng) {
  PatchExpandParams<T> p;
  p.expand_w = store.add(prefix + ".expand.weight", init::truncated_normal<T>({in_dim, expanded}, 0.02, rng));
  p.norm_w = store.add(prefix + ".norm.weight", init::constant<T>({out_dim}, 1));
  p.norm_b = store.add(prefix + ".norm.bias", init::constant<T>({out_dim}, 0));
  return p;
}

template <typename T>
PatchMergeParams<T> make_merge_params(ParamStore<T>& store, const std::string& prefix, std::int64_t dim, Rng& rng) {
  PatchMergeParams<T> p;
  p.norm_w = store.add(prefix + ".norm.weight", init::constant<T>({4 * dim}, 1));
  p.norm_b = store.add(prefix + ".norm.bias", init::constant<T>({4 * dim}, 0));
  p.reduction_w = store.add(prefix + ".reduction.weight", init::truncated_normal<T>({4 * dim, 2 * dim}, 0.02, rng));
  return p;
}

template <typename T>
class SwinUNet final : public SegNetwork<T> {
 public:
  SwinUNet(AttentionConfig cfg, int num_classes, Rng& rng) : cfg_(std::move(cfg)), classes_(num_classes) {
    cfg_.validate();
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
    auto& st = this->params_;
    const int S = cfg_.stages();
    const std::int64_t E = cfg_.embed_dim, p = cfg_.patch_size;
    embed_.proj_w = st.add("patch_embed.proj.weight",
                           init::fan_in_normal<T>({E, cfg_.in_channels(), p, p}, cfg_.in_channels() * p * p, rng));
    embed_.proj_b = st.add("patch_embed.proj.bias", init::constant<T>({E}, 0));
    embed_.norm_w = st.add("patch_embed.norm.weight", init::constant<T>({E}, 1));
    embed_.norm_b = st.add("patch_embed.norm.bias", init::constant<T>({E}, 0));

    for (int s = 0; s < S; ++s) {
      encoder_.push_back(make_stage(st, "layers." + std::to_string(s), s, rng));
      if (s + 1 < S) merges_.push_back(make_merge_params(st, "layers." + std::to_string(s) + ".downsample",
                                                         cfg_.stage_dim(s), rng));
    }
    const std::int64_t Db = cfg_.stage_dim(S - 1);
    norm_w_ = st.add("norm.weight", init::constant<T>({Db}, 1));
    norm_b_ = st.add("norm.bias", init::constant<T>({Db}, 0));

    // Decoder stage u (1..S-1) works at encoder stage S-1-u.
    if (S > 1) expands_.push_back(make_expand_params(st, "layers_up.0", Db, Db / 2, 2 * Db, rng));
    for (int u = 1; u < S; ++u) {
      const int s = S - 1 - u;
      const std::int64_t D = cfg_.stage_dim(s);
      const auto pre = "concat_back_dim." + std::to_string(u);
      concat_w_.push_back(st.add(pre + ".weight", init::truncated_normal<T>({2 * D, D}, 0.02, rng)));
      concat_b_.push_back(st.add(pre + ".bias", init::constant<T>({D}, 0)));
      decoder_.push_back(make_stage(st, "layers_up." + std::to_string(u), s, rng));
      if (u + 1 < S)
        expands_.push_back(
            make_expand_params(st, "layers_up." + std::to_string(u) + ".upsample", D, D / 2, 2 * D, rng));
    }
    norm_up_w_ = st.add("norm_up.weight", init::constant<T>({E}, 1));
    norm_up_b_ = st.add("norm_up.bias", init::constant<T>({E}, 0));
    final_ = make_expand_params(st, "up", E, E, p * p * E, rng);
    out_w_ = st.add("output.weight", init::fan_in_normal<T>({E, num_classes}, E, rng));
  }

  Arch arch() const override { return Arch::ViT; }
  int num_classes() const override { return classes_; }
  const AttentionConfig& config() const { return cfg_; }

  void check_input(std::int64_t height, std::int64_t width) const override {
    const std::int64_t factor = std::int64_t{cfg_.patch_size} << (cfg_.stages() - 1);
    auto fail = [&](const std::string& why) {
      throw DimensionError("ViT input " + std::to_string(height) + "x" + std::to_string(width) + " incompatible: " +
                           why + " (sides must be divisible by patch*2^(stages-1) = " + std::to_string(factor) +
                           " and every stage grid by its window)");
    };
    if (height % factor || width % factor) fail("side not divisible by " + std::to_string(factor));
    for (int s = 0; s < cfg_.stages(); ++s) {
      const auto gh = height / cfg_.patch_size >> s, gw = width / cfg_.patch_size >> s;
      const auto plan = window_plan(gh, gw, cfg_.window_size, true);
      if (gh % plan.window || gw % plan.window)
        fail("stage " + std::to_string(s) + " grid " + std::to_string(gh) + "x" + std::to_string(gw) +
             " not divisible by window " + std::to_string(plan.window));
    }
  }

  using SegNetwork<T>::forward;
  Var<T> forward(const Var<T>& images, Mode) override {
    const auto B = images.dim(0), H = images.dim(2), W = images.dim(3);
    if (images.dim(1) != 1) throw DimensionError("ViT expects single-channel input");
    check_input(H, W);
    auto img = images;
    if (cfg_.replicate_to_rgb) img = concat<T>({images, images, images}, 1);
    const int S = cfg_.stages();
    auto x = patch_embed(img, embed_, cfg_.patch_size);
    std::int64_t gh = H / cfg_.patch_size, gw = W / cfg_.patch_size;
    this->trace("embed", gh, gw, cfg_.embed_dim);

    std::vector<Var<T>> skips;
    for (int s = 0; s < S; ++s) {
      skips.push_back(x);
      x = run_stage(x, gh, gw, encoder_[s], s);
      this->trace("encoder" + std::to_string(s), gh, gw, cfg_.stage_dim(s));
      if (s + 1 < S) {
        x = patch_merge(x, gh, gw, merges_[s]);
        gh /= 2;
        gw /= 2;
      }
    }
    x = layer_norm(x, norm_w_, norm_b_);
    for (int u = 0; u < S; ++u) {
      if (u > 0) {
        const int s = S - 1 - u;
        x = linear(concat<T>({x, skips[s]}, -1), concat_w_[u - 1], &concat_b_[u - 1]);
        x = run_stage(x, gh, gw, decoder_[u - 1], s);
        this->trace("decoder" + std::to_string(u), gh, gw, cfg_.stage_dim(s));
      }
      if (u + 1 < S) {
        x = patch_expand(x, gh, gw, expands_[u], 2);
        gh *= 2;
        gw *= 2;
        if (u == 0) this->trace("expand0", gh, gw, cfg_.stage_dim(S - 2));
      }
    }
    x = layer_norm(x, norm_up_w_, norm_up_b_);
    x = patch_expand(x, gh, gw, final_, cfg_.patch_size);
    gh *= cfg_.patch_size;
    gw *= cfg_.patch_size;
    this->trace("final_expand", gh, gw, cfg_.embed_dim);
    auto logits = linear(x, out_w_);  // [B, H*W, K]
    auto out = permute(reshape(logits, Shape{B, gh, gw, classes_}), {0, 3, 1, 2});
    this->trace("logits", gh, gw, classes_);
    return out;
  }

 private:
  using Stage = std::vector<SwinBlockParams<T>>;

  Stage make_stage(ParamStore<T>& st, const std::string& prefix, int s, Rng& rng) {
    Stage blocks;
    for (int j = 0; j < cfg_.depth; ++j)
      blocks.push_back(SwinBlockParams<T>::create(st, prefix + ".blocks." + std::to_string(j), cfg_.stage_dim(s),
                                                  cfg_.window_size, cfg_.mlp_ratio, cfg_.num_heads[s],
                                                  cfg_.relative_position_bias, rng));
    return blocks;
  }

  Var<T> run_stage(Var<T> x, std::int64_t gh, std::int64_t gw, const Stage& blocks, int s) const {
    for (std::size_t j = 0; j < blocks.size(); ++j)
      x = swin_block(x, gh, gw, blocks[j], cfg_.num_heads[s], cfg_.window_size, j % 2 == 1);
    return x;
  }

  AttentionConfig cfg_;
  int classes_;
  PatchEmbedParams<T> embed_;
  std::vector<Stage> encoder_, decoder_;
  std::vector<PatchMergeParams<T>> merges_;
  std::vector<PatchExpandParams<T>> expands_;
  std::vector<Var<T>> concat_w_, concat_b_;
  Var<T> norm_w_, norm_b_, norm_up_w_, norm_up_b_, out_w_;
  PatchExpandParams<T> final_;
};

}  // namespace s4cv
