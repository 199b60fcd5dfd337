#pragma once

// Vanilla token attention, patch-based Contextual Attention (CA) and
// Attentive Contextual Attention (AC-Attention).
//
// AC-Attention pipeline on a feature map F [H, W, C]:
//   Q, K, V   = 1x1 convs of F
//   Q_p, K_p, V_p = non-overlapping s x s patches, flattened to d = s*s*C
//   S_p       = softmax(Q_p K_p^T / sqrt(d))            (row-wise)
//   W_sel     = 1 + pool_s(conv(relu(conv(Q))))          one scalar per query patch
//   B_sel     =     pool_s(conv(relu(conv(Q))))
//   S_att     = relu((S_p - rowmean(S_p)) * W_sel + B_sel)
//   O         = conv3x3(unpatchify(S_att V_p))
// CA skips the selection step and attends with S_p directly.

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>

#include "acacr/core/rng.hpp"
#include "acacr/tensor/init.hpp"
#include "acacr/tensor/ops.hpp"

namespace acacr {

enum class AttentionVariant { vanilla, ca, ac };

inline const char* to_string(AttentionVariant v) {
  switch (v) {
    case AttentionVariant::vanilla: return "vanilla";
    case AttentionVariant::ca: return "ca";
    case AttentionVariant::ac: return "ac";
  }
  return "?";
}

inline AttentionVariant parse_attention_variant(const std::string& s) {
  if (s == "vanilla") return AttentionVariant::vanilla;
  if (s == "ca") return AttentionVariant::ca;
  if (s == "ac") return AttentionVariant::ac;
  throw ConfigError("unknown attention variant '" + s + "' (expected vanilla, ca or ac)");
}

struct AttentionConfig {
  AttentionVariant variant = AttentionVariant::ac;
  std::size_t patch_size = 2;
  std::size_t channels = 32;

  std::size_t selection_hidden() const { return channels / 4; }

  void validate() const {
    if (patch_size < 1) throw ConfigError("attention: patch size must be >= 1");
    if (channels < 1) throw ConfigError("attention: channels must be >= 1");
    if (variant == AttentionVariant::ac && channels % 4 != 0) {
      throw ConfigError("attention: AC-Attention needs channels divisible by 4, got " + std::to_string(channels));
    }
  }
};

/// Two 1x1 convolutions with a ReLU between them: C -> C/4 -> 1.
template <class P>
struct SelectionModule {
  P hidden;
  P out;
};

/// The weight and bias modules of the learnable selection mechanism.
template <class P>
struct Selection {
  SelectionModule<P> weight;
  SelectionModule<P> bias;
};

/// Attention parameters, generic over storage: Tensor<T> at rest, Var<T>
/// once bound to a tape.
template <class P>
struct AttentionWeights {
  P query;   // [1, 1, C, C]
  P key;     // [1, 1, C, C]
  P value;   // [1, 1, C, C]
  P output;  // [3, 3, C, C]
  std::optional<Selection<P>> selection;  // present for AC-Attention only

  template <class F>
  void for_each(F&& f) {
    visit(*this, f);
  }

  template <class F>
  void for_each(F&& f) const {
    visit(*this, f);
  }

  template <class Q, class F>
  AttentionWeights<Q> map(F&& f) const {
    AttentionWeights<Q> out{f(query), f(key), f(value), f(output), std::nullopt};
    if (selection) {
      out.selection = Selection<Q>{{f(selection->weight.hidden), f(selection->weight.out)},
                                   {f(selection->bias.hidden), f(selection->bias.out)}};
    }
    return out;
  }

 private:
  template <class Self, class F>
  static void visit(Self& self, F& f) {
    f("query", self.query);
    f("key", self.key);
    f("value", self.value);
    f("output", self.output);
    if (self.selection) {
      f("weight_hidden", self.selection->weight.hidden);
      f("weight_out", self.selection->weight.out);
      f("bias_hidden", self.selection->bias.hidden);
      f("bias_out", self.selection->bias.out);
    }
  }
};

template <Real T>
using AttentionParams = AttentionWeights<Tensor<T>>;

/// Fresh parameters: He-normal everywhere except the selection modules'
/// final convolutions, which start at zero so that W_sel = 1 and B_sel = 0.
template <Real T>
AttentionParams<T> init_attention(const AttentionConfig& cfg, RngStream& rng) {
  cfg.validate();
  const std::size_t c = cfg.channels;
  AttentionParams<T> p;
  p.query = he_normal<T>({1, 1, c, c}, rng);
  p.key = he_normal<T>({1, 1, c, c}, rng);
  p.value = he_normal<T>({1, 1, c, c}, rng);
  p.output = he_normal<T>({3, 3, c, c}, rng);
  if (cfg.variant == AttentionVariant::ac) {
    const std::size_t h = cfg.selection_hidden();
    Selection<Tensor<T>> sel;
    sel.weight.hidden = he_normal<T>({1, 1, c, h}, rng);
    sel.weight.out = Tensor<T>({1, 1, h, 1});
    sel.bias.hidden = he_normal<T>({1, 1, c, h}, rng);
    sel.bias.out = Tensor<T>({1, 1, h, 1});
    p.selection = std::move(sel);
  }
  return p;
}

template <Real T>
AttentionWeights<Var<T>> bind(Tape<T>& tape, const AttentionParams<T>& p, bool trainable) {
  return p.template map<Var<T>>(
      [&](const Tensor<T>& t) { return trainable ? tape.variable(t) : tape.constant(t); });
}

/// Replaces the learned W_sel / B_sel by constants. Used to reduce AC to CA
/// (W_sel = 1, B_sel = 1/N_p) and to probe the pruning behaviour.
struct SelectionOverride {
  std::optional<double> weight;
  std::optional<double> bias;
};

template <Real T>
struct QKV {
  Var<T> q, k, v;
};

template <Real T>
struct AttentionResult {
  Var<T> output;
  std::optional<Var<T>> similarity;  // S for vanilla, S_p for patch variants
  std::optional<Var<T>> attentive;   // S_att, AC only
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
};

namespace detail {

inline void require_channels(const Shape& f, std::size_t c, const char* op) {
  if (f.size() != 3) throw ShapeError(std::string(op) + ": feature map must be [H, W, C], got " + shape_string(f));
  if (f[2] != c) {
    throw ShapeError(std::string(op) + ": feature has " + std::to_string(f[2]) + " channels, parameters expect " +
                     std::to_string(c));
  }
}

}  // namespace detail

template <Real T>
QKV<T> embed_qkv(Var<T> f, const AttentionWeights<Var<T>>& w) {
  detail::require_channels(f.shape(), w.query.shape()[2], "embed_qkv");
  return {conv2d(f, w.query), conv2d(f, w.key), conv2d(f, w.value)};
}

/// Token attention over all N = H*W positions, scaled by sqrt(C).
template <Real T>
AttentionResult<T> vanilla_attention(Var<T> f, const AttentionWeights<Var<T>>& w) {
  const auto [q, k, v] = embed_qkv(f, w);
  const Shape shape = f.shape();
  const std::size_t n = shape[0] * shape[1], c = shape[2];
  const Var<T> qm = reshape(q, {n, c});
  const Var<T> km = reshape(k, {n, c});
  const Var<T> vm = reshape(v, {n, c});
  const Var<T> s = softmax_rows(scale(matmul_nt(qm, km), T(1) / std::sqrt(static_cast<T>(c))));
  const Var<T> o = reshape(matmul(s, vm), shape);
  return {o, s, std::nullopt, shape[0], shape[1]};
}

/// S_p = softmax(Q_p K_p^T / sqrt(d)).
template <Real T>
Var<T> patch_similarity(Var<T> q_p, Var<T> k_p) {
  if (q_p.shape().size() != 2 || k_p.shape().size() != 2 || q_p.shape()[1] != k_p.shape()[1]) {
    throw ShapeError("patch_similarity: patch length mismatch " + shape_string(q_p.shape()) + " vs " +
                     shape_string(k_p.shape()));
  }
  const T d = static_cast<T>(q_p.shape()[1]);
  return softmax_rows(scale(matmul_nt(q_p, k_p), T(1) / std::sqrt(d)));
}

template <Real T>
Var<T> selection_branch(Var<T> q, const SelectionModule<Var<T>>& m, std::size_t patch) {
  const Var<T> map = conv2d(relu(conv2d(q, m.hidden)), m.out);  // [H, W, 1]
  return reduce_mean(patchify(map, patch), 1);                    // [N_p, 1]
}

/// Per-query-patch (W_sel, B_sel), each [N_p, 1]. W_sel carries the +1 offset.
template <Real T>
std::pair<Var<T>, Var<T>> selection_params(Var<T> q, const Selection<Var<T>>& sel, std::size_t patch) {
  detail::require_channels(q.shape(), sel.weight.hidden.shape()[2], "selection_params");
  return {add_scalar(selection_branch(q, sel.weight, patch), T(1)), selection_branch(q, sel.bias, patch)};
}

/// S_p minus its row means; rows of the result sum to zero.
template <Real T>
Var<T> adjust_similarity(Var<T> s_p) {
  const std::size_t n = s_p.shape()[1];
  return sub(s_p, expand(reduce_mean(s_p, 1), 1, n));
}

/// S_att[i, j] = relu(S_ad[i, j] * W_sel[i] + B_sel[i]); rows are not renormalised.
template <Real T>
Var<T> attentive_transform(Var<T> s_ad, Var<T> w_sel, Var<T> b_sel) {
  const std::size_t rows = s_ad.shape()[0], n = s_ad.shape()[1];
  if (w_sel.shape() != Shape{rows, 1} || b_sel.shape() != Shape{rows, 1}) {
    throw ShapeError("attentive_transform: W_sel/B_sel must be [" + std::to_string(rows) + "x1]");
  }
  return relu(add(mul(s_ad, expand(w_sel, 1, n)), expand(b_sel, 1, n)));
}

template <Real T>
Var<T> attend_patches(Var<T> s, Var<T> v_p) {
  return matmul(s, v_p);
}

namespace detail {

template <Real T>
void require_patch_grid(const Shape& f, std::size_t s, const char* op) {
  if (s < 1 || f[0] % s != 0 || f[1] % s != 0) {
    throw ShapeError(std::string(op) + ": patch size " + std::to_string(s) + " must divide the feature map " +
                     std::to_string(f[0]) + "x" + std::to_string(f[1]));
  }
}

template <Real T>
AttentionResult<T> patch_attention(Var<T> f, const AttentionWeights<Var<T>>& w, const AttentionConfig& cfg,
                                   bool selective, const SelectionOverride& over) {
  const Shape shape = f.shape();
  detail::require_channels(shape, w.query.shape()[2], selective ? "ac_attention" : "ca_attention");
  require_patch_grid<T>(shape, cfg.patch_size, selective ? "ac_attention" : "ca_attention");
  const std::size_t s = cfg.patch_size;
  const auto [q, k, v] = embed_qkv(f, w);
  const Var<T> q_p = patchify(q, s);
  const Var<T> k_p = patchify(k, s);
  const Var<T> v_p = patchify(v, s);
  const Var<T> s_p = patch_similarity(q_p, k_p);

  AttentionResult<T> r;
  r.similarity = s_p;
  r.grid_h = shape[0] / s;
  r.grid_w = shape[1] / s;
  Var<T> scores = s_p;
  if (selective) {
    const std::size_t n_p = s_p.shape()[0];
    std::optional<std::pair<Var<T>, Var<T>>> learned;
    if (!over.weight || !over.bias) {
      if (!w.selection) throw ConfigError("ac_attention: parameters have no selection modules");
      learned = selection_params(q, *w.selection, s);
    }
    Tape<T>& tape = *f.tape;
    const Var<T> w_sel = over.weight ? tape.constant(Tensor<T>({n_p, 1}, static_cast<T>(*over.weight))) : learned->first;
    const Var<T> b_sel = over.bias ? tape.constant(Tensor<T>({n_p, 1}, static_cast<T>(*over.bias))) : learned->second;
    scores = attentive_transform(adjust_similarity(s_p), w_sel, b_sel);
    r.attentive = scores;
  }
  const Var<T> o = unpatchify(attend_patches(scores, v_p), shape, s);
  r.output = conv2d(o, w.output);
  return r;
}

}  // namespace detail

template <Real T>
AttentionResult<T> ac_attention_forward(Var<T> f, const AttentionWeights<Var<T>>& w, const AttentionConfig& cfg,
                                        const SelectionOverride& over = {}) {
  return detail::patch_attention(f, w, cfg, true, over);
}

template <Real T>
AttentionResult<T> ca_attention_forward(Var<T> f, const AttentionWeights<Var<T>>& w, const AttentionConfig& cfg) {
  return detail::patch_attention(f, w, cfg, false, {});
}

template <Real T>
AttentionResult<T> attention_forward(Var<T> f, const AttentionWeights<Var<T>>& w, const AttentionConfig& cfg) {
  switch (cfg.variant) {
    case AttentionVariant::vanilla: return vanilla_attention(f, w);
    case AttentionVariant::ca: return ca_attention_forward(f, w, cfg);
    case AttentionVariant::ac: return ac_attention_forward(f, w, cfg);
  }
  throw ConfigError("attention: unknown variant");
}

}  // namespace acacr
