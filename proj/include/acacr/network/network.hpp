#pragma once

// ACA-CRNet: stem conv+ReLU, 8 RB, RACAB, 3 RB, RACAB, 3 RB, refine conv,
// plus a long skip adding the input to the refined output.
//
//   RB:    y = x + a * relu(conv(relu(conv(x))))
//   RACAB: y = x + a * up2(attn(relu(conv(relu(conv_s2(x))))))

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "acacr/attention/attention.hpp"
#include "acacr/core/rng.hpp"
#include "acacr/tensor/init.hpp"
#include "acacr/tensor/ops.hpp"

namespace acacr {

/// Ablation arm: base replaces both RACABs by plain RBs, ca uses Contextual
/// Attention inside them, ac uses AC-Attention.
enum class NetworkVariant { base, ca, ac };

inline const char* to_string(NetworkVariant v) {
  switch (v) {
    case NetworkVariant::base: return "base";
    case NetworkVariant::ca: return "ca";
    case NetworkVariant::ac: return "ac";
  }
  return "?";
}

inline NetworkVariant parse_network_variant(const std::string& s) {
  if (s == "base") return NetworkVariant::base;
  if (s == "ca") return NetworkVariant::ca;
  if (s == "ac") return NetworkVariant::ac;
  throw ConfigError("unknown network variant '" + s + "' (expected base, ca or ac)");
}

enum class BlockKind { residual, attention };

// Blocks between stem and refine; layers 10 and 14 counting the stem as 1.
inline constexpr std::array<BlockKind, 16> kStagePlan = [] {
  std::array<BlockKind, 16> plan{};
  plan.fill(BlockKind::residual);
  plan[8] = BlockKind::attention;
  plan[12] = BlockKind::attention;
  return plan;
}();

inline constexpr std::size_t kLayerCount = kStagePlan.size() + 2;

struct NetworkConfig {
  std::size_t c_in = 3;
  std::size_t channels = 32;
  double alpha = 0.1;
  std::optional<double> attention_alpha;  // residual scale of the RACABs; defaults to alpha
  std::size_t patch_size = 2;
  NetworkVariant variant = NetworkVariant::ac;

  double racab_alpha() const { return attention_alpha.value_or(alpha); }

  bool has_attention() const { return variant != NetworkVariant::base; }

  AttentionConfig attention() const {
    return {variant == NetworkVariant::ca ? AttentionVariant::ca : AttentionVariant::ac, patch_size, channels};
  }

  // H and W must be multiples of this.
  std::size_t required_multiple() const { return has_attention() ? 2 * patch_size : 1; }

  BlockKind block_kind(std::size_t i) const {
    return has_attention() ? kStagePlan[i] : BlockKind::residual;
  }

  void validate() const {
    if (c_in < 1) throw ConfigError("network: c_in must be >= 1");
    if (channels < 4 || channels % 4 != 0) {
      throw ConfigError("network: channels must be a positive multiple of 4, got " + std::to_string(channels));
    }
    if (patch_size < 1) throw ConfigError("network: patch_size must be >= 1");
    if (!(alpha >= 0.0) || !(racab_alpha() >= 0.0)) throw ConfigError("network: alpha must be >= 0");
  }

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

template <class P>
struct BlockWeights {
  P conv1;  // [3, 3, C, C]; stride 2 in a RACAB
  P conv2;  // [3, 3, C, C]
  std::optional<AttentionWeights<P>> attention;
};

template <class P>
struct NetworkWeights {
  P stem;    // [3, 3, C_in, C]
  std::vector<BlockWeights<P>> blocks;
  P refine;  // [3, 3, C, C_in]

  template <class F>
  void for_each(F&& f) {
    visit(*this, f);
  }

  template <class F>
  void for_each(F&& f) const {
    visit(*this, f);
  }

  template <class Q, class F>
  NetworkWeights<Q> map(F&& f) const {
    NetworkWeights<Q> out{f(stem), {}, {}};
    for (const auto& b : blocks) {
      BlockWeights<Q> nb{f(b.conv1), f(b.conv2), std::nullopt};
      if (b.attention) nb.attention = b.attention->template map<Q>(f);
      out.blocks.push_back(std::move(nb));
    }
    out.refine = f(refine);
    return out;
  }

 private:
  // Visits parameters with stable dotted names in checkpoint order.
  template <class Self, class F>
  static void visit(Self& self, F& f) {
    f(std::string("stem"), self.stem);
    for (std::size_t i = 0; i < self.blocks.size(); ++i) {
      auto& b = self.blocks[i];
      const std::string prefix = "blocks." + std::to_string(i) + ".";
      f(prefix + "conv1", b.conv1);
      f(prefix + "conv2", b.conv2);
      if (b.attention) {
        b.attention->for_each([&](const char* name, auto& p) { f(prefix + "attention." + name, p); });
      }
    }
    f(std::string("refine"), self.refine);
  }
};

template <Real T>
using NetworkParams = NetworkWeights<Tensor<T>>;

template <Real T>
std::size_t parameter_count(const NetworkParams<T>& p) {
  std::size_t n = 0;
  p.for_each([&n](const std::string&, const Tensor<T>& t) { n += t.size(); });
  return n;
}

/// He-normal init with independent per-layer streams; the refine conv (and
/// the selection modules' output convs) start at zero, so a fresh network
/// is the identity map.
template <Real T>
NetworkParams<T> build_network(const NetworkConfig& cfg, const RngStream& rng) {
  cfg.validate();
  const std::size_t c = cfg.channels;
  NetworkParams<T> p;
  RngStream stem_rng = rng.split(0);
  p.stem = he_normal<T>({3, 3, cfg.c_in, c}, stem_rng);
  for (std::size_t i = 0; i < kStagePlan.size(); ++i) {
    RngStream r = rng.split(i + 1);
    BlockWeights<Tensor<T>> b{he_normal<T>({3, 3, c, c}, r), he_normal<T>({3, 3, c, c}, r), std::nullopt};
    if (cfg.block_kind(i) == BlockKind::attention) b.attention = init_attention<T>(cfg.attention(), r);
    p.blocks.push_back(std::move(b));
  }
  p.refine = Tensor<T>({3, 3, c, cfg.c_in});
  return p;
}

template <Real T>
NetworkWeights<Var<T>> bind(Tape<T>& tape, const NetworkParams<T>& p, bool trainable) {
  return p.template map<Var<T>>(
      [&](const Tensor<T>& t) { return trainable ? tape.variable(t) : tape.constant(t); });
}

/// Checks that parameter shapes agree with the config.
template <Real T>
void check_params(const NetworkParams<T>& p, const NetworkConfig& cfg) {
  const NetworkParams<T> ref = build_network<T>(cfg, RngStream(0));
  std::vector<std::pair<std::string, Shape>> want, got;
  ref.for_each([&](const std::string& n, const Tensor<T>& t) { want.emplace_back(n, t.shape()); });
  p.for_each([&](const std::string& n, const Tensor<T>& t) { got.emplace_back(n, t.shape()); });
  if (want != got) throw IncompatibleError("network parameters do not match the configuration");
}

template <Real T>
Var<T> residual_block(Var<T> x, Var<T> conv1, Var<T> conv2, T alpha) {
  if (x.shape().size() != 3 || x.shape()[2] != conv1.shape()[2]) {
    throw ShapeError("residual_block: input " + shape_string(x.shape()) + " does not match kernel " +
                     shape_string(conv1.shape()));
  }
  const Var<T> branch = relu(conv2d(relu(conv2d(x, conv1)), conv2));
  return add(x, scale(branch, alpha));
}

template <Real T>
Var<T> racab(Var<T> x, const BlockWeights<Var<T>>& w, T alpha, const AttentionConfig& attn,
             std::vector<AttentionResult<T>>* capture = nullptr) {
  const Shape& s = x.shape();
  if (s.size() != 3 || s[2] != w.conv1.shape()[2]) throw ShapeError("racab: input/kernel channel mismatch");
  if (s[0] % 2 != 0 || s[1] % 2 != 0 || (s[0] / 2) % attn.patch_size != 0 || (s[1] / 2) % attn.patch_size != 0) {
    throw ShapeError("racab: extents " + std::to_string(s[0]) + "x" + std::to_string(s[1]) + " must be multiples of " +
                     std::to_string(2 * attn.patch_size));
  }
  if (!w.attention) throw ConfigError("racab: block has no attention parameters");
  const Var<T> half = relu(conv2d(relu(conv2d(x, w.conv1, 2)), w.conv2));
  AttentionResult<T> a = attention_forward(half, *w.attention, attn);
  const Var<T> up = bilinear_upsample(a.output, 2);
  if (capture) capture->push_back(a);
  return add(x, scale(up, alpha));
}

inline void check_input_extents(const Shape& x, const NetworkConfig& cfg) {
  if (x.size() != 3) throw ShapeError("network input must be [H, W, C], got " + shape_string(x));
  if (x[2] != cfg.c_in) {
    throw IncompatibleError("network expects " + std::to_string(cfg.c_in) + " bands, input has " +
                            std::to_string(x[2]));
  }
  const std::size_t m = cfg.required_multiple();
  if (x[0] % m != 0 || x[1] % m != 0 || x[0] == 0 || x[1] == 0) {
    throw ShapeError("input extents " + std::to_string(x[0]) + "x" + std::to_string(x[1]) +
                     " must be positive multiples of " + std::to_string(m));
  }
}

/// Feature path up to (and including) the refine conv, without the long skip.
template <Real T>
Var<T> refine_features(Var<T> x, const NetworkWeights<Var<T>>& w, const NetworkConfig& cfg,
                       std::vector<AttentionResult<T>>* capture = nullptr) {
  check_input_extents(x.shape(), cfg);
  Var<T> h = relu(conv2d(x, w.stem));
  for (std::size_t i = 0; i < w.blocks.size(); ++i) {
    const auto& b = w.blocks[i];
    if (cfg.block_kind(i) == BlockKind::attention) {
      h = racab(h, b, static_cast<T>(cfg.racab_alpha()), cfg.attention(), capture);
    } else {
      h = residual_block(h, b.conv1, b.conv2, static_cast<T>(cfg.alpha));
    }
  }
  return conv2d(h, w.refine);
}

/// F_out = F_in + refine(F_16).
template <Real T>
Var<T> forward(Var<T> x, const NetworkWeights<Var<T>>& w, const NetworkConfig& cfg,
               std::vector<AttentionResult<T>>* capture = nullptr) {
  return add(x, refine_features(x, w, cfg, capture));
}

/// Inference on a plain tensor.
template <Real T>
Tensor<T> infer(const Tensor<T>& x, const NetworkParams<T>& p, const NetworkConfig& cfg) {
  Tape<T> tape;
  return forward(tape.constant(x), bind(tape, p, false), cfg).value();
}

}  // namespace acacr
