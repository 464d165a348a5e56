#pragma once

// Encoder -> L graph blocks -> decoder stack.
//
// Block rules, with Conv the configured graph convolution and sigma = ReLU
// (identity in linear_mode):
//   NoSkip / JK : H' = Conv(H)
//   Residual    : H' = H + Conv(H)
//   Initial     : H' = H0 + Conv(H)
//   Drive       : H' = H + alpha_l * Conv(H)
//   Drive + FFN : M = H + alpha_l * Conv(H);  H' = M + beta_l * FFN(M)
// Conv kinds:
//   GCN      sigma(P H W)
//   SGC      P H                      (no weight)
//   SageMean sigma(P_rw H W_nb + H W_self)
//   Dense    sigma(H W)               (no propagation; the FFN+Res control)
// FFN(M) = sigma(M W1 + b1) W2 + b2. Dropout, when active, is applied to the
// block input before Conv and to M before FFN.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "udgnn/autodiff.hpp"
#include "udgnn/graph.hpp"
#include "udgnn/rng.hpp"
#include "udgnn/tensor.hpp"

namespace udgnn {

enum class ConvKind { GCN, SGC, SageMean, Dense };
enum class SkipKind { NoSkip, Residual, Initial, JK, Drive };

inline std::string_view to_string(ConvKind k) {
  switch (k) {
    case ConvKind::GCN: return "gcn";
    case ConvKind::SGC: return "sgc";
    case ConvKind::SageMean: return "sage_mean";
    case ConvKind::Dense: return "dense";
  }
  return "?";
}

inline std::string_view to_string(SkipKind k) {
  switch (k) {
    case SkipKind::NoSkip: return "none";
    case SkipKind::Residual: return "residual";
    case SkipKind::Initial: return "initial";
    case SkipKind::JK: return "jk";
    case SkipKind::Drive: return "drive";
  }
  return "?";
}

inline ConvKind conv_kind_from_string(std::string_view s) {
  if (s == "gcn") return ConvKind::GCN;
  if (s == "sgc") return ConvKind::SGC;
  if (s == "sage_mean") return ConvKind::SageMean;
  if (s == "dense") return ConvKind::Dense;
  throw std::invalid_argument("unknown conv_kind '" + std::string(s) + "' (expected gcn, sgc, sage_mean, dense)");
}

inline SkipKind skip_kind_from_string(std::string_view s) {
  if (s == "none") return SkipKind::NoSkip;
  if (s == "residual") return SkipKind::Residual;
  if (s == "initial") return SkipKind::Initial;
  if (s == "jk") return SkipKind::JK;
  if (s == "drive") return SkipKind::Drive;
  throw std::invalid_argument("unknown skip_kind '" + std::string(s) +
                              "' (expected none, residual, initial, jk, drive)");
}

struct ModelSpec {
  ConvKind conv_kind = ConvKind::GCN;
  SkipKind skip_kind = SkipKind::Drive;
  bool with_ffn = true;
  std::size_t depth = 2;
  std::size_t hidden_dim = 64;
  double alpha_init = 0.0;
  double beta_init = 0.0;
  bool linear_mode = false;
  double dropout_rate = 0.0;
  PropagationKind propagation_kind = PropagationKind::SymNorm;

  bool operator==(const ModelSpec&) const = default;
};

inline void validate(const ModelSpec& s) {
  if (s.hidden_dim < 1) throw std::invalid_argument("ModelSpec.hidden_dim: must be at least 1");
  if (s.with_ffn && s.skip_kind != SkipKind::Drive)
    throw std::invalid_argument("ModelSpec.with_ffn: only valid with skip_kind=drive");
  if (!(s.dropout_rate >= 0.0 && s.dropout_rate < 1.0))
    throw std::invalid_argument("ModelSpec.dropout_rate: must lie in [0, 1)");
}

inline nlohmann::ordered_json to_json(const ModelSpec& s) {
  nlohmann::ordered_json j;
  j["conv_kind"] = to_string(s.conv_kind);
  j["skip_kind"] = to_string(s.skip_kind);
  j["with_ffn"] = s.with_ffn;
  j["depth"] = s.depth;
  j["hidden_dim"] = s.hidden_dim;
  j["alpha_init"] = s.alpha_init;
  j["beta_init"] = s.beta_init;
  j["linear_mode"] = s.linear_mode;
  j["dropout_rate"] = s.dropout_rate;
  j["propagation_kind"] = to_string(s.propagation_kind);
  return j;
}

/// Absent fields keep their defaults.
inline ModelSpec model_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("ModelSpec: expected a JSON object");
  ModelSpec s;
  try {
    if (j.contains("conv_kind")) s.conv_kind = conv_kind_from_string(j.at("conv_kind").get<std::string>());
    if (j.contains("skip_kind")) s.skip_kind = skip_kind_from_string(j.at("skip_kind").get<std::string>());
    if (j.contains("with_ffn")) s.with_ffn = j.at("with_ffn").get<bool>();
    if (j.contains("depth")) s.depth = j.at("depth").get<std::size_t>();
    if (j.contains("hidden_dim")) s.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    if (j.contains("alpha_init")) s.alpha_init = j.at("alpha_init").get<double>();
    if (j.contains("beta_init")) s.beta_init = j.at("beta_init").get<double>();
    if (j.contains("linear_mode")) s.linear_mode = j.at("linear_mode").get<bool>();
    if (j.contains("dropout_rate")) s.dropout_rate = j.at("dropout_rate").get<double>();
    if (j.contains("propagation_kind"))
      s.propagation_kind = propagation_kind_from_string(j.at("propagation_kind").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("ModelSpec: ") + e.what());
  }
  validate(s);
  return s;
}

/// The propagation operators a forward pass needs.
struct GraphOperators {
  PropagationMatrix p;
  PropagationMatrix p_rw;  // row-normalized, used by SageMean
};

inline GraphOperators make_operators(const SparseGraph& g, PropagationKind kind) {
  return {build_propagation(g, kind), build_propagation(g, PropagationKind::RowNorm)};
}

/// Column concatenation [H^1 | ... | H^L].
inline Tensor jk_readout(std::span<const Tensor> layers) {
  if (layers.empty()) throw std::invalid_argument("jk_readout: needs at least one layer");
  const std::size_t rows = layers[0].rows();
  std::size_t cols = 0;
  for (const auto& h : layers) {
    if (h.rows() != rows) throw std::invalid_argument("jk_readout: row counts differ");
    cols += h.cols();
  }
  Tensor out(rows, cols);
  std::size_t off = 0;
  for (const auto& h : layers) {
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < h.cols(); ++j) out(i, off + j) = h(i, j);
    off += h.cols();
  }
  return out;
}

struct ForwardOptions {
  bool training = false;
  double dropout_rate = 0.0;
  Rng* rng = nullptr;  // required when training with dropout > 0
};

/// Tape handles of one forward pass.
struct ForwardResult {
  Var logits;
  std::vector<Var> hidden;    // H^0 .. H^L
  std::vector<Var> conv_in;   // per layer: input fed to Conv (post-dropout)
  std::vector<Var> conv_out;  // per layer: Conv output before any gate
};

class UdgnnModel {
 public:
  static constexpr std::ptrdiff_t kAbsent = -1;

  struct LayerSlots {
    std::ptrdiff_t w = kAbsent;       // GCN/Dense W, SageMean W_nb
    std::ptrdiff_t w_self = kAbsent;  // SageMean only
    std::ptrdiff_t alpha = kAbsent;
    std::ptrdiff_t beta = kAbsent;
    std::ptrdiff_t ffn_w1 = kAbsent, ffn_b1 = kAbsent, ffn_w2 = kAbsent, ffn_b2 = kAbsent;
  };

  UdgnnModel() = default;

  /// Glorot-uniform weights, zero biases, gates at alpha_init / beta_init.
  /// Encoder, decoder and every layer draw from their own child stream of
  /// Rng(seed), so the encoder/decoder weights do not depend on depth (the
  /// decoder does depend on its input width, which JK widens).
  UdgnnModel(const ModelSpec& spec, std::size_t in_dim, std::size_t n_classes, std::uint64_t seed)
      : spec_(spec), in_dim_(in_dim), n_classes_(n_classes) {
    validate(spec_);
    const std::size_t h = spec_.hidden_dim;
    const Rng root(seed);
    Rng enc_rng = root.split(1);
    Rng dec_rng = root.split(2);
    enc_w_ = add("encoder.W", glorot_uniform(in_dim, h, enc_rng));
    enc_b_ = add("encoder.b", Tensor(1, h), true);
    layers_.resize(spec_.depth);
    for (std::size_t l = 0; l < spec_.depth; ++l) {
      Rng r = root.split(100 + l);
      LayerSlots& s = layers_[l];
      const std::string pre = "layer" + std::to_string(l + 1) + ".";
      switch (spec_.conv_kind) {
        case ConvKind::GCN:
        case ConvKind::Dense:
          s.w = add(pre + "W", glorot_uniform(h, h, r));
          break;
        case ConvKind::SageMean:
          s.w = add(pre + "W_nb", glorot_uniform(h, h, r));
          s.w_self = add(pre + "W_self", glorot_uniform(h, h, r));
          break;
        case ConvKind::SGC:
          break;
      }
      if (spec_.skip_kind == SkipKind::Drive) s.alpha = add(pre + "alpha", Tensor::scalar(spec_.alpha_init), true);
      if (spec_.with_ffn) {
        s.ffn_w1 = add(pre + "ffn.W1", glorot_uniform(h, h, r));
        s.ffn_b1 = add(pre + "ffn.b1", Tensor(1, h), true);
        s.ffn_w2 = add(pre + "ffn.W2", glorot_uniform(h, h, r));
        s.ffn_b2 = add(pre + "ffn.b2", Tensor(1, h), true);
        s.beta = add(pre + "beta", Tensor::scalar(spec_.beta_init), true);
      }
    }
    const std::size_t dec_in = spec_.skip_kind == SkipKind::JK && spec_.depth > 0 ? h * spec_.depth : h;
    dec_w_ = add("decoder.W", glorot_uniform(dec_in, n_classes, dec_rng));
    dec_b_ = add("decoder.b", Tensor(1, n_classes), true);
  }

  const ModelSpec& spec() const { return spec_; }
  std::size_t in_dim() const { return in_dim_; }
  std::size_t n_classes() const { return n_classes_; }
  std::size_t depth() const { return spec_.depth; }

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  Parameter& encoder_weight() { return params_[static_cast<std::size_t>(enc_w_)]; }
  Parameter& encoder_bias() { return params_[static_cast<std::size_t>(enc_b_)]; }
  Parameter& decoder_weight() { return params_[static_cast<std::size_t>(dec_w_)]; }
  Parameter& decoder_bias() { return params_[static_cast<std::size_t>(dec_b_)]; }

  const LayerSlots& slots(std::size_t l) const { return layers_.at(l); }

  /// Layer l is zero-based here (block l maps H^l to H^{l+1}).
  Parameter* conv_weight(std::size_t l) { return slot(layers_.at(l).w); }
  const Parameter* conv_weight(std::size_t l) const { return slot(layers_.at(l).w); }
  Parameter* alpha(std::size_t l) { return slot(layers_.at(l).alpha); }
  const Parameter* alpha(std::size_t l) const { return slot(layers_.at(l).alpha); }
  Parameter* beta(std::size_t l) { return slot(layers_.at(l).beta); }
  const Parameter* beta(std::size_t l) const { return slot(layers_.at(l).beta); }
  Parameter* ffn_w1(std::size_t l) { return slot(layers_.at(l).ffn_w1); }
  const Parameter* ffn_w1(std::size_t l) const { return slot(layers_.at(l).ffn_w1); }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  std::vector<Tensor> snapshot() const {
    std::vector<Tensor> v;
    v.reserve(params_.size());
    for (const auto& p : params_) v.push_back(p.value);
    return v;
  }
  void restore(const std::vector<Tensor>& values) {
    if (values.size() != params_.size()) throw std::invalid_argument("restore: parameter count mismatch");
    for (std::size_t i = 0; i < values.size(); ++i) {
      Tensor::require_same_shape(params_[i].value, values[i], "restore");
      params_[i].value = values[i];
    }
  }

  /// One block: H^{l} -> H^{l+1}. `h0` is required for Initial connections.
  Var block_forward(Tape& t, std::size_t l, Var h, std::optional<Var> h0, const GraphOperators& ops,
                    const ForwardOptions& opt, ForwardResult* trace = nullptr) {
    if (spec_.skip_kind == SkipKind::Initial && !h0)
      throw std::invalid_argument("block_forward: initial connection needs H^0");
    const LayerSlots& s = layers_.at(l);
    Rng dummy;
    Rng& rng = opt.rng ? *opt.rng : dummy;
    if (opt.training && opt.dropout_rate > 0.0 && !opt.rng)
      throw std::invalid_argument("block_forward: dropout in training mode needs an Rng");

    const Var x = t.dropout(h, opt.dropout_rate, opt.training, rng);
    Var c;
    switch (spec_.conv_kind) {
      case ConvKind::GCN:
        c = act(t, t.matmul(t.spmm_const(ops.p, x), t.param(at(s.w))));
        break;
      case ConvKind::SGC:
        c = t.spmm_const(ops.p, x);
        break;
      case ConvKind::SageMean:
        c = act(t, t.add(t.matmul(t.spmm_const(ops.p_rw, x), t.param(at(s.w))), t.matmul(x, t.param(at(s.w_self)))));
        break;
      case ConvKind::Dense:
        c = act(t, t.matmul(x, t.param(at(s.w))));
        break;
    }
    if (trace) {
      trace->conv_in.push_back(x);
      trace->conv_out.push_back(c);
    }

    switch (spec_.skip_kind) {
      case SkipKind::NoSkip:
      case SkipKind::JK:
        return c;
      case SkipKind::Residual:
        return t.add(h, c);
      case SkipKind::Initial:
        return t.add(*h0, c);
      case SkipKind::Drive:
        break;
    }
    const Var m = t.add(h, t.scale_by_param(t.param(at(s.alpha)), c));
    if (!spec_.with_ffn) return m;
    const Var y = t.dropout(m, opt.dropout_rate, opt.training, rng);
    const Var hidden = act(t, t.add_bias(t.matmul(y, t.param(at(s.ffn_w1))), t.param(at(s.ffn_b1))));
    const Var f = t.add_bias(t.matmul(hidden, t.param(at(s.ffn_w2))), t.param(at(s.ffn_b2)));
    return t.add(m, t.scale_by_param(t.param(at(s.beta)), f));
  }

  /// H^0 = X W_enc + b_enc; L blocks; logits = readout W_dec + b_dec.
  ForwardResult forward(Tape& t, const GraphOperators& ops, const Tensor& features, const ForwardOptions& opt = {}) {
    if (features.cols() != in_dim_)
      throw std::invalid_argument("forward: features have " + std::to_string(features.cols()) +
                                  " columns, encoder expects " + std::to_string(in_dim_));
    if (ops.p.n_rows() != features.rows())
      throw std::invalid_argument("forward: operator size does not match node count");
    ForwardResult r;
    const Var x = t.constant(features);
    const Var h0 = t.add_bias(t.matmul(x, t.param(encoder_weight())), t.param(encoder_bias()));
    r.hidden.push_back(h0);
    Var h = h0;
    for (std::size_t l = 0; l < spec_.depth; ++l) {
      h = block_forward(t, l, h, h0, ops, opt, &r);
      r.hidden.push_back(h);
    }
    Var readout = h;
    if (spec_.skip_kind == SkipKind::JK && spec_.depth > 0) {
      std::vector<Var> parts(r.hidden.begin() + 1, r.hidden.end());
      readout = t.concat_cols(parts);
    }
    r.logits = t.add_bias(t.matmul(readout, t.param(decoder_weight())), t.param(decoder_bias()));
    return r;
  }

  /// Logits without keeping a tape around.
  Tensor predict(const GraphOperators& ops, const Tensor& features) {
    Tape t;
    return t.value(forward(t, ops, features).logits);
  }

 private:
  std::ptrdiff_t add(std::string name, Tensor v, bool exempt = false) {
    params_.emplace_back(std::move(name), std::move(v), exempt);
    return static_cast<std::ptrdiff_t>(params_.size() - 1);
  }
  Parameter& at(std::ptrdiff_t i) { return params_[static_cast<std::size_t>(i)]; }
  Parameter* slot(std::ptrdiff_t i) { return i == kAbsent ? nullptr : &params_[static_cast<std::size_t>(i)]; }
  const Parameter* slot(std::ptrdiff_t i) const {
    return i == kAbsent ? nullptr : &params_[static_cast<std::size_t>(i)];
  }
  Var act(Tape& t, Var v) const { return spec_.linear_mode ? v : t.relu(v); }

  ModelSpec spec_;
  std::size_t in_dim_ = 0;
  std::size_t n_classes_ = 0;
  std::vector<Parameter> params_;
  std::vector<LayerSlots> layers_;
  std::ptrdiff_t enc_w_ = kAbsent, enc_b_ = kAbsent, dec_w_ = kAbsent, dec_b_ = kAbsent;
};

}  // namespace udgnn
