#pragma once

#include <string>
#include <vector>

#include "sid/autodiff.hpp"
#include "sid/params.hpp"
#include "sid/rng.hpp"

namespace sid {

using ad::Var;

// ─── Conformer encoder ───────────────────────────────────────────────────────
// Two-stage conv subsampling (4x in time) followed by a stack of Conformer
// layers: half-step FFN → relative-position MHSA → conv module → half-step
// FFN → layer norm.

struct EncoderConfig {
    int hidden_size = 64;
    int n_layers = 2;
    int n_heads = 1;      // d/64 for the named presets
    int ffn_hidden = 256; // 4d except where a preset pins another value
    int conv_kernel = 31;
    int n_mels = 80;
    double dropout_p = 0.1;

    // Subsampling conv channel count; the flattened (channels x ceil(n_mels/4))
    // map feeds a linear projection to hidden_size.
    int subsample_channels() const { return hidden_size / 4; }
    int head_dim() const { return hidden_size / n_heads; }

    void validate() const;
    // Named model presets: 256M, 512M, 768M, 256S, toy.
    static EncoderConfig preset(const std::string& name);
};

// Exact trainable-scalar count of subsampling plus all Conformer layers.
//
// Closed form, with d = hidden_size, F = ffn_hidden, K = conv_kernel,
// L = n_layers, c = d/4, f = ceil(ceil(n_mels/2)/2):
//   subsampling = 9c + c          (conv 1->c, 3x3, + bias)
//               + 9c^2 + c        (conv c->c, 3x3, + bias)
//               + c*f*d + d       (flatten projection + bias)
//   per layer   = 2*(2d + dF + F + Fd + d)   two FFNs with pre-norm
//               + 2d + 4(d^2+d) + d^2 + 2d   MHSA pre-norm, q/k/v/out,
//                                            position projection, u, v
//               + 2d + 2d^2+2d + Kd+d + 2d + d^2+d   conv module (pre-norm,
//                                            pointwise x2, depthwise, BN)
//               + 2d                          final layer norm
//               = 8d^2 + 4dF + 2F + (24+K)d
//   total = subsampling + L * per-layer
long long count_params(const EncoderConfig& cfg);

// Output length after the two stride-2 convs: ceil(ceil(n/2)/2).
int subsampled_length(int n_frames);

// Forward-pass context. Dropout fires only when training with p > 0 and an
// rng is supplied; batch-norm uses batch statistics only when training.
struct Ctx {
    bool training = false;
    Rng* rng = nullptr;
};

struct FeedForwardParams {
    Var ln_g, ln_b;
    Var w1, b1;  // d x F, 1 x F
    Var w2, b2;  // F x d, 1 x d
};

struct AttentionParams {
    Var ln_g, ln_b;
    Var wq, bq, wk, bk, wv, bv, wo, bo;  // d x d, 1 x d each
    Var w_pos;                           // d x d, no bias
    Var u, v;                            // h x d_head content/position biases
};

struct ConvModuleParams {
    Var ln_g, ln_b;
    Var pw1_w, pw1_b;  // d x 2d, 1 x 2d (GLU halves)
    Var dw_w, dw_b;    // K x d, 1 x d
    Var bn_g, bn_b;    // 1 x d
    ad::Mat bn_running_mean, bn_running_var;  // buffers, not trained
    Var pw2_w, pw2_b;  // d x d, 1 x d
};

struct ConformerLayerParams {
    FeedForwardParams ffn1, ffn2;
    AttentionParams attn;
    ConvModuleParams conv;
    Var final_ln_g, final_ln_b;
};

struct EncoderParams {
    Var conv1_w, conv1_b;  // (c, 9), (c, 1)
    Var conv2_w, conv2_b;  // (c, 9c), (c, 1)
    Var proj_w, proj_b;    // (c*f, d), (1, d)
    std::vector<ConformerLayerParams> layers;

    EncoderParams(const EncoderConfig& cfg, Rng& rng);
    ParamSet param_set();
};

// Sinusoidal relative-position table for sequence length n: (2n-1, d), row i
// holding the encoding of offset n-1-i.
ad::Mat rel_pos_encoding(int n, int d);

// frames: (N, n_mels) normalized log-mels. Output: (ceil(N/4), d).
Var subsample(Var frames, const EncoderParams& p, const EncoderConfig& cfg,
              const Ctx& ctx);

Var conformer_layer(Var h, ConformerLayerParams& p, const EncoderConfig& cfg,
                    const Ctx& ctx);

Var encode(Var frames, EncoderParams& p, const EncoderConfig& cfg, const Ctx& ctx);

}  // namespace sid
