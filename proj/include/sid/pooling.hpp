#pragma once

#include <optional>
#include <string>

#include "sid/autodiff.hpp"
#include "sid/params.hpp"
#include "sid/rng.hpp"

namespace sid {

using ad::Var;

// ─── Pooling layer ───────────────────────────────────────────────────────────
// Collapses encoder output (N' x d) into one embedding. Temporal Gate
// Pooling derives a per-timestep sigmoid gate from a time-mixed filter path
// and sums the gated value vectors; the statistical and attentive variants
// mirror the usual speaker-embedding baselines.

enum class PoolingKind {
    kMean,
    kMeanStd,
    kMax,
    kRandom,
    kSelfAttention,
    kSelfAttentionMh,
    kTemporalGate,
    kTemporalGateMh,
};

// Canonical benchmark order (one row per method in the report).
inline constexpr PoolingKind kAllPoolingKinds[] = {
    PoolingKind::kMean,          PoolingKind::kMeanStd,
    PoolingKind::kMax,           PoolingKind::kRandom,
    PoolingKind::kSelfAttention, PoolingKind::kSelfAttentionMh,
    PoolingKind::kTemporalGate,  PoolingKind::kTemporalGateMh,
};

std::string to_string(PoolingKind kind);
PoolingKind parse_pooling_kind(const std::string& name);
bool pooling_is_multihead(PoolingKind kind);
bool pooling_has_params(PoolingKind kind);

// Multi-head variants default to d/64 heads (at least 2); single-head
// variants use 1.
int default_pool_heads(PoolingKind kind, int hidden_size);

// Embedding width produced for hidden size d (2d for mean-std).
int pooled_dim(PoolingKind kind, int hidden_size);

// Trainable scalars of the pooling layer (0 for statistical kinds).
long long pooling_param_count(PoolingKind kind, int hidden_size, int n_time,
                              int heads);

// Temporal Gate Pooling parameters.
//   F = H W_F + b_F, V = H W_V + b_V          pointwise paths
//   F'[t] = sum_s W_T[t,s] F[s] + b_T[t]      timewise mixing (b_T init 1)
//   per head: G = sigmoid(LayerNorm(F') W_G + b_G), E = sum_t V[t] * G[t]
// W_T is shared across heads; W_G, b_G and the layer-norm affine are
// per-head.
struct TgpParams {
    int heads = 1;
    Var w_f, b_f;    // d x d, 1 x d
    Var w_v, b_v;    // d x d, 1 x d
    Var w_t, b_t;    // N' x N', N' x 1
    Var ln_g, ln_b;  // heads x (d/heads)
    Var w_g;         // (d/heads) x heads, column per head
    Var b_g;         // 1 x heads

    TgpParams() = default;
    TgpParams(int hidden_size, int n_time, int heads, Rng& rng);
    ParamSet param_set();
};

struct SelfAttnPoolParams {
    int heads = 1;
    Var w;  // (d/heads) x heads, column per head

    SelfAttnPoolParams() = default;
    SelfAttnPoolParams(int hidden_size, int heads, Rng& rng);
    ParamSet param_set();
};

Var tgp_pool(Var h, const TgpParams& p);
Var self_attention_pool(Var h, const SelfAttnPoolParams& p);

Var mean_pool(Var h);
Var mean_std_pool(Var h);  // mean ++ population std, 1 x 2d
Var max_pool(Var h);
Var random_pool(Var h, Rng& rng);  // one rng-drawn row

// One pooling layer of any kind, holding whichever parameters it needs.
struct PoolingParams {
    PoolingKind kind = PoolingKind::kMean;
    int heads = 1;
    std::optional<TgpParams> tgp;
    std::optional<SelfAttnPoolParams> attn;

    PoolingParams() = default;
    PoolingParams(PoolingKind kind, int hidden_size, int n_time, int heads, Rng& rng);
    ParamSet param_set();
};

// Dispatch on kind; rng required only for random pooling.
Var pool(Var h, const PoolingParams& p, Rng* rng);

}  // namespace sid
