#include "sid/encoder.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace sid {

using ad::Mat;

namespace {

Mat xavier_uniform(long rows, long cols, double fan_in, double fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    Mat m(rows, cols);
    for (long r = 0; r < rows; ++r)
        for (long c = 0; c < cols; ++c) m(r, c) = rng.uniform(-bound, bound);
    return m;
}

Var zeros_param(long rows, long cols) { return ad::parameter(Mat::Zero(rows, cols)); }
Var ones_param(long rows, long cols) { return ad::parameter(Mat::Ones(rows, cols)); }

Var maybe_dropout(Var x, const EncoderConfig& cfg, const Ctx& ctx) {
    if (ctx.training && cfg.dropout_p > 0.0 && ctx.rng)
        return ad::dropout(x, cfg.dropout_p, *ctx.rng);
    return x;
}

FeedForwardParams make_ffn(int d, int f, Rng& rng) {
    FeedForwardParams p;
    p.ln_g = ones_param(1, d);
    p.ln_b = zeros_param(1, d);
    p.w1 = ad::parameter(xavier_uniform(d, f, d, f, rng));
    p.b1 = zeros_param(1, f);
    p.w2 = ad::parameter(xavier_uniform(f, d, f, d, rng));
    p.b2 = zeros_param(1, d);
    return p;
}

AttentionParams make_attn(const EncoderConfig& cfg, Rng& rng) {
    const int d = cfg.hidden_size;
    const int dk = cfg.head_dim();
    AttentionParams p;
    p.ln_g = ones_param(1, d);
    p.ln_b = zeros_param(1, d);
    p.wq = ad::parameter(xavier_uniform(d, d, d, d, rng));
    p.bq = zeros_param(1, d);
    p.wk = ad::parameter(xavier_uniform(d, d, d, d, rng));
    p.bk = zeros_param(1, d);
    p.wv = ad::parameter(xavier_uniform(d, d, d, d, rng));
    p.bv = zeros_param(1, d);
    p.wo = ad::parameter(xavier_uniform(d, d, d, d, rng));
    p.bo = zeros_param(1, d);
    p.w_pos = ad::parameter(xavier_uniform(d, d, d, d, rng));
    p.u = ad::parameter(xavier_uniform(cfg.n_heads, dk, dk, dk, rng));
    p.v = ad::parameter(xavier_uniform(cfg.n_heads, dk, dk, dk, rng));
    return p;
}

ConvModuleParams make_conv(const EncoderConfig& cfg, Rng& rng) {
    const int d = cfg.hidden_size;
    const int k = cfg.conv_kernel;
    ConvModuleParams p;
    p.ln_g = ones_param(1, d);
    p.ln_b = zeros_param(1, d);
    p.pw1_w = ad::parameter(xavier_uniform(d, 2 * d, d, 2 * d, rng));
    p.pw1_b = zeros_param(1, 2 * d);
    p.dw_w = ad::parameter(xavier_uniform(k, d, k, k, rng));
    p.dw_b = zeros_param(1, d);
    p.bn_g = ones_param(1, d);
    p.bn_b = zeros_param(1, d);
    p.bn_running_mean = Mat::Zero(1, d);
    p.bn_running_var = Mat::Ones(1, d);
    p.pw2_w = ad::parameter(xavier_uniform(d, d, d, d, rng));
    p.pw2_b = zeros_param(1, d);
    return p;
}

void collect_ffn(const std::string& prefix, const FeedForwardParams& p, ParamSet& out) {
    out.add(prefix + "ln_g", p.ln_g);
    out.add(prefix + "ln_b", p.ln_b);
    out.add(prefix + "w1", p.w1);
    out.add(prefix + "b1", p.b1);
    out.add(prefix + "w2", p.w2);
    out.add(prefix + "b2", p.b2);
}

}  // namespace

void EncoderConfig::validate() const {
    if (hidden_size <= 0 || n_layers <= 0 || n_heads <= 0 || ffn_hidden <= 0)
        throw std::invalid_argument("encoder config: sizes must be positive");
    if (hidden_size % 4 != 0)
        throw std::invalid_argument("encoder config: hidden_size must be divisible by 4");
    if (hidden_size % n_heads != 0)
        throw std::invalid_argument("encoder config: hidden_size must divide by n_heads");
    if (ffn_hidden < hidden_size)
        throw std::invalid_argument("encoder config: ffn_hidden must be >= hidden_size");
    if (conv_kernel < 1 || conv_kernel % 2 == 0)
        throw std::invalid_argument("encoder config: conv_kernel must be odd");
    if (dropout_p < 0.0 || dropout_p >= 1.0)
        throw std::invalid_argument("encoder config: dropout_p must be in [0,1)");
    if (n_mels < 4) throw std::invalid_argument("encoder config: n_mels must be >= 4");
}

EncoderConfig EncoderConfig::preset(const std::string& name) {
    EncoderConfig cfg;
    if (name == "256M") {
        cfg.hidden_size = 256, cfg.n_layers = 16, cfg.n_heads = 4, cfg.ffn_hidden = 1024;
    } else if (name == "512M") {
        cfg.hidden_size = 512, cfg.n_layers = 4, cfg.n_heads = 8, cfg.ffn_hidden = 2048;
    } else if (name == "768M") {
        cfg.hidden_size = 768, cfg.n_layers = 2, cfg.n_heads = 12, cfg.ffn_hidden = 3076;
    } else if (name == "256S") {
        cfg.hidden_size = 256, cfg.n_layers = 2, cfg.n_heads = 4, cfg.ffn_hidden = 1024;
    } else if (name == "toy") {
        cfg.hidden_size = 64, cfg.n_layers = 2, cfg.n_heads = 1, cfg.ffn_hidden = 256;
        cfg.dropout_p = 0.0;
    } else {
        throw std::invalid_argument("unknown encoder preset: " + name);
    }
    cfg.validate();
    return cfg;
}

long long count_params(const EncoderConfig& cfg) {
    cfg.validate();
    const long long d = cfg.hidden_size;
    const long long f = cfg.ffn_hidden;
    const long long k = cfg.conv_kernel;
    const long long c = cfg.subsample_channels();
    const long long mel_f = (cfg.n_mels + 3) / 4;

    const long long sub = (9 * c + c) + (9 * c * c + c) + (c * mel_f * d + d);
    const long long per_layer = 8 * d * d + 4 * d * f + 2 * f + (24 + k) * d;
    return sub + cfg.n_layers * per_layer;
}

int subsampled_length(int n_frames) { return ((n_frames + 1) / 2 + 1) / 2; }

EncoderParams::EncoderParams(const EncoderConfig& cfg, Rng& rng) {
    cfg.validate();
    const int d = cfg.hidden_size;
    const int c = cfg.subsample_channels();
    const int mel_f = (cfg.n_mels + 3) / 4;

    conv1_w = ad::parameter(xavier_uniform(c, 9, 9.0, 9.0 * c, rng));
    conv1_b = zeros_param(c, 1);
    conv2_w = ad::parameter(xavier_uniform(c, 9 * c, 9.0 * c, 9.0 * c, rng));
    conv2_b = zeros_param(c, 1);
    proj_w = ad::parameter(
        xavier_uniform(static_cast<long>(c) * mel_f, d, c * mel_f, d, rng));
    proj_b = zeros_param(1, d);

    layers.reserve(cfg.n_layers);
    for (int l = 0; l < cfg.n_layers; ++l) {
        ConformerLayerParams lp;
        lp.ffn1 = make_ffn(d, cfg.ffn_hidden, rng);
        lp.attn = make_attn(cfg, rng);
        lp.conv = make_conv(cfg, rng);
        lp.ffn2 = make_ffn(d, cfg.ffn_hidden, rng);
        lp.final_ln_g = ones_param(1, d);
        lp.final_ln_b = zeros_param(1, d);
        layers.push_back(std::move(lp));
    }
}

ParamSet EncoderParams::param_set() {
    ParamSet out;
    out.add("sub.conv1_w", conv1_w);
    out.add("sub.conv1_b", conv1_b);
    out.add("sub.conv2_w", conv2_w);
    out.add("sub.conv2_b", conv2_b);
    out.add("sub.proj_w", proj_w);
    out.add("sub.proj_b", proj_b);
    for (size_t l = 0; l < layers.size(); ++l) {
        const std::string pre = "layer" + std::to_string(l) + ".";
        auto& lp = layers[l];
        collect_ffn(pre + "ffn1.", lp.ffn1, out);
        auto& a = lp.attn;
        out.add(pre + "attn.ln_g", a.ln_g);
        out.add(pre + "attn.ln_b", a.ln_b);
        out.add(pre + "attn.wq", a.wq);
        out.add(pre + "attn.bq", a.bq);
        out.add(pre + "attn.wk", a.wk);
        out.add(pre + "attn.bk", a.bk);
        out.add(pre + "attn.wv", a.wv);
        out.add(pre + "attn.bv", a.bv);
        out.add(pre + "attn.wo", a.wo);
        out.add(pre + "attn.bo", a.bo);
        out.add(pre + "attn.w_pos", a.w_pos);
        out.add(pre + "attn.u", a.u);
        out.add(pre + "attn.v", a.v);
        auto& cv = lp.conv;
        out.add(pre + "conv.ln_g", cv.ln_g);
        out.add(pre + "conv.ln_b", cv.ln_b);
        out.add(pre + "conv.pw1_w", cv.pw1_w);
        out.add(pre + "conv.pw1_b", cv.pw1_b);
        out.add(pre + "conv.dw_w", cv.dw_w);
        out.add(pre + "conv.dw_b", cv.dw_b);
        out.add(pre + "conv.bn_g", cv.bn_g);
        out.add(pre + "conv.bn_b", cv.bn_b);
        out.add_buffer(pre + "conv.bn_running_mean", &cv.bn_running_mean);
        out.add_buffer(pre + "conv.bn_running_var", &cv.bn_running_var);
        out.add(pre + "conv.pw2_w", cv.pw2_w);
        out.add(pre + "conv.pw2_b", cv.pw2_b);
        collect_ffn(pre + "ffn2.", lp.ffn2, out);
        out.add(pre + "final_ln_g", lp.final_ln_g);
        out.add(pre + "final_ln_b", lp.final_ln_b);
    }
    return out;
}

Mat rel_pos_encoding(int n, int d) {
    Mat r(2 * n - 1, d);
    for (int i = 0; i < 2 * n - 1; ++i) {
        const double pos = n - 1 - i;
        for (int j = 0; j < d / 2; ++j) {
            const double omega = std::pow(10000.0, -2.0 * j / d);
            r(i, 2 * j) = std::sin(pos * omega);
            r(i, 2 * j + 1) = std::cos(pos * omega);
        }
    }
    return r;
}

Var subsample(Var frames, const EncoderParams& p, const EncoderConfig& cfg,
              const Ctx& ctx) {
    const int n = static_cast<int>(frames->value.rows());
    const int m = static_cast<int>(frames->value.cols());
    if (m != cfg.n_mels) throw std::invalid_argument("subsample: mel dim mismatch");
    if (n < 4) throw std::invalid_argument("subsample: input shorter than 4 frames");

    // (N, mels) viewed as a 1-channel image.
    Var x = ad::reshape_rowmajor(frames, 1, static_cast<long>(n) * m);
    x = ad::relu(ad::conv2d_k3s2(x, p.conv1_w, p.conv1_b, n, m));
    const int h1 = (n + 1) / 2, w1 = (m + 1) / 2;
    x = ad::relu(ad::conv2d_k3s2(x, p.conv2_w, p.conv2_b, h1, w1));
    const int h2 = (h1 + 1) / 2, w2 = (w1 + 1) / 2;
    x = ad::chw_to_time_major(x, h2, w2);
    x = ad::add_row_broadcast(ad::matmul(x, p.proj_w), p.proj_b);
    return maybe_dropout(x, cfg, ctx);
}

namespace {

Var feed_forward(Var x, const FeedForwardParams& p, const EncoderConfig& cfg,
                 const Ctx& ctx) {
    Var h = ad::layer_norm_rows(x, p.ln_g, p.ln_b);
    h = ad::swish(ad::add_row_broadcast(ad::matmul(h, p.w1), p.b1));
    h = maybe_dropout(h, cfg, ctx);
    h = ad::add_row_broadcast(ad::matmul(h, p.w2), p.b2);
    return maybe_dropout(h, cfg, ctx);
}

Var rel_pos_mhsa(Var x, const AttentionParams& p, const EncoderConfig& cfg,
                 const Ctx& ctx) {
    const int n = static_cast<int>(x->value.rows());
    const int dk = cfg.head_dim();
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));

    Var xn = ad::layer_norm_rows(x, p.ln_g, p.ln_b);
    Var q = ad::add_row_broadcast(ad::matmul(xn, p.wq), p.bq);
    Var k = ad::add_row_broadcast(ad::matmul(xn, p.wk), p.bk);
    Var v = ad::add_row_broadcast(ad::matmul(xn, p.wv), p.bv);
    Var pos = ad::matmul(ad::constant(rel_pos_encoding(n, cfg.hidden_size)), p.w_pos);

    std::vector<Var> heads;
    heads.reserve(cfg.n_heads);
    for (int hidx = 0; hidx < cfg.n_heads; ++hidx) {
        Var qk = ad::slice_cols(q, hidx * dk, dk);
        Var kk = ad::slice_cols(k, hidx * dk, dk);
        Var vk = ad::slice_cols(v, hidx * dk, dk);
        Var pk = ad::slice_cols(pos, hidx * dk, dk);
        Var uk = ad::slice_rows(p.u, hidx, 1);
        Var vb = ad::slice_rows(p.v, hidx, 1);

        Var content = ad::matmul(ad::add_row_broadcast(qk, uk), ad::transpose(kk));
        Var position =
            ad::rel_shift(ad::matmul(ad::add_row_broadcast(qk, vb), ad::transpose(pk)));
        Var scores = ad::scale(ad::add(content, position), inv_sqrt_dk);
        Var attn = ad::softmax_rows(scores);
        attn = maybe_dropout(attn, cfg, ctx);
        heads.push_back(ad::matmul(attn, vk));
    }
    Var out = cfg.n_heads == 1 ? heads[0] : ad::concat_cols(heads);
    out = ad::add_row_broadcast(ad::matmul(out, p.wo), p.bo);
    return maybe_dropout(out, cfg, ctx);
}

Var conv_module(Var x, ConvModuleParams& p, const EncoderConfig& cfg, const Ctx& ctx) {
    Var h = ad::layer_norm_rows(x, p.ln_g, p.ln_b);
    h = ad::glu_cols(ad::add_row_broadcast(ad::matmul(h, p.pw1_w), p.pw1_b));
    h = ad::depthwise_conv1d(h, p.dw_w, p.dw_b);
    h = ad::batch_norm_time(h, p.bn_g, p.bn_b, &p.bn_running_mean, &p.bn_running_var,
                            ctx.training);
    h = ad::swish(h);
    h = ad::add_row_broadcast(ad::matmul(h, p.pw2_w), p.pw2_b);
    return maybe_dropout(h, cfg, ctx);
}

}  // namespace

Var conformer_layer(Var h, ConformerLayerParams& p, const EncoderConfig& cfg,
                    const Ctx& ctx) {
    if (h->value.cols() != cfg.hidden_size)
        throw std::invalid_argument("conformer_layer: hidden dim mismatch");
    Var x = ad::add(h, ad::scale(feed_forward(h, p.ffn1, cfg, ctx), 0.5));
    x = ad::add(x, rel_pos_mhsa(x, p.attn, cfg, ctx));
    x = ad::add(x, conv_module(x, p.conv, cfg, ctx));
    x = ad::add(x, ad::scale(feed_forward(x, p.ffn2, cfg, ctx), 0.5));
    return ad::layer_norm_rows(x, p.final_ln_g, p.final_ln_b);
}

Var encode(Var frames, EncoderParams& p, const EncoderConfig& cfg, const Ctx& ctx) {
    Var h = subsample(frames, p, cfg, ctx);
    for (auto& layer : p.layers) h = conformer_layer(h, layer, cfg, ctx);
    return h;
}

}  // namespace sid
