#include "dualdiff/nets.hpp"

#include <cmath>

namespace dualdiff {

void NetConfig::validate() const {
    if (t_ubs < 1 || t_fut < 1) throw ConfigError("NetConfig: horizons must be positive");
    if (d_ctx < 1 || d_traj < 1 || d_model < 1 || d_ff < 1 || gru_hidden < 1 || n_blocks < 1) {
        throw ConfigError("NetConfig: dimensions must be positive");
    }
    if (n_heads < 1 || d_model % n_heads != 0) {
        throw ConfigError("NetConfig: d_model must be divisible by n_heads");
    }
    if (d_model % 2 != 0) throw ConfigError("NetConfig: d_model must be even");
}

void ParamRegistry::add(const std::string& name, Tensor t) {
    for (const auto& [n, _] : items_) {
        if (n == name) throw ContractError("duplicate parameter name: " + name);
    }
    items_.emplace_back(name, std::move(t));
}

std::vector<Tensor> ParamRegistry::tensors() const {
    std::vector<Tensor> out;
    out.reserve(items_.size());
    for (const auto& [_, t] : items_) out.push_back(t);
    return out;
}

Tensor ParamRegistry::find(const std::string& name) const {
    for (const auto& [n, t] : items_) {
        if (n == name) return t;
    }
    throw ContractError("unknown parameter: " + name);
}

void ParamRegistry::zero_grad() {
    for (auto& [_, t] : items_) t.zero_grad();
}

// ---------------------------------------------------------------- blocks

Linear Linear::init(int in, int out, Rng& rng, bool bias) {
    const double bound = 1.0 / std::sqrt(double(in));
    Linear l;
    l.w = Tensor::rand_uniform({in, out}, -bound, bound, rng, true);
    if (bias) l.b = Tensor::rand_uniform({out}, -bound, bound, rng, true);
    return l;
}

Linear Linear::zero_init(int in, int out, bool bias) {
    Linear l;
    l.w = Tensor::zeros({in, out}, true);
    if (bias) l.b = Tensor::zeros({out}, true);
    return l;
}

Tensor Linear::forward(const Tensor& x) const {
    auto y = matmul(x, w);
    return b.defined() ? add(y, b) : y;
}

void Linear::register_params(ParamRegistry& reg, const std::string& prefix) {
    reg.add(prefix + ".w", w);
    if (b.defined()) reg.add(prefix + ".b", b);
}

LayerNormAffine LayerNormAffine::init(int dim) {
    LayerNormAffine ln;
    ln.gain = Tensor::full({dim}, 1.0, true);
    ln.bias = Tensor::zeros({dim}, true);
    return ln;
}

Tensor LayerNormAffine::forward(const Tensor& x) const {
    return add(mul(layer_norm(x), gain), bias);
}

void LayerNormAffine::register_params(ParamRegistry& reg, const std::string& prefix) {
    reg.add(prefix + ".gain", gain);
    reg.add(prefix + ".bias", bias);
}

GruCell GruCell::init(int in, int hidden, Rng& rng) {
    GruCell c;
    c.hidden = hidden;
    c.in_zr = Linear::init(in, 2 * hidden, rng);
    c.hid_zr = Linear::init(hidden, 2 * hidden, rng, /*bias=*/false);
    c.in_c = Linear::init(in, hidden, rng);
    c.hid_c = Linear::init(hidden, hidden, rng, /*bias=*/false);
    return c;
}

Tensor GruCell::step(const Tensor& x, const Tensor& h) const {
    auto zr = sigmoid(add(in_zr.forward(x), hid_zr.forward(h)));
    auto z = slice(zr, 1, 0, hidden);
    auto r = slice(zr, 1, hidden, hidden);
    auto cand = tanh(add(in_c.forward(x), hid_c.forward(mul(r, h))));
    // h' = (1 - z) * h + z * cand
    return add(mul(shift(neg(z), 1.0), h), mul(z, cand));
}

void GruCell::register_params(ParamRegistry& reg, const std::string& prefix) {
    in_zr.register_params(reg, prefix + ".in_zr");
    hid_zr.register_params(reg, prefix + ".hid_zr");
    in_c.register_params(reg, prefix + ".in_c");
    hid_c.register_params(reg, prefix + ".hid_c");
}

GruStack GruStack::init(int in, int hidden, int n_layers, Rng& rng) {
    GruStack s;
    for (int l = 0; l < n_layers; ++l) {
        s.layers.push_back(GruCell::init(l == 0 ? in : hidden, hidden, rng));
    }
    return s;
}

Tensor GruStack::forward_last(const Tensor& seq) const {
    if (seq.ndim() != 3) throw ShapeError("GruStack expects [B,T,in]");
    const int batch = seq.shape()[0];
    const int steps = seq.shape()[1];
    const int in = seq.shape()[2];
    std::vector<Tensor> h(layers.size());
    for (std::size_t l = 0; l < layers.size(); ++l) {
        h[l] = Tensor::zeros({batch, layers[l].hidden});
    }
    for (int t = 0; t < steps; ++t) {
        Tensor x = reshape(slice(seq, 1, t, 1), {batch, in});
        for (std::size_t l = 0; l < layers.size(); ++l) {
            h[l] = layers[l].step(x, h[l]);
            x = h[l];
        }
    }
    return h.back();
}

void GruStack::register_params(ParamRegistry& reg, const std::string& prefix) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
        layers[l].register_params(reg, prefix + ".l" + std::to_string(l));
    }
}

TransformerBlock TransformerBlock::init(int d_model, int d_ff, int n_heads, Rng& rng) {
    TransformerBlock b;
    b.n_heads = n_heads;
    b.ln_attn = LayerNormAffine::init(d_model);
    b.ln_ff = LayerNormAffine::init(d_model);
    b.wq = Linear::init(d_model, d_model, rng);
    b.wk = Linear::init(d_model, d_model, rng);
    b.wv = Linear::init(d_model, d_model, rng);
    b.wo = Linear::init(d_model, d_model, rng);
    b.ff1 = Linear::init(d_model, d_ff, rng);
    b.ff2 = Linear::init(d_ff, d_model, rng);
    return b;
}

Tensor TransformerBlock::forward(const Tensor& x) const {
    const int d_model = x.shape().back();
    const int head_dim = d_model / n_heads;
    auto xn = ln_attn.forward(x);
    auto q = wq.forward(xn);
    auto k = wk.forward(xn);
    auto v = wv.forward(xn);
    std::vector<Tensor> heads;
    heads.reserve(n_heads);
    const double inv_scale = 1.0 / std::sqrt(double(head_dim));
    for (int h = 0; h < n_heads; ++h) {
        auto qh = slice(q, -1, h * head_dim, head_dim);
        auto kh = slice(k, -1, h * head_dim, head_dim);
        auto vh = slice(v, -1, h * head_dim, head_dim);
        auto att = softmax(scale(matmul(qh, transpose(kh)), inv_scale));
        heads.push_back(matmul(att, vh));
    }
    auto ctx = wo.forward(concat(heads, -1));
    auto y = add(x, ctx);
    auto yn = ln_ff.forward(y);
    return add(y, ff2.forward(tanh(ff1.forward(yn))));
}

void TransformerBlock::register_params(ParamRegistry& reg, const std::string& prefix) {
    ln_attn.register_params(reg, prefix + ".ln_attn");
    ln_ff.register_params(reg, prefix + ".ln_ff");
    wq.register_params(reg, prefix + ".wq");
    wk.register_params(reg, prefix + ".wk");
    wv.register_params(reg, prefix + ".wv");
    wo.register_params(reg, prefix + ".wo");
    ff1.register_params(reg, prefix + ".ff1");
    ff2.register_params(reg, prefix + ".ff2");
}

TransformerTrunk TransformerTrunk::init(int d_model, int d_ff, int n_heads, int n_blocks,
                                        Rng& rng) {
    TransformerTrunk t;
    for (int i = 0; i < n_blocks; ++i) {
        t.blocks.push_back(TransformerBlock::init(d_model, d_ff, n_heads, rng));
    }
    t.final_ln = LayerNormAffine::init(d_model);
    return t;
}

Tensor TransformerTrunk::forward(const Tensor& tokens) const {
    Tensor x = tokens;
    for (const auto& b : blocks) x = b.forward(x);
    return final_ln.forward(x);
}

void TransformerTrunk::register_params(ParamRegistry& reg, const std::string& prefix) {
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        blocks[i].register_params(reg, prefix + ".block" + std::to_string(i));
    }
    final_ln.register_params(reg, prefix + ".final_ln");
}

Tensor sinusoidal_embedding(const std::vector<int>& steps, int dim) {
    if (dim % 2 != 0) throw ContractError("sinusoidal_embedding: dim must be even");
    const int batch = static_cast<int>(steps.size());
    std::vector<double> data(static_cast<std::size_t>(batch) * dim);
    for (int b = 0; b < batch; ++b) {
        for (int i = 0; i < dim / 2; ++i) {
            const double freq = std::pow(10000.0, -2.0 * i / dim);
            data[b * dim + 2 * i] = std::sin(steps[b] * freq);
            data[b * dim + 2 * i + 1] = std::cos(steps[b] * freq);
        }
    }
    return Tensor::from_data({batch, dim}, std::move(data));
}

Tensor positional_encoding(int len, int dim) {
    std::vector<int> pos(len);
    for (int i = 0; i < len; ++i) pos[i] = i;
    return sinusoidal_embedding(pos, dim);  // [len, dim]
}

// ---------------------------------------------------------------- encoders

ContextEncoder ContextEncoder::init(const NetConfig& cfg, Rng& rng) {
    cfg.validate();
    ContextEncoder e;
    e.frame_embed = Linear::init(2, cfg.d_ctx, rng);
    e.vel_embed = Linear::init(2, cfg.d_ctx, rng);
    e.hidden = Linear::init(3 * cfg.d_ctx, cfg.d_ctx, rng);
    e.out = Linear::init(cfg.d_ctx, cfg.d_ctx, rng, /*bias=*/false);
    return e;
}

Tensor ContextEncoder::forward(const Tensor& x_obs) const {
    if (x_obs.ndim() != 3 || x_obs.shape()[1] != 2 || x_obs.shape()[2] != 2) {
        throw ShapeError("ContextEncoder expects [B,2,2]");
    }
    const int batch = x_obs.shape()[0];
    auto f0 = reshape(slice(x_obs, 1, 0, 1), {batch, 2});
    auto f1 = reshape(slice(x_obs, 1, 1, 1), {batch, 2});
    auto vel = sub(f1, f0);
    auto feats = concat({frame_embed.forward(f0), frame_embed.forward(f1),
                         vel_embed.forward(vel)}, 1);
    return out.forward(tanh(hidden.forward(feats)));
}

void ContextEncoder::register_params(ParamRegistry& reg, const std::string& prefix) {
    frame_embed.register_params(reg, prefix + ".frame_embed");
    vel_embed.register_params(reg, prefix + ".vel_embed");
    hidden.register_params(reg, prefix + ".hidden");
    out.register_params(reg, prefix + ".out");
}

// ---------------------------------------------------------------- denoisers

namespace {

// Trajectory tokens carry positional encoding; condition tokens do not, so
// the trunk output at trajectory positions is invariant to their order.
Tensor build_tokens(const Linear& traj_proj, const Tensor& traj,
                    const std::vector<Tensor>& cond_tokens, int d_model) {
    const int t_len = traj.shape()[1];
    auto tokens = add(traj_proj.forward(traj), positional_encoding(t_len, d_model));
    std::vector<Tensor> parts{tokens};
    for (const auto& c : cond_tokens) parts.push_back(c);
    return concat(parts, 1);
}

}  // namespace

DualHeadDenoiser DualHeadDenoiser::init(const NetConfig& cfg, Rng& rng) {
    cfg.validate();
    DualHeadDenoiser d;
    d.d_model = cfg.d_model;
    d.traj_proj = Linear::init(2, cfg.d_model, rng);
    d.cond_proj = Linear::init(cfg.d_ctx, cfg.d_model, rng);
    d.step_proj = Linear::init(cfg.d_model, cfg.d_model, rng);
    d.trunk = TransformerTrunk::init(cfg.d_model, cfg.d_ff, cfg.n_heads, cfg.n_blocks, rng);
    d.eps_head = Linear::init(cfg.d_model, 2, rng);
    // zero-initialized so ell == 0 at init and the past branch starts as a
    // standard unit-variance DDPM
    d.ell_head = Linear::zero_init(cfg.d_model, 2);
    return d;
}

DualHeadOutput DualHeadDenoiser::forward(const Tensor& x_m, const std::vector<int>& steps,
                                         const Tensor& h1) const {
    if (x_m.ndim() != 3 || x_m.shape()[2] != 2) throw ShapeError("DualHeadDenoiser expects [B,T,2]");
    const int batch = x_m.shape()[0];
    if (static_cast<int>(steps.size()) != batch || h1.shape()[0] != batch) {
        throw ShapeError("DualHeadDenoiser: batch mismatch between x_m, steps and h1");
    }
    const int t_len = x_m.shape()[1];
    auto cond = reshape(cond_proj.forward(h1), {batch, 1, d_model});
    auto step_tok =
        reshape(step_proj.forward(sinusoidal_embedding(steps, d_model)), {batch, 1, d_model});
    auto feats = trunk.forward(build_tokens(traj_proj, x_m, {cond, step_tok}, d_model));
    auto traj_feats = slice(feats, 1, 0, t_len);
    return {eps_head.forward(traj_feats), ell_head.forward(traj_feats)};
}

void DualHeadDenoiser::register_params(ParamRegistry& reg, const std::string& prefix) {
    traj_proj.register_params(reg, prefix + ".traj_proj");
    cond_proj.register_params(reg, prefix + ".cond_proj");
    step_proj.register_params(reg, prefix + ".step_proj");
    trunk.register_params(reg, prefix + ".trunk");
    eps_head.register_params(reg, prefix + ".eps_head");
    ell_head.register_params(reg, prefix + ".ell_head");
}

FutureDenoiser FutureDenoiser::init(const NetConfig& cfg, Rng& rng) {
    cfg.validate();
    FutureDenoiser d;
    d.d_model = cfg.d_model;
    d.traj_proj = Linear::init(2, cfg.d_model, rng);
    d.cond_proj = Linear::init(cfg.d_ctx + cfg.d_traj, cfg.d_model, rng);
    d.step_proj = Linear::init(cfg.d_model, cfg.d_model, rng);
    d.u_proj = Linear::init(2 * cfg.t_ubs, cfg.d_model, rng);
    d.trunk = TransformerTrunk::init(cfg.d_model, cfg.d_ff, cfg.n_heads, cfg.n_blocks, rng);
    d.y_head = Linear::init(cfg.d_model, 2, rng);
    return d;
}

Tensor FutureDenoiser::forward(const Tensor& y_m, const Tensor& h2,
                               const std::vector<int>& steps, const Tensor& u) const {
    if (y_m.ndim() != 3 || y_m.shape()[2] != 2) throw ShapeError("FutureDenoiser expects [B,T,2]");
    const int batch = y_m.shape()[0];
    if (static_cast<int>(steps.size()) != batch || h2.shape()[0] != batch ||
        u.shape()[0] != batch) {
        throw ShapeError("FutureDenoiser: batch mismatch");
    }
    for (double v : u.values()) {
        if (!(v > 0.0)) throw ContractError("FutureDenoiser: u must be elementwise positive");
    }
    const int t_len = y_m.shape()[1];
    auto cond = reshape(cond_proj.forward(h2), {batch, 1, d_model});
    auto step_tok =
        reshape(step_proj.forward(sinusoidal_embedding(steps, d_model)), {batch, 1, d_model});
    // variances span orders of magnitude; condition on their logs
    auto u_flat = reshape(log(u), {batch, u.size() / batch});
    auto u_tok = reshape(u_proj.forward(u_flat), {batch, 1, d_model});
    auto feats = trunk.forward(build_tokens(traj_proj, y_m, {cond, step_tok, u_tok}, d_model));
    return y_head.forward(slice(feats, 1, 0, t_len));
}

void FutureDenoiser::register_params(ParamRegistry& reg, const std::string& prefix) {
    traj_proj.register_params(reg, prefix + ".traj_proj");
    cond_proj.register_params(reg, prefix + ".cond_proj");
    step_proj.register_params(reg, prefix + ".step_proj");
    u_proj.register_params(reg, prefix + ".u_proj");
    trunk.register_params(reg, prefix + ".trunk");
    y_head.register_params(reg, prefix + ".y_head");
}

TrajEncoder TrajEncoder::init(const NetConfig& cfg, Rng& rng) {
    cfg.validate();
    TrajEncoder e;
    e.gru = GruStack::init(2, cfg.gru_hidden, 2, rng);
    e.mlp1 = Linear::init(cfg.gru_hidden, cfg.gru_hidden, rng);
    e.mlp2 = Linear::init(cfg.gru_hidden, cfg.gru_hidden, rng);
    e.mlp3 = Linear::init(cfg.gru_hidden, cfg.d_traj, rng);
    return e;
}

Tensor TrajEncoder::forward(const Tensor& x_ubs) const {
    auto h = gru.forward_last(x_ubs);
    return mlp3.forward(tanh(mlp2.forward(tanh(mlp1.forward(h)))));
}

void TrajEncoder::register_params(ParamRegistry& reg, const std::string& prefix) {
    gru.register_params(reg, prefix + ".gru");
    mlp1.register_params(reg, prefix + ".mlp1");
    mlp2.register_params(reg, prefix + ".mlp2");
    mlp3.register_params(reg, prefix + ".mlp3");
}

GammaNet GammaNet::init(const NetConfig& cfg, Rng& rng) {
    cfg.validate();
    GammaNet g;
    g.t_fut = cfg.t_fut;
    g.gru = GruStack::init(2, cfg.gru_hidden, 2, rng);
    g.mlp1 = Linear::init(cfg.gru_hidden, cfg.gru_hidden, rng);
    g.mlp2 = Linear::init(cfg.gru_hidden, 3 * cfg.t_fut, rng);
    return g;
}

GammaCoeffs GammaNet::forward(const Tensor& u) const {
    if (u.ndim() != 3 || u.shape()[2] != 2) throw ShapeError("GammaNet expects [B,T,2]");
    for (double v : u.values()) {
        if (!(v > 0.0)) throw ContractError("GammaNet: u must be elementwise positive");
    }
    auto h = gru.forward_last(log(u));
    auto raw = mlp2.forward(tanh(mlp1.forward(h)));  // [B, 3*t_fut]
    // the small floor keeps the field away from the degenerate all-zero
    // polynomial even if pre-activations drift far negative
    const double floor = 1e-8;
    auto a1 = shift(softplus(slice(raw, 1, 0, t_fut)), floor);
    auto a2 = shift(softplus(slice(raw, 1, t_fut, t_fut)), floor);
    auto a3 = shift(softplus(slice(raw, 1, 2 * t_fut, t_fut)), floor);
    return {a1, a2, a3};
}

void GammaNet::register_params(ParamRegistry& reg, const std::string& prefix) {
    gru.register_params(reg, prefix + ".gru");
    mlp1.register_params(reg, prefix + ".mlp1");
    mlp2.register_params(reg, prefix + ".mlp2");
}

}  // namespace dualdiff
