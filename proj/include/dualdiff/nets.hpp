#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dualdiff/common.hpp"
#include "dualdiff/schedule.hpp"
#include "dualdiff/tensor.hpp"

namespace dualdiff {

struct NetConfig {
    int t_ubs = 6;
    int t_fut = 12;
    int d_ctx = 32;
    int d_traj = 32;
    int d_model = 64;
    int d_ff = 128;
    int n_heads = 2;
    int n_blocks = 2;
    int gru_hidden = 32;

    void validate() const;
};

// Ordered name -> tensor map shared by the optimizer and the checkpoint
// format; insertion order is the serialization order.
class ParamRegistry {
  public:
    void add(const std::string& name, Tensor t);
    const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
    std::vector<Tensor> tensors() const;
    Tensor find(const std::string& name) const;  // throws if absent
    void zero_grad();

  private:
    std::vector<std::pair<std::string, Tensor>> items_;
};

// ---- building blocks ----

struct Linear {
    Tensor w;  // [in, out]
    Tensor b;  // [out]; undefined when bias-free
    static Linear init(int in, int out, Rng& rng, bool bias = true);
    static Linear zero_init(int in, int out, bool bias = true);
    Tensor forward(const Tensor& x) const;
    void register_params(ParamRegistry& reg, const std::string& prefix);
};

struct LayerNormAffine {
    Tensor gain, bias;  // [dim]
    static LayerNormAffine init(int dim);
    Tensor forward(const Tensor& x) const;
    void register_params(ParamRegistry& reg, const std::string& prefix);
};

struct GruCell {
    Linear in_zr, hid_zr;  // -> [2H]: update gate then reset gate
    Linear in_c, hid_c;    // -> [H]: candidate
    int hidden = 0;
    static GruCell init(int in, int hidden, Rng& rng);
    Tensor step(const Tensor& x, const Tensor& h) const;  // [B,in],[B,H] -> [B,H]
    void register_params(ParamRegistry& reg, const std::string& prefix);
};

struct GruStack {
    std::vector<GruCell> layers;
    static GruStack init(int in, int hidden, int n_layers, Rng& rng);
    // Runs the stack over seq [B,T,in]; returns the top layer's final hidden.
    Tensor forward_last(const Tensor& seq) const;
    void register_params(ParamRegistry& reg, const std::string& prefix);
};

struct TransformerBlock {
    LayerNormAffine ln_attn, ln_ff;
    Linear wq, wk, wv, wo, ff1, ff2;
    int n_heads = 0;
    static TransformerBlock init(int d_model, int d_ff, int n_heads, Rng& rng);
    Tensor forward(const Tensor& x) const;  // [B,T,D] -> [B,T,D]
    void register_params(ParamRegistry& reg, const std::string& prefix);
};

// Pre-norm encoder stack with a final layer norm.
struct TransformerTrunk {
    std::vector<TransformerBlock> blocks;
    LayerNormAffine final_ln;
    static TransformerTrunk init(int d_model, int d_ff, int n_heads, int n_blocks, Rng& rng);
    Tensor forward(const Tensor& tokens) const;
    void register_params(ParamRegistry& reg, const std::string& prefix);
};

// Sinusoidal features of one integer per batch row; [B, dim], constant.
Tensor sinusoidal_embedding(const std::vector<int>& steps, int dim);
// Sinusoidal features of positions 0..len-1; [len, dim], constant.
Tensor positional_encoding(int len, int dim);

// ---- model heads ----

struct DualHeadOutput {
    Tensor eps_hat;  // [B, T, 2] predicted noise
    Tensor ell;      // [B, T, 2] per-coordinate log-variance
};

// Embeds the 2 observed frames plus their finite-difference velocity.
class ContextEncoder {
  public:
    static ContextEncoder init(const NetConfig& cfg, Rng& rng);
    Tensor forward(const Tensor& x_obs) const;  // [B,2,2] -> [B,d_ctx]
    void register_params(ParamRegistry& reg, const std::string& prefix);

    Linear frame_embed, vel_embed, hidden, out;  // out is bias-free
};

// Transformer denoiser for the past branch; two heads share the trunk.
class DualHeadDenoiser {
  public:
    static DualHeadDenoiser init(const NetConfig& cfg, Rng& rng);
    // x_m [B,T,2], one diffusion step per batch row, h1 [B,d_ctx].
    DualHeadOutput forward(const Tensor& x_m, const std::vector<int>& steps,
                           const Tensor& h1) const;
    void register_params(ParamRegistry& reg, const std::string& prefix);

    Linear traj_proj, cond_proj, step_proj, eps_head, ell_head;  // ell_head zero-init
    TransformerTrunk trunk;
    int d_model = 0;
};

// Transformer denoiser for the future branch (data prediction).
class FutureDenoiser {
  public:
    static FutureDenoiser init(const NetConfig& cfg, Rng& rng);
    // y_m [B,T,2], h2 [B,d_ctx+d_traj], steps per row, u [B,t_ubs,2] positive.
    Tensor forward(const Tensor& y_m, const Tensor& h2, const std::vector<int>& steps,
                   const Tensor& u) const;
    void register_params(ParamRegistry& reg, const std::string& prefix);

    Linear traj_proj, cond_proj, step_proj, u_proj, y_head;
    TransformerTrunk trunk;
    int d_model = 0;
};

// Recurrent trajectory feature encoder: x_ubs -> v1.
class TrajEncoder {
  public:
    static TrajEncoder init(const NetConfig& cfg, Rng& rng);
    Tensor forward(const Tensor& x_ubs) const;  // [B,T,2] -> [B,d_traj]
    void register_params(ParamRegistry& reg, const std::string& prefix);

    GruStack gru;
    Linear mlp1, mlp2, mlp3;
};

// Predicts the three gamma-polynomial coefficient vectors from u.
class GammaNet {
  public:
    static GammaNet init(const NetConfig& cfg, Rng& rng);
    // u [B,t_ubs,2] elementwise positive -> post-softplus coefficients.
    GammaCoeffs forward(const Tensor& u) const;
    void register_params(ParamRegistry& reg, const std::string& prefix);

    GruStack gru;
    Linear mlp1, mlp2;
    int t_fut = 0;
};

}  // namespace dualdiff
