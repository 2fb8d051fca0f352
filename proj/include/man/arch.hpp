#pragma once

#include <functional>
#include <string>
#include <vector>

#include "man/ops.hpp"
#include "man/rng.hpp"

namespace man {

enum class Variant { Tiny, Light, Classical, Custom };
enum class BlockStyle { Metaformer, Rcan };
enum class FfnKind { Gsau, Mlp, Sg, Cff };
enum class TailKind { Lkat, Conv3x3 };
enum class AttentionKind { Mlka, LkaSingle };

// One large-kernel-attention decomposition a-b-1: an a x a depthwise
// conv, a b x b depthwise conv with dilation d, and a pointwise conv,
// with a = 2d-1 and the spatial gate kernel equal to a.
struct LkaSpec {
    int target_k = 0;
    int dilation = 0;
    int dw = 0;
    int dwd = 0;
    int gate = 0;

    int receptive_field() const { return dw + dilation * (dwd - 1); }
    std::string str() const { return cat(dw, "-", dwd, "-1"); }
    bool operator==(const LkaSpec&) const = default;
};

LkaSpec lka_spec_7();    // {7,2} realized as 3-5-1
LkaSpec lka_spec_21();   // {21,3} realized as 5-7-1
LkaSpec lka_spec_35();   // {35,4} realized as 7-9-1
std::vector<LkaSpec> default_lka_groups();
// Accepts the three preset strings "3-5-1", "5-7-1", "7-9-1".
LkaSpec lka_spec_from_string(const std::string& s);

struct ManConfig {
    Variant variant = Variant::Custom;
    int n_blocks = 0;
    int width = 0;
    int scale = 0;
    BlockStyle block_style = BlockStyle::Metaformer;
    FfnKind ffn = FfnKind::Gsau;
    AttentionKind attention = AttentionKind::Mlka;
    std::vector<LkaSpec> groups = default_lka_groups();
    TailKind tail = TailKind::Lkat;
    int gsau_dw_kernel = 7;
    // true  = "default" mode, gelu after the branch-entry pointwise convs
    // false = "strict-paper" mode, no activations beyond the gates
    bool gelu_in_blocks = true;

    // tiny = (5 blocks, width 48), light = (24, 60), classical = (36, 180).
    static ManConfig preset(Variant v, int scale);
    void validate() const;  // throws ConfigError
};

Variant variant_from_string(const std::string& s);
std::string to_string(Variant v);
std::string to_string(BlockStyle v);
std::string to_string(FfnKind v);
std::string to_string(TailKind v);

// ---- model parameters ----

template <class T>
struct LkaLayersT {
    ConvParamsT<T> dw, dwd, pw;
};

template <class T>
struct MlkaGroupT {
    LkaLayersT<T> lka;
    ConvParamsT<T> gate;
};

template <class T>
struct AttentionLayersT {
    AttentionKind kind = AttentionKind::Mlka;
    std::vector<MlkaGroupT<T>> groups;  // Mlka
    LkaLayersT<T> single;               // LkaSingle
};

template <class T>
struct FfnLayersT {
    FfnKind kind = FfnKind::Gsau;
    ConvParamsT<T> f4, f5, dw, f6;  // roles depend on kind; unused ones stay undefined
};

template <class T>
struct LayerNormParamsT {
    TensorT<T> gamma, beta;
};

template <class T>
struct MabBlockT {
    LayerNormParamsT<T> ln1;
    ConvParamsT<T> f1, f2, f3;  // f2 undefined for the single-LKA ablation
    AttentionLayersT<T> attn;
    TensorT<T> lambda1;
    LayerNormParamsT<T> ln2;
    FfnLayersT<T> ffn;
    TensorT<T> lambda2;
};

template <class T>
struct RcanBlockT {
    ConvParamsT<T> conv1, conv2;
    AttentionLayersT<T> attn;
};

template <class T>
struct TailLayersT {
    TailKind kind = TailKind::Lkat;
    ConvParamsT<T> proj_in, proj_out;  // Lkat
    LkaLayersT<T> lka;                 // Lkat
    ConvParamsT<T> conv3;              // Conv3x3
};

template <class T>
struct ManModelT {
    ManConfig config;
    ConvParamsT<T> sf;
    std::vector<MabBlockT<T>> mabs;      // Metaformer style
    std::vector<RcanBlockT<T>> rcan;     // Rcan style
    TailLayersT<T> tail;
    ConvParamsT<T> recon;
};

using ManModel = ManModelT<float>;
using ManModel64 = ManModelT<double>;

inline constexpr float kLayerNormEps = 1e-6f;
inline constexpr float kLambdaInit = 1e-2f;
inline constexpr float kWeightInitStd = 0.02f;

// Allocates and initializes all parameters (truncated normal std 0.02
// weights, zero biases, unit/zero layer-norm affine, lambdas at 1e-2),
// deterministically under the seed.
template <class T>
ManModelT<T> build_model(const ManConfig& cfg, u64 seed);

// ---- forward ----

template <class T>
TensorT<T> lka_forward(const TensorT<T>& x, const LkaLayersT<T>& p, TapeT<T>* tape = nullptr);

template <class T>
TensorT<T> mlka_forward(const TensorT<T>& x, const AttentionLayersT<T>& attn,
                        TapeT<T>* tape = nullptr);

template <class T>
TensorT<T> gsau_forward(const TensorT<T>& x, const TensorT<T>& y, const ConvParamsT<T>& dw,
                        TapeT<T>* tape = nullptr);

template <class T>
TensorT<T> ffn_forward(const TensorT<T>& n, const FfnLayersT<T>& ffn, bool gelu_entry,
                       TapeT<T>* tape = nullptr);

template <class T>
TensorT<T> mab_forward(const TensorT<T>& x, const MabBlockT<T>& block, const ManConfig& cfg,
                       TapeT<T>* tape = nullptr);

template <class T>
TensorT<T> rcan_block_forward(const TensorT<T>& x, const RcanBlockT<T>& block,
                              TapeT<T>* tape = nullptr);

template <class T>
TensorT<T> lkat_forward(const TensorT<T>& x, const TailLayersT<T>& tail,
                        TapeT<T>* tape = nullptr);

template <class T>
TensorT<T> man_forward(const TensorT<T>& lr, const ManModelT<T>& model,
                       TapeT<T>* tape = nullptr);

// ---- parameter registry ----

// Deterministic traversal over every trainable tensor, with stable
// dotted paths like "blocks.3.mlka.group1.dwd.weight".
template <class T>
void visit_params(ManModelT<T>& model,
                  const std::function<void(const std::string&, TensorT<T>&)>& fn);

template <class T>
std::vector<std::pair<std::string, TensorT<T>>> named_params(ManModelT<T>& model);

template <class T>
void set_requires_grad(ManModelT<T>& model, bool v);

template <class T>
void zero_grads(ManModelT<T>& model);

// Rebuilds the architecture description from a saved name/shape
// inventory (weight files carry no explicit config). The activation mode
// is not a parameter and cannot be inferred; callers pass it explicitly.
ManConfig infer_config(const std::vector<std::pair<std::string, Shape>>& inventory,
                       bool gelu_in_blocks);

// ---- complexity counters (closed-form, independent of build_model) ----

i64 count_params(const ManConfig& cfg);

struct MaddsBreakdown {
    i64 conv_madds = 0;    // headline count: one multiply-accumulate per conv tap
    i64 bias_adds = 0;     // reported separately
    i64 elementwise = 0;   // one op per element touched by non-conv ops
};

// Multiply-accumulates for one forward pass producing an out_h x out_w
// image; all convolutions run at the (out/scale) feature resolution.
i64 count_madds(const ManConfig& cfg, i64 out_h, i64 out_w);
MaddsBreakdown count_madds_detail(const ManConfig& cfg, i64 out_h, i64 out_w);

}  // namespace man
