#include <cmath>
#include <map>

#include "man/arch.hpp"

namespace man {

namespace {

template <class T>
ConvParamsT<T> make_conv(i64 cout, i64 cin_pg, i64 k, int dilation = 1, int groups = 1) {
    ConvParamsT<T> p;
    p.weight = TensorT<T>(Shape{cout, cin_pg, k, k});
    p.bias = TensorT<T>(channel_vec(cout));
    p.dilation = dilation;
    p.groups = groups;
    return p;
}

template <class T>
LkaLayersT<T> make_lka(i64 c, const LkaSpec& spec) {
    LkaLayersT<T> l;
    l.dw = make_conv<T>(c, 1, spec.dw, 1, static_cast<int>(c));
    l.dwd = make_conv<T>(c, 1, spec.dwd, spec.dilation, static_cast<int>(c));
    l.pw = make_conv<T>(c, c, 1);
    return l;
}

template <class T>
AttentionLayersT<T> make_attention(const ManConfig& cfg) {
    AttentionLayersT<T> a;
    a.kind = cfg.attention;
    if (cfg.attention == AttentionKind::Mlka) {
        const i64 cg = cfg.width / static_cast<i64>(cfg.groups.size());
        for (const auto& spec : cfg.groups) {
            MlkaGroupT<T> g;
            g.lka = make_lka<T>(cg, spec);
            g.gate = make_conv<T>(cg, 1, spec.gate, 1, static_cast<int>(cg));
            a.groups.push_back(std::move(g));
        }
    } else {
        a.single = make_lka<T>(cfg.width, cfg.groups.front());
    }
    return a;
}

template <class T>
FfnLayersT<T> make_ffn(const ManConfig& cfg) {
    const i64 c = cfg.width;
    FfnLayersT<T> f;
    f.kind = cfg.ffn;
    switch (cfg.ffn) {
        case FfnKind::Gsau:
            f.f4 = make_conv<T>(c, c, 1);
            f.f5 = make_conv<T>(c, c, 1);
            f.dw = make_conv<T>(c, 1, cfg.gsau_dw_kernel, 1, static_cast<int>(c));
            f.f6 = make_conv<T>(c, c, 1);
            break;
        case FfnKind::Mlp:
            f.f4 = make_conv<T>(2 * c, c, 1);
            f.f6 = make_conv<T>(c, 2 * c, 1);
            break;
        case FfnKind::Sg:
            f.f4 = make_conv<T>(2 * c, c, 1);
            f.f6 = make_conv<T>(c, c, 1);
            break;
        case FfnKind::Cff:
            // Expansion by 2 with a 7x7 conv grouped by width (two
            // channels per group) between the pointwise layers.
            f.f4 = make_conv<T>(2 * c, c, 1);
            f.dw = make_conv<T>(2 * c, 2, 7, 1, static_cast<int>(c));
            f.f6 = make_conv<T>(c, 2 * c, 1);
            break;
    }
    return f;
}

template <class T>
void visit_conv(const std::string& prefix, ConvParamsT<T>& p,
                const std::function<void(const std::string&, TensorT<T>&)>& fn) {
    if (!p.weight.defined()) return;
    fn(prefix + ".weight", p.weight);
    if (p.bias.defined()) fn(prefix + ".bias", p.bias);
}

template <class T>
void visit_lka(const std::string& prefix, LkaLayersT<T>& l,
               const std::function<void(const std::string&, TensorT<T>&)>& fn) {
    visit_conv(prefix + ".dw", l.dw, fn);
    visit_conv(prefix + ".dwd", l.dwd, fn);
    visit_conv(prefix + ".pw", l.pw, fn);
}

template <class T>
void visit_attention(const std::string& prefix, AttentionLayersT<T>& a,
                     const std::function<void(const std::string&, TensorT<T>&)>& fn) {
    if (a.kind == AttentionKind::Mlka) {
        for (size_t i = 0; i < a.groups.size(); ++i) {
            const std::string g = cat(prefix, ".mlka.group", i);
            visit_lka(g, a.groups[i].lka, fn);
            visit_conv(g + ".gate", a.groups[i].gate, fn);
        }
    } else {
        visit_lka(prefix + ".lka", a.single, fn);
    }
}

}  // namespace

template <class T>
void visit_params(ManModelT<T>& model,
                  const std::function<void(const std::string&, TensorT<T>&)>& fn) {
    visit_conv<T>("sf", model.sf, fn);
    if (model.config.block_style == BlockStyle::Metaformer) {
        for (size_t i = 0; i < model.mabs.size(); ++i) {
            auto& b = model.mabs[i];
            const std::string p = cat("blocks.", i);
            fn(p + ".ln1.gamma", b.ln1.gamma);
            fn(p + ".ln1.beta", b.ln1.beta);
            visit_conv(p + ".f1", b.f1, fn);
            visit_conv(p + ".f2", b.f2, fn);
            visit_attention(p, b.attn, fn);
            visit_conv(p + ".f3", b.f3, fn);
            fn(p + ".lambda1", b.lambda1);
            fn(p + ".ln2.gamma", b.ln2.gamma);
            fn(p + ".ln2.beta", b.ln2.beta);
            visit_conv(p + ".ffn.f4", b.ffn.f4, fn);
            visit_conv(p + ".ffn.f5", b.ffn.f5, fn);
            visit_conv(p + ".ffn.dw", b.ffn.dw, fn);
            visit_conv(p + ".ffn.f6", b.ffn.f6, fn);
            fn(p + ".lambda2", b.lambda2);
        }
    } else {
        for (size_t i = 0; i < model.rcan.size(); ++i) {
            auto& b = model.rcan[i];
            const std::string p = cat("blocks.", i);
            visit_conv(p + ".conv1", b.conv1, fn);
            visit_conv(p + ".conv2", b.conv2, fn);
            visit_attention(p, b.attn, fn);
        }
    }
    if (model.tail.kind == TailKind::Lkat) {
        visit_conv<T>("tail.proj_in", model.tail.proj_in, fn);
        visit_lka<T>("tail.lka", model.tail.lka, fn);
        visit_conv<T>("tail.proj_out", model.tail.proj_out, fn);
    } else {
        visit_conv<T>("tail.conv", model.tail.conv3, fn);
    }
    visit_conv<T>("recon", model.recon, fn);
}

template <class T>
std::vector<std::pair<std::string, TensorT<T>>> named_params(ManModelT<T>& model) {
    std::vector<std::pair<std::string, TensorT<T>>> out;
    visit_params<T>(model, [&](const std::string& name, TensorT<T>& t) {
        out.emplace_back(name, t);
    });
    return out;
}

template <class T>
void set_requires_grad(ManModelT<T>& model, bool v) {
    visit_params<T>(model, [&](const std::string&, TensorT<T>& t) { t.set_requires_grad(v); });
}

template <class T>
void zero_grads(ManModelT<T>& model) {
    visit_params<T>(model, [&](const std::string&, TensorT<T>& t) { t.zero_grad(); });
}

template <class T>
ManModelT<T> build_model(const ManConfig& cfg, u64 seed) {
    cfg.validate();
    ManModelT<T> m;
    m.config = cfg;
    const i64 c = cfg.width;
    m.sf = make_conv<T>(c, 3, 3);
    if (cfg.block_style == BlockStyle::Metaformer) {
        for (int i = 0; i < cfg.n_blocks; ++i) {
            MabBlockT<T> b;
            b.ln1.gamma = TensorT<T>(channel_vec(c));
            b.ln1.beta = TensorT<T>(channel_vec(c));
            b.f1 = make_conv<T>(c, c, 1);
            if (cfg.attention == AttentionKind::Mlka) b.f2 = make_conv<T>(c, c, 1);
            b.attn = make_attention<T>(cfg);
            b.f3 = make_conv<T>(c, c, 1);
            b.lambda1 = TensorT<T>(channel_vec(c));
            b.ln2.gamma = TensorT<T>(channel_vec(c));
            b.ln2.beta = TensorT<T>(channel_vec(c));
            b.ffn = make_ffn<T>(cfg);
            b.lambda2 = TensorT<T>(channel_vec(c));
            m.mabs.push_back(std::move(b));
        }
    } else {
        for (int i = 0; i < cfg.n_blocks; ++i) {
            RcanBlockT<T> b;
            b.conv1 = make_conv<T>(c, c, 3);
            b.conv2 = make_conv<T>(c, c, 3);
            b.attn = make_attention<T>(cfg);
            m.rcan.push_back(std::move(b));
        }
    }
    m.tail.kind = cfg.tail;
    if (cfg.tail == TailKind::Lkat) {
        m.tail.proj_in = make_conv<T>(c, c, 1);
        m.tail.lka = make_lka<T>(c, lka_spec_35());
        m.tail.proj_out = make_conv<T>(c, c, 1);
    } else {
        m.tail.conv3 = make_conv<T>(c, c, 3);
    }
    m.recon = make_conv<T>(3 * cfg.scale * cfg.scale, c, 3);

    Rng rng(seed);
    visit_params<T>(m, [&](const std::string& name, TensorT<T>& t) {
        t.set_requires_grad(true);
        const bool is_weight = name.ends_with(".weight");
        const bool is_gamma = name.ends_with(".gamma");
        const bool is_lambda = name.ends_with("lambda1") || name.ends_with("lambda2");
        T* d = t.data();
        if (is_weight) {
            for (i64 i = 0; i < t.numel(); ++i)
                d[i] = static_cast<T>(rng.truncated_normal(kWeightInitStd));
        } else if (is_gamma) {
            std::fill(d, d + t.numel(), T(1));
        } else if (is_lambda) {
            std::fill(d, d + t.numel(), static_cast<T>(kLambdaInit));
        }
        // biases and layer-norm beta stay zero
    });
    return m;
}

// ---- forward ----

template <class T>
TensorT<T> lka_forward(const TensorT<T>& x, const LkaLayersT<T>& p, TapeT<T>* tape) {
    auto y = conv2d(x, p.dw, tape);
    y = conv2d(y, p.dwd, tape);
    return conv2d(y, p.pw, tape);
}

template <class T>
TensorT<T> mlka_forward(const TensorT<T>& x, const AttentionLayersT<T>& attn, TapeT<T>* tape) {
    if (attn.kind == AttentionKind::LkaSingle) return lka_forward(x, attn.single, tape);
    MAN_CHECK(!attn.groups.empty(), "mlka_forward: no attention groups");
    auto parts = channel_split(x, static_cast<int>(attn.groups.size()), tape);
    std::vector<TensorT<T>> outs;
    outs.reserve(parts.size());
    for (size_t i = 0; i < parts.size(); ++i) {
        auto gate = conv2d(parts[i], attn.groups[i].gate, tape);
        auto lka = lka_forward(parts[i], attn.groups[i].lka, tape);
        outs.push_back(mul(gate, lka, tape));
    }
    return channel_concat(outs, tape);
}

template <class T>
TensorT<T> gsau_forward(const TensorT<T>& x, const TensorT<T>& y, const ConvParamsT<T>& dw,
                        TapeT<T>* tape) {
    MAN_CHECK(x.shape() == y.shape(), "gsau_forward: shape mismatch ", x.shape().str(), " vs ",
              y.shape().str());
    return mul(conv2d(x, dw, tape), y, tape);
}

template <class T>
TensorT<T> ffn_forward(const TensorT<T>& n, const FfnLayersT<T>& ffn, bool gelu_entry,
                       TapeT<T>* tape) {
    switch (ffn.kind) {
        case FfnKind::Gsau: {
            auto u = conv2d(n, ffn.f4, tape);
            if (gelu_entry) u = gelu(u, tape);
            auto v = conv2d(n, ffn.f5, tape);
            return conv2d(gsau_forward(u, v, ffn.dw, tape), ffn.f6, tape);
        }
        case FfnKind::Mlp:
            return conv2d(gelu(conv2d(n, ffn.f4, tape), tape), ffn.f6, tape);
        case FfnKind::Sg: {
            auto e = conv2d(n, ffn.f4, tape);
            auto halves = channel_split(e, 2, tape);
            return conv2d(mul(halves[0], halves[1], tape), ffn.f6, tape);
        }
        case FfnKind::Cff: {
            auto e = conv2d(n, ffn.f4, tape);
            e = gelu(conv2d(e, ffn.dw, tape), tape);
            return conv2d(e, ffn.f6, tape);
        }
    }
    throw std::logic_error("ffn_forward: unknown variant");
}

template <class T>
TensorT<T> mab_forward(const TensorT<T>& x, const MabBlockT<T>& block, const ManConfig& cfg,
                       TapeT<T>* tape) {
    MAN_CHECK(x.shape().c == cfg.width, "mab_forward: expected width ", cfg.width, ", got ",
              x.shape().c);
    const T eps = static_cast<T>(kLayerNormEps);
    auto n = layer_norm(x, block.ln1.gamma, block.ln1.beta, eps, tape);
    auto a = conv2d(n, block.f1, tape);
    if (cfg.gelu_in_blocks) a = gelu(a, tape);
    TensorT<T> y;
    if (block.attn.kind == AttentionKind::Mlka) {
        auto attn = mlka_forward(a, block.attn, tape);
        y = conv2d(mul(attn, conv2d(n, block.f2, tape), tape), block.f3, tape);
    } else {
        y = conv2d(mlka_forward(a, block.attn, tape), block.f3, tape);
    }
    auto x1 = add(x, channel_scale(y, block.lambda1, tape), tape);

    auto n2 = layer_norm(x1, block.ln2.gamma, block.ln2.beta, eps, tape);
    auto z = ffn_forward(n2, block.ffn, cfg.gelu_in_blocks, tape);
    return add(x1, channel_scale(z, block.lambda2, tape), tape);
}

template <class T>
TensorT<T> rcan_block_forward(const TensorT<T>& x, const RcanBlockT<T>& block, TapeT<T>* tape) {
    auto y = conv2d(x, block.conv1, tape);
    y = gelu(y, tape);
    y = conv2d(y, block.conv2, tape);
    auto attn = mlka_forward(y, block.attn, tape);
    return add(x, mul(attn, y, tape), tape);
}

template <class T>
TensorT<T> lkat_forward(const TensorT<T>& x, const TailLayersT<T>& tail, TapeT<T>* tape) {
    if (tail.kind == TailKind::Conv3x3) return conv2d(x, tail.conv3, tape);
    auto y = conv2d(x, tail.proj_in, tape);
    y = lka_forward(y, tail.lka, tape);
    return conv2d(y, tail.proj_out, tape);
}

template <class T>
TensorT<T> man_forward(const TensorT<T>& lr, const ManModelT<T>& model, TapeT<T>* tape) {
    MAN_CHECK(lr.defined() && lr.shape().c == 3, "man_forward: input must have 3 channels, got ",
              lr.defined() ? lr.shape().c : 0);
    MAN_CHECK(lr.shape().h > 0 && lr.shape().w > 0, "man_forward: non-positive spatial dims ",
              lr.shape().str());
    const ManConfig& cfg = model.config;
    auto fp = conv2d(lr, model.sf, tape);
    auto x = fp;
    if (cfg.block_style == BlockStyle::Metaformer) {
        for (const auto& b : model.mabs) x = mab_forward(x, b, cfg, tape);
    } else {
        for (const auto& b : model.rcan) x = rcan_block_forward(x, b, tape);
    }
    auto fr = lkat_forward(x, model.tail, tape);
    auto y = add(fp, fr, tape);
    auto r = conv2d(y, model.recon, tape);
    return pixel_shuffle(r, cfg.scale, tape);
}

// ---- config inference from a saved inventory ----

ManConfig infer_config(const std::vector<std::pair<std::string, Shape>>& inventory,
                       bool gelu_in_blocks) {
    std::map<std::string, Shape> inv(inventory.begin(), inventory.end());
    auto find = [&](const std::string& name) -> const Shape* {
        auto it = inv.find(name);
        return it == inv.end() ? nullptr : &it->second;
    };
    auto require = [&](const std::string& name) -> Shape {
        const Shape* s = find(name);
        if (!s) throw DataError(cat("weight inventory is missing tensor '", name, "'"));
        return *s;
    };

    ManConfig cfg;
    cfg.gelu_in_blocks = gelu_in_blocks;
    const Shape sf = require("sf.weight");
    cfg.width = static_cast<int>(sf.n);

    int blocks = 0;
    while (find(cat("blocks.", blocks, ".f1.weight")) ||
           find(cat("blocks.", blocks, ".conv1.weight")))
        ++blocks;
    if (blocks == 0) throw DataError("weight inventory contains no blocks");
    cfg.n_blocks = blocks;
    cfg.block_style =
        find("blocks.0.conv1.weight") ? BlockStyle::Rcan : BlockStyle::Metaformer;

    auto lka_from = [&](const std::string& prefix) {
        const Shape dw = require(prefix + ".dw.weight");
        const Shape dwd = require(prefix + ".dwd.weight");
        LkaSpec spec;
        spec.dw = static_cast<int>(dw.h);
        spec.dwd = static_cast<int>(dwd.h);
        spec.dilation = (spec.dw + 1) / 2;
        spec.gate = spec.dw;
        spec.target_k = spec.dw + spec.dilation * (spec.dwd - 1);
        for (const auto& preset : default_lka_groups())
            if (preset.dw == spec.dw && preset.dwd == spec.dwd) spec = preset;
        return spec;
    };

    cfg.groups.clear();
    if (find("blocks.0.lka.dw.weight")) {
        cfg.attention = AttentionKind::LkaSingle;
        cfg.groups.push_back(lka_from("blocks.0.lka"));
    } else {
        cfg.attention = AttentionKind::Mlka;
        int gi = 0;
        while (find(cat("blocks.0.mlka.group", gi, ".dw.weight"))) {
            cfg.groups.push_back(lka_from(cat("blocks.0.mlka.group", gi)));
            ++gi;
        }
        if (cfg.groups.empty()) throw DataError("weight inventory has no attention tensors");
    }

    if (cfg.block_style == BlockStyle::Metaformer) {
        const Shape f4 = require("blocks.0.ffn.f4.weight");
        if (find("blocks.0.ffn.f5.weight")) {
            cfg.ffn = FfnKind::Gsau;
            cfg.gsau_dw_kernel = static_cast<int>(require("blocks.0.ffn.dw.weight").h);
        } else if (find("blocks.0.ffn.dw.weight")) {
            cfg.ffn = FfnKind::Cff;
        } else if (f4.n == 2 * cfg.width && require("blocks.0.ffn.f6.weight").c == 2 * cfg.width) {
            cfg.ffn = FfnKind::Mlp;
        } else {
            cfg.ffn = FfnKind::Sg;
        }
    }

    cfg.tail = find("tail.conv.weight") ? TailKind::Conv3x3 : TailKind::Lkat;

    const Shape recon = require("recon.weight");
    const i64 s2 = recon.n / 3;
    int scale = 0;
    for (int s = 1; s <= 8; ++s)
        if (static_cast<i64>(s) * s == s2) scale = s;
    if (scale == 0 || recon.n % 3 != 0)
        throw DataError(cat("reconstruction head has ", recon.n,
                            " output channels, not 3*s^2 for any integer scale"));
    cfg.scale = scale;

    cfg.variant = Variant::Custom;
    for (Variant v : {Variant::Tiny, Variant::Light, Variant::Classical}) {
        ManConfig p = ManConfig::preset(v, cfg.scale);
        if (p.n_blocks == cfg.n_blocks && p.width == cfg.width) cfg.variant = v;
    }
    cfg.validate();
    return cfg;
}

#define MAN_INSTANTIATE(T)                                                                    \
    template void visit_params(ManModelT<T>&,                                                 \
                               const std::function<void(const std::string&, TensorT<T>&)>&); \
    template std::vector<std::pair<std::string, TensorT<T>>> named_params(ManModelT<T>&);    \
    template void set_requires_grad(ManModelT<T>&, bool);                                    \
    template void zero_grads(ManModelT<T>&);                                                 \
    template ManModelT<T> build_model(const ManConfig&, u64);                                \
    template TensorT<T> lka_forward(const TensorT<T>&, const LkaLayersT<T>&, TapeT<T>*);     \
    template TensorT<T> mlka_forward(const TensorT<T>&, const AttentionLayersT<T>&,          \
                                     TapeT<T>*);                                             \
    template TensorT<T> gsau_forward(const TensorT<T>&, const TensorT<T>&,                   \
                                     const ConvParamsT<T>&, TapeT<T>*);                      \
    template TensorT<T> ffn_forward(const TensorT<T>&, const FfnLayersT<T>&, bool,           \
                                    TapeT<T>*);                                              \
    template TensorT<T> mab_forward(const TensorT<T>&, const MabBlockT<T>&, const ManConfig&, \
                                    TapeT<T>*);                                              \
    template TensorT<T> rcan_block_forward(const TensorT<T>&, const RcanBlockT<T>&,          \
                                           TapeT<T>*);                                       \
    template TensorT<T> lkat_forward(const TensorT<T>&, const TailLayersT<T>&, TapeT<T>*);   \
    template TensorT<T> man_forward(const TensorT<T>&, const ManModelT<T>&, TapeT<T>*);

MAN_INSTANTIATE(float)
MAN_INSTANTIATE(double)
#undef MAN_INSTANTIATE

}  // namespace man
