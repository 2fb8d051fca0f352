#include "man/arch.hpp"

namespace man {

namespace {

// Closed-form layer inventory, kept deliberately separate from
// build_model so the "sum over built tensors" test is a real oracle.

i64 conv_p(i64 cout, i64 cin_pg, i64 k) { return cout * cin_pg * k * k + cout; }

i64 lka_p(i64 c, const LkaSpec& s) {
    return conv_p(c, 1, s.dw) + conv_p(c, 1, s.dwd) + conv_p(c, c, 1);
}

i64 attention_p(const ManConfig& cfg) {
    const i64 c = cfg.width;
    if (cfg.attention == AttentionKind::LkaSingle) return lka_p(c, cfg.groups.front());
    const i64 cg = c / static_cast<i64>(cfg.groups.size());
    i64 total = 0;
    for (const auto& s : cfg.groups) total += lka_p(cg, s) + conv_p(cg, 1, s.gate);
    return total;
}

i64 ffn_p(const ManConfig& cfg) {
    const i64 c = cfg.width;
    switch (cfg.ffn) {
        case FfnKind::Gsau:
            return 3 * conv_p(c, c, 1) + conv_p(c, 1, cfg.gsau_dw_kernel);
        case FfnKind::Mlp:
            return conv_p(2 * c, c, 1) + conv_p(c, 2 * c, 1);
        case FfnKind::Sg:
            return conv_p(2 * c, c, 1) + conv_p(c, c, 1);
        case FfnKind::Cff:
            return conv_p(2 * c, c, 1) + conv_p(2 * c, 2, 7) + conv_p(c, 2 * c, 1);
    }
    return 0;
}

i64 block_p(const ManConfig& cfg) {
    const i64 c = cfg.width;
    if (cfg.block_style == BlockStyle::Rcan)
        return 2 * conv_p(c, c, 3) + attention_p(cfg);
    i64 total = 2 * c;                                       // ln1
    total += conv_p(c, c, 1);                                // f1
    if (cfg.attention == AttentionKind::Mlka) total += conv_p(c, c, 1);  // f2
    total += attention_p(cfg);
    total += conv_p(c, c, 1);  // f3
    total += c;                // lambda1
    total += 2 * c;            // ln2
    total += ffn_p(cfg);
    total += c;  // lambda2
    return total;
}

i64 tail_p(const ManConfig& cfg) {
    const i64 c = cfg.width;
    if (cfg.tail == TailKind::Conv3x3) return conv_p(c, c, 3);
    return 2 * conv_p(c, c, 1) + lka_p(c, lka_spec_35());
}

}  // namespace

i64 count_params(const ManConfig& cfg) {
    cfg.validate();
    const i64 c = cfg.width;
    i64 total = conv_p(c, 3, 3);                            // shallow feature
    total += static_cast<i64>(cfg.n_blocks) * block_p(cfg);  // deep feature blocks
    total += tail_p(cfg);
    total += conv_p(3 * cfg.scale * cfg.scale, c, 3);  // reconstruction head
    return total;
}

// ---- multiply-accumulate counting ----
//
// Convention: one conv tap = one MAdd, counted as
// c_out * (c_in/groups) * k^2 per output position; biases and
// elementwise work are tallied separately. All convolutions run at the
// (out/scale) feature resolution; the pixel shuffle is free.

namespace {

struct Acc {
    MaddsBreakdown b;
    i64 hw = 0;

    void conv(i64 cout, i64 cin_pg, i64 k, bool bias = true) {
        b.conv_madds += cout * cin_pg * k * k * hw;
        if (bias) b.bias_adds += cout * hw;
    }
    void elementwise(i64 channels, i64 count = 1) { b.elementwise += channels * hw * count; }

    void lka(i64 c, const LkaSpec& s) {
        conv(c, 1, s.dw);
        conv(c, 1, s.dwd);
        conv(c, c, 1);
    }
};

}  // namespace

MaddsBreakdown count_madds_detail(const ManConfig& cfg, i64 out_h, i64 out_w) {
    cfg.validate();
    MAN_CHECK(out_h > 0 && out_w > 0, "count_madds: output size must be positive");
    Acc acc;
    acc.hw = (out_h / cfg.scale) * (out_w / cfg.scale);
    const i64 c = cfg.width;

    acc.conv(c, 3, 3);  // shallow feature

    for (int i = 0; i < cfg.n_blocks; ++i) {
        if (cfg.block_style == BlockStyle::Rcan) {
            acc.conv(c, c, 3);
            acc.elementwise(c);  // gelu
            acc.conv(c, c, 3);
        } else {
            acc.elementwise(c, 6);  // layer norm 1 (stats + normalize + affine)
            acc.conv(c, c, 1);      // f1
            if (cfg.gelu_in_blocks) acc.elementwise(c);
            if (cfg.attention == AttentionKind::Mlka) acc.conv(c, c, 1);  // f2
        }
        // attention
        if (cfg.attention == AttentionKind::LkaSingle) {
            acc.lka(c, cfg.groups.front());
        } else {
            const i64 cg = c / static_cast<i64>(cfg.groups.size());
            for (const auto& s : cfg.groups) {
                acc.lka(cg, s);
                acc.conv(cg, 1, s.gate);
                acc.elementwise(cg);  // gate multiply
            }
        }
        if (cfg.block_style == BlockStyle::Rcan) {
            acc.elementwise(c, 2);  // attention multiply + residual add
            continue;
        }
        if (cfg.attention == AttentionKind::Mlka) acc.elementwise(c);  // x f2 branch
        acc.conv(c, c, 1);      // f3
        acc.elementwise(c, 2);  // lambda1 scale + residual add
        acc.elementwise(c, 6);  // layer norm 2
        switch (cfg.ffn) {
            case FfnKind::Gsau:
                acc.conv(c, c, 1);
                if (cfg.gelu_in_blocks) acc.elementwise(c);
                acc.conv(c, c, 1);
                acc.conv(c, 1, cfg.gsau_dw_kernel);
                acc.elementwise(c);  // spatial gate multiply
                acc.conv(c, c, 1);
                break;
            case FfnKind::Mlp:
                acc.conv(2 * c, c, 1);
                acc.elementwise(2 * c);  // gelu
                acc.conv(c, 2 * c, 1);
                break;
            case FfnKind::Sg:
                acc.conv(2 * c, c, 1);
                acc.elementwise(c);  // half-by-half multiply
                acc.conv(c, c, 1);
                break;
            case FfnKind::Cff:
                acc.conv(2 * c, c, 1);
                acc.conv(2 * c, 2, 7);
                acc.elementwise(2 * c);  // gelu
                acc.conv(c, 2 * c, 1);
                break;
        }
        acc.elementwise(c, 2);  // lambda2 scale + residual add
    }

    if (cfg.tail == TailKind::Conv3x3) {
        acc.conv(c, c, 3);
    } else {
        acc.conv(c, c, 1);
        acc.lka(c, lka_spec_35());
        acc.conv(c, c, 1);
    }
    acc.elementwise(c);  // long residual add

    acc.conv(3 * cfg.scale * cfg.scale, c, 3);            // reconstruction conv
    acc.b.elementwise += 3 * out_h * out_w;               // pixel shuffle data movement
    return acc.b;
}

i64 count_madds(const ManConfig& cfg, i64 out_h, i64 out_w) {
    return count_madds_detail(cfg, out_h, out_w).conv_madds;
}

}  // namespace man
