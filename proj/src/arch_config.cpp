#include "man/arch.hpp"

namespace man {

LkaSpec lka_spec_7() { return LkaSpec{7, 2, 3, 5, 3}; }
LkaSpec lka_spec_21() { return LkaSpec{21, 3, 5, 7, 5}; }
LkaSpec lka_spec_35() { return LkaSpec{35, 4, 7, 9, 7}; }

std::vector<LkaSpec> default_lka_groups() {
    return {lka_spec_7(), lka_spec_21(), lka_spec_35()};
}

LkaSpec lka_spec_from_string(const std::string& s) {
    if (s == "3-5-1") return lka_spec_7();
    if (s == "5-7-1") return lka_spec_21();
    if (s == "7-9-1") return lka_spec_35();
    throw ConfigError(cat("unknown LKA decomposition '", s,
                          "' (expected 3-5-1, 5-7-1 or 7-9-1)"));
}

ManConfig ManConfig::preset(Variant v, int scale) {
    ManConfig c;
    c.variant = v;
    c.scale = scale;
    switch (v) {
        case Variant::Tiny:
            c.n_blocks = 5;
            c.width = 48;
            break;
        case Variant::Light:
            c.n_blocks = 24;
            c.width = 60;
            break;
        case Variant::Classical:
            c.n_blocks = 36;
            c.width = 180;
            break;
        case Variant::Custom:
            throw ConfigError("custom variant has no preset; set blocks/width explicitly");
    }
    c.validate();
    return c;
}

void ManConfig::validate() const {
    if (scale < 2 || scale > 4) throw ConfigError(cat("scale must be 2, 3 or 4, got ", scale));
    if (n_blocks < 1) throw ConfigError(cat("n_blocks must be positive, got ", n_blocks));
    if (width < 1) throw ConfigError(cat("width must be positive, got ", width));
    if (groups.empty()) throw ConfigError("at least one LKA group is required");
    for (const auto& g : groups) {
        if (g.dw != 2 * g.dilation - 1)
            throw ConfigError(cat("LKA spec ", g.str(), ": depthwise kernel must equal 2d-1"));
        if (g.dwd % 2 == 0 || g.dwd < 1 || g.dw < 1)
            throw ConfigError(cat("LKA spec ", g.str(), ": kernels must be odd and positive"));
        if (g.gate != g.dw)
            throw ConfigError(cat("LKA spec ", g.str(), ": gate kernel must equal the depthwise kernel"));
    }
    if (attention == AttentionKind::Mlka) {
        if (width % static_cast<int>(groups.size()) != 0)
            throw ConfigError(cat("width ", width, " is not divisible into ", groups.size(),
                                  " attention groups"));
    } else if (groups.size() != 1) {
        throw ConfigError("single-LKA attention takes exactly one decomposition");
    }
    if (gsau_dw_kernel < 1 || gsau_dw_kernel % 2 == 0)
        throw ConfigError(cat("gsau_dw_kernel must be odd and positive, got ", gsau_dw_kernel));
}

Variant variant_from_string(const std::string& s) {
    if (s == "tiny") return Variant::Tiny;
    if (s == "light") return Variant::Light;
    if (s == "classical") return Variant::Classical;
    if (s == "custom") return Variant::Custom;
    throw ConfigError(cat("unknown variant '", s, "'"));
}

std::string to_string(Variant v) {
    switch (v) {
        case Variant::Tiny: return "tiny";
        case Variant::Light: return "light";
        case Variant::Classical: return "classical";
        default: return "custom";
    }
}
std::string to_string(BlockStyle v) {
    return v == BlockStyle::Metaformer ? "metaformer" : "rcan";
}
std::string to_string(FfnKind v) {
    switch (v) {
        case FfnKind::Gsau: return "gsau";
        case FfnKind::Mlp: return "mlp";
        case FfnKind::Sg: return "sg";
        default: return "cff";
    }
}
std::string to_string(TailKind v) { return v == TailKind::Lkat ? "lkat" : "conv3x3"; }

}  // namespace man
