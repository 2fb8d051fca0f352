#include "man/dataset.hpp"

#include <algorithm>
#include <filesystem>

#include "man/image_io.hpp"
#include "man/resize.hpp"

namespace fs = std::filesystem;

namespace man {

namespace {

Tensor rot90_ccw(const Tensor& x) {
    const Shape s = x.shape();
    Tensor out(Shape{s.n, s.c, s.w, s.h});
    for (i64 n = 0; n < s.n; ++n)
        for (i64 c = 0; c < s.c; ++c) {
            const float* src = x.data() + (n * s.c + c) * s.h * s.w;
            float* dst = out.data() + (n * s.c + c) * s.h * s.w;
            // out(y,x) = in(x, w-1-y) with out dims (w,h)
            for (i64 y = 0; y < s.w; ++y)
                for (i64 xx = 0; xx < s.h; ++xx)
                    dst[y * s.h + xx] = src[xx * s.w + (s.w - 1 - y)];
        }
    return out;
}

Tensor hflip(const Tensor& x) {
    const Shape s = x.shape();
    Tensor out(s);
    for (i64 n = 0; n < s.n; ++n)
        for (i64 c = 0; c < s.c; ++c) {
            const float* src = x.data() + (n * s.c + c) * s.h * s.w;
            float* dst = out.data() + (n * s.c + c) * s.h * s.w;
            for (i64 y = 0; y < s.h; ++y)
                for (i64 xx = 0; xx < s.w; ++xx)
                    dst[y * s.w + xx] = src[y * s.w + (s.w - 1 - xx)];
        }
    return out;
}

Tensor crop(const Tensor& x, i64 top, i64 left, i64 h, i64 w) {
    const Shape s = x.shape();
    Tensor out(Shape{s.n, s.c, h, w});
    for (i64 n = 0; n < s.n; ++n)
        for (i64 c = 0; c < s.c; ++c) {
            const float* src = x.data() + (n * s.c + c) * s.h * s.w;
            float* dst = out.data() + (n * s.c + c) * h * w;
            for (i64 y = 0; y < h; ++y)
                std::copy(src + (top + y) * s.w + left, src + (top + y) * s.w + left + w,
                          dst + y * w);
        }
    return out;
}

std::vector<fs::path> list_pngs(const fs::path& dir) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(),
                       [](unsigned char c) { return std::tolower(c); });
        if (ext == ".png") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    return files;
}

}  // namespace

Tensor transform_dihedral(const Tensor& x, int t) {
    MAN_CHECK(t >= 0 && t < 8, "transform_dihedral: index must be in [0,8), got ", t);
    Tensor y = (t / 4) ? hflip(x) : x;
    for (int r = 0; r < t % 4; ++r) y = rot90_ccw(y);
    return y;
}

int inverse_dihedral_rot(int t) { return (4 - t % 4) % 4; }

Tensor inverse_transform_dihedral(const Tensor& x, int t) {
    MAN_CHECK(t >= 0 && t < 8, "inverse_transform_dihedral: index must be in [0,8), got ", t);
    Tensor y = x;
    for (int r = 0; r < inverse_dihedral_rot(t); ++r) y = rot90_ccw(y);
    if (t / 4) y = hflip(y);
    return y;
}

ImagePair degrade(const Tensor& hr, int scale, const std::string& id) {
    MAN_CHECK(hr.defined() && hr.shape().c == 3, "degrade: expected 1x3xHxW image");
    MAN_CHECK(scale >= 1, "degrade: scale must be positive");
    const Shape s = hr.shape();
    if (s.h < scale || s.w < scale)
        throw DataError(cat("image '", id, "' (", s.h, "x", s.w,
                            ") is smaller than the scale factor ", scale));
    const i64 ch = s.h - s.h % scale;
    const i64 cw = s.w - s.w % scale;
    ImagePair pair;
    pair.hr = (ch == s.h && cw == s.w)
                  ? hr
                  : crop(hr, (s.h - ch) / 2, (s.w - cw) / 2, ch, cw);
    pair.lr = bicubic_resize(pair.hr, ch / scale, cw / scale, /*antialias=*/true);
    pair.scale = scale;
    pair.id = id;
    return pair;
}

std::pair<Tensor, Tensor> sample_patch(const ImagePair& pair, int patch, Rng& rng) {
    const Shape ls = pair.lr.shape();
    if (ls.h < patch || ls.w < patch)
        throw DataError(cat("patch size ", patch, " exceeds LR image '", pair.id, "' (", ls.h,
                            "x", ls.w, ")"));
    const i64 top = rng.uniform_int(ls.h - patch + 1);
    const i64 left = rng.uniform_int(ls.w - patch + 1);
    const i64 s = pair.scale;
    return {crop(pair.lr, top, left, patch, patch),
            crop(pair.hr, top * s, left * s, static_cast<i64>(patch) * s,
                 static_cast<i64>(patch) * s)};
}

void augment_pair(Tensor& lr_patch, Tensor& hr_patch, Rng& rng) {
    MAN_CHECK(lr_patch.shape().h == lr_patch.shape().w &&
                  hr_patch.shape().h == hr_patch.shape().w,
              "augment_pair: patches must be square");
    const int t = static_cast<int>(rng.uniform_int(8));
    if (t == 0) return;
    lr_patch = transform_dihedral(lr_patch, t);
    hr_patch = transform_dihedral(hr_patch, t);
}

PatchBatch sample_batch(const DatasetIndex& data, int batch, int patch, Rng& rng) {
    if (data.pairs.empty()) throw DataError("cannot sample a batch from an empty dataset");
    PatchBatch out;
    out.rng_state = rng.state_bytes();
    const i64 s = data.scale;
    out.lr = Tensor(Shape{batch, 3, patch, patch});
    out.hr = Tensor(Shape{batch, 3, patch * s, patch * s});
    const i64 lr_sz = 3 * static_cast<i64>(patch) * patch;
    const i64 hr_sz = lr_sz * s * s;
    for (int b = 0; b < batch; ++b) {
        const auto& pair =
            data.pairs[static_cast<size_t>(rng.uniform_int(static_cast<i64>(data.pairs.size())))];
        auto [lp, hp] = sample_patch(pair, patch, rng);
        augment_pair(lp, hp, rng);
        std::copy(lp.data(), lp.data() + lr_sz, out.lr.data() + b * lr_sz);
        std::copy(hp.data(), hp.data() + hr_sz, out.hr.data() + b * hr_sz);
    }
    return out;
}

DatasetIndex load_dataset(const std::string& root, int scale, DatasetMode mode) {
    const fs::path base(root);
    if (!fs::is_directory(base)) throw DataError(cat("dataset directory '", root, "' not found"));
    fs::path hr_dir = base / "HR";
    if (!fs::is_directory(hr_dir)) hr_dir = base;
    auto files = list_pngs(hr_dir);
    if (files.empty()) throw DataError(cat("no images in '", hr_dir.string(), "'"));

    DatasetIndex idx;
    idx.scale = scale;
    idx.mode = mode;
    const fs::path lr_dir = base / cat("LRx", scale);
    if (mode == DatasetMode::PairedDirs && !fs::is_directory(lr_dir))
        throw DataError(cat("paired mode requires '", lr_dir.string(), "'"));

    for (const auto& f : files) {
        const std::string id = f.stem().string();
        Tensor hr = read_png(f.string());
        if (mode == DatasetMode::HrOnly) {
            idx.pairs.push_back(degrade(hr, scale, id));
            continue;
        }
        const fs::path lf = lr_dir / f.filename();
        if (!fs::exists(lf))
            throw DataError(cat("missing LR file '", lf.string(), "' for '", id, "'"));
        Tensor lr = read_png(lf.string());
        const Shape hs = hr.shape(), ls = lr.shape();
        if (hs.h != ls.h * scale || hs.w != ls.w * scale)
            throw DataError(cat("pair '", id, "': HR ", hs.h, "x", hs.w, " is not ", scale,
                                "x the LR ", ls.h, "x", ls.w));
        ImagePair pair;
        pair.hr = std::move(hr);
        pair.lr = std::move(lr);
        pair.scale = scale;
        pair.id = id;
        idx.pairs.push_back(std::move(pair));
    }
    return idx;
}

}  // namespace man
