#include "man/serialize.hpp"

#include <zlib.h>

#include <cstring>
#include <map>
#include <fstream>

namespace man {

namespace {

constexpr u32 kVersion = 1;
constexpr u8 kDtypeF32 = 0;

void put_bytes(std::vector<u8>& out, const void* p, size_t n) {
    const u8* b = static_cast<const u8*>(p);
    out.insert(out.end(), b, b + n);
}
void put_u16(std::vector<u8>& out, u16 v) {
    out.push_back(static_cast<u8>(v));
    out.push_back(static_cast<u8>(v >> 8));
}
void put_u32(std::vector<u8>& out, u32 v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<u8>(v >> (8 * i)));
}
void put_u64(std::vector<u8>& out, u64 v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<u8>(v >> (8 * i)));
}

u32 crc_of(const u8* data, size_t n) {
    return static_cast<u32>(::crc32(0L, data, static_cast<uInt>(n)));
}

struct Reader {
    const u8* p;
    size_t n;
    size_t pos = 0;
    std::string path;

    void need(size_t k, const char* what) {
        if (pos + k > n)
            throw DataError(cat("'", path, "': truncated file while reading ", what));
    }
    void take(void* dst, size_t k, const char* what) {
        need(k, what);
        std::memcpy(dst, p + pos, k);
        pos += k;
    }
    u16 u16v(const char* what) {
        need(2, what);
        u16 v = static_cast<u16>(p[pos] | (p[pos + 1] << 8));
        pos += 2;
        return v;
    }
    u32 u32v(const char* what) {
        need(4, what);
        u32 v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<u32>(p[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    u64 u64v(const char* what) {
        need(8, what);
        u64 v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<u64>(p[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    u8 u8v(const char* what) {
        need(1, what);
        return p[pos++];
    }
};

void put_tensor(std::vector<u8>& out, const std::string& name, const Tensor& t) {
    MAN_CHECK(name.size() <= 0xffff, "tensor name too long");
    put_u16(out, static_cast<u16>(name.size()));
    put_bytes(out, name.data(), name.size());
    out.push_back(4);  // rank
    const Shape s = t.shape();
    put_u32(out, static_cast<u32>(s.n));
    put_u32(out, static_cast<u32>(s.c));
    put_u32(out, static_cast<u32>(s.h));
    put_u32(out, static_cast<u32>(s.w));
    out.push_back(kDtypeF32);
    put_bytes(out, t.data(), static_cast<size_t>(t.numel()) * sizeof(float));
}

struct NamedTensor {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

NamedTensor read_tensor(Reader& r, bool want_data) {
    NamedTensor t;
    const u16 len = r.u16v("tensor name length");
    t.name.resize(len);
    r.take(t.name.data(), len, "tensor name");
    const u8 rank = r.u8v("tensor rank");
    if (rank != 4)
        throw DataError(cat("'", r.path, "': tensor '", t.name, "' has rank ", int(rank),
                            ", expected 4"));
    i64 dims[4];
    for (auto& d : dims) d = r.u32v("tensor dims");
    t.shape = Shape{dims[0], dims[1], dims[2], dims[3]};
    const u8 dtype = r.u8v("tensor dtype");
    if (dtype != kDtypeF32)
        throw DataError(cat("'", r.path, "': tensor '", t.name, "' has unsupported dtype ",
                            int(dtype)));
    const size_t bytes = static_cast<size_t>(t.shape.numel()) * sizeof(float);
    if (want_data) {
        t.data.resize(static_cast<size_t>(t.shape.numel()));
        r.take(t.data.data(), bytes, "tensor payload");
    } else {
        r.need(bytes, "tensor payload");
        r.pos += bytes;
    }
    return t;
}

std::vector<u8> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(cat("cannot open '", path, "' for reading"));
    std::vector<u8> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
    return bytes;
}

void write_file(const std::string& path, const std::vector<u8>& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError(cat("cannot open '", path, "' for writing"));
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError(cat("failed writing '", path, "'"));
}

std::vector<u8> weight_section(ManModel& model) {
    std::vector<u8> out;
    put_bytes(out, "MANW", 4);
    put_u32(out, kVersion);
    auto params = named_params(model);
    put_u32(out, static_cast<u32>(params.size()));
    for (auto& [name, t] : params) put_tensor(out, name, t);
    put_u32(out, crc_of(out.data(), out.size()));
    return out;
}

// Parses the MANW section; returns tensors and leaves r positioned after
// the section CRC.
std::vector<NamedTensor> parse_weight_section(Reader& r, bool want_data) {
    char magic[4];
    r.take(magic, 4, "magic");
    if (std::memcmp(magic, "MANW", 4) != 0)
        throw DataError(cat("'", r.path, "' is not a MAN weight file (bad magic)"));
    const u32 version = r.u32v("version");
    if (version != kVersion)
        throw DataError(cat("'", r.path, "': unsupported weight format version ", version));
    const u32 count = r.u32v("tensor count");
    std::vector<NamedTensor> tensors;
    tensors.reserve(count);
    for (u32 i = 0; i < count; ++i) tensors.push_back(read_tensor(r, want_data));
    const size_t body_end = r.pos;
    const u32 stored = r.u32v("checksum");
    if (crc_of(r.p, body_end) != stored)
        throw DataError(cat("'", r.path, "': CRC mismatch, file is corrupted"));
    return tensors;
}

}  // namespace

void save_weights(ManModel& model, const std::string& path) {
    write_file(path, weight_section(model));
}

std::vector<std::pair<std::string, Shape>> read_weight_inventory(const std::string& path) {
    auto bytes = read_file(path);
    Reader r{bytes.data(), bytes.size(), 0, path};
    auto tensors = parse_weight_section(r, /*want_data=*/false);
    std::vector<std::pair<std::string, Shape>> out;
    out.reserve(tensors.size());
    for (auto& t : tensors) out.emplace_back(std::move(t.name), t.shape);
    return out;
}

namespace {

void fill_model_from(ManModel& model, std::vector<NamedTensor>& tensors,
                     const std::string& path) {
    std::map<std::string, NamedTensor*> by_name;
    for (auto& t : tensors) by_name[t.name] = &t;
    size_t used = 0;
    visit_params<float>(model, [&](const std::string& name, Tensor& dst) {
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw DataError(cat("'", path, "': missing tensor '", name, "' for this config"));
        if (it->second->shape != dst.shape())
            throw DataError(cat("'", path, "': tensor '", name, "' has shape ",
                                it->second->shape.str(), ", config expects ",
                                dst.shape().str()));
        std::copy(it->second->data.begin(), it->second->data.end(), dst.data());
        ++used;
    });
    if (used != tensors.size())
        throw DataError(cat("'", path, "': file carries ", tensors.size(),
                            " tensors but the config consumes ", used));
}

}  // namespace

void load_weights_into(ManModel& model, const std::string& path) {
    auto bytes = read_file(path);
    Reader r{bytes.data(), bytes.size(), 0, path};
    auto tensors = parse_weight_section(r, /*want_data=*/true);
    fill_model_from(model, tensors, path);
}

ManModel load_weights(const std::string& path, bool gelu_in_blocks) {
    auto bytes = read_file(path);
    Reader r{bytes.data(), bytes.size(), 0, path};
    auto tensors = parse_weight_section(r, /*want_data=*/true);
    std::vector<std::pair<std::string, Shape>> inventory;
    inventory.reserve(tensors.size());
    for (const auto& t : tensors) inventory.emplace_back(t.name, t.shape);
    ManModel model = build_model<float>(infer_config(inventory, gelu_in_blocks), /*seed=*/0);
    fill_model_from(model, tensors, path);
    return model;
}

void save_checkpoint(ManModel& model, const TrainState& st, const std::string& path) {
    std::vector<u8> out = weight_section(model);
    const size_t opts_begin = out.size();
    put_bytes(out, "OPTS", 4);
    MAN_CHECK(st.adam.names.size() == st.adam.m.size() && st.adam.m.size() == st.adam.v.size(),
              "save_checkpoint: malformed optimizer state");
    put_u32(out, static_cast<u32>(2 * st.adam.names.size()));
    for (size_t i = 0; i < st.adam.names.size(); ++i) {
        put_tensor(out, st.adam.names[i] + ".m", st.adam.m[i]);
        put_tensor(out, st.adam.names[i] + ".v", st.adam.v[i]);
    }
    // One Adam step per training iteration, so the stored step doubles
    // as the iteration counter.
    MAN_CHECK(st.adam.step == st.iter, "save_checkpoint: step/iteration mismatch");
    put_u64(out, static_cast<u64>(st.adam.step));
    const auto rng_bytes = st.rng.state_bytes();
    put_bytes(out, rng_bytes.data(), rng_bytes.size());
    put_u32(out, crc_of(out.data() + opts_begin, out.size() - opts_begin));
    write_file(path, out);
}

TrainState load_checkpoint(ManModel& model, const std::string& path) {
    auto bytes = read_file(path);
    Reader r{bytes.data(), bytes.size(), 0, path};
    auto tensors = parse_weight_section(r, /*want_data=*/true);
    fill_model_from(model, tensors, path);

    const size_t opts_begin = r.pos;
    char magic[4];
    r.take(magic, 4, "optimizer section magic");
    if (std::memcmp(magic, "OPTS", 4) != 0)
        throw DataError(cat("'", path, "' has no optimizer section (plain weight file?)"));
    const u32 count = r.u32v("optimizer tensor count");
    std::vector<NamedTensor> opt;
    opt.reserve(count);
    for (u32 i = 0; i < count; ++i) opt.push_back(read_tensor(r, /*want_data=*/true));

    TrainState st;
    st.adam = AdamState::init(model);
    std::map<std::string, NamedTensor*> by_name;
    for (auto& t : opt) by_name[t.name] = &t;
    for (size_t i = 0; i < st.adam.names.size(); ++i) {
        for (const char* suffix : {".m", ".v"}) {
            auto it = by_name.find(st.adam.names[i] + suffix);
            if (it == by_name.end())
                throw DataError(cat("'", path, "': missing optimizer tensor '",
                                    st.adam.names[i], suffix, "'"));
            auto& dst = std::strcmp(suffix, ".m") == 0 ? st.adam.m[i] : st.adam.v[i];
            if (it->second->shape != dst.shape())
                throw DataError(cat("'", path, "': optimizer tensor '", it->second->name,
                                    "' shape mismatch"));
            std::copy(it->second->data.begin(), it->second->data.end(), dst.data());
        }
    }
    st.adam.step = static_cast<i64>(r.u64v("optimizer step"));
    std::array<u8, 32> rng_bytes{};
    r.take(rng_bytes.data(), rng_bytes.size(), "rng state");
    st.rng.set_state_bytes(rng_bytes);
    st.iter = st.adam.step;
    const size_t opts_end = r.pos;
    const u32 stored = r.u32v("optimizer checksum");
    if (crc_of(r.p + opts_begin, opts_end - opts_begin) != stored)
        throw DataError(cat("'", path, "': optimizer section CRC mismatch"));
    return st;
}

bool is_checkpoint_file(const std::string& path) {
    auto bytes = read_file(path);
    Reader r{bytes.data(), bytes.size(), 0, path};
    (void)parse_weight_section(r, /*want_data=*/false);
    return r.pos + 4 <= r.n && std::memcmp(r.p + r.pos, "OPTS", 4) == 0;
}

}  // namespace man
