#include "dclseg/checkpoint.hpp"

#include <zlib.h>

#include <fstream>

#include "binary_io.hpp"
#include "dclseg/errors.hpp"

namespace dclseg {

namespace {

using detail::ByteReader;
using detail::ByteWriter;

constexpr char kMagic[8] = {'D', 'C', 'L', 'S', 'C', 'K', 'P', 'T'};
constexpr std::size_t kHeaderSize = 8 + 4 + 8;

std::uint32_t crc_of(const char* data, std::size_t n) {
    uLong crc = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed large buffers in pieces.
    while (n > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
        data += chunk;
        n -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

void put_sizes(ByteWriter& w, const std::vector<std::size_t>& v) {
    w.u32(static_cast<std::uint32_t>(v.size()));
    for (std::size_t x : v) w.u64(x);
}

std::vector<std::size_t> get_sizes(ByteReader& r) {
    std::vector<std::size_t> v(r.u32());
    for (auto& x : v) x = static_cast<std::size_t>(r.u64());
    return v;
}

void put_tensor(ByteWriter& w, const Tensor& t) {
    w.u8(2);  // f64
    put_sizes(w, t.shape());
    for (double v : t.values()) w.f64(v);
}

Tensor get_tensor(ByteReader& r) {
    if (r.u8() != 2) throw FormatError("checkpoint tensor has an unsupported dtype");
    Shape shape = get_sizes(r);
    const std::size_t n = shape_size(shape);
    r.need(n * 8);
    std::vector<double> values(n);
    for (double& v : values) v = r.f64();
    return Tensor(shape, std::move(values));
}

void put_decoder(ByteWriter& w, const DecoderConfig& d) {
    w.str(to_string(d.mode));
    w.u64(d.stages);
    put_sizes(w, d.channels);
    w.u64(d.num_classes);
    w.u64(d.init_seed);
    w.u8(d.zero_init_head ? 1 : 0);
}

DecoderConfig get_decoder(ByteReader& r) {
    DecoderConfig d;
    d.mode = parse_upscale_mode(r.str());
    d.stages = r.u64();
    d.channels = get_sizes(r);
    d.num_classes = r.u64();
    d.init_seed = r.u64();
    d.zero_init_head = r.u8() != 0;
    return d;
}

}  // namespace

std::string serialize_model(const ModelState& model) {
    auto& m = const_cast<ModelState&>(model);
    const ModelConfig& cfg = model.config();
    ByteWriter p;
    p.u64(model.step);
    p.str(model.rng.serialize());

    p.str(to_string(cfg.encoder.preset));
    p.u64(cfg.encoder.in_channels);
    put_sizes(p, cfg.encoder.widths);
    put_sizes(p, cfg.encoder.blocks);
    p.u64(cfg.embed_dim);
    p.u64(cfg.global_hidden);
    p.u64(cfg.init_seed);
    put_decoder(p, cfg.decoder1);
    put_decoder(p, cfg.decoder2);
    p.str(to_string(cfg.encoder_mode));

    p.u32(static_cast<std::uint32_t>(model.meta.size()));
    for (const auto& [k, v] : model.meta) {
        p.str(k);
        p.str(v);
    }
    const nn::ParameterList params = m.parameters();
    p.u32(static_cast<std::uint32_t>(params.size()));
    for (const nn::Parameter* param : params) {
        p.str(param->name);
        put_tensor(p, param->value);
    }
    const auto& slots = model.optimizer.slots();
    p.f64(model.optimizer.beta1);
    p.f64(model.optimizer.beta2);
    p.f64(model.optimizer.eps);
    p.u32(static_cast<std::uint32_t>(slots.size()));
    for (const auto& [name, slot] : slots) {
        p.str(name);
        p.u64(slot.t);
        put_tensor(p, slot.m);
        put_tensor(p, slot.v);
    }

    ByteWriter out;
    out.raw(kMagic, 8);
    out.u32(kCheckpointVersion);
    out.u64(p.bytes().size());
    out.raw(p.bytes().data(), p.bytes().size());
    out.u32(crc_of(p.bytes().data(), p.bytes().size()));
    return {out.bytes().begin(), out.bytes().end()};
}

ModelState deserialize_model(const std::string& bytes) {
    if (bytes.size() >= 8 && !std::equal(kMagic, kMagic + 8, bytes.begin()))
        throw FormatError("not a checkpoint file (bad magic)");
    if (bytes.size() < kHeaderSize) throw ChecksumError("checkpoint truncated inside its header");
    ByteReader head(std::vector<char>(bytes.begin(), bytes.begin() + kHeaderSize), "checkpoint");
    head.magic(kMagic);
    const std::uint32_t version = head.u32();
    if (version != kCheckpointVersion)
        throw FormatError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
    const std::uint64_t size = head.u64();
    if (bytes.size() - kHeaderSize < 4 || size > bytes.size() - kHeaderSize - 4)
        throw ChecksumError("checkpoint truncated: payload of " + std::to_string(size) + " bytes is incomplete");
    if (bytes.size() - kHeaderSize - 4 != size) throw FormatError("checkpoint has trailing bytes");
    const char* payload = bytes.data() + kHeaderSize;
    ByteReader tail(std::vector<char>(payload + size, payload + size + 4), "checkpoint");
    if (tail.u32() != crc_of(payload, size)) throw ChecksumError("checkpoint checksum mismatch");

    ByteReader r(std::vector<char>(payload, payload + size), "checkpoint");
    const std::uint64_t step = r.u64();
    Rng rng = Rng::deserialize(r.str());

    ModelConfig cfg;
    const EncoderPreset preset = parse_encoder_preset(r.str());
    cfg.encoder = preset == EncoderPreset::tiny_cnn ? EncoderConfig::tiny_cnn() : EncoderConfig::resnet50_like();
    cfg.encoder.in_channels = r.u64();
    cfg.encoder.widths = get_sizes(r);
    cfg.encoder.blocks = get_sizes(r);
    cfg.embed_dim = r.u64();
    cfg.global_hidden = r.u64();
    cfg.init_seed = r.u64();
    cfg.decoder1 = get_decoder(r);
    cfg.decoder2 = get_decoder(r);
    const std::string mode = r.str();
    if (mode != "shared" && mode != "twin") throw FormatError("checkpoint has unknown encoder mode '" + mode + "'");
    cfg.encoder_mode = mode == "shared" ? EncoderMode::shared : EncoderMode::twin;

    ModelState model(cfg);
    model.step = step;
    model.rng = rng;
    const std::uint32_t n_meta = r.u32();
    for (std::uint32_t i = 0; i < n_meta; ++i) {
        std::string k = r.str();
        model.meta[k] = r.str();
    }

    std::map<std::string, nn::Parameter*> by_name;
    for (nn::Parameter* p : model.parameters()) by_name[p->name] = p;
    const std::uint32_t n_params = r.u32();
    if (n_params != by_name.size())
        throw FormatError("checkpoint holds " + std::to_string(n_params) + " tensors, model expects " +
                          std::to_string(by_name.size()));
    for (std::uint32_t i = 0; i < n_params; ++i) {
        const std::string name = r.str();
        Tensor t = get_tensor(r);
        auto it = by_name.find(name);
        if (it == by_name.end()) throw FormatError("checkpoint tensor '" + name + "' is not part of the model");
        if (!t.same_shape(it->second->value))
            throw FormatError("checkpoint tensor '" + name + "' has shape " + shape_string(t.shape()) +
                              ", model expects " + shape_string(it->second->value.shape()));
        it->second->value = std::move(t);
    }
    model.optimizer.beta1 = r.f64();
    model.optimizer.beta2 = r.f64();
    model.optimizer.eps = r.f64();
    const std::uint32_t n_slots = r.u32();
    for (std::uint32_t i = 0; i < n_slots; ++i) {
        const std::string name = r.str();
        AdamSlot slot;
        slot.t = r.u64();
        slot.m = get_tensor(r);
        slot.v = get_tensor(r);
        model.optimizer.slots()[name] = std::move(slot);
    }
    if (r.remaining() != 0) throw FormatError("checkpoint payload has trailing bytes");
    return model;
}

void save_checkpoint(const ModelState& model, const std::filesystem::path& path) {
    const std::string bytes = serialize_model(model);
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write checkpoint " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

ModelState load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return deserialize_model(bytes);
}

}  // namespace dclseg
