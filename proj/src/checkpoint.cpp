#include "repq/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "repq/config.hpp"
#include "repq/errors.hpp"

namespace repq {

namespace {

constexpr char kMagic[4] = {'R', 'Q', 'C', 'K'};

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_str(std::string& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out += s;
}

struct Reader {
    const std::uint8_t* p;
    std::size_t left;
    const std::string& path;

    void need(std::size_t n) const {
        if (left < n) throw FormatError(path + ": truncated checkpoint");
    }
    std::uint8_t u8() {
        need(1);
        const std::uint8_t v = *p;
        ++p;
        --left;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
        p += 4;
        left -= 4;
        return v;
    }
    std::string str() {
        const std::uint32_t n = u32();
        need(n);
        std::string s(reinterpret_cast<const char*>(p), n);
        p += n;
        left -= n;
        return s;
    }
    std::vector<std::uint8_t> bytes(std::size_t n) {
        need(n);
        std::vector<std::uint8_t> out(p, p + n);
        p += n;
        left -= n;
        return out;
    }
};

void put_tensor(std::string& out, const TensorEntry& t) {
    put_str(out, t.name);
    out.push_back(static_cast<char>(t.dtype));
    out.push_back(static_cast<char>(t.dims.size()));
    for (std::uint32_t d : t.dims) put_u32(out, d);
    put_u32(out, static_cast<std::uint32_t>(t.raw.size()));
    out.append(reinterpret_cast<const char*>(t.raw.data()), t.raw.size());
}

TensorEntry read_tensor(Reader& r) {
    TensorEntry t;
    t.name = r.str();
    t.dtype = r.u8();
    if (t.dtype > 1) throw FormatError(r.path + ": unknown tensor dtype");
    const std::uint8_t ndim = r.u8();
    for (int i = 0; i < ndim; ++i) t.dims.push_back(r.u32());
    const std::uint32_t raw_len = r.u32();
    t.raw = r.bytes(raw_len);
    const std::size_t elem = t.dtype == 0 ? 4 : 8;
    if (t.raw.size() != t.elem_count() * elem) {
        throw FormatError(r.path + ": tensor '" + t.name + "' size mismatch");
    }
    return t;
}

} // namespace

std::size_t TensorEntry::elem_count() const {
    std::size_t n = 1;
    for (std::uint32_t d : dims) n *= d;
    return dims.empty() ? 0 : n;
}

TensorEntry TensorEntry::f32(std::string name, const std::vector<std::uint32_t>& dims, const float* data) {
    TensorEntry t;
    t.name = std::move(name);
    t.dtype = 0;
    t.dims = dims;
    t.raw.resize(t.elem_count() * 4);
    std::memcpy(t.raw.data(), data, t.raw.size());
    return t;
}

TensorEntry TensorEntry::f64(std::string name, const std::vector<std::uint32_t>& dims, const double* data) {
    TensorEntry t;
    t.name = std::move(name);
    t.dtype = 1;
    t.dims = dims;
    t.raw.resize(t.elem_count() * 8);
    std::memcpy(t.raw.data(), data, t.raw.size());
    return t;
}

std::vector<float> TensorEntry::as_f32() const {
    if (dtype != 0) throw FormatError("tensor '" + name + "' is not f32");
    std::vector<float> out(elem_count());
    std::memcpy(out.data(), raw.data(), raw.size());
    return out;
}

std::vector<double> TensorEntry::as_f64() const {
    if (dtype != 1) throw FormatError("tensor '" + name + "' is not f64");
    std::vector<double> out(elem_count());
    std::memcpy(out.data(), raw.data(), raw.size());
    return out;
}

void Checkpoint::save(const std::string& path) const {
    std::string out;
    out.append(kMagic, 4);
    put_u32(out, version);
    out.push_back(static_cast<char>(mode));
    put_str(out, config_echo);
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const TensorEntry& t : tensors) put_tensor(out, t);
    out.push_back(has_optimizer ? 1 : 0);
    if (has_optimizer) {
        put_u32(out, static_cast<std::uint32_t>(optimizer.size()));
        for (const TensorEntry& t : optimizer) put_tensor(out, t);
    }

    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot write " + tmp);
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) throw IoError("write failed: " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("rename failed: " + tmp + " -> " + path + ": " + ec.message());
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    Reader r{bytes.data(), bytes.size(), path};

    r.need(4);
    if (std::memcmp(r.p, kMagic, 4) != 0) throw FormatError(path + ": bad magic (not a checkpoint)");
    r.p += 4;
    r.left -= 4;

    Checkpoint ck;
    ck.version = r.u32();
    if (ck.version > kCheckpointVersion) {
        throw FormatError(path + ": checkpoint version " + std::to_string(ck.version) +
                          " is newer than supported version " + std::to_string(kCheckpointVersion));
    }
    const std::uint8_t mode = r.u8();
    if (mode > 1) throw FormatError(path + ": invalid mode flag");
    ck.mode = static_cast<Mode>(mode);
    ck.config_echo = r.str();
    const std::uint32_t n_tensors = r.u32();
    for (std::uint32_t i = 0; i < n_tensors; ++i) ck.tensors.push_back(read_tensor(r));
    ck.has_optimizer = r.u8() != 0;
    if (ck.has_optimizer) {
        const std::uint32_t n_opt = r.u32();
        for (std::uint32_t i = 0; i < n_opt; ++i) ck.optimizer.push_back(read_tensor(r));
    }
    if (r.left != 0) throw FormatError(path + ": trailing bytes after checkpoint payload");
    return ck;
}

const TensorEntry* Checkpoint::find(const std::string& name) const {
    for (const TensorEntry& t : tensors) {
        if (t.name == name) return &t;
    }
    return nullptr;
}

const TensorEntry& Checkpoint::require(const std::string& name) const {
    const TensorEntry* t = find(name);
    if (!t) throw FormatError("checkpoint is missing tensor '" + name + "'");
    return *t;
}

namespace {

std::vector<std::uint32_t> dims_of(const Shape4& s) {
    return {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c), static_cast<std::uint32_t>(s.h),
            static_cast<std::uint32_t>(s.w)};
}

void push_bn(std::vector<TensorEntry>& out, const std::string& prefix, const BNParams& bn) {
    const std::vector<std::uint32_t> d = {static_cast<std::uint32_t>(bn.channels())};
    out.push_back(TensorEntry::f32(prefix + ".gamma", d, bn.gamma.data()));
    out.push_back(TensorEntry::f32(prefix + ".beta", d, bn.beta.data()));
    out.push_back(TensorEntry::f32(prefix + ".running_mean", d, bn.running_mean.data()));
    out.push_back(TensorEntry::f32(prefix + ".running_var", d, bn.running_var.data()));
    out.push_back(TensorEntry::f32(prefix + ".eps", {1}, &bn.eps));
}

BNParams read_bn(const Checkpoint& ck, const std::string& prefix) {
    BNParams bn;
    bn.gamma = ck.require(prefix + ".gamma").as_f32();
    bn.beta = ck.require(prefix + ".beta").as_f32();
    bn.running_mean = ck.require(prefix + ".running_mean").as_f32();
    bn.running_var = ck.require(prefix + ".running_var").as_f32();
    bn.eps = ck.require(prefix + ".eps").as_f32()[0];
    return bn;
}

Tensor4 read_tensor4(const Checkpoint& ck, const std::string& name) {
    const TensorEntry& t = ck.require(name);
    if (t.dims.size() != 4) throw FormatError("tensor '" + name + "' is not rank-4");
    Shape4 s{static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]), static_cast<int>(t.dims[2]),
             static_cast<int>(t.dims[3])};
    return Tensor4::from_data(s, t.as_f32());
}

} // namespace

Checkpoint checkpoint_from_network(const Network& net, const std::string& config_echo) {
    Checkpoint ck;
    ck.mode = Checkpoint::Mode::train;
    ck.config_echo = config_echo;
    for (std::size_t bi = 0; bi < net.blocks.size(); ++bi) {
        const RepBlock& b = net.blocks[bi];
        const std::string p = "b" + std::to_string(bi);
        ck.tensors.push_back(TensorEntry::f32(p + ".w3.weight", dims_of(b.w3.weight.shape()), b.w3.weight.data()));
        if (b.w3.bias) {
            ck.tensors.push_back(TensorEntry::f32(p + ".w3.bias", {static_cast<std::uint32_t>(b.w3.bias->size())},
                                                  b.w3.bias->data()));
        }
        ck.tensors.push_back(TensorEntry::f32(p + ".w1.weight", dims_of(b.w1.weight.shape()), b.w1.weight.data()));
        if (b.w1.bias) {
            ck.tensors.push_back(TensorEntry::f32(p + ".w1.bias", {static_cast<std::uint32_t>(b.w1.bias->size())},
                                                  b.w1.bias->data()));
        }
        if (b.bn3) push_bn(ck.tensors, p + ".bn3", *b.bn3);
        if (b.bn1) push_bn(ck.tensors, p + ".bn1", *b.bn1);
        if (b.bn0) push_bn(ck.tensors, p + ".bn0", *b.bn0);
        if (b.bn_post) push_bn(ck.tensors, p + ".bn_post", *b.bn_post);
    }
    ck.tensors.push_back(TensorEntry::f32("head.weight", dims_of(net.head.weight.shape()), net.head.weight.data()));
    ck.tensors.push_back(
        TensorEntry::f32("head.bias", {static_cast<std::uint32_t>(net.head.bias->size())}, net.head.bias->data()));
    return ck;
}

Checkpoint checkpoint_from_deploy(const DeployNetwork& net, const std::string& config_echo,
                                  const NetQuantParams* qp) {
    Checkpoint ck;
    ck.mode = Checkpoint::Mode::deploy;
    ck.config_echo = config_echo;
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        const ConvKernel& k = net.layers[li].conv;
        const std::string p = "layer" + std::to_string(li);
        ck.tensors.push_back(TensorEntry::f32(p + ".weight", dims_of(k.weight.shape()), k.weight.data()));
        ck.tensors.push_back(
            TensorEntry::f32(p + ".bias", {static_cast<std::uint32_t>(k.bias->size())}, k.bias->data()));
    }
    ck.tensors.push_back(TensorEntry::f32("head.weight", dims_of(net.head.weight.shape()), net.head.weight.data()));
    ck.tensors.push_back(
        TensorEntry::f32("head.bias", {static_cast<std::uint32_t>(net.head.bias->size())}, net.head.bias->data()));
    if (qp) {
        const double meta[2] = {static_cast<double>(qp->bits), qp->method == CalibMethod::mse ? 1.0 : 0.0};
        ck.tensors.push_back(TensorEntry::f64("quant.meta", {2}, meta));
        for (std::size_t li = 0; li < qp->layers.size(); ++li) {
            const std::string p = "quant.layer" + std::to_string(li);
            const LayerQuant& lq = qp->layers[li];
            ck.tensors.push_back(TensorEntry::f64(p + ".weight_scale",
                                                  {static_cast<std::uint32_t>(lq.weight.scale.size())},
                                                  lq.weight.scale.data()));
            ck.tensors.push_back(TensorEntry::f64(p + ".act_scale",
                                                  {static_cast<std::uint32_t>(lq.act_in.scale.size())},
                                                  lq.act_in.scale.data()));
        }
    }
    return ck;
}

Network network_from_checkpoint(const Checkpoint& ck) {
    if (ck.mode != Checkpoint::Mode::train) {
        throw FormatError("checkpoint is in deploy mode; it cannot be loaded into a train-mode context");
    }
    const RunConfig cfg = parse_config(ck.config_echo);
    Network net = build_network(cfg.network_spec(), cfg.seed);
    for (std::size_t bi = 0; bi < net.blocks.size(); ++bi) {
        RepBlock& b = net.blocks[bi];
        const std::string p = "b" + std::to_string(bi);
        b.w3.weight = read_tensor4(ck, p + ".w3.weight");
        if (b.w3.bias) b.w3.bias = ck.require(p + ".w3.bias").as_f32();
        b.w1.weight = read_tensor4(ck, p + ".w1.weight");
        if (b.w1.bias) b.w1.bias = ck.require(p + ".w1.bias").as_f32();
        if (b.bn3) b.bn3 = read_bn(ck, p + ".bn3");
        if (b.bn1) b.bn1 = read_bn(ck, p + ".bn1");
        if (b.bn0) b.bn0 = read_bn(ck, p + ".bn0");
        if (b.bn_post) b.bn_post = read_bn(ck, p + ".bn_post");
    }
    net.head.weight = read_tensor4(ck, "head.weight");
    net.head.bias = ck.require("head.bias").as_f32();
    return net;
}

DeployNetwork deploy_from_checkpoint(const Checkpoint& ck) {
    if (ck.mode != Checkpoint::Mode::deploy) {
        throw FormatError("checkpoint is in train mode; fuse it before deploy-mode loading");
    }
    const RunConfig cfg = parse_config(ck.config_echo);
    DeployNetwork net;
    net.spec = cfg.network_spec();

    int layer_count = 0;
    for (int b : cfg.blocks) layer_count += b;
    for (int li = 0; li < layer_count; ++li) {
        const std::string p = "layer" + std::to_string(li);
        FusedConv f;
        f.conv.weight = read_tensor4(ck, p + ".weight");
        f.conv.bias = ck.require(p + ".bias").as_f32();
        f.conv.padding = 1;
        net.layers.push_back(std::move(f));
    }
    // strides and groups follow the spec's stage layout
    int li = 0;
    for (std::size_t si = 0; si < net.spec.stage_widths.size(); ++si) {
        const int groups = net.spec.stage_groups.empty() ? 1 : net.spec.stage_groups[si];
        for (int bi = 0; bi < net.spec.blocks_per_stage[si]; ++bi, ++li) {
            net.layers[static_cast<std::size_t>(li)].conv.stride = bi == 0 ? 2 : 1;
            net.layers[static_cast<std::size_t>(li)].conv.groups = groups;
        }
    }
    net.head.weight = read_tensor4(ck, "head.weight");
    net.head.bias = ck.require("head.bias").as_f32();
    net.head.stride = 1;
    net.head.padding = 0;
    net.head.groups = 1;
    return net;
}

std::optional<NetQuantParams> quant_from_checkpoint(const Checkpoint& ck) {
    const TensorEntry* meta = ck.find("quant.meta");
    if (!meta) return std::nullopt;
    const std::vector<double> m = meta->as_f64();
    NetQuantParams qp;
    qp.bits = static_cast<int>(m[0]);
    qp.method = m[1] != 0.0 ? CalibMethod::mse : CalibMethod::max;
    for (int li = 0;; ++li) {
        const std::string p = "quant.layer" + std::to_string(li);
        const TensorEntry* ws = ck.find(p + ".weight_scale");
        if (!ws) break;
        LayerQuant lq;
        lq.weight = QuantParams::symmetric_for(1.0, qp.bits);
        lq.weight.scale = ws->as_f64();
        lq.act_in = QuantParams::symmetric_for(1.0, qp.bits);
        lq.act_in.scale = ck.require(p + ".act_scale").as_f64();
        qp.layers.push_back(std::move(lq));
    }
    return qp;
}

} // namespace repq
