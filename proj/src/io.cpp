#include "nopkit/io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

static_assert(std::endian::native == std::endian::little,
              "on-disk format is little-endian float64");

namespace nop {

void write_f64(const std::string& path, const double* data, std::size_t n) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("write_f64: cannot open " + path);
    out.write(reinterpret_cast<const char*>(data), std::streamsize(n * sizeof(double)));
    if (!out) throw ConfigError("write_f64: short write to " + path);
}

std::vector<double> read_f64(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw ConfigError("read_f64: cannot open " + path);
    std::streamsize bytes = in.tellg();
    if (bytes % sizeof(double) != 0)
        throw ConfigError("read_f64: " + path + " is not a float64 block");
    std::vector<double> v(std::size_t(bytes) / sizeof(double));
    in.seekg(0);
    in.read(reinterpret_cast<char*>(v.data()), bytes);
    if (!in) throw ConfigError("read_f64: short read from " + path);
    return v;
}

std::string sha1_hex(const unsigned char* data, std::size_t n) {
    std::uint32_t h[5] = {0x67452301u, 0xEFCDAB89u, 0x98BADCFEu, 0x10325476u, 0xC3D2E1F0u};
    std::vector<unsigned char> msg(data, data + n);
    msg.push_back(0x80);
    while (msg.size() % 64 != 56) msg.push_back(0);
    std::uint64_t bits = std::uint64_t(n) * 8;
    for (int i = 7; i >= 0; --i) msg.push_back((unsigned char) (bits >> (8 * i)));
    auto rol = [](std::uint32_t x, int s) { return (x << s) | (x >> (32 - s)); };
    for (std::size_t off = 0; off < msg.size(); off += 64) {
        std::uint32_t w[80];
        for (int i = 0; i < 16; ++i)
            w[i] = (std::uint32_t(msg[off + 4 * i]) << 24) |
                   (std::uint32_t(msg[off + 4 * i + 1]) << 16) |
                   (std::uint32_t(msg[off + 4 * i + 2]) << 8) | msg[off + 4 * i + 3];
        for (int i = 16; i < 80; ++i) w[i] = rol(w[i - 3] ^ w[i - 8] ^ w[i - 14] ^ w[i - 16], 1);
        std::uint32_t a = h[0], b = h[1], c = h[2], d = h[3], e = h[4];
        for (int i = 0; i < 80; ++i) {
            std::uint32_t f, k;
            if (i < 20) { f = (b & c) | (~b & d); k = 0x5A827999u; }
            else if (i < 40) { f = b ^ c ^ d; k = 0x6ED9EBA1u; }
            else if (i < 60) { f = (b & c) | (b & d) | (c & d); k = 0x8F1BBCDCu; }
            else { f = b ^ c ^ d; k = 0xCA62C1D6u; }
            std::uint32_t t = rol(a, 5) + f + e + k + w[i];
            e = d; d = c; c = rol(b, 30); b = a; a = t;
        }
        h[0] += a; h[1] += b; h[2] += c; h[3] += d; h[4] += e;
    }
    std::ostringstream os;
    os << std::hex;
    for (std::uint32_t x : h)
        for (int i = 7; i >= 0; --i) os << ((x >> (4 * i)) & 0xF);
    return os.str();
}

void write_manifest(const std::string& path,
                    const std::vector<std::pair<std::string, std::string>>& kv) {
    std::ofstream out(path);
    if (!out) throw ConfigError("write_manifest: cannot open " + path);
    for (const auto& [k, v] : kv) out << k << " = " << v << '\n';
}

std::map<std::string, std::string> read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("read_manifest: cannot open " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::size_t eq = line.find(" = ");
        if (eq == std::string::npos)
            throw ConfigError("read_manifest: malformed line in " + path + ": " + line);
        kv[line.substr(0, eq)] = line.substr(eq + 3);
    }
    return kv;
}

namespace {

template <class T>
std::string join(const std::vector<T>& v) {
    std::ostringstream os;
    os.precision(17);
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? " " : "") << v[i];
    return os.str();
}

template <class T>
std::vector<T> split(const std::string& s) {
    std::istringstream is(s);
    std::vector<T> v;
    T x;
    while (is >> x) v.push_back(x);
    return v;
}

std::string num(double x) {
    std::ostringstream os;
    os.precision(17);
    os << x;
    return os.str();
}

const std::string& need(const std::map<std::string, std::string>& kv, const std::string& key,
                        const std::string& path) {
    auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError("manifest " + path + " is missing key " + key);
    return it->second;
}

std::vector<double> flatten(const std::vector<FieldSample>& fs) {
    std::vector<double> out;
    for (const FieldSample& f : fs)
        out.insert(out.end(), f.values.data(), f.values.data() + f.values.size());
    return out;
}

std::string blocks_hash(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<unsigned char> bytes(sizeof(double) * (a.size() + b.size()));
    std::memcpy(bytes.data(), a.data(), a.size() * sizeof(double));
    std::memcpy(bytes.data() + a.size() * sizeof(double), b.data(), b.size() * sizeof(double));
    return sha1_hex(bytes.data(), bytes.size());
}

const char* variant_str(Variant v) {
    switch (v) {
        case Variant::fno: return "fno";
        case Variant::gno: return "gno";
        case Variant::lno: return "lno";
        case Variant::mgno: return "mgno";
        case Variant::deeponet: return "deeponet";
        case Variant::greens: return "greens";
    }
    return "?";
}

Variant variant_from(const std::string& s) {
    if (s == "fno") return Variant::fno;
    if (s == "gno") return Variant::gno;
    if (s == "lno") return Variant::lno;
    if (s == "mgno") return Variant::mgno;
    if (s == "deeponet") return Variant::deeponet;
    if (s == "greens") return Variant::greens;
    throw ConfigError("unknown model variant: " + s);
}

const char* act_str(Activation a) {
    switch (a) {
        case Activation::identity: return "identity";
        case Activation::relu: return "relu";
        case Activation::gelu: return "gelu";
    }
    return "?";
}

Activation act_from(const std::string& s) {
    if (s == "identity") return Activation::identity;
    if (s == "relu") return Activation::relu;
    if (s == "gelu") return Activation::gelu;
    throw ConfigError("unknown activation: " + s);
}

} // namespace

void save_dataset(const std::string& dir, const Dataset& ds) {
    std::filesystem::create_directories(dir);
    std::vector<double> in = flatten(ds.inputs), out = flatten(ds.outputs);
    const DatasetManifest& m = ds.manifest;
    std::vector<std::pair<std::string, std::string>> kv = {
        {"format_version", std::to_string(m.format_version)},
        {"problem", m.problem},
        {"measure", m.measure},
        {"seed", std::to_string(m.seed)},
        {"count", std::to_string(m.count)},
        {"grid_sizes", join(m.grid_sizes)},
        {"periodic", m.periodic ? "1" : "0"},
        {"extent_lo", join(m.extent_lo)},
        {"extent_hi", join(m.extent_hi)},
        {"input_shape", join(m.input_shape)},
        {"output_shape", join(m.output_shape)},
        {"viscosity", num(m.viscosity)},
        {"dt", num(m.dt)},
        {"t_end", num(m.t_end)},
        {"source_resolution", std::to_string(m.source_resolution)},
        {"content_hash", blocks_hash(in, out)},
    };
    write_manifest(dir + "/manifest.txt", kv);
    write_f64(dir + "/inputs.bin", in.data(), in.size());
    write_f64(dir + "/outputs.bin", out.data(), out.size());
}

Dataset load_dataset(const std::string& dir) {
    std::string mp = dir + "/manifest.txt";
    auto kv = read_manifest(mp);
    if (need(kv, "format_version", mp) != "1")
        throw ConfigError("load_dataset: unsupported format_version " + kv["format_version"] +
                          " in " + mp);
    Dataset ds;
    DatasetManifest& m = ds.manifest;
    m.problem = need(kv, "problem", mp);
    m.measure = need(kv, "measure", mp);
    m.seed = std::stoull(need(kv, "seed", mp));
    m.count = std::stoull(need(kv, "count", mp));
    m.grid_sizes = split<std::size_t>(need(kv, "grid_sizes", mp));
    m.periodic = need(kv, "periodic", mp) == "1";
    m.extent_lo = split<double>(need(kv, "extent_lo", mp));
    m.extent_hi = split<double>(need(kv, "extent_hi", mp));
    m.input_shape = split<std::size_t>(need(kv, "input_shape", mp));
    m.output_shape = split<std::size_t>(need(kv, "output_shape", mp));
    m.viscosity = std::stod(need(kv, "viscosity", mp));
    m.dt = std::stod(need(kv, "dt", mp));
    m.t_end = std::stod(need(kv, "t_end", mp));
    m.source_resolution = std::stoull(need(kv, "source_resolution", mp));

    Grid g;
    g.sizes = m.grid_sizes;
    g.periodic = m.periodic;
    for (std::size_t i = 0; i < m.extent_lo.size(); ++i)
        g.extent.push_back({m.extent_lo[i], m.extent_hi[i]});

    std::vector<double> in = read_f64(dir + "/inputs.bin");
    std::vector<double> out = read_f64(dir + "/outputs.bin");
    if (need(kv, "content_hash", mp) != blocks_hash(in, out))
        throw ConfigError("load_dataset: content hash mismatch in " + dir);
    std::size_t in_n = 1, out_n = 1;
    for (std::size_t s : m.input_shape) in_n *= s;
    for (std::size_t s : m.output_shape) out_n *= s;
    if (in.size() != m.count * in_n || out.size() != m.count * out_n)
        throw ConfigError("load_dataset: block sizes disagree with the manifest in " + dir);
    for (std::size_t i = 0; i < m.count; ++i) {
        ds.inputs.push_back(
            {g, Tensor(m.input_shape, {in.begin() + i * in_n, in.begin() + (i + 1) * in_n})});
        ds.outputs.push_back(
            {g, Tensor(m.output_shape, {out.begin() + i * out_n, out.begin() + (i + 1) * out_n})});
    }
    return ds;
}

void save_checkpoint(const std::string& dir, const OperatorModel& m) {
    std::filesystem::create_directories(dir);
    const ModelConfig& c = m.cfg;
    std::vector<std::pair<std::string, std::string>> kv = {
        {"format_version", "1"},
        {"variant", variant_str(c.variant)},
        {"act", act_str(c.act)},
        {"dims", std::to_string(c.dims)},
        {"d_a", std::to_string(c.d_a)},
        {"d_u", std::to_string(c.d_u)},
        {"d_v", std::to_string(c.d_v)},
        {"layers", std::to_string(c.layers)},
        {"q_hidden", std::to_string(c.q_hidden)},
        {"kmax", join(c.kmax)},
        {"pad_t", std::to_string(c.pad_t)},
        {"autoregressive", c.autoregressive ? "1" : "0"},
        {"radius", num(c.radius)},
        {"subsample", std::to_string(c.subsample)},
        {"kernel_width", std::to_string(c.kernel_width)},
        {"rank", std::to_string(c.rank)},
        {"factor_width", std::to_string(c.factor_width)},
        {"level_radii", join(c.level_radii)},
        {"level_counts", join(c.level_counts)},
        {"sensors", std::to_string(c.sensors)},
        {"basis", std::to_string(c.basis)},
        {"net_width", std::to_string(c.net_width)},
        {"seed", std::to_string(c.seed)},
        {"graph_seed", std::to_string(c.graph_seed)},
    };
    auto params = named_parameters(m);
    kv.push_back({"param_count", std::to_string(params.size())});
    std::vector<double> blob;
    for (std::size_t i = 0; i < params.size(); ++i) {
        kv.push_back({"param_" + std::to_string(i),
                      params[i].first + " " + std::to_string(params[i].second.size())});
        blob.insert(blob.end(), params[i].second.data(),
                    params[i].second.data() + params[i].second.size());
    }
    write_manifest(dir + "/manifest.txt", kv);
    write_f64(dir + "/params.bin", blob.data(), blob.size());
}

OperatorModel load_checkpoint(const std::string& dir) {
    std::string mp = dir + "/manifest.txt";
    auto kv = read_manifest(mp);
    if (need(kv, "format_version", mp) != "1")
        throw ConfigError("load_checkpoint: unsupported format_version " + kv["format_version"] +
                          " in " + mp);
    ModelConfig c;
    c.variant = variant_from(need(kv, "variant", mp));
    c.act = act_from(need(kv, "act", mp));
    c.dims = std::stoull(need(kv, "dims", mp));
    c.d_a = std::stoull(need(kv, "d_a", mp));
    c.d_u = std::stoull(need(kv, "d_u", mp));
    c.d_v = std::stoull(need(kv, "d_v", mp));
    c.layers = std::stoull(need(kv, "layers", mp));
    c.q_hidden = std::stoull(need(kv, "q_hidden", mp));
    c.kmax = split<std::size_t>(need(kv, "kmax", mp));
    c.pad_t = std::stoull(need(kv, "pad_t", mp));
    c.autoregressive = need(kv, "autoregressive", mp) == "1";
    c.radius = std::stod(need(kv, "radius", mp));
    c.subsample = std::stoull(need(kv, "subsample", mp));
    c.kernel_width = std::stoull(need(kv, "kernel_width", mp));
    c.rank = std::stoull(need(kv, "rank", mp));
    c.factor_width = std::stoull(need(kv, "factor_width", mp));
    c.level_radii = split<double>(need(kv, "level_radii", mp));
    c.level_counts = split<std::size_t>(need(kv, "level_counts", mp));
    c.sensors = std::stoull(need(kv, "sensors", mp));
    c.basis = std::stoull(need(kv, "basis", mp));
    c.net_width = std::stoull(need(kv, "net_width", mp));
    c.seed = std::stoull(need(kv, "seed", mp));
    c.graph_seed = std::stoull(need(kv, "graph_seed", mp));

    OperatorModel model = make_model(c);
    auto params = named_parameters(model);
    if (std::stoull(need(kv, "param_count", mp)) != params.size())
        throw ConfigError("load_checkpoint: parameter table size mismatch in " + mp);
    std::vector<double> blob = read_f64(dir + "/params.bin");
    std::size_t off = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        std::istringstream is(need(kv, "param_" + std::to_string(i), mp));
        std::string name;
        std::size_t sz = 0;
        is >> name >> sz;
        if (name != params[i].first || sz != params[i].second.size())
            throw ConfigError("load_checkpoint: parameter " + params[i].first +
                              " does not match the manifest entry " + name);
        if (off + sz > blob.size())
            throw ConfigError("load_checkpoint: params.bin is shorter than the manifest claims");
        std::copy(blob.begin() + off, blob.begin() + off + sz, params[i].second.data());
        off += sz;
    }
    if (off != blob.size())
        throw ConfigError("load_checkpoint: params.bin is longer than the manifest claims");
    return model;
}

} // namespace nop
