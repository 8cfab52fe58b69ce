#include "edmae/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "edmae/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "t32/edmk writers assume a little-endian host");

namespace edmae {

namespace {

void write_bytes(std::ofstream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void write_u32(std::ofstream& os, std::uint32_t v) { write_bytes(os, &v, 4); }
void write_u16(std::ofstream& os, std::uint16_t v) { write_bytes(os, &v, 2); }

struct Reader {
    std::ifstream is;
    std::string name;
    std::uint64_t offset = 0;

    Reader(const std::filesystem::path& path) : is(path, std::ios::binary), name(path.string()) {
        if (!is) throw ParseError(name + ": cannot open");
    }

    void read(void* p, std::size_t n, const char* what) {
        is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(is.gcount()) != n) {
            throw ParseError(name + ": truncated " + what + " at byte offset " +
                             std::to_string(offset));
        }
        offset += n;
    }

    std::uint32_t read_u32(const char* what) {
        std::uint32_t v;
        read(&v, 4, what);
        return v;
    }

    std::uint16_t read_u16(const char* what) {
        std::uint16_t v;
        read(&v, 2, what);
        return v;
    }

    bool at_eof() {
        return is.peek() == std::char_traits<char>::eof();
    }
};

constexpr char kT32Magic[4] = {'T', '3', '2', '\0'};
constexpr char kEdmkMagic[4] = {'E', 'D', 'M', 'K'};

void write_t32_payload(std::ofstream& os, const Tensor& t) {
    write_bytes(os, kT32Magic, 4);
    write_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) write_u32(os, static_cast<std::uint32_t>(t.dim(i)));
    write_bytes(os, t.data(), static_cast<std::size_t>(t.numel()) * sizeof(float));
}

Tensor read_t32_payload(Reader& r) {
    char magic[4];
    r.read(magic, 4, "magic");
    if (std::memcmp(magic, kT32Magic, 4) != 0) {
        throw ParseError(r.name + ": bad t32 magic at byte offset " + std::to_string(r.offset - 4));
    }
    const std::uint32_t rank = r.read_u32("rank");
    if (rank > 8) {
        throw ParseError(r.name + ": implausible rank " + std::to_string(rank) +
                         " at byte offset " + std::to_string(r.offset - 4));
    }
    Shape shape(rank);
    std::int64_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        const std::uint32_t d = r.read_u32("dims");
        if (d > (1u << 28)) {
            throw ParseError(r.name + ": implausible dim " + std::to_string(d) +
                             " at byte offset " + std::to_string(r.offset - 4));
        }
        shape[i] = static_cast<int>(d);
        numel *= d;
    }
    std::vector<float> values(static_cast<std::size_t>(numel));
    r.read(values.data(), values.size() * sizeof(float), "tensor data");
    return Tensor::from_vector(std::move(shape), std::move(values));
}

}  // namespace

void save_t32(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError(path.string() + ": cannot open for writing");
    write_t32_payload(os, t);
    if (!os) throw DataError(path.string() + ": write failed");
}

Tensor load_t32(const std::filesystem::path& path) {
    Reader r(path);
    Tensor t = read_t32_payload(r);
    if (!r.at_eof()) {
        throw ParseError(r.name + ": trailing bytes at offset " + std::to_string(r.offset));
    }
    return t;
}

const Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) return &t;
    }
    return nullptr;
}

std::vector<std::pair<std::string, Tensor>> Checkpoint::with_prefix(const std::string& prefix) const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (const auto& [n, t] : tensors) {
        if (n.rfind(prefix, 0) == 0) out.emplace_back(n.substr(prefix.size()), t);
    }
    return out;
}

std::string Checkpoint::meta_or(const std::string& key, const std::string& fallback) const {
    auto it = meta.find(key);
    return it == meta.end() ? fallback : it->second;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError(path.string() + ": cannot open for writing");
    write_bytes(os, kEdmkMagic, 4);
    write_u32(os, 1);  // version
    write_u32(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, t] : ckpt.tensors) {
        if (name.size() > 0xffff) throw DataError("checkpoint tensor name too long: " + name);
        write_u16(os, static_cast<std::uint16_t>(name.size()));
        write_bytes(os, name.data(), name.size());
        write_t32_payload(os, t);
    }
    std::string meta_blob;
    for (const auto& [k, v] : ckpt.meta) {
        meta_blob += k;
        meta_blob += '=';
        meta_blob += v;
        meta_blob += '\n';
    }
    write_u32(os, static_cast<std::uint32_t>(meta_blob.size()));
    write_bytes(os, meta_blob.data(), meta_blob.size());
    if (!os) throw DataError(path.string() + ": write failed");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    Reader r(path);
    char magic[4];
    r.read(magic, 4, "magic");
    if (std::memcmp(magic, kEdmkMagic, 4) != 0) {
        throw ParseError(r.name + ": bad edmk magic at byte offset 0");
    }
    const std::uint32_t version = r.read_u32("version");
    if (version != 1) {
        throw ParseError(r.name + ": unsupported version " + std::to_string(version));
    }
    const std::uint32_t count = r.read_u32("tensor count");
    Checkpoint ckpt;
    ckpt.tensors.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint16_t len = r.read_u16("name length");
        std::string name(len, '\0');
        r.read(name.data(), len, "tensor name");
        ckpt.tensors.emplace_back(std::move(name), read_t32_payload(r));
    }
    const std::uint32_t meta_len = r.read_u32("metadata length");
    std::string blob(meta_len, '\0');
    r.read(blob.data(), meta_len, "metadata");
    std::size_t pos = 0;
    while (pos < blob.size()) {
        std::size_t nl = blob.find('\n', pos);
        if (nl == std::string::npos) nl = blob.size();
        const std::string line = blob.substr(pos, nl - pos);
        pos = nl + 1;
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ParseError(r.name + ": malformed metadata line '" + line + "'");
        }
        ckpt.meta[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return ckpt;
}

}  // namespace edmae
