#include "dsegnet/weights.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <vector>

namespace dseg {
namespace {

static_assert(std::endian::native == std::endian::little, "weight files assume a little-endian host");

using Kind = WeightFileError::Kind;

template <typename U>
void put(std::vector<char>& out, U v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    out.insert(out.end(), p, p + sizeof(U));
}

class Reader {
public:
    Reader(std::vector<char> bytes, std::string path) : bytes_(std::move(bytes)), path_(std::move(path)) {}

    void read(void* dst, std::size_t n, const char* what) {
        if (bytes_.size() - pos_ < n) {
            throw WeightFileError(Kind::UnexpectedEof, path_ + ": unexpected end of file while reading " + what);
        }
        std::memcpy(dst, bytes_.data() + pos_, n);
        pos_ += n;
    }
    template <typename U>
    U get(const char* what) {
        U v;
        read(&v, sizeof(U), what);
        return v;
    }
    const std::string& path() const { return path_; }

private:
    std::vector<char> bytes_;
    std::size_t pos_ = 0;
    std::string path_;
};

struct Entry {
    std::vector<std::uint32_t> dims;
    std::uint8_t dtype;
    std::vector<char> raw;
};

std::string dims_str(const std::vector<std::uint32_t>& dims) {
    std::string s = "[";
    for (std::size_t i = 0; i < dims.size(); ++i) s += (i ? "," : "") + std::to_string(dims[i]);
    return s + "]";
}

}  // namespace

template <typename T>
void save_weights(const ParamRegistry<T>& reg, const std::string& path) {
    std::vector<char> out{'D', 'S', 'G', 'W'};
    put<std::uint32_t>(out, kWeightFileVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(reg.params().size()));
    const std::uint8_t dtype = std::is_same_v<T, float> ? 0 : 1;
    for (const auto& p : reg.params()) {
        put<std::uint16_t>(out, static_cast<std::uint16_t>(p.name.size()));
        out.insert(out.end(), p.name.begin(), p.name.end());
        put<std::uint8_t>(out, dtype);
        put<std::uint8_t>(out, static_cast<std::uint8_t>(p.dims.size()));
        for (std::uint32_t d : p.dims) put<std::uint32_t>(out, d);
        const auto data = p.var->value.data();
        const auto* bytes = reinterpret_cast<const char*>(data.data());
        out.insert(out.end(), bytes, bytes + data.size_bytes());
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("write failed for '" + path + "'");
}

template <typename T>
void load_weights(ParamRegistry<T>& reg, const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open weight file '" + path + "'");
    Reader in(std::vector<char>(std::istreambuf_iterator<char>(f), {}), path);

    char magic[4];
    in.read(magic, 4, "magic");
    if (std::memcmp(magic, "DSGW", 4) != 0) throw WeightFileError(Kind::BadMagic, path + ": bad magic, not a DSGW file");
    const auto version = in.get<std::uint32_t>("version");
    if (version != kWeightFileVersion) {
        throw WeightFileError(Kind::BadVersion, path + ": unsupported version " + std::to_string(version));
    }
    const auto count = in.get<std::uint32_t>("tensor count");

    std::vector<std::pair<std::string, Entry>> entries;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name(in.get<std::uint16_t>("name length"), '\0');
        in.read(name.data(), name.size(), "tensor name");
        Entry e;
        e.dtype = in.get<std::uint8_t>("dtype");
        if (e.dtype > 1) {
            throw WeightFileError(Kind::BadDtype, path + ": tensor '" + name + "' has unknown dtype " +
                                                      std::to_string(e.dtype));
        }
        e.dims.resize(in.get<std::uint8_t>("rank"));
        std::size_t numel = 1;
        for (auto& d : e.dims) {
            d = in.get<std::uint32_t>("dims");
            numel *= d;
        }
        e.raw.resize(numel * (e.dtype == 0 ? 4 : 8));
        in.read(e.raw.data(), e.raw.size(), ("data of '" + name + "'").c_str());
        entries.emplace_back(std::move(name), std::move(e));
    }

    std::map<std::string, Parameter<T>*> by_name;
    for (auto& p : reg.params()) by_name[p.name] = &p;
    std::map<std::string, const Entry*> matched;
    for (const auto& [name, e] : entries) {
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw WeightFileError(Kind::NameNotFound, path + ": tensor '" + name + "' not found in the model");
        }
        if (it->second->dims != e.dims) {
            throw WeightFileError(Kind::ShapeMismatch, path + ": shape mismatch for '" + name + "': file " +
                                                           dims_str(e.dims) + ", model " +
                                                           dims_str(it->second->dims));
        }
        matched[name] = &e;
    }
    for (const auto& p : reg.params()) {
        if (!matched.count(p.name)) {
            throw WeightFileError(Kind::NameNotFound, path + ": model tensor '" + p.name + "' missing from file");
        }
    }

    for (auto& p : reg.params()) {
        const Entry& e = *matched[p.name];
        auto data = p.var->value.data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            if (e.dtype == 0) {
                float v;
                std::memcpy(&v, e.raw.data() + 4 * i, 4);
                data[i] = static_cast<T>(v);
            } else {
                double v;
                std::memcpy(&v, e.raw.data() + 8 * i, 8);
                data[i] = static_cast<T>(v);
            }
        }
    }
    reg.set_stats_ready(true);
}

template void save_weights(const ParamRegistry<float>&, const std::string&);
template void save_weights(const ParamRegistry<double>&, const std::string&);
template void load_weights(ParamRegistry<float>&, const std::string&);
template void load_weights(ParamRegistry<double>&, const std::string&);

}  // namespace dseg
