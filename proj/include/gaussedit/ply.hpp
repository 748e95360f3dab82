#pragma once

// Binary little-endian PLY I/O in the layout written by 3D-GS trainers.

#include "gaussedit/error.hpp"
#include "gaussedit/scene.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace gaussedit {

enum class PlyPrecision { Float32, Float64 };

namespace ply_detail {

static_assert(std::endian::native == std::endian::little, "PLY codec assumes a little-endian host");

struct Property {
    std::string name;
    std::string type;
    std::size_t offset = 0;
};

struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<Property> properties;
    std::size_t stride = 0;
    bool has_list = false;
};

inline std::size_t type_size(const std::string& type) {
    static const std::map<std::string, std::size_t> sizes = {
        {"char", 1},  {"uchar", 1},  {"int8", 1},   {"uint8", 1},   {"short", 2},   {"ushort", 2},
        {"int16", 2}, {"uint16", 2}, {"int", 4},    {"uint", 4},    {"int32", 4},   {"uint32", 4},
        {"float", 4}, {"float32", 4}, {"double", 8}, {"float64", 8},
    };
    auto it = sizes.find(type);
    if (it == sizes.end()) fail(ErrorKind::Format, "ply: unsupported property type '" + type + "'");
    return it->second;
}

inline double read_scalar(const char* p, const std::string& type) {
    auto get = [p]<typename T>(T) {
        T v;
        std::memcpy(&v, p, sizeof(T));
        return static_cast<double>(v);
    };
    if (type == "float" || type == "float32") return get(float{});
    if (type == "double" || type == "float64") return get(double{});
    if (type == "char" || type == "int8") return get(std::int8_t{});
    if (type == "uchar" || type == "uint8") return get(std::uint8_t{});
    if (type == "short" || type == "int16") return get(std::int16_t{});
    if (type == "ushort" || type == "uint16") return get(std::uint16_t{});
    if (type == "int" || type == "int32") return get(std::int32_t{});
    if (type == "uint" || type == "uint32") return get(std::uint32_t{});
    fail(ErrorKind::Format, "ply: unsupported property type '" + type + "'");
}

inline constexpr const char* kRequired[] = {"x",       "y",       "z",       "f_dc_0",  "f_dc_1", "f_dc_2", "opacity",
                                            "scale_0", "scale_1", "scale_2", "rot_0",   "rot_1",  "rot_2",  "rot_3"};

} // namespace ply_detail

/// Loads a Gaussian scene. The editable range of the result is empty.
inline GaussianScene load_ply(const std::filesystem::path& path) {
    using namespace ply_detail;
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorKind::Format, "ply: cannot open " + path.string());

    std::string line;
    std::getline(in, line);
    require(line == "ply" || line == "ply\r", ErrorKind::Format, "ply: missing magic in " + path.string());

    std::vector<Element> elements;
    bool binary_le = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "format") {
            std::string fmt;
            ls >> fmt;
            binary_le = fmt == "binary_little_endian";
        } else if (word == "element") {
            Element e;
            ls >> e.name >> e.count;
            elements.push_back(e);
        } else if (word == "property") {
            require(!elements.empty(), ErrorKind::Format, "ply: property before element");
            std::string type;
            ls >> type;
            if (type == "list") {
                elements.back().has_list = true;
                continue;
            }
            Property prop;
            prop.type = type;
            ls >> prop.name;
            prop.offset = elements.back().stride;
            elements.back().stride += type_size(type);
            elements.back().properties.push_back(prop);
        } else if (word == "end_header") {
            break;
        }
    }
    require(binary_le, ErrorKind::Format, "ply: only binary_little_endian is supported");
    require(!elements.empty() && elements.front().name == "vertex", ErrorKind::Format,
            "ply: first element must be 'vertex'");
    const Element& vertex = elements.front();
    require(!vertex.has_list, ErrorKind::Format, "ply: list properties on vertex are not supported");

    std::map<std::string, const Property*> by_name;
    for (const auto& p : vertex.properties) by_name[p.name] = &p;
    for (const char* name : kRequired)
        require(by_name.count(name) > 0, ErrorKind::Format, std::string("ply: missing required property '") + name + "'");

    std::vector<char> buffer(vertex.count * vertex.stride);
    in.read(buffer.data(), static_cast<std::streamsize>(buffer.size()));
    require(static_cast<std::size_t>(in.gcount()) == buffer.size(), ErrorKind::Format, "ply: truncated vertex data");

    std::vector<Gaussian> gaussians(vertex.count);
    for (std::size_t i = 0; i < vertex.count; ++i) {
        const char* row = buffer.data() + i * vertex.stride;
        auto field = [&](const char* name) {
            const Property* p = by_name.at(name);
            return read_scalar(row + p->offset, p->type);
        };
        Gaussian& g = gaussians[i];
        g.mu = {field("x"), field("y"), field("z")};
        g.sh0 = {field("f_dc_0"), field("f_dc_1"), field("f_dc_2")};
        g.opacity_logit = field("opacity");
        g.log_scale = {field("scale_0"), field("scale_1"), field("scale_2")};
        g.rot = {field("rot_0"), field("rot_1"), field("rot_2"), field("rot_3")};
        const bool finite = g.mu.allFinite() && g.sh0.allFinite() && std::isfinite(g.opacity_logit) &&
                            g.log_scale.allFinite() && g.rot.allFinite();
        require(finite, ErrorKind::Validation, "ply: non-finite field in vertex " + std::to_string(i));
    }
    return GaussianScene(std::move(gaussians));
}

/// Writes x,y,z, f_dc_0..2, opacity, scale_0..2, rot_0..3. Float32 matches what
/// 3D-GS viewers expect; Float64 keeps in-memory doubles bit-exact.
inline void save_ply(const GaussianScene& scene, const std::filesystem::path& path,
                     PlyPrecision precision = PlyPrecision::Float32) {
    const char* type = precision == PlyPrecision::Float32 ? "float" : "double";
    std::ostringstream header;
    header << "ply\nformat binary_little_endian 1.0\nelement vertex " << scene.size() << "\n";
    for (const char* name : ply_detail::kRequired) header << "property " << type << " " << name << "\n";
    header << "end_header\n";

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorKind::Format, "ply: cannot write " + path.string());
    const std::string h = header.str();
    out.write(h.data(), static_cast<std::streamsize>(h.size()));

    std::vector<char> row;
    for (const Gaussian& g : scene.gaussians()) {
        const double values[] = {g.mu[0],  g.mu[1],  g.mu[2],  g.sh0[0], g.sh0[1],       g.sh0[2],       g.opacity_logit,
                                 g.log_scale[0], g.log_scale[1], g.log_scale[2], g.rot[0], g.rot[1], g.rot[2], g.rot[3]};
        row.clear();
        for (double v : values) {
            char bytes[8];
            if (precision == PlyPrecision::Float32) {
                const float f = static_cast<float>(v);
                std::memcpy(bytes, &f, 4);
                row.insert(row.end(), bytes, bytes + 4);
            } else {
                std::memcpy(bytes, &v, 8);
                row.insert(row.end(), bytes, bytes + 8);
            }
        }
        out.write(row.data(), static_cast<std::streamsize>(row.size()));
    }
    require(out.good(), ErrorKind::Format, "ply: write failed for " + path.string());
}

} // namespace gaussedit
