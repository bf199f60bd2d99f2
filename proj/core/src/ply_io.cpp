// Copyright Contributors to the splatprior project
// SPDX-License-Identifier: Apache-2.0
//
// Binary little-endian PLY for meshes and point clouds.

#include <splatprior/errors.hpp>
#include <splatprior/scene_io.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace splatprior {

static_assert(std::endian::native == std::endian::little, "PLY writer assumes a little-endian host");

namespace {

enum class PlyType { Int8, UInt8, Int16, UInt16, Int32, UInt32, Float32, Float64 };

PlyType parse_type(const std::string &s) {
    if (s == "char" || s == "int8") return PlyType::Int8;
    if (s == "uchar" || s == "uint8") return PlyType::UInt8;
    if (s == "short" || s == "int16") return PlyType::Int16;
    if (s == "ushort" || s == "uint16") return PlyType::UInt16;
    if (s == "int" || s == "int32") return PlyType::Int32;
    if (s == "uint" || s == "uint32") return PlyType::UInt32;
    if (s == "float" || s == "float32") return PlyType::Float32;
    if (s == "double" || s == "float64") return PlyType::Float64;
    throw ParseError("unknown PLY property type '" + s + "'");
}

std::size_t type_size(PlyType t) {
    switch (t) {
    case PlyType::Int8:
    case PlyType::UInt8: return 1;
    case PlyType::Int16:
    case PlyType::UInt16: return 2;
    case PlyType::Int32:
    case PlyType::UInt32:
    case PlyType::Float32: return 4;
    case PlyType::Float64: return 8;
    }
    return 0;
}

template <typename T> T read_raw(std::istream &in) {
    T v;
    in.read(reinterpret_cast<char *>(&v), sizeof(T));
    if (!in) {
        throw ParseError("unexpected end of PLY body");
    }
    return v;
}

double read_value(std::istream &in, PlyType t) {
    switch (t) {
    case PlyType::Int8: return read_raw<std::int8_t>(in);
    case PlyType::UInt8: return read_raw<std::uint8_t>(in);
    case PlyType::Int16: return read_raw<std::int16_t>(in);
    case PlyType::UInt16: return read_raw<std::uint16_t>(in);
    case PlyType::Int32: return read_raw<std::int32_t>(in);
    case PlyType::UInt32: return read_raw<std::uint32_t>(in);
    case PlyType::Float32: return read_raw<float>(in);
    case PlyType::Float64: return read_raw<double>(in);
    }
    return 0.0;
}

struct Property {
    std::string name;
    PlyType type = PlyType::Float64;
    bool is_list = false;
    PlyType count_type = PlyType::UInt8;
};

struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<Property> props;
};

std::vector<Element> read_header(std::istream &in) {
    std::string line;
    if (!std::getline(in, line) || line != "ply") {
        throw ParseError("missing 'ply' magic");
    }
    std::vector<Element> elements;
    bool format_ok = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        std::istringstream ss(line);
        std::string tok;
        ss >> tok;
        if (tok == "format") {
            std::string fmt, ver;
            ss >> fmt >> ver;
            if (fmt != "binary_little_endian") {
                throw ParseError("unsupported PLY format '" + fmt + "'");
            }
            format_ok = true;
        } else if (tok == "element") {
            Element e;
            long long count = -1;
            ss >> e.name >> count;
            if (!ss || count < 0) {
                throw ParseError("malformed element line: " + line);
            }
            e.count = static_cast<std::size_t>(count);
            elements.push_back(std::move(e));
        } else if (tok == "property") {
            if (elements.empty()) {
                throw ParseError("property before element");
            }
            Property p;
            std::string type;
            ss >> type;
            if (type == "list") {
                std::string ct, it;
                ss >> ct >> it >> p.name;
                p.is_list = true;
                p.count_type = parse_type(ct);
                p.type = parse_type(it);
            } else {
                p.type = parse_type(type);
                ss >> p.name;
            }
            if (p.name.empty()) {
                throw ParseError("malformed property line: " + line);
            }
            elements.back().props.push_back(p);
        } else if (tok == "end_header") {
            if (!format_ok) {
                throw ParseError("missing format line");
            }
            return elements;
        } else if (tok == "comment" || tok == "obj_info" || tok.empty()) {
            continue;
        } else {
            throw ParseError("unexpected header line: " + line);
        }
    }
    throw ParseError("missing end_header");
}

struct PlyData {
    std::vector<Vec3> positions;
    std::vector<Vec3> normals;
    std::vector<Vec3> colors;
    std::vector<std::array<int, 3>> faces;
};

PlyData read_ply(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw MissingAsset("cannot open " + path.string());
    }
    const auto elements = read_header(in);
    PlyData out;
    for (const auto &e : elements) {
        if (e.name == "vertex") {
            auto find = [&](const char *n) {
                for (std::size_t i = 0; i < e.props.size(); ++i) {
                    if (e.props[i].name == n) return static_cast<int>(i);
                }
                return -1;
            };
            const int ix = find("x"), iy = find("y"), iz = find("z");
            if (ix < 0 || iy < 0 || iz < 0) {
                throw ParseError("vertex element lacks x/y/z");
            }
            const int inx = find("nx"), iny = find("ny"), inz = find("nz");
            const int ir = find("red"), ig = find("green"), ib = find("blue");
            const bool has_n = inx >= 0 && iny >= 0 && inz >= 0;
            const bool has_c = ir >= 0 && ig >= 0 && ib >= 0;
            std::vector<double> vals(e.props.size());
            out.positions.reserve(e.count);
            for (std::size_t v = 0; v < e.count; ++v) {
                for (std::size_t p = 0; p < e.props.size(); ++p) {
                    if (e.props[p].is_list) {
                        throw ParseError("list property on vertex element");
                    }
                    vals[p] = read_value(in, e.props[p].type);
                }
                out.positions.emplace_back(vals[ix], vals[iy], vals[iz]);
                if (has_n) {
                    out.normals.emplace_back(vals[inx], vals[iny], vals[inz]);
                }
                if (has_c) {
                    const double scale = e.props[ir].type == PlyType::UInt8 ? 1.0 / 255.0 : 1.0;
                    out.colors.emplace_back(vals[ir] * scale, vals[ig] * scale, vals[ib] * scale);
                }
            }
        } else if (e.name == "face") {
            out.faces.reserve(e.count);
            for (std::size_t f = 0; f < e.count; ++f) {
                for (const auto &p : e.props) {
                    if (!p.is_list) {
                        read_value(in, p.type);
                        continue;
                    }
                    const auto n = static_cast<std::size_t>(read_value(in, p.count_type));
                    std::vector<int> idx(n);
                    for (auto &i : idx) {
                        i = static_cast<int>(read_value(in, p.type));
                    }
                    if (p.name != "vertex_indices" && p.name != "vertex_index") {
                        continue;
                    }
                    // Fan-triangulate polygons.
                    for (std::size_t k = 1; k + 1 < n; ++k) {
                        out.faces.push_back({idx[0], idx[k], idx[k + 1]});
                    }
                }
            }
        } else {
            // Skip unknown fixed-size elements.
            for (std::size_t i = 0; i < e.count; ++i) {
                for (const auto &p : e.props) {
                    if (p.is_list) {
                        const auto n = static_cast<std::size_t>(read_value(in, p.count_type));
                        in.ignore(static_cast<std::streamsize>(n * type_size(p.type)));
                    } else {
                        in.ignore(static_cast<std::streamsize>(type_size(p.type)));
                    }
                }
            }
        }
    }
    for (const auto &f : out.faces) {
        for (int i : f) {
            if (i < 0 || static_cast<std::size_t>(i) >= out.positions.size()) {
                throw ParseError("face index out of range in " + path.string());
            }
        }
    }
    return out;
}

template <typename T> void put(std::string &buf, T v) {
    char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    buf.append(bytes, sizeof(T));
}

std::uint8_t to_u8(double c) { return static_cast<std::uint8_t>(std::lround(std::clamp(c, 0.0, 1.0) * 255.0)); }

void write_ply(const std::filesystem::path &path, const std::vector<Vec3> &pos, const std::vector<Vec3> *normals,
               const std::vector<Vec3> *colors, const std::vector<std::array<int, 3>> *faces) {
    std::string buf;
    buf += "ply\nformat binary_little_endian 1.0\n";
    buf += "element vertex " + std::to_string(pos.size()) + "\n";
    buf += "property double x\nproperty double y\nproperty double z\n";
    if (normals) {
        buf += "property double nx\nproperty double ny\nproperty double nz\n";
    }
    if (colors) {
        buf += "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    }
    if (faces) {
        buf += "element face " + std::to_string(faces->size()) + "\n";
        buf += "property list uchar int vertex_indices\n";
    }
    buf += "end_header\n";
    buf.reserve(buf.size() + pos.size() * 51 + (faces ? faces->size() * 13 : 0));
    for (std::size_t i = 0; i < pos.size(); ++i) {
        put(buf, pos[i].x());
        put(buf, pos[i].y());
        put(buf, pos[i].z());
        if (normals) {
            const Vec3 &n = (*normals)[i];
            put(buf, n.x());
            put(buf, n.y());
            put(buf, n.z());
        }
        if (colors) {
            const Vec3 &c = (*colors)[i];
            put(buf, to_u8(c.x()));
            put(buf, to_u8(c.y()));
            put(buf, to_u8(c.z()));
        }
    }
    if (faces) {
        for (const auto &f : *faces) {
            put(buf, std::uint8_t{3});
            put(buf, std::int32_t{f[0]});
            put(buf, std::int32_t{f[1]});
            put(buf, std::int32_t{f[2]});
        }
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) {
        throw IoError("failed writing " + path.string());
    }
}

} // namespace

void save_mesh(const TriangleMesh &mesh, const std::filesystem::path &path) {
    const bool has_n = !mesh.normals.empty() && mesh.normals.size() == mesh.vertices.size();
    const bool has_c = !mesh.colors.empty() && mesh.colors.size() == mesh.vertices.size();
    write_ply(path, mesh.vertices, has_n ? &mesh.normals : nullptr, has_c ? &mesh.colors : nullptr, &mesh.faces);
}

TriangleMesh load_mesh(const std::filesystem::path &path) {
    PlyData d = read_ply(path);
    TriangleMesh mesh;
    mesh.vertices = std::move(d.positions);
    mesh.normals = std::move(d.normals);
    mesh.colors = std::move(d.colors);
    mesh.faces = std::move(d.faces);
    return mesh;
}

void save_pointcloud(const std::vector<SfMPoint> &points, const std::filesystem::path &path) {
    std::vector<Vec3> pos, col;
    pos.reserve(points.size());
    col.reserve(points.size());
    for (const auto &p : points) {
        pos.push_back(p.position);
        col.push_back(p.color);
    }
    write_ply(path, pos, nullptr, &col, nullptr);
}

std::vector<SfMPoint> load_pointcloud(const std::filesystem::path &path) {
    const PlyData d = read_ply(path);
    std::vector<SfMPoint> pts(d.positions.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
        pts[i].position = d.positions[i];
        pts[i].color = d.colors.empty() ? Vec3::Constant(0.5) : d.colors[i];
    }
    return pts;
}

} // namespace splatprior
