// Copyright (c) 2026, The mm3d authors
// SPDX-License-Identifier: Apache-2.0

#include "mm3d/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <fmt/format.h>

#include "mm3d/error.hpp"

namespace mm3d {

void PointScene::validate() const {
    const std::size_t n = positions.size();
    if (n == 0) {
        throw ContractError("scene has no points");
    }
    if (colors.size() != n || ids.size() != n) {
        throw ContractError(fmt::format("scene arrays disagree: {} positions, {} colors, {} ids", n,
                                        colors.size(), ids.size()));
    }
    std::unordered_set<PointId> seen;
    seen.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (int a = 0; a < 3; ++a) {
            if (!std::isfinite(positions[i][a])) {
                throw ContractError(fmt::format("non-finite position at row {}", i));
            }
            if (!(colors[i][a] >= 0.0f && colors[i][a] <= 1.0f)) {
                throw ContractError(fmt::format("color outside [0,1] at row {}", i));
            }
        }
        if (!seen.insert(ids[i]).second) {
            throw ContractError(fmt::format("duplicate point id {}", ids[i]));
        }
    }
}

PointScene PointScene::from_positions(std::vector<Vec3> positions, Vec3 color) {
    PointScene scene;
    const std::size_t n = positions.size();
    scene.positions = std::move(positions);
    scene.colors.assign(n, color);
    scene.ids.resize(n);
    std::iota(scene.ids.begin(), scene.ids.end(), PointId{0});
    return scene;
}

std::vector<std::size_t> rows_for_ids(const PointScene& scene, std::span<const PointId> ids) {
    std::unordered_map<PointId, std::size_t> row_of;
    row_of.reserve(scene.size());
    for (std::size_t i = 0; i < scene.size(); ++i) {
        row_of.emplace(scene.ids[i], i);
    }
    std::vector<std::size_t> rows;
    rows.reserve(ids.size());
    for (PointId id : ids) {
        auto it = row_of.find(id);
        if (it == row_of.end()) {
            throw ContractError(fmt::format("point id {} is not part of the scene", id));
        }
        rows.push_back(it->second);
    }
    return rows;
}

// ---------------------------------------------------------------------------
// PLY

namespace {

enum class PlyScalar { float32, float64, uint8, other };

PlyScalar scalar_kind(const std::string& name) {
    if (name == "float" || name == "float32") {
        return PlyScalar::float32;
    }
    if (name == "double" || name == "float64") {
        return PlyScalar::float64;
    }
    if (name == "uchar" || name == "uint8") {
        return PlyScalar::uint8;
    }
    return PlyScalar::other;
}

struct PlyElement {
    std::string name;
    std::size_t count = 0;
    std::vector<std::pair<std::string, PlyScalar>> properties;
    bool has_list = false;
};

std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> tokens;
    std::istringstream in(line);
    std::string tok;
    while (in >> tok) {
        tokens.push_back(tok);
    }
    return tokens;
}

double parse_number(const std::string& token, std::size_t line) {
    std::size_t consumed = 0;
    double value = 0.0;
    try {
        value = std::stod(token, &consumed);
    } catch (const std::exception&) {
        throw ParseError(fmt::format("'{}' is not a number", token), line);
    }
    if (consumed != token.size()) {
        throw ParseError(fmt::format("'{}' is not a number", token), line);
    }
    if (!std::isfinite(value)) {
        throw ParseError(fmt::format("non-finite value '{}'", token), line);
    }
    return value;
}

} // namespace

PointScene parse_ply(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;

    auto next_line = [&]() -> bool {
        if (!std::getline(in, line)) {
            return false;
        }
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        return true;
    };

    if (!next_line() || line != "ply") {
        throw ParseError("missing 'ply' magic", std::max<std::size_t>(line_no, 1));
    }

    std::vector<PlyElement> elements;
    bool saw_format = false;
    bool saw_end = false;
    while (next_line()) {
        const auto tokens = split_ws(line);
        if (tokens.empty() || tokens[0] == "comment" || tokens[0] == "obj_info") {
            continue;
        }
        if (tokens[0] == "format") {
            if (tokens.size() < 2 || tokens[1] != "ascii") {
                throw ParseError("only 'format ascii 1.0' is supported", line_no);
            }
            saw_format = true;
        } else if (tokens[0] == "element") {
            if (tokens.size() != 3) {
                throw ParseError("malformed element declaration", line_no);
            }
            PlyElement element;
            element.name = tokens[1];
            const double count = parse_number(tokens[2], line_no);
            if (count < 0 || count != std::floor(count)) {
                throw ParseError("element count must be a non-negative integer", line_no);
            }
            element.count = static_cast<std::size_t>(count);
            elements.push_back(std::move(element));
        } else if (tokens[0] == "property") {
            if (elements.empty()) {
                throw ParseError("property declared before any element", line_no);
            }
            if (tokens.size() >= 2 && tokens[1] == "list") {
                elements.back().has_list = true;
                continue;
            }
            if (tokens.size() != 3) {
                throw ParseError("malformed property declaration", line_no);
            }
            elements.back().properties.emplace_back(tokens[2], scalar_kind(tokens[1]));
        } else if (tokens[0] == "end_header") {
            saw_end = true;
            break;
        } else {
            throw ParseError(fmt::format("unexpected header keyword '{}'", tokens[0]), line_no);
        }
    }
    if (!saw_format) {
        throw ParseError("missing format line", line_no);
    }
    if (!saw_end) {
        throw ParseError("missing end_header", line_no);
    }

    auto vertex_it = std::find_if(elements.begin(), elements.end(),
                                  [](const PlyElement& e) { return e.name == "vertex"; });
    if (vertex_it == elements.end()) {
        throw ParseError("no 'element vertex' declared", line_no);
    }
    const PlyElement& vertex = *vertex_it;
    if (vertex.has_list) {
        throw ParseError("list properties on vertices are not supported", line_no);
    }

    const char* required[] = {"x", "y", "z", "red", "green", "blue"};
    std::array<std::size_t, 6> column{};
    for (int k = 0; k < 6; ++k) {
        auto it = std::find_if(vertex.properties.begin(), vertex.properties.end(),
                               [&](const auto& p) { return p.first == required[k]; });
        if (it == vertex.properties.end()) {
            throw ParseError(fmt::format("missing vertex property '{}'", required[k]), line_no);
        }
        const bool is_color = k >= 3;
        if (is_color ? it->second != PlyScalar::uint8
                     : (it->second != PlyScalar::float32 && it->second != PlyScalar::float64)) {
            throw ParseError(fmt::format("vertex property '{}' has unsupported type", required[k]), line_no);
        }
        column[k] = static_cast<std::size_t>(it - vertex.properties.begin());
    }

    // Elements preceding the vertex block are skipped line by line.
    for (auto it = elements.begin(); it != vertex_it; ++it) {
        for (std::size_t r = 0; r < it->count; ++r) {
            if (!next_line()) {
                throw ParseError(fmt::format("truncated '{}' element", it->name), line_no + 1);
            }
        }
    }

    PointScene scene;
    scene.positions.resize(vertex.count);
    scene.colors.resize(vertex.count);
    scene.ids.resize(vertex.count);
    for (std::size_t r = 0; r < vertex.count; ++r) {
        if (!next_line()) {
            throw ParseError(fmt::format("expected {} vertices, found {}", vertex.count, r), line_no + 1);
        }
        const auto tokens = split_ws(line);
        if (tokens.size() != vertex.properties.size()) {
            throw ParseError(fmt::format("expected {} values, found {}", vertex.properties.size(),
                                         tokens.size()),
                             line_no);
        }
        for (int a = 0; a < 3; ++a) {
            scene.positions[r][a] = static_cast<float>(parse_number(tokens[column[a]], line_no));
            if (!std::isfinite(scene.positions[r][a])) {
                throw ParseError("coordinate overflows float32", line_no);
            }
            const double c = parse_number(tokens[column[3 + a]], line_no);
            if (c < 0 || c > 255 || c != std::floor(c)) {
                throw ParseError(fmt::format("color value '{}' is not a uchar", tokens[column[3 + a]]),
                                 line_no);
            }
            scene.colors[r][a] = static_cast<float>(c / 255.0);
        }
        scene.ids[r] = static_cast<PointId>(r);
    }
    return scene;
}

PointScene load_ply(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError(fmt::format("cannot open '{}'", path.string()));
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_ply(buffer.str());
}

std::uint8_t quantize_color(float c) noexcept {
    const double scaled = std::floor(static_cast<double>(c) * 255.0 + 0.5);
    return static_cast<std::uint8_t>(std::clamp(scaled, 0.0, 255.0));
}

std::string format_ply(const PointScene& scene) {
    std::vector<std::size_t> order(scene.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scene.ids[a] < scene.ids[b]; });

    std::string out;
    out.reserve(64 * scene.size() + 256);
    out += "ply\nformat ascii 1.0\n";
    out += fmt::format("element vertex {}\n", scene.size());
    out += "property float x\nproperty float y\nproperty float z\n";
    out += "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
    for (std::size_t row : order) {
        const Vec3& p = scene.positions[row];
        const Vec3& c = scene.colors[row];
        // {} on a float prints the shortest representation that round-trips.
        out += fmt::format("{} {} {} {} {} {}\n", p[0], p[1], p[2], quantize_color(c[0]),
                           quantize_color(c[1]), quantize_color(c[2]));
    }
    return out;
}

void save_ply(const PointScene& scene, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError(fmt::format("cannot write '{}'", path.string()));
    }
    out << format_ply(scene);
    if (!out) {
        throw IoError(fmt::format("write to '{}' failed", path.string()));
    }
}

// ---------------------------------------------------------------------------

PointScene normalize_scene(const PointScene& scene) {
    if (scene.size() == 0) {
        throw ContractError("cannot normalize an empty scene");
    }
    std::array<double, 3> centroid{0.0, 0.0, 0.0};
    for (const Vec3& p : scene.positions) {
        for (int a = 0; a < 3; ++a) {
            centroid[a] += p[a];
        }
    }
    for (double& c : centroid) {
        c /= static_cast<double>(scene.size());
    }
    double max_norm = 0.0;
    for (const Vec3& p : scene.positions) {
        const double dx = p[0] - centroid[0];
        const double dy = p[1] - centroid[1];
        const double dz = p[2] - centroid[2];
        max_norm = std::max(max_norm, std::sqrt(dx * dx + dy * dy + dz * dz));
    }
    const double scale = max_norm > 0.0 ? 1.0 / max_norm : 1.0;

    PointScene out = scene;
    for (Vec3& p : out.positions) {
        for (int a = 0; a < 3; ++a) {
            p[a] = static_cast<float>((p[a] - centroid[a]) * scale);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic scenes

void SynthSpec::validate() const {
    if (!(floor_extent > 0.0f)) {
        throw ConfigError("floor_extent must be positive");
    }
    if (!(density > 0.0f)) {
        throw ConfigError("density must be positive");
    }
    for (const auto& object : objects) {
        if (!(object.size[0] > 0.0f && object.size[2] > 0.0f &&
              (object.shape == ShapeKind::cylinder || object.size[1] > 0.0f))) {
            throw ConfigError("object sizes must be positive");
        }
        for (float c : object.color) {
            if (!(c >= 0.0f && c <= 1.0f)) {
                throw ConfigError("object colors must lie in [0,1]");
            }
        }
    }
}

namespace {

Vec3 vec3_from_json(const nlohmann::json& j, const char* key) {
    if (!j.is_array() || j.size() != 3) {
        throw ConfigError(fmt::format("'{}' must be an array of 3 numbers", key));
    }
    return {j[0].get<float>(), j[1].get<float>(), j[2].get<float>()};
}

} // namespace

SynthSpec synth_spec_from_json(const nlohmann::json& doc) {
    SynthSpec spec;
    try {
        spec.floor_extent = doc.at("floor_extent").get<float>();
        spec.density = doc.at("density").get<float>();
        spec.seed = doc.at("seed").get<std::uint64_t>();
        if (doc.contains("floor_color")) {
            spec.floor_color = vec3_from_json(doc["floor_color"], "floor_color");
        }
        for (const auto& o : doc.value("objects", nlohmann::json::array())) {
            SynthObject object;
            const std::string shape = o.at("shape").get<std::string>();
            if (shape == "box") {
                object.shape = ShapeKind::box;
            } else if (shape == "cylinder") {
                object.shape = ShapeKind::cylinder;
            } else {
                throw ConfigError(fmt::format("unknown shape '{}'", shape));
            }
            const auto& size = o.at("size");
            object.size = size.is_number() ? Vec3{size.get<float>(), size.get<float>(), size.get<float>()}
                                           : vec3_from_json(size, "size");
            object.position = vec3_from_json(o.at("position"), "position");
            object.color = vec3_from_json(o.at("color"), "color");
            spec.objects.push_back(object);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(fmt::format("invalid synth spec: {}", e.what()));
    }
    spec.validate();
    return spec;
}

nlohmann::json to_json(const SynthSpec& spec) {
    nlohmann::json objects = nlohmann::json::array();
    for (const auto& o : spec.objects) {
        objects.push_back({{"shape", o.shape == ShapeKind::box ? "box" : "cylinder"},
                           {"size", o.size},
                           {"position", o.position},
                           {"color", o.color}});
    }
    return {{"floor_extent", spec.floor_extent},
            {"floor_color", spec.floor_color},
            {"objects", objects},
            {"density", spec.density},
            {"seed", spec.seed}};
}

double exposed_area(const SynthObject& object) {
    constexpr double pi = 3.14159265358979323846;
    const double sx = object.size[0];
    const double sy = object.size[1];
    const double sz = object.size[2];
    if (object.shape == ShapeKind::box) {
        return sx * sy + 2.0 * (sx + sy) * sz;
    }
    const double r = 0.5 * sx;
    return pi * r * r + 2.0 * pi * r * sz;
}

namespace {

constexpr double kPi = 3.14159265358979323846;

bool inside_footprint(const SynthObject& o, double x, double y) {
    const double dx = x - o.position[0];
    const double dy = y - o.position[1];
    if (o.shape == ShapeKind::box) {
        return std::abs(dx) < 0.5 * o.size[0] && std::abs(dy) < 0.5 * o.size[1];
    }
    const double r = 0.5 * o.size[0];
    return dx * dx + dy * dy < r * r;
}

std::size_t count_for(double area, double density) {
    return static_cast<std::size_t>(std::floor(area * density + 0.5));
}

class SurfaceSampler {
public:
    explicit SurfaceSampler(std::uint64_t seed)
        : rng_(seed) {}

    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }

    // Samples a point on a rectangle spanned by origin + u*a + v*b, u,v in [0,1).
    Vec3 on_rectangle(const std::array<double, 3>& origin, const std::array<double, 3>& a,
                      const std::array<double, 3>& b) {
        const double u = uniform(0.0, 1.0);
        const double v = uniform(0.0, 1.0);
        return {static_cast<float>(origin[0] + u * a[0] + v * b[0]),
                static_cast<float>(origin[1] + u * a[1] + v * b[1]),
                static_cast<float>(origin[2] + u * a[2] + v * b[2])};
    }

private:
    std::mt19937_64 rng_;
};

void push_point(PointScene& scene, const Vec3& p, const Vec3& color) {
    scene.ids.push_back(static_cast<PointId>(scene.positions.size()));
    scene.positions.push_back(p);
    scene.colors.push_back(color);
}

void sample_box(SurfaceSampler& sampler, const SynthObject& o, double density, PointScene& scene) {
    const double sx = o.size[0];
    const double sy = o.size[1];
    const double sz = o.size[2];
    const double x0 = o.position[0] - 0.5 * sx;
    const double y0 = o.position[1] - 0.5 * sy;
    const double z0 = o.position[2];
    struct Face {
        std::array<double, 3> origin, a, b;
    };
    const Face faces[] = {
        {{x0, y0, z0 + sz}, {sx, 0, 0}, {0, sy, 0}}, // top
        {{x0, y0, z0}, {sx, 0, 0}, {0, 0, sz}},      // -y side
        {{x0, y0 + sy, z0}, {sx, 0, 0}, {0, 0, sz}}, // +y side
        {{x0, y0, z0}, {0, sy, 0}, {0, 0, sz}},      // -x side
        {{x0 + sx, y0, z0}, {0, sy, 0}, {0, 0, sz}}, // +x side
    };
    for (const Face& f : faces) {
        const double area = std::hypot(f.a[0], f.a[1], f.a[2]) * std::hypot(f.b[0], f.b[1], f.b[2]);
        const std::size_t n = count_for(area, density);
        for (std::size_t i = 0; i < n; ++i) {
            push_point(scene, sampler.on_rectangle(f.origin, f.a, f.b), o.color);
        }
    }
}

void sample_cylinder(SurfaceSampler& sampler, const SynthObject& o, double density, PointScene& scene) {
    const double r = 0.5 * o.size[0];
    const double h = o.size[2];
    const std::size_t n_top = count_for(kPi * r * r, density);
    for (std::size_t i = 0; i < n_top; ++i) {
        const double rad = r * std::sqrt(sampler.uniform(0.0, 1.0));
        const double phi = sampler.uniform(0.0, 2.0 * kPi);
        push_point(scene,
                   {static_cast<float>(o.position[0] + rad * std::cos(phi)),
                    static_cast<float>(o.position[1] + rad * std::sin(phi)),
                    static_cast<float>(o.position[2] + h)},
                   o.color);
    }
    const std::size_t n_side = count_for(2.0 * kPi * r * h, density);
    for (std::size_t i = 0; i < n_side; ++i) {
        const double phi = sampler.uniform(0.0, 2.0 * kPi);
        const double z = sampler.uniform(0.0, h);
        push_point(scene,
                   {static_cast<float>(o.position[0] + r * std::cos(phi)),
                    static_cast<float>(o.position[1] + r * std::sin(phi)),
                    static_cast<float>(o.position[2] + z)},
                   o.color);
    }
}

} // namespace

PointScene synth_scene(const SynthSpec& spec) {
    spec.validate();
    SurfaceSampler sampler(spec.seed);
    PointScene scene;

    // Floor: visible area is the square minus object footprints resting on it.
    const double half = 0.5 * spec.floor_extent;
    double covered = 0.0;
    for (const auto& o : spec.objects) {
        if (o.position[2] == 0.0f) {
            covered += o.shape == ShapeKind::box ? double(o.size[0]) * o.size[1]
                                                 : kPi * 0.25 * double(o.size[0]) * o.size[0];
        }
    }
    const double floor_area = std::max(0.0, double(spec.floor_extent) * spec.floor_extent - covered);
    const std::size_t n_floor = count_for(floor_area, spec.density);
    std::size_t attempts = 0;
    while (scene.size() < n_floor) {
        if (++attempts > 1000 * (n_floor + 1)) {
            throw ConfigError("objects cover the whole floor");
        }
        const double x = sampler.uniform(-half, half);
        const double y = sampler.uniform(-half, half);
        const bool hidden = std::any_of(spec.objects.begin(), spec.objects.end(), [&](const SynthObject& o) {
            return o.position[2] == 0.0f && inside_footprint(o, x, y);
        });
        if (!hidden) {
            push_point(scene, {static_cast<float>(x), static_cast<float>(y), 0.0f}, spec.floor_color);
        }
    }

    for (const auto& o : spec.objects) {
        if (o.shape == ShapeKind::box) {
            sample_box(sampler, o, spec.density, scene);
        } else {
            sample_cylinder(sampler, o, spec.density, scene);
        }
    }
    if (scene.size() == 0) {
        throw ConfigError("synth spec produces an empty scene");
    }
    return scene;
}

SynthSpec random_synth_spec(std::uint64_t seed, std::size_t target_points) {
    if (target_points == 0) {
        throw ConfigError("random_synth_spec: target_points must be positive");
    }
    std::mt19937_64 rng(seed);
    auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    SynthSpec spec;
    spec.floor_extent = 3.0f;
    spec.seed = seed;
    const float gray = static_cast<float>(uniform(0.4, 0.6));
    spec.floor_color = {gray, gray, gray};

    const int count = std::uniform_int_distribution<int>(1, 3)(rng);
    std::vector<double> radii;
    for (int placed = 0, tries = 0; placed < count && tries < 200; ++tries) {
        SynthObject o;
        o.shape = uniform(0.0, 1.0) < 0.5 ? ShapeKind::box : ShapeKind::cylinder;
        const double w = uniform(0.4, 1.0);
        const double d = o.shape == ShapeKind::box ? uniform(0.4, 1.0) : w;
        o.size = {static_cast<float>(w), static_cast<float>(d), static_cast<float>(uniform(0.3, 1.0))};
        const double r = 0.5 * std::hypot(w, d);
        const double lim = 0.5 * spec.floor_extent - r;
        o.position = {static_cast<float>(uniform(-lim, lim)), static_cast<float>(uniform(-lim, lim)), 0.0f};
        bool clear = true;
        for (std::size_t j = 0; j < spec.objects.size(); ++j) {
            const auto& other = spec.objects[j].position;
            if (std::hypot(o.position[0] - other[0], o.position[1] - other[1]) < r + radii[j]) {
                clear = false;
            }
        }
        if (!clear) {
            continue;
        }
        o.color = {static_cast<float>(uniform(0.0, 1.0)), static_cast<float>(uniform(0.0, 1.0)),
                   static_cast<float>(uniform(0.0, 1.0))};
        spec.objects.push_back(o);
        radii.push_back(r);
        ++placed;
    }

    double area = double(spec.floor_extent) * spec.floor_extent;
    for (const auto& o : spec.objects) {
        area -= o.shape == ShapeKind::box ? double(o.size[0]) * o.size[1] : kPi * 0.25 * double(o.size[0]) * o.size[0];
        area += exposed_area(o);
    }
    spec.density = static_cast<float>(static_cast<double>(target_points) / area);
    return spec;
}

} // namespace mm3d
