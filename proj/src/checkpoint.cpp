#include "psplat/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace psplat {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

std::vector<std::string> property_names(int sh_degree) {
    std::vector<std::string> names = {"x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2"};
    const int rest = color_coefficient_count(sh_degree) - 3;
    for (int i = 0; i < rest; ++i) names.push_back("f_rest_" + std::to_string(i));
    names.insert(names.end(), {"opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"});
    return names;
}

} // namespace

void save_checkpoint(const GaussianCloud& cloud, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    const auto names = property_names(cloud.sh_degree());
    out << "ply\nformat binary_little_endian 1.0\nelement vertex " << cloud.size() << '\n';
    for (const auto& n : names) out << "property float " << n << '\n';
    out << "end_header\n";
    std::vector<float> row;
    for (const Gaussian& g : cloud.gaussians()) {
        row.clear();
        for (int k = 0; k < 3; ++k) row.push_back(static_cast<float>(g.mu[k]));
        for (int k = 0; k < 3; ++k) row.push_back(static_cast<float>(g.color[k]));
        for (double v : g.sh_rest) row.push_back(static_cast<float>(v));
        row.push_back(static_cast<float>(g.opacity_raw));
        for (int k = 0; k < 3; ++k) row.push_back(static_cast<float>(g.log_scale[k]));
        for (int k = 0; k < 4; ++k) row.push_back(static_cast<float>(g.rotation[k]));
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
    if (!out) throw IoError("failed writing checkpoint " + path.string());
}

GaussianCloud load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read checkpoint " + path.string());
    std::string line;
    std::size_t count = 0;
    std::vector<std::string> names;
    bool binary = false;
    while (std::getline(in, line)) {
        if (line == "end_header") break;
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "format") {
            std::string fmt;
            ls >> fmt;
            binary = fmt == "binary_little_endian";
        } else if (word == "element") {
            std::string what;
            ls >> what >> count;
        } else if (word == "property") {
            std::string type, name;
            ls >> type >> name;
            if (type != "float") throw IoError("checkpoint properties must be float");
            names.push_back(name);
        }
    }
    if (!binary || line != "end_header") throw IoError("not a binary little-endian PLY: " + path.string());
    int degree = -1;
    for (int d = 0; d <= 3; ++d) {
        if (property_names(d) == names) degree = d;
    }
    if (degree < 0) throw IoError("unrecognized checkpoint layout: " + path.string());

    GaussianCloud cloud(degree);
    cloud.reserve(count);
    std::vector<float> row(names.size());
    const int rest = color_coefficient_count(degree) - 3;
    for (std::size_t i = 0; i < count; ++i) {
        in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)));
        if (!in) throw IoError("truncated checkpoint: " + path.string());
        Gaussian g;
        std::size_t p = 0;
        for (int k = 0; k < 3; ++k) g.mu[k] = row[p++];
        for (int k = 0; k < 3; ++k) g.color[k] = row[p++];
        for (int k = 0; k < rest; ++k) g.sh_rest.push_back(row[p++]);
        g.opacity_raw = row[p++];
        for (int k = 0; k < 3; ++k) g.log_scale[k] = row[p++];
        for (int k = 0; k < 4; ++k) g.rotation[k] = row[p++];
        cloud.push_back(std::move(g));
    }
    return cloud;
}

} // namespace psplat
