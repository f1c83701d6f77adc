#include "seqcon/report_io.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "seqcon/errors.hpp"
#include "seqcon/version.hpp"

namespace seqcon {

using nlohmann::json;

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Records are emitted with stable key order and stable float formatting.
void emit(std::ofstream& out, const std::vector<std::pair<std::string, std::string>>& fields) {
    out << "{";
    for (std::size_t i = 0; i < fields.size(); ++i) {
        out << "\"" << fields[i].first << "\":" << fields[i].second;
        if (i + 1 < fields.size()) out << ",";
    }
    out << "}\n";
}

std::string quoted(const std::string& s) { return "\"" + s + "\""; }

}  // namespace

void write_results(const ConsensusReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);

    emit(out, {{"record", quoted("meta")},
               {"mode", quoted(report.mode)},
               {"engine_version", quoted(kVersion)},
               {"effect_density_convention", quoted("theta_mode_conditional")}});

    for (const auto& [name, m] : report.fixed) {
        emit(out, {{"record", quoted("fixed")},
                   {"name", quoted(name)},
                   {"mean", fmt(m.mean)},
                   {"sd", fmt(1.0 / std::sqrt(m.precision))},
                   {"precision", fmt(m.precision)}});
    }

    for (const auto& [name, pe] : report.effects) {
        for (int i = 0; i < pe.marginal_mean.size(); ++i) {
            std::vector<std::pair<std::string, std::string>> fields = {
                {"record", quoted("effect_node")},
                {"effect", quoted(name)},
                {"index", std::to_string(i)},
                {"mean", fmt(pe.marginal_mean[i])},
                {"sd", fmt(1.0 / std::sqrt(pe.marginal_precision[i]))},
                {"pooled", pe.pooled ? "true" : "false"}};
            if (pe.mv_mean.size() == pe.marginal_mean.size()) {
                fields.push_back({"mv_mean", fmt(pe.mv_mean[i])});
                fields.push_back(
                    {"mv_sd_conditional", fmt(1.0 / std::sqrt(pe.mv_conditional_precision[i]))});
                fields.push_back({"mv_sd_exact", fmt(1.0 / std::sqrt(pe.mv_exact_precision[i]))});
            }
            if (!pe.pooled) fields.push_back({"step", std::to_string(pe.provenance_step)});
            emit(out, fields);
        }
    }

    for (const auto& ar : report.alphas) {
        emit(out, {{"record", quoted("alpha")},
                   {"name", quoted(ar.alpha_name)},
                   {"source_effect", quoted(ar.source_effect)},
                   {"point", fmt(ar.estimate.point)},
                   {"gaussian_mean", fmt(ar.estimate.gaussian.mean)},
                   {"gaussian_sd", fmt(1.0 / std::sqrt(ar.estimate.gaussian.precision))},
                   {"node_count", std::to_string(ar.estimate.node_count)},
                   {"applied_scale", fmt(ar.applied_scale)},
                   {"step", std::to_string(ar.step)}});
    }

    for (const auto& [name, grid] : report.theta_marginals) {
        if (grid.dim() != 1) continue;
        emit(out, {{"record", quoted("hyper_summary")},
                   {"name", quoted(name)},
                   {"mean", fmt(grid.mean(0))},
                   {"sd", fmt(grid.sd(0))},
                   {"q025", fmt(grid.quantile(0, 0.025))},
                   {"q500", fmt(grid.quantile(0, 0.5))},
                   {"q975", fmt(grid.quantile(0, 0.975))},
                   {"mode", fmt(grid.mode.empty() ? grid.mean(0) : grid.mode[0])}});
    }

    // Final joint grid support points.
    const auto& g = report.hyper;
    for (std::size_t k = 0; k < g.n_points() && g.dim() > 0; ++k) {
        const auto pt = g.point(k);
        std::string coords = "[";
        for (std::size_t d = 0; d < pt.size(); ++d)
            coords += fmt(pt[d]) + (d + 1 < pt.size() ? "," : "");
        coords += "]";
        std::string names = "[";
        for (std::size_t d = 0; d < g.names.size(); ++d)
            names += quoted(g.names[d]) + (d + 1 < g.names.size() ? "," : "");
        names += "]";
        emit(out, {{"record", quoted("hyper_point")},
                   {"names", names},
                   {"theta", coords},
                   {"log_density", fmt(g.log_density[k])},
                   {"weight", fmt(g.weights[k])}});
    }
    if (!out) throw IoError("write failed: " + path);
}

LoadedResults read_results(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open results: " + path);
    LoadedResults res;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw IoError(path + ":" + std::to_string(lineno) + ": bad record: " + e.what());
        }
        const std::string kind = rec.value("record", "");
        if (kind == "meta") {
            res.mode = rec.value("mode", "");
        } else if (kind == "fixed") {
            res.fixed[rec.at("name")] = {rec.at("mean").get<double>(),
                                         rec.at("precision").get<double>()};
        } else if (kind == "effect_node") {
            auto& nodes = res.effects[rec.at("effect")];
            const std::size_t idx = rec.at("index").get<std::size_t>();
            if (nodes.size() <= idx) nodes.resize(idx + 1);
            auto& node = nodes[idx];
            node.mean = rec.at("mean").get<double>();
            node.sd = rec.at("sd").get<double>();
            node.pooled = rec.value("pooled", false);
            if (rec.contains("mv_mean")) {
                node.mv_mean = rec.at("mv_mean").get<double>();
                node.mv_sd_conditional = rec.at("mv_sd_conditional").get<double>();
                node.mv_sd_exact = rec.at("mv_sd_exact").get<double>();
            }
        } else if (kind == "alpha") {
            res.alphas[rec.at("name")] = rec.at("point").get<double>();
            res.alpha_means[rec.at("name")] = rec.at("gaussian_mean").get<double>();
        } else if (kind == "hyper_summary") {
            auto& h = res.hyper_summary[rec.at("name")];
            for (const auto& key : {"mean", "sd", "q025", "q500", "q975", "mode"})
                h[key] = rec.at(key).get<double>();
        }
    }
    return res;
}

void write_runlog(const ConsensusReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    for (const auto& s : report.steps) {
        emit(out, {{"record", quoted("step")},
                   {"pass", quoted(s.pass)},
                   {"step", std::to_string(s.step)},
                   {"rows", std::to_string(s.rows)},
                   {"wall_time", fmt(s.wall_time)},
                   {"log_marginal_likelihood", fmt(s.log_marginal_likelihood)}});
    }
    emit(out, {{"record", quoted("total")},
               {"mode", quoted(report.mode)},
               {"fit_wall_time", fmt(report.fit_wall_time)}});
    if (!out) throw IoError("write failed: " + path);
}

std::string file_checksum(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot checksum: " + path);
    std::uint64_t h = 1469598103934665603ULL;
    char buf[65536];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        const std::streamsize n = in.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ULL;
        }
        if (!in) break;
    }
    char hex[32];
    std::snprintf(hex, sizeof hex, "fnv1a64:%016" PRIx64, h);
    return hex;
}

void write_manifest(const Manifest& manifest, const std::string& out_dir) {
    json doc;
    doc["command"] = manifest.command;
    doc["engine_version"] = kVersion;
    doc["config"] = manifest.config_path;
    doc["data"] = manifest.data_paths;
    doc["seed"] = manifest.seed;
    doc["options"] = manifest.options;
    doc["wall_times"] = manifest.wall_times;
    json outputs = json::array();
    for (const auto& name : manifest.outputs) {
        outputs.push_back({{"file", name}, {"checksum", file_checksum(out_dir + "/" + name)}});
    }
    doc["outputs"] = outputs;
    std::ofstream out(out_dir + "/manifest.json");
    if (!out) throw IoError("cannot open for writing: " + out_dir + "/manifest.json");
    out << doc.dump(2) << "\n";
    if (!out) throw IoError("write failed: " + out_dir + "/manifest.json");
}

}  // namespace seqcon
