#include "seqcon/simulate.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "seqcon/effects.hpp"
#include "seqcon/errors.hpp"
#include "seqcon/rng.hpp"

namespace seqcon {

using nlohmann::json;

Scenario parse_scenario(const std::string& config_text) {
    json doc;
    try {
        doc = json::parse(config_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("scenario config is not valid JSON: ") + e.what());
    }
    if (!doc.contains("scenario")) throw ConfigError("config error at scenario: section missing");
    const json& s = doc.at("scenario");
    Scenario out;
    out.kind = s.value("kind", "preferential");
    if (out.kind != "preferential" && out.kind != "st_gaussian")
        throw ConfigError("config error at scenario.kind: unknown kind '" + out.kind + "'");
    if (s.contains("domain")) {
        const json& d = s.at("domain");
        out.x0 = d.value("x0", 0.0);
        out.y0 = d.value("y0", 0.0);
        out.x1 = d.value("x1", 10.0);
        out.y1 = d.value("y1", 10.0);
        out.nx = d.value("nx", 10);
        out.ny = d.value("ny", 10);
    }
    if (out.nx < 2 || out.ny < 2)
        throw ConfigError("config error at scenario.domain: lattice resolution must be >= 4x4 total");
    out.time_nodes = s.value("time_nodes", 10);
    if (out.time_nodes < 1) throw ConfigError("config error at scenario.time_nodes: must be >= 1");
    const std::string structure = s.value("structure", "c");
    if (structure.size() != 1 || structure[0] < 'a' || structure[0] > 'd')
        throw ConfigError("config error at scenario.structure: one of a,b,c,d expected");
    out.structure = structure[0];
    if (s.contains("true_params")) {
        const json& p = s.at("true_params");
        out.beta0 = p.value("beta0", out.beta0);
        out.beta1 = p.value("beta1", out.beta1);
        out.gamma_shape = p.value("gamma_shape", out.gamma_shape);
        out.spatial_range = p.value("spatial_range", out.spatial_range);
        out.spatial_sd = p.value("spatial_sd", out.spatial_sd);
        out.rw2_prec = p.value("rw2_prec", out.rw2_prec);
        out.alpha = p.value("alpha", out.alpha);
        out.obs_prec = p.value("obs_prec", out.obs_prec);
        out.ar1_rho = p.value("ar1_rho", out.ar1_rho);
        out.covariate_range = p.value("covariate_range", out.covariate_range);
        out.covariate_sd = p.value("covariate_sd", out.covariate_sd);
    }
    if (s.contains("stratified")) {
        const json& p = s.at("stratified");
        out.strat_cells_x = p.value("cells_x", out.strat_cells_x);
        out.strat_cells_y = p.value("cells_y", out.strat_cells_y);
        out.strat_per_cell = p.value("per_cell", out.strat_per_cell);
    }
    if (s.contains("lgcp")) out.lgcp_target_count = s.at("lgcp").value("target_count", 2500.0);
    out.obs_per_slice = s.value("obs_per_slice", out.obs_per_slice);
    return out;
}

Scenario parse_scenario_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_scenario(ss.str());
}

namespace {

EffectSpec matern_spec(const Scenario& sc, double range, double sd) {
    EffectSpec e;
    e.kind = EffectKind::lattice_matern;
    e.nx = sc.nx;
    e.ny = sc.ny;
    e.spacing = (sc.x1 - sc.x0) / sc.nx;
    e.hyper["log_range"] = HyperBinding{"", std::log(range)};
    e.hyper["log_sd"] = HyperBinding{"", std::log(sd)};
    return e;
}

Vector draw_matern(const Scenario& sc, double range, double sd, std::uint64_t seed) {
    const EffectSpec e = matern_spec(sc, range, sd);
    SparsePrecision q = build_effect_precision(e, {});
    return sample_gmrf(make_density(Vector::Zero(q.dim()), q), seed);
}

Vector draw_rw2(int n, double tau, std::uint64_t seed) {
    EffectSpec e;
    e.kind = EffectKind::rw2;
    e.size = n;
    e.sum_to_zero = true;
    e.hyper["tau"] = HyperBinding{"", tau};
    SparsePrecision q = build_effect_precision(e, {});
    SpMat jitter(n, n);
    jitter.setIdentity();
    q.matrix += SpMat(jitter * 1e-6);
    const auto basis = effect_null_basis(e);
    return sample_gmrf_constrained(make_density(Vector::Zero(n), q), basis,
                                   Vector::Zero(static_cast<int>(basis.size())), seed);
}

// Cell index of a point; cells are the lattice pixels.
int locate_cell(const Scenario& sc, double x, double y) {
    int ix = static_cast<int>((x - sc.x0) / (sc.x1 - sc.x0) * sc.nx);
    int iy = static_cast<int>((y - sc.y0) / (sc.y1 - sc.y0) * sc.ny);
    ix = std::min(std::max(ix, 0), sc.nx - 1);
    iy = std::min(std::max(iy, 0), sc.ny - 1);
    return iy * sc.nx + ix;
}

double cell_cx(const Scenario& sc, int cell) {
    const int ix = cell % sc.nx;
    return sc.x0 + (ix + 0.5) * (sc.x1 - sc.x0) / sc.nx;
}
double cell_cy(const Scenario& sc, int cell) {
    const int iy = cell / sc.nx;
    return sc.y0 + (iy + 0.5) * (sc.y1 - sc.y0) / sc.ny;
}

// Spatial value at (cell, time) for the configured structure.
double spatial_at(const Scenario& sc, const Truth& truth, int cell, int t) {
    switch (sc.structure) {
        case 'a':
        case 'd': return truth.spatial_by_time[t][cell];
        default: return truth.spatial[cell];
    }
}

double temporal_at(const Scenario& sc, const Truth& truth, int t) {
    return sc.structure == 'a' ? 0.0 : truth.temporal[t];
}

double marks_eta(const Scenario& sc, const Truth& truth, int cell, int t) {
    return sc.beta0 + sc.beta1 * truth.covariate[cell] + temporal_at(sc, truth, t) +
           spatial_at(sc, truth, cell, t);
}

DataTable empty_points_table() {
    return DataTable({"x", "y", "time", "covariate", "response", "cell", "st_index"}, 0);
}

}  // namespace

Truth simulate_truth(const Scenario& sc, std::uint64_t seed) {
    Truth truth;
    truth.covariate = draw_matern(sc, sc.covariate_range, sc.covariate_sd, mix64(seed) + 101);

    if (sc.kind == "st_gaussian") {
        EffectSpec kron;
        kron.kind = EffectKind::kronecker;
        EffectSpec time;
        time.kind = EffectKind::ar1;
        time.size = sc.time_nodes;
        time.hyper["tau"] = HyperBinding{"", 1.0};
        time.hyper["rho"] = HyperBinding{"", sc.ar1_rho};
        kron.children.push_back(time);
        kron.children.push_back(matern_spec(sc, sc.spatial_range, sc.spatial_sd));
        SparsePrecision q = build_effect_precision(kron, {});
        truth.st_field = sample_gmrf(make_density(Vector::Zero(q.dim()), q), mix64(seed) + 7);
        truth.spatial = Vector::Zero(sc.n_cells());
        truth.temporal = Vector::Zero(sc.time_nodes);
        return truth;
    }

    // Preferential scenario: structures (a)-(d).
    if (sc.structure == 'a' || sc.structure == 'd') {
        truth.spatial_by_time.resize(sc.time_nodes);
        for (int t = 0; t < sc.time_nodes; ++t)
            truth.spatial_by_time[t] = draw_matern(sc, sc.spatial_range, sc.spatial_sd,
                                                   Rng::derived(seed, 1000 + t).bits());
        truth.spatial = Vector::Zero(sc.n_cells());
    } else {
        truth.spatial = draw_matern(sc, sc.spatial_range, sc.spatial_sd, mix64(seed) + 7);
    }
    if (sc.structure == 'b') {
        truth.temporal.resize(sc.time_nodes);
        Rng rng = Rng::derived(seed, 2000);
        for (int t = 0; t < sc.time_nodes; ++t)
            truth.temporal[t] = rng.normal() / std::sqrt(sc.rw2_prec);
    } else if (sc.structure != 'a' && sc.time_nodes >= 3) {
        truth.temporal = draw_rw2(sc.time_nodes, sc.rw2_prec, mix64(seed) + 31);
    } else {
        // A trend over fewer than three nodes is not identifiable.
        truth.temporal = Vector::Zero(sc.time_nodes);
    }

    // Calibrate the LGCP intercept to the stratified design's sample size.
    const int n_el = sc.n_cells() * sc.time_nodes;
    Vector shared_eta(n_el);
    Vector areas = Vector::Constant(n_el, sc.cell_area());
    for (int t = 0; t < sc.time_nodes; ++t)
        for (int c = 0; c < sc.n_cells(); ++c)
            shared_eta[t * sc.n_cells() + c] =
                sc.alpha * temporal_at(sc, truth, t) + spatial_at(sc, truth, c, t);
    truth.lgcp_intercept = calibrate_lgcp_intercept(sc.lgcp_target_count, shared_eta, areas);
    return truth;
}

DataTable stratified_sampling(const Scenario& sc, const Truth& truth, std::uint64_t seed) {
    DataTable table = empty_points_table();
    const double sx = (sc.x1 - sc.x0) / sc.strat_cells_x;
    const double sy = (sc.y1 - sc.y0) / sc.strat_cells_y;
    for (int t = 0; t < sc.time_nodes; ++t) {
        Rng rng = Rng::derived(seed, 3000 + t);
        for (int cy = 0; cy < sc.strat_cells_y; ++cy) {
            for (int cx = 0; cx < sc.strat_cells_x; ++cx) {
                for (int k = 0; k < sc.strat_per_cell; ++k) {
                    const double x = sc.x0 + (cx + rng.uniform()) * sx;
                    const double y = sc.y0 + (cy + rng.uniform()) * sy;
                    const int cell = locate_cell(sc, x, y);
                    const double eta = marks_eta(sc, truth, cell, t);
                    const double response =
                        rng.gamma(sc.gamma_shape, std::exp(eta) / sc.gamma_shape);
                    table.append_row({{"x", x},
                                      {"y", y},
                                      {"time", static_cast<double>(t)},
                                      {"covariate", truth.covariate[cell]},
                                      {"response", response},
                                      {"cell", static_cast<double>(cell)},
                                      {"st_index", static_cast<double>(t * sc.n_cells() + cell)}});
                }
            }
        }
    }
    return table;
}

double calibrate_lgcp_intercept(double target_count, const Vector& shared_eta,
                                const Vector& areas) {
    if (shared_eta.size() == 0) throw NumericalError("calibrate_lgcp_intercept: empty lattice");
    if (!(target_count > 0.0))
        throw NumericalError("calibrate_lgcp_intercept: target count must be positive");
    if (shared_eta.size() != areas.size())
        throw NumericalError("calibrate_lgcp_intercept: length mismatch");
    double mass = 0.0;
    for (int i = 0; i < shared_eta.size(); ++i) {
        if (!(areas[i] > 0.0)) throw NumericalError("calibrate_lgcp_intercept: areas must be > 0");
        mass += std::exp(shared_eta[i]) * areas[i];
    }
    return std::log(target_count) - std::log(mass);
}

LgcpDraw simulate_lgcp(const Vector& log_intensity, const Vector& areas, std::uint64_t seed) {
    if (log_intensity.size() != areas.size())
        throw NumericalError("simulate_lgcp: length mismatch");
    LgcpDraw out;
    out.counts.assign(log_intensity.size(), 0);
    Rng rng(seed);
    for (int i = 0; i < log_intensity.size(); ++i) {
        const double eta = log_intensity[i];
        if (std::isnan(eta) || eta > 50.0)
            throw NumericalError("simulate_lgcp: intensity overflow at element " +
                                 std::to_string(i) + " (eta = " + std::to_string(eta) + ")");
        const double mean = std::exp(eta) * areas[i];
        const int count = rng.poisson(mean);
        out.counts[i] = count;
        for (int k = 0; k < count; ++k) {
            LgcpDraw::Point p;
            p.element = i;
            p.u = rng.uniform();
            p.v = rng.uniform();
            out.points.push_back(p);
        }
    }
    return out;
}

ScenarioOutput simulate_scenario(const Scenario& sc, std::uint64_t seed) {
    ScenarioOutput out;
    out.truth = simulate_truth(sc, seed);
    out.stratified = empty_points_table();
    out.preferential = empty_points_table();
    out.lgcp_cells = DataTable(
        {"x", "y", "time", "covariate", "count", "log_area", "cell", "st_index"}, 0);
    out.st_obs = empty_points_table();

    if (sc.kind == "st_gaussian") {
        for (int t = 0; t < sc.time_nodes; ++t) {
            Rng rng = Rng::derived(seed, 5000 + t);
            for (int k = 0; k < sc.obs_per_slice; ++k) {
                const int cell = static_cast<int>(rng.uniform() * sc.n_cells()) % sc.n_cells();
                const int st = t * sc.n_cells() + cell;
                const double eta = sc.beta0 + out.truth.st_field[st];
                const double response = eta + rng.normal() / std::sqrt(sc.obs_prec);
                out.st_obs.append_row({{"x", cell_cx(sc, cell)},
                                       {"y", cell_cy(sc, cell)},
                                       {"time", static_cast<double>(t)},
                                       {"covariate", out.truth.covariate[cell]},
                                       {"response", response},
                                       {"cell", static_cast<double>(cell)},
                                       {"st_index", static_cast<double>(st)}});
            }
        }
        return out;
    }

    out.stratified = stratified_sampling(sc, out.truth, mix64(seed) + 11);

    // Preferential survey: one LGCP draw per time node, marks at the points.
    const int n_cells = sc.n_cells();
    const double area = sc.cell_area();
    const double dx = (sc.x1 - sc.x0) / sc.nx, dy = (sc.y1 - sc.y0) / sc.ny;
    for (int t = 0; t < sc.time_nodes; ++t) {
        Vector eta_pp(n_cells);
        for (int c = 0; c < n_cells; ++c)
            eta_pp[c] = out.truth.lgcp_intercept + sc.alpha * temporal_at(sc, out.truth, t) +
                        spatial_at(sc, out.truth, c, t);
        const LgcpDraw draw =
            simulate_lgcp(eta_pp, Vector::Constant(n_cells, area), Rng::derived(seed, 4000 + t).bits());
        Rng mark_rng = Rng::derived(seed, 6000 + t);
        for (const auto& p : draw.points) {
            const int cell = p.element;
            const int ix = cell % sc.nx, iy = cell / sc.nx;
            const double x = sc.x0 + (ix + p.u) * dx;
            const double y = sc.y0 + (iy + p.v) * dy;
            const double eta = marks_eta(sc, out.truth, cell, t);
            const double response = mark_rng.gamma(sc.gamma_shape, std::exp(eta) / sc.gamma_shape);
            out.preferential.append_row({{"x", x},
                                         {"y", y},
                                         {"time", static_cast<double>(t)},
                                         {"covariate", out.truth.covariate[cell]},
                                         {"response", response},
                                         {"cell", static_cast<double>(cell)},
                                         {"st_index", static_cast<double>(t * n_cells + cell)}});
        }
        for (int c = 0; c < n_cells; ++c) {
            out.lgcp_cells.append_row({{"x", cell_cx(sc, c)},
                                       {"y", cell_cy(sc, c)},
                                       {"time", static_cast<double>(t)},
                                       {"covariate", out.truth.covariate[c]},
                                       {"count", static_cast<double>(draw.counts[c])},
                                       {"log_area", std::log(area)},
                                       {"cell", static_cast<double>(c)},
                                       {"st_index", static_cast<double>(t * n_cells + c)}});
        }
    }
    return out;
}

std::string truth_to_json(const Scenario& sc, const Truth& truth) {
    json doc;
    doc["kind"] = sc.kind;
    auto vec = [](const Vector& v) {
        std::vector<double> out(v.data(), v.data() + v.size());
        return out;
    };
    doc["spatial"] = vec(truth.spatial);
    doc["temporal"] = vec(truth.temporal);
    doc["covariate"] = vec(truth.covariate);
    if (truth.st_field.size() > 0) doc["st_field"] = vec(truth.st_field);
    if (!truth.spatial_by_time.empty()) {
        json reps = json::array();
        for (const auto& v : truth.spatial_by_time) reps.push_back(vec(v));
        doc["spatial_by_time"] = reps;
    }
    doc["lgcp_intercept"] = truth.lgcp_intercept;
    doc["true_params"] = {{"beta0", sc.beta0},       {"beta1", sc.beta1},
                          {"gamma_shape", sc.gamma_shape}, {"spatial_range", sc.spatial_range},
                          {"spatial_sd", sc.spatial_sd},   {"rw2_prec", sc.rw2_prec},
                          {"alpha", sc.alpha},       {"obs_prec", sc.obs_prec},
                          {"ar1_rho", sc.ar1_rho}};
    return doc.dump(2);
}

}  // namespace seqcon
