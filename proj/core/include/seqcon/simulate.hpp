#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "seqcon/gaussian.hpp"
#include "seqcon/table.hpp"

namespace seqcon {

// Synthetic scenario description (parsed from the config's "scenario"
// section). Two families: "preferential" (gamma marks + LGCP point pattern
// on a shared latent field) and "st_gaussian" (gaussian observations of an
// AR1 x Matern interaction field).
struct Scenario {
    std::string kind = "preferential";
    double x0 = 0.0, y0 = 0.0, x1 = 10.0, y1 = 10.0;
    int nx = 10, ny = 10;
    int time_nodes = 10;
    char structure = 'c';  // spatio-temporal composition (a)-(d)

    // truth parameters
    double beta0 = 1.0, beta1 = 0.5;
    double gamma_shape = 3.0;
    double spatial_range = 3.0, spatial_sd = 1.0;
    double rw2_prec = 10.0;
    double alpha = 0.7;
    double obs_prec = 4.0, ar1_rho = 0.7;  // st_gaussian
    double covariate_range = 5.0, covariate_sd = 1.0;

    // sampling plans
    int strat_cells_x = 5, strat_cells_y = 5, strat_per_cell = 10;
    double lgcp_target_count = 2500.0;
    int obs_per_slice = 16;  // st_gaussian

    int n_cells() const { return nx * ny; }
    double cell_area() const { return (x1 - x0) / nx * (y1 - y0) / ny; }
};

Scenario parse_scenario(const std::string& config_text);
Scenario parse_scenario_file(const std::string& path);

struct Truth {
    Vector spatial;                        // persistent spatial field (per cell)
    std::vector<Vector> spatial_by_time;   // structures a/d: per-time replicates
    Vector temporal;                       // trend f_t or iid v_t
    Vector covariate;                      // per cell
    Vector st_field;                       // st_gaussian: index t*ncells + s
    double lgcp_intercept = 0.0;           // calibrated beta0*
};

// Latent fields and covariate surface; deterministic per seed.
Truth simulate_truth(const Scenario& scenario, std::uint64_t seed);

// Stratified random sampling of the gamma response; uniform locations in
// each stratum, per cell per time node.
DataTable stratified_sampling(const Scenario& scenario, const Truth& truth, std::uint64_t seed);

// beta0* = log(target) - log sum_i exp(eta_i) area_i, so the expected total
// point count is the target.
double calibrate_lgcp_intercept(double target_count, const Vector& shared_eta,
                                const Vector& areas);

// Lattice LGCP draw: per-element Poisson counts with mean exp(eta_i) area_i
// and uniform within-cell placement (u, v in [0,1)). -inf marks masked
// cells; eta > 50 is rejected as an intensity overflow.
struct LgcpDraw {
    std::vector<int> counts;
    struct Point {
        int element = 0;
        double u = 0.0, v = 0.0;
    };
    std::vector<Point> points;
};
LgcpDraw simulate_lgcp(const Vector& log_intensity, const Vector& areas, std::uint64_t seed);

// Full scenario outputs (tables in the model data format).
struct ScenarioOutput {
    DataTable stratified;
    DataTable preferential;  // marked points from the LGCP survey
    DataTable lgcp_cells;    // per-element counts with log-area offsets
    DataTable st_obs;        // st_gaussian observations
    Truth truth;
};
ScenarioOutput simulate_scenario(const Scenario& scenario, std::uint64_t seed);

// Truth serialization for comparison tooling.
std::string truth_to_json(const Scenario& scenario, const Truth& truth);

}  // namespace seqcon
