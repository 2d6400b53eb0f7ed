#pragma once

// Global configuration: every loss weight, PID gain, infraction penalty and
// threshold lives here, loadable from a key=value text file.

#include <cstddef>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace m2da {

struct Config {
    // Loss weights
    double lambda_wp = 0.8;
    double lambda_ht = 1.0;
    double lambda_tf = 0.8;
    double lambda_kld = 0.9;
    double lambda_cc = 0.1;
    double lambda_sim = 0.1;
    double lambda_tl = 0.5;
    double lambda_sl = 0.1;
    double lambda_i = 0.1;

    // Heatmap / perception
    double heatmap_threshold = 0.9;
    std::size_t heatmap_size = 20;          // S
    double speed_norm = 5.0;                // m/s scale for the gt speed channel

    // Agent limits
    double a_max = 1.0;                     // m/s^2
    double v_max = 5.0;                     // m/s
    double envelope_dt = 0.5;               // s
    double collision_buffer_len = 3.7;      // m
    double collision_buffer_wid = 2.0;      // m

    // BEV raster
    double bev_meters_per_cell = 0.125;
    double bev_extent_front = 28.0;
    double bev_extent_rear = 4.0;
    double bev_extent_side = 16.0;
    std::size_t bev_cells = 256;
    bool bev_log1p = true;
    bool bev_z_clip_enabled = false;
    double bev_z_min = -1e9;
    double bev_z_max = 1e9;

    // PID gains (tuning, config-overridable)
    double lat_kp = 2.0;
    double lat_ki = 0.3;
    double lat_kd = 0.0;
    double lat_integral_cap = 1.0;
    double lon_kp = 0.8;
    double lon_ki = 0.15;
    double lon_kd = 0.0;
    double pid_dt = 0.5;

    // Infraction penalties (CARLA-leaderboard style)
    double penalty_ped = 0.50;
    double penalty_veh = 0.60;
    double penalty_stat = 0.65;
    double penalty_red = 0.70;

    // Simulator
    double sim_dt = 0.5;                    // 2 Hz tick
    double sim_throttle_accel = 2.0;        // m/s^2 at full throttle
    double sim_brake_decel = 4.0;           // m/s^2 at full brake
    double sim_drag = 0.05;                 // 1/s speed decay
    double sim_wheelbase = 2.5;             // m
    double sim_max_steer_rad = 0.6;
    double sim_block_speed = 0.1;           // m/s
    double sim_block_seconds = 90.0;
    double sim_timeout_factor = 4.0;        // x expert route time
    double sim_offroute_abort_m = 8.0;      // lateral deviation that ends a run
    std::size_t sim_image_size = 64;        // synthetic camera raster H=W

    // Model dimensions (defaults follow the full-scale configuration; the
    // training smoke test overrides them with a smaller toy profile)
    std::size_t model_dim = 256;            // D_f
    std::size_t model_heads = 1;
    std::size_t model_enc_layers = 6;       // K
    std::size_t model_spatial = 8;          // token grid per modality (spatial x spatial)
    std::size_t model_gru_hidden = 64;
    double model_token_dropout = 0.1;
    bool model_use_fusion = true;           // LVAFusion on/off (ablation)
    bool model_use_da_mask = true;          // DA mask on/off (ablation)
    bool model_fusion_self_attention = true;
    std::size_t waypoint_count = 10;        // T
    double layer_norm_eps = 1e-5;

    // DA module
    std::size_t da_kernel = 15;
    double da_eps = 1e-7;                   // kld epsilon
    double dabn_eps = 1e-5;

    // Training
    double train_lr = 1e-3;
    std::size_t train_seed = 7;

    void set(const std::string& key, const std::string& value);
    std::string get(const std::string& key) const;

    static Config load(const std::string& path) {
        Config c;
        std::ifstream in(path);
        if (!in) throw std::runtime_error("Config::load: cannot open " + path);
        std::string line;
        while (std::getline(in, line)) {
            auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            auto trim = [](std::string s) {
                auto b = s.find_first_not_of(" \t\r");
                auto e = s.find_last_not_of(" \t\r");
                return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
            };
            std::string key = trim(line.substr(0, eq));
            std::string value = trim(line.substr(eq + 1));
            if (!key.empty()) c.set(key, value);
        }
        return c;
    }

    std::vector<std::string> keys() const {
        std::vector<std::string> ks;
        for (const auto& [k, _] : fields()) ks.push_back(k);
        return ks;
    }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("Config::save: cannot open " + path);
        for (const auto& [k, _] : fields()) out << k << " = " << get(k) << "\n";
    }

private:
    enum class Kind { F64, U64, Boolean };
    struct Field {
        Kind kind;
        void* ptr;
    };

    std::map<std::string, Field> fields() const {
        auto* self = const_cast<Config*>(this);
        return {
            {"lambda_wp", {Kind::F64, &self->lambda_wp}},
            {"lambda_ht", {Kind::F64, &self->lambda_ht}},
            {"lambda_tf", {Kind::F64, &self->lambda_tf}},
            {"lambda_kld", {Kind::F64, &self->lambda_kld}},
            {"lambda_cc", {Kind::F64, &self->lambda_cc}},
            {"lambda_sim", {Kind::F64, &self->lambda_sim}},
            {"lambda_tl", {Kind::F64, &self->lambda_tl}},
            {"lambda_sl", {Kind::F64, &self->lambda_sl}},
            {"lambda_i", {Kind::F64, &self->lambda_i}},
            {"heatmap_threshold", {Kind::F64, &self->heatmap_threshold}},
            {"heatmap_size", {Kind::U64, &self->heatmap_size}},
            {"speed_norm", {Kind::F64, &self->speed_norm}},
            {"a_max", {Kind::F64, &self->a_max}},
            {"v_max", {Kind::F64, &self->v_max}},
            {"envelope_dt", {Kind::F64, &self->envelope_dt}},
            {"collision_buffer_len", {Kind::F64, &self->collision_buffer_len}},
            {"collision_buffer_wid", {Kind::F64, &self->collision_buffer_wid}},
            {"bev_meters_per_cell", {Kind::F64, &self->bev_meters_per_cell}},
            {"bev_extent_front", {Kind::F64, &self->bev_extent_front}},
            {"bev_extent_rear", {Kind::F64, &self->bev_extent_rear}},
            {"bev_extent_side", {Kind::F64, &self->bev_extent_side}},
            {"bev_cells", {Kind::U64, &self->bev_cells}},
            {"bev_log1p", {Kind::Boolean, &self->bev_log1p}},
            {"bev_z_clip_enabled", {Kind::Boolean, &self->bev_z_clip_enabled}},
            {"bev_z_min", {Kind::F64, &self->bev_z_min}},
            {"bev_z_max", {Kind::F64, &self->bev_z_max}},
            {"lat_kp", {Kind::F64, &self->lat_kp}},
            {"lat_ki", {Kind::F64, &self->lat_ki}},
            {"lat_kd", {Kind::F64, &self->lat_kd}},
            {"lat_integral_cap", {Kind::F64, &self->lat_integral_cap}},
            {"lon_kp", {Kind::F64, &self->lon_kp}},
            {"lon_ki", {Kind::F64, &self->lon_ki}},
            {"lon_kd", {Kind::F64, &self->lon_kd}},
            {"pid_dt", {Kind::F64, &self->pid_dt}},
            {"penalty_ped", {Kind::F64, &self->penalty_ped}},
            {"penalty_veh", {Kind::F64, &self->penalty_veh}},
            {"penalty_stat", {Kind::F64, &self->penalty_stat}},
            {"penalty_red", {Kind::F64, &self->penalty_red}},
            {"sim_dt", {Kind::F64, &self->sim_dt}},
            {"sim_throttle_accel", {Kind::F64, &self->sim_throttle_accel}},
            {"sim_brake_decel", {Kind::F64, &self->sim_brake_decel}},
            {"sim_drag", {Kind::F64, &self->sim_drag}},
            {"sim_wheelbase", {Kind::F64, &self->sim_wheelbase}},
            {"sim_max_steer_rad", {Kind::F64, &self->sim_max_steer_rad}},
            {"sim_block_speed", {Kind::F64, &self->sim_block_speed}},
            {"sim_block_seconds", {Kind::F64, &self->sim_block_seconds}},
            {"sim_timeout_factor", {Kind::F64, &self->sim_timeout_factor}},
            {"sim_offroute_abort_m", {Kind::F64, &self->sim_offroute_abort_m}},
            {"sim_image_size", {Kind::U64, &self->sim_image_size}},
            {"model_dim", {Kind::U64, &self->model_dim}},
            {"model_heads", {Kind::U64, &self->model_heads}},
            {"model_enc_layers", {Kind::U64, &self->model_enc_layers}},
            {"model_spatial", {Kind::U64, &self->model_spatial}},
            {"model_gru_hidden", {Kind::U64, &self->model_gru_hidden}},
            {"model_token_dropout", {Kind::F64, &self->model_token_dropout}},
            {"model_use_fusion", {Kind::Boolean, &self->model_use_fusion}},
            {"model_use_da_mask", {Kind::Boolean, &self->model_use_da_mask}},
            {"model_fusion_self_attention", {Kind::Boolean, &self->model_fusion_self_attention}},
            {"waypoint_count", {Kind::U64, &self->waypoint_count}},
            {"layer_norm_eps", {Kind::F64, &self->layer_norm_eps}},
            {"da_kernel", {Kind::U64, &self->da_kernel}},
            {"da_eps", {Kind::F64, &self->da_eps}},
            {"dabn_eps", {Kind::F64, &self->dabn_eps}},
            {"train_lr", {Kind::F64, &self->train_lr}},
            {"train_seed", {Kind::U64, &self->train_seed}},
        };
    }
};

inline void Config::set(const std::string& key, const std::string& value) {
    auto fs = fields();
    auto it = fs.find(key);
    if (it == fs.end()) throw std::invalid_argument("Config: unknown key " + key);
    switch (it->second.kind) {
        case Kind::F64:
            *static_cast<double*>(it->second.ptr) = std::stod(value);
            break;
        case Kind::U64:
            *static_cast<std::size_t*>(it->second.ptr) = std::stoull(value);
            break;
        case Kind::Boolean:
            *static_cast<bool*>(it->second.ptr) = (value == "1" || value == "true" || value == "on");
            break;
    }
}

inline std::string Config::get(const std::string& key) const {
    auto fs = fields();
    auto it = fs.find(key);
    if (it == fs.end()) throw std::invalid_argument("Config: unknown key " + key);
    std::ostringstream os;
    switch (it->second.kind) {
        case Kind::F64:
            os << *static_cast<const double*>(it->second.ptr);
            break;
        case Kind::U64:
            os << *static_cast<const std::size_t*>(it->second.ptr);
            break;
        case Kind::Boolean:
            os << (*static_cast<const bool*>(it->second.ptr) ? "true" : "false");
            break;
    }
    return os.str();
}

}  // namespace m2da
