// Command-line entry point: dataset collection, training, closed-loop
// evaluation, gradient checking, and point-cloud rasterization.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "m2da/bev.hpp"
#include "m2da/config.hpp"
#include "m2da/dataset.hpp"
#include "m2da/model.hpp"
#include "m2da/report.hpp"
#include "m2da/sim.hpp"
#include "m2da/train.hpp"

namespace {

std::vector<m2da::RouteSpec> select_routes(const std::string& names, const m2da::Config& cfg) {
    auto all = m2da::builtin_routes(cfg);
    if (names.empty() || names == "all") return all;
    std::vector<m2da::RouteSpec> out;
    std::stringstream ss(names);
    std::string name;
    while (std::getline(ss, name, ',')) {
        bool found = false;
        for (const auto& r : all)
            if (r.name == name) {
                out.push_back(r);
                found = true;
            }
        if (!found) throw CLI::ValidationError("routes", "unknown route '" + name + "'");
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"M2DA driving pipeline"};
    app.require_subcommand(1);

    std::string config_path;
    app.add_option("--config", config_path, "key=value configuration file");

    // collect
    auto* collect = app.add_subcommand("collect", "roll the expert and record a dataset");
    std::string collect_routes = "all", collect_out;
    std::uint64_t collect_seed = 1;
    std::size_t collect_frames = 2000;
    collect->add_option("--routes", collect_routes, "comma-separated route names or 'all'");
    collect->add_option("--seed", collect_seed, "base seed");
    collect->add_option("--frames", collect_frames, "number of frames to record");
    collect->add_option("--out", collect_out, "output dataset file")->required();

    // train
    auto* train = app.add_subcommand("train", "train the driving model by imitation");
    std::string train_data, train_ckpt;
    std::size_t train_epochs = 30;
    train->add_option("--data", train_data, "dataset file from 'collect'")->required();
    train->add_option("--epochs", train_epochs, "training epochs");
    train->add_option("--ckpt", train_ckpt, "output checkpoint file")->required();

    // eval
    auto* eval = app.add_subcommand("eval", "closed-loop benchmark of a checkpoint");
    std::string eval_ckpt, eval_routes = "all", eval_report;
    std::size_t eval_repeats = 3;
    std::uint64_t eval_seed = 1;
    bool eval_expert = false;
    eval->add_option("--ckpt", eval_ckpt, "checkpoint file ('expert' runs the privileged expert)");
    eval->add_option("--routes", eval_routes, "comma-separated route names or 'all'");
    eval->add_option("--repeats", eval_repeats, "repeats per route");
    eval->add_option("--seed", eval_seed, "base seed");
    eval->add_option("--report", eval_report, "report path (text; a .csv twin is written too)");
    eval->add_flag("--expert", eval_expert, "evaluate the privileged expert instead");

    // gradcheck
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");

    // rasterize
    auto* rasterize_cmd = app.add_subcommand("rasterize", "rasterize a point cloud to a BEV grid");
    std::string rast_in, rast_out;
    rasterize_cmd->add_option("--in", rast_in, "binary point cloud file")->required();
    rasterize_cmd->add_option("--out", rast_out, "output grid file (raw u32)")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        m2da::Config cfg;
        if (!config_path.empty()) cfg = m2da::Config::load(config_path);

        if (collect->parsed()) {
            auto routes = select_routes(collect_routes, cfg);
            auto records = m2da::collect_dataset(routes, collect_seed, collect_frames, cfg);
            m2da::save_dataset(records, collect_out);
            std::cout << "wrote " << records.size() << " records to " << collect_out << "\n";
        } else if (train->parsed()) {
            auto records = m2da::load_dataset(train_data);
            m2da::M2DAModel model(cfg, cfg.train_seed);
            auto stats = m2da::train_driving(model, records, train_epochs, cfg.train_lr,
                                             cfg.train_seed, cfg);
            model.save_checkpoint(train_ckpt);
            std::cout << "trained " << train_epochs << " epochs on " << records.size()
                      << " records, final loss " << stats.final_loss << "\n"
                      << "checkpoint written to " << train_ckpt << "\n";
        } else if (eval->parsed()) {
            auto routes = select_routes(eval_routes, cfg);
            m2da::BenchmarkReport rep;
            if (eval_expert || eval_ckpt == "expert") {
                auto factory = [&cfg]() {
                    return m2da::Policy([&cfg](const m2da::Scene& s) {
                        return m2da::expert_policy(s, cfg);
                    });
                };
                rep = m2da::evaluate_benchmark(factory, routes, eval_repeats, eval_seed, cfg);
            } else {
                if (eval_ckpt.empty())
                    throw CLI::ValidationError("--ckpt", "required unless --expert is given");
                m2da::M2DAModel model = m2da::M2DAModel::load_checkpoint(eval_ckpt);
                const m2da::Config& mcfg = model.config();
                auto factory = [&model, &mcfg]() { return m2da::make_model_policy(model, mcfg); };
                rep = m2da::evaluate_benchmark(factory, routes, eval_repeats, eval_seed, cfg);
            }
            std::cout << m2da::format_text_report(rep);
            if (!eval_report.empty()) {
                m2da::write_report(rep, eval_report);
                std::cout << "report written to " << eval_report << " and " << eval_report
                          << ".csv\n";
            }
        } else if (gradcheck->parsed()) {
            m2da::Rng rng(3);
            struct Check {
                std::string name;
                double err;
            };
            std::vector<Check> checks;
            auto x = rng.uniform_tensor({4, 5}, -1.0, 1.0);
            checks.push_back({"sigmoid", m2da::finite_diff_check(
                [](const m2da::Tensor& t, m2da::Tape* tp) { return m2da::sum(m2da::sigmoid(t, tp), tp); }, x)});
            checks.push_back({"softmax", m2da::finite_diff_check(
                [](const m2da::Tensor& t, m2da::Tape* tp) {
                    return m2da::sum(m2da::mul(m2da::softmax(t, tp), t, tp), tp);
                }, x)});
            auto g = rng.uniform_tensor({5}, 0.5, 1.5);
            auto b = rng.uniform_tensor({5}, -0.5, 0.5);
            checks.push_back({"layer_norm", m2da::finite_diff_check(
                [&](const m2da::Tensor& t, m2da::Tape* tp) {
                    return m2da::sum(m2da::layer_norm(t, g, b, 1e-5, tp), tp);
                }, x)});
            auto w = rng.uniform_tensor({2, 3, 3, 3}, -0.5, 0.5);
            auto img = rng.uniform_tensor({3, 6, 6}, -1.0, 1.0);
            checks.push_back({"conv2d", m2da::finite_diff_check(
                [&](const m2da::Tensor& t, m2da::Tape* tp) {
                    return m2da::sum(m2da::conv2d(t, w, m2da::Tensor::zeros({2}), 2, 1, tp), tp);
                }, img)});
            bool ok = true;
            for (const auto& c : checks) {
                bool pass = c.err < 1e-5;
                ok = ok && pass;
                std::printf("%-12s max rel err %.3e  %s\n", c.name.c_str(), c.err,
                            pass ? "ok" : "FAIL");
            }
            return ok ? 0 : 1;
        } else if (rasterize_cmd->parsed()) {
            m2da::PointCloud cloud = m2da::load_cloud(rast_in);
            m2da::BevGrid grid = m2da::rasterize(cloud, cfg);
            m2da::save_grid(grid, rast_out);
            std::cout << "rasterized " << cloud.points.size() << " points ("
                      << grid.dropped << " outside the grid) to " << rast_out << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
