#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mgvq/codec.hpp"
#include "mgvq/config_file.hpp"
#include "mgvq/experiments.hpp"
#include "mgvq/image_io.hpp"
#include "mgvq/trainer.hpp"

using namespace mgvq;

namespace {

struct ConfigOptions {
    std::string config_file;
    std::vector<std::string> overrides;
};

struct DataOptions {
    std::string dir;
    std::size_t synthetic = 0;
    std::size_t max_images = 100000;
};

void add_config_options(CLI::App* cmd, ConfigOptions& o) {
    cmd->add_option("--config", o.config_file, "key=value training configuration file")->check(CLI::ExistingFile);
    cmd->add_option("--set", o.overrides, "override one setting, e.g. --set steps=500 (repeatable)");
}

void add_data_options(CLI::App* cmd, DataOptions& o) {
    auto* dir = cmd->add_option("--data", o.dir, "directory of PNG images")->check(CLI::ExistingDirectory);
    auto* syn = cmd->add_option("--synthetic", o.synthetic, "use N procedurally generated images instead");
    dir->excludes(syn);
    cmd->add_option("--max-images", o.max_images, "cap on images read from --data");
}

TrainConfig build_config(const ConfigOptions& o, std::optional<std::uint64_t> seed, TrainConfig cfg = {}) {
    if (!o.config_file.empty()) cfg = load_config_file(o.config_file, cfg);
    for (const auto& s : o.overrides) apply_assignment(cfg, s);
    if (seed) cfg.seed = *seed;
    cfg.validate();
    return cfg;
}

std::vector<nd::Tensor> load_images(const DataOptions& o, std::size_t size, std::uint64_t seed) {
    if (o.synthetic) return synthetic_corpus(o.synthetic, size, seed);
    if (o.dir.empty()) throw std::invalid_argument("one of --data or --synthetic is required");
    return load_dataset(o.dir, o.max_images, seed, size);
}

std::vector<std::pair<std::size_t, std::size_t>> parse_cells(const std::string& text) {
    std::vector<std::pair<std::size_t, std::size_t>> cells;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) throw std::invalid_argument("cell '" + item + "' is not of the form A:B");
        try {
            cells.emplace_back(std::stoul(item.substr(0, colon)), std::stoul(item.substr(colon + 1)));
        } catch (const std::logic_error&) {
            throw std::invalid_argument("cell '" + item + "' is not of the form A:B");
        }
    }
    if (cells.empty()) throw std::invalid_argument("no cells given");
    return cells;
}

void write_report(const ExperimentReport& r, const std::string& path) {
    if (path.empty() || path == "-") {
        r.write_csv(std::cout);
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    r.write_csv(out);
    if (!out.flush()) throw std::runtime_error("write failed for " + path);
}

void print_eval(const EvalResult& ev) {
    std::cout << std::fixed << std::setprecision(4) << "psnr " << ev.psnr << "\nssim " << ev.ssim << "\nusage";
    for (double u : ev.usage.usage) std::cout << ' ' << u;
    std::cout << "\nperplexity";
    for (double p : ev.usage.perplexity) std::cout << ' ' << p;
    std::cout << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-group vector-quantized image tokenizer"};
    app.require_subcommand(1);
    app.fallthrough();
    std::optional<std::uint64_t> seed;
    app.add_option("--seed", seed, "random seed (overrides the config file)");

    // train
    auto* train = app.add_subcommand("train", "train a tokenizer and write a checkpoint");
    ConfigOptions train_cfg;
    DataOptions train_data;
    std::string train_out, train_log, train_resume;
    add_config_options(train, train_cfg);
    add_data_options(train, train_data);
    train->add_option("--out,-o", train_out, "checkpoint path")->required();
    train->add_option("--log", train_log, "JSON-lines metrics log");
    train->add_option("--resume", train_resume, "continue from this checkpoint")->check(CLI::ExistingFile);

    // encode
    auto* enc = app.add_subcommand("encode", "encode a PNG into a token stream");
    std::string enc_ckpt, enc_in, enc_out;
    enc->add_option("--checkpoint,-c", enc_ckpt)->required()->check(CLI::ExistingFile);
    enc->add_option("--input,-i", enc_in, "PNG image")->required();
    enc->add_option("--output,-o", enc_out, "token stream path")->required();

    // decode
    auto* dec = app.add_subcommand("decode", "decode a token stream into a PNG");
    std::string dec_ckpt, dec_in, dec_out;
    std::optional<std::size_t> dec_keep;
    int dec_bits = 8;
    dec->add_option("--checkpoint,-c", dec_ckpt)->required()->check(CLI::ExistingFile);
    dec->add_option("--input,-i", dec_in, "token stream")->required();
    dec->add_option("--output,-o", dec_out, "PNG path")->required();
    dec->add_option("--keep", dec_keep, "number of leading groups to use (default: all)");
    dec->add_option("--bit-depth", dec_bits, "PNG bit depth")->check(CLI::IsMember({8, 16}));

    // eval
    auto* ev = app.add_subcommand("eval", "report PSNR, SSIM and codebook usage");
    std::string ev_ckpt;
    DataOptions ev_data;
    std::optional<std::size_t> ev_keep;
    ev->add_option("--checkpoint,-c", ev_ckpt)->required()->check(CLI::ExistingFile);
    add_data_options(ev, ev_data);
    ev->add_option("--keep", ev_keep, "number of leading groups to use (default: all)");

    // experiments
    auto* exp = app.add_subcommand("experiment", "diagnostic experiments emitting CSV");
    exp->require_subcommand(1);

    auto* dp = exp->add_subcommand("deadpoints", "codebook dead-code study on synthetic blobs");
    DeadpointConfig dp_cfg;
    std::string dp_cells = "2:32,16:1024", dp_out, dp_points;
    dp->add_option("--cells", dp_cells, "comma-separated sub_dim:K cells")->capture_default_str();
    dp->add_option("--steps", dp_cfg.steps, "training steps per cell")->capture_default_str();
    dp->add_option("--batch-size", dp_cfg.batch_size, "")->capture_default_str();
    dp->add_option("--learning-rate", dp_cfg.learning_rate, "")->capture_default_str();
    dp->add_option("--samples", dp_cfg.train_samples, "training samples")->capture_default_str();
    dp->add_option("--out,-o", dp_out, "CSV report (default: stdout)");
    dp->add_option("--points", dp_points, "CSV of per-code coordinates for sub_dim 2 cells");

    auto* mk = exp->add_subcommand("mkeep", "quality against the number of kept groups");
    std::string mk_ckpt, mk_out;
    DataOptions mk_data;
    mk->add_option("--checkpoint,-c", mk_ckpt)->required()->check(CLI::ExistingFile);
    add_data_options(mk, mk_data);
    mk->add_option("--out,-o", mk_out, "CSV report (default: stdout)");

    auto* grid = exp->add_subcommand("grid", "train one model per (G, K) cell");
    ConfigOptions grid_cfg;
    DataOptions grid_data;
    std::string grid_cells = "4:64,1:256", grid_out;
    bool grid_no_mask = false;
    add_config_options(grid, grid_cfg);
    add_data_options(grid, grid_data);
    grid->add_option("--cells", grid_cells, "comma-separated G:K cells")->capture_default_str();
    grid->add_flag("--no-nested-mask", grid_no_mask, "train every cell with all groups kept");
    grid->add_option("--out,-o", grid_out, "CSV report (default: stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*train) {
            std::optional<Checkpoint> resume;
            if (!train_resume.empty()) resume = load_checkpoint(train_resume);
            const TrainConfig cfg = build_config(train_cfg, seed, resume ? resume->config : TrainConfig{});
            const auto split = split_dataset(load_images(train_data, cfg.image_size, cfg.seed));
            std::ofstream log_file;
            if (!train_log.empty()) {
                log_file.open(train_log, resume ? std::ios::app : std::ios::trunc);
                if (!log_file) throw std::runtime_error("cannot open log " + train_log);
            }
            std::cerr << "training on " << split.train.size() << " images, holding out " << split.eval.size() << '\n';
            const auto result = fit(cfg, split, train_log.empty() ? nullptr : &log_file, std::move(resume));
            save_checkpoint(result.checkpoint, train_out);
            const auto final_eval = evaluate(result.checkpoint, split.eval);
            std::cout << "step " << result.checkpoint.step << '\n';
            print_eval(final_eval);
        } else if (*enc) {
            const Checkpoint ckpt = load_checkpoint(enc_ckpt);
            const TokenStream s = encode_image_file(enc_in, ckpt);
            write_stream(enc_out, s);
            const std::size_t raw = std::size_t{s.header.orig_h} * s.header.orig_w * 3;
            const std::size_t payload = payload_bytes(s.header);
            std::cout << "grid " << s.header.grid_h << "x" << s.header.grid_w << ", " << payload << " payload bytes ("
                      << payload + kStreamHeaderBytes << " with header)\n";
            std::cout << "compression " << std::fixed << std::setprecision(2)
                      << static_cast<double>(raw) / static_cast<double>(payload) << ":1 payload, "
                      << static_cast<double>(raw) / static_cast<double>(payload + kStreamHeaderBytes) << ":1 file\n";
        } else if (*dec) {
            const Checkpoint ckpt = load_checkpoint(dec_ckpt);
            const TokenStream s = read_stream(dec_in);
            write_png(dec_out, decode_tokens(s, ckpt, dec_keep), dec_bits);
        } else if (*ev) {
            const Checkpoint ckpt = load_checkpoint(ev_ckpt);
            const auto images = load_images(ev_data, ckpt.config.image_size, seed.value_or(ckpt.config.seed));
            print_eval(evaluate(ckpt, images, ev_keep));
        } else if (*dp) {
            dp_cfg.cells = parse_cells(dp_cells);
            if (seed) dp_cfg.seed = *seed;
            const auto res = run_deadpoint_experiment(dp_cfg);
            write_report(res.report, dp_out);
            if (!dp_points.empty()) {
                std::ofstream out(dp_points, std::ios::binary);
                if (!out) throw std::runtime_error("cannot open " + dp_points + " for writing");
                write_code_points(out, res.points);
            }
        } else if (*mk) {
            const Checkpoint ckpt = load_checkpoint(mk_ckpt);
            const auto images = load_images(mk_data, ckpt.config.image_size, seed.value_or(ckpt.config.seed));
            write_report(run_mkeep_sweep(ckpt, images), mk_out);
        } else if (*grid) {
            GridConfig g;
            g.base = build_config(grid_cfg, seed);
            g.cells = parse_cells(grid_cells);
            g.nested_masking = !grid_no_mask;
            const auto split = split_dataset(load_images(grid_data, g.base.image_size, g.base.seed));
            write_report(run_ablation_grid(g, split), grid_out);
        }
    } catch (const std::exception& e) {
        std::cerr << "mgvq: error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
