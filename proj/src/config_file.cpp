#include "mgvq/config_file.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mgvq {

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double to_double(std::string_view key, std::string_view v) {
    try {
        std::size_t used = 0;
        const std::string s(v);
        const double d = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument("trailing characters");
        return d;
    } catch (const std::exception&) {
        throw std::invalid_argument("config: '" + std::string(key) + "' expects a number, got '" + std::string(v) + "'");
    }
}

std::uint64_t to_uint(std::string_view key, std::string_view v) {
    std::uint64_t out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size())
        throw std::invalid_argument("config: '" + std::string(key) + "' expects a non-negative integer, got '" +
                                    std::string(v) + "'");
    return out;
}

}  // namespace

void apply_setting(TrainConfig& cfg, std::string_view key, std::string_view value) {
    key = trim(key);
    value = trim(value);
    auto u = [&] { return static_cast<std::size_t>(to_uint(key, value)); };
    auto d = [&] { return to_double(key, value); };

    if (key == "learning_rate") cfg.learning_rate = d();
    else if (key == "weight_decay") cfg.weight_decay = d();
    else if (key == "beta1") cfg.beta1 = d();
    else if (key == "beta2") cfg.beta2 = d();
    else if (key == "adam_eps") cfg.adam_eps = d();
    else if (key == "batch_size") cfg.batch_size = u();
    else if (key == "steps") cfg.steps = u();
    else if (key == "seed") cfg.seed = to_uint(key, value);
    else if (key == "downsample") cfg.model.downsample = u();
    else if (key == "latent_dim") cfg.model.latent_dim = u();
    else if (key == "hidden_dim") cfg.model.hidden_dim = u();
    else if (key == "depth") cfg.model.depth = u();
    else if (key == "groups") cfg.groups = u();
    else if (key == "codebook_size") cfg.codebook_size = u();
    else if (key == "image_size") cfg.image_size = u();
    else if (key == "eval_every") cfg.eval_every = u();
    else if (key == "lambda1") cfg.weights.l2 = d();
    else if (key == "lambda2") cfg.weights.charbonnier = d();
    else if (key == "lambda3") cfg.weights.commit = d();
    else if (key == "lambda4") cfg.weights.vq = d();
    else if (key == "lambda5") cfg.weights.gan = d();
    else if (key == "lambda6") cfg.weights.perceptual = d();
    else if (key == "epsilon") cfg.weights.epsilon = d();
    else if (key == "mask_probs") {
        cfg.mask_probs.clear();
        std::string_view rest = value;
        while (!rest.empty()) {
            const auto comma = rest.find(',');
            const auto item = trim(rest.substr(0, comma));
            if (!item.empty()) cfg.mask_probs.push_back(to_double(key, item));
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
    } else {
        throw std::invalid_argument("config: unknown key '" + std::string(key) + "'");
    }
}

void apply_assignment(TrainConfig& cfg, std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos)
        throw std::invalid_argument("config: expected key=value, got '" + std::string(assignment) + "'");
    apply_setting(cfg, assignment.substr(0, eq), assignment.substr(eq + 1));
}

void apply_config_text(TrainConfig& cfg, std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view v = line;
        if (auto hash = v.find('#'); hash != std::string_view::npos) v = v.substr(0, hash);
        v = trim(v);
        if (v.empty()) continue;
        try {
            apply_assignment(cfg, v);
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
}

TrainConfig load_config_file(const std::filesystem::path& path, TrainConfig base) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    apply_config_text(base, ss.str());
    return base;
}

}  // namespace mgvq
