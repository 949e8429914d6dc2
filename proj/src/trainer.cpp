#include "mgvq/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <numeric>

#include "mgvq/image_io.hpp"

namespace mgvq {

using nlohmann::json;

// ---------------------------------------------------------------- config

MaskSchedule TrainConfig::schedule() const {
    return mask_probs.empty() ? MaskSchedule::standard(groups) : MaskSchedule{mask_probs};
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0) || !(adam_eps > 0.0) || !(weight_decay >= 0.0))
        throw std::invalid_argument("train config: learning_rate and adam_eps must be positive, weight_decay non-negative");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0))
        throw std::invalid_argument("train config: beta1 and beta2 must lie in (0, 1)");
    if (batch_size == 0) throw std::invalid_argument("train config: batch_size must be positive");
    if (groups == 0 || codebook_size == 0) throw std::invalid_argument("train config: groups and codebook_size must be positive");
    model.validate();
    if (model.latent_dim % groups != 0)
        throw std::invalid_argument("train config: latent_dim " + std::to_string(model.latent_dim) +
                                    " is not divisible by " + std::to_string(groups) + " groups");
    if (image_size == 0 || image_size % model.downsample != 0)
        throw std::invalid_argument("train config: image_size " + std::to_string(image_size) +
                                    " must be a positive multiple of downsample " + std::to_string(model.downsample));
    auto sched = schedule();
    sched.validate();
    if (sched.probs.size() != groups)
        throw std::invalid_argument("train config: mask schedule has " + std::to_string(sched.probs.size()) +
                                    " entries for " + std::to_string(groups) + " groups");
    weights.validate();
}

json config_to_json(const TrainConfig& c) {
    return json{
        {"learning_rate", c.learning_rate},
        {"weight_decay", c.weight_decay},
        {"beta1", c.beta1},
        {"beta2", c.beta2},
        {"adam_eps", c.adam_eps},
        {"batch_size", c.batch_size},
        {"steps", c.steps},
        {"seed", c.seed},
        {"model",
         {{"downsample", c.model.downsample},
          {"latent_dim", c.model.latent_dim},
          {"hidden_dim", c.model.hidden_dim},
          {"depth", c.model.depth}}},
        {"groups", c.groups},
        {"codebook_size", c.codebook_size},
        {"mask_probs", c.mask_probs},
        {"weights",
         {{"l2", c.weights.l2},
          {"charbonnier", c.weights.charbonnier},
          {"commit", c.weights.commit},
          {"vq", c.weights.vq},
          {"gan", c.weights.gan},
          {"perceptual", c.weights.perceptual},
          {"epsilon", c.weights.epsilon}}},
        {"image_size", c.image_size},
        {"eval_every", c.eval_every},
    };
}

TrainConfig config_from_json(const json& j) {
    TrainConfig c;
    j.at("learning_rate").get_to(c.learning_rate);
    j.at("weight_decay").get_to(c.weight_decay);
    j.at("beta1").get_to(c.beta1);
    j.at("beta2").get_to(c.beta2);
    j.at("adam_eps").get_to(c.adam_eps);
    j.at("batch_size").get_to(c.batch_size);
    j.at("steps").get_to(c.steps);
    j.at("seed").get_to(c.seed);
    const auto& m = j.at("model");
    m.at("downsample").get_to(c.model.downsample);
    m.at("latent_dim").get_to(c.model.latent_dim);
    m.at("hidden_dim").get_to(c.model.hidden_dim);
    m.at("depth").get_to(c.model.depth);
    j.at("groups").get_to(c.groups);
    j.at("codebook_size").get_to(c.codebook_size);
    j.at("mask_probs").get_to(c.mask_probs);
    const auto& w = j.at("weights");
    w.at("l2").get_to(c.weights.l2);
    w.at("charbonnier").get_to(c.weights.charbonnier);
    w.at("commit").get_to(c.weights.commit);
    w.at("vq").get_to(c.weights.vq);
    w.at("gan").get_to(c.weights.gan);
    w.at("perceptual").get_to(c.weights.perceptual);
    w.at("epsilon").get_to(c.weights.epsilon);
    j.at("image_size").get_to(c.image_size);
    j.at("eval_every").get_to(c.eval_every);
    return c;
}

// ---------------------------------------------------------------- state

std::vector<NamedTensor> trainable(const Checkpoint& ckpt) {
    std::vector<NamedTensor> out;
    for (const auto& [name, t] : ckpt.params) out.push_back({name, t});
    for (std::size_t g = 0; g < ckpt.codebooks.tables.size(); ++g)
        out.push_back({"codebook." + std::to_string(g), ckpt.codebooks.tables[g]});
    return out;
}

Checkpoint initialize(const TrainConfig& cfg) {
    cfg.validate();
    Rng seeds(cfg.seed);
    const std::uint64_t param_seed = seeds.next(), codebook_seed = seeds.next(), loop_seed = seeds.next();
    Checkpoint c;
    c.config = cfg;
    c.params = init_params<float>(cfg.model, param_seed);
    c.codebooks = CodebookSet::init(cfg.groups, cfg.codebook_size, cfg.model.latent_dim / cfg.groups, codebook_seed);
    c.rng = Rng(loop_seed);
    return c;
}

// ---------------------------------------------------------------- checkpoint file
//
// "MGCK" | version u8 | manifest length u32 LE | JSON manifest | f32 LE blocks
// The manifest lists each tensor's name, shape and byte offset into the block
// region.

namespace {

constexpr char kCkptMagic[4] = {'M', 'G', 'C', 'K'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return std::uint32_t{p[0]} | std::uint32_t{p[1]} << 8 | std::uint32_t{p[2]} << 16 | std::uint32_t{p[3]} << 24;
}

void put_floats(std::vector<std::uint8_t>& out, std::span<const float> values) {
    for (float f : values) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_u32(out, bits);
    }
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
    std::vector<std::uint8_t> blocks;
    json tensors = json::array();
    auto add = [&](const std::string& name, const nd::Shape& shape, std::span<const float> values) {
        tensors.push_back({{"name", name}, {"shape", shape}, {"offset", blocks.size()}});
        put_floats(blocks, values);
    };
    const auto params = trainable(ckpt);
    for (const auto& p : params) add(p.name, p.tensor.shape(), p.tensor.data());
    if (!ckpt.opt.m.empty()) {
        if (ckpt.opt.m.size() != params.size() || ckpt.opt.v.size() != params.size())
            throw CheckpointError("optimizer state does not match parameter count");
        for (std::size_t i = 0; i < params.size(); ++i) {
            add("adam.m/" + params[i].name, params[i].tensor.shape(), ckpt.opt.m[i]);
            add("adam.v/" + params[i].name, params[i].tensor.shape(), ckpt.opt.v[i]);
        }
    }
    json manifest{
        {"config", config_to_json(ckpt.config)},
        {"step", ckpt.step},
        {"opt_step", ckpt.opt.step},
        {"rng_state", ckpt.rng.state()},
        {"tensors", tensors},
    };
    const std::string text = manifest.dump();

    std::vector<std::uint8_t> out(kCkptMagic, kCkptMagic + 4);
    out.push_back(kCheckpointVersion);
    put_u32(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
    out.insert(out.end(), blocks.begin(), blocks.end());
    return out;
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 9) throw CheckpointError("checkpoint truncated: " + std::to_string(bytes.size()) + " bytes");
    if (!std::equal(kCkptMagic, kCkptMagic + 4, bytes.begin())) throw CheckpointError("not a checkpoint: bad magic bytes");
    const unsigned version = bytes[4];
    if (version != kCheckpointVersion)
        throw CheckpointError("checkpoint format version " + std::to_string(version) + " is not supported (this build reads version " +
                              std::to_string(kCheckpointVersion) + ")");
    const std::uint32_t len = get_u32(bytes.data() + 5);
    if (bytes.size() < 9 + std::size_t{len}) throw CheckpointError("checkpoint truncated inside manifest");
    json manifest;
    try {
        manifest = json::parse(bytes.begin() + 9, bytes.begin() + 9 + len);
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("checkpoint manifest is not valid JSON: ") + e.what());
    }
    const auto blocks = bytes.subspan(9 + len);

    try {
        Checkpoint c;
        c.config = config_from_json(manifest.at("config"));
        c.config.validate();
        c.step = manifest.at("step").get<std::uint64_t>();
        c.opt.step = manifest.at("opt_step").get<std::uint64_t>();
        c.rng.restore(manifest.at("rng_state").get<std::string>());

        // Build a fresh state of the right structure, then overwrite values.
        Checkpoint shell = initialize(c.config);
        c.params = std::move(shell.params);
        c.codebooks = std::move(shell.codebooks);

        std::vector<std::pair<std::string, std::vector<float>>> found;
        for (const auto& t : manifest.at("tensors")) {
            const auto name = t.at("name").get<std::string>();
            const auto shape = t.at("shape").get<nd::Shape>();
            const auto offset = t.at("offset").get<std::size_t>();
            const std::size_t n = nd::numel(shape);
            if (offset + n * 4 > blocks.size()) throw CheckpointError("checkpoint truncated inside tensor '" + name + "'");
            std::vector<float> values(n);
            for (std::size_t i = 0; i < n; ++i) {
                const std::uint32_t bits = get_u32(blocks.data() + offset + 4 * i);
                std::memcpy(&values[i], &bits, 4);
            }
            found.emplace_back(name, std::move(values));
        }
        auto take = [&](const std::string& name, std::size_t expected) -> std::vector<float> {
            for (auto& [n, v] : found)
                if (n == name) {
                    if (v.size() != expected) throw CheckpointError("tensor '" + name + "' has the wrong size");
                    return std::move(v);
                }
            throw CheckpointError("checkpoint is missing tensor '" + name + "'");
        };
        auto params = trainable(c);
        for (auto& p : params) {
            auto v = take(p.name, p.tensor.numel());
            std::copy(v.begin(), v.end(), p.tensor.mutable_data().begin());
        }
        const bool has_opt = std::any_of(found.begin(), found.end(), [](const auto& f) { return f.first.rfind("adam.", 0) == 0; });
        if (has_opt) {
            for (auto& p : params) {
                c.opt.m.push_back(take("adam.m/" + p.name, p.tensor.numel()));
                c.opt.v.push_back(take("adam.v/" + p.name, p.tensor.numel()));
            }
        }
        return c;
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("checkpoint manifest is malformed: ") + e.what());
    }
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    const auto bytes = serialize_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw CheckpointError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return deserialize_checkpoint(bytes);
    } catch (const CheckpointError& e) {
        throw CheckpointError(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------- data

std::vector<nd::Tensor> load_dataset(const std::filesystem::path& dir, std::size_t max_items, std::uint64_t seed,
                                     std::size_t image_size) {
    if (!std::filesystem::is_directory(dir)) throw std::runtime_error("dataset directory " + dir.string() + " does not exist");
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    // Fisher-Yates with the portable generator.
    Rng rng(seed);
    for (std::size_t i = files.size(); i > 1; --i) std::swap(files[i - 1], files[rng.below(i)]);

    std::vector<nd::Tensor> images;
    for (const auto& f : files) {
        if (max_items && images.size() >= max_items) break;
        try {
            images.push_back(square_resize(read_png(f), image_size));
        } catch (const ImageError& e) {
            std::cerr << "warning: skipping " << f.string() << ": " << e.what() << '\n';
        }
    }
    if (images.empty()) throw std::runtime_error("no usable images in " + dir.string());
    return images;
}

DatasetSplit split_dataset(std::vector<nd::Tensor> images) {
    DatasetSplit s;
    const std::size_t n = images.size();
    std::size_t held = n / 10;
    if (held == 0 && n >= 2) held = 1;
    s.train.assign(images.begin(), images.end() - static_cast<std::ptrdiff_t>(held));
    s.eval.assign(images.end() - static_cast<std::ptrdiff_t>(held), images.end());
    if (s.eval.empty()) s.eval = s.train;
    return s;
}

// ---------------------------------------------------------------- optimization

void adamw_step(std::span<NamedTensor> params, OptState& state, const TrainConfig& cfg) {
    for (const auto& p : params) {
        if (!p.tensor.has_grad()) continue;
        for (float g : p.tensor.grad())
            if (std::isnan(g)) throw std::runtime_error("adamw_step: NaN gradient in parameter '" + p.name + "'");
    }
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.tensor.numel(), 0.0f);
            state.v.emplace_back(p.tensor.numel(), 0.0f);
        }
    }
    if (state.m.size() != params.size()) throw std::invalid_argument("adamw_step: optimizer state does not match parameters");

    ++state.step;
    const double lr = cfg.learning_rate, b1 = cfg.beta1, b2 = cfg.beta2;
    const double decay = 1.0 - lr * cfg.weight_decay;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto w = params[k].tensor.mutable_data();
        auto g = params[k].tensor.grad();
        auto& m = state.m[k];
        auto& v = state.v[k];
        if (m.size() != w.size()) throw std::invalid_argument("adamw_step: moment shape differs for '" + params[k].name + "'");
        const bool has = !g.empty();
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = has ? static_cast<double>(g[i]) : 0.0;
            const double mi = b1 * m[i] + (1.0 - b1) * gi;
            const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            const double upd = lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.adam_eps);
            w[i] = static_cast<float>(static_cast<double>(w[i]) * decay - upd);
        }
    }
}

StepResult train_step(std::span<const nd::Tensor> batch, Checkpoint& ckpt, std::optional<std::size_t> forced_keep) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    const auto& cfg = ckpt.config;
    const nd::Tensor x = stack_images(batch);

    ckpt.params.zero_grad();
    ckpt.codebooks.zero_grad();

    const nd::Tensor z = encode(x, ckpt.params, cfg.model);
    const auto q = quantize(z, ckpt.codebooks);
    const nd::Tensor st = straight_through(z, q.z_q);
    const std::size_t keep = forced_keep ? *forced_keep : sample_keep(cfg.schedule(), ckpt.rng);
    const nd::Tensor masked = nested_mask(st, keep, cfg.groups);
    const nd::Tensor recon = decode(masked, ckpt.params, cfg.model);
    const auto loss = total_loss(recon, x, z, q.z_q, cfg.weights);

    if (loss.total.tracks()) nd::backward(loss.total);
    auto params = trainable(ckpt);
    adamw_step(params, ckpt.opt, cfg);
    ++ckpt.step;

    StepResult r;
    r.losses = loss.parts;
    r.keep = keep;
    r.usage = usage_stats(q.tokens, cfg.codebook_size, cfg.groups);
    return r;
}

Reconstruction reconstruct(const Checkpoint& ckpt, const nd::Tensor& batch, std::optional<std::size_t> keep) {
    nd::NoGradGuard no_grad;
    const auto& cfg = ckpt.config;
    const nd::Tensor z = encode(batch, ckpt.params, cfg.model);
    auto q = quantize(z, ckpt.codebooks);
    const nd::Tensor masked = nested_mask(q.z_q, keep.value_or(cfg.groups), cfg.groups);
    return {decode(masked, ckpt.params, cfg.model), std::move(q.tokens)};
}

EvalResult evaluate(const Checkpoint& ckpt, std::span<const nd::Tensor> images, std::optional<std::size_t> keep) {
    if (images.empty()) throw std::invalid_argument("evaluate: no images");
    constexpr std::size_t chunk = 32;
    EvalResult r;
    UsageCounter counter(ckpt.config.codebook_size, ckpt.config.groups);
    double ssim_sum = 0.0;
    for (std::size_t start = 0; start < images.size(); start += chunk) {
        const std::size_t end = std::min(images.size(), start + chunk);
        const auto rec = reconstruct(ckpt, stack_images(images.subspan(start, end - start)), keep);
        counter.add(rec.tokens);
        for (std::size_t i = start; i < end; ++i) {
            const nd::Tensor out = unstack_image(rec.images, i - start);
            r.image_psnr.push_back(psnr(images[i], out));
            ssim_sum += ssim(images[i], out);
        }
    }
    r.psnr = std::accumulate(r.image_psnr.begin(), r.image_psnr.end(), 0.0) / static_cast<double>(images.size());
    r.ssim = ssim_sum / static_cast<double>(images.size());
    r.usage = counter.stats();
    return r;
}

json StepLog::to_json() const {
    json j{
        {"step", step},
        {"keep", keep},
        {"loss",
         {{"l2", losses.l2},
          {"charbonnier", losses.charbonnier},
          {"commit", losses.commit},
          {"vq", losses.vq},
          {"gan", losses.gan},
          {"perceptual", losses.perceptual},
          {"total", losses.total}}},
        {"usage", usage},
    };
    if (psnr) j["psnr"] = *psnr;
    return j;
}

FitResult fit(const TrainConfig& cfg, const DatasetSplit& data, std::ostream* log_out, std::optional<Checkpoint> resume) {
    cfg.validate();
    if (data.train.empty()) throw std::invalid_argument("fit: empty training set");
    if (resume && (resume->config.model != cfg.model || resume->config.groups != cfg.groups ||
                   resume->config.codebook_size != cfg.codebook_size))
        throw std::invalid_argument("fit: resumed checkpoint has a different model or quantizer shape");
    FitResult res{resume ? std::move(*resume) : initialize(cfg), {}};
    Checkpoint& ck = res.checkpoint;
    ck.config = cfg;

    std::vector<nd::Tensor> batch(cfg.batch_size);
    while (ck.step < cfg.steps) {
        for (auto& b : batch) b = data.train[ck.rng.below(data.train.size())];
        const auto sr = train_step(batch, ck);

        StepLog entry{ck.step, sr.keep, sr.losses, sr.usage.usage, std::nullopt};
        if (cfg.eval_every && ck.step % cfg.eval_every == 0 && !data.eval.empty())
            entry.psnr = evaluate(ck, data.eval).psnr;
        if (log_out) {
            *log_out << entry.to_json().dump() << '\n';
            log_out->flush();
            if (!*log_out) throw std::runtime_error("fit: metrics log write failed at step " + std::to_string(ck.step));
        }
        res.log.push_back(std::move(entry));
    }
    return res;
}

}  // namespace mgvq
