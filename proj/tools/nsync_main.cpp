// Command-line surface: pretraining, dataset generation, negative curation,
// finetuning, sampling, evaluation, and the five-variant ablation sweep.
// Every command is a pure function of (config, seeds, input files); outputs
// are byte-reproducible except for the manifest's wall-clock field.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "nsync/common.hpp"
#include "nsync/ddim.hpp"
#include "nsync/hash.hpp"
#include "nsync/metrics.hpp"
#include "nsync/model.hpp"
#include "nsync/rng.hpp"
#include "nsync/styleworld.hpp"
#include "nsync/trainer.hpp"

namespace fs = std::filesystem;
using namespace nsync;

namespace {

constexpr const char* kToolVersion = "1.0.0";

using Json = nlohmann::ordered_json;

Json load_json_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    NSYNC_CHECK(in.good(), "cannot open config file ", path);
    try {
        return Json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(str_cat("config ", path, " is not valid JSON: ", e.what()));
    }
}

void require_keys(const Json& j, const char* where, std::initializer_list<const char*> allowed) {
    NSYNC_CHECK(j.is_object(), where, " must be a JSON object");
    for (const auto& item : j.items()) {
        bool known = false;
        for (const char* k : allowed) known = known || item.key() == k;
        NSYNC_CHECK(known, "unknown key '", item.key(), "' in ", where);
    }
}

// A missing or null key falls back to its default; a present key must carry
// the right type.
Json object_section(const Json& j, const char* key, const char* where) {
    if (!j.contains(key) || j.at(key).is_null()) return Json::object();
    const Json& s = j.at(key);
    NSYNC_CHECK(s.is_object(), where, ".", key, " must be an object");
    return s;
}

bool has_value(const Json& j, const char* key) { return j.contains(key) && !j.at(key).is_null(); }

int get_int(const Json& j, const char* key, int fallback, const char* where) {
    if (!has_value(j, key)) return fallback;
    NSYNC_CHECK(j.at(key).is_number_integer(), where, ".", key, " must be an integer");
    return j.at(key).get<int>();
}

uint64_t get_u64(const Json& j, const char* key, uint64_t fallback, const char* where) {
    if (!has_value(j, key)) return fallback;
    const Json& v = j.at(key);
    NSYNC_CHECK(v.is_number_unsigned() || (v.is_number_integer() && v.get<int64_t>() >= 0), where,
                ".", key, " must be a non-negative integer");
    return v.get<uint64_t>();
}

double get_num(const Json& j, const char* key, double fallback, const char* where) {
    if (!has_value(j, key)) return fallback;
    NSYNC_CHECK(j.at(key).is_number(), where, ".", key, " must be a number");
    return j.at(key).get<double>();
}

bool get_bool(const Json& j, const char* key, bool fallback, const char* where) {
    if (!has_value(j, key)) return fallback;
    NSYNC_CHECK(j.at(key).is_boolean(), where, ".", key, " must be a boolean");
    return j.at(key).get<bool>();
}

std::string get_str(const Json& j, const char* key, const std::string& fallback,
                    const char* where) {
    if (!has_value(j, key)) return fallback;
    NSYNC_CHECK(j.at(key).is_string(), where, ".", key, " must be a string");
    return j.at(key).get<std::string>();
}

std::string need_str(const Json& j, const char* key, const char* where) {
    NSYNC_CHECK(has_value(j, key), where, ".", key, " is required");
    NSYNC_CHECK(j.at(key).is_string(), where, ".", key, " must be a string");
    return j.at(key).get<std::string>();
}

int need_int(const Json& j, const char* key, const char* where) {
    NSYNC_CHECK(has_value(j, key), where, ".", key, " is required");
    NSYNC_CHECK(j.at(key).is_number_integer(), where, ".", key, " must be an integer");
    return j.at(key).get<int>();
}

void write_file_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        NSYNC_CHECK(out.good(), "cannot open ", tmp, " for writing");
        out << content;
        out.flush();
        NSYNC_CHECK(out.good(), "failed writing ", tmp);
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    NSYNC_CHECK(!ec, "cannot move ", tmp, " into place: ", ec.message());
}

void ensure_outdir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    NSYNC_CHECK(!ec, "cannot create output directory ", dir, ": ", ec.message());
}

// Run record: enough to re-run the command bit for bit. Field order is fixed
// so re-runs differ only in the wall-clock line.
struct Manifest {
    Json j = Json::object();
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

    explicit Manifest(const char* command) {
        j["tool"] = Json{{"name", "nsync"}, {"version", kToolVersion}};
        j["command"] = command;
        j["config"] = Json::object();
        j["seeds"] = Json::object();
        j["inputs"] = Json::object();
        j["outputs"] = Json::object();
        j["interpretation"] = Json{{"schedule", "linear-standin"}};
    }

    void add_input(const char* name, const std::string& path) {
        j["inputs"][name] = Json{{"path", path}, {"fnv64", hash_file_hex(path)}};
    }
    void add_input_hashed(const char* name, const std::string& path, const std::string& fnv) {
        j["inputs"][name] = Json{{"path", path}, {"fnv64", fnv}};
    }
    void add_output(const char* name, const std::string& relpath) {
        j["outputs"][name] = relpath;
    }
    std::string finish() {
        j["wall_clock_sec"] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return j.dump(2) + "\n";
    }
};

// ---------------------------------------------------------------------------
// pretrain

void cmd_pretrain(const std::string& config_path, const std::string& out_dir,
                  std::optional<uint64_t> seed_override) {
    Manifest man("pretrain");
    const Json cfg = load_json_file(config_path);
    require_keys(cfg, "config", {"model", "schedule", "data", "train"});
    const Json model_j = object_section(cfg, "model", "config");
    require_keys(model_j, "config.model", {"d_hidden", "n_layers", "d_time", "d_e"});
    const Json sched_j = object_section(cfg, "schedule", "config");
    require_keys(sched_j, "config.schedule", {"T", "beta_min", "beta_max"});
    const Json data_j = object_section(cfg, "data", "config");
    require_keys(data_j, "config.data", {"n_per_style", "class_seed", "render_seed"});
    const Json train_j = object_section(cfg, "train", "config");
    require_keys(train_j, "config.train",
                 {"iterations", "batch", "lr", "beta1", "beta2", "adam_eps", "log_every", "seed"});

    const StyleWorld world = bundled_world();
    DenoiserConfig mc;
    mc.d_data = world.cfg.d_data();
    mc.d_hidden = get_int(model_j, "d_hidden", mc.d_hidden, "config.model");
    mc.n_layers = get_int(model_j, "n_layers", mc.n_layers, "config.model");
    mc.d_time = get_int(model_j, "d_time", mc.d_time, "config.model");
    mc.d_e = get_int(model_j, "d_e", mc.d_e, "config.model");
    ScheduleSpec ss;
    ss.T = get_int(sched_j, "T", ss.T, "config.schedule");
    ss.beta_min = get_num(sched_j, "beta_min", ss.beta_min, "config.schedule");
    ss.beta_max = get_num(sched_j, "beta_max", ss.beta_max, "config.schedule");

    const int n_per_style = get_int(data_j, "n_per_style", 200, "config.data");
    NSYNC_CHECK(n_per_style >= 1, "config.data.n_per_style must be positive, got ", n_per_style);
    const uint64_t class_seed = get_u64(data_j, "class_seed", 11, "config.data");
    const uint64_t render_seed = get_u64(data_j, "render_seed", 12, "config.data");

    PretrainConfig pc;
    pc.iterations = get_int(train_j, "iterations", pc.iterations, "config.train");
    pc.batch = get_int(train_j, "batch", pc.batch, "config.train");
    pc.lr = get_num(train_j, "lr", pc.lr, "config.train");
    pc.beta1 = get_num(train_j, "beta1", pc.beta1, "config.train");
    pc.beta2 = get_num(train_j, "beta2", pc.beta2, "config.train");
    pc.adam_eps = get_num(train_j, "adam_eps", pc.adam_eps, "config.train");
    pc.log_every = get_int(train_j, "log_every", pc.log_every, "config.train");
    pc.seed = seed_override.value_or(get_u64(train_j, "seed", 1, "config.train"));

    const std::vector<double> mix = uniform_class_mix(world.cfg.n_classes);
    Dataset data;
    data.d_data = world.cfg.d_data();
    data.source = "styleworld";
    data.class_seed = class_seed;
    data.render_seed = render_seed;
    Json style_ids = Json::array();
    for (size_t i = 0; i < world.generic_styles.size(); ++i) {
        const StyleParams& style = world.generic_styles[i];
        style_ids.push_back(style.id);
        Dataset part = make_dataset(world.cfg, style, n_per_style, mix,
                                    derive_seed(class_seed, "pretrain/class", i),
                                    derive_seed(render_seed, "pretrain/render", i));
        for (auto& s : part.samples) data.samples.push_back(std::move(s));
    }

    const uint64_t init_seed = derive_seed(pc.seed, "init");
    Model model = init_base_model(mc, world.cfg.n_classes, init_seed, ss);
    std::string csv = PretrainStat::csv_header() + "\n";
    PretrainResult res =
        pretrain(model, data, pc, [&](const PretrainStat& st) { csv += st.csv_row() + "\n"; });

    man.j["config"] = Json{
        {"model",
         {{"d_data", mc.d_data},
          {"d_hidden", mc.d_hidden},
          {"n_layers", mc.n_layers},
          {"d_time", mc.d_time},
          {"d_e", mc.d_e}}},
        {"schedule", {{"T", ss.T}, {"beta_min", ss.beta_min}, {"beta_max", ss.beta_max}}},
        {"data",
         {{"n_per_style", n_per_style},
          {"class_seed", class_seed},
          {"render_seed", render_seed},
          {"styles", style_ids}}},
        {"train",
         {{"iterations", pc.iterations},
          {"batch", pc.batch},
          {"lr", pc.lr},
          {"beta1", pc.beta1},
          {"beta2", pc.beta2},
          {"adam_eps", pc.adam_eps},
          {"log_every", pc.log_every},
          {"seed", pc.seed}}}};
    man.j["seeds"] = Json{{"train", pc.seed},
                          {"init", init_seed},
                          {"class", class_seed},
                          {"render", render_seed}};

    ensure_outdir(out_dir);
    save_checkpoint(model, out_dir + "/base.ckpt");
    write_file_atomic(out_dir + "/pretrain_log.csv", csv);
    man.add_output("checkpoint", "base.ckpt");
    man.add_output("log", "pretrain_log.csv");
    write_file_atomic(out_dir + "/manifest.json", man.finish());

    const double final_loss = res.stats.empty() ? 0.0 : res.stats.back().loss;
    std::cout << "pretrain: " << res.steps << " steps over " << data.samples.size()
              << " samples, last logged loss " << fmt_double(final_loss) << "\n";
}

// ---------------------------------------------------------------------------
// make-dataset

void cmd_make_dataset(const std::string& config_path, const std::string& out_dir,
                      std::optional<uint64_t> seed_override) {
    Manifest man("make-dataset");
    const Json cfg = load_json_file(config_path);
    require_keys(cfg, "config", {"style", "n", "class_seed", "render_seed", "mix", "export_csv"});
    const std::string style_id = need_str(cfg, "style", "config");
    const int n = need_int(cfg, "n", "config");
    const uint64_t class_seed = get_u64(cfg, "class_seed", 1, "config");
    const uint64_t render_seed = seed_override.value_or(get_u64(cfg, "render_seed", 2, "config"));
    const bool export_csv = get_bool(cfg, "export_csv", false, "config");

    const StyleWorld world = bundled_world();
    std::vector<double> mix = uniform_class_mix(world.cfg.n_classes);
    if (has_value(cfg, "mix")) {
        NSYNC_CHECK(cfg.at("mix").is_array(), "config.mix must be an array");
        mix.clear();
        for (const auto& v : cfg.at("mix")) {
            NSYNC_CHECK(v.is_number(), "config.mix entries must be numbers");
            mix.push_back(v.get<double>());
        }
    }

    Dataset ds = make_dataset(world.cfg, world.style_by_id(style_id), n, mix, class_seed,
                              render_seed);

    man.j["config"] = Json{{"style", style_id},
                           {"n", n},
                           {"class_seed", class_seed},
                           {"render_seed", render_seed},
                           {"mix", mix},
                           {"export_csv", export_csv}};
    man.j["seeds"] = Json{{"class", class_seed}, {"render", render_seed}};

    ensure_outdir(out_dir);
    save_dataset(ds, out_dir + "/data.ds");
    man.add_output("dataset", "data.ds");
    if (export_csv) {
        export_dataset_csv(ds, out_dir + "/data.csv");
        man.add_output("csv", "data.csv");
    }
    write_file_atomic(out_dir + "/manifest.json", man.finish());
    std::cout << "make-dataset: " << ds.samples.size() << " samples of style '" << style_id
              << "'\n";
}

// ---------------------------------------------------------------------------
// gen-negatives

void cmd_gen_negatives(const std::string& config_path, const std::string& out_dir,
                       std::optional<uint64_t> seed_override) {
    Manifest man("gen-negatives");
    const Json cfg = load_json_file(config_path);
    require_keys(cfg, "config", {"checkpoint", "positives", "n_per_caption", "n_steps", "seed"});
    const std::string ckpt_path = need_str(cfg, "checkpoint", "config");
    const std::string pos_path = need_str(cfg, "positives", "config");
    const int n_per_caption = get_int(cfg, "n_per_caption", 1, "config");
    const int n_steps = get_int(cfg, "n_steps", kDefaultDdimSteps, "config");
    const uint64_t seed = seed_override.value_or(get_u64(cfg, "seed", 1, "config"));

    man.add_input("checkpoint", ckpt_path);
    man.add_input("positives", pos_path);
    Model base = load_checkpoint(ckpt_path);
    Dataset positives = load_dataset(pos_path);
    Dataset negatives = curate_negatives(base, positives.captions(), n_per_caption, seed, n_steps);

    man.j["config"] = Json{{"checkpoint", ckpt_path},
                           {"positives", pos_path},
                           {"n_per_caption", n_per_caption},
                           {"n_steps", n_steps},
                           {"seed", seed}};
    man.j["seeds"] = Json{{"curate", seed}};
    man.j["interpretation"]["negatives"] = "curate-once";

    ensure_outdir(out_dir);
    save_dataset(negatives, out_dir + "/negatives.ds");
    man.add_output("negatives", "negatives.ds");
    write_file_atomic(out_dir + "/manifest.json", man.finish());
    std::cout << "gen-negatives: " << negatives.samples.size() << " samples from "
              << positives.samples.size() << " positive captions\n";
}

// ---------------------------------------------------------------------------
// finetune

struct FinetuneSettings {
    TrainConfig tc;
    LoraSpec lora;
    bool lora_given = false;
};

TrainConfig parse_train_block(const Json& train_j, const char* where) {
    require_keys(train_j, where,
                 {"iterations", "batch", "lr", "beta1", "beta2", "adam_eps", "eps_g", "log_every",
                  "checkpoint_every", "share_branch_draws", "per_triplet_projection"});
    TrainConfig tc;
    tc.iterations = get_int(train_j, "iterations", tc.iterations, where);
    tc.batch = get_int(train_j, "batch", tc.batch, where);
    tc.lr = get_num(train_j, "lr", tc.lr, where);
    tc.beta1 = get_num(train_j, "beta1", tc.beta1, where);
    tc.beta2 = get_num(train_j, "beta2", tc.beta2, where);
    tc.adam_eps = get_num(train_j, "adam_eps", tc.adam_eps, where);
    tc.eps_g = get_num(train_j, "eps_g", tc.eps_g, where);
    tc.log_every = get_int(train_j, "log_every", tc.log_every, where);
    tc.checkpoint_every = get_int(train_j, "checkpoint_every", tc.checkpoint_every, where);
    tc.share_branch_draws = get_bool(train_j, "share_branch_draws", false, where);
    tc.per_triplet_projection = get_bool(train_j, "per_triplet_projection", false, where);
    return tc;
}

LoraSpec parse_lora_block(const Json& lora_j, const char* where, bool* given) {
    require_keys(lora_j, where, {"targets", "rank", "alpha"});
    LoraSpec spec;
    *given = false;
    if (has_value(lora_j, "targets")) {
        NSYNC_CHECK(lora_j.at("targets").is_array(), where, ".targets must be an array");
        for (const auto& t : lora_j.at("targets")) {
            NSYNC_CHECK(t.is_string(), where, ".targets entries must be strings");
            spec.targets.push_back(t.get<std::string>());
        }
        *given = true;
    }
    spec.rank = get_int(lora_j, "rank", spec.rank, where);
    spec.alpha = get_num(lora_j, "alpha", spec.alpha, where);
    if (has_value(lora_j, "rank") || has_value(lora_j, "alpha")) *given = true;
    return spec;
}

Json train_block_json(const TrainConfig& tc) {
    return Json{{"iterations", tc.iterations},
                {"batch", tc.batch},
                {"lr", tc.lr},
                {"beta1", tc.beta1},
                {"beta2", tc.beta2},
                {"adam_eps", tc.adam_eps},
                {"eps_g", tc.eps_g},
                {"log_every", tc.log_every},
                {"checkpoint_every", tc.checkpoint_every},
                {"share_branch_draws", tc.share_branch_draws},
                {"per_triplet_projection", tc.per_triplet_projection}};
}

void add_finetune_interpretation(Manifest& man, const TrainConfig& tc) {
    man.j["interpretation"]["mean_variant_rule"] = "plain-mean";
    man.j["interpretation"]["negatives"] = "curate-once";
    man.j["interpretation"]["projection_scope"] = "global-across-tensors";
    man.j["interpretation"]["per_triplet_projection"] = tc.per_triplet_projection;
    man.j["interpretation"]["share_branch_draws"] = tc.share_branch_draws;
}

// Shared by the finetune command and every ablation run, so both produce
// bit-identical checkpoints for the same inputs and seed.
TrainResult run_finetune(Model& model, const Dataset& positives, const Dataset* negatives,
                         const FinetuneSettings& fs, const std::string& snapshot_dir,
                         std::string* csv) {
    if (model.mode == AdaptationMode::None) {
        set_adaptation_mode(model, fs.tc.mode, derive_seed(fs.tc.seed, stream_tag::kAdapt),
                            fs.tc.mode == AdaptationMode::LowRank && fs.lora_given ? &fs.lora
                                                                                  : nullptr);
    }
    if (csv != nullptr) *csv = StepStats::csv_header() + "\n";
    TrainSinks sinks;
    sinks.on_stats = [csv](const StepStats& st) {
        if (csv != nullptr) *csv += st.csv_row() + "\n";
    };
    if (!snapshot_dir.empty()) {
        sinks.on_checkpoint = [&snapshot_dir](int step, const Model& m) {
            char buf[16];
            std::snprintf(buf, sizeof buf, "%06d", step);
            save_checkpoint(m, snapshot_dir + "/step_" + buf + ".ckpt", /*full=*/false);
        };
    }
    return train(model, positives, negatives, fs.tc, sinks);
}

void cmd_finetune(const std::string& config_path, const std::string& out_dir,
                  std::optional<uint64_t> seed_override, const std::string& variant_override,
                  const std::string& mode_override) {
    Manifest man("finetune");
    const Json cfg = load_json_file(config_path);
    require_keys(cfg, "config",
                 {"checkpoint", "positives", "negatives", "variant", "mode", "lora", "train",
                  "seed"});
    const std::string ckpt_path = need_str(cfg, "checkpoint", "config");
    const std::string pos_path = need_str(cfg, "positives", "config");
    const bool has_neg = has_value(cfg, "negatives");
    const std::string neg_path = has_neg ? need_str(cfg, "negatives", "config") : "";

    FinetuneSettings fs;
    fs.tc = parse_train_block(object_section(cfg, "train", "config"), "config.train");
    const std::string variant_s =
        !variant_override.empty() ? variant_override : get_str(cfg, "variant", "ctoa", "config");
    fs.tc.variant = parse_variant(variant_s);
    const std::string mode_s =
        !mode_override.empty() ? mode_override : get_str(cfg, "mode", "ti", "config");
    fs.tc.mode = parse_adaptation_mode(mode_s);
    NSYNC_CHECK(fs.tc.mode != AdaptationMode::None, "mode must be ti or lora");
    fs.tc.seed = seed_override.value_or(get_u64(cfg, "seed", 1, "config"));
    fs.lora = parse_lora_block(object_section(cfg, "lora", "config"), "config.lora",
                               &fs.lora_given);
    NSYNC_CHECK(!has_neg || !variant_uses_negatives(fs.tc.variant) || !neg_path.empty(),
                "internal: negative path state");
    NSYNC_CHECK(!variant_uses_negatives(fs.tc.variant) || has_neg, "variant ", variant_s,
                " needs config.negatives");

    man.add_input("checkpoint", ckpt_path);
    man.add_input("positives", pos_path);
    if (has_neg) man.add_input("negatives", neg_path);

    Model model = load_checkpoint(ckpt_path);
    Dataset positives = load_dataset(pos_path);
    Dataset negatives;
    if (has_neg) negatives = load_dataset(neg_path);

    man.j["config"] = Json{{"checkpoint", ckpt_path},
                           {"positives", pos_path},
                           {"negatives", has_neg ? Json(neg_path) : Json(nullptr)},
                           {"variant", variant_name(fs.tc.variant)},
                           {"mode", adaptation_mode_name(fs.tc.mode)},
                           {"train", train_block_json(fs.tc)},
                           {"seed", fs.tc.seed}};
    if (fs.tc.mode == AdaptationMode::LowRank) {
        man.j["config"]["lora"] =
            Json{{"targets", fs.lora_given ? Json(fs.lora.targets) : Json("default")},
                 {"rank", fs.lora.rank},
                 {"alpha", fs.lora.alpha}};
    }
    man.j["seeds"] =
        Json{{"train", fs.tc.seed}, {"adapt", derive_seed(fs.tc.seed, stream_tag::kAdapt)}};
    add_finetune_interpretation(man, fs.tc);

    ensure_outdir(out_dir);
    std::string snapshot_dir;
    if (fs.tc.checkpoint_every > 0 && fs.tc.checkpoint_every <= fs.tc.iterations) {
        snapshot_dir = out_dir + "/checkpoints";
        ensure_outdir(snapshot_dir);
    }
    std::string csv;
    TrainResult res = run_finetune(model, positives, has_neg ? &negatives : nullptr, fs,
                                   snapshot_dir, &csv);

    save_checkpoint(model, out_dir + "/adapted.ckpt");
    write_file_atomic(out_dir + "/train_log.csv", csv);
    man.add_output("checkpoint", "adapted.ckpt");
    man.add_output("log", "train_log.csv");
    if (!snapshot_dir.empty()) man.add_output("snapshots", "checkpoints");
    write_file_atomic(out_dir + "/manifest.json", man.finish());

    const double last = res.stats.empty() ? 0.0 : res.stats.back().loss_pos;
    std::cout << "finetune: " << variant_name(fs.tc.variant) << " for " << res.steps
              << " steps, last logged positive loss " << fmt_double(last) << "\n";
}

// ---------------------------------------------------------------------------
// sample

int parse_token(const std::string& name) {
    if (name == "style") return kTokenStyle;
    if (name == "generic") return kTokenGeneric;
    throw ConfigError(str_cat("unknown token '", name, "' (expected style or generic)"));
}

void cmd_sample(const std::string& config_path, const std::string& out_dir,
                std::optional<uint64_t> seed_override) {
    Manifest man("sample");
    const Json cfg = load_json_file(config_path);
    require_keys(cfg, "config",
                 {"checkpoint", "captions_from", "n_per_caption", "n_steps", "token", "seed"});
    const std::string ckpt_path = need_str(cfg, "checkpoint", "config");
    const std::string caps_path = need_str(cfg, "captions_from", "config");
    const int n_per_caption = get_int(cfg, "n_per_caption", 1, "config");
    const int n_steps = get_int(cfg, "n_steps", kDefaultDdimSteps, "config");
    const std::string token_s = get_str(cfg, "token", "style", "config");
    const int token = parse_token(token_s);
    const uint64_t seed = seed_override.value_or(get_u64(cfg, "seed", 1, "config"));

    man.add_input("checkpoint", ckpt_path);
    man.add_input("captions_from", caps_path);
    Model model = load_checkpoint(ckpt_path);
    Dataset caps = load_dataset(caps_path);
    Dataset samples = sample_dataset(model, caps.captions(), n_per_caption, seed, token, n_steps);

    man.j["config"] = Json{{"checkpoint", ckpt_path},
                           {"captions_from", caps_path},
                           {"n_per_caption", n_per_caption},
                           {"n_steps", n_steps},
                           {"token", token_s},
                           {"seed", seed}};
    man.j["seeds"] = Json{{"sample", seed}};
    man.j["interpretation"]["sample_pairing"] =
        n_per_caption == 1 ? std::string("one-per-test-caption")
                           : str_cat(n_per_caption, "-per-test-caption");

    ensure_outdir(out_dir);
    save_dataset(samples, out_dir + "/samples.ds");
    man.add_output("samples", "samples.ds");
    write_file_atomic(out_dir + "/manifest.json", man.finish());
    std::cout << "sample: " << samples.samples.size() << " draws conditioned on '" << token_s
              << "'\n";
}

// ---------------------------------------------------------------------------
// evaluate

// Key validation stays with the caller: evaluate reads these fields from the
// top-level config, ablate from its metrics section.
MetricsConfig parse_metrics_block(const Json& j, const char* where) {
    MetricsConfig mc;
    mc.extractor_seed = get_u64(j, "extractor_seed", kDefaultExtractorSeed, where);
    mc.kid.n_blocks = get_int(j, "kid_blocks", 1, where);
    const Json cmmd_j = object_section(j, "cmmd", where);
    require_keys(cmmd_j, "cmmd", {"bandwidth", "sigma"});
    const std::string bw = get_str(cmmd_j, "bandwidth", "median", where);
    if (bw == "median") {
        mc.cmmd.bandwidth = BandwidthMode::Median;
    } else if (bw == "fixed") {
        mc.cmmd.bandwidth = BandwidthMode::Fixed;
    } else {
        throw ConfigError(str_cat(where, ".cmmd.bandwidth must be median or fixed, got '", bw,
                                  "'"));
    }
    mc.cmmd.sigma = get_num(cmmd_j, "sigma", 1.0, where);
    return mc;
}

Json metrics_block_json(const MetricsConfig& mc) {
    return Json{{"extractor_seed", mc.extractor_seed},
                {"kid_blocks", mc.kid.n_blocks},
                {"cmmd",
                 {{"bandwidth", mc.cmmd.bandwidth == BandwidthMode::Median ? "median" : "fixed"},
                  {"sigma", mc.cmmd.sigma}}}};
}

void cmd_evaluate(const std::string& config_path, const std::string& out_dir) {
    Manifest man("evaluate");
    const Json cfg = load_json_file(config_path);
    require_keys(cfg, "config", {"generated", "reference", "extractor_seed", "kid_blocks", "cmmd"});
    const std::string gen_path = need_str(cfg, "generated", "config");
    const std::string ref_path = need_str(cfg, "reference", "config");
    const MetricsConfig mc = parse_metrics_block(cfg, "config");

    man.add_input("generated", gen_path);
    man.add_input("reference", ref_path);
    Dataset generated = load_dataset(gen_path);
    Dataset reference = load_dataset(ref_path);
    MetricsReport rep = evaluate_sets(generated, reference, mc);

    man.j["config"] = Json{{"generated", gen_path}, {"reference", ref_path}};
    const Json mj = metrics_block_json(mc);
    for (const auto& [k, v] : mj.items()) man.j["config"][k] = v;
    man.j["seeds"] = Json{{"extractor", mc.extractor_seed}};

    ensure_outdir(out_dir);
    write_file_atomic(out_dir + "/report.json", rep.to_json());
    write_file_atomic(out_dir + "/report.csv",
                      MetricsReport::csv_header() + "\n" + rep.csv_row() + "\n");
    man.add_output("report_json", "report.json");
    man.add_output("report_csv", "report.csv");
    write_file_atomic(out_dir + "/manifest.json", man.finish());
    std::cout << "evaluate: csd=" << fmt_double(rep.csd) << " cmmd=" << fmt_double(rep.cmmd)
              << " kid=" << fmt_double(rep.kid) << " fid=" << fmt_double(rep.fid) << "\n";
}

// ---------------------------------------------------------------------------
// ablate

struct AblationRow {
    std::string variant;
    uint64_t seed = 0;
    MetricsReport rep;
    std::string dir;
};

Json row_json(const AblationRow& r) {
    return Json{{"variant", r.variant}, {"seed", r.seed},    {"csd", r.rep.csd},
                {"cmmd", r.rep.cmmd},   {"kid", r.rep.kid},  {"fid", r.rep.fid},
                {"dir", r.dir}};
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::string out = "variant,seed,csd,cmmd,kid,fid\n";
    for (const AblationRow& r : rows) {
        out += str_cat(r.variant, ",", r.seed, ",", fmt_double(r.rep.csd), ",",
                       fmt_double(r.rep.cmmd), ",", fmt_double(r.rep.kid), ",",
                       fmt_double(r.rep.fid), "\n");
    }
    return out;
}

struct VariantSummary {
    double csd = 0.0, cmmd = 0.0, kid = 0.0, fid = 0.0;
};

VariantSummary summarize(const std::vector<AblationRow>& rows, const std::string& variant) {
    VariantSummary s;
    int n = 0;
    for (const AblationRow& r : rows) {
        if (r.variant != variant) continue;
        s.csd += r.rep.csd;
        s.cmmd += r.rep.cmmd;
        s.kid += r.rep.kid;
        s.fid += r.rep.fid;
        ++n;
    }
    if (n > 0) {
        s.csd /= n;
        s.cmmd /= n;
        s.kid /= n;
        s.fid /= n;
    }
    return s;
}

const AblationRow* find_row(const std::vector<AblationRow>& rows, const std::string& variant,
                            uint64_t seed) {
    for (const AblationRow& r : rows) {
        if (r.variant == variant && r.seed == seed) return &r;
    }
    return nullptr;
}

void cmd_ablate(const std::string& config_path, const std::string& out_dir,
                std::optional<uint64_t> seed_override) {
    NSYNC_CHECK(!seed_override.has_value(),
                "ablate reads its seed list from the config; --seed is not accepted");
    Manifest man("ablate");
    const Json cfg = load_json_file(config_path);
    require_keys(cfg, "config",
                 {"checkpoint", "positives", "negatives", "test", "variants", "seeds", "mode",
                  "lora", "train", "sample", "metrics"});
    const std::string ckpt_path = need_str(cfg, "checkpoint", "config");
    const std::string pos_path = need_str(cfg, "positives", "config");
    const std::string neg_path = need_str(cfg, "negatives", "config");
    const std::string test_path = need_str(cfg, "test", "config");

    std::vector<Variant> variants = {Variant::Baseline, Variant::MeanPair, Variant::MeanAnchored,
                                     Variant::Orthogonal, Variant::OrthogonalAnchored};
    if (has_value(cfg, "variants")) {
        NSYNC_CHECK(cfg.at("variants").is_array(), "config.variants must be an array");
        variants.clear();
        for (const auto& v : cfg.at("variants")) {
            NSYNC_CHECK(v.is_string(), "config.variants entries must be strings");
            const Variant parsed = parse_variant(v.get<std::string>());
            for (Variant seen : variants) {
                NSYNC_CHECK(seen != parsed, "duplicate variant '", v.get<std::string>(), "'");
            }
            variants.push_back(parsed);
        }
        NSYNC_CHECK(!variants.empty(), "config.variants must not be empty");
    }
    std::vector<uint64_t> seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    if (has_value(cfg, "seeds")) {
        NSYNC_CHECK(cfg.at("seeds").is_array(), "config.seeds must be an array");
        seeds.clear();
        for (const auto& v : cfg.at("seeds")) {
            NSYNC_CHECK(v.is_number_unsigned() || (v.is_number_integer() && v.get<int64_t>() >= 0),
                        "config.seeds entries must be non-negative integers");
            const uint64_t s = v.get<uint64_t>();
            for (uint64_t seen : seeds) NSYNC_CHECK(seen != s, "duplicate seed ", s);
            seeds.push_back(s);
        }
        NSYNC_CHECK(!seeds.empty(), "config.seeds must not be empty");
    }

    FinetuneSettings fs_template;
    fs_template.tc = parse_train_block(object_section(cfg, "train", "config"), "config.train");
    fs_template.tc.checkpoint_every = get_int(object_section(cfg, "train", "config"),
                                              "checkpoint_every", 0, "config.train");
    fs_template.tc.mode = parse_adaptation_mode(get_str(cfg, "mode", "ti", "config"));
    NSYNC_CHECK(fs_template.tc.mode != AdaptationMode::None, "mode must be ti or lora");
    fs_template.lora = parse_lora_block(object_section(cfg, "lora", "config"), "config.lora",
                                        &fs_template.lora_given);

    const Json sample_j = object_section(cfg, "sample", "config");
    require_keys(sample_j, "config.sample", {"n_per_caption", "n_steps"});
    const int n_per_caption = get_int(sample_j, "n_per_caption", 1, "config.sample");
    const int n_steps = get_int(sample_j, "n_steps", kDefaultDdimSteps, "config.sample");
    const Json metrics_j = object_section(cfg, "metrics", "config");
    require_keys(metrics_j, "config.metrics", {"extractor_seed", "kid_blocks", "cmmd"});
    const MetricsConfig mcfg = parse_metrics_block(metrics_j, "config.metrics");

    man.add_input("checkpoint", ckpt_path);
    man.add_input("positives", pos_path);
    man.add_input("negatives", neg_path);
    man.add_input("test", test_path);
    const Json input_hashes = man.j["inputs"];

    const Model base = load_checkpoint(ckpt_path);
    const Dataset positives = load_dataset(pos_path);
    const Dataset negatives = load_dataset(neg_path);
    const Dataset test = load_dataset(test_path);

    Json variant_names = Json::array();
    for (Variant v : variants) variant_names.push_back(variant_name(v));
    man.j["config"] = Json{{"checkpoint", ckpt_path},
                           {"positives", pos_path},
                           {"negatives", neg_path},
                           {"test", test_path},
                           {"variants", variant_names},
                           {"seeds", seeds},
                           {"mode", adaptation_mode_name(fs_template.tc.mode)},
                           {"train", train_block_json(fs_template.tc)},
                           {"sample", {{"n_per_caption", n_per_caption}, {"n_steps", n_steps}}},
                           {"metrics", metrics_block_json(mcfg)}};
    man.j["seeds"] = Json{{"runs", seeds}};
    add_finetune_interpretation(man, fs_template.tc);
    man.j["interpretation"]["sample_pairing"] =
        n_per_caption == 1 ? std::string("one-per-test-caption")
                           : str_cat(n_per_caption, "-per-test-caption");

    ensure_outdir(out_dir);
    std::vector<AblationRow> rows;

    // A failed run aborts the sweep; finished rows stay on disk and the
    // report is written with the failure marked before the error propagates.
    auto write_reports = [&](const std::string& status, const Json& failed) {
        Json rep = Json::object();
        rep["status"] = status;
        if (!failed.is_null()) rep["failed"] = failed;
        rep["variants"] = variant_names;
        rep["seeds"] = seeds;
        rep["rows"] = Json::array();
        for (const AblationRow& r : rows) rep["rows"].push_back(row_json(r));
        Json summary = Json::object();
        for (Variant v : variants) {
            const std::string name = variant_name(v);
            const VariantSummary s = summarize(rows, name);
            summary[name] = Json{{"csd_mean", s.csd},
                                 {"cmmd_mean", s.cmmd},
                                 {"kid_mean", s.kid},
                                 {"fid_mean", s.fid}};
        }
        rep["summary"] = summary;

        std::string table = "variant     CSD^      CMMD_v    KID_v     FID_v\n";
        for (Variant v : variants) {
            const std::string name = variant_name(v);
            const VariantSummary s = summarize(rows, name);
            char line[128];
            std::snprintf(line, sizeof line, "%-8s %9.4f %9.4f %9.5f %9.4f\n", name.c_str(),
                          s.csd, s.cmmd, s.kid, s.fid);
            table += line;
        }

        bool has_ti = false, has_ctoa = false;
        for (Variant v : variants) {
            has_ti = has_ti || v == Variant::Baseline;
            has_ctoa = has_ctoa || v == Variant::OrthogonalAnchored;
        }
        if (has_ti && has_ctoa && status == "ok") {
            int csd_wins = 0, cmmd_wins = 0, both_wins = 0;
            for (uint64_t s : seeds) {
                const AblationRow* ti = find_row(rows, "ti", s);
                const AblationRow* ctoa = find_row(rows, "ctoa", s);
                if (ti == nullptr || ctoa == nullptr) continue;
                const bool csd_win = ctoa->rep.csd > ti->rep.csd;
                const bool cmmd_win = ctoa->rep.cmmd < ti->rep.cmmd;
                csd_wins += csd_win ? 1 : 0;
                cmmd_wins += cmmd_win ? 1 : 0;
                both_wins += (csd_win && cmmd_win) ? 1 : 0;
            }
            const int n = static_cast<int>(seeds.size());
            const int threshold = (7 * n + 9) / 10;
            rep["ctoa_vs_ti"] = Json{{"csd_wins", csd_wins},
                                     {"cmmd_wins", cmmd_wins},
                                     {"both_wins", both_wins},
                                     {"n_seeds", n},
                                     {"threshold", threshold},
                                     {"directional_pass", both_wins >= threshold}};
            char line[160];
            std::snprintf(line, sizeof line,
                          "ctoa vs ti: CSD wins %d/%d, CMMD wins %d/%d, both %d/%d "
                          "(threshold %d, %s)\n",
                          csd_wins, n, cmmd_wins, n, both_wins, n, threshold,
                          both_wins >= threshold ? "pass" : "best-effort directional miss");
            table += line;
        }

        write_file_atomic(out_dir + "/ablation.json", rep.dump(2) + "\n");
        write_file_atomic(out_dir + "/ablation.csv", ablation_csv(rows));
        write_file_atomic(out_dir + "/ablation.txt", table);
        std::cout << table;
    };

    for (Variant v : variants) {
        for (uint64_t s : seeds) {
            const std::string vname = variant_name(v);
            const std::string rel_dir = vname + "/seed_" + std::to_string(s);
            const std::string run_dir = out_dir + "/" + rel_dir;
            try {
                Manifest run_man("ablate-run");
                run_man.j["inputs"] = input_hashes;
                FinetuneSettings fs = fs_template;
                fs.tc.variant = v;
                fs.tc.seed = s;
                run_man.j["config"] = Json{{"variant", vname},
                                           {"seed", s},
                                           {"mode", adaptation_mode_name(fs.tc.mode)},
                                           {"train", train_block_json(fs.tc)},
                                           {"sample",
                                            {{"n_per_caption", n_per_caption},
                                             {"n_steps", n_steps}}},
                                           {"metrics", metrics_block_json(mcfg)}};
                run_man.j["seeds"] = Json{{"train", s},
                                          {"adapt", derive_seed(s, stream_tag::kAdapt)},
                                          {"sample", s}};
                add_finetune_interpretation(run_man, fs.tc);

                ensure_outdir(run_dir);
                Model model = base;
                std::string csv;
                run_finetune(model, positives, &negatives, fs, "", &csv);
                save_checkpoint(model, run_dir + "/adapted.ckpt");
                write_file_atomic(run_dir + "/train_log.csv", csv);

                Dataset samples =
                    sample_dataset(model, test.captions(), n_per_caption, s, kTokenStyle, n_steps);
                save_dataset(samples, run_dir + "/samples.ds");
                MetricsReport rep = evaluate_sets(samples, test, mcfg);
                write_file_atomic(run_dir + "/report.json", rep.to_json());
                run_man.add_output("checkpoint", "adapted.ckpt");
                run_man.add_output("log", "train_log.csv");
                run_man.add_output("samples", "samples.ds");
                run_man.add_output("report", "report.json");
                write_file_atomic(run_dir + "/manifest.json", run_man.finish());

                rows.push_back({vname, s, rep, rel_dir});
                std::cout << "ablate: " << vname << " seed " << s << ": csd="
                          << fmt_double(rep.csd) << " cmmd=" << fmt_double(rep.cmmd)
                          << " kid=" << fmt_double(rep.kid) << " fid=" << fmt_double(rep.fid)
                          << "\n";
            } catch (const std::exception& e) {
                try {
                    write_reports("aborted",
                                  Json{{"variant", vname}, {"seed", s}, {"error", e.what()}});
                    man.j["interpretation"]["status"] = "aborted";
                    write_file_atomic(out_dir + "/manifest.json", man.finish());
                } catch (...) {
                }
                throw;
            }
        }
    }

    write_reports("ok", Json(nullptr));
    man.add_output("report", "ablation.json");
    man.add_output("csv", "ablation.csv");
    man.add_output("table", "ablation.txt");
    write_file_atomic(out_dir + "/manifest.json", man.finish());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Contrastive finetuning laboratory on a procedural style world"};
    app.set_version_flag("--version", std::string("nsync ") + kToolVersion);
    app.require_subcommand(1);

    std::string config_path, out_dir, variant_s, mode_s;
    uint64_t seed_val = 0;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config file")->required();
        sub->add_option("--out", out_dir, "output directory")->required();
        return sub->add_option("--seed", seed_val, "seed override");
    };
    auto seed_of = [&](CLI::Option* opt) -> std::optional<uint64_t> {
        if (opt->count() == 0) return std::nullopt;
        return seed_val;
    };

    CLI::App* pre = app.add_subcommand("pretrain", "Train the generic base model");
    CLI::Option* pre_seed = add_common(pre);
    pre->callback([&] { cmd_pretrain(config_path, out_dir, seed_of(pre_seed)); });

    CLI::App* mk = app.add_subcommand("make-dataset", "Render a style dataset");
    CLI::Option* mk_seed = add_common(mk);
    mk->callback([&] { cmd_make_dataset(config_path, out_dir, seed_of(mk_seed)); });

    CLI::App* gn = app.add_subcommand("gen-negatives", "Curate synthetic negatives");
    CLI::Option* gn_seed = add_common(gn);
    gn->callback([&] { cmd_gen_negatives(config_path, out_dir, seed_of(gn_seed)); });

    CLI::App* ft = app.add_subcommand("finetune", "Finetune against a style");
    CLI::Option* ft_seed = add_common(ft);
    ft->add_option("--variant", variant_s, "update rule: ti, ctm, ctma, cto, or ctoa");
    ft->add_option("--mode", mode_s, "adaptation regime: ti or lora");
    ft->callback([&] { cmd_finetune(config_path, out_dir, seed_of(ft_seed), variant_s, mode_s); });

    CLI::App* sm = app.add_subcommand("sample", "Draw samples from a checkpoint");
    CLI::Option* sm_seed = add_common(sm);
    sm->callback([&] { cmd_sample(config_path, out_dir, seed_of(sm_seed)); });

    CLI::App* ev = app.add_subcommand("evaluate", "Score a generated set against a reference");
    ev->add_option("--config", config_path, "JSON config file")->required();
    ev->add_option("--out", out_dir, "output directory")->required();
    ev->callback([&] { cmd_evaluate(config_path, out_dir); });

    CLI::App* ab = app.add_subcommand("ablate", "Run the five-variant sweep");
    CLI::Option* ab_seed = add_common(ab);
    ab->callback([&] { cmd_ablate(config_path, out_dir, seed_of(ab_seed)); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
