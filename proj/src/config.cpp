#include "promptclinic/config.hpp"

#include "promptclinic/errors.hpp"
#include "promptclinic/quant.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace promptclinic {

using nlohmann::json;

uint64_t fnv1a64(const std::string& bytes) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

uint64_t mix_seed(uint64_t base, uint64_t salt) {
    uint64_t x = base ^ (salt * 0x9E3779B97F4A7C15ULL);
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ULL;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBULL;
    x ^= x >> 31;
    return x;
}

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& why) {
    throw ConfigError("config error at " + path + ": " + why);
}

void check_keys(const json& j, const std::string& path, const std::set<std::string>& allowed) {
    if (!j.is_object()) fail(path, "expected an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key())) fail(path + "." + it.key(), "unknown field");
}

template <typename T>
T get_field(const json& j, const std::string& path, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        fail(path + "." + key, e.what());
    }
}

} // namespace

ExperimentConfig config_from_json(const json& j) {
    check_keys(j, "config",
               {"corpus", "model", "strategy", "policy", "template", "verbalizer", "lora",
                "soft_prompt", "quantize_base", "train", "grid", "folds", "seed", "out"});
    ExperimentConfig c;

    if (j.contains("corpus")) {
        const json& jc = j.at("corpus");
        check_keys(jc, "corpus", {"dir", "manifest", "archive", "speakers"});
        c.corpus.dir = get_field<std::string>(jc, "corpus", "dir", "");
        c.corpus.manifest = get_field<std::string>(jc, "corpus", "manifest", "");
        c.corpus.archive = get_field<std::string>(jc, "corpus", "archive", "");
        c.corpus.speakers =
            get_field<std::vector<std::string>>(jc, "corpus", "speakers", {"PAR"});
    }

    if (j.contains("model")) {
        const json& jm = j.at("model");
        check_keys(jm, "model",
                   {"d_model", "n_layers", "n_heads", "d_ff", "max_len", "mode", "tied_head"});
        c.model.d_model = get_field<int>(jm, "model", "d_model", 64);
        c.model.n_layers = get_field<int>(jm, "model", "n_layers", 2);
        c.model.n_heads = get_field<int>(jm, "model", "n_heads", 4);
        c.model.d_ff = get_field<int>(jm, "model", "d_ff", 256);
        c.model.max_len = get_field<int>(jm, "model", "max_len", 512);
        c.model.tied_head = get_field<bool>(jm, "model", "tied_head", true);
        if (jm.contains("mode")) c.model.mode = mode_from_name(jm.at("mode").get<std::string>());
    }

    c.strategy = strategy_from_name(get_field<std::string>(j, "config", "strategy", "verbalizer"));
    c.policy = policy_from_name(get_field<std::string>(j, "config", "policy", "full"));
    // the strategy dictates the mode unless the file pinned one explicitly
    if (!j.contains("model") || !j.at("model").contains("mode"))
        c.model.mode = required_mode(c.strategy);

    if (j.contains("template")) {
        const json& jt = j.at("template");
        check_keys(jt, "template", {"mode", "pattern", "instruction"});
        c.tmpl.mode =
            template_mode_from_name(get_field<std::string>(jt, "template", "mode", "cloze"));
        c.tmpl.pattern = get_field<std::string>(jt, "template", "pattern", "");
        c.tmpl.instruction = get_field<std::string>(jt, "template", "instruction", "");
    }

    if (j.contains("verbalizer")) {
        const json& jv = j.at("verbalizer");
        check_keys(jv, "verbalizer", {"AD", "HC"});
        c.verbalizer.ad_text = get_field<std::string>(jv, "verbalizer", "AD", "");
        c.verbalizer.hc_text = get_field<std::string>(jv, "verbalizer", "HC", "");
    }

    if (j.contains("lora")) {
        const json& jl = j.at("lora");
        check_keys(jl, "lora", {"rank", "alpha", "targets"});
        c.lora.rank = get_field<int>(jl, "lora", "rank", 4);
        c.lora.alpha = get_field<double>(jl, "lora", "alpha", 2.0 * c.lora.rank);
        c.lora.targets = get_field<std::vector<std::string>>(jl, "lora", "targets",
                                                             {"attn.q", "attn.v"});
    }

    if (j.contains("soft_prompt")) {
        const json& js = j.at("soft_prompt");
        check_keys(js, "soft_prompt", {"length", "init"});
        c.soft_prompt.length = get_field<int>(js, "soft_prompt", "length", 16);
        const std::string init = get_field<std::string>(js, "soft_prompt", "init", "warm");
        if (init == "warm") c.soft_prompt.init = SoftPromptInit::warm;
        else if (init == "random") c.soft_prompt.init = SoftPromptInit::random;
        else fail("soft_prompt.init", "expected 'warm' or 'random'");
    }

    c.quantize_base = get_field<bool>(j, "config", "quantize_base", false);

    if (j.contains("train")) {
        const json& jt = j.at("train");
        check_keys(jt, "train",
                   {"learning_rate", "micro_batch_size", "grad_accum_steps", "epochs",
                    "weight_decay", "decay_policy"});
        c.train.learning_rate = get_field<double>(jt, "train", "learning_rate", 1e-3);
        c.train.micro_batch_size = get_field<int>(jt, "train", "micro_batch_size", 4);
        c.train.grad_accum_steps = get_field<int>(jt, "train", "grad_accum_steps", 1);
        c.train.epochs = get_field<int>(jt, "train", "epochs", 10);
        c.train.weight_decay = get_field<double>(jt, "train", "weight_decay", 0.01);
        c.train.decay_policy = decay_policy_from_name(
            get_field<std::string>(jt, "train", "decay_policy", "standard"));
    }

    if (j.contains("grid")) {
        if (!j.at("grid").is_array()) fail("grid", "expected an array of {field, values}");
        for (size_t i = 0; i < j.at("grid").size(); ++i) {
            const json& ja = j.at("grid").at(i);
            const std::string path = "grid[" + std::to_string(i) + "]";
            check_keys(ja, path, {"field", "values"});
            GridAxis axis;
            axis.field = get_field<std::string>(ja, path, "field", "");
            axis.values = get_field<std::vector<double>>(ja, path, "values", {});
            c.grid.push_back(std::move(axis));
        }
    }

    c.folds = get_field<int>(j, "config", "folds", 10);
    c.seed = get_field<uint64_t>(j, "config", "seed", 42);
    c.out_dir = get_field<std::string>(j, "config", "out", "out");

    validate_experiment(c);
    c.train.seed = c.seed;
    return c;
}

ExperimentConfig load_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config parse failure in " + path.string() + ": " + e.what());
    }
    return config_from_json(j);
}

json config_to_json(const ExperimentConfig& c) {
    json j;
    j["corpus"] = {{"dir", c.corpus.dir},
                   {"manifest", c.corpus.manifest},
                   {"archive", c.corpus.archive},
                   {"speakers", c.corpus.speakers}};
    j["model"] = {{"d_model", c.model.d_model},   {"n_layers", c.model.n_layers},
                  {"n_heads", c.model.n_heads},   {"d_ff", c.model.d_ff},
                  {"max_len", c.model.max_len},   {"mode", mode_name(c.model.mode)},
                  {"tied_head", c.model.tied_head}};
    j["strategy"] = strategy_name(c.strategy);
    j["policy"] = policy_name(c.policy);
    j["template"] = {{"mode", template_mode_name(c.tmpl.mode)},
                     {"pattern", c.tmpl.pattern},
                     {"instruction", c.tmpl.instruction}};
    j["verbalizer"] = {{"AD", c.verbalizer.ad_text}, {"HC", c.verbalizer.hc_text}};
    j["lora"] = {{"rank", c.lora.rank}, {"alpha", c.lora.alpha}, {"targets", c.lora.targets}};
    j["soft_prompt"] = {{"length", c.soft_prompt.length},
                        {"init", c.soft_prompt.init == SoftPromptInit::warm ? "warm" : "random"}};
    j["quantize_base"] = c.quantize_base;
    j["train"] = {{"learning_rate", c.train.learning_rate},
                  {"micro_batch_size", c.train.micro_batch_size},
                  {"grad_accum_steps", c.train.grad_accum_steps},
                  {"epochs", c.train.epochs},
                  {"weight_decay", c.train.weight_decay},
                  {"decay_policy", decay_policy_name(c.train.decay_policy)}};
    json grid = json::array();
    for (const auto& axis : c.grid) grid.push_back({{"field", axis.field}, {"values", axis.values}});
    j["grid"] = grid;
    j["folds"] = c.folds;
    j["seed"] = c.seed;
    j["out"] = c.out_dir;
    return j;
}

std::string config_hash(const ExperimentConfig& c) {
    const uint64_t h = fnv1a64(config_to_json(c).dump());
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

void validate_experiment(const ExperimentConfig& c) {
    if (c.model.mode != required_mode(c.strategy))
        fail("model.mode", "strategy '" + strategy_name(c.strategy) + "' needs a " +
                               mode_name(required_mode(c.strategy)) + " model");
    if (c.tmpl.pattern.empty()) fail("template.pattern", "must not be empty");
    try {
        validate_template(c.tmpl);
    } catch (const Error& e) {
        fail("template.pattern", e.what());
    }
    switch (c.strategy) {
        case Strategy::verbalizer:
            if (c.tmpl.mode != TemplateMode::cloze)
                fail("template.mode", "verbalizer strategy needs a cloze template");
            break;
        case Strategy::generative:
            if (c.tmpl.mode != TemplateMode::instruction_response)
                fail("template.mode", "generative strategy needs an instruction_response template");
            break;
        case Strategy::conditional:
            if (c.tmpl.mode != TemplateMode::conditional_prefix &&
                c.tmpl.mode != TemplateMode::conditional_suffix)
                fail("template.mode", "conditional strategy needs a conditional template");
            break;
    }
    if (c.verbalizer.ad_text.empty() || c.verbalizer.hc_text.empty())
        fail("verbalizer", "both label texts are required");
    if (c.verbalizer.ad_text == c.verbalizer.hc_text)
        fail("verbalizer", "label texts must be distinct");
    if (c.policy == TrainPolicy::lora) {
        if (c.lora.rank < 1) fail("lora.rank", "must be >= 1");
        if (c.lora.alpha <= 0.0) fail("lora.alpha", "must be positive");
        if (c.lora.targets.empty()) fail("lora.targets", "must not be empty");
    }
    if (c.policy == TrainPolicy::soft_prompt_only && c.soft_prompt.length < 1)
        fail("soft_prompt.length", "must be >= 1");
    if (c.quantize_base && c.policy == TrainPolicy::full_finetune)
        fail("quantize_base", "int8 base weights are for frozen-base policies only");
    if (c.folds < 2) fail("folds", "must be >= 2");
    try {
        validate_hyperparams(c.train);
    } catch (const Error& e) {
        fail("train", e.what());
    }
    for (const auto& axis : c.grid) {
        Hyperparams probe;
        if (axis.values.empty()) fail("grid." + axis.field, "no values");
        try {
            set_hp_field(probe, axis.field, axis.values.front());
        } catch (const Error& e) {
            fail("grid", e.what());
        }
    }
}

std::vector<std::string> expand_lora_targets(const ModelConfig& cfg,
                                             const std::vector<std::string>& targets) {
    std::vector<std::string> out;
    for (const auto& t : targets) {
        if (t.rfind("layers.", 0) == 0 || t == "head") {
            weight_shape(cfg, t); // throws UnknownTarget
            out.push_back(t);
        } else {
            for (int l = 0; l < cfg.n_layers; ++l) {
                const std::string full = "layers." + std::to_string(l) + "." + t;
                weight_shape(cfg, full);
                out.push_back(full);
            }
        }
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

namespace {

Matrix* weight_by_name(ModelParams& p, const ModelConfig& cfg, const std::string& target) {
    for (auto& t : named_tensors(p))
        if (t.name == target) return t.m;
    (void)cfg;
    throw UnknownTarget("no tensor named '" + target + "'");
}

} // namespace

StrategyModel build_strategy_model(const ExperimentConfig& c, const Vocabulary& vocab,
                                   uint64_t seed) {
    StrategyModel sm;
    sm.cfg = c.model;
    sm.cfg.vocab_size = vocab.size();
    sm.cfg.mode = required_mode(c.strategy);
    sm.vocab = vocab;
    sm.tmpl = c.tmpl;
    sm.verbalizer = c.verbalizer;
    sm.strategy = c.strategy;
    sm.params = init_params(sm.cfg, seed);

    if (c.quantize_base) {
        // frozen base weights round-trip through int8 storage; embeddings and
        // LayerNorm stay full precision, as do the adapters
        for (auto& t : named_tensors(sm.params))
            if (t.cls == ParamClass::weight) *t.m = dequantize(quantize_int8(*t.m));
    }

    if (c.policy == TrainPolicy::lora) {
        std::mt19937_64 rng(mix_seed(seed, 0x10ABull));
        for (const auto& target : expand_lora_targets(sm.cfg, c.lora.targets)) {
            auto [n, m] = weight_shape(sm.cfg, target);
            sm.adapters.by_target.emplace(target,
                                          make_adapter(target, n, m, c.lora.rank, c.lora.alpha, rng));
        }
    }

    if (c.policy == TrainPolicy::soft_prompt_only) {
        std::mt19937_64 rng(mix_seed(seed, 0x50F7ull));
        const bool conditional = c.tmpl.mode == TemplateMode::conditional_prefix ||
                                 c.tmpl.mode == TemplateMode::conditional_suffix;
        Rendered r = render(c.tmpl, vocab, "", conditional ? "x" : "", 0);
        std::vector<int> warm_ids(r.seq.ids.begin() + (r.seq.ids.empty() ? 0 : 1),
                                  r.seq.ids.end()); // skip BOS
        if (sm.cfg.mode == Mode::masked) warm_ids = r.seq.ids;
        sm.soft_prompt = make_soft_prompt(c.soft_prompt.length, sm.cfg.d_model,
                                          c.soft_prompt.init, sm.params.tok_emb, warm_ids, rng);
    }
    return sm;
}

} // namespace promptclinic
