#include "nrsa/config.hpp"

#include <algorithm>
#include <set>

#include "json.hpp"

#include "nrsa/dataio.hpp"
#include "nrsa/error.hpp"

namespace nrsa::config {

using Json = nlohmann::ordered_json;

namespace {

[[noreturn]] void bad(const std::string& why) { throw Error(ErrorCode::InvalidSpec, why); }

// Reads the members of one JSON object, rejecting any key nobody asked for.
class Section {
public:
    Section(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) bad(label() + " must be an object");
    }
    ~Section() noexcept(false) {
        if (std::uncaught_exceptions() > 0) return;
        for (const auto& [key, _] : j_.items())
            if (!seen_.count(key)) bad("unknown key '" + prefix() + key + "'");
    }

    template <class T>
    void read(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        const Json& v = j_.at(key);
        try {
            if constexpr (std::is_same_v<T, bool>) {
                if (!v.is_boolean()) throw std::runtime_error("");
                out = v.get<bool>();
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v.is_string()) throw std::runtime_error("");
                out = v.get<std::string>();
            } else if constexpr (std::is_floating_point_v<T>) {
                if (!v.is_number()) throw std::runtime_error("");
                out = v.get<T>();
            } else if constexpr (std::is_integral_v<T>) {
                if (std::is_unsigned_v<T> ? !v.is_number_unsigned() : !v.is_number_integer()) throw std::runtime_error("");
                out = v.get<T>();
            } else {
                if (!v.is_array()) throw std::runtime_error("");
                for (const auto& e : v)
                    if (!e.is_number_unsigned()) throw std::runtime_error("");
                out = v.get<T>();
            }
        } catch (const std::exception&) {
            bad("'" + prefix() + key + "' has the wrong type");
        }
    }

    Section sub(const char* key) {
        seen_.insert(key);
        static const Json empty = Json::object();
        return Section(j_.contains(key) ? j_.at(key) : empty, prefix() + key);
    }

private:
    std::string label() const { return path_.empty() ? "config" : "'" + path_ + "'"; }
    std::string prefix() const { return path_.empty() ? "" : path_ + "."; }

    const Json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

Json to_tree(const RunConfig& c) {
    Json j;
    j["seed"] = c.seed;
    j["out"] = c.out;
    j["jobs"] = c.jobs;
    j["synth"] = {{"concepts", c.synth.concepts},
                  {"attributes", c.synth.attributes},
                  {"samples_per_task", c.synth.samples_per_task},
                  {"seq_len", c.synth.seq_len},
                  {"cues_per_sample", c.synth.cues_per_sample},
                  {"pool_size", c.synth.pool_size},
                  {"filler_tokens", c.synth.filler_tokens},
                  {"overlap_floor", c.synth.overlap_floor},
                  {"noise", c.synth.noise}};
    j["model"] = {{"layers", c.model.layers},       {"d_model", c.model.d_model},   {"heads", c.model.heads},
                  {"d_ff", c.model.d_ff},           {"max_len", c.model.max_len},   {"prompt_len", c.model.prompt_len},
                  {"init_std", c.model.init_std},   {"weight_gain", c.model.weight_gain}};
    j["train"] = {{"lr", c.train.lr},       {"beta1", c.train.beta1},   {"beta2", c.train.beta2},
                  {"eps", c.train.eps},     {"epochs", c.train.epochs}, {"batch", c.train.batch}};
    j["base"] = {{"wire", c.base.wire},
                 {"position_scale", c.base.position_scale},
                 {"lexicon_strength", c.base.lexicon_strength},
                 {"copy_gain", c.base.copy_gain},
                 {"detector_gain", c.base.detector_gain},
                 {"detector_threshold", c.base.detector_threshold},
                 {"evidence_gain", c.base.evidence_gain},
                 {"readout_gain", c.base.readout_gain},
                 {"copies", c.base.copies}};
    j["seeds"] = c.seeds;
    j["q"] = c.q;
    j["drop_q"] = c.drop_q;
    j["sig_method"] = rsa::to_string(c.sig_method);
    j["n_levels"] = c.n_levels;
    j["ranking_depth"] = c.ranking_depth;
    j["dip_boots"] = c.dip_boots;
    j["contribution_n"] = c.contribution_n;
    j["similarity"] = {{"participants", c.similarity.participants},
                       {"missing_per_participant", c.similarity.missing_per_participant},
                       {"noise", c.similarity.noise},
                       {"boots", c.similarity.boots},
                       {"q", c.similarity.q}};
    return j;
}

RunConfig from_tree(const Json& j) {
    RunConfig c;
    {
        Section top(j, "");
        top.read("seed", c.seed);
        top.read("out", c.out);
        top.read("jobs", c.jobs);
        {
            auto s = top.sub("synth");
            s.read("concepts", c.synth.concepts);
            s.read("attributes", c.synth.attributes);
            s.read("samples_per_task", c.synth.samples_per_task);
            s.read("seq_len", c.synth.seq_len);
            s.read("cues_per_sample", c.synth.cues_per_sample);
            s.read("pool_size", c.synth.pool_size);
            s.read("filler_tokens", c.synth.filler_tokens);
            s.read("overlap_floor", c.synth.overlap_floor);
            s.read("noise", c.synth.noise);
        }
        {
            auto m = top.sub("model");
            m.read("layers", c.model.layers);
            m.read("d_model", c.model.d_model);
            m.read("heads", c.model.heads);
            m.read("d_ff", c.model.d_ff);
            m.read("max_len", c.model.max_len);
            m.read("prompt_len", c.model.prompt_len);
            m.read("init_std", c.model.init_std);
            m.read("weight_gain", c.model.weight_gain);
        }
        {
            auto t = top.sub("train");
            t.read("lr", c.train.lr);
            t.read("beta1", c.train.beta1);
            t.read("beta2", c.train.beta2);
            t.read("eps", c.train.eps);
            t.read("epochs", c.train.epochs);
            t.read("batch", c.train.batch);
        }
        {
            auto b = top.sub("base");
            b.read("wire", c.base.wire);
            b.read("position_scale", c.base.position_scale);
            b.read("lexicon_strength", c.base.lexicon_strength);
            b.read("copy_gain", c.base.copy_gain);
            b.read("detector_gain", c.base.detector_gain);
            b.read("detector_threshold", c.base.detector_threshold);
            b.read("evidence_gain", c.base.evidence_gain);
            b.read("readout_gain", c.base.readout_gain);
            b.read("copies", c.base.copies);
        }
        top.read("seeds", c.seeds);
        top.read("q", c.q);
        top.read("drop_q", c.drop_q);
        std::string method = rsa::to_string(c.sig_method);
        top.read("sig_method", method);
        try {
            c.sig_method = rsa::parse_sig_method(method);
        } catch (const Error& e) {
            bad(std::string("sig_method: ") + e.what());
        }
        top.read("n_levels", c.n_levels);
        top.read("ranking_depth", c.ranking_depth);
        top.read("dip_boots", c.dip_boots);
        top.read("contribution_n", c.contribution_n);
        {
            auto s = top.sub("similarity");
            s.read("participants", c.similarity.participants);
            s.read("missing_per_participant", c.similarity.missing_per_participant);
            s.read("noise", c.similarity.noise);
            s.read("boots", c.similarity.boots);
            s.read("q", c.similarity.q);
        }
    }
    c.synth.seed = c.seed;
    c.model.vocab = c.synth.vocab();
    c.validate();
    return c;
}

}  // namespace

std::size_t RunConfig::focus_n() const {
    if (contribution_n != 0) return contribution_n;
    auto levels = n_levels;
    std::sort(levels.begin(), levels.end());
    return levels[levels.size() / 2];
}

void RunConfig::validate() const {
    synth.validate();
    try {
        model.validate();
    } catch (const Error& e) {
        bad(std::string("model: ") + e.what());
    }
    if (model.vocab != synth.vocab()) bad("model vocabulary must equal the synthetic vocabulary");
    if (model.prompt_len + 2 + synth.seq_len > model.max_len) bad("model.max_len cannot hold the prompt and the text");
    if (jobs < 1) bad("jobs must be at least 1");
    if (seeds == 0) bad("seeds must be at least 1");
    if (train.epochs == 0 || train.batch == 0) bad("train.epochs and train.batch must be positive");
    if (!(train.lr > 0.0)) bad("train.lr must be positive");
    for (double v : {q, drop_q, similarity.q})
        if (!(v > 0.0 && v < 1.0)) bad("FDR levels must lie in (0, 1)");
    if (n_levels.empty()) bad("n_levels must not be empty");
    std::set<std::size_t> distinct(n_levels.begin(), n_levels.end());
    if (distinct.size() != n_levels.size()) bad("n_levels must not repeat");
    const std::size_t max_n = *distinct.rbegin();
    if (*distinct.begin() == 0) bad("n_levels entries must be at least 1");
    if (max_n > model.neurons()) bad("n_levels exceed the neuron count");
    if (ranking_depth < max_n) bad("ranking_depth must cover the largest n level");
    if (contribution_n != 0 && !distinct.count(contribution_n)) bad("contribution_n must be one of n_levels");
    if (dip_boots == 0 || similarity.boots == 0) bad("bootstrap counts must be positive");
    if (similarity.participants < 2) bad("similarity.participants must be at least 2");
}

std::string to_json(const RunConfig& cfg) { return to_tree(cfg).dump(2) + "\n"; }

RunConfig from_json(const std::string& text) {
    Json j;
    try {
        j = Json::parse(text);
    } catch (const Json::parse_error& e) {
        bad(std::string("config is not valid JSON: ") + e.what());
    }
    return from_tree(j);
}

RunConfig load(const std::filesystem::path& path) { return from_json(dataio::read_text(path)); }

void save(const RunConfig& cfg, const std::filesystem::path& path) { dataio::write_text(path, to_json(cfg)); }

void set_paths(RunConfig& cfg, const std::vector<std::pair<std::string, std::string>>& overrides) {
    Json tree = to_tree(cfg);
    for (const auto& [dotted, value] : overrides) {
        Json* node = &tree;
        std::size_t start = 0;
        while (true) {
            const auto dot = dotted.find('.', start);
            const std::string key = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
            if (key.empty() || !node->is_object() || !node->contains(key)) bad("unknown config path '" + dotted + "'");
            node = &(*node)[key];
            if (dot == std::string::npos) break;
            start = dot + 1;
        }
        Json parsed = Json::parse(value, nullptr, false);
        // Strings stay strings even when they happen to parse as JSON ("out": "123").
        *node = parsed.is_discarded() || node->is_string() ? Json(value) : parsed;
    }
    cfg = from_tree(tree);
}

void set_path(RunConfig& cfg, const std::string& dotted, const std::string& value) { set_paths(cfg, {{dotted, value}}); }

}  // namespace nrsa::config
