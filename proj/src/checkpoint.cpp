#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "nsync/model.hpp"

namespace nsync {

namespace {
constexpr char kMagic[8] = {'N', 'S', 'Y', 'N', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

using ordered_json = nlohmann::ordered_json;

void write_u32(std::ostream& out, uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

uint32_t read_u32(std::istream& in) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}
}  // namespace

void save_checkpoint(const Model& m, const std::string& path, bool full) {
    ordered_json header;
    header["config"] = {{"d_data", m.cfg.d_data},
                        {"d_hidden", m.cfg.d_hidden},
                        {"n_layers", m.cfg.n_layers},
                        {"d_time", m.cfg.d_time},
                        {"d_e", m.cfg.d_e}};
    header["schedule"] = {
        {"T", m.sched.T}, {"beta_min", m.sched.beta_min}, {"beta_max", m.sched.beta_max}};
    header["n_content"] = m.n_content;
    header["mode"] = adaptation_mode_name(m.mode);
    if (m.mode == AdaptationMode::LowRank)
        header["lora"] = {
            {"targets", m.lora.targets}, {"rank", m.lora.rank}, {"alpha", m.lora.alpha}};
    header["full"] = full;
    ordered_json tensors = ordered_json::array();
    for (const auto& name : m.params.names()) {
        if (!full && !m.params.is_trainable(name)) continue;
        tensors.push_back({{"name", name},
                           {"shape", m.params.at(name).shape},
                           {"trainable", m.params.is_trainable(name)}});
    }
    header["tensors"] = std::move(tensors);
    std::string header_bytes = header.dump();

    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        NSYNC_CHECK(out.good(), "cannot open checkpoint for writing: ", tmp);
        out.write(kMagic, sizeof kMagic);
        write_u32(out, kVersion);
        write_u32(out, static_cast<uint32_t>(header_bytes.size()));
        out.write(header_bytes.data(), static_cast<std::streamsize>(header_bytes.size()));
        for (const auto& entry : header["tensors"]) {
            const Tensor& t = m.params.at(entry["name"].get<std::string>());
            // Raw little-endian doubles; this format is host-endian.
            out.write(reinterpret_cast<const char*>(t.data.data()),
                      static_cast<std::streamsize>(t.data.size() * sizeof(double)));
        }
        NSYNC_CHECK(out.good(), "write failure on checkpoint: ", tmp);
    }
    std::filesystem::rename(tmp, path);
}

namespace {
struct ParsedHeader {
    ordered_json json;
    Model skeleton;
    bool full = true;
};

ParsedHeader read_header(std::istream& in, const std::string& path) {
    char magic[8] = {};
    in.read(magic, sizeof magic);
    NSYNC_CHECK(in.good() && std::equal(magic, magic + 8, kMagic),
                "not a checkpoint file: ", path);
    uint32_t version = read_u32(in);
    NSYNC_CHECK(in.good() && version == kVersion, "unsupported checkpoint version ", version,
                " in ", path, " (expected ", kVersion, ")");
    uint32_t hlen = read_u32(in);
    NSYNC_CHECK(in.good() && hlen > 0 && hlen < (1u << 26), "corrupt checkpoint header length in ",
                path);
    std::string hbytes(hlen, '\0');
    in.read(hbytes.data(), hlen);
    NSYNC_CHECK(in.good(), "truncated checkpoint header in ", path);

    ParsedHeader out;
    try {
        out.json = ordered_json::parse(hbytes);
    } catch (const std::exception& e) {
        throw ConfigError(str_cat("bad checkpoint header in ", path, ": ", e.what()));
    }
    const auto& h = out.json;
    Model& m = out.skeleton;
    try {
        m.cfg.d_data = h.at("config").at("d_data").get<int>();
        m.cfg.d_hidden = h.at("config").at("d_hidden").get<int>();
        m.cfg.n_layers = h.at("config").at("n_layers").get<int>();
        m.cfg.d_time = h.at("config").at("d_time").get<int>();
        m.cfg.d_e = h.at("config").at("d_e").get<int>();
        m.sched.T = h.at("schedule").at("T").get<int>();
        m.sched.beta_min = h.at("schedule").at("beta_min").get<double>();
        m.sched.beta_max = h.at("schedule").at("beta_max").get<double>();
        m.n_content = h.at("n_content").get<int>();
        m.mode = parse_adaptation_mode(h.at("mode").get<std::string>());
        if (m.mode == AdaptationMode::LowRank) {
            m.lora.targets = h.at("lora").at("targets").get<std::vector<std::string>>();
            m.lora.rank = h.at("lora").at("rank").get<int>();
            m.lora.alpha = h.at("lora").at("alpha").get<double>();
        }
        out.full = h.at("full").get<bool>();
    } catch (const ordered_json::exception& e) {
        throw ConfigError(str_cat("incomplete checkpoint header in ", path, ": ", e.what()));
    }
    return out;
}
}  // namespace

Model load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    NSYNC_CHECK(in.good(), "cannot open checkpoint: ", path);
    ParsedHeader ph = read_header(in, path);
    NSYNC_CHECK(ph.full, "checkpoint ", path,
                " holds only trainable tensors; overlay it onto a full model instead");

    Model m = std::move(ph.skeleton);
    for (const auto& entry : ph.json.at("tensors")) {
        std::string name = entry.at("name").get<std::string>();
        auto shape = entry.at("shape").get<std::vector<int64_t>>();
        bool trainable = entry.at("trainable").get<bool>();
        Tensor t = Tensor::zeros(shape);
        in.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(double)));
        NSYNC_CHECK(in.good(), "checkpoint ", path, " truncated while reading tensor ", name,
                    " of shape ", shape_str(shape));
        m.params.add(name, std::move(t), trainable);
    }
    NSYNC_CHECK(in.peek() == std::char_traits<char>::eof(), "checkpoint ", path,
                " has trailing bytes; shape table does not match payload");
    return m;
}

void load_checkpoint_overlay(Model& m, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    NSYNC_CHECK(in.good(), "cannot open checkpoint: ", path);
    ParsedHeader ph = read_header(in, path);
    for (const auto& entry : ph.json.at("tensors")) {
        std::string name = entry.at("name").get<std::string>();
        auto shape = entry.at("shape").get<std::vector<int64_t>>();
        NSYNC_CHECK(m.params.has(name), "overlay tensor ", name, " not present in model");
        Tensor& dst = m.params.at(name);
        NSYNC_CHECK(dst.shape == shape, "overlay tensor ", name, " shape ", shape_str(shape),
                    " does not match model shape ", shape_str(dst.shape));
        in.read(reinterpret_cast<char*>(dst.data.data()),
                static_cast<std::streamsize>(dst.data.size() * sizeof(double)));
        NSYNC_CHECK(in.good(), "checkpoint ", path, " truncated while reading tensor ", name);
    }
}

}  // namespace nsync
