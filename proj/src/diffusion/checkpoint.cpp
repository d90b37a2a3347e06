#include "physhdr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "physhdr/error.hpp"

namespace physhdr::checkpoint {

namespace fs = std::filesystem;
using nlohmann::json;
using nn::Tensor;

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'P', 'H', 'C', 'K'};

std::string hex(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << v;
    return os.str();
}

json tensor_entry(const std::string& name, const Tensor& t, std::vector<double>& payload) {
    json e = {{"name", name}, {"shape", t.shape()}, {"offset", payload.size()}};
    payload.insert(payload.end(), t.data(), t.data() + t.numel());
    return e;
}

Tensor read_entry(const json& e, const std::vector<double>& payload) {
    const nn::Shape shape = e.at("shape").get<nn::Shape>();
    const std::size_t offset = e.at("offset").get<std::size_t>();
    const std::size_t n = nn::numel(shape);
    if (offset > payload.size() || n > payload.size() - offset)
        throw CheckpointError("checkpoint: tensor " + e.at("name").get<std::string>() + " runs past the payload");
    return Tensor(shape, std::vector<double>(payload.begin() + offset, payload.begin() + offset + n));
}

} // namespace

void save(const fs::path& path, const PhysHdrModel& model, const nn::AdamW* opt, const json& meta) {
    std::vector<double> payload;
    json params = json::array();
    for (const auto& [name, v] : model.params().entries()) params.push_back(tensor_entry(name, v.value(), payload));

    json header = {
        {"model", model.config()},
        {"params", params},
        {"ldr_encoder_checksum", hex(model.ldr_encoder_checksum())},
        {"meta", meta},
    };
    if (opt) {
        const auto& c = opt->config();
        json moments = json::array();
        for (const auto& [name, m] : opt->state()) {
            json e = {{"name", name}, {"m", tensor_entry(name, m.m, payload)}, {"v", tensor_entry(name, m.v, payload)}};
            moments.push_back(e);
        }
        header["optimizer"] = {{"steps", opt->steps()},
                               {"lr", c.lr},
                               {"beta1", c.beta1},
                               {"beta2", c.beta2},
                               {"eps", c.eps},
                               {"weight_decay", c.weight_decay},
                               {"moments", moments}};
    }
    const std::string text = header.dump();

    std::error_code ec;
    if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write checkpoint " + tmp.string());
        const std::uint32_t version = kVersion;
        const std::uint64_t len = text.size();
        out.write(kMagic, 4);
        out.write(reinterpret_cast<const char*>(&version), sizeof version);
        out.write(reinterpret_cast<const char*>(&len), sizeof len);
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        out.write(reinterpret_cast<const char*>(payload.data()),
                  static_cast<std::streamsize>(payload.size() * sizeof(double)));
        if (!out) throw IoError("short write to checkpoint " + tmp.string());
    }
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Contents load(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    char magic[4];
    std::uint32_t version = 0;
    std::uint64_t len = 0;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) throw CheckpointError(path.string() + " is not a checkpoint");
    if (version != kVersion)
        throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                              std::to_string(kVersion) + ")");
    const auto file_size = fs::file_size(path);
    if (len > file_size) throw CheckpointError("checkpoint header length exceeds the file");
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    const std::uint64_t rest = file_size - 16 - len;
    if (!in || rest % sizeof(double) != 0) throw CheckpointError("checkpoint is truncated");
    std::vector<double> payload(rest / sizeof(double));
    in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(rest));
    if (!in) throw CheckpointError("checkpoint is truncated");

    Contents c;
    try {
        const json header = json::parse(text);
        ModelConfig cfg = header.at("model").get<ModelConfig>();
        c.model = std::make_unique<PhysHdrModel>(cfg, 0);
        nn::ParamStore& store = c.model->params();
        std::size_t seen = 0;
        for (const auto& e : header.at("params")) {
            const std::string name = e.at("name");
            if (!store.contains(name)) throw CheckpointError("checkpoint parameter " + name + " is not in the model");
            Tensor t = read_entry(e, payload);
            nn::Var v = store.get(name);
            if (!t.same_shape(v.value()))
                throw CheckpointError("checkpoint parameter " + name + " has shape " + nn::to_string(t.shape()) +
                                      ", model expects " + nn::to_string(v.value().shape()));
            v.node()->value = std::move(t);
            ++seen;
        }
        if (seen != store.entries().size()) throw CheckpointError("checkpoint is missing model parameters");

        c.ldr_encoder_checksum = std::stoull(header.at("ldr_encoder_checksum").get<std::string>(), nullptr, 16);
        if (c.ldr_encoder_checksum != c.model->ldr_encoder_checksum())
            throw CheckpointError("checkpoint LDR encoder checksum mismatch");
        c.meta = header.value("meta", json::object());

        if (header.contains("optimizer")) {
            const json& o = header.at("optimizer");
            OptimizerState s;
            s.steps = o.at("steps");
            s.config = {o.at("lr"), o.at("beta1"), o.at("beta2"), o.at("eps"), o.at("weight_decay")};
            for (const auto& e : o.at("moments"))
                s.moments[e.at("name")] = {read_entry(e.at("m"), payload), read_entry(e.at("v"), payload)};
            c.optimizer = std::move(s);
        }
    } catch (const json::exception& e) {
        throw CheckpointError("checkpoint header: " + std::string(e.what()));
    } catch (const ConfigError& e) {
        throw CheckpointError("checkpoint model config: " + std::string(e.what()));
    }
    return c;
}

void restore(nn::AdamW& opt, const OptimizerState& state) {
    for (const auto& [name, v] : opt.params()) {
        auto it = state.moments.find(name);
        if (it != state.moments.end() && !it->second.m.same_shape(v.value()))
            throw CheckpointError("optimizer moment " + name + " does not match its parameter");
    }
    opt.set_lr(state.config.lr);
    opt.load_state(state.moments, state.steps);
}

} // namespace physhdr::checkpoint
