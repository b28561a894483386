#include "aircorrect/bundle.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "aircorrect/csv.hpp"
#include "aircorrect/errors.hpp"

namespace aircorrect {

namespace {

using nlohmann::json;

// Little-endian primitive packing into a byte buffer.
class Writer {
  public:
    void raw(const void* data, std::size_t len) {
        const auto* p = static_cast<const char*>(data);
        buf_.insert(buf_.end(), p, p + len);
    }
    void magic(const char* m) { raw(m, std::strlen(m)); }
    void u8(std::uint8_t v) { raw(&v, 1); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
    void f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        u64(bits);
    }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
    void names(const std::vector<std::string>& v) {
        u32(static_cast<std::uint32_t>(v.size()));
        for (const auto& s : v) str(s);
    }
    void matrix(const Eigen::MatrixXd& m) {
        u32(static_cast<std::uint32_t>(m.rows()));
        u32(static_cast<std::uint32_t>(m.cols()));
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) f64(m(r, c));
    }
    const std::string& bytes() const { return buf_; }

  private:
    std::string buf_;
};

class Reader {
  public:
    Reader(const std::string& data, std::size_t pos, std::size_t end, std::string section)
        : data_(data), pos_(pos), end_(end), section_(std::move(section)) {}

    void expect_magic(const char* m) {
        const std::size_t len = std::strlen(m);
        if (remaining() < len || std::memcmp(data_.data() + pos_, m, len) != 0)
            fail("bad section magic");
        pos_ += len;
    }
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(data_[pos_++]);
    }
    std::uint32_t u32() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(u8()) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(u8()) << (8 * i);
        return v;
    }
    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
    double f64() {
        const std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    std::string str() {
        const std::uint32_t len = u32();
        need(len);
        std::string s = data_.substr(pos_, len);
        pos_ += len;
        return s;
    }
    std::vector<std::string> names() {
        const std::uint32_t n = u32();
        std::vector<std::string> v;
        v.reserve(n);
        for (std::uint32_t i = 0; i < n; ++i) v.push_back(str());
        return v;
    }
    Eigen::MatrixXd matrix() {
        const std::uint32_t rows = u32();
        const std::uint32_t cols = u32();
        if (std::uint64_t(rows) * cols * 8 > remaining()) fail("matrix exceeds section bounds");
        Eigen::MatrixXd m(rows, cols);
        for (std::uint32_t r = 0; r < rows; ++r)
            for (std::uint32_t c = 0; c < cols; ++c) m(r, c) = f64();
        return m;
    }
    void done() {
        if (pos_ != end_) fail("trailing bytes in section");
    }

  private:
    std::size_t remaining() const { return end_ - pos_; }
    void need(std::size_t len) {
        if (remaining() < len) fail("truncated section");
    }
    [[noreturn]] void fail(const std::string& why) {
        throw FormatError("bundle section \"" + section_ + "\": " + why);
    }
    const std::string& data_;
    std::size_t pos_;
    std::size_t end_;
    std::string section_;
};

void write_gbt(Writer& w, const GBTModel& m) {
    w.magic(kGbtMagic);
    w.f64(m.base_score);
    w.f64(m.learning_rate);
    w.u8(m.gain_importance ? 1 : 0);
    w.names(m.feature_names);
    w.u32(static_cast<std::uint32_t>(m.trees.size()));
    for (const Tree& t : m.trees) {
        w.u32(static_cast<std::uint32_t>(t.nodes.size()));
        for (const TreeNode& n : t.nodes) {
            w.i32(n.feature);
            w.f64(n.threshold);
            w.i32(n.left);
            w.i32(n.right);
            w.f64(n.weight);
            w.f64(n.gain);
        }
    }
}

GBTModel read_gbt(Reader& r) {
    r.expect_magic(kGbtMagic);
    GBTModel m;
    m.base_score = r.f64();
    m.learning_rate = r.f64();
    m.gain_importance = r.u8() != 0;
    m.feature_names = r.names();
    const std::uint32_t n_trees = r.u32();
    m.trees.resize(n_trees);
    for (auto& t : m.trees) {
        const std::uint32_t n_nodes = r.u32();
        t.nodes.resize(n_nodes);
        for (auto& n : t.nodes) {
            n.feature = r.i32();
            n.threshold = r.f64();
            n.left = r.i32();
            n.right = r.i32();
            n.weight = r.f64();
            n.gain = r.f64();
        }
    }
    return m;
}

void write_cascade(Writer& w, const CascadeNet& net) {
    w.magic(kRnnMagic);
    w.u8(net.config.cell == CellKind::lstm ? 0 : 1);
    w.u8(net.config.wiring == CascadeWiring::hidden_sequence ? 0 : 1);
    w.u8(net.config.layout == SequenceLayout::univariate ? 0 : 1);
    w.i32(net.config.layer1_hidden);
    w.i32(net.config.layer2_hidden);
    w.f64(net.config.dropout_rate);
    w.i32(net.feature_count);
    w.names(net.feature_names);
    w.f64(net.scalers.pollutant.min);
    w.f64(net.scalers.pollutant.max);
    for (const auto& s : net.scalers.cmaq) {
        w.f64(s.min);
        w.f64(s.max);
    }
    w.u64(net.scalers.train_count);
    const auto views = net.param_views();
    w.u32(static_cast<std::uint32_t>(views.size()));
    for (const auto* p : views) w.matrix(*p);
}

CascadeNet read_cascade(Reader& r) {
    r.expect_magic(kRnnMagic);
    CascadeNet net;
    net.config.cell = r.u8() == 0 ? CellKind::lstm : CellKind::gru;
    net.config.wiring = r.u8() == 0 ? CascadeWiring::hidden_sequence
                                    : CascadeWiring::prediction_feed;
    net.config.layout =
        r.u8() == 0 ? SequenceLayout::univariate : SequenceLayout::lag_multivariate;
    net.config.layer1_hidden = r.i32();
    net.config.layer2_hidden = r.i32();
    net.config.dropout_rate = r.f64();
    net.feature_count = r.i32();
    net.feature_names = r.names();
    net.scalers.pollutant.min = r.f64();
    net.scalers.pollutant.max = r.f64();
    for (auto& s : net.scalers.cmaq) {
        s.min = r.f64();
        s.max = r.f64();
    }
    net.scalers.train_count = r.u64();
    // Shape the parameter holders, then overwrite them in view order.
    CascadeNet shaped = make_cascade(net.config, net.feature_count, 0);
    shaped.feature_names = net.feature_names;
    shaped.scalers = net.scalers;
    ParamViews views = shaped.param_views();
    const std::uint32_t n_params = r.u32();
    if (n_params != views.size())
        throw FormatError("bundle cascade: parameter count mismatch");
    for (auto* p : views) {
        Eigen::MatrixXd m = r.matrix();
        if (m.rows() != p->rows() || m.cols() != p->cols())
            throw FormatError("bundle cascade: parameter shape mismatch");
        *p = std::move(m);
    }
    return shaped;
}

void write_dense(Writer& w, const DenseNet& net) {
    w.magic(kDnnMagic);
    w.i32(net.input_width);
    w.u32(static_cast<std::uint32_t>(net.config.hidden.size()));
    for (int h : net.config.hidden) w.i32(h);
    w.f64(net.config.dropout_rate);
    w.i32(net.config.dropout_layers);
    const auto views = net.param_views();
    w.u32(static_cast<std::uint32_t>(views.size()));
    for (const auto* p : views) w.matrix(*p);
}

DenseNet read_dense(Reader& r) {
    r.expect_magic(kDnnMagic);
    DenseNetConfig cfg;
    const std::int32_t input_width = r.i32();
    const std::uint32_t n_hidden = r.u32();
    cfg.hidden.clear();
    for (std::uint32_t i = 0; i < n_hidden; ++i) cfg.hidden.push_back(r.i32());
    cfg.dropout_rate = r.f64();
    cfg.dropout_layers = r.i32();
    DenseNet net = make_dense_net(cfg, input_width, 0);
    ParamViews views = net.param_views();
    const std::uint32_t n_params = r.u32();
    if (n_params != views.size()) throw FormatError("bundle dense: parameter count mismatch");
    for (auto* p : views) {
        Eigen::MatrixXd m = r.matrix();
        if (m.rows() != p->rows() || m.cols() != p->cols())
            throw FormatError("bundle dense: parameter shape mismatch");
        *p = std::move(m);
    }
    return net;
}

struct RawBundle {
    json header;
    std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> sections;
    std::string data;
};

RawBundle read_raw(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open bundle: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    RawBundle raw;
    raw.data = ss.str();

    const std::string magic = kBundleMagic;
    const std::string prefix = "AIRCORRECT-BUNDLE-v";
    if (raw.data.size() < magic.size() ||
        raw.data.compare(0, prefix.size(), prefix) != 0)
        throw FormatError("not a model bundle: " + path.string());
    if (raw.data.compare(0, magic.size(), magic) != 0) {
        const std::size_t nl = raw.data.find('\n');
        const std::string found =
            raw.data.substr(prefix.size(), (nl == std::string::npos ? prefix.size() : nl) -
                                               prefix.size());
        throw UnsupportedVersionError("bundle version v" + found +
                                      " is not supported by this build");
    }
    std::size_t pos = magic.size();
    auto read_u64 = [&]() {
        if (raw.data.size() - pos < 8) throw FormatError("truncated bundle header");
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= std::uint64_t(static_cast<std::uint8_t>(raw.data[pos + i])) << (8 * i);
        pos += 8;
        return v;
    };
    const std::uint64_t header_len = read_u64();
    if (raw.data.size() - pos < header_len) throw FormatError("truncated bundle header");
    try {
        raw.header = json::parse(raw.data.substr(pos, header_len));
    } catch (const json::exception& e) {
        throw FormatError(std::string("bundle header is not valid JSON: ") + e.what());
    }
    pos += header_len;
    if (!raw.header.contains("sections") || !raw.header["sections"].is_array())
        throw FormatError("bundle header lacks a sections table");
    for (const auto& s : raw.header["sections"]) {
        const std::string name = s.at("name").get<std::string>();
        const std::uint64_t len = read_u64();
        if (raw.data.size() - pos < len) throw FormatError("truncated section " + name);
        raw.sections.emplace_back(name, std::make_pair(pos, pos + len));
        pos += len;
    }
    if (pos != raw.data.size()) throw FormatError("trailing bytes after last section");
    return raw;
}

}  // namespace

void save_bundle(const ModelBundle& bundle, const std::filesystem::path& path) {
    std::vector<std::pair<std::string, std::string>> sections;  // name -> payload

    {
        Writer meta;
        meta.magic(kMetaMagic);
        json j;
        j["station"] = bundle.station;
        j["pollutant"] = bundle.pollutant;
        j["preset"] = bundle.preset;
        j["horizon_hours"] = bundle.horizon_hours;
        j["seed"] = bundle.seed;
        j["target_scaler"] = {{"min", format_double(bundle.target_scaler.min)},
                              {"max", format_double(bundle.target_scaler.max)}};
        j["weather_features"] = bundle.weather_features;
        j["dense_main_features"] = bundle.dense_main_features;
        j["corrector"] = {
            {"present", bundle.has_corrector},
            {"degenerate", bundle.has_corrector && bundle.corrector.degenerate},
            {"residual_min",
             format_double(bundle.has_corrector ? bundle.corrector.residual_scaler.min : 0.0)},
            {"residual_max",
             format_double(bundle.has_corrector ? bundle.corrector.residual_scaler.max : 1.0)},
            {"features", bundle.has_corrector ? bundle.corrector.feature_names
                                              : std::vector<std::string>{}}};
        meta.str(j.dump());
        sections.emplace_back("meta", meta.bytes());
    }
    if (bundle.has_cascade) {
        Writer w;
        write_cascade(w, bundle.cascade);
        sections.emplace_back("cascade", w.bytes());
    }
    if (bundle.has_gbt_temporal) {
        Writer w;
        write_gbt(w, bundle.gbt_temporal);
        sections.emplace_back("gbt_temporal", w.bytes());
    }
    if (bundle.has_gbt_weather) {
        Writer w;
        write_gbt(w, bundle.gbt_weather);
        sections.emplace_back("gbt_weather", w.bytes());
    }
    if (bundle.has_dense_main) {
        Writer w;
        write_dense(w, bundle.dense_main);
        sections.emplace_back("dense_main", w.bytes());
    }
    if (bundle.has_corrector && !bundle.corrector.degenerate) {
        Writer w;
        write_dense(w, bundle.corrector.net);
        sections.emplace_back("corrector", w.bytes());
    }

    json header;
    header["sections"] = json::array();
    for (const auto& [name, payload] : sections) {
        std::string kind = "meta";
        if (name == "cascade") kind = "rnn";
        else if (name.rfind("gbt", 0) == 0) kind = "gbt";
        else if (name == "dense_main" || name == "corrector") kind = "dnn";
        header["sections"].push_back({{"name", name}, {"kind", kind}});
    }
    const std::string header_text = header.dump();

    Writer out;
    out.magic(kBundleMagic);
    out.u64(header_text.size());
    out.raw(header_text.data(), header_text.size());
    for (const auto& [name, payload] : sections) {
        out.u64(payload.size());
        out.raw(payload.data(), payload.size());
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write bundle: " + path.string());
    f.write(out.bytes().data(), static_cast<std::streamsize>(out.bytes().size()));
    if (!f) throw IoError("bundle write failed: " + path.string());
}

ModelBundle load_bundle(const std::filesystem::path& path) {
    RawBundle raw = read_raw(path);
    ModelBundle b;
    for (const auto& [name, span] : raw.sections) {
        Reader r(raw.data, span.first, span.second, name);
        if (name == "meta") {
            r.expect_magic(kMetaMagic);
            json j;
            try {
                j = json::parse(r.str());
            } catch (const json::exception& e) {
                throw FormatError(std::string("bundle meta is not valid JSON: ") + e.what());
            }
            r.done();
            b.station = j.at("station").get<std::string>();
            b.pollutant = j.at("pollutant").get<std::string>();
            b.preset = j.at("preset").get<std::string>();
            b.horizon_hours = j.at("horizon_hours").get<int>();
            b.seed = j.at("seed").get<std::uint64_t>();
            b.target_scaler.min =
                parse_double_strict(j.at("target_scaler").at("min").get<std::string>(),
                                    "in bundle meta target_scaler.min");
            b.target_scaler.max =
                parse_double_strict(j.at("target_scaler").at("max").get<std::string>(),
                                    "in bundle meta target_scaler.max");
            b.weather_features = j.at("weather_features").get<std::vector<std::string>>();
            b.dense_main_features =
                j.at("dense_main_features").get<std::vector<std::string>>();
            const auto& c = j.at("corrector");
            b.has_corrector = c.at("present").get<bool>();
            if (b.has_corrector) {
                b.corrector.degenerate = c.at("degenerate").get<bool>();
                b.corrector.residual_scaler.min = parse_double_strict(
                    c.at("residual_min").get<std::string>(), "in bundle meta residual_min");
                b.corrector.residual_scaler.max = parse_double_strict(
                    c.at("residual_max").get<std::string>(), "in bundle meta residual_max");
                b.corrector.feature_names = c.at("features").get<std::vector<std::string>>();
            }
        } else if (name == "cascade") {
            b.cascade = read_cascade(r);
            b.has_cascade = true;
            r.done();
        } else if (name == "gbt_temporal") {
            b.gbt_temporal = read_gbt(r);
            b.has_gbt_temporal = true;
            r.done();
        } else if (name == "gbt_weather") {
            b.gbt_weather = read_gbt(r);
            b.has_gbt_weather = true;
            r.done();
        } else if (name == "dense_main") {
            b.dense_main = read_dense(r);
            b.has_dense_main = true;
            r.done();
        } else if (name == "corrector") {
            b.corrector.net = read_dense(r);
            r.done();
        } else {
            throw FormatError("unknown bundle section \"" + name + "\"");
        }
    }
    return b;
}

std::string describe_bundle(const std::filesystem::path& path) {
    RawBundle raw = read_raw(path);
    std::ostringstream out;
    out << "bundle: " << path.string() << "\n";
    for (const auto& [name, span] : raw.sections)
        out << "  section " << name << ": " << (span.second - span.first) << " bytes\n";
    for (const auto& [name, span] : raw.sections) {
        if (name != "meta") continue;
        Reader r(raw.data, span.first, span.second, name);
        r.expect_magic(kMetaMagic);
        out << "meta: " << r.str() << "\n";
    }
    return out.str();
}

}  // namespace aircorrect
