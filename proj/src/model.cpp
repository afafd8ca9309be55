#include "lbp/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "lbp/geo.hpp"

namespace lbp {

std::span<const double> ModelParams::alpha_row(int s, int u) const {
    const auto F = static_cast<std::size_t>(schema.total_F());
    if (gate.mode == GateMode::global)
        return {gate.alpha.data() + static_cast<std::size_t>(s) * F, F};
    if (u < 0) throw std::invalid_argument("per-user gate requires a user index");
    const auto off = (static_cast<std::size_t>(u) * K + s) * F;
    return {gate.alpha.data() + off, F};
}

std::span<double> ModelParams::alpha_row_mut(int s, int u) {
    auto row = alpha_row(s, u);
    return {const_cast<double*>(row.data()), row.size()};
}

double ModelParams::poi_distance_km(int i, int l) const {
    return haversine_km(poi_lat[i], poi_lon[i], poi_lat[l], poi_lon[l]);
}

double pattern_score(const ModelParams& model, int s, int u, int i, int l,
                     double distance_km) {
    if (s < 0 || s >= model.K || u < 0 || u >= model.M || i < 0 || i >= model.N ||
        l < 0 || l >= model.N)
        throw std::out_of_range("pattern_score: index out of range");

    const auto uf = model.user_row(s, u);
    const auto lu = model.next_user_row(s, l);
    const auto li = model.next_prev_row(s, l);
    const auto il = model.prev_row(s, i);
    double score = 0.0;
    for (int d = 0; d < model.D; ++d) score += uf[d] * lu[d];
    for (int d = 0; d < model.D; ++d) score += li[d] * il[d];
    score += model.patterns[s].rho *
             spatial_preference(distance_km, model.min_distance_km);
    return score;
}

PatternDistribution gate_distribution(const ModelParams& model, int u,
                                      const ContextVector& context) {
    if (static_cast<int>(context.values.size()) != model.schema.total_F())
        throw std::invalid_argument("gate_distribution: context length mismatch");
    if (model.gate.mode == GateMode::per_user && u < 0)
        throw std::invalid_argument("gate_distribution: per-user mode needs a user");

    PatternDistribution dist;
    dist.probs.resize(model.K);
    std::vector<double> logits(model.K);
    for (int s = 0; s < model.K; ++s) {
        const auto alpha = model.alpha_row(s, u);
        double z = 0.0;
        for (std::size_t j = 0; j < alpha.size(); ++j) z += alpha[j] * context.values[j];
        logits[s] = z;
    }
    const double zmax = *std::max_element(logits.begin(), logits.end());
    double denom = 0.0;
    for (int s = 0; s < model.K; ++s) {
        dist.probs[s] = std::exp(logits[s] - zmax);
        denom += dist.probs[s];
    }
    for (auto& p : dist.probs) p /= denom;
    return dist;
}

double fused_score(const ModelParams& model, int u, int i, int l,
                   const ContextVector& context, double distance_km) {
    const auto gate = gate_distribution(model, u, context);
    double score = 0.0;
    for (int s = 0; s < model.K; ++s)
        score += gate.probs[s] * pattern_score(model, s, u, i, l, distance_km);
    return score;
}

namespace {

constexpr char kMagic[4] = {'L', 'B', 'P', 'M'};
constexpr std::uint32_t kVersion = 1;

class Writer {
public:
    explicit Writer(std::vector<std::uint8_t>& out) : out_(out) {}
    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    void u32(std::uint32_t v) { raw(&v, sizeof v); }
    void u64(std::uint64_t v) { raw(&v, sizeof v); }
    void f64(double v) { raw(&v, sizeof v); }
    void f64s(const std::vector<double>& v) { raw(v.data(), v.size() * sizeof(double)); }

private:
    std::vector<std::uint8_t>& out_;
};

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}
    void raw(void* p, std::size_t n) {
        if (pos_ + n > in_.size())
            throw std::runtime_error("model deserialize: truncated stream");
        std::memcpy(p, in_.data() + pos_, n);
        pos_ += n;
    }
    std::uint32_t u32() { std::uint32_t v; raw(&v, sizeof v); return v; }
    std::uint64_t u64() { std::uint64_t v; raw(&v, sizeof v); return v; }
    double f64() { double v; raw(&v, sizeof v); return v; }
    void f64s(std::vector<double>& v, std::size_t n) {
        v.resize(n);
        raw(v.data(), n * sizeof(double));
    }
    bool done() const { return pos_ == in_.size(); }

private:
    const std::vector<std::uint8_t>& in_;
    std::size_t pos_ = 0;
};

int count_from_f64(double v, const char* what) {
    if (!(v >= 0.0) || v != std::floor(v) || v > 2147483647.0)
        throw std::runtime_error(std::string("model deserialize: bad count for ") + what);
    return static_cast<int>(v);
}

}  // namespace

std::size_t serialized_size(const ModelParams& model) {
    const auto K = static_cast<std::size_t>(model.K);
    const auto D = static_cast<std::size_t>(model.D);
    const auto M = static_cast<std::size_t>(model.M);
    const auto N = static_cast<std::size_t>(model.N);
    const auto F = static_cast<std::size_t>(model.schema.total_F());

    std::size_t n = 4 + 4;           // magic + version
    n += 8 * sizeof(double);         // K D M N F mode lambda clamp
    n += 2 * sizeof(double);         // schema: time_bins, utc_offset
    n += sizeof(std::uint64_t);      // dataset fingerprint
    n += sizeof(std::uint32_t);      // category label count
    for (const auto& label : model.schema.category_labels)
        n += sizeof(std::uint32_t) + label.size();
    n += N * 2 * sizeof(double);     // POI coordinates
    n += K * ((M * D + 3 * N * D + 1) * sizeof(double));  // patterns
    const std::size_t gate_rows = model.gate.mode == GateMode::global ? K : M * K;
    n += gate_rows * F * sizeof(double);
    return n;
}

std::vector<std::uint8_t> serialize(const ModelParams& model) {
    std::vector<std::uint8_t> out;
    out.reserve(serialized_size(model));
    Writer w(out);

    w.raw(kMagic, 4);
    w.u32(kVersion);
    w.f64(model.K);
    w.f64(model.D);
    w.f64(model.M);
    w.f64(model.N);
    w.f64(model.schema.total_F());
    w.f64(model.gate.mode == GateMode::per_user ? 1.0 : 0.0);
    w.f64(model.lambda_theta);
    w.f64(model.min_distance_km);

    w.f64(model.schema.time_bins);
    w.f64(model.schema.utc_offset_hours);
    w.u64(model.dataset_fingerprint);
    w.u32(static_cast<std::uint32_t>(model.schema.category_labels.size()));
    for (const auto& label : model.schema.category_labels) {
        w.u32(static_cast<std::uint32_t>(label.size()));
        w.raw(label.data(), label.size());
    }

    for (int p = 0; p < model.N; ++p) {
        w.f64(model.poi_lat[p]);
        w.f64(model.poi_lon[p]);
    }

    for (const auto& pat : model.patterns) {
        w.f64s(pat.user_factors);
        w.f64s(pat.next_factors_user);
        w.f64s(pat.next_factors_prev);
        w.f64s(pat.prev_factors);
        w.f64(pat.rho);
    }
    w.f64s(model.gate.alpha);
    return out;
}

ModelParams deserialize(const std::vector<std::uint8_t>& bytes) {
    Reader r(bytes);

    char magic[4];
    r.raw(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("model deserialize: bad magic, not an LBPM file");
    const auto version = r.u32();
    if (version != kVersion)
        throw std::runtime_error("model deserialize: unsupported format version " +
                                 std::to_string(version));

    ModelParams m;
    m.K = count_from_f64(r.f64(), "K");
    m.D = count_from_f64(r.f64(), "D");
    m.M = count_from_f64(r.f64(), "M");
    m.N = count_from_f64(r.f64(), "N");
    const int F = count_from_f64(r.f64(), "F");
    const double mode = r.f64();
    if (mode != 0.0 && mode != 1.0)
        throw std::runtime_error("model deserialize: bad gate mode flag");
    m.gate.mode = mode == 1.0 ? GateMode::per_user : GateMode::global;
    m.lambda_theta = r.f64();
    m.min_distance_km = r.f64();
    if (m.K < 1 || m.D < 1)
        throw std::runtime_error("model deserialize: dimension inconsistency");

    m.schema.time_bins = count_from_f64(r.f64(), "time_bins");
    m.schema.utc_offset_hours = r.f64();
    m.dataset_fingerprint = r.u64();
    const auto n_cat = r.u32();
    for (std::uint32_t c = 0; c < n_cat; ++c) {
        const auto len = r.u32();
        std::string label(len, '\0');
        r.raw(label.data(), len);
        m.schema.category_labels.push_back(std::move(label));
    }
    m.schema.category_slots = static_cast<int>(n_cat);
    if (m.schema.total_F() != F)
        throw std::runtime_error("model deserialize: dimension inconsistency (F)");

    m.poi_lat.resize(m.N);
    m.poi_lon.resize(m.N);
    for (int p = 0; p < m.N; ++p) {
        m.poi_lat[p] = r.f64();
        m.poi_lon[p] = r.f64();
    }

    const auto MD = static_cast<std::size_t>(m.M) * m.D;
    const auto ND = static_cast<std::size_t>(m.N) * m.D;
    m.patterns.resize(m.K);
    for (auto& pat : m.patterns) {
        r.f64s(pat.user_factors, MD);
        r.f64s(pat.next_factors_user, ND);
        r.f64s(pat.next_factors_prev, ND);
        r.f64s(pat.prev_factors, ND);
        pat.rho = r.f64();
    }
    const std::size_t gate_rows =
        m.gate.mode == GateMode::global ? m.K : static_cast<std::size_t>(m.M) * m.K;
    r.f64s(m.gate.alpha, gate_rows * F);
    if (!r.done())
        throw std::runtime_error("model deserialize: trailing bytes after parameters");
    return m;
}

void save_model(const ModelParams& model, const std::string& path) {
    const auto bytes = serialize(model);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open model file for writing: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

ModelParams load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open model file: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

}  // namespace lbp
