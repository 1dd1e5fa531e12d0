#include "sap/reachability.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "sap/util.hpp"

namespace sap {

double failure_margin(const JointState& x, const FailureSpec& spec) {
    // Separation clause: in F when both axes lose separation; the signed
    // margin is the max of the two axis margins.
    const double m_sep = std::max(std::abs(x.px_r) - spec.sep_long,
                                  std::abs(x.py_R - x.py_H) - spec.sep_lat);
    const double m_road = spec.road_half - std::abs(x.py_R);
    return std::min(m_sep, m_road);
}

std::vector<AgentControl> control_lattice(const ControlBounds& b, std::size_t nv, std::size_t na) {
    std::vector<AgentControl> out;
    out.reserve(nv * na);
    for (std::size_t i = 0; i < nv; ++i) {
        double v = nv == 1 ? 0.5 * (b.v_lat_min + b.v_lat_max)
                           : b.v_lat_min + (b.v_lat_max - b.v_lat_min) * double(i) / double(nv - 1);
        for (std::size_t j = 0; j < na; ++j) {
            double a = na == 1 ? 0.5 * (b.a_min + b.a_max)
                               : b.a_min + (b.a_max - b.a_min) * double(j) / double(na - 1);
            out.push_back({v, a});
        }
    }
    return out;
}

namespace {

double worst_case_value(const Grid4& grid, const std::vector<double>& values, const JointState& x,
                        const AgentControl& uR, const std::vector<AgentControl>& uH,
                        const TimeStep& dt) {
    double worst = std::numeric_limits<double>::infinity();
    for (const auto& uh : uH) {
        const JointState next = step_joint(x, uR, uh, dt);
        worst = std::min(worst, grid.interpolate(values, next.vec()));
    }
    return worst;
}

// Margin absorbing off-grid interpolation error. A global Lipschitz bound
// (max gradient x cell diagonal) is far too conservative here -- the road
// clause caps the value at road_half - lane_offset, so that bound empties the
// safe set. Instead, sample the one-sided off-grid Bellman residual: how much
// the interpolated value overestimates one backup at off-grid points. That is
// exactly the error the margin must cover for the shield to be sound.
double estimate_margin(const Grid4& grid, const std::vector<double>& values,
                       const FailureSpec& spec, const std::vector<AgentControl>& uR,
                       const std::vector<AgentControl>& uH, const TimeStep& dt) {
    constexpr std::size_t kSamples = 4096;
    constexpr double kSafetyFactor = 1.25;
    std::uint64_t s = 0x9e3779b97f4a7c15ull;
    auto unit = [&s]() {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        return static_cast<double>(s >> 11) * 0x1.0p-53;
    };
    double worst = 0.0;
    for (std::size_t k = 0; k < kSamples; ++k) {
        Vec4 p;
        for (int d = 0; d < 4; ++d) p(d) = grid.lo[d] + unit() * (grid.hi[d] - grid.lo[d]);
        const JointState x = JointState::from_vec(p);
        const double vi = grid.interpolate(values, p);
        double best = -std::numeric_limits<double>::infinity();
        for (const auto& ur : uR)
            best = std::max(best, worst_case_value(grid, values, x, ur, uH, dt));
        const double vb = std::min(failure_margin(x, spec), best);
        worst = std::max(worst, vi - vb);
    }
    return kSafetyFactor * worst;
}

}  // namespace

SafetyCertificate compute_certificate(const Grid4& grid, const FailureSpec& spec,
                                      const std::vector<AgentControl>& uR,
                                      const std::vector<AgentControl>& uH, const TimeStep& dt,
                                      const CertificateOptions& opts) {
    if (!spec.valid()) throw std::invalid_argument("compute_certificate: invalid failure spec");
    if (uR.empty() || uH.empty())
        throw std::invalid_argument("compute_certificate: empty control lattice");

    const std::size_t npts = grid.size();
    std::vector<double> obstacle(npts), value(npts), next(npts);
    for (std::size_t i = 0; i < npts; ++i)
        obstacle[i] = failure_margin(JointState::from_vec(grid.point(i)), spec);
    value = obstacle;

    SafetyCertificate cert;
    cert.grid = grid;
    cert.uR = uR;
    cert.uH = uH;
    cert.spec = spec;
    cert.dt = dt;

    double residual = std::numeric_limits<double>::infinity();
    std::size_t it = 0;
    for (; it < opts.max_iters && residual > opts.tol; ++it) {
        std::atomic<double> max_delta{0.0};
        parallel_for(
            npts,
            [&](std::size_t i) {
                const JointState x = JointState::from_vec(grid.point(i));
                double best = -std::numeric_limits<double>::infinity();
                for (const auto& ur : uR)
                    best = std::max(best, worst_case_value(grid, value, x, ur, uH, dt));
                const double v = std::min(obstacle[i], best);
                next[i] = v;
                const double d = std::abs(v - value[i]);
                double cur = max_delta.load(std::memory_order_relaxed);
                while (d > cur && !max_delta.compare_exchange_weak(cur, d)) {
                }
            },
            opts.jobs);
        value.swap(next);
        residual = max_delta.load();
    }

    cert.value = std::move(value);
    cert.iterations = it;
    cert.residual = residual;
    cert.converged = residual <= opts.tol;
    cert.margin = estimate_margin(grid, cert.value, spec, uR, uH, dt);

    bool nonempty = false;
    for (std::size_t i = 0; i < npts && !nonempty; ++i)
        if (cert.value[i] >= cert.margin) nonempty = true;
    if (!nonempty)
        throw std::runtime_error("compute_certificate: empty safe set (grid too coarse?)");
    return cert;
}

AgentControl safe_action(const SafetyCertificate& cert, const JointState& x) {
    double best = -std::numeric_limits<double>::infinity();
    const AgentControl* pick = &cert.uR.front();
    for (const auto& ur : cert.uR) {
        const double w = worst_case_value(cert.grid, cert.value, x, ur, cert.uH, cert.dt);
        if (w > best) {
            best = w;
            pick = &ur;
        }
    }
    return *pick;
}

bool in_shielding_set(const SafetyCertificate& cert, const JointState& x, const AgentControl& uR) {
    for (const auto& uh : cert.uH) {
        const JointState next = step_joint(x, uR, uh, cert.dt);
        if (cert.grid.interpolate(cert.value, next.vec()) < cert.margin) return true;
    }
    return false;
}

ShieldResult shield(const SafetyCertificate& cert, const JointState& x,
                    const AgentControl& candidate) {
    ShieldResult r;
    if (!cert.in_safe_set(x)) {
        r.action = safe_action(cert, x);
        r.shielded = true;
        r.out_of_safe_set = true;
        return r;
    }
    if (in_shielding_set(cert, x, candidate)) {
        r.action = safe_action(cert, x);
        r.shielded = true;
    } else {
        r.action = candidate;
    }
    return r;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

nlohmann::json lattice_to_json(const std::vector<AgentControl>& us) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& u : us) j.push_back({u.v_lat, u.a});
    return j;
}

std::vector<AgentControl> lattice_from_json(const nlohmann::json& j) {
    std::vector<AgentControl> us;
    for (const auto& e : j) us.push_back({e.at(0).get<double>(), e.at(1).get<double>()});
    return us;
}

void write_doubles(const std::string& path, const std::vector<double>& v) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> read_doubles(const std::string& path, std::size_t count) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + path);
    std::vector<double> v(count);
    f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(count * sizeof(double)));
    if (!f) throw std::runtime_error("truncated cache file " + path);
    return v;
}

}  // namespace

void save_certificate(const SafetyCertificate& cert, const std::string& path) {
    write_doubles(path, cert.value);
    nlohmann::json j;
    j["kind"] = "safety-certificate";
    j["version"] = 1;
    j["grid"] = {{"lo", cert.grid.lo}, {"hi", cert.grid.hi}, {"n", cert.grid.n}};
    j["spec"] = {{"sep_long", cert.spec.sep_long},
                 {"sep_lat", cert.spec.sep_lat},
                 {"road_half", cert.spec.road_half},
                 {"geometry", cert.spec.geometry}};
    j["dt"] = cert.dt.dt;
    j["margin"] = cert.margin;
    j["iterations"] = cert.iterations;
    j["residual"] = cert.residual;
    j["converged"] = cert.converged;
    j["uR"] = lattice_to_json(cert.uR);
    j["uH"] = lattice_to_json(cert.uH);
    j["hash"] = fnv1a(cert.value.data(), cert.value.size() * sizeof(double));
    std::ofstream f(path + ".json");
    if (!f) throw std::runtime_error("cannot write " + path + ".json");
    f << j.dump(2) << "\n";
}

SafetyCertificate load_certificate(const std::string& path) {
    std::ifstream f(path + ".json");
    if (!f) throw std::runtime_error("missing sidecar " + path + ".json");
    nlohmann::json j;
    f >> j;
    if (j.at("kind") != "safety-certificate")
        throw std::runtime_error("not a safety certificate: " + path);

    SafetyCertificate cert;
    cert.grid = Grid4(j["grid"]["lo"].get<std::array<double, 4>>(),
                      j["grid"]["hi"].get<std::array<double, 4>>(),
                      j["grid"]["n"].get<std::array<std::size_t, 4>>());
    cert.spec.sep_long = j["spec"]["sep_long"];
    cert.spec.sep_lat = j["spec"]["sep_lat"];
    cert.spec.road_half = j["spec"]["road_half"];
    cert.spec.geometry = j["spec"]["geometry"];
    cert.dt.dt = j["dt"];
    cert.margin = j["margin"];
    cert.iterations = j["iterations"];
    cert.residual = j["residual"];
    cert.converged = j["converged"];
    cert.uR = lattice_from_json(j["uR"]);
    cert.uH = lattice_from_json(j["uH"]);
    cert.value = read_doubles(path, cert.grid.size());
    const std::uint64_t h = fnv1a(cert.value.data(), cert.value.size() * sizeof(double));
    if (h != j.at("hash").get<std::uint64_t>())
        throw std::runtime_error("cache hash mismatch for " + path + " (recompute the cache)");
    return cert;
}

}  // namespace sap
