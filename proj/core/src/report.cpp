#include "entryfx/report.hpp"

#include "entryfx/csv.hpp"
#include "entryfx/did_direct.hpp"
#include "entryfx/drdid.hpp"
#include "entryfx/exposure.hpp"
#include "entryfx/inference.hpp"
#include "entryfx/sensitivity.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace entryfx::report {

namespace fs = std::filesystem;

namespace {

std::string num(double v) {
    if (!std::isfinite(v)) return "NA";
    auto s = fmt::format("{:.3f}", v);
    return s == "-0.000" ? "0.000" : s;
}

std::string with_se(double est, double se) { return fmt::format("{} ({})", num(est), num(se)); }

/// Markdown table builder.
class Md {
public:
    explicit Md(std::vector<std::string> header) : header_(std::move(header)) {}
    void row(std::vector<std::string> cells) { rows_.push_back(std::move(cells)); }
    std::string str() const {
        auto line = [](const std::vector<std::string>& cells) {
            std::string s = "|";
            for (const auto& c : cells) s += " " + c + " |";
            return s + "\n";
        };
        std::string out = line(header_);
        out += "|";
        for (std::size_t i = 0; i < header_.size(); ++i) out += " --- |";
        out += "\n";
        for (const auto& r : rows_) out += line(r);
        return out;
    }

private:
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

template <typename F>
auto load(const fs::path& path, F&& reader) -> decltype(reader(path)) {
    if (!fs::exists(path)) return {};
    return reader(path);
}

std::string channel_label(exposure::Channel ch) {
    switch (ch) {
    case exposure::Channel::same_industry_neighbor:
        return "Same-industry neighbors";
    case exposure::Channel::within_muni_cross_industry:
        return "Within-municipality cross-industry";
    case exposure::Channel::neighbor_all_industries:
        return "Neighbor all-industries";
    }
    return "";
}

std::string event_paths(const std::vector<direct::EventStudyPath>& paths) {
    std::string out = "## Event-study paths (balanced window)\n\n";
    std::set<std::string> outcomes;
    for (const auto& p : paths) outcomes.insert(p.outcome);
    if (outcomes.empty()) return out + Md({"ell", "CS ATT (SE)", "CS band", "BJS ATT (SE)", "BJS band"}).str() + "\n";
    for (const auto& outcome : outcomes) {
        const direct::EventStudyPath* cs = nullptr;
        const direct::EventStudyPath* bjs = nullptr;
        for (const auto& p : paths) {
            if (p.outcome != outcome || p.mode != direct::Mode::balanced) continue;
            if (p.estimator == "cs") cs = &p;
            if (p.estimator == "bjs") bjs = &p;
        }
        Md t({"ell", "CS ATT (SE)", "CS band", "BJS ATT (SE)", "BJS band"});
        std::set<int> ells;
        for (const auto* p : {cs, bjs}) {
            if (!p) continue;
            for (const auto& pt : p->points) ells.insert(pt.ell);
        }
        for (int ell : ells) {
            std::vector<std::string> cells = {std::to_string(ell)};
            for (const auto* p : {cs, bjs}) {
                const auto* pt = p ? p->find(ell) : nullptr;
                if (!pt || !pt->available) {
                    cells.insert(cells.end(), {"", ""});
                } else if (pt->reference) {
                    cells.insert(cells.end(), {"ref", ""});
                } else {
                    cells.push_back(with_se(pt->att, pt->se));
                    cells.push_back(fmt::format("[{}, {}]", num(pt->band_lo), num(pt->band_hi)));
                }
            }
            t.row(cells);
        }
        out += fmt::format("### {}\n\n{}\n", outcome, t.str());
    }
    return out;
}

std::string cumulative(const std::vector<direct::CumulativeRow>& rows) {
    Md t({"Outcome", "Slice", "CS ATT", "CS SE", "CS 95% CI", "BJS ATT", "BJS SE", "BJS 95% CI"});
    std::map<std::pair<std::string, std::string>, std::map<std::string, direct::CumulativeSlice>> grid;
    std::vector<std::pair<std::string, std::string>> order;
    for (const auto& r : rows) {
        if (r.mode != direct::Mode::balanced) continue;
        const std::pair key{r.outcome, r.slice.slice.label()};
        if (!grid.count(key)) order.push_back(key);
        grid[key][r.estimator] = r.slice;
    }
    for (const auto& key : order) {
        std::vector<std::string> cells = {key.first, key.second};
        for (const char* est : {"cs", "bjs"}) {
            const auto it = grid[key].find(est);
            if (it == grid[key].end()) {
                cells.insert(cells.end(), {"", "", ""});
                continue;
            }
            const auto& s = it->second;
            cells.push_back(num(s.value));
            cells.push_back(num(s.se));
            cells.push_back(fmt::format("[{}, {}]", num(s.ci_lo), num(s.ci_hi)));
        }
        t.row(cells);
    }
    return "## Cumulative slice effects\n\n" + t.str() + "\n";
}

using SeLookup = std::map<std::tuple<std::string, std::string, std::string>, double>;  // (id, parameter, method)

std::string drdid_grid(const std::vector<drdid::SliceRecord>& slices, const SeLookup& se,
                       const std::map<std::string, std::string>& selected) {
    std::string out = "## DR-DiD slice grid\n\nCells show estimate (SE); the SE follows the method selected by the "
                      "spatial diagnostic for the model.\n\n";
    std::map<std::string, std::vector<std::string>> slice_order;
    std::map<std::tuple<std::string, std::string, std::string>, double> est;
    std::vector<std::string> outcomes;
    for (const auto& r : slices) {
        if (!slice_order.count(r.outcome)) outcomes.push_back(r.outcome);
        auto& order = slice_order[r.outcome];
        if (std::find(order.begin(), order.end(), r.slice) == order.end()) order.push_back(r.slice);
        est[{r.outcome, r.slice, r.parameter}] = r.estimate;
    }
    std::vector<std::string> header = {"Slice"};
    for (const auto* p : drdid::kParameters) header.emplace_back(p);
    header.emplace_back("SE method");
    if (outcomes.empty()) return out + Md(header).str() + "\n";
    for (const auto& outcome : outcomes) {
        Md t(header);
        for (const auto& slice : slice_order[outcome]) {
            const auto id = fmt::format("drdid:{}:{}", outcome, slice);
            const auto sel = selected.count(id) ? selected.at(id) : std::string("cluster");
            std::vector<std::string> cells = {slice};
            for (const auto* p : drdid::kParameters) {
                const auto e = est.find({outcome, slice, p});
                if (e == est.end()) {
                    cells.emplace_back("");
                    continue;
                }
                auto s = se.find({id, p, sel});
                if (s == se.end()) s = se.find({id, p, "cluster"});
                cells.push_back(s == se.end() ? num(e->second) : with_se(e->second, s->second));
            }
            cells.push_back(sel);
            t.row(cells);
        }
        out += fmt::format("### {}\n\n{}\n", outcome, t.str());
    }
    return out;
}

std::string inference_comparison(const std::vector<inference::InferenceRecord>& records) {
    Md t({"Outcome", "Slice", "Parameter", "Estimate", "SE (cluster)", "SE (two-way)", "SE (SHAC)", "SE (SCPC)"});
    std::map<std::pair<std::string, std::string>, std::map<std::string, double>> se;
    std::map<std::pair<std::string, std::string>, double> est;
    std::vector<std::pair<std::string, std::string>> order;
    for (const auto& r : records) {
        if (r.parameter != "DATT" && r.parameter != "SATT" && r.parameter != "TATT") continue;
        const std::pair key{r.estimate_id, r.parameter};
        if (!est.count(key)) order.push_back(key);
        est[key] = r.estimate;
        se[key][r.method] = r.se;
    }
    for (const auto& key : order) {
        // estimate ids are "drdid:<outcome>:<slice>"
        const auto& id = key.first;
        const auto a = id.find(':');
        const auto b = id.rfind(':');
        std::vector<std::string> cells = {id.substr(a + 1, b - a - 1), id.substr(b + 1), key.second, num(est[key])};
        for (const char* m : {"cluster", "twoway", "shac", "scpc"}) {
            const auto it = se[key].find(m);
            cells.push_back(it == se[key].end() ? "" : num(it->second));
        }
        t.row(cells);
    }
    return "## Inference comparison\n\n" + t.str() + "\n";
}

std::string overlap(const std::vector<exposure::OverlapRow>& rows) {
    Md t({"Slice", "Channel", "Obs (raw)", "Obs (trimmed)", "% trimmed"});
    for (const auto& r : rows) {
        t.row({r.slice.label(), channel_label(r.channel), std::to_string(r.raw), std::to_string(r.kept),
               fmt::format("{:.1f}", r.pct_trimmed)});
    }
    return "## Overlap and trimming\n\n" + t.str() + "\n";
}

std::string heterogeneity(const std::vector<sensitivity::HeterogeneityRow>& rows) {
    Md t({"Outcome", "Slice", "Variable", "Level", "Parameter", "Estimate (SE)", "BH q", "BY q"});
    for (const auto& r : rows) {
        if (r.parameter == "TATT") continue;
        if (!r.available) {
            t.row({r.outcome, r.slice, r.variable, r.level, r.parameter, "unavailable", "", ""});
            continue;
        }
        t.row({r.outcome, r.slice, r.variable, r.level, r.parameter, with_se(r.estimate, r.se), num(r.bh), num(r.by)});
    }
    return "## Heterogeneity\n\n" + t.str() + "\n";
}

std::string moran(const std::vector<sensitivity::MoranTrigger>& rows) {
    Md t({"Model", "Moran's I (pooled)", "Permutation p", "Share of significant quarters", "Selected SE"});
    for (const auto& r : rows) {
        t.row({r.model, num(r.statistic), num(r.p_value), num(r.share_significant), r.selected});
    }
    return "## Spatial diagnostics\n\n" + t.str() + "\n";
}

std::string honest(const fs::path& path) {
    Md t({"Outcome", "Target", "M", "Lower", "Upper", "Consistent"});
    if (fs::exists(path)) {
        const auto tab = csv::read(path);
        for (std::size_t r = 0; r < tab.rows(); ++r) {
            t.row({tab.cell(r, "outcome"), tab.cell(r, "target"), tab.cell(r, "M"),
                   num(csv::parse_double(tab.cell(r, "lo"), "lo")), num(csv::parse_double(tab.cell(r, "hi"), "hi")),
                   tab.cell(r, "consistent") == "1" ? "yes" : "no"});
        }
    }
    return "## Smoothness-restricted bounds\n\n" + t.str() + "\n";
}

}  // namespace

std::string render(const fs::path& dir) {
    const auto paths = load(dir / "es_path.csv", direct::read_paths);
    const auto cum = load(dir / "cumulative.csv", direct::read_cumulative);
    const auto slices = load(dir / "drdid_slices.csv", drdid::read_slices);
    const auto inf = load(dir / "inference.csv", inference::read_inference);
    const auto ovl = load(dir / "overlap.csv", exposure::read_overlap);
    const auto het = load(dir / "heterogeneity.csv", sensitivity::read_heterogeneity);
    const auto mor = load(dir / "moran.csv", sensitivity::read_moran);

    SeLookup se;
    for (const auto& r : inf) se[{r.estimate_id, r.parameter, r.method}] = r.se;
    std::map<std::string, std::string> selected;
    for (const auto& m : mor) selected[m.model] = m.selected;

    std::string out = "# Entry effects report\n\n";
    out += event_paths(paths);
    out += cumulative(cum);
    out += drdid_grid(slices, se, selected);
    out += inference_comparison(inf);
    out += overlap(ovl);
    out += heterogeneity(het);
    out += moran(mor);
    out += honest(dir / "honest_bounds.csv");
    return out;
}

}  // namespace entryfx::report
