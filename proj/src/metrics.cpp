#include "mf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace mf {

namespace {

void check_distribution(const std::vector<double>& p, const char* who) {
    long double s = 0.0L;
    for (double v : p) {
        if (v < 0.0 || !std::isfinite(v)) throw InputError(std::string(who) + ": negative or non-finite mass");
        s += v;
    }
    if (std::fabs(static_cast<double>(s) - 1.0) > 1e-6)
        throw InputError(std::string(who) + ": distribution sums to " + format_double(static_cast<double>(s)));
}

void check_pair(const std::vector<double>& p, const std::vector<double>& q, const char* who) {
    if (p.size() != q.size()) throw InputError(std::string(who) + ": mismatched supports");
    if (p.empty()) throw InputError(std::string(who) + ": empty support");
    check_distribution(p, who);
    check_distribution(q, who);
}

const DistributionTable* find_table(const std::vector<DistributionTable>& tables, const std::string& attribute) {
    for (const auto& t : tables)
        if (t.attribute == attribute) return &t;
    return nullptr;
}

const DistributionTable& need_table(const std::vector<DistributionTable>& tables, const std::string& attribute,
                                    const char* source) {
    const auto* t = find_table(tables, attribute);
    if (!t) throw InputError(std::string("missing ") + source + " table for attribute '" + attribute + "'");
    return *t;
}

std::vector<double> cell_errors(const DistributionTable& est, const DistributionTable& survey) {
    std::vector<double> out;
    for (std::size_t o = 0; o < est.parties.size(); ++o) {
        const auto& s = survey.row(est.parties[o]);
        for (std::size_t g = 0; g < est.categories.size(); ++g) out.push_back(std::fabs(est.rows[o][g] - s[g]));
    }
    return out;
}

}  // namespace

double js_distance(const std::vector<double>& p, const std::vector<double>& q) {
    check_pair(p, q, "js_distance");
    long double div = 0.0L;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const long double m = 0.5L * (static_cast<long double>(p[i]) + q[i]);
        if (p[i] > 0.0) div += 0.5L * p[i] * std::log2(p[i] / m);
        if (q[i] > 0.0) div += 0.5L * q[i] * std::log2(q[i] / m);
    }
    return std::sqrt(std::clamp(static_cast<double>(div), 0.0, 1.0));
}

double wasserstein_distance(const std::vector<double>& p, const std::vector<double>& q) {
    check_pair(p, q, "wasserstein_distance");
    long double cp = 0.0L, cq = 0.0L, w = 0.0L;
    for (std::size_t i = 0; i + 1 < p.size(); ++i) {
        cp += p[i];
        cq += q[i];
        w += std::fabs(cp - cq);
    }
    return static_cast<double>(w);
}

double normalized_entropy(const std::vector<double>& p) {
    if (p.size() < 2) throw InputError("normalized_entropy: support must have at least 2 categories");
    check_distribution(p, "normalized_entropy");
    long double h = 0.0L;
    for (double v : p)
        if (v > 0.0) h -= static_cast<long double>(v) * std::log(static_cast<long double>(v));
    const long double e = h / std::log(static_cast<long double>(p.size()));
    return std::clamp(static_cast<double>(e), 0.0, 1.0);
}

std::string to_string(Metric m) { return m == Metric::js ? "js" : "wasserstein"; }

std::vector<DistanceRecord> distance_delta(const std::vector<DistributionTable>& latent,
                                           const std::vector<DistributionTable>& prob,
                                           const std::vector<DistributionTable>& survey, const CountryConfig& config,
                                           const std::string& model_tag, const std::string& country) {
    std::vector<DistanceRecord> out;
    for (const auto& schema : config.attributes) {
        const auto* lt = find_table(latent, schema.name);
        const auto* pt = find_table(prob, schema.name);
        const auto* st = find_table(survey, schema.name);
        if (!lt && !pt && !st) continue;
        if (!lt || !pt || !st) throw InputError("distance_delta: attribute '" + schema.name + "' is missing a source");
        const Metric metric = schema.scale == Scale::ordinal ? Metric::wasserstein : Metric::js;
        for (const auto& party : config.party_names()) {
            if (std::find(lt->parties.begin(), lt->parties.end(), party) == lt->parties.end()) {
                log_warn("distance_delta: no latent row for '" + party + "' in '" + schema.name + "'; skipped");
                continue;
            }
            const auto& l = lt->row(party);
            const auto& p = pt->row(party);
            const auto& s = st->row(party);
            DistanceRecord r{model_tag, country, schema.name, party, metric, 0.0, 0.0, 0.0};
            if (metric == Metric::js) {
                r.d_latent = js_distance(l, s);
                r.d_prob = js_distance(p, s);
            } else {
                r.d_latent = wasserstein_distance(l, s);
                r.d_prob = wasserstein_distance(p, s);
            }
            r.delta = r.d_prob - r.d_latent;
            out.push_back(r);
        }
    }
    return out;
}

std::vector<WinRate> win_rates(const std::vector<DistanceRecord>& records, const std::vector<std::string>& group_by) {
    auto field = [](const DistanceRecord& r, const std::string& name) -> std::string {
        if (name == "model") return r.model_tag;
        if (name == "country") return r.country;
        if (name == "party") return r.party;
        if (name == "attribute") return r.attribute;
        if (name == "metric") return to_string(r.metric);
        throw InputError("win_rates: unknown group field '" + name + "'");
    };
    std::map<std::vector<std::string>, std::pair<std::size_t, std::size_t>> groups;
    std::vector<std::vector<std::string>> order;
    for (const auto& r : records) {
        std::vector<std::string> key;
        for (const auto& g : group_by) key.push_back(field(r, g));
        auto [it, inserted] = groups.try_emplace(key, 0, 0);
        if (inserted) order.push_back(key);
        if (r.delta > 0.0) ++it->second.first;
        ++it->second.second;
    }
    std::vector<WinRate> out;
    for (const auto& key : order) {
        const auto& [wins, total] = groups[key];
        out.push_back({key, wins, total, static_cast<double>(wins) / static_cast<double>(total)});
    }
    return out;
}

GateReport entropy_gate(const std::vector<DistributionTable>& latent, const std::vector<DistributionTable>& prob,
                        const std::vector<DistributionTable>& survey, double threshold, const std::string& model_tag) {
    GateReport rep;
    rep.threshold = threshold;
    for (const auto& pt : prob) {
        const auto& lt = need_table(latent, pt.attribute, "latent");
        const auto& st = need_table(survey, pt.attribute, "survey");
        DistributionTable combined = pt;
        std::size_t gated = 0;
        for (std::size_t o = 0; o < pt.parties.size(); ++o) {
            const double h = normalized_entropy(pt.rows[o]);
            const bool has_latent = std::find(lt.parties.begin(), lt.parties.end(), pt.parties[o]) != lt.parties.end();
            const bool g = h > threshold && has_latent;
            rep.rows.push_back({pt.attribute, pt.parties[o], h, g});
            if (!g) continue;
            ++gated;
            combined.rows[o] = lt.row(pt.parties[o]);
        }
        rep.substitutions += gated;
        if (gated > 0) {
            auto ep = cell_errors(pt, st);
            auto ec = cell_errors(combined, st);
            std::vector<double> diff(ep.size());
            for (std::size_t i = 0; i < ep.size(); ++i) diff[i] = ec[i] - ep[i];
            GateSummary s;
            s.attribute = pt.attribute;
            s.model_tag = model_tag;
            s.gated_rows = gated;
            s.median_error_prob = median(ep);
            s.median_error_combined = median(ec);
            s.median_error_change = s.median_error_combined - s.median_error_prob;
            s.median_cell_change = median(diff);
            rep.summaries.push_back(s);
        }
        rep.combined.push_back(std::move(combined));
    }
    return rep;
}

JointTable joint_from_conditional(const DistributionTable& table, const std::vector<double>& party_share) {
    if (party_share.size() != table.parties.size()) throw InputError("joint_from_conditional: party share size mismatch");
    JointTable j{table.parties, table.categories, table.rows};
    for (std::size_t o = 0; o < j.parties.size(); ++o)
        for (double& v : j.mass[o]) v *= party_share[o];
    return j;
}

std::vector<double> survey_party_shares(const CsvTable& survey, const std::vector<std::string>& parties) {
    const int cp = survey.column("party"), cw = survey.column("weight");
    if (cp < 0 || cw < 0) throw InputError("survey: expected 'party' and 'weight' columns");
    std::vector<double> w(parties.size(), 0.0);
    for (const auto& row : survey.rows) {
        auto it = std::find(parties.begin(), parties.end(), row[cp]);
        if (it == parties.end()) continue;
        w[static_cast<std::size_t>(it - parties.begin())] += std::stod(row[cw]);
    }
    double s = 0.0;
    for (double v : w) s += v;
    if (s <= 0.0) throw InputError("survey: no weight on the party set");
    for (double& v : w) v /= s;
    return w;
}

ShareErrors conditional_share_error(const JointTable& estimate, const JointTable& survey, Conditional direction) {
    if (estimate.parties != survey.parties || estimate.categories != survey.categories)
        throw InputError("conditional_share_error: tables cover different cells");
    const std::size_t P = estimate.parties.size(), G = estimate.categories.size();
    auto conditional = [&](const JointTable& j, const char* who) {
        std::vector<std::vector<double>> c = j.mass;
        if (direction == Conditional::category_given_party) {
            for (std::size_t o = 0; o < P; ++o) {
                double s = 0.0;
                for (double v : c[o]) s += v;
                if (s <= 0.0) throw InputError(std::string(who) + ": party '" + j.parties[o] + "' has zero mass");
                for (double& v : c[o]) v /= s;
            }
        } else {
            for (std::size_t g = 0; g < G; ++g) {
                double s = 0.0;
                for (std::size_t o = 0; o < P; ++o) s += c[o][g];
                if (s <= 0.0) throw InputError(std::string(who) + ": category '" + j.categories[g] + "' has zero mass");
                for (std::size_t o = 0; o < P; ++o) c[o][g] /= s;
            }
        }
        return c;
    };
    auto ce = conditional(estimate, "estimate");
    auto cs = conditional(survey, "survey");
    ShareErrors out;
    out.parties = estimate.parties;
    out.categories = estimate.categories;
    out.error.assign(P, std::vector<double>(G, 0.0));
    std::vector<double> all;
    for (std::size_t o = 0; o < P; ++o) {
        for (std::size_t g = 0; g < G; ++g) {
            out.error[o][g] = std::fabs(ce[o][g] - cs[o][g]);
            all.push_back(out.error[o][g]);
        }
        out.party_median.push_back(median(out.error[o]));
    }
    out.median = median(all);
    return out;
}

LinearFit fit_delta_entropy(const std::vector<double>& deltas, const std::vector<double>& entropies) {
    if (deltas.size() != entropies.size()) throw InputError("fit_delta_entropy: size mismatch");
    std::vector<double> x, y;
    for (std::size_t i = 0; i < deltas.size(); ++i) {
        if (deltas[i] > 0.0) {
            x.push_back(entropies[i]);
            y.push_back(deltas[i]);
        }
    }
    if (x.size() < 3) throw InputError("fit_delta_entropy: need at least 3 points with delta > 0");
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0) throw InputError("fit_delta_entropy: entropy has zero variance");
    LinearFit f;
    f.n = x.size();
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    f.r = syy == 0.0 ? 0.0 : sxy / std::sqrt(sxx * syy);
    return f;
}

std::string distance_records_csv(const std::vector<DistanceRecord>& records) {
    std::string out = "model,country,attribute,party,metric,d_latent,d_prob,delta\n";
    for (const auto& r : records)
        out += csv_line({r.model_tag, r.country, r.attribute, r.party, to_string(r.metric), format_double(r.d_latent),
                         format_double(r.d_prob), format_double(r.delta)});
    return out;
}

std::string win_rates_csv(const std::vector<WinRate>& rates, const std::vector<std::string>& group_by) {
    std::vector<std::string> header = group_by;
    header.insert(header.end(), {"wins", "total", "win_rate"});
    std::string out = csv_line(header);
    for (const auto& w : rates) {
        std::vector<std::string> f = w.key;
        f.insert(f.end(), {std::to_string(w.wins), std::to_string(w.total), format_double(w.rate)});
        out += csv_line(f);
    }
    return out;
}

std::string gate_rows_csv(const GateReport& report) {
    std::string out = "attribute,party,normalized_entropy,gated\n";
    for (const auto& r : report.rows)
        out += csv_line({r.attribute, r.party, format_double(r.entropy), r.gated ? "1" : "0"});
    return out;
}

std::string gate_summary_csv(const GateReport& report) {
    std::string out =
        "model,attribute,threshold,gated_rows,median_error_prob,median_error_combined,median_error_change,"
        "median_cell_change\n";
    for (const auto& s : report.summaries)
        out += csv_line({s.model_tag, s.attribute, format_double(report.threshold), std::to_string(s.gated_rows),
                         format_double(s.median_error_prob), format_double(s.median_error_combined),
                         format_double(s.median_error_change), format_double(s.median_cell_change)});
    return out;
}

std::string share_errors_csv(const std::string& source, const std::string& attribute, const ShareErrors& e) {
    std::string out;
    for (std::size_t o = 0; o < e.parties.size(); ++o)
        for (std::size_t g = 0; g < e.categories.size(); ++g)
            out += csv_line({source, attribute, e.parties[o], e.categories[g], format_double(e.error[o][g])});
    return out;
}

std::string win_rate_svg(const std::vector<DistanceRecord>& records, const std::string& title) {
    std::vector<std::string> attrs, parties;
    for (const auto& r : records) {
        if (std::find(attrs.begin(), attrs.end(), r.attribute) == attrs.end()) attrs.push_back(r.attribute);
        if (std::find(parties.begin(), parties.end(), r.party) == parties.end()) parties.push_back(r.party);
    }
    auto rates = win_rates(records, {"attribute", "party"});
    std::map<std::pair<std::string, std::string>, double> rate;
    for (const auto& w : rates) rate[{w.key[0], w.key[1]}] = w.rate;

    const int left = 60, top = 40, plot_h = 240, group_w = std::max<int>(40, 18 * static_cast<int>(parties.size()) + 16);
    const int width = left + group_w * static_cast<int>(std::max<std::size_t>(attrs.size(), 1)) + 140;
    const int height = top + plot_h + 90;
    static const char* palette[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3",
                                    "#937860", "#da8bc3", "#8c8c8c", "#ccb974", "#64b5cd"};
    auto esc = [](const std::string& s) {
        std::string o;
        for (char c : s) {
            if (c == '<') o += "&lt;";
            else if (c == '>') o += "&gt;";
            else if (c == '&') o += "&amp;";
            else o += c;
        }
        return o;
    };
    auto num = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.1f", v);
        return std::string(buf);
    };
    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) + "\" height=\"" +
                    std::to_string(height) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    s += "<text x=\"" + std::to_string(left) + "\" y=\"20\" font-size=\"14\">" + esc(title) + "</text>\n";
    for (int t = 0; t <= 4; ++t) {
        const double y = top + plot_h - plot_h * t / 4.0;
        s += "<line x1=\"" + std::to_string(left) + "\" x2=\"" + std::to_string(width - 140) + "\" y1=\"" + num(y) +
             "\" y2=\"" + num(y) + "\" stroke=\"#ddd\"/>\n";
        s += "<text x=\"" + std::to_string(left - 8) + "\" y=\"" + num(y + 4) + "\" text-anchor=\"end\">" +
             num(t * 0.25).substr(0, 4) + "</text>\n";
    }
    for (std::size_t a = 0; a < attrs.size(); ++a) {
        const int gx = left + group_w * static_cast<int>(a) + 8;
        for (std::size_t p = 0; p < parties.size(); ++p) {
            auto it = rate.find({attrs[a], parties[p]});
            if (it == rate.end()) continue;
            const double h = plot_h * it->second;
            s += "<rect x=\"" + std::to_string(gx + 18 * static_cast<int>(p)) + "\" y=\"" + num(top + plot_h - h) +
                 "\" width=\"16\" height=\"" + num(h) + "\" fill=\"" + palette[p % 10] + "\"/>\n";
        }
        s += "<text x=\"" + std::to_string(gx) + "\" y=\"" + std::to_string(top + plot_h + 16) +
             "\" transform=\"rotate(30 " + std::to_string(gx) + " " + std::to_string(top + plot_h + 16) + ")\">" +
             esc(attrs[a]) + "</text>\n";
    }
    for (std::size_t p = 0; p < parties.size(); ++p) {
        const int y = top + 14 * static_cast<int>(p);
        s += "<rect x=\"" + std::to_string(width - 130) + "\" y=\"" + std::to_string(y) +
             "\" width=\"10\" height=\"10\" fill=\"" + palette[p % 10] + "\"/>\n";
        s += "<text x=\"" + std::to_string(width - 115) + "\" y=\"" + std::to_string(y + 9) + "\">" + esc(parties[p]) +
             "</text>\n";
    }
    s += "<text x=\"14\" y=\"" + std::to_string(top + plot_h / 2) + "\" transform=\"rotate(-90 14 " +
         std::to_string(top + plot_h / 2) + ")\" text-anchor=\"middle\">win-rate</text>\n";
    s += "</svg>\n";
    return s;
}

}  // namespace mf
