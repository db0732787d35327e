#include "ilora/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>

#include <json.hpp>

namespace ilora {

EvalReport evaluate(ToyLM& lm, AdapterSet& ad, const SeqRecModel& sr, const Vocab& v,
                    const ItemCatalog& catalog, const std::vector<InstructionPair>& pairs,
                    std::size_t max_new) {
    EvalReport report;
    report.n_eval = pairs.size();
    std::size_t hits = 0, valid = 0;
    for (const auto& pair : pairs) {
        EvalRecord rec;
        rec.user = pair.user;
        rec.generated = greedy_decode(lm, ad, sr, v, pair, max_new);
        const std::string norm = normalize_text(rec.generated);
        for (int cand : pair.candidates.items) {
            if (norm == normalize_text(catalog.title(cand))) {
                rec.matched = cand;
                break;
            }
        }
        rec.correct = rec.matched == pair.truth;
        hits += rec.correct;
        valid += rec.matched >= 0;
        report.records.push_back(std::move(rec));
    }
    if (report.n_eval) {
        report.hit_ratio_1 = static_cast<double>(hits) / report.n_eval;
        report.valid_ratio = static_cast<double>(valid) / report.n_eval;
    }
    return report;
}

std::string eval_report_json(const EvalReport& report) {
    nlohmann::ordered_json j;
    j["hit_ratio_1"] = report.hit_ratio_1;
    j["valid_ratio"] = report.valid_ratio;
    j["n_eval"] = report.n_eval;
    j["records"] = nlohmann::json::array();
    for (const auto& r : report.records) {
        nlohmann::ordered_json rec;
        rec["user"] = r.user;
        rec["generated"] = r.generated;
        rec["matched"] = r.matched;
        rec["correct"] = r.correct;
        j["records"].push_back(std::move(rec));
    }
    return j.dump(2);
}

namespace {

void flatten_into(std::vector<double>& out, const Matrix& m) {
    out.insert(out.end(), m.data.begin(), m.data.end());
}

}  // namespace

std::vector<GradientRecord> capture_grads(ToyLM& lm, AdapterSet& ad,
                                          const SeqRecModel& sr, const Vocab& v,
                                          const std::vector<InstructionPair>& pairs,
                                          std::size_t step) {
    auto trainable = ad.trainable();
    std::vector<const Param*> before(trainable.begin(), trainable.end());
    const std::uint64_t sum_before = params_checksum(before);

    std::vector<GradientRecord> out;
    for (const auto& pair : pairs) {
        Tape t;
        auto loss = lm_loss(t, lm, ad, sr, v, pair, ad.mode);
        t.backward(loss);

        for (const char* side : {"q", "v"}) {
            const bool is_q = side[0] == 'q';
            std::vector<double> mean;
            std::size_t layers = 0;
            auto absorb = [&](const std::vector<double>& vec) {
                if (mean.empty()) mean.assign(vec.size(), 0.0);
                if (mean.size() != vec.size())
                    throw std::logic_error("capture_grads: module length mismatch");
                for (std::size_t i = 0; i < vec.size(); ++i) mean[i] += vec[i];
                ++layers;
            };
            if (ad.mode == TuneMode::uniform_lora) {
                for (auto& a : is_q ? ad.uniform_q : ad.uniform_v) {
                    std::vector<double> vec;
                    flatten_into(vec, a.a.grad);
                    flatten_into(vec, a.b.grad);
                    absorb(vec);
                }
            } else if (ad.mode == TuneMode::ilora) {
                for (auto& bank : is_q ? ad.bank_q : ad.bank_v) {
                    std::vector<double> vec;
                    for (auto& e : bank.experts) {
                        flatten_into(vec, e.a.grad);
                        flatten_into(vec, e.b.grad);
                    }
                    absorb(vec);
                }
            }
            if (!layers) continue;
            for (auto& x : mean) {
                x /= static_cast<double>(layers);
                if (!std::isfinite(x))
                    throw std::runtime_error("capture_grads: non-finite gradient");
            }
            out.push_back({step, side, pair.user, std::move(mean)});
        }
        for (Param* p : trainable) p->zero_grad();
    }
    if (params_checksum(before) != sum_before)
        throw std::logic_error("capture_grads: gradient pass mutated weights");
    return out;
}

ClusterAssignment cluster_sequences(const Matrix& embeddings, std::size_t c, Rng& rng) {
    const std::size_t n = embeddings.rows, d = embeddings.cols;
    if (c < 1 || c > n)
        throw std::invalid_argument("cluster_sequences: c=" + std::to_string(c) +
                                    " outside 1.." + std::to_string(n));
    auto dist2 = [&](std::size_t i, const Matrix& cent, std::size_t k) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double diff = embeddings.at(i, j) - cent.at(k, j);
            s += diff * diff;
        }
        return s;
    };

    // k-means++ seeding
    Matrix cent(c, d);
    std::vector<double> best(n, std::numeric_limits<double>::infinity());
    std::size_t first = rng.next_below(n);
    for (std::size_t j = 0; j < d; ++j) cent.at(0, j) = embeddings.at(first, j);
    for (std::size_t k = 1; k < c; ++k) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            best[i] = std::min(best[i], dist2(i, cent, k - 1));
            total += best[i];
        }
        std::size_t pick = 0;
        if (total > 0.0) {
            double target = rng.next_double() * total, run = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                run += best[i];
                if (run >= target) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = rng.next_below(n);
        }
        for (std::size_t j = 0; j < d; ++j) cent.at(k, j) = embeddings.at(pick, j);
    }

    ClusterAssignment out;
    out.cluster.assign(n, 0);
    for (int iter = 0; iter < 100; ++iter) {
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t bk = 0;
            double bd = dist2(i, cent, 0);
            for (std::size_t k = 1; k < c; ++k) {
                const double dd = dist2(i, cent, k);
                if (dd < bd) bd = dd, bk = k;
            }
            out.cluster[i] = bk;
        }
        Matrix next(c, d);
        std::vector<std::size_t> count(c, 0);
        for (std::size_t i = 0; i < n; ++i) {
            ++count[out.cluster[i]];
            for (std::size_t j = 0; j < d; ++j)
                next.at(out.cluster[i], j) += embeddings.at(i, j);
        }
        for (std::size_t k = 0; k < c; ++k) {
            if (count[k] == 0) {
                // revive on the point farthest from its centroid
                std::size_t far = 0;
                double fd = -1.0;
                for (std::size_t i = 0; i < n; ++i) {
                    const double dd = dist2(i, cent, out.cluster[i]);
                    if (dd > fd) fd = dd, far = i;
                }
                for (std::size_t j = 0; j < d; ++j)
                    next.at(k, j) = embeddings.at(far, j);
                count[k] = 1;
                out.cluster[far] = k;
            } else {
                for (std::size_t j = 0; j < d; ++j)
                    next.at(k, j) /= static_cast<double>(count[k]);
            }
        }
        double shift = 0.0;
        for (std::size_t i = 0; i < cent.data.size(); ++i)
            shift += std::abs(next.data[i] - cent.data[i]);
        cent = std::move(next);
        if (shift < 1e-6) break;
    }
    // final assignment against the converged centroids
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t bk = 0;
        double bd = dist2(i, cent, 0);
        for (std::size_t k = 1; k < c; ++k) {
            const double dd = dist2(i, cent, k);
            if (dd < bd) bd = dd, bk = k;
        }
        out.cluster[i] = bk;
    }
    out.centroids = std::move(cent);

    // average-linkage agglomeration over centroids; leaf order becomes the
    // display permutation so near clusters sit adjacently
    struct Group {
        std::vector<std::size_t> members;
    };
    std::vector<Group> groups(c);
    for (std::size_t k = 0; k < c; ++k) groups[k].members = {k};
    auto cdist = [&](std::size_t a, std::size_t b) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double diff = out.centroids.at(a, j) - out.centroids.at(b, j);
            s += diff * diff;
        }
        return std::sqrt(s);
    };
    while (groups.size() > 1) {
        std::size_t bi = 0, bj = 1;
        double bd = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < groups.size(); ++i) {
            for (std::size_t j = i + 1; j < groups.size(); ++j) {
                double s = 0.0;
                for (std::size_t a : groups[i].members)
                    for (std::size_t b : groups[j].members) s += cdist(a, b);
                s /= static_cast<double>(groups[i].members.size() *
                                         groups[j].members.size());
                if (s < bd) bd = s, bi = i, bj = j;
            }
        }
        groups[bi].members.insert(groups[bi].members.end(), groups[bj].members.begin(),
                                  groups[bj].members.end());
        groups.erase(groups.begin() + static_cast<std::ptrdiff_t>(bj));
    }
    out.display_order = groups[0].members;
    return out;
}

double cluster_purity(const ClusterAssignment& a, const std::vector<std::size_t>& truth) {
    if (a.cluster.size() != truth.size())
        throw std::invalid_argument("cluster_purity: size mismatch");
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> tally;
    for (std::size_t i = 0; i < truth.size(); ++i)
        ++tally[{a.cluster[i], truth[i]}];
    std::map<std::size_t, std::size_t> best;
    for (const auto& [key, n] : tally)
        best[key.first] = std::max(best[key.first], n);
    std::size_t agree = 0;
    for (const auto& [k, n] : best) agree += n;
    return static_cast<double>(agree) / static_cast<double>(truth.size());
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size())
        throw std::invalid_argument("cosine_similarity: length mismatch");
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if (aa == 0.0 || bb == 0.0)
        return std::numeric_limits<double>::quiet_NaN();
    return ab / (std::sqrt(aa) * std::sqrt(bb));
}

Heatmap grad_similarity(const std::vector<GradientRecord>& records,
                        std::size_t n_clusters) {
    // (step, module) -> cluster -> (sum vector, count)
    struct Slot {
        std::vector<std::vector<double>> sums;
        std::vector<std::size_t> counts;
    };
    std::map<std::pair<std::size_t, std::string>, Slot> slots;
    for (const auto& r : records) {
        if (r.owner >= n_clusters)
            throw std::invalid_argument("grad_similarity: cluster id " +
                                        std::to_string(r.owner) + " out of range");
        Slot& s = slots[{r.step, r.module_name}];
        if (s.sums.empty()) {
            s.sums.assign(n_clusters, {});
            s.counts.assign(n_clusters, 0);
        }
        auto& sum = s.sums[r.owner];
        if (sum.empty()) sum.assign(r.vec.size(), 0.0);
        if (sum.size() != r.vec.size())
            throw std::invalid_argument("grad_similarity: vector length mismatch");
        for (std::size_t i = 0; i < r.vec.size(); ++i) sum[i] += r.vec[i];
        ++s.counts[r.owner];
    }

    Heatmap out;
    out.values = Matrix(n_clusters, n_clusters);
    Matrix denom(n_clusters, n_clusters);
    // group slots by step so modules average first, then steps
    std::map<std::size_t, std::vector<const Slot*>> by_step;
    for (const auto& [key, slot] : slots) by_step[key.first].push_back(&slot);
    for (const auto& [step, step_slots] : by_step) {
        Matrix acc(n_clusters, n_clusters);
        Matrix cnt(n_clusters, n_clusters);
        for (const Slot* s : step_slots) {
            std::vector<std::vector<double>> means(n_clusters);
            for (std::size_t k = 0; k < n_clusters; ++k) {
                if (!s->counts[k]) continue;
                means[k] = s->sums[k];
                for (auto& x : means[k]) x /= static_cast<double>(s->counts[k]);
            }
            for (std::size_t i = 0; i < n_clusters; ++i) {
                for (std::size_t j = i; j < n_clusters; ++j) {
                    if (means[i].empty() || means[j].empty()) continue;
                    const double c = cosine_similarity(means[i], means[j]);
                    if (std::isnan(c)) {
                        ++out.excluded;
                        continue;
                    }
                    acc.at(i, j) += c;
                    acc.at(j, i) = acc.at(i, j);
                    cnt.at(i, j) += 1.0;
                    cnt.at(j, i) = cnt.at(i, j);
                }
            }
        }
        for (std::size_t i = 0; i < n_clusters * n_clusters; ++i) {
            if (cnt.data[i] > 0.0) {
                out.values.data[i] += acc.data[i] / cnt.data[i];
                denom.data[i] += 1.0;
            }
        }
    }
    for (std::size_t i = 0; i < out.values.data.size(); ++i)
        if (denom.data[i] > 0.0) out.values.data[i] /= denom.data[i];
    for (std::size_t k = 0; k < n_clusters; ++k)
        out.labels.push_back("cluster " + std::to_string(k));
    return out;
}

Heatmap reorder_heatmap(const Heatmap& h, const std::vector<std::size_t>& order) {
    const std::size_t c = h.values.rows;
    if (order.size() != c)
        throw std::invalid_argument("reorder_heatmap: permutation size mismatch");
    Heatmap out;
    out.values = Matrix(c, c);
    out.excluded = h.excluded;
    for (std::size_t i = 0; i < c; ++i) {
        out.labels.push_back(h.labels[order[i]]);
        for (std::size_t j = 0; j < c; ++j)
            out.values.at(i, j) = h.values.at(order[i], order[j]);
    }
    return out;
}

namespace {

std::string heat_color(double v) {
    // diverging scale: -1 cold blue, 0 white, +1 warm red
    const double t = std::clamp(v, -1.0, 1.0);
    int r, g, b;
    if (t >= 0.0) {
        r = 255;
        g = static_cast<int>(255 * (1.0 - t));
        b = static_cast<int>(255 * (1.0 - t));
    } else {
        r = static_cast<int>(255 * (1.0 + t));
        g = static_cast<int>(255 * (1.0 + t));
        b = 255;
    }
    char buf[8];
    std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", r, g, b);
    return buf;
}

std::ofstream open_out(const std::string& path, const char* what) {
    std::ofstream os(path, std::ios::trunc);
    if (!os)
        throw std::runtime_error(std::string(what) + ": cannot open " + path);
    return os;
}

}  // namespace

void export_heatmap(const Heatmap& h, const std::string& path_csv,
                    const std::string& path_svg) {
    const std::size_t c = h.values.rows;
    {
        auto os = open_out(path_csv, "export_heatmap");
        os << "label";
        for (const auto& l : h.labels) os << ',' << l;
        os << '\n';
        char buf[32];
        for (std::size_t i = 0; i < c; ++i) {
            os << h.labels[i];
            for (std::size_t j = 0; j < c; ++j) {
                std::snprintf(buf, sizeof(buf), "%.17g", h.values.at(i, j));
                os << ',' << buf;
            }
            os << '\n';
        }
    }
    {
        const int cell = 48, margin = 90;
        const int w = margin + cell * static_cast<int>(c) + 10;
        const int hgt = margin + cell * static_cast<int>(c) + 10;
        auto os = open_out(path_svg, "export_heatmap");
        os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w
           << "\" height=\"" << hgt << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
        for (std::size_t i = 0; i < c; ++i) {
            os << "<text x=\"4\" y=\"" << margin + cell * (int)i + cell / 2
               << "\">" << h.labels[i] << "</text>\n";
            os << "<text x=\"" << margin + cell * (int)i + 4 << "\" y=\""
               << margin - 6 << "\">" << h.labels[i] << "</text>\n";
            for (std::size_t j = 0; j < c; ++j) {
                const double v = h.values.at(i, j);
                os << "<rect x=\"" << margin + cell * (int)j << "\" y=\""
                   << margin + cell * (int)i << "\" width=\"" << cell
                   << "\" height=\"" << cell << "\" fill=\"" << heat_color(v)
                   << "\" stroke=\"#888\"/>\n";
                char buf[16];
                std::snprintf(buf, sizeof(buf), "%.2f", v);
                os << "<text x=\"" << margin + cell * (int)j + 8 << "\" y=\""
                   << margin + cell * (int)i + cell / 2 + 4 << "\">" << buf
                   << "</text>\n";
            }
        }
        os << "</svg>\n";
    }
}

Matrix load_heatmap_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("load_heatmap_csv: cannot open " + path);
    std::string line;
    std::getline(is, line);  // header
    std::vector<std::vector<double>> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::size_t pos = line.find(',');  // skip label
        while (pos != std::string::npos) {
            const std::size_t next = line.find(',', pos + 1);
            row.push_back(std::stod(line.substr(pos + 1, next - pos - 1)));
            pos = next;
        }
        rows.push_back(std::move(row));
    }
    Matrix out(rows.size(), rows.empty() ? 0 : rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j) out.at(i, j) = rows[i][j];
    return out;
}

void export_attention(const std::vector<std::pair<std::string, std::vector<double>>>& rows,
                      const std::string& path_csv, const std::string& path_svg) {
    if (rows.empty()) throw std::invalid_argument("export_attention: no rows");
    const std::size_t k = rows[0].second.size();
    for (const auto& [label, omega] : rows)
        if (omega.size() != k)
            throw std::invalid_argument("export_attention: expert count mismatch for " +
                                        label);
    {
        auto os = open_out(path_csv, "export_attention");
        os << "label";
        for (std::size_t e = 0; e < k; ++e) os << ",expert_" << e;
        os << '\n';
        char buf[32];
        for (const auto& [label, omega] : rows) {
            os << label;
            for (double w : omega) {
                std::snprintf(buf, sizeof(buf), "%.17g", w);
                os << ',' << buf;
            }
            os << '\n';
        }
    }
    {
        const int bar_w = 420, bar_h = 26, gap = 8, margin = 140;
        static const char* kColors[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52",
                                        "#8172b3", "#937860", "#da8bc3", "#8c8c8c"};
        const int w = margin + bar_w + 10;
        const int h = 10 + static_cast<int>(rows.size()) * (bar_h + gap);
        auto os = open_out(path_svg, "export_attention");
        os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w
           << "\" height=\"" << h << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
        int y = 10;
        for (const auto& [label, omega] : rows) {
            os << "<text x=\"4\" y=\"" << y + bar_h / 2 + 4 << "\">" << label
               << "</text>\n";
            double total = 0.0;
            for (double v : omega) total += v;
            double x = margin;
            for (std::size_t e = 0; e < k; ++e) {
                const double frac = total > 0.0 ? omega[e] / total : 1.0 / k;
                const double seg = frac * bar_w;
                os << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << seg
                   << "\" height=\"" << bar_h << "\" fill=\"" << kColors[e % 8]
                   << "\"/>\n";
                if (seg > 34.0) {
                    char buf[16];
                    std::snprintf(buf, sizeof(buf), "%.1f%%", 100.0 * frac);
                    os << "<text x=\"" << x + 4 << "\" y=\"" << y + bar_h / 2 + 4
                       << "\" fill=\"#fff\">" << buf << "</text>\n";
                }
                x += seg;
            }
            y += bar_h + gap;
        }
        os << "</svg>\n";
    }
}

}  // namespace ilora
