#include "ilora/tape.hpp"

#include <cmath>
#include <stdexcept>

namespace ilora {

Tape::NodeId Tape::push(Matrix val, std::function<void(Tape&)> back) {
    Node n;
    n.grad = Matrix(val.rows, val.cols, 0.0);
    n.val = std::move(val);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size()) - 1;
}

Tape::NodeId Tape::input(Matrix m) {
    return push(std::move(m), {});
}

Tape::NodeId Tape::param(Param& p) {
    Param* pp = &p;
    NodeId id = push(p.value, {});
    nodes_[id].back = [id, pp](Tape& t) {
        if (!pp->frozen) add_inplace(pp->grad, t.nodes_[id].grad);
    };
    return id;
}

Tape::NodeId Tape::matmul(NodeId a, NodeId b) {
    Matrix out = ilora::matmul(nodes_[a].val, nodes_[b].val);
    NodeId id = push(std::move(out), {});
    nodes_[id].back = [id, a, b](Tape& t) {
        const Matrix& g = t.nodes_[id].grad;
        matmul_nt_acc(t.grad_mut(a), g, t.nodes_[b].val);  // dA = g * B^T
        matmul_tn_acc(t.grad_mut(b), t.nodes_[a].val, g);  // dB = A^T * g
    };
    return id;
}

Tape::NodeId Tape::matmul_nt(NodeId a, NodeId b) {
    Matrix out = ilora::matmul_nt(nodes_[a].val, nodes_[b].val);
    NodeId id = push(std::move(out), {});
    nodes_[id].back = [id, a, b](Tape& t) {
        const Matrix& g = t.nodes_[id].grad;
        matmul_acc(t.grad_mut(a), g, t.nodes_[b].val);     // dA = g * B
        matmul_tn_acc(t.grad_mut(b), g, t.nodes_[a].val);  // dB = g^T * A
    };
    return id;
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
    Matrix out = nodes_[a].val;
    add_inplace(out, nodes_[b].val);
    NodeId id = push(std::move(out), {});
    nodes_[id].back = [id, a, b](Tape& t) {
        add_inplace(t.grad_mut(a), t.nodes_[id].grad);
        add_inplace(t.grad_mut(b), t.nodes_[id].grad);
    };
    return id;
}

Tape::NodeId Tape::add_rowwise(NodeId a, NodeId row) {
    const Matrix& av = nodes_[a].val;
    const Matrix& rv = nodes_[row].val;
    if (rv.rows != 1 || rv.cols != av.cols) throw_shape_error("add_rowwise", av, rv);
    Matrix out = av;
    for (std::size_t i = 0; i < out.rows; ++i)
        for (std::size_t j = 0; j < out.cols; ++j) out.at(i, j) += rv.at(0, j);
    NodeId id = push(std::move(out), {});
    nodes_[id].back = [id, a, row](Tape& t) {
        const Matrix& g = t.nodes_[id].grad;
        add_inplace(t.grad_mut(a), g);
        Matrix& rg = t.grad_mut(row);
        for (std::size_t i = 0; i < g.rows; ++i)
            for (std::size_t j = 0; j < g.cols; ++j) rg.at(0, j) += g.at(i, j);
    };
    return id;
}

Tape::NodeId Tape::scale(NodeId a, double s) {
    Matrix out = nodes_[a].val;
    scale_inplace(out, s);
    NodeId id = push(std::move(out), {});
    nodes_[id].back = [id, a, s](Tape& t) {
        axpy_inplace(t.grad_mut(a), s, t.nodes_[id].grad);
    };
    return id;
}

Tape::NodeId Tape::scale_by_entry(NodeId a, NodeId vec, std::size_t idx) {
    const Matrix& vv = nodes_[vec].val;
    if (vv.rows != 1 || idx >= vv.cols) {
        throw std::invalid_argument("scale_by_entry: index " + std::to_string(idx) +
                                    " out of range for " + vv.shape_str());
    }
    const double s = vv.at(0, idx);
    Matrix out = nodes_[a].val;
    scale_inplace(out, s);
    NodeId id = push(std::move(out), {});
    nodes_[id].back = [id, a, vec, idx, s](Tape& t) {
        const Matrix& g = t.nodes_[id].grad;
        axpy_inplace(t.grad_mut(a), s, g);
        t.grad_mut(vec).at(0, idx) += dot_flat(g, t.nodes_[a].val);
    };
    return id;
}

Tape::NodeId Tape::softmax_rows(NodeId a, double temperature) {
    if (temperature <= 0.0) {
        throw std::invalid_argument("softmax_rows: temperature must be positive, got " +
                                    std::to_string(temperature));
    }
    const Matrix& x = nodes_[a].val;
    Matrix out(x.rows, x.cols);
    const double inv_t = 1.0 / temperature;
    for (std::size_t i = 0; i < x.rows; ++i) {
        double mx = -HUGE_VAL;
        for (std::size_t j = 0; j < x.cols; ++j) mx = std::max(mx, x.at(i, j) * inv_t);
        double sum = 0.0;
        for (std::size_t j = 0; j < x.cols; ++j) {
            const double e = std::exp(x.at(i, j) * inv_t - mx);
            out.at(i, j) = e;
            sum += e;
        }
        for (std::size_t j = 0; j < x.cols; ++j) out.at(i, j) /= sum;
    }
    NodeId id = push(std::move(out), {});
    nodes_[id].back = [id, a, inv_t](Tape& t) {
        const Matrix& y = t.nodes_[id].val;
        const Matrix& g = t.nodes_[id].grad;
        Matrix& ag = t.grad_mut(a);
        for (std::size_t i = 0; i < y.rows; ++i) {
            double dotv = 0.0;
            for (std::size_t j = 0; j < y.cols; ++j) dotv += g.at(i, j) * y.at(i, j);
            for (std::size_t j = 0; j < y.cols; ++j)
                ag.at(i, j) += inv_t * y.at(i, j) * (g.at(i, j) - dotv);
        }
    };
    return id;
}

Tape::NodeId Tape::relu(NodeId a) {
    Matrix out = nodes_[a].val;
    for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
    NodeId id = push(std::move(out), {});
    nodes_[id].back = [id, a](Tape& t) {
        const Matrix& x = t.nodes_[a].val;
        const Matrix& g = t.nodes_[id].grad;
        Matrix& ag = t.grad_mut(a);
        for (std::size_t i = 0; i < x.data.size(); ++i)
            if (x.data[i] > 0.0) ag.data[i] += g.data[i];
    };
    return id;
}

Tape::NodeId Tape::layer_norm(NodeId a, NodeId gain, NodeId bias, double eps) {
    const Matrix& x = nodes_[a].val;
    const Matrix& g = nodes_[gain].val;
    const Matrix& b = nodes_[bias].val;
    if (g.rows != 1 || g.cols != x.cols || b.rows != 1 || b.cols != x.cols)
        throw_shape_error("layer_norm", x, g);
    const std::size_t C = x.cols;
    Matrix out(x.rows, C);
    std::vector<double> inv_std(x.rows);
    Matrix xhat(x.rows, C);
    for (std::size_t i = 0; i < x.rows; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < C; ++j) mu += x.at(i, j);
        mu /= static_cast<double>(C);
        double var = 0.0;
        for (std::size_t j = 0; j < C; ++j) {
            const double d = x.at(i, j) - mu;
            var += d * d;
        }
        var /= static_cast<double>(C);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[i] = is;
        for (std::size_t j = 0; j < C; ++j) {
            const double xh = (x.at(i, j) - mu) * is;
            xhat.at(i, j) = xh;
            out.at(i, j) = xh * g.at(0, j) + b.at(0, j);
        }
    }
    NodeId id = push(std::move(out), {});
    nodes_[id].back = [id, a, gain, bias, xhat = std::move(xhat),
                       inv_std = std::move(inv_std)](Tape& t) {
        const Matrix& dy = t.nodes_[id].grad;
        const Matrix& gv = t.nodes_[gain].val;
        const std::size_t C = dy.cols;
        Matrix& da = t.grad_mut(a);
        Matrix& dg = t.grad_mut(gain);
        Matrix& db = t.grad_mut(bias);
        for (std::size_t i = 0; i < dy.rows; ++i) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < C; ++j) {
                const double gd = dy.at(i, j) * gv.at(0, j);
                m1 += gd;
                m2 += gd * xhat.at(i, j);
                dg.at(0, j) += dy.at(i, j) * xhat.at(i, j);
                db.at(0, j) += dy.at(i, j);
            }
            m1 /= static_cast<double>(C);
            m2 /= static_cast<double>(C);
            for (std::size_t j = 0; j < C; ++j) {
                const double gd = dy.at(i, j) * gv.at(0, j);
                da.at(i, j) += inv_std[i] * (gd - m1 - xhat.at(i, j) * m2);
            }
        }
    };
    return id;
}

Tape::NodeId Tape::lookup_rows(NodeId table, std::vector<int> ids) {
    const Matrix& tab = nodes_[table].val;
    Matrix out(ids.size(), tab.cols);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const int r = ids[i];
        if (r < 0 || static_cast<std::size_t>(r) >= tab.rows) {
            throw std::out_of_range("lookup_rows: id " + std::to_string(r) +
                                    " out of range for " + tab.shape_str());
        }
        for (std::size_t j = 0; j < tab.cols; ++j)
            out.at(i, j) = tab.at(static_cast<std::size_t>(r), j);
    }
    NodeId id = push(std::move(out), {});
    nodes_[id].back = [id, table, ids = std::move(ids)](Tape& t) {
        const Matrix& g = t.nodes_[id].grad;
        Matrix& tg = t.grad_mut(table);
        for (std::size_t i = 0; i < ids.size(); ++i)
            for (std::size_t j = 0; j < g.cols; ++j)
                tg.at(static_cast<std::size_t>(ids[i]), j) += g.at(i, j);
    };
    return id;
}

Tape::NodeId Tape::slice_cols(NodeId a, std::size_t c0, std::size_t c1) {
    const Matrix& x = nodes_[a].val;
    if (c0 >= c1 || c1 > x.cols)
        throw std::invalid_argument("slice_cols: bad range [" + std::to_string(c0) +
                                    "," + std::to_string(c1) + ") for " + x.shape_str());
    Matrix out(x.rows, c1 - c0);
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t j = c0; j < c1; ++j) out.at(i, j - c0) = x.at(i, j);
    NodeId id = push(std::move(out), {});
    nodes_[id].back = [id, a, c0](Tape& t) {
        const Matrix& g = t.nodes_[id].grad;
        Matrix& ag = t.grad_mut(a);
        for (std::size_t i = 0; i < g.rows; ++i)
            for (std::size_t j = 0; j < g.cols; ++j) ag.at(i, c0 + j) += g.at(i, j);
    };
    return id;
}

Tape::NodeId Tape::concat_cols(const std::vector<NodeId>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
    const std::size_t rows = nodes_[parts[0]].val.rows;
    std::size_t cols = 0;
    for (NodeId p : parts) {
        if (nodes_[p].val.rows != rows)
            throw_shape_error("concat_cols", nodes_[parts[0]].val, nodes_[p].val);
        cols += nodes_[p].val.cols;
    }
    Matrix out(rows, cols);
    std::size_t off = 0;
    for (NodeId p : parts) {
        const Matrix& x = nodes_[p].val;
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < x.cols; ++j) out.at(i, off + j) = x.at(i, j);
        off += x.cols;
    }
    NodeId id = push(std::move(out), {});
    nodes_[id].back = [id, parts](Tape& t) {
        const Matrix& g = t.nodes_[id].grad;
        std::size_t off = 0;
        for (NodeId p : parts) {
            Matrix& pg = t.grad_mut(p);
            for (std::size_t i = 0; i < g.rows; ++i)
                for (std::size_t j = 0; j < pg.cols; ++j) pg.at(i, j) += g.at(i, off + j);
            off += pg.cols;
        }
    };
    return id;
}

Tape::NodeId Tape::gather_rows(const std::vector<std::pair<NodeId, std::size_t>>& picks) {
    if (picks.empty()) throw std::invalid_argument("gather_rows: no rows");
    const std::size_t cols = nodes_[picks[0].first].val.cols;
    Matrix out(picks.size(), cols);
    for (std::size_t i = 0; i < picks.size(); ++i) {
        const Matrix& src = nodes_[picks[i].first].val;
        if (src.cols != cols) throw_shape_error("gather_rows", nodes_[picks[0].first].val, src);
        if (picks[i].second >= src.rows)
            throw std::out_of_range("gather_rows: row out of range");
        for (std::size_t j = 0; j < cols; ++j) out.at(i, j) = src.at(picks[i].second, j);
    }
    NodeId id = push(std::move(out), {});
    nodes_[id].back = [id, picks](Tape& t) {
        const Matrix& g = t.nodes_[id].grad;
        for (std::size_t i = 0; i < picks.size(); ++i) {
            Matrix& sg = t.grad_mut(picks[i].first);
            for (std::size_t j = 0; j < g.cols; ++j)
                sg.at(picks[i].second, j) += g.at(i, j);
        }
    };
    return id;
}

Tape::NodeId Tape::cross_entropy_mean(NodeId logits, std::vector<int> targets,
                                      int ignore_id) {
    const Matrix& x = nodes_[logits].val;
    if (targets.size() != x.rows)
        throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) +
                                    " targets vs " + std::to_string(x.rows) + " rows");
    std::size_t active = 0;
    for (int tg : targets) {
        if (tg == ignore_id) continue;
        if (tg < 0 || static_cast<std::size_t>(tg) >= x.cols)
            throw std::out_of_range("cross_entropy: target " + std::to_string(tg) +
                                    " out of vocab " + std::to_string(x.cols));
        ++active;
    }
    if (active == 0)
        throw std::invalid_argument("cross_entropy: all positions ignored, loss undefined");

    // probs kept for the backward rule
    Matrix probs(x.rows, x.cols);
    double loss = 0.0;
    for (std::size_t i = 0; i < x.rows; ++i) {
        double mx = -HUGE_VAL;
        for (std::size_t j = 0; j < x.cols; ++j) mx = std::max(mx, x.at(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < x.cols; ++j) {
            const double e = std::exp(x.at(i, j) - mx);
            probs.at(i, j) = e;
            sum += e;
        }
        for (std::size_t j = 0; j < x.cols; ++j) probs.at(i, j) /= sum;
        if (targets[i] != ignore_id)
            loss -= std::log(probs.at(i, static_cast<std::size_t>(targets[i])));
    }
    loss /= static_cast<double>(active);

    Matrix out(1, 1);
    out.at(0, 0) = loss;
    NodeId id = push(std::move(out), {});
    nodes_[id].back = [id, logits, targets = std::move(targets), ignore_id, active,
                       probs = std::move(probs)](Tape& t) {
        const double g = t.nodes_[id].grad.at(0, 0) / static_cast<double>(active);
        Matrix& lg = t.grad_mut(logits);
        for (std::size_t i = 0; i < probs.rows; ++i) {
            if (targets[i] == ignore_id) continue;
            for (std::size_t j = 0; j < probs.cols; ++j)
                lg.at(i, j) += g * probs.at(i, j);
            lg.at(i, static_cast<std::size_t>(targets[i])) -= g;
        }
    };
    return id;
}

Tape::NodeId Tape::sum_all(NodeId a) {
    double s = 0.0;
    for (double v : nodes_[a].val.data) s += v;
    Matrix out(1, 1);
    out.at(0, 0) = s;
    NodeId id = push(std::move(out), {});
    nodes_[id].back = [id, a](Tape& t) {
        const double g = t.nodes_[id].grad.at(0, 0);
        for (auto& v : t.grad_mut(a).data) v += g;
    };
    return id;
}

void Tape::backward(NodeId root) {
    const Matrix& rv = nodes_[root].val;
    if (rv.rows != 1 || rv.cols != 1)
        throw std::invalid_argument("backward: root must be scalar, got " + rv.shape_str());
    nodes_[root].grad.at(0, 0) = 1.0;
    for (NodeId id = root; id >= 0; --id) {
        if (nodes_[id].back) nodes_[id].back(*this);
    }
}

double grad_check(const std::function<double()>& loss,
                  const std::vector<Param*>& params, double h) {
    if (h <= 0.0) throw std::invalid_argument("grad_check: h must be positive");
    for (Param* p : params) p->zero_grad();
    const double base = loss();
    if (!std::isfinite(base)) throw std::runtime_error("grad_check: non-finite loss");

    std::vector<Matrix> analytic;
    analytic.reserve(params.size());
    for (Param* p : params) analytic.push_back(p->grad);

    double max_rel = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Param* p = params[pi];
        for (std::size_t i = 0; i < p->value.data.size(); ++i) {
            const double orig = p->value.data[i];
            p->value.data[i] = orig + h;
            for (Param* q : params) q->zero_grad();
            const double lp = loss();
            p->value.data[i] = orig - h;
            for (Param* q : params) q->zero_grad();
            const double lm = loss();
            p->value.data[i] = orig;
            if (!std::isfinite(lp) || !std::isfinite(lm))
                throw std::runtime_error("grad_check: non-finite loss during probing");
            const double numeric = (lp - lm) / (2.0 * h);
            const double rel = std::abs(analytic[pi].data[i] - numeric) /
                               std::max(1.0, std::abs(numeric));
            max_rel = std::max(max_rel, rel);
        }
    }
    // leave the analytic gradients in place for the caller
    for (std::size_t pi = 0; pi < params.size(); ++pi) params[pi]->grad = analytic[pi];
    return max_rel;
}

}  // namespace ilora
