#include "ilora/toylm.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>

namespace ilora {

namespace {

// Lowercased surface forms: alnum runs and single punctuation marks; the
// literal [BEH] marker survives as one unit.
std::vector<std::string> split_surface(const std::string& text) {
    std::vector<std::string> out;
    std::string word;
    std::size_t i = 0;
    while (i < text.size()) {
        const char c = text[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!word.empty()) out.push_back(std::move(word)), word.clear();
            ++i;
            continue;
        }
        if (text.compare(i, 5, "[BEH]") == 0 || text.compare(i, 5, "[beh]") == 0) {
            if (!word.empty()) out.push_back(std::move(word)), word.clear();
            out.push_back("[BEH]");
            i += 5;
            continue;
        }
        if (std::isalnum(static_cast<unsigned char>(c))) {
            word.push_back(static_cast<char>(
                std::tolower(static_cast<unsigned char>(c))));
        } else {
            if (!word.empty()) out.push_back(std::move(word)), word.clear();
            out.push_back(std::string(1, c));
        }
        ++i;
    }
    if (!word.empty()) out.push_back(std::move(word));
    return out;
}

}  // namespace

int Vocab::id(const std::string& word) const {
    auto it = ids.find(word);
    return it == ids.end() ? kUnk : it->second;
}

Vocab build_vocab(const ItemCatalog& catalog, const std::vector<std::string>& templates) {
    Vocab v;
    v.tokens = {"<pad>", "<bos>", "<eos>", "<unk>", "[BEH]"};
    for (int i = 0; i < static_cast<int>(v.tokens.size()); ++i) v.ids[v.tokens[i]] = i;
    auto absorb = [&v](const std::string& text) {
        for (auto& w : split_surface(text)) {
            if (w == "[BEH]") continue;
            if (v.ids.emplace(w, static_cast<int>(v.tokens.size())).second)
                v.tokens.push_back(w);
        }
    };
    for (const auto& t : templates) absorb(t);
    for (std::size_t id = 1; id < catalog.titles.size(); ++id)
        absorb(catalog.titles[id]);
    return v;
}

std::vector<int> tokenize(const Vocab& v, const std::string& text) {
    std::vector<int> out;
    for (auto& w : split_surface(text))
        out.push_back(w == "[BEH]" ? Vocab::kBeh : v.id(w));
    return out;
}

std::string detokenize(const Vocab& v, const std::vector<int>& ids) {
    std::string out;
    for (int id : ids) {
        if (id == Vocab::kPad || id == Vocab::kBos || id == Vocab::kEos) continue;
        if (id < 0 || static_cast<std::size_t>(id) >= v.tokens.size())
            throw std::out_of_range("detokenize: id " + std::to_string(id) +
                                    " outside vocab of " + std::to_string(v.size()));
        if (!out.empty()) out += ' ';
        out += v.tokens[static_cast<std::size_t>(id)];
    }
    return out;
}

std::string normalize_text(const std::string& text) {
    std::string out;
    bool pending_space = false;
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out += ' ', pending_space = false;
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    return out;
}

std::vector<Param*> AdapterSet::trainable() {
    std::vector<Param*> out;
    if (proj.value.rows) out.push_back(&proj);
    for (auto& a : uniform_q) out.push_back(&a.a), out.push_back(&a.b);
    for (auto& a : uniform_v) out.push_back(&a.a), out.push_back(&a.b);
    for (auto& b : bank_q)
        for (Param* p : b.trainable()) out.push_back(p);
    for (auto& b : bank_v)
        for (Param* p : b.trainable()) out.push_back(p);
    if (mode == TuneMode::ilora) out.push_back(&gate.w_g);
    return out;
}

NamedTensors AdapterSet::tensors() const {
    NamedTensors out;
    auto* self = const_cast<AdapterSet*>(this);
    auto uni = [&out](std::vector<LoraAdapter>& ads, const char* side) {
        for (std::size_t i = 0; i < ads.size(); ++i) {
            const std::string base =
                "adapter/" + std::to_string(i) + "/" + side + "/";
            out.emplace_back(base + "a_0", ads[i].a.value);
            out.emplace_back(base + "b_0", ads[i].b.value);
        }
    };
    auto ban = [&out](std::vector<ExpertBank>& banks, const char* side) {
        for (std::size_t i = 0; i < banks.size(); ++i) {
            const std::string base =
                "adapter/" + std::to_string(i) + "/" + side + "/";
            for (std::size_t k = 0; k < banks[i].experts.size(); ++k) {
                out.emplace_back(base + "a_" + std::to_string(k),
                                 banks[i].experts[k].a.value);
                out.emplace_back(base + "b_" + std::to_string(k),
                                 banks[i].experts[k].b.value);
            }
        }
    };
    uni(self->uniform_q, "q");
    uni(self->uniform_v, "v");
    ban(self->bank_q, "q");
    ban(self->bank_v, "v");
    if (mode == TuneMode::ilora) out.emplace_back("gate/w_g", gate.w_g.value);
    if (proj.value.rows) out.emplace_back("proj", proj.value);
    return out;
}

void AdapterSet::load_tensors(const NamedTensors& t) {
    auto uni = [&t](std::vector<LoraAdapter>& ads, const char* side) {
        for (std::size_t i = 0; i < ads.size(); ++i) {
            const std::string base =
                "adapter/" + std::to_string(i) + "/" + side + "/";
            ads[i].a.value = checkpoint_get(t, base + "a_0");
            ads[i].b.value = checkpoint_get(t, base + "b_0");
        }
    };
    auto ban = [&t](std::vector<ExpertBank>& banks, const char* side) {
        for (std::size_t i = 0; i < banks.size(); ++i) {
            const std::string base =
                "adapter/" + std::to_string(i) + "/" + side + "/";
            for (std::size_t k = 0; k < banks[i].experts.size(); ++k) {
                banks[i].experts[k].a.value =
                    checkpoint_get(t, base + "a_" + std::to_string(k));
                banks[i].experts[k].b.value =
                    checkpoint_get(t, base + "b_" + std::to_string(k));
            }
        }
    };
    uni(uniform_q, "q");
    uni(uniform_v, "v");
    ban(bank_q, "q");
    ban(bank_v, "v");
    if (mode == TuneMode::ilora) gate.w_g.value = checkpoint_get(t, "gate/w_g");
    if (proj.value.rows) proj.value = checkpoint_get(t, "proj");
    for (Param* p : trainable()) p->zero_grad();
}

AdapterSet make_adapter_set(TuneMode mode, const ToyLMConfig& cfg, std::size_t sr_dim,
                            std::size_t r, std::size_t k_experts, double alpha,
                            double temperature, Rng& rng) {
    AdapterSet out;
    out.mode = mode;
    Matrix pm(cfg.d_model, sr_dim);
    for (auto& v : pm.data) v = rng.next_gaussian(0.0, 0.02);
    out.proj = Param("proj", std::move(pm));
    if (mode == TuneMode::frozen) return out;
    for (std::size_t i = 0; i < cfg.blocks; ++i) {
        for (const char* side : {"q", "v"}) {
            LoraAdapter full = make_lora("adapter/" + std::to_string(i) + "/" + side,
                                         cfg.d_model, cfg.d_model, r, alpha, rng);
            auto& uni = side[0] == 'q' ? out.uniform_q : out.uniform_v;
            auto& ban = side[0] == 'q' ? out.bank_q : out.bank_v;
            if (mode == TuneMode::uniform_lora)
                uni.push_back(std::move(full));
            else
                ban.push_back(split_experts(full, k_experts));
        }
    }
    if (mode == TuneMode::ilora) out.gate = make_gate(k_experts, sr_dim, temperature);
    return out;
}

HybridSeq hybrid_from_pair(const Vocab& v, const InstructionPair& pair) {
    HybridSeq out;
    out.user = pair.user;
    std::size_t next_item = 0;
    out.entries.push_back({Vocab::kBos, 0});
    for (int id : tokenize(v, pair.prompt_text)) {
        if (id == Vocab::kBeh) {
            if (next_item >= pair.items.size())
                throw std::runtime_error("hybrid_from_pair: user " +
                                         std::to_string(pair.user) +
                                         " has more [BEH] slots than history items");
            out.entries.push_back({-1, pair.items[next_item++]});
        } else {
            out.entries.push_back({id, 0});
        }
    }
    if (next_item != pair.items.size())
        throw std::runtime_error("hybrid_from_pair: user " + std::to_string(pair.user) +
                                 " has unbound history items");
    return out;
}

ToyLM::ToyLM(const ToyLMConfig& cfg, std::size_t vocab_size, Rng& rng)
    : cfg_(cfg), vocab_size_(vocab_size) {
    Matrix emb(vocab_size, cfg.d_model);
    for (auto& v : emb.data) v = rng.next_gaussian(0.0, 0.02);
    tok_emb_ = Param("lm/tok_emb", std::move(emb));
    Matrix pos(cfg.context, cfg.d_model);
    for (auto& v : pos.data) v = rng.next_gaussian(0.0, 0.02);
    pos_emb_ = Param("lm/pos_emb", std::move(pos));
    for (std::size_t b = 0; b < cfg.blocks; ++b)
        blocks_.push_back(init_block(cfg.d_model, 4 * cfg.d_model, rng,
                                     "lm/block" + std::to_string(b)));
}

std::vector<Param*> ToyLM::params() {
    std::vector<Param*> out{&tok_emb_, &pos_emb_};
    for (auto& b : blocks_) {
        auto bp = b.params();
        out.insert(out.end(), bp.begin(), bp.end());
    }
    return out;
}

void ToyLM::freeze() {
    for (Param* p : params()) p->frozen = true;
    frozen_ = true;
}

std::uint64_t ToyLM::checksum() const {
    auto ps = const_cast<ToyLM*>(this)->params();
    std::vector<const Param*> cps(ps.begin(), ps.end());
    return params_checksum(cps);
}

NamedTensors ToyLM::tensors() const {
    NamedTensors out;
    out.emplace_back(tok_emb_.name, tok_emb_.value);
    out.emplace_back(pos_emb_.name, pos_emb_.value);
    std::vector<std::pair<std::string, Matrix*>> refs;
    for (std::size_t b = 0; b < blocks_.size(); ++b)
        const_cast<TransformerBlockParams&>(blocks_[b])
            .collect(refs, "lm/block" + std::to_string(b));
    for (auto& [name, m] : refs) out.emplace_back(name, *m);
    return out;
}

void ToyLM::load_tensors(const NamedTensors& t) {
    tok_emb_.value = checkpoint_get(t, tok_emb_.name);
    pos_emb_.value = checkpoint_get(t, pos_emb_.name);
    std::vector<std::pair<std::string, Matrix*>> refs;
    for (std::size_t b = 0; b < blocks_.size(); ++b)
        blocks_[b].collect(refs, "lm/block" + std::to_string(b));
    for (auto& [name, m] : refs) *m = checkpoint_get(t, name);
    for (Param* p : params()) p->zero_grad();
}

Tape::NodeId ToyLM::hidden(Tape& t, Tape::NodeId x, AdapterSet* ad,
                           Tape::NodeId omega) {
    const Matrix& xv = t.value(x);
    if (xv.rows > cfg_.context)
        throw std::runtime_error("lm: sequence of " + std::to_string(xv.rows) +
                                 " exceeds context " + std::to_string(cfg_.context));
    std::vector<int> positions(xv.rows);
    for (std::size_t i = 0; i < xv.rows; ++i) positions[i] = static_cast<int>(i);
    auto h = t.add(x, t.lookup_rows(t.param(pos_emb_), positions));
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        AdapterSlot q, v;
        if (ad && ad->mode == TuneMode::uniform_lora) {
            q.uniform = &ad->uniform_q[b];
            v.uniform = &ad->uniform_v[b];
        } else if (ad && ad->mode == TuneMode::ilora) {
            q.bank = &ad->bank_q[b];
            v.bank = &ad->bank_v[b];
        }
        h = transformer_block(t, h, blocks_[b], cfg_.heads, q, v, omega);
    }
    return h;
}

Tape::NodeId ToyLM::logits(Tape& t, Tape::NodeId x, AdapterSet* ad,
                           Tape::NodeId omega) {
    return t.matmul_nt(hidden(t, x, ad, omega), t.param(tok_emb_));
}

Tape::NodeId embed_hybrid(Tape& t, ToyLM& lm, Param& proj, const SeqRecModel& sr,
                          const HybridSeq& seq, std::size_t extra_budget) {
    if (seq.entries.empty())
        throw std::invalid_argument("embed_hybrid: empty sequence for user " +
                                    std::to_string(seq.user));
    if (seq.entries.size() + extra_budget > lm.config().context)
        throw std::runtime_error("embed_hybrid: sequence for user " +
                                 std::to_string(seq.user) + " needs " +
                                 std::to_string(seq.entries.size() + extra_budget) +
                                 " positions, context is " +
                                 std::to_string(lm.config().context));
    std::vector<int> beh_items;
    for (const auto& e : seq.entries)
        if (!e.is_text()) beh_items.push_back(e.item_id);

    Tape::NodeId beh_rows = -1;
    if (!beh_items.empty()) {
        Matrix z(beh_items.size(), sr.config().dim);
        for (std::size_t i = 0; i < beh_items.size(); ++i) {
            Matrix zi = sr.item_embed(beh_items[i]);
            for (std::size_t j = 0; j < zi.cols; ++j) z.at(i, j) = zi.at(0, j);
        }
        beh_rows = t.matmul_nt(t.input(std::move(z)), t.param(proj));
    }

    auto tok_node = t.param(lm.tok_emb());
    std::vector<std::pair<Tape::NodeId, std::size_t>> picks;
    std::size_t beh_i = 0;
    for (const auto& e : seq.entries) {
        if (e.is_text())
            picks.emplace_back(tok_node, static_cast<std::size_t>(e.token_id));
        else
            picks.emplace_back(beh_rows, beh_i++);
    }
    return t.gather_rows(picks);
}

Tape::NodeId lm_loss(Tape& t, ToyLM& lm, AdapterSet& ad, const SeqRecModel& sr,
                     const Vocab& v, const InstructionPair& pair, TuneMode mode) {
    if (mode == TuneMode::uniform_lora && ad.uniform_q.empty())
        throw std::logic_error("lm_loss: uniform-lora mode without uniform adapters");
    if (mode == TuneMode::ilora && (ad.bank_q.empty() || ad.gate.w_g.value.rows == 0))
        throw std::logic_error("lm_loss: instance-wise mode without gate context");

    HybridSeq seq = hybrid_from_pair(v, pair);
    std::vector<int> target = tokenize(v, pair.target_text);
    target.push_back(Vocab::kEos);
    const std::size_t prompt_len = seq.entries.size();
    for (int id : target) seq.entries.push_back({id, 0});

    std::vector<int> targets(seq.entries.size(), -1);
    for (std::size_t j = 0; j < target.size(); ++j)
        targets[prompt_len - 1 + j] = target[j];

    Tape::NodeId omega = -1;
    if (mode == TuneMode::ilora) {
        InteractionSequence hist{pair.user, pair.items, -1};
        omega = gate_forward(t, ad.gate, sr.encode(hist));
    }
    auto x = embed_hybrid(t, lm, ad.proj, sr, seq);
    AdapterSet* slots = mode == TuneMode::frozen ? nullptr : &ad;
    auto lg = lm.logits(t, x, slots, omega);
    return t.cross_entropy_mean(lg, targets, -1);
}

double lm_loss_value(ToyLM& lm, AdapterSet& ad, const SeqRecModel& sr, const Vocab& v,
                     const InstructionPair& pair, TuneMode mode) {
    Tape t;
    return t.value(lm_loss(t, lm, ad, sr, v, pair, mode)).at(0, 0);
}

std::vector<double> pretrain(ToyLM& lm, const Vocab& v,
                             const std::vector<std::string>& texts, std::size_t steps,
                             double lr, std::size_t batch, Rng& rng) {
    if (texts.empty()) throw std::invalid_argument("pretrain: empty corpus");
    std::vector<std::vector<int>> streams;
    for (const auto& text : texts) {
        std::vector<int> ids{Vocab::kBos};
        for (int id : tokenize(v, text)) ids.push_back(id);
        ids.push_back(Vocab::kEos);
        if (ids.size() > lm.config().context)
            ids.resize(lm.config().context);
        if (ids.size() >= 2) streams.push_back(std::move(ids));
    }
    if (streams.empty()) throw std::invalid_argument("pretrain: no usable text");

    auto ps = lm.params();
    AdamState opt(ps);
    std::vector<std::size_t> order(streams.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::size_t cursor = order.size();  // forces an initial shuffle

    std::vector<double> losses;
    for (std::size_t step = 0; step < steps; ++step) {
        double loss_sum = 0.0;
        const std::size_t b = std::min(batch, streams.size());
        const double inv_b = 1.0 / static_cast<double>(b);
        for (std::size_t i = 0; i < b; ++i) {
            if (cursor == order.size()) {
                for (std::size_t j = order.size(); j > 1; --j)
                    std::swap(order[j - 1], order[rng.next_below(j)]);
                cursor = 0;
            }
            const auto& ids = streams[order[cursor++]];
            std::vector<int> inputs(ids.begin(), ids.end() - 1);
            std::vector<int> targets(ids.begin() + 1, ids.end());
            Tape t;
            auto x = t.lookup_rows(t.param(lm.tok_emb()), inputs);
            auto lg = lm.logits(t, x, nullptr, -1);
            auto loss = t.cross_entropy_mean(lg, targets, -1);
            loss_sum += t.value(loss).at(0, 0);
            t.backward(t.scale(loss, inv_b));
        }
        opt.step(ps, lr);
        losses.push_back(loss_sum * inv_b);
    }
    return losses;
}

std::vector<double> finetune(ToyLM& lm, AdapterSet& ad, const SeqRecModel& sr,
                             const Vocab& v, const std::vector<InstructionPair>& data,
                             const FinetuneConfig& cfg, Rng& rng,
                             const CkptHook& on_ckpt, const GradHook& on_grad) {
    if (data.empty()) throw std::invalid_argument("finetune: empty dataset");
    auto trainable = ad.trainable();
    AdamState opt(trainable, 0.9, 0.999, 1e-8, cfg.weight_decay);
    LrSchedule sched{cfg.max_lr, cfg.warmup_steps, cfg.total_steps, cfg.floor_lr};

    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::size_t cursor = order.size();

    std::vector<Matrix> acc;
    for (Param* p : trainable) acc.emplace_back(p->value.rows, p->value.cols);

    std::vector<double> losses;
    for (std::size_t step = 0; step < cfg.total_steps; ++step) {
        const std::size_t b = std::min(cfg.batch, data.size());
        const double inv_b = 1.0 / static_cast<double>(b);
        for (auto& a : acc) std::fill(a.data.begin(), a.data.end(), 0.0);
        double loss_sum = 0.0;
        for (std::size_t i = 0; i < b; ++i) {
            if (cursor == order.size()) {
                for (std::size_t j = order.size(); j > 1; --j)
                    std::swap(order[j - 1], order[rng.next_below(j)]);
                cursor = 0;
            }
            const auto& pair = data[order[cursor++]];
            Tape t;
            auto loss = lm_loss(t, lm, ad, sr, v, pair, ad.mode);
            loss_sum += t.value(loss).at(0, 0);
            t.backward(loss);
            if (on_grad) on_grad(step, pair.user, trainable);
            for (std::size_t p = 0; p < trainable.size(); ++p) {
                axpy_inplace(acc[p], inv_b, trainable[p]->grad);
                trainable[p]->zero_grad();
            }
        }
        for (std::size_t p = 0; p < trainable.size(); ++p)
            trainable[p]->grad = acc[p];
        opt.step(trainable, lr_at(sched, step));
        losses.push_back(loss_sum * inv_b);
        if (on_ckpt && cfg.ckpt_every && (step + 1) % cfg.ckpt_every == 0)
            on_ckpt(step + 1, ad.tensors());
    }
    return losses;
}

std::string greedy_decode(ToyLM& lm, AdapterSet& ad, const SeqRecModel& sr,
                          const Vocab& v, const InstructionPair& pair,
                          std::size_t max_new) {
    HybridSeq prompt = hybrid_from_pair(v, pair);

    Matrix omega_fixed;
    if (ad.mode == TuneMode::ilora) {
        InteractionSequence hist{pair.user, pair.items, -1};
        omega_fixed = gate_eval(ad.gate, sr.encode(hist));
    }

    std::vector<int> generated;
    AdapterSet* slots = ad.mode == TuneMode::frozen ? nullptr : &ad;
    for (std::size_t n = 0; n < max_new; ++n) {
        HybridSeq seq = prompt;
        for (int id : generated) seq.entries.push_back({id, 0});
        Tape t;
        Tape::NodeId omega = -1;
        if (ad.mode == TuneMode::ilora) omega = t.input(omega_fixed);
        auto x = embed_hybrid(t, lm, ad.proj, sr, seq, 1);
        auto lg = lm.logits(t, x, slots, omega);
        const Matrix& lv = t.value(lg);
        std::size_t best = 0;
        for (std::size_t j = 1; j < lv.cols; ++j)
            if (lv.at(lv.rows - 1, j) > lv.at(lv.rows - 1, best)) best = j;
        if (static_cast<int>(best) == Vocab::kEos) break;
        generated.push_back(static_cast<int>(best));
    }
    return detokenize(v, generated);
}

}  // namespace ilora
