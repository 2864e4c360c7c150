#include "rclarc/clarc.hpp"
#include "rclarc/errors.hpp"
#include "rclarc/log.hpp"
#include "rclarc/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace rclarc {

namespace {

std::string join_ids(const ConceptSet& ids) {
    std::string out;
    for (const auto& id : ids) {
        if (!out.empty()) out += ", ";
        out += id;
    }
    return out;
}

}  // namespace

Vector mean_of_intersection(std::span<const NegativeSet> sets, const ActivationTable& activations) {
    if (sets.empty()) throw Error(ErrorCode::InvalidArgument, "mean_of_intersection needs at least one concept");
    std::vector<std::size_t> common(sets.front().sample_ids);
    std::sort(common.begin(), common.end());
    common.erase(std::unique(common.begin(), common.end()), common.end());
    ConceptSet names{sets.front().concept_id};
    for (std::size_t i = 1; i < sets.size(); ++i) {
        std::vector<std::size_t> other(sets[i].sample_ids);
        std::sort(other.begin(), other.end());
        std::vector<std::size_t> next;
        std::set_intersection(common.begin(), common.end(), other.begin(), other.end(), std::back_inserter(next));
        common = std::move(next);
        names.insert(sets[i].concept_id);
    }
    if (common.empty()) {
        throw Error(ErrorCode::EmptyIntersection, "no negative sample shared by concepts {" + join_ids(names) + "}");
    }
    Vector mean;
    for (std::size_t id : common) {
        const auto it = activations.find(id);
        if (it == activations.end()) {
            throw Error(ErrorCode::ConceptUnknown, "no activation recorded for negative sample " + std::to_string(id));
        }
        if (mean.empty()) mean.assign(it->second.size(), 0.0);
        axpy(1.0, it->second, mean);
    }
    const double inv = 1.0 / static_cast<double>(common.size());
    for (double& v : mean) v *= inv;
    return mean;
}

Vector AffineCorrection::apply(std::span<const double> a) const {
    const Vector shifted = subtract(a, anchor);
    const Vector removed = matvec(projector, shifted);
    return subtract(a, removed);
}

Matrix AffineCorrection::linear_part() const {
    Matrix m = Matrix::identity(projector.rows());
    for (std::size_t i = 0; i < m.values().size(); ++i) m.values()[i] -= projector.values()[i];
    return m;
}

Vector AffineCorrection::offset() const { return matvec(projector, anchor); }

CavBank::CavBank(std::vector<Cav> cavs, ActivationTable negative_activations)
    : cavs_(std::move(cavs)), negatives_(std::move(negative_activations)) {
    if (cavs_.empty()) return;
    layer_ = cavs_.front().layer;
    dim_ = cavs_.front().dim();
    std::set<std::string> seen;
    for (const auto& cav : cavs_) {
        if (cav.layer != layer_) throw Error(ErrorCode::InvalidArgument, "all CAVs in a bank must share a layer");
        require_same_dim(cav.dim(), dim_, "CAV dimension");
        require_same_dim(cav.z_neg.size(), dim_, "CAV z_neg dimension");
        if (std::abs(norm(cav.direction) - 1.0) > 1e-9) {
            throw Error(ErrorCode::InvalidArgument, "CAV '" + cav.concept_id + "' is not unit-norm");
        }
        if (!seen.insert(cav.concept_id).second) {
            throw Error(ErrorCode::InvalidArgument, "duplicate concept id '" + cav.concept_id + "'");
        }
    }
    for (const auto& [id, act] : negatives_) require_same_dim(act.size(), dim_, "negative activation");
}

bool CavBank::contains(const std::string& id) const {
    return std::any_of(cavs_.begin(), cavs_.end(), [&](const Cav& c) { return c.concept_id == id; });
}

const Cav& CavBank::cav(const std::string& id) const {
    for (const auto& c : cavs_) {
        if (c.concept_id == id) return c;
    }
    throw Error(ErrorCode::ConceptUnknown, "concept '" + id + "' is not in the bank");
}

ConceptSet CavBank::all_concepts() const {
    ConceptSet out;
    for (const auto& c : cavs_) out.insert(c.concept_id);
    return out;
}

CavBank CavBank::subset(const ConceptSet& concepts) const {
    check_subset(concepts);
    std::vector<Cav> picked;
    for (const auto& c : cavs_) {
        if (concepts.count(c.concept_id)) picked.push_back(c);
    }
    return CavBank(std::move(picked), negatives_);
}

void CavBank::check_subset(const ConceptSet& concepts) const {
    for (const auto& id : concepts) {
        if (!contains(id)) throw Error(ErrorCode::ConceptUnknown, "concept '" + id + "' is not in the bank");
    }
}

Vector CavBank::anchor(const ConceptSet& concepts) const {
    check_subset(concepts);
    if (concepts.empty()) throw Error(ErrorCode::InvalidArgument, "anchor of an empty concept set");
    if (concepts.size() == 1) return cav(*concepts.begin()).z_neg;
    std::vector<NegativeSet> sets;
    for (const auto& c : cavs_) {
        if (concepts.count(c.concept_id)) sets.push_back({c.concept_id, c.negative_ids});
    }
    return mean_of_intersection(sets, negatives_);
}

std::shared_ptr<const AffineCorrection> CavBank::correction(const ConceptSet& concepts) const {
    check_subset(concepts);
    if (concepts.empty()) throw Error(ErrorCode::InvalidArgument, "correction for an empty concept set");
    {
        std::lock_guard<std::mutex> lock(cache_->mutex);
        const auto it = cache_->entries.find(concepts);
        if (it != cache_->entries.end()) return it->second;
    }
    std::vector<Vector> columns;
    for (const auto& c : cavs_) {
        if (concepts.count(c.concept_id)) columns.push_back(c.direction);
    }
    const SpanProjector projector(Matrix::from_columns(columns));
    if (projector.regularized()) {
        log_warning("CAV subset {" + join_ids(concepts) + "} is rank-deficient; using a ridge-regularized Gram solve");
    }
    auto entry = std::make_shared<AffineCorrection>();
    entry->concepts = concepts;
    entry->projector = projector.as_matrix();
    entry->anchor = anchor(concepts);
    entry->regularized = projector.regularized();
    std::lock_guard<std::mutex> lock(cache_->mutex);
    return cache_->entries.emplace(concepts, std::move(entry)).first->second;
}

Vector pclarc_apply(std::span<const double> a, const Cav& cav) {
    require_same_dim(a.size(), cav.dim(), "P-ClArC activation");
    const double coord = cav_activation(cav, a);
    Vector out(a.begin(), a.end());
    axpy(-coord, cav.direction, out);
    return out;
}

Vector multi_pclarc_apply(std::span<const double> a, const CavBank& bank, const ConceptSet& concepts) {
    if (concepts.empty()) return Vector(a.begin(), a.end());
    require_same_dim(a.size(), bank.dim(), "P-ClArC activation");
    std::vector<Vector> columns;
    for (const auto& c : bank.cavs()) {
        if (concepts.count(c.concept_id)) columns.push_back(c.direction);
    }
    if (columns.size() != concepts.size()) {
        throw Error(ErrorCode::ConceptUnknown, "subset names concepts missing from the bank");
    }
    const SpanProjector projector(Matrix::from_columns(columns));
    const Vector shifted = subtract(a, bank.anchor(concepts));
    return subtract(a, projector.apply(shifted));
}

double LinearProbe::score(std::span<const double> a) const {
    require_same_dim(a.size(), weight.size(), "probe input");
    return dot(weight, a) + bias;
}

ConceptSet class_condition(std::size_t predicted_label, const ClassMap& class_map) {
    ConceptSet out;
    for (const auto& [id, classes] : class_map) {
        if (classes.count(predicted_label)) out.insert(id);
    }
    return out;
}

ConceptSet artifact_condition(std::span<const double> a, const ProbeMap& probes) {
    ConceptSet out;
    for (const auto& [id, probe] : probes) {
        if (probe.fires(a)) out.insert(id);
    }
    return out;
}

ConceptSet combined_condition(std::span<const double> a, std::size_t predicted_label, const ClassMap& class_map,
                              const ProbeMap& probes) {
    const ConceptSet by_class = class_condition(predicted_label, class_map);
    const ConceptSet by_probe = artifact_condition(a, probes);
    ConceptSet out;
    std::set_intersection(by_class.begin(), by_class.end(), by_probe.begin(), by_probe.end(),
                          std::inserter(out, out.begin()));
    return out;
}

const char* condition_kind_name(ConditionKind kind) {
    switch (kind) {
        case ConditionKind::Always: return "always";
        case ConditionKind::Class: return "class";
        case ConditionKind::Artifact: return "artifact";
        case ConditionKind::Both: return "both";
    }
    return "always";
}

ConditionKind condition_kind_from_name(const std::string& name) {
    if (name == "always") return ConditionKind::Always;
    if (name == "class") return ConditionKind::Class;
    if (name == "artifact") return ConditionKind::Artifact;
    if (name == "both") return ConditionKind::Both;
    throw Error(ErrorCode::ConfigError, "unknown condition kind '" + name + "'");
}

void ConditionFn::validate(const CavBank& bank) const {
    const bool needs_classes = kind == ConditionKind::Class || kind == ConditionKind::Both;
    const bool needs_probes = kind == ConditionKind::Artifact || kind == ConditionKind::Both;
    for (const auto& cav : bank.cavs()) {
        if (needs_classes && !class_map.count(cav.concept_id)) {
            throw Error(ErrorCode::ConfigError, "class map has no entry for concept '" + cav.concept_id + "'");
        }
        if (needs_probes) {
            const auto it = probes.find(cav.concept_id);
            if (it == probes.end()) {
                throw Error(ErrorCode::ConfigError, "no probe for concept '" + cav.concept_id + "'");
            }
            require_same_dim(it->second.weight.size(), bank.dim(), "probe dimension");
        }
    }
}

ConceptSet ConditionFn::evaluate(std::span<const double> a, std::size_t predicted_label, const CavBank& bank) const {
    ConceptSet raw;
    switch (kind) {
        case ConditionKind::Always: return bank.all_concepts();
        case ConditionKind::Class: raw = class_condition(predicted_label, class_map); break;
        case ConditionKind::Artifact: raw = artifact_condition(a, probes); break;
        case ConditionKind::Both: raw = combined_condition(a, predicted_label, class_map, probes); break;
    }
    // Entries for concepts outside the bank (e.g. a sweep over a prefix) are ignored.
    ConceptSet out;
    for (const auto& id : raw) {
        if (bank.contains(id)) out.insert(id);
    }
    return out;
}

std::string CorrectionMode::name() const {
    switch (kind) {
        case Kind::Vanilla: return "vanilla";
        case Kind::PClArC: return "pclarc";
        case Kind::RClArC: return std::string("rclarc-") + condition_kind_name(condition.kind);
    }
    return "vanilla";
}

namespace {

void check_bank_layer(const MlpModel& model, const CavBank& bank) {
    if (bank.empty()) throw Error(ErrorCode::InvalidArgument, "correction requires a nonempty CAV bank");
    if (bank.layer() != model.split_layer && bank.layer() != 0) {
        throw Error(ErrorCode::InvalidArgument, "CAV bank layer " + std::to_string(bank.layer()) +
                                                    " matches neither the split layer nor the input");
    }
    require_same_dim(bank.dim(), model.layer_dims[bank.layer()], "CAV bank dimension");
}

}  // namespace

CorrectedOutput corrected_forward_detailed(const MlpModel& model, std::span<const double> x,
                                           const CorrectionMode& mode, const CavBank* bank) {
    CorrectedOutput out;
    if (mode.kind == CorrectionMode::Kind::Vanilla) {
        out.logits = forward(model, x);
        out.uncorrected_prediction = argmax(out.logits);
        return out;
    }
    if (bank == nullptr) throw Error(ErrorCode::InvalidArgument, mode.name() + " needs a CAV bank");
    check_bank_layer(model, *bank);
    const std::size_t layer = bank->layer();
    const Vector a = activation_at(model, layer, x);

    if (mode.kind == CorrectionMode::Kind::PClArC) {
        out.applied = bank->all_concepts();
        out.uncorrected_prediction = argmax(forward_from(model, layer, a));
    } else {
        const Vector uncorrected = forward_from(model, layer, a);
        out.uncorrected_prediction = argmax(uncorrected);
        out.applied = mode.condition.evaluate(a, out.uncorrected_prediction, *bank);
        if (out.applied.empty()) {
            out.logits = uncorrected;
            return out;
        }
    }
    const auto correction = bank->correction(out.applied);
    out.logits = forward_from(model, layer, correction->apply(a));
    return out;
}

Vector corrected_forward(const MlpModel& model, std::span<const double> x, const CorrectionMode& mode,
                         const CavBank* bank) {
    return corrected_forward_detailed(model, x, mode, bank).logits;
}

Vector corrected_activation(const MlpModel& model, std::span<const double> x, const CorrectionMode& mode,
                            const CavBank& bank) {
    check_bank_layer(model, bank);
    const Vector a = activation_at(model, bank.layer(), x);
    ConceptSet applied;
    switch (mode.kind) {
        case CorrectionMode::Kind::Vanilla: return a;
        case CorrectionMode::Kind::PClArC: applied = bank.all_concepts(); break;
        case CorrectionMode::Kind::RClArC:
            applied = mode.condition.evaluate(a, argmax(forward_from(model, bank.layer(), a)), bank);
            break;
    }
    if (applied.empty()) return a;
    return bank.correction(applied)->apply(a);
}

LinearProbe train_artifact_probe(std::span<const Vector> positives, std::span<const Vector> negatives,
                                 const ProbeConfig& config) {
    if (positives.empty() || negatives.empty()) {
        throw Error(ErrorCode::InvalidArgument, "probe training needs positives and negatives");
    }
    if (config.holdout_fraction < 0.0 || config.holdout_fraction >= 1.0) {
        throw Error(ErrorCode::InvalidArgument, "holdout fraction must lie in [0, 1)");
    }
    SplitMix64 rng(config.seed);
    std::vector<std::size_t> pos_idx(positives.size()), neg_idx(negatives.size());
    std::iota(pos_idx.begin(), pos_idx.end(), 0);
    std::iota(neg_idx.begin(), neg_idx.end(), 0);
    rng.shuffle(neg_idx);
    const auto neg_cap =
        static_cast<std::size_t>(std::floor(config.max_negative_ratio * static_cast<double>(positives.size())));
    if (neg_idx.size() > neg_cap && neg_cap > 0) neg_idx.resize(neg_cap);
    rng.shuffle(pos_idx);

    auto split = [&](const std::vector<std::size_t>& idx, std::span<const Vector> source, std::vector<Vector>& fit,
                     std::vector<Vector>& held) {
        const auto n_held =
            idx.size() < 2 ? std::size_t{0}
                           : static_cast<std::size_t>(std::llround(config.holdout_fraction * static_cast<double>(idx.size())));
        for (std::size_t i = 0; i < idx.size(); ++i) {
            (i < n_held ? held : fit).push_back(source[idx[i]]);
        }
    };
    std::vector<Vector> fit_pos, held_pos, fit_neg, held_neg;
    split(pos_idx, positives, fit_pos, held_pos);
    split(neg_idx, negatives, fit_neg, held_neg);

    SvmConfig svm_config = config.svm;
    svm_config.seed = config.seed;
    const SvmModel svm = train_linear_svm(fit_pos, fit_neg, svm_config);
    if (!svm.converged) log_warning("artifact probe solver stopped at the iteration budget before converging");

    LinearProbe probe;
    probe.weight = svm.weight;
    probe.bias = svm.bias;
    probe.seed = config.seed;
    probe.converged = svm.converged;

    // With no holdout (tiny sets), accuracy is reported on the fitting data.
    const bool have_holdout = !held_pos.empty() || !held_neg.empty();
    const auto& eval_pos = have_holdout ? held_pos : fit_pos;
    const auto& eval_neg = have_holdout ? held_neg : fit_neg;
    std::size_t correct = 0;
    for (const auto& v : eval_pos) correct += probe.fires(v) ? 1 : 0;
    for (const auto& v : eval_neg) correct += probe.fires(v) ? 0 : 1;
    probe.holdout_accuracy = static_cast<double>(correct) / static_cast<double>(eval_pos.size() + eval_neg.size());
    return probe;
}

nlohmann::json probe_to_json(const LinearProbe& probe) {
    return {{"concept_id", probe.concept_id}, {"weight", probe.weight},
            {"bias", probe.bias},             {"holdout_accuracy", probe.holdout_accuracy},
            {"seed", probe.seed},             {"converged", probe.converged}};
}

LinearProbe probe_from_json(const nlohmann::json& doc) {
    try {
        LinearProbe probe;
        probe.concept_id = doc.at("concept_id").get<std::string>();
        probe.weight = doc.at("weight").get<Vector>();
        probe.bias = doc.at("bias").get<double>();
        probe.holdout_accuracy = doc.at("holdout_accuracy").get<double>();
        probe.seed = doc.at("seed").get<std::uint64_t>();
        probe.converged = doc.value("converged", true);
        require_finite(probe.weight, "probe weight");
        return probe;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ConfigError, std::string("malformed probe record: ") + e.what());
    }
}

void save_probe(const LinearProbe& probe, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
    out << probe_to_json(probe).dump(2) << '\n';
}

LinearProbe load_probe(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot read " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ConfigError, path + ": " + e.what());
    }
    return probe_from_json(doc);
}

}  // namespace rclarc
