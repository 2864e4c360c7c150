#include "rclarc/concepts.hpp"
#include "rclarc/errors.hpp"
#include "rclarc/log.hpp"

#include <algorithm>
#include <fstream>

namespace rclarc {

const char* cav_method_name(CavMethod method) { return method == CavMethod::Pattern ? "pattern" : "filter"; }

CavMethod cav_method_from_name(const std::string& name) {
    if (name == "pattern") return CavMethod::Pattern;
    if (name == "filter") return CavMethod::Filter;
    throw Error(ErrorCode::ConfigError, "unknown CAV method '" + name + "'");
}

void ConceptDef::validate(std::size_t num_classes) const {
    if (positives.empty() || negatives.empty()) {
        throw Error(ErrorCode::InvalidArgument, "concept '" + id + "' needs positives and negatives");
    }
    std::vector<std::size_t> pos(positives), neg(negatives);
    std::sort(pos.begin(), pos.end());
    std::sort(neg.begin(), neg.end());
    std::vector<std::size_t> common;
    std::set_intersection(pos.begin(), pos.end(), neg.begin(), neg.end(), std::back_inserter(common));
    if (!common.empty()) {
        throw Error(ErrorCode::InvalidArgument, "concept '" + id + "' has samples in both X+ and X-");
    }
    for (std::size_t c : associated_classes) {
        if (c >= num_classes) throw Error(ErrorCode::InvalidArgument, "concept '" + id + "' names unknown class");
    }
}

namespace {

void check_sets(std::span<const Vector> positives, std::span<const Vector> negatives) {
    if (positives.empty() || negatives.empty()) {
        throw Error(ErrorCode::InvalidArgument, "CAV estimation needs nonempty positive and negative sets");
    }
    const std::size_t dim = positives.front().size();
    for (const auto& v : positives) require_same_dim(v.size(), dim, "CAV positive");
    for (const auto& v : negatives) require_same_dim(v.size(), dim, "CAV negative");
}

}  // namespace

Cav pattern_cav(std::span<const Vector> positives, std::span<const Vector> negatives) {
    check_sets(positives, negatives);
    const Vector mean_pos = mean_of(positives);
    Vector mean_neg = mean_of(negatives);
    const Vector gap = subtract(mean_pos, mean_neg);
    if (norm(gap) < 1e-12) throw Error(ErrorCode::DegenerateConcept, "positive and negative means coincide");
    Cav cav;
    cav.method = CavMethod::Pattern;
    cav.direction = normalized(gap);
    cav.z_neg = std::move(mean_neg);
    cav.provenance["n_positives"] = positives.size();
    cav.provenance["n_negatives"] = negatives.size();
    return cav;
}

Cav filter_cav(std::span<const Vector> positives, std::span<const Vector> negatives, const SvmConfig& config) {
    check_sets(positives, negatives);
    const SvmModel svm = train_linear_svm(positives, negatives, config);
    if (norm(svm.weight) == 0.0) throw Error(ErrorCode::DegenerateConcept, "SVM weight vector is zero");
    if (!svm.converged) log_warning("filter CAV solver stopped at the iteration budget before converging");
    Cav cav;
    cav.method = CavMethod::Filter;
    cav.direction = normalized(svm.weight);
    cav.z_neg = mean_of(negatives);
    cav.provenance["n_positives"] = positives.size();
    cav.provenance["n_negatives"] = negatives.size();
    cav.provenance["svm_lambda"] = config.lambda;
    cav.provenance["solver_converged"] = svm.converged;
    cav.provenance["solver_iterations"] = svm.iterations;
    cav.provenance["solver_objective"] = svm.objective;
    cav.provenance["svm_bias"] = svm.bias;
    return cav;
}

AlignmentScore alignment_score(const Cav& cav, const PairedSet& pairs) {
    if (pairs.empty()) throw Error(ErrorCode::InvalidArgument, "alignment needs at least one pair");
    AlignmentScore out;
    double total = 0.0;
    for (const auto& [clean, poisoned] : pairs.pairs) {
        const Vector diff = subtract(poisoned, clean);
        if (norm(diff) == 0.0) {
            ++out.skipped;
            continue;
        }
        total += cosine_similarity(cav.direction, diff);
        ++out.used;
    }
    if (out.used == 0) throw Error(ErrorCode::DegenerateConcept, "every pair has zero activation difference");
    if (out.skipped > 0) {
        log_warning("alignment skipped " + std::to_string(out.skipped) + " pairs with zero activation difference");
    }
    out.score = total / static_cast<double>(out.used);
    return out;
}

double cav_activation(const Cav& cav, std::span<const double> activation) {
    require_same_dim(activation.size(), cav.dim(), "CAV activation");
    double s = 0.0;
    for (std::size_t i = 0; i < activation.size(); ++i) s += cav.direction[i] * (activation[i] - cav.z_neg[i]);
    return s;
}

CosineTable class_direction_cosines(std::span<const Cav> cavs, std::span<const Vector> class_means,
                                    std::span<const double> global_mean) {
    CosineTable table;
    table.values = Matrix(cavs.size(), class_means.size());
    table.missing.assign(cavs.size() * class_means.size(), false);
    for (std::size_t d = 0; d < class_means.size(); ++d) {
        const Vector dir = subtract(class_means[d], global_mean);
        const bool degenerate = norm(dir) < 1e-12 * (1.0 + norm(global_mean));
        for (std::size_t i = 0; i < cavs.size(); ++i) {
            if (degenerate) {
                table.missing[i * class_means.size() + d] = true;
                continue;
            }
            table.values(i, d) = cosine_similarity(cavs[i].direction, dir);
        }
    }
    return table;
}

nlohmann::json cav_to_json(const Cav& cav) {
    return {{"concept_id", cav.concept_id},
            {"layer", cav.layer},
            {"method", cav_method_name(cav.method)},
            {"direction", cav.direction},
            {"z_neg", cav.z_neg},
            {"negative_ids", cav.negative_ids},
            {"provenance", cav.provenance}};
}

Cav cav_from_json(const nlohmann::json& doc) {
    try {
        Cav cav;
        cav.concept_id = doc.at("concept_id").get<std::string>();
        cav.layer = doc.at("layer").get<std::size_t>();
        cav.method = cav_method_from_name(doc.at("method").get<std::string>());
        cav.direction = doc.at("direction").get<Vector>();
        cav.z_neg = doc.at("z_neg").get<Vector>();
        if (doc.contains("negative_ids")) cav.negative_ids = doc.at("negative_ids").get<std::vector<std::size_t>>();
        if (doc.contains("provenance")) cav.provenance = doc.at("provenance");
        require_same_dim(cav.direction.size(), cav.z_neg.size(), "CAV direction vs z_neg");
        require_finite(cav.direction, "CAV direction");
        require_finite(cav.z_neg, "CAV z_neg");
        return cav;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ConfigError, std::string("malformed CAV record: ") + e.what());
    }
}

void save_cavs(std::span<const Cav> cavs, const std::string& path) {
    nlohmann::json doc = nlohmann::json::array();
    for (const auto& cav : cavs) doc.push_back(cav_to_json(cav));
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
    out << doc.dump(2) << '\n';
}

std::vector<Cav> load_cavs(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot read " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ConfigError, path + ": " + e.what());
    }
    if (!doc.is_array()) throw Error(ErrorCode::ConfigError, path + ": CAV bank must be a JSON array");
    std::vector<Cav> cavs;
    for (const auto& rec : doc) cavs.push_back(cav_from_json(rec));
    return cavs;
}

}  // namespace rclarc
