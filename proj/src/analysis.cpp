#include "ltp/analysis.hpp"

#include "ltp/checkpoint.hpp"
#include "ltp/config.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace ltp {

std::vector<CdfPoint> empirical_cdf(std::span<const double> w) {
    std::vector<double> sq(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
        sq[i] = w[i] * w[i];
    }
    std::sort(sq.begin(), sq.end());
    std::vector<CdfPoint> out(sq.size());
    for (std::size_t i = 0; i < sq.size(); ++i) {
        out[i] = {sq[i], static_cast<double>(i + 1) / static_cast<double>(sq.size())};
    }
    return out;
}

LayerAnalysis analyze_layer(const Model& original, const Model& pruned, std::size_t layer_id) {
    if (layer_id >= original.registry().size() || layer_id >= pruned.registry().size()) {
        throw std::invalid_argument("analyze_layer: no layer with id " + std::to_string(layer_id));
    }
    const auto& a = original.registry()[layer_id];
    const auto& b = pruned.registry()[layer_id];
    if (a.w.shape() != b.w.shape()) {
        throw std::invalid_argument("analyze_layer: shape mismatch " + shape_str(a.w.shape()) + " vs " +
                                    shape_str(b.w.shape()));
    }
    LayerAnalysis r;
    r.name = b.name;
    r.tau = b.tau;
    r.original_cdf = empirical_cdf(a.w.data());
    r.pruned_cdf = empirical_cdf(b.w.data());
    auto wa = a.w.data();
    auto wb = b.w.data();
    // a finalized layer's frozen mask decides membership, not its threshold
    const bool mask_a = a.mode == PruneMode::hard && !a.mask.empty();
    const bool use_mask = b.mode == PruneMode::hard && !b.mask.empty();
    for (std::size_t k = 0; k < wa.size(); ++k) {
        r.w_sq_original.push_back(wa[k] * wa[k]);
        r.w_sq_pruned.push_back(wb[k] * wb[k]);
        const bool was_kept = mask_a ? a.mask[k] != 0 : is_kept(wa[k], r.tau);
        const bool now_kept = use_mask ? b.mask[k] != 0 : is_kept(wb[k], r.tau);
        r.kept_though_small += (!was_kept && now_kept) ? 1 : 0;
        r.pruned_though_large += (was_kept && !now_kept) ? 1 : 0;
    }
    return r;
}

std::string cdf_csv(const LayerAnalysis& a) {
    std::ostringstream os;
    os << "series,w_sq,cdf\n";
    for (const auto& p : a.original_cdf) {
        os << "original," << format_double(p.w_sq) << ',' << format_double(p.cdf) << '\n';
    }
    for (const auto& p : a.pruned_cdf) {
        os << "pruned," << format_double(p.w_sq) << ',' << format_double(p.cdf) << '\n';
    }
    os << "threshold," << format_double(a.tau) << ",\n";
    return os.str();
}

std::string scatter_csv(const LayerAnalysis& a) {
    std::ostringstream os;
    os << "kind,w_sq_original,w_sq_pruned\n";
    for (std::size_t k = 0; k < a.w_sq_original.size(); ++k) {
        os << "weight," << format_double(a.w_sq_original[k]) << ',' << format_double(a.w_sq_pruned[k]) << '\n';
    }
    os << "threshold," << format_double(a.tau) << ',' << format_double(a.tau) << '\n';
    return os.str();
}

void write_layer_analysis(const LayerAnalysis& a, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_file_atomic(dir / "cdf.csv", cdf_csv(a));
    write_file_atomic(dir / "scatter.csv", scatter_csv(a));
}

} // namespace ltp
