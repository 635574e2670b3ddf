#include "marl/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace marl {

std::string format_g9(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

std::string metrics_csv_header() {
    return "episode,env_steps,epsilon,loss_td,loss_aux,loss_total,train_return_mean,"
           "test_win_rate,test_return_mean,mean_sparse_support";
}

std::string metrics_csv_row(const MetricsRow& r) {
    std::string s;
    s += std::to_string(r.episode);
    s += ',';
    s += std::to_string(r.env_steps);
    for (double v : {r.epsilon, r.loss_td, r.loss_aux, r.loss_total, r.train_return_mean,
                     r.test_win_rate, r.test_return_mean, r.mean_sparse_support}) {
        s += ',';
        s += format_g9(v);
    }
    return s;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << metrics_csv_header() << "\n";
    for (const auto& r : rows) out << metrics_csv_row(r) << "\n";
}

Quartiles quartiles(std::vector<double> xs) {
    if (xs.empty()) return {};
    std::sort(xs.begin(), xs.end());
    auto at = [&](double p) {
        const double pos = p * (xs.size() - 1);
        const size_t lo = static_cast<size_t>(pos);
        const size_t hi = std::min(lo + 1, xs.size() - 1);
        const double frac = pos - lo;
        return xs[lo] * (1.0 - frac) + xs[hi] * frac;
    };
    return Quartiles{at(0.25), at(0.5), at(0.75)};
}

}  // namespace marl
