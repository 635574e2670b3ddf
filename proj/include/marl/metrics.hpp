#pragma once

#include <string>
#include <vector>

namespace marl {

// One row per evaluation point. wall_ms is kept out of the CSV so reruns of
// the same config and seed produce byte-identical files; timing is reported
// through summary.json instead.
struct MetricsRow {
    long episode = 0;
    long env_steps = 0;
    double epsilon = 0.0;
    double loss_td = 0.0;
    double loss_aux = 0.0;
    double loss_total = 0.0;
    double train_return_mean = 0.0;
    double test_win_rate = 0.0;
    double test_return_mean = 0.0;
    double wall_ms = 0.0;
    double mean_sparse_support = 0.0;
};

// Floats rendered with 9 significant digits.
std::string format_g9(double v);

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsRow& r);
void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);

struct Quartiles {
    double p25 = 0.0;
    double median = 0.0;
    double p75 = 0.0;
};
// Linear interpolation between closest ranks.
Quartiles quartiles(std::vector<double> xs);

}  // namespace marl
