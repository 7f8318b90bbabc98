// Runs the threshold selection over a measured degradation table.
// Usage: select_from_table <metric csv> [threshold_pct]

#include <cstdio>
#include <cstdlib>

#include "mxcomm/mxcomm.hpp"

int main(int argc, char** argv) {
  using namespace mxcomm;
  if (argc < 2) {
    std::fprintf(stderr, "usage: %s table.csv [threshold_pct]\n", argv[0]);
    return 2;
  }
  try {
    const MetricTable table = load_metric_table(argv[1]);
    SearchConfig cfg;
    cfg.grid = table.schemes();
    if (argc > 2) cfg.threshold_pct = std::atof(argv[2]);
    const auto results = run_grid(cfg, table.evaluator());
    for (const auto& r : results) {
      std::printf("%-20s %7.4f %7.2f%%\n", scheme_name(r.scheme).c_str(), r.effective_bits.to_double(),
                  r.metric_increase_pct);
    }
    const Selection sel = select_scheme(results, cfg.threshold_pct);
    std::printf("selected %s%s\n", scheme_name(sel.chosen.scheme).c_str(),
                sel.below_threshold_empty ? " (nothing below threshold)" : "");
  } catch (const Error& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 3;
  }
}
