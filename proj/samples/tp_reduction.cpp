// Row-parallel linear layer: error of the compressed reduction as the TP
// degree grows.

#include <iostream>

#include "mxcomm/mxcomm.hpp"

int main() {
  using namespace mxcomm;
  TPConfig cfg;
  cfg.codec = parse_scheme("fp4_e2m1:32:e8m0");
  cfg.seed = 7;
  cfg.d_in = 512;
  cfg.d_out = 512;
  const int degrees[] = {2, 4, 8};
  const auto reports = parallelism_sweep(cfg, degrees);
  write_reduction_csv(std::cout, reports);
}
