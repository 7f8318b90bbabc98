// Compresses a Gaussian activation tensor under a few schemes and reports
// wire size and SQNR.

#include <cstdio>

#include "mxcomm/mxcomm.hpp"

int main() {
  using namespace mxcomm;
  const Tensor x = gaussian_tensor({2, 128, 8192}, 42, {0.0, 1.0});
  std::printf("%-22s %10s %8s %9s\n", "scheme", "bytes", "bits", "sqnr_db");
  for (const char* name : {"fp3_e1m1:8:e5m0", "fp4_e2m1:32:e8m0", "fp4_e2m1:8:e5m0", "fp5_e2m2:32:e5m0"}) {
    const SchemeDescriptor s = parse_scheme(name);
    const auto bytes = serialize(compress_tensor(x, s));
    const Tensor y = decompress_tensor(deserialize(bytes));
    const ErrorStats e = compare(std::span<const float>(x.data), std::span<const float>(y.data));
    std::printf("%-22s %10zu %8.4f %9.2f\n", name, bytes.size(), effective_bits(s).to_double(), e.sqnr_db);
  }
  std::printf("fp16 reference: %llu bytes\n", static_cast<unsigned long long>(2 * x.size()));
}
