// Quantizes one 8-value block to FP4 E2M1 with an E8M0 scale and prints the
// codes next to the decoded values.

#include <cstdio>
#include <vector>

#include "mxcomm/mxcomm.hpp"

int main() {
  using namespace mxcomm;
  const SchemeDescriptor scheme = parse_scheme("fp4_e2m1:8:e8m0");
  const std::vector<float> block = {0.1f, -0.75f, 2.9f, 6.0f, -13.0f, 0.0f, 1.25f, -0.02f};

  const QuantizedBlock q = quantize_block(std::span<const float>(block), scheme);
  const std::vector<double> back = dequantize_block(q.scale_code, q.codes, scheme);

  std::printf("scheme %s, shared exponent %d (scale code %u)\n", scheme_name(scheme).c_str(),
              q.encoding.shared_exponent, q.scale_code);
  for (std::size_t i = 0; i < block.size(); ++i) {
    std::printf("%8.3f -> code 0x%x -> %8.3f\n", block[i], q.codes[i], back[i]);
  }
}
