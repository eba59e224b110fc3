#pragma once

// Register-blocked unit-stride 3-D correlation for small cubic kernels.
// Each output row is computed in vector-width chunks for a block of output
// channels, so no im2col buffer is needed. Summation order is fixed.

#include <algorithm>
#include <cstdint>
#include <vector>

namespace fbd::ops::direct {

inline constexpr int kChannelBlock = 8;

template <typename T>
constexpr int lanes() {
  return static_cast<int>(64 / sizeof(T));
}

inline std::int64_t round_up(std::int64_t n, std::int64_t m) { return (n + m - 1) / m * m; }

struct Dims {
  std::int64_t ci, d, h, w;  // input
  std::int64_t co, od, oh, ow;  // output
  int pad;
};

// Zero-padded copy of the input, [ci][d+2p][h+2p][Wp] with Wp wide enough for
// full-vector reads past the last valid output column.
template <typename T, int K>
std::vector<T> pad_input(const Dims& s, const T* in, std::int64_t& dp, std::int64_t& hp, std::int64_t& wp) {
  dp = s.d + 2 * s.pad;
  hp = s.h + 2 * s.pad;
  wp = round_up(s.ow, lanes<T>()) + K - 1;
  std::vector<T> out(static_cast<std::size_t>(s.ci * dp * hp * wp), T(0));
  for (std::int64_t c = 0; c < s.ci; ++c)
    for (std::int64_t z = 0; z < s.d; ++z)
      for (std::int64_t y = 0; y < s.h; ++y) {
        const T* src = in + ((c * s.d + z) * s.h + y) * s.w;
        T* dst = out.data() + ((c * dp + z + s.pad) * hp + y + s.pad) * wp + s.pad;
        std::copy(src, src + s.w, dst);
      }
  return out;
}

// out[co][z][y][x] = sum_{ci,a,b,e} w[co][ci][a][b][e] * in[ci][z+a-p][y+b-p][x+e-p]
template <typename T, int K>
void forward(const Dims& s, const T* in, const T* weight, T* out) {
  constexpr int VL = lanes<T>();
  constexpr int CB = kChannelBlock;
  std::int64_t dp, hp, wp;
  const std::vector<T> padded = pad_input<T, K>(s, in, dp, hp, wp);
  const std::int64_t blocks = (s.co + CB - 1) / CB;
  const std::int64_t taps = std::int64_t{K} * K * K;
  // Weights regrouped as [block][ci][a][b][e][CB], zero for missing channels.
  std::vector<T> wpk(static_cast<std::size_t>(blocks * s.ci * taps * CB), T(0));
  for (std::int64_t co = 0; co < s.co; ++co)
    for (std::int64_t ci = 0; ci < s.ci; ++ci)
      for (std::int64_t t = 0; t < taps; ++t)
        wpk[static_cast<std::size_t>((((co / CB) * s.ci + ci) * taps + t) * CB + co % CB)] =
            weight[(co * s.ci + ci) * taps + t];

  const std::int64_t plane = s.oh * s.ow;
  const std::int64_t vol = s.od * plane;
  for (std::int64_t blk = 0; blk < blocks; ++blk) {
    const std::int64_t co0 = blk * CB;
    const int cn = static_cast<int>(std::min<std::int64_t>(CB, s.co - co0));
    for (std::int64_t z = 0; z < s.od; ++z)
      for (std::int64_t y = 0; y < s.oh; ++y)
        for (std::int64_t x0 = 0; x0 < s.ow; x0 += VL) {
          alignas(64) T acc[CB][VL] = {};
          for (std::int64_t ci = 0; ci < s.ci; ++ci) {
            const T* wk = wpk.data() + ((blk * s.ci + ci) * taps) * CB;
            for (int a = 0; a < K; ++a)
              for (int b = 0; b < K; ++b) {
                const T* row = padded.data() + ((ci * dp + z + a) * hp + y + b) * wp + x0;
                const T* wr = wk + (a * K + b) * K * CB;
#pragma GCC unroll 3
                for (int e = 0; e < K; ++e) {
#pragma GCC unroll 8
                  for (int c = 0; c < CB; ++c) {
                    const T wv = wr[e * CB + c];
#pragma GCC unroll 16
                    for (int j = 0; j < VL; ++j) acc[c][j] += wv * row[e + j];
                  }
                }
              }
          }
          const int n = static_cast<int>(std::min<std::int64_t>(VL, s.ow - x0));
          for (int c = 0; c < cn; ++c) {
            T* dst = out + (co0 + c) * vol + z * plane + y * s.ow + x0;
            for (int j = 0; j < n; ++j) dst[j] = acc[c][j];
          }
        }
  }
}

}  // namespace fbd::ops::direct
