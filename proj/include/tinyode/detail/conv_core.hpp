#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "tinyode/fixed.hpp"
#include "tinyode/layers.hpp"
#include "tinyode/parallel.hpp"

namespace tinyode::detail {

// 48-bit accumulator that checks every addition; used when a layer's
// worst-case bound does not prove the fast path safe.
struct CheckedAcc {
  std::int64_t v = 0;
  CheckedAcc& operator+=(std::int64_t term) {
    std::int64_t next = 0;
    if (__builtin_add_overflow(v, term, &next) || next > AccumulatorSpec::kMax || next < AccumulatorSpec::kMin) {
      throw AccumulatorOverflow("fixed-point accumulator exceeded 48 bits");
    }
    v = next;
    return *this;
  }
  explicit operator std::int64_t() const { return v; }
};

inline std::int64_t acc_value(std::int64_t v) { return v; }
inline std::int64_t acc_value(const CheckedAcc& a) { return a.v; }
inline double acc_value(double v) { return v; }

// Runs one convolution, handing each finished output-channel plane of
// accumulators to `finish(oc, plane)`. Output channels are distributed over
// threads; within a plane every element is reduced in (ic, kh, kw) order.
template <class Prod, class Acc, class In, class Wt, class Finish>
void conv_planes(const ConvGeometry& g, std::size_t h, std::size_t w, std::span<const In> x, std::span<const Wt> wt,
                 Finish&& finish) {
  const std::size_t oh = g.out_size(h), ow = g.out_size(w);
  const std::size_t k = g.kernel, s = g.stride;
  const long long pad = static_cast<long long>(g.padding);
  const std::size_t per_filter = g.fan_in();
  parallel_for(g.out_ch, [&](std::size_t oc) {
    std::vector<Acc> acc(oh * ow, Acc{});
    const std::size_t ic_begin = g.depthwise ? oc : 0;
    const std::size_t ic_end = g.depthwise ? oc + 1 : g.in_ch;
    for (std::size_t ic = ic_begin; ic < ic_end; ++ic) {
      const In* xp = x.data() + ic * h * w;
      const Wt* wp = wt.data() + oc * per_filter + (ic - ic_begin) * k * k;
      for (std::size_t kh = 0; kh < k; ++kh) {
        for (std::size_t kw = 0; kw < k; ++kw) {
          const Prod wv = static_cast<Prod>(wp[kh * k + kw]);
          // Valid output columns: 0 <= ox*s + kw - pad < w.
          const long long off = static_cast<long long>(kw) - pad;
          long long ox_lo = 0;
          if (off < 0) ox_lo = (-off + static_cast<long long>(s) - 1) / static_cast<long long>(s);
          long long ox_hi = static_cast<long long>(ow);
          const long long lim = (static_cast<long long>(w) - 1 - off);
          if (lim < 0) continue;
          ox_hi = std::min<long long>(ox_hi, lim / static_cast<long long>(s) + 1);
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const long long iy = static_cast<long long>(oy * s + kh) - pad;
            if (iy < 0 || iy >= static_cast<long long>(h)) continue;
            const In* row = xp + static_cast<std::size_t>(iy) * w;
            Acc* out = acc.data() + oy * ow;
            for (long long ox = ox_lo; ox < ox_hi; ++ox) {
              out[ox] += wv * static_cast<Prod>(row[ox * static_cast<long long>(s) + off]);
            }
          }
        }
      }
    }
    finish(oc, std::span<const Acc>(acc));
  });
}

}  // namespace tinyode::detail
