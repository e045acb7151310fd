#pragma once

// Row kernels behind the l_p-distance layers.
//
// Every kernel works on a pair of rows (x, w) of length n and never
// materialises the difference vector. Finite-p kernels use the max-factored
// form t_k = |x_k - w_k| / m with m = max_k |x_k - w_k|, so every power is
// taken of a number in [0, 1] and cannot overflow.
//
// The double kernels are plain scalar loops over std::pow. The float kernels
// have AVX-512 and AVX2 bodies (polynomial log/exp, a few ulp of p log t per
// call); they fall back to the scalar path when neither ISA is
// enabled at compile time. Sums are always accumulated in double, lane-wise
// first and then in a fixed horizontal order, so results are bitwise
// reproducible for a given build.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>

#if defined(__AVX512F__) || (defined(__AVX2__) && defined(__FMA__))
#include <immintrin.h>
#endif

namespace ldn::detail {

/// Terms with t^p below this are dropped by the float kernels in whole SIMD
/// blocks. With at most 2^13 terms the dropped mass stays below 1e-8 of the sum.
inline constexpr double kNegligibleTerm = 0x1p-40;

/// Smallest t whose p-th power is not negligible.
inline double negligible_ratio(double p) {
    return p > 0.0 ? std::exp(std::log(kNegligibleTerm) / p) : 0.0;
}

// ---------------------------------------------------------------------------
// Scalar reference kernels (used for double, and for float without SIMD).

template <typename T>
inline T max_abs_diff_scalar(const T* x, const T* w, std::size_t n) {
    T m = T(0);
    for (std::size_t k = 0; k < n; ++k) m = std::max(m, static_cast<T>(std::abs(x[k] - w[k])));
    return m;
}

template <typename T>
inline double pow_ratio_sum_scalar(const T* x, const T* w, std::size_t n, double inv_m, double p) {
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double t = std::abs(static_cast<double>(x[k]) - static_cast<double>(w[k])) * inv_m;
        s += std::pow(t, p);
    }
    return s;
}

template <typename T>
inline void pow_ratio_grad_scalar(const T* x, const T* w, std::size_t n, double inv_m, double p,
                                  double coef, T* gx, T* gw) {
    for (std::size_t k = 0; k < n; ++k) {
        const double v = static_cast<double>(x[k]) - static_cast<double>(w[k]);
        if (v == 0.0) continue;
        const double u = std::pow(std::abs(v) * inv_m, p - 1.0);
        const double g = coef * (v > 0.0 ? u : -u);
        if (gx) gx[k] += static_cast<T>(g);
        if (gw) gw[k] -= static_cast<T>(g);
    }
}

// ---------------------------------------------------------------------------
// SIMD float kernels.

#if defined(__AVX512F__)

// t^p for t in [0, 1] and p > 0 as 2^(p log2 t). log2 uses the atanh series on
// the mantissa in [0.75, 1.5); 2^f uses a degree-6 polynomial on [-0.5, 0.5].
// Results below 2^-126 are flushed to 0.
inline __m512 pow_unit(__m512 t, __m512 p) {
    const __m512 one = _mm512_set1_ps(1.f);
    const __m512 m = _mm512_getmant_ps(t, _MM_MANT_NORM_p75_1p5, _MM_MANT_SIGN_zero);
    const __m512 e = _mm512_getexp_ps(_mm512_mul_ps(t, _mm512_set1_ps(1.33333333f)));
    const __m512 s = _mm512_div_ps(_mm512_sub_ps(m, one), _mm512_add_ps(m, one));
    const __m512 s2 = _mm512_mul_ps(s, s);
    __m512 q = _mm512_set1_ps(3.2059889e-1f);
    q = _mm512_fmadd_ps(q, s2, _mm512_set1_ps(4.1219858e-1f));
    q = _mm512_fmadd_ps(q, s2, _mm512_set1_ps(5.7707802e-1f));
    q = _mm512_fmadd_ps(q, s2, _mm512_set1_ps(9.6179669e-1f));
    q = _mm512_fmadd_ps(q, s2, _mm512_set1_ps(2.8853901f));
    const __m512 y = _mm512_max_ps(_mm512_mul_ps(p, _mm512_fmadd_ps(q, s, e)), _mm512_set1_ps(-126.f));
    const __m512 n = _mm512_roundscale_ps(y, _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
    const __m512 f = _mm512_sub_ps(y, n);
    __m512 r = _mm512_set1_ps(1.5353362e-4f);
    r = _mm512_fmadd_ps(r, f, _mm512_set1_ps(1.3398874e-3f));
    r = _mm512_fmadd_ps(r, f, _mm512_set1_ps(9.6181291e-3f));
    r = _mm512_fmadd_ps(r, f, _mm512_set1_ps(5.5504109e-2f));
    r = _mm512_fmadd_ps(r, f, _mm512_set1_ps(2.4022650e-1f));
    r = _mm512_fmadd_ps(r, f, _mm512_set1_ps(6.9314718e-1f));
    r = _mm512_fmadd_ps(r, f, one);
    const __mmask16 live = _mm512_cmp_ps_mask(y, _mm512_set1_ps(-126.f), _CMP_GT_OQ);
    return _mm512_maskz_scalef_ps(live, r, n);
}

inline __mmask16 tail_mask16(std::size_t remaining) {
    return remaining >= 16 ? __mmask16(0xffff) : static_cast<__mmask16>((1u << remaining) - 1u);
}

inline __m512 abs_ps(__m512 v) {
    return _mm512_castsi512_ps(_mm512_and_si512(_mm512_castps_si512(v), _mm512_set1_epi32(0x7fffffff)));
}

inline float max_abs_diff_simd(const float* x, const float* w, std::size_t n) {
    __m512 m = _mm512_setzero_ps();
    for (std::size_t k = 0; k < n; k += 16) {
        const __mmask16 mk = tail_mask16(n - k);
        const __m512 v = _mm512_sub_ps(_mm512_maskz_loadu_ps(mk, x + k), _mm512_maskz_loadu_ps(mk, w + k));
        m = _mm512_max_ps(m, abs_ps(v));
    }
    return _mm512_reduce_max_ps(m);
}

inline double pow_ratio_sum_simd(const float* x, const float* w, std::size_t n, double inv_m, double p) {
    const __m512 inv = _mm512_set1_ps(static_cast<float>(inv_m));
    const __m512 pp = _mm512_set1_ps(static_cast<float>(p));
    const __m512 thr = _mm512_set1_ps(static_cast<float>(negligible_ratio(p)));
    __m512d lo = _mm512_setzero_pd(), hi = _mm512_setzero_pd();
    for (std::size_t k = 0; k < n; k += 16) {
        const __mmask16 mk = tail_mask16(n - k);
        const __m512 v = _mm512_sub_ps(_mm512_maskz_loadu_ps(mk, x + k), _mm512_maskz_loadu_ps(mk, w + k));
        const __m512 t = _mm512_min_ps(_mm512_mul_ps(abs_ps(v), inv), _mm512_set1_ps(1.f));
        if (_mm512_cmp_ps_mask(t, thr, _CMP_GT_OQ) == 0) continue;
        const __m512 e = pow_unit(t, pp);
        lo = _mm512_add_pd(lo, _mm512_cvtps_pd(_mm512_castps512_ps256(e)));
        hi = _mm512_add_pd(hi, _mm512_cvtps_pd(_mm256_castpd_ps(_mm512_extractf64x4_pd(_mm512_castps_pd(e), 1))));
    }
    alignas(64) double lanes[8];
    _mm512_store_pd(lanes, _mm512_add_pd(lo, hi));
    double s = 0.0;
    for (double l : lanes) s += l;
    return s;
}

inline void pow_ratio_grad_simd(const float* x, const float* w, std::size_t n, double inv_m, double p,
                                double coef, float* gx, float* gw) {
    const __m512 inv = _mm512_set1_ps(static_cast<float>(inv_m));
    const __m512 pm1 = _mm512_set1_ps(static_cast<float>(p - 1.0));
    const __m512 thr = _mm512_set1_ps(static_cast<float>(negligible_ratio(p - 1.0)));
    const __m512 c = _mm512_set1_ps(static_cast<float>(coef));
    const __m512i sign_bit = _mm512_set1_epi32(static_cast<int>(0x80000000u));
    for (std::size_t k = 0; k < n; k += 16) {
        const __mmask16 mk = tail_mask16(n - k);
        const __m512 v = _mm512_sub_ps(_mm512_maskz_loadu_ps(mk, x + k), _mm512_maskz_loadu_ps(mk, w + k));
        const __m512 a = abs_ps(v);
        const __m512 t = _mm512_min_ps(_mm512_mul_ps(a, inv), _mm512_set1_ps(1.f));
        if (_mm512_cmp_ps_mask(t, thr, _CMP_GT_OQ) == 0) continue;
        const __mmask16 nonzero = _mm512_cmp_ps_mask(a, _mm512_setzero_ps(), _CMP_GT_OQ);
        __m512 u = _mm512_maskz_mov_ps(nonzero, pow_unit(t, pm1));
        u = _mm512_castsi512_ps(_mm512_or_si512(_mm512_castps_si512(u),
                                                _mm512_and_si512(_mm512_castps_si512(v), sign_bit)));
        const __m512 g = _mm512_mul_ps(c, u);
        if (gx) _mm512_mask_storeu_ps(gx + k, mk, _mm512_add_ps(_mm512_maskz_loadu_ps(mk, gx + k), g));
        if (gw) _mm512_mask_storeu_ps(gw + k, mk, _mm512_sub_ps(_mm512_maskz_loadu_ps(mk, gw + k), g));
    }
}

#define LDN_HAVE_SIMD_KERNELS 1

#elif defined(__AVX2__) && defined(__FMA__)

inline __m256 log_ps(__m256 x) {
    const __m256 one = _mm256_set1_ps(1.f);
    x = _mm256_max_ps(x, _mm256_castsi256_ps(_mm256_set1_epi32(0x00800000)));
    __m256i ex = _mm256_srli_epi32(_mm256_castps_si256(x), 23);
    x = _mm256_and_ps(x, _mm256_castsi256_ps(_mm256_set1_epi32(static_cast<int>(~0x7f800000u))));
    x = _mm256_or_ps(x, _mm256_set1_ps(0.5f));
    ex = _mm256_sub_epi32(ex, _mm256_set1_epi32(0x7f));
    __m256 e = _mm256_add_ps(_mm256_cvtepi32_ps(ex), one);
    const __m256 small = _mm256_cmp_ps(x, _mm256_set1_ps(0.707106781186547524f), _CMP_LT_OS);
    const __m256 tmp = _mm256_and_ps(x, small);
    x = _mm256_sub_ps(x, one);
    e = _mm256_sub_ps(e, _mm256_and_ps(one, small));
    x = _mm256_add_ps(x, tmp);
    const __m256 z = _mm256_mul_ps(x, x);
    __m256 y = _mm256_set1_ps(7.0376836292E-2f);
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(-1.1514610310E-1f));
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.1676998740E-1f));
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(-1.2420140846E-1f));
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.4249322787E-1f));
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(-1.6668057665E-1f));
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(2.0000714765E-1f));
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(-2.4999993993E-1f));
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(3.3333331174E-1f));
    y = _mm256_mul_ps(_mm256_mul_ps(y, x), z);
    y = _mm256_fmadd_ps(e, _mm256_set1_ps(-2.12194440e-4f), y);
    y = _mm256_fnmadd_ps(z, _mm256_set1_ps(0.5f), y);
    x = _mm256_add_ps(x, y);
    return _mm256_fmadd_ps(e, _mm256_set1_ps(0.693359375f), x);
}

inline __m256 exp_ps(__m256 x) {
    const __m256 keep = _mm256_cmp_ps(x, _mm256_set1_ps(-87.0f), _CMP_GE_OQ);
    x = _mm256_min_ps(x, _mm256_set1_ps(88.3762626647949f));
    x = _mm256_max_ps(x, _mm256_set1_ps(-88.3762626647949f));
    __m256 fx = _mm256_fmadd_ps(x, _mm256_set1_ps(1.44269504088896341f), _mm256_set1_ps(0.5f));
    fx = _mm256_floor_ps(fx);
    x = _mm256_fnmadd_ps(fx, _mm256_set1_ps(0.693359375f), x);
    x = _mm256_fnmadd_ps(fx, _mm256_set1_ps(-2.12194440e-4f), x);
    const __m256 z = _mm256_mul_ps(x, x);
    __m256 y = _mm256_set1_ps(1.9875691500E-4f);
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.3981999507E-3f));
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(8.3334519073E-3f));
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(4.1665795894E-2f));
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.6666665459E-1f));
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(5.0000001201E-1f));
    y = _mm256_fmadd_ps(y, z, x);
    y = _mm256_add_ps(y, _mm256_set1_ps(1.f));
    __m256i pow2 = _mm256_cvttps_epi32(fx);
    pow2 = _mm256_slli_epi32(_mm256_add_epi32(pow2, _mm256_set1_epi32(0x7f)), 23);
    y = _mm256_mul_ps(y, _mm256_castsi256_ps(pow2));
    return _mm256_and_ps(y, keep);
}

inline __m256i tail_mask8(std::size_t remaining) {
    const __m256i idx = _mm256_setr_epi32(0, 1, 2, 3, 4, 5, 6, 7);
    const int r = static_cast<int>(std::min<std::size_t>(remaining, 8));
    return _mm256_cmpgt_epi32(_mm256_set1_epi32(r), idx);
}

inline __m256 abs_ps(__m256 v) {
    return _mm256_and_ps(v, _mm256_castsi256_ps(_mm256_set1_epi32(0x7fffffff)));
}

inline float max_abs_diff_simd(const float* x, const float* w, std::size_t n) {
    __m256 m = _mm256_setzero_ps();
    for (std::size_t k = 0; k < n; k += 8) {
        const __m256i mk = tail_mask8(n - k);
        const __m256 v = _mm256_sub_ps(_mm256_maskload_ps(x + k, mk), _mm256_maskload_ps(w + k, mk));
        m = _mm256_max_ps(m, abs_ps(v));
    }
    alignas(32) float lanes[8];
    _mm256_store_ps(lanes, m);
    return *std::max_element(lanes, lanes + 8);
}

inline double pow_ratio_sum_simd(const float* x, const float* w, std::size_t n, double inv_m, double p) {
    const __m256 inv = _mm256_set1_ps(static_cast<float>(inv_m));
    const __m256 pp = _mm256_set1_ps(static_cast<float>(p));
    const __m256 thr = _mm256_set1_ps(static_cast<float>(negligible_ratio(p)));
    __m256d lo = _mm256_setzero_pd(), hi = _mm256_setzero_pd();
    for (std::size_t k = 0; k < n; k += 8) {
        const __m256i mk = tail_mask8(n - k);
        const __m256 v = _mm256_sub_ps(_mm256_maskload_ps(x + k, mk), _mm256_maskload_ps(w + k, mk));
        const __m256 t = _mm256_min_ps(_mm256_mul_ps(abs_ps(v), inv), _mm256_set1_ps(1.f));
        if (_mm256_movemask_ps(_mm256_cmp_ps(t, thr, _CMP_GT_OQ)) == 0) continue;
        const __m256 e = exp_ps(_mm256_mul_ps(pp, log_ps(t)));
        lo = _mm256_add_pd(lo, _mm256_cvtps_pd(_mm256_castps256_ps128(e)));
        hi = _mm256_add_pd(hi, _mm256_cvtps_pd(_mm256_extractf128_ps(e, 1)));
    }
    alignas(32) double lanes[4];
    _mm256_store_pd(lanes, _mm256_add_pd(lo, hi));
    return ((lanes[0] + lanes[1]) + lanes[2]) + lanes[3];
}

inline void pow_ratio_grad_simd(const float* x, const float* w, std::size_t n, double inv_m, double p,
                                double coef, float* gx, float* gw) {
    const __m256 inv = _mm256_set1_ps(static_cast<float>(inv_m));
    const __m256 pm1 = _mm256_set1_ps(static_cast<float>(p - 1.0));
    const __m256 thr = _mm256_set1_ps(static_cast<float>(negligible_ratio(p - 1.0)));
    const __m256 c = _mm256_set1_ps(static_cast<float>(coef));
    const __m256 sign_bit = _mm256_castsi256_ps(_mm256_set1_epi32(static_cast<int>(0x80000000u)));
    for (std::size_t k = 0; k < n; k += 8) {
        const __m256i mk = tail_mask8(n - k);
        const __m256 v = _mm256_sub_ps(_mm256_maskload_ps(x + k, mk), _mm256_maskload_ps(w + k, mk));
        const __m256 a = abs_ps(v);
        const __m256 t = _mm256_min_ps(_mm256_mul_ps(a, inv), _mm256_set1_ps(1.f));
        if (_mm256_movemask_ps(_mm256_cmp_ps(t, thr, _CMP_GT_OQ)) == 0) continue;
        const __m256 nonzero = _mm256_cmp_ps(a, _mm256_setzero_ps(), _CMP_GT_OQ);
        __m256 u = _mm256_and_ps(exp_ps(_mm256_mul_ps(pm1, log_ps(t))), nonzero);
        u = _mm256_or_ps(u, _mm256_and_ps(v, sign_bit));
        const __m256 g = _mm256_mul_ps(c, u);
        if (gx) _mm256_maskstore_ps(gx + k, mk, _mm256_add_ps(_mm256_maskload_ps(gx + k, mk), g));
        if (gw) _mm256_maskstore_ps(gw + k, mk, _mm256_sub_ps(_mm256_maskload_ps(gw + k, mk), g));
    }
}

#define LDN_HAVE_SIMD_KERNELS 1

#endif

// ---------------------------------------------------------------------------
// Dispatch.

inline float max_abs_diff(const float* x, const float* w, std::size_t n) {
#ifdef LDN_HAVE_SIMD_KERNELS
    return max_abs_diff_simd(x, w, n);
#else
    return max_abs_diff_scalar(x, w, n);
#endif
}

inline double max_abs_diff(const double* x, const double* w, std::size_t n) {
    return max_abs_diff_scalar(x, w, n);
}

/// Lowest index attaining max_k |x_k - w_k|.
template <typename T>
inline std::size_t argmax_abs_diff(const T* x, const T* w, std::size_t n) {
    const T m = max_abs_diff(x, w, n);
    for (std::size_t k = 0; k < n; ++k)
        if (std::abs(x[k] - w[k]) == m) return k;
    return 0;
}

/// sum_k (|x_k - w_k| * inv_m)^p.
inline double pow_ratio_sum(const float* x, const float* w, std::size_t n, double inv_m, double p) {
#ifdef LDN_HAVE_SIMD_KERNELS
    return pow_ratio_sum_simd(x, w, n, inv_m, p);
#else
    return pow_ratio_sum_scalar(x, w, n, inv_m, p);
#endif
}

inline double pow_ratio_sum(const double* x, const double* w, std::size_t n, double inv_m, double p) {
    return pow_ratio_sum_scalar(x, w, n, inv_m, p);
}

/// gx_k += coef * sign(v_k) * t_k^(p-1) and gw_k -= the same, v = x - w.
/// Either output may be null.
inline void pow_ratio_grad(const float* x, const float* w, std::size_t n, double inv_m, double p,
                           double coef, float* gx, float* gw) {
#ifdef LDN_HAVE_SIMD_KERNELS
    pow_ratio_grad_simd(x, w, n, inv_m, p, coef, gx, gw);
#else
    pow_ratio_grad_scalar(x, w, n, inv_m, p, coef, gx, gw);
#endif
}

inline void pow_ratio_grad(const double* x, const double* w, std::size_t n, double inv_m, double p,
                           double coef, double* gx, double* gw) {
    pow_ratio_grad_scalar(x, w, n, inv_m, p, coef, gx, gw);
}

}  // namespace ldn::detail
