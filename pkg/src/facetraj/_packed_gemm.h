/* Row-major C = A @ B (+ C) for the GRU time loops.
 *
 * B is constant over a whole sequence, so it is packed once into column
 * panels of PG_NR and every step runs a 4 x 32 AVX-512 register tile over
 * it. BLAS re-packs B on each call, which dominates at 32-row products.
 * pg_available() is false without AVX-512 at run time; callers then use
 * dgemm. Requires N % PG_NR == 0.
 */
#ifndef FACETRAJ_PACKED_GEMM_H
#define FACETRAJ_PACKED_GEMM_H

#include <stddef.h>
#include <string.h>

#define PG_NR 32
#define PG_MR 4

static void pg_pack(int K, int N, const double* B, int ldb, double* Bp) {
    for (int jp = 0; jp < N; jp += PG_NR)
        for (int k = 0; k < K; k++)
            memcpy(Bp + (size_t)jp * K + (size_t)k * PG_NR, B + (size_t)k * ldb + jp, PG_NR * sizeof(double));
}

#if defined(__GNUC__) && defined(__x86_64__)
#include <immintrin.h>

static int pg_available(void) {
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx512f");
}

#define PG_ROW(r, ar) \
    a = _mm512_set1_pd(ar[k]); \
    c##r##0 = _mm512_fmadd_pd(a, b0, c##r##0); c##r##1 = _mm512_fmadd_pd(a, b1, c##r##1); \
    c##r##2 = _mm512_fmadd_pd(a, b2, c##r##2); c##r##3 = _mm512_fmadd_pd(a, b3, c##r##3);

#define PG_STORE(r) { \
    double* c = C + (size_t)(i + r) * ldc + jp; \
    if (accumulate) { \
        c##r##0 = _mm512_add_pd(c##r##0, _mm512_loadu_pd(c));      c##r##1 = _mm512_add_pd(c##r##1, _mm512_loadu_pd(c + 8)); \
        c##r##2 = _mm512_add_pd(c##r##2, _mm512_loadu_pd(c + 16)); c##r##3 = _mm512_add_pd(c##r##3, _mm512_loadu_pd(c + 24)); } \
    _mm512_storeu_pd(c, c##r##0);      _mm512_storeu_pd(c + 8, c##r##1); \
    _mm512_storeu_pd(c + 16, c##r##2); _mm512_storeu_pd(c + 24, c##r##3); }

__attribute__((target("avx512f")))
static void pg_gemm(int M, int N, int K, const double* A, int lda, const double* Bp,
                    int accumulate, double* C, int ldc) {
    for (int jp = 0; jp < N; jp += PG_NR) {
        const double* P = Bp + (size_t)jp * K;
        int i = 0;
        for (; i + PG_MR <= M; i += PG_MR) {
            __m512d c00 = _mm512_setzero_pd(), c01 = c00, c02 = c00, c03 = c00;
            __m512d c10 = c00, c11 = c00, c12 = c00, c13 = c00;
            __m512d c20 = c00, c21 = c00, c22 = c00, c23 = c00;
            __m512d c30 = c00, c31 = c00, c32 = c00, c33 = c00;
            const double* a0 = A + (size_t)i * lda;
            const double* a1 = a0 + lda;
            const double* a2 = a1 + lda;
            const double* a3 = a2 + lda;
            for (int k = 0; k < K; k++) {
                const double* p = P + (size_t)k * PG_NR;
                __m512d b0 = _mm512_loadu_pd(p), b1 = _mm512_loadu_pd(p + 8);
                __m512d b2 = _mm512_loadu_pd(p + 16), b3 = _mm512_loadu_pd(p + 24);
                __m512d a;
                PG_ROW(0, a0) PG_ROW(1, a1) PG_ROW(2, a2) PG_ROW(3, a3)
            }
            PG_STORE(0) PG_STORE(1) PG_STORE(2) PG_STORE(3)
        }
        for (; i < M; i++) {
            for (int j = 0; j < PG_NR; j++) {
                double s = 0.0;
                for (int k = 0; k < K; k++)
                    s += A[(size_t)i * lda + k] * P[(size_t)k * PG_NR + j];
                double* c = C + (size_t)i * ldc + jp + j;
                *c = accumulate ? *c + s : s;
            }
        }
    }
}

#else

static int pg_available(void) { return 0; }

static void pg_gemm(int M, int N, int K, const double* A, int lda, const double* Bp,
                    int accumulate, double* C, int ldc) {
    (void)M; (void)N; (void)K; (void)A; (void)lda; (void)Bp; (void)accumulate; (void)C; (void)ldc;
}

#endif
#endif
