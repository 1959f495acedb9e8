# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled log-likelihood walk kernels.

Uniforms are read one at a time from the numpy bit generator behind the
supplied ``Generator``; see ``_walk_py`` for the reference semantics.
"""
import numpy as np

cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer
from numpy.random cimport bitgen_t

cnp.import_array()


cdef inline bitgen_t* _bitgen(object rng) except NULL:
    return <bitgen_t*> PyCapsule_GetPointer(rng.bit_generator.capsule, "BitGenerator")


cdef inline double _lam(long long n, long long k, double s_plus, double s_minus) noexcept nogil:
    return (<double> k) * s_plus - (<double> (n - k)) * s_minus


cdef inline int _code(double lam, double upper, double lower) noexcept nogil:
    if lam >= upper:
        return 1
    if lam <= lower:
        return -1
    return 0


def bernoulli_walk(object rng, double p, int hit, int miss, double s_plus,
                   double s_minus, double upper, double lower, long long cap):
    cdef bitgen_t* bg = _bitgen(rng)
    cdef long long n = 0, k = 0
    cdef int code = 0
    with rng.bit_generator.lock:
        with nogil:
            while n < cap:
                n += 1
                if bg.next_double(bg.state) < p:
                    k += hit
                else:
                    k += miss
                code = _code(_lam(n, k, s_plus, s_minus), upper, lower)
                if code != 0:
                    break
    return n, k, code


def bits_walk(object bits, double s_plus, double s_minus, double upper,
              double lower, long long cap):
    cdef const unsigned char[::1] b = np.ascontiguousarray(bits, dtype=np.uint8)
    cdef long long limit = min(<long long> b.shape[0], cap)
    cdef long long n = 0, k = 0
    cdef int code = 0
    with nogil:
        while n < limit:
            k += b[n]
            n += 1
            code = _code(_lam(n, k, s_plus, s_minus), upper, lower)
            if code != 0:
                break
    return n, k, code


def pair_walks(object rng, long long pairs, double p, int hit, int miss,
               double s_plus, double s_minus, double upper, double lower,
               long long cap, long long flip_index):
    cdef bitgen_t* bg = _bitgen(rng)
    tau1_arr = np.zeros(pairs, dtype=np.int64)
    tau0_arr = np.zeros(pairs, dtype=np.int64)
    code1_arr = np.zeros(pairs, dtype=np.int8)
    code0_arr = np.zeros(pairs, dtype=np.int8)
    cdef long long[::1] tau1 = tau1_arr
    cdef long long[::1] tau0 = tau0_arr
    cdef signed char[::1] code1 = code1_arr
    cdef signed char[::1] code0 = code0_arr
    cdef long long j, n, k1, k0
    cdef int c1, c0, bit1, bit0
    with rng.bit_generator.lock:
        with nogil:
            for j in range(pairs):
                n = 0
                k1 = 0
                k0 = 0
                c1 = 0
                c0 = 0
                while n < cap and (c1 == 0 or c0 == 0):
                    n += 1
                    if bg.next_double(bg.state) < p:
                        bit1 = hit
                    else:
                        bit1 = miss
                    bit0 = bit1
                    if n == flip_index:
                        bit1 = 1
                        bit0 = 0
                    if c1 == 0:
                        k1 += bit1
                        c1 = _code(_lam(n, k1, s_plus, s_minus), upper, lower)
                        if c1 != 0 or n == cap:
                            tau1[j] = n
                            code1[j] = c1
                    if c0 == 0:
                        k0 += bit0
                        c0 = _code(_lam(n, k0, s_plus, s_minus), upper, lower)
                        if c0 != 0 or n == cap:
                            tau0[j] = n
                            code0[j] = c0
    return tau1_arr, tau0_arr, code1_arr, code0_arr
