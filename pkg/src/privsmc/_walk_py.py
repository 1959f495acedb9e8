"""Pure numpy implementation of the log-likelihood walk kernels.

Mirrors ``_walk.pyx`` exactly: the same uniforms are consumed in the same
order and the log-likelihood ratio is always recomputed from the counts as
``k * s_plus - (n - k) * s_minus``, so both backends stop at the same step.
Uniforms are drawn in chunks; surplus draws are buffered, never discarded,
where later walks share the stream.

Outcome codes: ``1`` upper bound crossed, ``-1`` lower bound crossed,
``0`` cap reached.
"""
from __future__ import annotations

import numpy as np

_MIN_CHUNK = 256
_MAX_CHUNK = 1 << 16


def _first_crossing(lam: np.ndarray, upper: float, lower: float) -> tuple[int, int]:
    up = lam >= upper
    crossed = up | (lam <= lower)
    if not crossed.any():
        return -1, 0
    i = int(np.argmax(crossed))
    return i, (1 if up[i] else -1)


def _walk_chunk(bits, n0, k0, s_plus, s_minus, upper, lower):
    counts = k0 + np.cumsum(bits, dtype=np.int64)
    steps = n0 + np.arange(1, len(bits) + 1, dtype=np.int64)
    lam = counts * s_plus - (steps - counts) * s_minus
    i, code = _first_crossing(lam, upper, lower)
    if i < 0:
        return n0 + len(bits), int(counts[-1]), 0, False
    return n0 + i + 1, int(counts[i]), code, True


def bernoulli_walk(rng, p, hit, miss, s_plus, s_minus, upper, lower, cap):
    """Walk on bits ``hit if u < p else miss`` with one uniform per step."""
    n = k = 0
    chunk = _MIN_CHUNK
    while n < cap:
        m = min(chunk, cap - n)
        u = rng.random(m)
        bits = np.where(u < p, hit, miss).astype(np.int64)
        n, k, code, done = _walk_chunk(bits, n, k, s_plus, s_minus, upper, lower)
        if done:
            return n, k, code
        chunk = min(chunk * 2, _MAX_CHUNK)
    return n, k, 0


def bits_walk(bits, s_plus, s_minus, upper, lower, cap):
    """Walk over an explicit 0/1 array; stops at a bound, ``cap`` or the array end."""
    bits = np.asarray(bits, dtype=np.int64)[:cap]
    if len(bits) == 0:
        return 0, 0, 0
    n, k, code, _ = _walk_chunk(bits, 0, 0, s_plus, s_minus, upper, lower)
    return n, k, code


class _Buffered:
    """Sequential view over a generator that hands out uniforms by offset."""

    def __init__(self, rng):
        self.rng = rng
        self.buf = np.empty(0)
        self.base = 0  # stream position of buf[0]

    def window(self, start: int, size: int) -> np.ndarray:
        end = start + size
        have = self.base + len(self.buf)
        if end > have:
            extra = max(end - have, _MIN_CHUNK)
            self.buf = np.concatenate([self.buf, self.rng.random(extra)])
        return self.buf[start - self.base:end - self.base]

    def release(self, upto: int) -> None:
        drop = upto - self.base
        if drop > 0:
            self.buf = self.buf[drop:]
            self.base = upto


def pair_walks(rng, pairs, p, hit, miss, s_plus, s_minus, upper, lower, cap, flip_index):
    """Run ``pairs`` adjacent walk pairs on common random numbers.

    Both walks of a pair read the same uniforms; only the bit at the 1-based
    position ``flip_index`` is forced, to 1 in the first walk and 0 in the
    second. A pair consumes ``max(tau1, tau0)`` uniforms from the stream.
    """
    tau1 = np.zeros(pairs, dtype=np.int64)
    tau0 = np.zeros(pairs, dtype=np.int64)
    code1 = np.zeros(pairs, dtype=np.int8)
    code0 = np.zeros(pairs, dtype=np.int8)
    src = _Buffered(rng)
    start = 0
    for j in range(pairs):
        state = {1: [0, 0, 0, False], 0: [0, 0, 0, False]}  # n, k, code, done
        offset = 0
        chunk = _MIN_CHUNK
        while offset < cap and not (state[1][3] and state[0][3]):
            m = min(chunk, cap - offset)
            u = src.window(start + offset, m)
            base_bits = np.where(u < p, hit, miss).astype(np.int64)
            for forced, st in state.items():
                if st[3]:
                    continue
                bits = base_bits
                pos = flip_index - 1 - offset
                if 0 <= pos < m:
                    bits = base_bits.copy()
                    bits[pos] = forced
                st[0], st[1], st[2], st[3] = _walk_chunk(
                    bits, st[0], st[1], s_plus, s_minus, upper, lower
                )
            offset += m
            chunk = min(chunk * 2, _MAX_CHUNK)
        tau1[j], code1[j] = state[1][0], state[1][2]
        tau0[j], code0[j] = state[0][0], state[0][2]
        start += max(tau1[j], tau0[j])
        src.release(start)
    return tau1, tau0, code1, code0
