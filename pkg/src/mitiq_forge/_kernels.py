"""In-place batched statevector kernels (numba).

``state`` has shape (B, 2^n); row b is one trajectory. Matrices carry a
leading batch axis so every trajectory can apply its own operator.
"""

from numba import njit


@njit(cache=True, fastmath=True)
def apply_1q(state, M, q):
    B, N = state.shape
    lo = 1 << q
    for b in range(B):
        m00 = M[b, 0, 0]
        m01 = M[b, 0, 1]
        m10 = M[b, 1, 0]
        m11 = M[b, 1, 1]
        for base in range(0, N, 2 * lo):
            for j in range(base, base + lo):
                a = state[b, j]
                c = state[b, j + lo]
                state[b, j] = m00 * a + m01 * c
                state[b, j + lo] = m10 * a + m11 * c


@njit(cache=True, fastmath=True)
def apply_cnot_dressed(state, Mc, Mt, c, t):
    """state <- CNOT(c->t) . (Mc (x) Mt) . state, per trajectory."""
    B, N = state.shape
    bc = 1 << c
    bt = 1 << t
    lo = min(c, t)
    hi = max(c, t)
    lo_mask = (1 << lo) - 1
    hi_mask = (1 << hi) - 1
    for b in range(B):
        a00 = Mc[b, 0, 0]
        a01 = Mc[b, 0, 1]
        a10 = Mc[b, 1, 0]
        a11 = Mc[b, 1, 1]
        t00 = Mt[b, 0, 0]
        t01 = Mt[b, 0, 1]
        t10 = Mt[b, 1, 0]
        t11 = Mt[b, 1, 1]
        for k in range(N >> 2):
            # insert zero bits at positions lo and hi
            i = (k & lo_mask) | ((k & ~lo_mask) << 1)
            i = (i & hi_mask) | ((i >> hi) << (hi + 1))
            i01 = i | bt
            i10 = i | bc
            i11 = i | bc | bt
            s00 = state[b, i]
            s01 = state[b, i01]
            s10 = state[b, i10]
            s11 = state[b, i11]
            # target matrix
            u00 = t00 * s00 + t01 * s01
            u01 = t10 * s00 + t11 * s01
            u10 = t00 * s10 + t01 * s11
            u11 = t10 * s10 + t11 * s11
            # control matrix
            v00 = a00 * u00 + a01 * u10
            v10 = a10 * u00 + a11 * u10
            v01 = a00 * u01 + a01 * u11
            v11 = a10 * u01 + a11 * u11
            # CNOT swaps target amplitudes where control is 1
            state[b, i] = v00
            state[b, i01] = v01
            state[b, i10] = v11
            state[b, i11] = v10
