"""Reproducible Gaussian stream: splitmix64 + Box-Muller.

Problem generators must be reproducible down to the bit from a single integer
seed, independent of any library's RNG internals, so the full recipe is fixed
here and identified by :data:`GENERATOR_ID` (recorded in instance metadata):

* state sequence: ``s_i = seed + i * 0x9E3779B97F4A7C15`` (mod 2^64, i >= 1),
  each output mixed by the splitmix64 finalizer;
* uniforms: top 53 bits, ``u = (z >> 11) * 2^-53`` in [0, 1);
* normals: Box-Muller pairs in a fixed call order.  For a request of ``count``
  values, ``ceil(count/2)`` pairs are drawn; pair ``j`` consumes uniforms
  ``(u[2j], u[2j+1])`` and yields ``z0 = sqrt(-2 ln(1-u[2j])) cos(2 pi u[2j+1])``
  followed by ``z1`` with ``sin``; outputs are interleaved ``z0, z1, z0, ...``
  and truncated to ``count``;
* matrices are filled row-major from a single ``normals(rows*cols)`` call;
* index draws (for sparse supports) map one uniform to ``floor(u * bound)``.
"""

import numpy as np

GENERATOR_ID = "splitmix64-boxmuller-v1"

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class GaussianStream:
    """Sequential stream of uniforms/normals from one 64-bit seed."""

    def __init__(self, seed):
        self._seed = np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)
        self._drawn = 0  # uniforms consumed so far

    def uniforms(self, count):
        """Next `count` uniforms in [0, 1)."""
        idx = np.arange(self._drawn + 1, self._drawn + count + 1, dtype=np.uint64)
        self._drawn += count
        z = _mix(self._seed + idx * _GOLDEN)
        return (z >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)

    def normals(self, count):
        """Next `count` standard normal variates (Box-Muller, fixed order)."""
        pairs = (count + 1) // 2
        u = self.uniforms(2 * pairs)
        u1 = 1.0 - u[0::2]  # in (0, 1], keeps log finite
        u2 = u[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        ang = 2.0 * np.pi * u2
        out = np.empty(2 * pairs)
        out[0::2] = r * np.cos(ang)
        out[1::2] = r * np.sin(ang)
        return out[:count]

    def normal_matrix(self, rows, cols):
        """(rows, cols) standard normal matrix, filled row-major."""
        return self.normals(rows * cols).reshape(rows, cols)

    def index_below(self, bound):
        """One integer in [0, bound) via floor(u * bound)."""
        u = self.uniforms(1)[0]
        k = int(u * bound)
        return min(k, bound - 1)

    def choose(self, n, k):
        """k distinct indices from range(n): partial Fisher-Yates, sorted."""
        perm = np.arange(n)
        for j in range(k):
            swap = j + self.index_below(n - j)
            perm[j], perm[swap] = perm[swap], perm[j]
        out = perm[:k].copy()
        out.sort()
        return out
