"""
Orthonormal Daubechies filter banks and full wavelet packet decomposition.

Boundary handling is periodization: each analysis step maps N samples to
N/2 approximation and N/2 detail coefficients, so a depth-D tree over a
length-L signal holds 2**D packets of L / 2**D coefficients.

Analysis convention::

    approx[n] = sum_k h[k] * x[(2n + k) mod N]
    detail[n] = sum_k g[k] * x[(2n + k) mod N]
    g[k]      = (-1)**k * h[L - 1 - k]

Packets come out in natural (Paley) order: the binary digits of a packet
index, most significant first, give the branch taken at each level
(0 = lowpass, 1 = highpass).

Everything here works on plain numpy arrays; wavelet filters are fixed, so
coefficients never enter the differentiation graph.
"""
from dataclasses import dataclass
from functools import lru_cache
from math import comb
from typing import Tuple

import numpy as np

from errors import ConfigError, DimensionError

BOUNDARY_MODE = "periodization"

# wavelet name -> vanishing moments
DAUBECHIES_MOMENTS = {"db2": 2, "db4": 4}


@dataclass(frozen=True, eq=False)
class WaveletFilterPair:
    """Analysis lowpass ``h`` and its quadrature-mirror highpass ``g``."""
    name: str
    lowpass: np.ndarray
    highpass: np.ndarray

    @property
    def length(self) -> int:
        return len(self.lowpass)


@dataclass(frozen=True, eq=False)
class PacketTree:
    """Leaves of a depth-D wavelet packet decomposition of one signal."""
    depth: int
    packets: np.ndarray          # (2**depth, L / 2**depth), natural order
    wavelet: str
    boundary_mode: str = BOUNDARY_MODE

    @property
    def packet_count(self) -> int:
        return self.packets.shape[0]

    def packet(self, index: int) -> np.ndarray:
        return self.packets[index]

    def energy(self) -> float:
        return float(np.sum(self.packets ** 2))

    def reconstruct(self) -> np.ndarray:
        return inverse_wpd(self.packets, make_filters(self.wavelet))


def _daubechies_lowpass(moments: int) -> np.ndarray:
    # |H(w)|^2 = cos^(2N)(w/2) * P(sin^2(w/2)) with P(y) = sum_k C(N-1+k, k) y^k.
    # Each root y of P gives a reciprocal pair of z roots; keep the one inside
    # the unit circle (extremal phase).
    ascending = [comb(moments - 1 + k, k) for k in range(moments)]
    y_roots = np.roots(ascending[::-1]) if moments > 1 else np.array([])
    z_roots = []
    for y in y_roots:
        b = 2.0 - 4.0 * y                  # z^2 - (2 - 4y) z + 1 = 0
        disc = np.sqrt(b * b - 4.0 + 0j)
        z_roots.append(min(((b + disc) / 2.0, (b - disc) / 2.0), key=abs))
    roots = np.concatenate([-np.ones(moments, dtype=complex), np.array(z_roots, dtype=complex)])
    h = np.real(np.poly(roots))
    return h * (np.sqrt(2.0) / h.sum())


@lru_cache(maxsize=None)
def make_filters(name: str) -> WaveletFilterPair:
    """Build the orthonormal analysis filter pair for ``db2`` or ``db4``."""
    if name not in DAUBECHIES_MOMENTS:
        raise ConfigError(f"unknown wavelet {name!r}; expected one of {sorted(DAUBECHIES_MOMENTS)}")
    h = _daubechies_lowpass(DAUBECHIES_MOMENTS[name])
    g = np.array([(-1) ** k * h[len(h) - 1 - k] for k in range(len(h))])
    h.setflags(write=False)
    g.setflags(write=False)
    return WaveletFilterPair(name=name, lowpass=h, highpass=g)


@lru_cache(maxsize=None)
def _periodic_taps(n: int, filter_length: int) -> np.ndarray:
    # row k holds (2m + k) mod n for m = 0 .. n/2 - 1
    taps = (2 * np.arange(n // 2)[None, :] + np.arange(filter_length)[:, None]) % n
    taps.setflags(write=False)
    return taps


def analysis_step(x: np.ndarray, f: WaveletFilterPair) -> Tuple[np.ndarray, np.ndarray]:
    """One periodized filter-bank split along the last axis."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    if n < 2 or n % 2:
        raise DimensionError(f"analysis_step needs an even signal length >= 2, got {n}")
    taps = _periodic_taps(n, f.length)
    approx = np.zeros(x.shape[:-1] + (n // 2,))
    detail = np.zeros_like(approx)
    for k in range(f.length):
        window = x[..., taps[k]]
        approx += f.lowpass[k] * window
        detail += f.highpass[k] * window
    return approx, detail


def synthesis_step(approx: np.ndarray, detail: np.ndarray, f: WaveletFilterPair) -> np.ndarray:
    """Transpose of :func:`analysis_step`; inverts it for orthonormal filters."""
    approx = np.asarray(approx, dtype=np.float64)
    detail = np.asarray(detail, dtype=np.float64)
    if approx.shape != detail.shape:
        raise DimensionError(f"synthesis_step: approx {approx.shape} and detail {detail.shape} differ")
    n = 2 * approx.shape[-1]
    taps = _periodic_taps(n, f.length)
    x = np.zeros(approx.shape[:-1] + (n,))
    for k in range(f.length):
        # taps[k] has no repeated entries, so fancy-index += is safe
        x[..., taps[k]] += f.lowpass[k] * approx + f.highpass[k] * detail
    return x


def _check_depth(length: int, depth: int) -> None:
    if depth < 1:
        raise ConfigError(f"decomposition depth must be >= 1, got {depth}")
    if length % (2 ** depth):
        raise ConfigError(f"signal length {length} is not divisible by 2^{depth}")


def wpd_batch(signals: np.ndarray, f: WaveletFilterPair, depth: int) -> np.ndarray:
    """Full packet tree of every signal along the last axis.

    ``(..., L)`` -> ``(..., 2**depth, L / 2**depth)``.
    """
    signals = np.asarray(signals, dtype=np.float64)
    _check_depth(signals.shape[-1], depth)
    nodes = signals[..., None, :]
    for _ in range(depth):
        approx, detail = analysis_step(nodes, f)
        nodes = np.stack([approx, detail], axis=-2)     # child 2b = lowpass, 2b+1 = highpass
        nodes = nodes.reshape(nodes.shape[:-3] + (-1, nodes.shape[-1]))
    return nodes


def wpd(x: np.ndarray, f: WaveletFilterPair, depth: int) -> PacketTree:
    """Depth-D wavelet packet decomposition of one signal."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError(f"wpd expects a 1-D signal, got shape {x.shape}")
    return PacketTree(depth=depth, packets=wpd_batch(x, f, depth), wavelet=f.name)


def inverse_wpd(packets: np.ndarray, f: WaveletFilterPair) -> np.ndarray:
    """Rebuild signals from ``(..., 2**D, m)`` packets in natural order."""
    nodes = np.asarray(packets, dtype=np.float64)
    count = nodes.shape[-2]
    if count < 2 or count & (count - 1):
        raise DimensionError(f"packet count must be a power of two >= 2, got {count}")
    while nodes.shape[-2] > 1:
        pairs = nodes.reshape(nodes.shape[:-2] + (nodes.shape[-2] // 2, 2, nodes.shape[-1]))
        nodes = synthesis_step(pairs[..., 0, :], pairs[..., 1, :], f)
    return nodes[..., 0, :]
