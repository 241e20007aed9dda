"""Exact gradients of the output heads with respect to FNN parameters.

The forward recursion alternates two maps per layer,

    O^(N) = X^(N)^{-1},    X^(N) = z - H_N - T^H O^(N-1) T,
    Y^(N) = Y^(N-1) T O^(N),

and the backward pass runs the same chain in reverse.  Every realified
product above is the image of a complex product under ``realify`` (an algebra
homomorphism), so the adjoints are accumulated directly on the complex blocks
as G_bar = dL/dRe G + i dL/dIm G.  Products are reassociated so that nothing
larger than an M x M' block is ever formed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .greens import MissingCacheError, RecursionCache


def realify(matrix) -> np.ndarray:
    """Map a complex M x M' matrix to the real block form [[Re, Im], [-Im, Re]]."""
    a = np.atleast_2d(np.asarray(matrix, dtype=complex))
    re, im = a.real, a.imag
    return np.block([[re, im], [-im, re]])


def unrealify(block: np.ndarray) -> np.ndarray:
    m, n = block.shape[0] // 2, block.shape[1] // 2
    return block[:m, :n] + 1j * block[:m, n:]


@dataclass
class GradientSet:
    """Gradients laid out like the parameters they belong to.

    ``inter[l]`` holds dL/dRe t + i dL/dIm t for every entry of T_l.
    ``intra[l]`` is Hermitian: off-diagonal entries are dL/dRe h + i dL/dIm h for
    the free upper-triangle element (mirrored by conjugation), the diagonal is
    dL/dmu.  ``intra[0]`` is the input layer and stays ``None`` unless the
    input Hamiltonian itself was differentiated (``input_adjoint``).
    """

    intra: list
    inter: list
    input_adjoint: Optional[np.ndarray] = field(default=None, repr=False)

    @classmethod
    def zeros_like(cls, other: "GradientSet") -> "GradientSet":
        return cls(intra=[None if g is None else np.zeros_like(g) for g in other.intra],
                   inter=[np.zeros_like(g) for g in other.inter])

    def __add__(self, other: "GradientSet") -> "GradientSet":
        return GradientSet(
            intra=[_add(a, b) for a, b in zip(self.intra, other.intra)],
            inter=[a + b for a, b in zip(self.inter, other.inter)],
        )

    def scaled(self, factor: float) -> "GradientSet":
        return GradientSet(intra=[None if g is None else g * factor for g in self.intra],
                           inter=[g * factor for g in self.inter])

    def masked(self, intra_masks, inter_masks) -> "GradientSet":
        """Zero both real components outside the connectivity masks."""
        intra = [self.intra[0]] + [np.where(m, g, 0.0) for g, m in zip(self.intra[1:], intra_masks)]
        inter = [np.where(m, g, 0.0) for g, m in zip(self.inter, inter_masks)]
        return GradientSet(intra=intra, inter=inter, input_adjoint=self.input_adjoint)

    def max_abs(self) -> float:
        arrays = [g for g in self.intra[1:] if g is not None] + list(self.inter)
        return max((float(np.abs(g).max(initial=0.0)) for g in arrays), default=0.0)


def _add(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


def _hermitian_grad(h_adj: np.ndarray) -> np.ndarray:
    """Fold the adjoint of a full matrix onto its Hermitian free parameters."""
    d = h_adj + h_adj.conj().T
    np.fill_diagonal(d, h_adj.diagonal().real)
    return d


def _left_mul(g: np.ndarray, m: np.ndarray) -> np.ndarray:
    """g @ m where g may be a 1-D diagonal."""
    return g[:, None] * m if g.ndim == 1 else g @ m


def _herm(g: np.ndarray) -> np.ndarray:
    return g.conj() if g.ndim == 1 else g.conj().T


def _backward(cache: RecursionCache, g_seed: Optional[np.ndarray],
              y_seed: Optional[np.ndarray], *,
              o_chain: bool = True, y_direct: bool = True,
              start: Optional[int] = None, with_input: bool = False) -> GradientSet:
    """Reverse sweep over layers L..1.

    ``g_seed`` is the adjoint of G^(L)_{L,L} (or of G^(start) when ``start``
    is given), ``y_seed`` the adjoint of the corner block Y^(L).  The flags
    let the CC channel decomposition switch individual paths off.  With
    ``with_input`` the adjoint of the input Hamiltonian H_0 is also returned.
    """
    if cache.diag_blocks is None:
        raise MissingCacheError("forward pass did not retain its intermediates")
    system = cache.system
    top = cache.depth if start is None else start
    intra = [None] * (cache.depth + 1)
    inter = [np.zeros_like(t, dtype=complex) for t in system.inter]
    g_adj = None if g_seed is None else np.asarray(g_seed, dtype=complex)
    y_adj = None if y_seed is None else np.asarray(y_seed, dtype=complex)
    if y_adj is not None and cache.corner_blocks is None:
        raise MissingCacheError("CC gradients need the corner blocks of the forward pass")
    for n in range(top, 0, -1):
        g = cache.g(n)
        t = system.inter[n - 1]
        g_prev = cache.diag_blocks[n - 1]
        if g_adj is None:
            g_adj = np.zeros_like(g)
        if y_adj is not None:
            y_prev = cache.corner_blocks[n - 1]
            yt = _left_mul(y_prev, t)
            if o_chain:
                g_adj = g_adj + yt.conj().T @ y_adj
            if y_direct:
                inter[n - 1] += _left_mul(_herm(y_prev), y_adj) @ g.conj().T
            y_adj = y_adj @ (t @ g).conj().T
        x_adj = -g.conj().T @ g_adj @ g.conj().T
        intra[n] = _hermitian_grad(-x_adj)
        tx = t @ x_adj
        inter[n - 1] += -(_left_mul(_herm(g_prev), tx) + _left_mul(g_prev, t @ x_adj.conj().T))
        if n > 1 or with_input:
            g_adj = -(tx @ t.conj().T)
    input_adjoint = None
    if with_input and system.fixed_g00 is None:
        if y_adj is not None and o_chain:
            g_adj = g_adj + y_adj
        g0 = cache.diag_blocks[0]
        if g0.ndim == 1:
            input_adjoint = g0.conj()[:, None] * g_adj * g0.conj()[None, :]
        else:
            input_adjoint = g0.conj().T @ g_adj @ g0.conj().T
    return GradientSet(intra=intra, inter=inter, input_adjoint=input_adjoint)


def ldos_seed(loss_grad) -> np.ndarray:
    """Adjoint of G_LL for y = -Im diag(G_LL) / pi."""
    return np.diag(-1j * np.asarray(loss_grad, dtype=float) / np.pi)


def ldos_gradients(cache: RecursionCache, loss_grad, *, with_input: bool = False) -> GradientSet:
    """Gradients of L(y) for the LDOS head, given dL/dy on the last layer."""
    loss_grad = np.asarray(loss_grad, dtype=float)
    if loss_grad.shape != (cache.system.layer_sizes[-1],):
        raise ValueError("loss gradient must have one entry per output neuron")
    return _backward(cache, ldos_seed(loss_grad), None, with_input=with_input)


def matsubara_ldos_seed(loss_grad, n: int, *, paired: bool = True) -> np.ndarray:
    """Adjoint of G(i w_n)_LL for rho = (i/pi) sum_n (-1)^n G_n.

    With ``paired`` the frequency n >= 0 also accounts for its conjugate
    partner -n-1, whose block is G_n^H.
    """
    sign = (-1.0) ** n
    coeff = -1j * sign / np.pi * (2.0 if paired else 1.0)
    return np.diag(coeff * np.asarray(loss_grad, dtype=float))


def matsubara_ldos_gradients(caches, ns, loss_grad, *, paired: bool = True) -> GradientSet:
    """Sum of per-frequency gradients for the Matsubara LDOS head."""
    total = None
    for cache, n in zip(caches, ns):
        grads = _backward(cache, matsubara_ldos_seed(loss_grad, int(n), paired=paired), None)
        total = grads if total is None else total + grads
    return total


def cc_seed(cache: RecursionCache, loss_grad: float) -> np.ndarray:
    if cache.last_corner is None:
        raise MissingCacheError("CC gradients need the corner blocks of the forward pass")
    return 2.0 * float(loss_grad) * cache.last_corner


def cc_gradients(cache: RecursionCache, loss_grad: float, *, with_input: bool = False) -> GradientSet:
    """Gradients of L(y) for the conditional-conductance head."""
    if cache.last_corner is None or cache.last_corner.shape[1] != 1:
        raise ValueError("CC head needs a single output site and corner blocks")
    return _backward(cache, None, cc_seed(cache, loss_grad), with_input=with_input)


@dataclass
class CcChannels:
    """CC gradient split into the direct corner path and the channels N'."""

    direct: GradientSet
    channels: dict

    def total(self) -> GradientSet:
        out = self.direct
        for grads in self.channels.values():
            out = out + grads
        return out


def cc_gradient_channels(cache: RecursionCache, loss_grad: float) -> CcChannels:
    """Decompose the CC gradient over the channels N' = N..L.

    Channel N' carries the sensitivity of Y^(L) to Y^(N') into O^(N') and
    then down the O-chain to every earlier layer; ``direct`` collects the
    explicit dependence of each Y^(N) on T_{N-1}.
    """
    depth = cache.depth
    y_seed = cc_seed(cache, loss_grad)
    direct = _backward(cache, None, y_seed, o_chain=False, y_direct=True)
    channels = {}
    # theta^(N'): adjoint of Y^(N') propagated through the corner chain only
    theta = {depth: y_seed}
    for n in range(depth, 1, -1):
        t = cache.system.inter[n - 1]
        theta[n - 1] = theta[n] @ (t @ cache.g(n)).conj().T
    for n_prime in range(depth, 0, -1):
        t = cache.system.inter[n_prime - 1]
        yt = _left_mul(cache.corner_blocks[n_prime - 1], t)
        seed = yt.conj().T @ theta[n_prime]
        channels[n_prime] = _backward(cache, seed, None, start=n_prime)
    return CcChannels(direct=direct, channels=channels)


def finite_difference_grad(params, loss: Callable, ref, h: float = 1e-5) -> float:
    """Central difference (L(p + h) - L(p - h)) / 2h for one real component.

    ``params`` is either a real array (``ref`` an index) or FnnParameters with
    ``ref`` a ParamRef; complex entries are perturbed one real component at a
    time and masked-out entries return exactly 0.
    """
    if h <= 0:
        raise ValueError("step must be positive")
    if isinstance(params, np.ndarray):
        plus, minus = params.astype(float).copy(), params.astype(float).copy()
        plus[ref] += h
        minus[ref] -= h
        return float((loss(plus) - loss(minus)) / (2 * h))
    if not params.is_free(ref):
        return 0.0
    return float((loss(params.perturbed(ref, h)) - loss(params.perturbed(ref, -h))) / (2 * h))


def gradient_layer_profile(grads: GradientSet, intra_masks=None, inter_masks=None) -> np.ndarray:
    """Mean |gradient| per parameter layer, normalized by the last layer.

    Parameter layer l (1..L) gathers the intra block H_l and the hopping T_{l-1}
    that feeds it.  Only masked-in entries are averaged.
    """
    depth = len(grads.inter)
    means = np.empty(depth)
    for l in range(1, depth + 1):
        parts = []
        g_intra, g_inter = grads.intra[l], grads.inter[l - 1]
        m_intra = np.ones(g_intra.shape, bool) if intra_masks is None else intra_masks[l - 1]
        m_inter = np.ones(g_inter.shape, bool) if inter_masks is None else inter_masks[l - 1]
        parts.append(np.abs(g_intra[m_intra]))
        parts.append(np.abs(g_inter[m_inter]))
        vals = np.concatenate(parts)
        means[l - 1] = vals.mean() if vals.size else np.nan
    if not np.isfinite(means[-1]) or means[-1] == 0:
        raise ValueError("last layer has no gradient signal to normalize by")
    return means / means[-1]
