"""Selective scan, its materialized semiseparable matrix, and masked linear attention.

For a single sequence with per-step scalar decay ``A_t``, input vectors
``B_t``, readout vectors ``C_t`` and scalar inputs ``x_t``::

    h_t = A_t h_{t-1} + B_t x_t,   h_{-1} = 0,   y_t = C_t . h_t

which unrolls to ``y = M x`` with ``M[t, s] = (C_t . B_s) * prod(A[s+1..t])``
for ``t >= s``. With ``A == 1`` the decay mask becomes the lower-triangular
ones matrix and ``y`` is causal linear attention with ``Q = C, K = B, V = x``.
"""

from dataclasses import dataclass

import numpy as np

from ..autodiff.tensor import Function, Tensor
from .kernels import identity_order, scan_backward, scan_forward

MAX_MATERIALIZE_T = 4096


def _arr(v):
    return v.data if isinstance(v, Tensor) else np.asarray(v, dtype=np.float64)


@dataclass
class SsmSequence:
    A: np.ndarray  # [T]
    B: np.ndarray  # [T, N]
    C: np.ndarray  # [T, N]
    x: np.ndarray  # [T]

    def __post_init__(self):
        A, B, C, x = (_arr(v) for v in (self.A, self.B, self.C, self.x))
        if A.ndim != 1 or x.ndim != 1 or B.ndim != 2 or C.ndim != 2:
            raise ValueError(
                f"expected A[T], B[T,N], C[T,N], x[T]; got {A.shape}, {B.shape}, {C.shape}, {x.shape}")
        T = A.shape[0]
        if T < 1 or B.shape[1] < 1 or B.shape != C.shape or B.shape[0] != T or x.shape[0] != T:
            raise ValueError(
                f"inconsistent sequence shapes A{A.shape} B{B.shape} C{C.shape} x{x.shape}")
        for name, v in zip("ABCx", (A, B, C, x)):
            if not np.all(np.isfinite(v)):
                raise ValueError(f"non-finite values in {name}")

    @property
    def T(self):
        return _arr(self.A).shape[0]

    @property
    def N(self):
        return _arr(self.B).shape[1]

    @classmethod
    def random(cls, rng, T, N, decay=(0.0, 1.0), ones=False):
        """Random sequence with ``A`` uniform in ``decay`` (or all ones)."""
        A = np.ones(T) if ones else rng.uniform(decay[0], decay[1], T)
        return cls(A, rng.standard_normal((T, N)), rng.standard_normal((T, N)),
                   rng.standard_normal(T))


@dataclass
class SemiseparableMatrix:
    M: np.ndarray
    L: np.ndarray


@dataclass
class AttentionTriple:
    Q: np.ndarray  # [T, N]
    K: np.ndarray  # [T, N]
    V: np.ndarray  # [T]

    def __post_init__(self):
        Q, K, V = (_arr(v) for v in (self.Q, self.K, self.V))
        if Q.ndim != 2 or Q.shape != K.shape or V.shape != (Q.shape[0],):
            raise ValueError(f"expected Q[T,N], K[T,N], V[T]; got {Q.shape}, {K.shape}, {V.shape}")
        if not all(np.all(np.isfinite(v)) for v in (Q, K, V)):
            raise ValueError("non-finite values in attention triple")


class _SelectiveScan(Function):
    def forward(self, A, B, C, x, order):
        G, T, P = x.shape
        if A.shape != x.shape or B.shape[:2] != (G, T) or C.shape != B.shape:
            raise ValueError(
                f"selective_scan: A{A.shape} x{x.shape} must match and B{B.shape} C{C.shape} "
                f"must be [G, T, N]")
        if order.ndim != 2 or order.shape[1] != T or G % order.shape[0]:
            raise ValueError(f"selective_scan: order {order.shape} does not fit {G} sequences of {T}")
        self.args = tuple(np.ascontiguousarray(v) for v in (A, B, C, x)) + (order,)
        self.hs, y = scan_forward(*self.args)
        return y

    def backward(self, g):
        return scan_backward(*self.args, self.hs, g)


def selective_scan(A, B, C, x, order=None):
    """Batched taped scan: ``A, x [G, T, P]``, ``B, C [G, T, N]`` -> ``y [G, T, P]``.

    ``order[K, T]`` (default: identity) gives the traversal order of sequence
    ``g`` as ``order[g % K]``; inputs and output stay in position layout.
    """
    T = x.shape[1]
    order = identity_order(T) if order is None else np.ascontiguousarray(order, dtype=np.int64)
    return _SelectiveScan.apply(A, B, C, x, order=order)


def ssm_scan(seq):
    """Linear-time scan of one sequence; returns a taped ``Tensor[T]``.

    The fields of ``seq`` may be Tensors, in which case gradients flow to them.
    """
    if not isinstance(seq, SsmSequence):
        raise TypeError("ssm_scan expects an SsmSequence")
    T, N = seq.T, seq.N

    def lift(v, shape):
        v = v if isinstance(v, Tensor) else Tensor(v)
        return v.reshape(shape)

    y = selective_scan(lift(seq.A, (1, T, 1)), lift(seq.B, (1, T, N)),
                       lift(seq.C, (1, T, N)), lift(seq.x, (1, T, 1)))
    return y.reshape((T,))


def decay_matrix(A):
    """Lower-triangular ``L[t, s] = A[s+1] * ... * A[t]`` (``L[t, t] = 1``)."""
    A = _arr(A)
    T = A.shape[0]
    L = np.zeros((T, T))
    L[0, 0] = 1.0
    for t in range(1, T):
        L[t, :t] = L[t - 1, :t] * A[t]
        L[t, t] = 1.0
    return L


def materialize_m(seq, check=True, atol=1e-12):
    """Quadratic form of the scan: ``M = L * (C B^T)`` with its decay mask ``L``.

    With ``check`` the factorized ``M`` is compared row by row against a
    second construction that propagates each ``B_s`` forward through the
    decays, ``v_{t,s} = A_t v_{t-1,s}`` and ``M[t, s] = C_t . v_{t,s}``.
    """
    T = seq.T
    if T > MAX_MATERIALIZE_T:
        raise ValueError(f"T = {T} exceeds the materialization limit {MAX_MATERIALIZE_T}")
    A, B, C = _arr(seq.A), _arr(seq.B), _arr(seq.C)
    L = decay_matrix(A)
    M = np.tril(C @ B.T)
    M *= L
    if check:
        v = np.zeros_like(B)
        worst = 0.0
        for t in range(T):
            v[:t] *= A[t]
            v[t] = B[t]
            row = v[:t + 1] @ C[t]
            scale = max(1.0, float(np.abs(row).max()))
            worst = max(worst, float(np.abs(row - M[t, :t + 1]).max()) / scale)
        if worst > atol:
            raise AssertionError(f"M != L o (C B^T): relative deviation {worst:.3e} > {atol}")
    return SemiseparableMatrix(M, L)


def masked_linear_attention(att):
    """``Y = (tril(ones) * Q K^T) V`` for one head; returns ``ndarray[T]``."""
    Q, K, V = _arr(att.Q), _arr(att.K), _arr(att.V)
    return np.tril(Q @ K.T) @ V


def attention_from_sequence(seq):
    """The (C, B, x) -> (Q, K, V) relabelling used by the duality check."""
    return AttentionTriple(_arr(seq.C), _arr(seq.B), _arr(seq.x))
