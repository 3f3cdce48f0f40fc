"""Random variables as aligned Monte Carlo ensembles, and the Ky Fan quasi-norm.

A ``ProbSpace`` stands for one probability space sampled at ``M`` outcomes.
Every random quantity built on it is an ``Ensemble``: ``M`` real samples where
index ``k`` is always the same outcome.  Convergence in probability is measured
with the empirical Ky Fan quasi-norm ``inf{d : P(|X| > d) <= d}``.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from numbers import Real

import numpy as np

from . import _kernels as K
from .errors import AlignmentError, DegenerateInputError, DomainError, EnumerationGuardError, PreconditionError

#: Paths per Philox counter block.  Fixed forever: it is part of the stream layout.
PATH_BLOCK = 1024
MAX_SUBSET_TERMS = 20


def _stream_key(seed, tag):
    digest = hashlib.blake2b(f"{seed}/{tag}".encode(), digest_size=16).digest()
    return np.frombuffer(digest, dtype=np.uint64).copy()


@dataclass(frozen=True)
class ProbSpace:
    """``M`` sampled outcomes of one probability space.

    Random streams are counter based: stream ``tag`` for path ``p`` comes from a
    Philox generator keyed by ``(master_seed, tag)`` whose counter is positioned
    at block ``p // PATH_BLOCK``.  A path's draws therefore depend only on
    ``(master_seed, tag, p)``; they do not change with ``M`` or with the number
    of worker threads.
    """

    path_count: int
    master_seed: int = 0
    workers: int = field(default=1, compare=False)

    def __post_init__(self):
        if int(self.path_count) != self.path_count or self.path_count < 2:
            raise DomainError(f"path_count must be an integer >= 2, got {self.path_count}")
        if self.workers < 1:
            raise DomainError("workers must be >= 1")

    @property
    def space_id(self):
        return f"ps:{self.master_seed:x}:{self.path_count}"

    # -- stream generation -------------------------------------------------

    def _block(self, key, block, draw, shape):
        counter = np.array([0, 0, 0, block], dtype=np.uint64)
        gen = np.random.Generator(np.random.Philox(key=key, counter=counter))
        return draw(gen, (PATH_BLOCK,) + shape)

    def draw(self, tag, shape, draw):
        """Per-path samples of shape ``(M,) + shape`` from stream ``tag``.

        ``draw(gen, size)`` must be a pure function of the generator state.
        """
        shape = (int(shape),) if np.isscalar(shape) else tuple(int(s) for s in shape)
        key = _stream_key(self.master_seed, tag)
        n_blocks = -(-self.path_count // PATH_BLOCK)
        out = np.empty((n_blocks * PATH_BLOCK,) + shape)

        def fill(b):
            out[b * PATH_BLOCK : (b + 1) * PATH_BLOCK] = self._block(key, b, draw, shape)

        if self.workers > 1 and n_blocks > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                list(pool.map(fill, range(n_blocks)))
        else:
            for b in range(n_blocks):
                fill(b)
        return out[: self.path_count]

    def normal(self, tag, shape=()):
        return self.draw(tag, shape, lambda g, size: g.standard_normal(size))

    def uniform(self, tag, shape=()):
        return self.draw(tag, shape, lambda g, size: g.random(size))

    def poisson(self, tag, lam, shape=()):
        return self.draw(tag, shape, lambda g, size: g.poisson(lam, size).astype(np.float64))

    def bernoulli(self, tag, p, shape=()):
        return (self.uniform(tag, shape) < p).astype(np.float64)

    # -- ensemble constructors --------------------------------------------

    def ensemble(self, samples, degenerate=False):
        return Ensemble(samples, self.space_id, degenerate=degenerate)

    def constant(self, value):
        return Ensemble(np.full(self.path_count, float(value)), self.space_id)

    def zeros(self):
        return self.constant(0.0)


class Ensemble:
    """An L0 random variable realised as ``M`` aligned samples.

    Immutable.  Arithmetic with another ``Ensemble`` requires the same
    ``space_id`` and acts index by index; plain numbers broadcast.
    """

    __slots__ = ("_samples", "space_id", "degenerate")

    def __init__(self, samples, space_id, degenerate=False):
        arr = np.array(samples, dtype=np.float64, copy=True).reshape(-1)
        if arr.size < 2:
            raise DomainError("an ensemble needs at least two samples")
        if not degenerate and not np.all(np.isfinite(arr)):
            raise DegenerateInputError("non-finite samples in an ensemble not flagged degenerate")
        arr.setflags(write=False)
        object.__setattr__(self, "_samples", arr)
        object.__setattr__(self, "space_id", space_id)
        object.__setattr__(self, "degenerate", bool(degenerate))

    def __setattr__(self, name, value):
        raise AttributeError("Ensemble is immutable")

    @property
    def samples(self):
        return self._samples

    def __len__(self):
        return self._samples.size

    def __repr__(self):
        return f"Ensemble(M={len(self)}, mean={self.mean():.6g}, space_id={self.space_id!r})"

    def _operand(self, other):
        if isinstance(other, Ensemble):
            if other.space_id != self.space_id:
                raise AlignmentError(f"space mismatch: {self.space_id} vs {other.space_id}")
            return other._samples, self.degenerate or other.degenerate
        if isinstance(other, (Real, np.floating, np.integer)):
            return float(other), self.degenerate
        return NotImplemented, False

    def _binary(self, other, op):
        val, deg = self._operand(other)
        if val is NotImplemented:
            return NotImplemented
        return Ensemble(op(self._samples, val), self.space_id, degenerate=deg)

    def __add__(self, other):
        return self._binary(other, np.add)

    def __radd__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __rsub__(self, other):
        return self._binary(other, lambda a, b: b - a)

    def __mul__(self, other):
        return self._binary(other, np.multiply)

    def __rmul__(self, other):
        return self._binary(other, np.multiply)

    def __truediv__(self, other):
        if isinstance(other, Ensemble):
            return NotImplemented
        return self._binary(other, np.divide)

    def __neg__(self):
        return Ensemble(-self._samples, self.space_id, degenerate=self.degenerate)

    def __abs__(self):
        return Ensemble(np.abs(self._samples), self.space_id, degenerate=self.degenerate)

    def mean(self):
        return float(self._samples.mean())

    def var(self, ddof=1):
        return float(self._samples.var(ddof=ddof))

    def tail(self, c):
        """Empirical ``P(|X| > c)``."""
        return float(np.mean(np.abs(self._samples) > c))

    def permuted(self, perm):
        return Ensemble(self._samples[np.asarray(perm)], self.space_id, degenerate=self.degenerate)


def _as_samples(e):
    if isinstance(e, Ensemble):
        if e.degenerate:
            raise DegenerateInputError("ky_fan of a degenerate ensemble")
        return e.samples
    arr = np.asarray(e, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise DegenerateInputError("non-finite sample")
    return arr


def ky_fan(e):
    """Exact empirical Ky Fan quasi-norm ``inf{d : #{|x_k| > d}/M <= d}``.

    With ``a_(1) >= ... >= a_(M)`` the sorted absolute samples and
    ``a_(M+1) = 0``, every ``d_k = max(a_(k+1), k/M)`` is feasible and the
    infimum is attained at one of them, so the answer is ``min_k d_k``.
    The result always lies in ``[0, 1]``.
    """
    x = _as_samples(e)
    if x.size < 2:
        raise DomainError("need at least two samples")
    return float(K.kyfan_rows(x[None, :])[0])


def ky_fan_rows(a):
    """Ky Fan quasi-norm of every row of an ``(R, M)`` array."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DomainError("expected a 2-D array")
    if not np.all(np.isfinite(a)):
        raise DegenerateInputError("non-finite sample")
    return K.kyfan_rows(a)


def ky_fan_distance(a, b):
    """Ky Fan distance ``||a - b||``; both ensembles must share a space."""
    if isinstance(a, Ensemble) and isinstance(b, Ensemble):
        return ky_fan(a - b)
    return ky_fan(np.asarray(_as_samples(a)) - np.asarray(_as_samples(b)))


@dataclass(frozen=True)
class TailReport:
    thresholds: tuple
    sup_tails: tuple

    def decays(self, level=0.0):
        """True when the sup-tail at the largest threshold is at most ``level``."""
        return self.sup_tails[-1] <= level


def check_boundedness(family, thresholds):
    """For each threshold ``c``: ``sup`` over the family of ``P(|X| > c)``.

    Whether the tails decay fast enough is the caller's judgement.
    """
    family = list(family)
    if not family:
        raise DomainError("empty family")
    thresholds = np.asarray(thresholds, dtype=np.float64).reshape(-1)
    if thresholds.size == 0:
        raise DomainError("no thresholds")
    if np.any(np.diff(thresholds) <= 0):
        raise DomainError("thresholds must be strictly increasing")
    sid = family[0].space_id
    if any(e.space_id != sid for e in family):
        raise AlignmentError("family spans several probability spaces")
    # sup over the family of P(|X| > c), not P(sup |X| > c)
    tails = [max(e.tail(c) for e in family) for c in thresholds]
    return TailReport(tuple(float(c) for c in thresholds), tuple(tails))


@dataclass(frozen=True)
class SubsetInequality:
    lhs: float
    rhs: float
    ratio: float

    @property
    def holds(self):
        return self.lhs <= self.rhs


def check_subset_inequality(xs, coeffs):
    """Compare ``||sum c_k X_k||`` with ``16 max_V ||sum_{k in V} X_k||``.

    The maximum runs over all ``2**l`` index subsets, enumerated explicitly,
    so ``l`` is capped at 20.
    """
    xs = list(xs)
    coeffs = np.asarray(coeffs, dtype=np.float64).reshape(-1)
    l = len(xs)
    if l < 1:
        raise DomainError("need at least one ensemble")
    if l > MAX_SUBSET_TERMS:
        raise EnumerationGuardError(f"{l} terms exceeds the enumeration guard of {MAX_SUBSET_TERMS}")
    if coeffs.size != l:
        raise DomainError("one coefficient per ensemble")
    if np.any(np.abs(coeffs) > 1.0):
        raise PreconditionError("coefficients must satisfy |c_k| <= 1")
    sid = xs[0].space_id
    if any(e.space_id != sid for e in xs):
        raise AlignmentError("ensembles span several probability spaces")
    x = np.stack([_as_samples(e) for e in xs])
    lhs = ky_fan(coeffs @ x)
    sums = K.subset_sums(x)
    rhs = 16.0 * float(K.kyfan_rows(sums).max())
    if rhs > 0:
        ratio = lhs / rhs
    else:
        ratio = 0.0 if lhs == 0 else np.inf
    return SubsetInequality(lhs, rhs, ratio)
