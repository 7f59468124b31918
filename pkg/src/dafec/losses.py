"""Training objectives for the extractor, the discriminator and the classifier.

All losses take features (Tensors or arrays) and return scalar Tensors so
gradients flow back to whatever produced the features. Expectations over a
domain are arithmetic means over the sampled batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Mapping, Sequence

import numpy as np

from .errors import InvalidArgumentError, NumericError
from .numerics import Tensor, as_tensor, concat, logsumexp, pairwise_sq_dists, softmax_entropy

ANNEAL_MODES = ("cosine", "linear", "constant")


# -- prototypical network -------------------------------------------------------

def prototypes(support) -> dict:
    """Class mean of the support features.

    ``support`` is a mapping or a sequence of ``(class_id, features)`` pairs,
    where ``features`` is a (K, d) array/Tensor or a list of K vectors.
    Class order of the input is preserved.
    """
    items = support.items() if isinstance(support, Mapping) else support
    protos = {}
    for cls, feats in items:
        if not isinstance(feats, Tensor):
            if len(feats) == 0:
                raise InvalidArgumentError(f"class {cls!r} has no support features")
            feats = concat([as_tensor(f).reshape(1, -1) for f in feats]) if isinstance(feats, list) else as_tensor(feats)
        if feats.ndim != 2 or feats.shape[0] == 0:
            raise InvalidArgumentError(f"class {cls!r} has no support features")
        protos[cls] = feats.mean(axis=0)
    return protos


def _stack(protos) -> Tensor:
    vecs = list(protos.values()) if isinstance(protos, Mapping) else list(protos)
    return concat([as_tensor(v).reshape(1, -1) for v in vecs])


def proto_log_probs(q, protos) -> Tensor:
    """log P(y = i | q) with logits ``-|q - c_i|^2``.

    ``q`` may be one feature vector (result shape (N,)) or a batch (n, d)
    (result shape (n, N)). ``protos`` is an ordered mapping or sequence.
    """
    c = _stack(protos)
    if c.shape[0] < 2:
        raise InvalidArgumentError("need at least two prototypes")
    q = as_tensor(q)
    single = q.ndim == 1
    if single:
        q = q.reshape(1, -1)
    if q.shape[1] != c.shape[1]:
        raise InvalidArgumentError(f"dimension mismatch: query {q.shape[1]} vs prototype {c.shape[1]}")
    logits = -pairwise_sq_dists(q, c)
    out = logits - logsumexp(logits, axis=1, keepdims=True)
    return out.reshape(-1) if single else out


def proto_ce_loss(support, query_feats, query_labels: Sequence[Hashable]) -> Tensor:
    """Mean negative log-likelihood of the query labels under the prototypes."""
    protos = prototypes(support)
    order = {cls: i for i, cls in enumerate(protos)}
    missing = [y for y in query_labels if y not in order]
    if missing:
        raise InvalidArgumentError(f"query labels not among support classes: {sorted(set(map(str, missing)))}")
    logp = proto_log_probs(query_feats, protos)
    if logp.ndim == 1:
        logp = logp.reshape(1, -1)
    if logp.shape[0] != len(query_labels):
        raise InvalidArgumentError("one label per query feature required")
    idx = np.array([order[y] for y in query_labels])
    return -logp[np.arange(len(idx)), idx].mean()


# -- similarity entropy ---------------------------------------------------------

def similarity_entropy_loss(batch, tau: float = 2.0, sign: str = "as_written") -> Tensor:
    """Mean entropy of each instance's tempered distance distribution.

    For row i the distribution is softmax over ``|x_i - x_j|^2 / tau`` for
    all j != i. ``sign="negated"`` uses ``-|x_i - x_j|^2`` instead, i.e. a
    similarity rather than a distance.
    """
    if not tau > 0:
        raise InvalidArgumentError(f"temperature must be > 0, got {tau}")
    if sign not in ("as_written", "negated"):
        raise InvalidArgumentError(f"unknown entropy sign {sign!r}")
    x = batch if isinstance(batch, Tensor) else (
        concat([as_tensor(v).reshape(1, -1) for v in batch]) if isinstance(batch, list) else as_tensor(batch)
    )
    m = x.shape[0]
    if m < 2:
        raise InvalidArgumentError(f"batch needs at least 2 instances, got {m}")
    d = pairwise_sq_dists(x)
    rows, cols = np.nonzero(~np.eye(m, dtype=bool))
    v = d[rows, cols].reshape(m, m - 1)
    if sign == "negated":
        v = -v
    return softmax_entropy(v, tau, axis=1).mean()


# -- adversarial pair -----------------------------------------------------------

def _probs(p) -> Tensor:
    p = as_tensor(p)
    if p.ndim == 0:
        p = p.reshape(1)
    if p.shape[0] == 0:
        raise InvalidArgumentError("probability list must be nonempty")
    if not np.all((p.data > 0) & (p.data < 1)):
        raise NumericError("probabilities must lie strictly inside (0, 1)")
    return p


def discriminator_loss(src_probs, tgt_probs) -> Tensor:
    """-mean log D(source) - mean log(1 - D(target)).

    Pass probabilities computed from detached features so only the
    discriminator receives gradient.
    """
    s, t = _probs(src_probs), _probs(tgt_probs)
    return -s.log().mean() - (1.0 - t).log().mean()


def extractor_adv_loss(src_probs, tgt_probs) -> Tensor:
    """Label-flipped discriminator loss: the extractor tries to fool ``D``.

    Pass probabilities from a frozen discriminator so only the extractor
    receives gradient.
    """
    s, t = _probs(src_probs), _probs(tgt_probs)
    return -(1.0 - s).log().mean() - t.log().mean()


# -- annealing ------------------------------------------------------------------

@dataclass(frozen=True)
class AnnealSchedule:
    """Weight on the entropy term as a function of the iteration counter.

    ``literal=True`` reproduces the cosine formula with its printed sign,
    ``-(cos(pi t / T) + 1) / 2``; kept for audits only.
    """

    T: int = 6000
    mode: str = "cosine"
    constant: float = 0.5
    literal: bool = False

    def __post_init__(self):
        if self.T < 1:
            raise InvalidArgumentError(f"annealing horizon must be >= 1, got {self.T}")
        if self.mode not in ANNEAL_MODES:
            raise InvalidArgumentError(f"unknown anneal mode {self.mode!r}")
        if self.mode == "constant" and not 0.0 <= self.constant <= 1.0:
            raise InvalidArgumentError(f"constant weight must be in [0, 1], got {self.constant}")


def lambda_at(sched: AnnealSchedule, t: float) -> float:
    if sched.mode == "constant":
        return float(sched.constant)
    if t > sched.T:
        return 1.0
    if sched.mode == "linear":
        return float(t) / sched.T
    c = math.cos(math.pi * t / sched.T)
    if sched.literal:
        return -(c + 1.0) / 2.0
    return (1.0 - c) / 2.0


def combined_extractor_objective(ce, adv, ent, lam: float):
    """ce + (1 - lam) * adv + lam * ent."""
    if not 0.0 <= lam <= 1.0:
        raise InvalidArgumentError(f"weight must be in [0, 1], got {lam}")
    return ce + (1.0 - lam) * adv + lam * ent
