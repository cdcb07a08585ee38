"""Training objectives: velocity regression, InfoNCE-style contrastive
separation of shared vs. private features, orthogonality penalty, and their
weighted combination.

Conventions (fixed here, asserted by the test suite):

* the contrastive positive pairs are (aggregated, shared_j) for j = 1..J;
  negatives are (aggregated, private_j) for all j plus every unordered
  private/private pair i < j, each counted once
* similarities are cosine; every exponentiated term uses the same
  temperature tau
* the orthogonality penalty is the plain sum of cosine similarities over the
  same private/private pairs plus (shared_j, private_j) for each j; a
  clamped variant max(0, cos) is available behind a flag
* losses are computed per window and averaged over the batch
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from . import tensor as T
from .errors import ConfigError
from .network import FeatureBundle
from .tensor import Tensor


@dataclass
class LossWeights:
    lambda_v: float = 1.0
    lambda_c: float = 0.2
    lambda_o: float = 0.05
    tau: float = 0.1

    def __post_init__(self):
        for name in ("lambda_v", "lambda_c", "lambda_o"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.tau <= 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")


@dataclass
class LossReport:
    l_vel: float
    l_con: float
    l_orth: float
    total: float
    per_head_vel_mse: tuple[float, ...] = ()
    orth_clamped: bool = False


def _scalarize(value) -> float:
    return value.item() if isinstance(value, Tensor) else float(value)


def _batch_mean(x: Tensor) -> Tensor:
    return T.reduce_mean(x) if x.ndim > 0 else x


def velocity_loss(velocities: Sequence[Tensor], target: Tensor) -> Tensor:
    """Mean over the J+1 heads of the MSE against the window target."""
    if not velocities:
        raise ConfigError("velocity_loss needs at least one prediction head")
    acc = None
    for v in velocities:
        err = T.sub(v, target)
        mse = T.reduce_mean(T.mul(err, err))
        acc = mse if acc is None else T.add(acc, mse)
    return T.scale(acc, 1.0 / len(velocities))


def per_head_velocity_mse(velocities: Sequence[Tensor], target: Tensor) -> tuple[float, ...]:
    out = []
    with T.no_grad():
        for v in velocities:
            err = T.sub(v, target)
            out.append(T.reduce_mean(T.mul(err, err)).item())
    return tuple(out)


def contrastive_loss(bundle: FeatureBundle, tau: float) -> Tensor:
    """InfoNCE over exponentiated cosine similarities.

    Each of the J terms shares the same negative mass: the aggregated
    feature against every private feature, plus all unordered
    private/private pairs. With J=1 the private/private set is empty and
    the loss is still defined.
    """
    if tau <= 0:
        raise ConfigError(f"tau must be positive, got {tau}")
    inv_tau = 1.0 / tau
    agg = bundle.aggregated
    pos_logits = [T.scale(T.cosine_similarity(agg, h), inv_tau) for h in bundle.shared]

    neg = None
    for p in bundle.private:
        term = T.exp(T.scale(T.cosine_similarity(agg, p), inv_tau))
        neg = term if neg is None else T.add(neg, term)
    for i in range(len(bundle.private)):
        for j in range(i + 1, len(bundle.private)):
            term = T.exp(T.scale(T.cosine_similarity(bundle.private[i], bundle.private[j]),
                                 inv_tau))
            neg = term if neg is None else T.add(neg, term)

    loss = None
    for logit in pos_logits:
        s_pos = T.exp(logit)
        denom = s_pos if neg is None else T.add(s_pos, neg)
        term = T.sub(T.log(denom), logit)
        loss = term if loss is None else T.add(loss, term)
    return _batch_mean(loss)


def orthogonality_loss(bundle: FeatureBundle, clamped: bool = False) -> Tensor:
    """Sum of cosine similarities between features meant to be disjoint."""
    terms = []
    private = bundle.private
    for i in range(len(private)):
        for j in range(i + 1, len(private)):
            terms.append(T.cosine_similarity(private[i], private[j]))
    for h, p in zip(bundle.shared, private):
        terms.append(T.cosine_similarity(h, p))
    if not terms:
        return Tensor(0.0, dtype=bundle.aggregated.dtype)
    if clamped:
        terms = [T.relu(t) for t in terms]
    acc = terms[0]
    for t in terms[1:]:
        acc = T.add(acc, t)
    return _batch_mean(acc)


def weighted_total(l_vel: Tensor, l_con: Tensor | None, l_orth: Tensor | None,
                   weights: LossWeights) -> Tensor:
    """Differentiable weighted sum used as the training objective."""
    total = T.scale(l_vel, weights.lambda_v)
    if l_con is not None:
        total = T.add(total, T.scale(l_con, weights.lambda_c))
    if l_orth is not None:
        total = T.add(total, T.scale(l_orth, weights.lambda_o))
    return total


def total_loss(l_vel, l_con, l_orth, weights: LossWeights,
               per_head_vel_mse: tuple[float, ...] = (),
               orth_clamped: bool = False) -> LossReport:
    """Bookkeeping combination of already-computed loss values."""
    lv, lc, lo = _scalarize(l_vel), _scalarize(l_con), _scalarize(l_orth)
    total = weights.lambda_v * lv + weights.lambda_c * lc + weights.lambda_o * lo
    return LossReport(l_vel=lv, l_con=lc, l_orth=lo, total=total,
                      per_head_vel_mse=tuple(per_head_vel_mse),
                      orth_clamped=orth_clamped)
