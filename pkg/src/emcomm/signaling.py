"""Communication-loss terms.

Two families of positive-signaling inductive bias:

* continuous channel -- a pairwise repulsive potential between the message
  means of a mini-batch, measured with the wrap-around torus metric. Two
  means closer than the cutoff radius lambda2/lambda1 are penalised
  linearly; pairs beyond the cutoff contribute nothing.
* discrete channel -- entropy shaping of per-position categorical message
  policies: maximise the entropy of the batch-average policy while steering
  each member's conditional entropy toward a target value.

Plus the composition of the reinforced-communication loss with the bias.
All losses are differentiable torch scalars; entropies are in nats.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

PROB_SUM_TOL = 1e-6


@dataclass(frozen=True)
class RepulsionParams:
    """Slope and offset of the hinge potential max(-lambda1*d + lambda2, 0)."""

    lambda1: float
    lambda2: float

    def __post_init__(self):
        if not (self.lambda1 > 0 and self.lambda2 > 0):
            raise ValueError("lambda1 and lambda2 must be positive")

    @property
    def cutoff(self) -> float:
        """Distance beyond which two messages no longer repel."""
        return self.lambda2 / self.lambda1


@dataclass(frozen=True)
class DiscretePSParams:
    """Weight and entropy target of the discrete positive-signaling loss."""

    lambda_ps: float
    h_target: float

    def __post_init__(self):
        if self.lambda_ps <= 0:
            raise ValueError("lambda_ps must be positive")
        if self.h_target < 0:
            raise ValueError("h_target must be nonnegative")


@dataclass(frozen=True)
class CommLossWeights:
    """Ablation switches and bias weight of the communication loss."""

    lambda_ib: float = 1.0
    rc_enabled: bool = True
    ps_enabled: bool = True

    def __post_init__(self):
        if self.lambda_ib < 0:
            raise ValueError("lambda_ib must be nonnegative")


@dataclass(frozen=True)
class CategoricalPolicyBatch:
    """A batch of factorized message policies: probs[b, p, a].

    B batch members, P symbol positions, A alphabet symbols. Every
    length-A slice must be a probability distribution.
    """

    probs: torch.Tensor

    def __post_init__(self):
        probs = torch.as_tensor(self.probs)
        if probs.ndim != 3:
            raise ValueError("probs must have shape [B, P, A]")
        with torch.no_grad():
            if probs.min() < 0:
                raise ValueError("probabilities must be nonnegative")
            sums = probs.sum(dim=-1)
            if (sums - 1.0).abs().max() > PROB_SUM_TOL:
                raise ValueError("each length-A slice must sum to 1")
        object.__setattr__(self, "probs", probs)

    @property
    def batch_size(self) -> int:
        return self.probs.shape[0]

    @property
    def alphabet_size(self) -> int:
        return self.probs.shape[2]


def _wrap_means(means: torch.Tensor) -> torch.Tensor:
    # Canonicalize into [-1, 1); torch.remainder has unit gradient a.e.
    return torch.remainder(means + 1.0, 2.0) - 1.0


def _toroidal_sq_dists(first: torch.Tensor, second: torch.Tensor) -> torch.Tensor:
    """Squared torus distances between every row of `first` (rows vary along
    dim 0, gradient-carrying) and every row of `second` (dim 1, detached)."""
    delta = torch.abs(first.unsqueeze(1) - second.detach().unsqueeze(0))
    per_comp = torch.minimum(delta, 2.0 - delta)
    return (per_comp * per_comp).sum(dim=-1)


def _hinge_sum(sq: torch.Tensor, pair_mask: torch.Tensor, p: RepulsionParams) -> torch.Tensor:
    """Sum of max(-lambda1*d + lambda2, 0) over the masked pairs.

    Pairs at exactly zero distance contribute the value lambda2 with zero
    gradient (the repulsion direction is undefined there). Masking stays
    dense: boolean gathers are slow on big pair matrices.
    """
    active = pair_mask & (sq > 0)
    dist = torch.sqrt(torch.where(active, sq, torch.ones_like(sq)))
    pot = torch.relu(-p.lambda1 * dist + p.lambda2)
    pot = torch.where(active, pot, torch.zeros_like(pot))
    zero_pairs = (pair_mask & (sq <= 0)).to(sq.dtype)
    return pot.sum() + p.lambda2 * zero_pairs.sum()


def repulsion(a, b, p: RepulsionParams) -> float:
    """Hinge repulsion between two torus points: max(-lambda1*d + lambda2, 0)."""
    from . import torus

    return max(-p.lambda1 * torus.distance(a, b) + p.lambda2, 0.0)


def continuous_ps_loss(message_means: torch.Tensor, p: RepulsionParams) -> torch.Tensor:
    """Batch repulsion bias: (1/B^2) * sum_{i<j} of the pair potential.

    Only unordered pairs i < j enter the sum, and the second member of each
    pair is detached, so gradient flows through the first operand only.
    Returns 0 for a single-member batch or when all pairs sit beyond the
    cutoff radius.
    """
    means = torch.as_tensor(message_means)
    if means.ndim != 2 or means.shape[0] < 1:
        raise ValueError("message_means must be a non-empty B x n matrix")
    if not torch.all(torch.isfinite(means.detach())):
        raise ValueError("message means must be finite")
    batch = means.shape[0]
    if batch == 1:
        return means.new_zeros(())
    means = _wrap_means(means)
    sq = _toroidal_sq_dists(means, means)
    upper = torch.triu(torch.ones(batch, batch, dtype=torch.bool, device=means.device), diagonal=1)
    return _hinge_sum(sq, upper, p) / float(batch * batch)


def continuous_ps_loss_split(message_means: torch.Tensor, p: RepulsionParams) -> torch.Tensor:
    """Equipartitioned repulsion bias: (2/B) * sum over cross-half pairs.

    The batch is split into halves; every (first-half, second-half) pair is
    penalised with the second operand detached. Cheaper than the full
    quadratic sum at the price of a higher-variance estimate.
    """
    means = torch.as_tensor(message_means)
    if means.ndim != 2 or means.shape[0] < 2 or means.shape[0] % 2 != 0:
        raise ValueError("message_means must be a B x n matrix with even B >= 2")
    if not torch.all(torch.isfinite(means.detach())):
        raise ValueError("message means must be finite")
    batch = means.shape[0]
    half = batch // 2
    means = _wrap_means(means)
    sq = _toroidal_sq_dists(means[:half], means[half:])
    all_pairs = torch.ones(half, half, dtype=torch.bool, device=means.device)
    return 2.0 / float(batch) * _hinge_sum(sq, all_pairs, p)


def average_policy(batch: CategoricalPolicyBatch) -> torch.Tensor:
    """Mini-batch estimate of the average message policy, per position."""
    return batch.probs.mean(dim=0)


def entropy(dist) -> torch.Tensor:
    """Shannon entropy in nats over the last axis, with 0*ln(0) = 0."""
    probs = torch.as_tensor(dist)
    return -torch.special.xlogy(probs, probs).sum(dim=-1)


def discrete_ps_loss(batch: CategoricalPolicyBatch, p: DiscretePSParams) -> torch.Tensor:
    """Target-entropy discrete bias, averaged over symbol positions.

    Per position: -H(average policy) once, plus lambda_ps times the squared
    deviation of each member's conditional entropy from h_target, averaged
    over the batch.
    """
    if p.h_target > torch.log(torch.tensor(float(batch.alphabet_size))) + 1e-12:
        raise ValueError("h_target cannot exceed ln(alphabet size)")
    avg_entropy = entropy(average_policy(batch))          # [P]
    member_entropy = entropy(batch.probs)                 # [B, P]
    penalty = ((member_entropy - p.h_target) ** 2).mean(dim=0)
    return (-avg_entropy + p.lambda_ps * penalty).mean()


def naive_discrete_ps_loss(batch: CategoricalPolicyBatch, lambda_ps: float) -> torch.Tensor:
    """Diagnostic variant that minimises the conditional entropy directly."""
    if lambda_ps <= 0:
        raise ValueError("lambda_ps must be positive")
    avg_entropy = entropy(average_policy(batch))
    member_entropy = entropy(batch.probs).mean(dim=0)
    return (-avg_entropy + lambda_ps * member_entropy).mean()


def compose_comm_loss(rc_loss, ib_loss, w: CommLossWeights) -> torch.Tensor:
    """Total communication loss: enabled RC term plus lambda_ib-weighted bias."""
    rc = rc_loss if torch.is_tensor(rc_loss) else torch.as_tensor(float(rc_loss))
    ib = ib_loss if torch.is_tensor(ib_loss) else torch.as_tensor(float(ib_loss))
    for name, term in (("rc_loss", rc), ("ib_loss", ib)):
        if not torch.all(torch.isfinite(term.detach())):
            raise ValueError(f"{name} must be finite")
    total = rc.new_zeros(()) + ib.new_zeros(())
    if w.rc_enabled:
        total = total + rc
    if w.ps_enabled:
        total = total + w.lambda_ib * ib
    return total
