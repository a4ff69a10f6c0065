"""Scalar training objectives for the generator and critic.

All functions are pure and operate on tensors (python scalars are
promoted to float64 tensors so closed-form checks stay exact).
"""

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .corpus import PAD_ID


@dataclass
class LossConfig:
    alpha: float = 1.0
    beta: float = 0.5
    lam: float = 10.0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")


def _scalar(x):
    if torch.is_tensor(x):
        return x
    return torch.as_tensor(x, dtype=torch.float64)


def _batch(x):
    if torch.is_tensor(x):
        return x
    return torch.as_tensor(x, dtype=torch.float64)


def _masked_token_ce(logits, targets, pad_id):
    """Per-example sum of token cross-entropies over non-PAD steps."""
    if logits.shape[:-1] != targets.shape:
        raise ValueError(f"logits steps {tuple(logits.shape[:-1])} do not match targets {tuple(targets.shape)}")
    ce = F.cross_entropy(logits.reshape(-1, logits.shape[-1]), targets.reshape(-1), reduction="none")
    ce = ce.reshape(targets.shape)
    mask = (targets != pad_id).to(ce.dtype)
    return (ce * mask).sum(dim=-1)


def reconstruction_loss(logits_x, logits_y, targets_x, targets_y, pad_id=PAD_ID):
    """Token cross-entropy summed over both sentences, averaged over the batch."""
    per_example = _masked_token_ce(logits_x, targets_x, pad_id) + _masked_token_ce(logits_y, targets_y, pad_id)
    return per_example.mean()


def wasserstein_estimate(scores_real, scores_fake):
    """mean(real) - mean(fake): the critic's distance potential gap."""
    real, fake = _batch(scores_real), _batch(scores_fake)
    if real.numel() == 0 or fake.numel() == 0:
        raise ValueError("empty score batch")
    return real.mean() - fake.mean()


def critic_loss(scores_real, scores_fake, penalty, lam):
    """Negated Wasserstein estimate plus the weighted gradient penalty."""
    return _batch(scores_fake).mean() - _batch(scores_real).mean() + lam * _scalar(penalty)


def multiclass_generator_loss(W, target, alpha, beta):
    """Triplet-style generator objective over N class distances.

    (1-beta) * W[target] + beta/(N-1) * sum_{j != target} relu(W[target] - W[j] + alpha).
    ``target`` is a 0-based class index.
    """
    n = len(W)
    if n < 2:
        raise ValueError("need at least 2 classes")
    if not 0 <= target < n:
        raise ValueError(f"target class {target} out of range for {n} classes")
    w_i = _scalar(W[target])
    hinge = None
    for j in range(n):
        if j == target:
            continue
        term = torch.clamp(w_i - _scalar(W[j]) + alpha, min=0)
        hinge = term if hinge is None else hinge + term
    return (1.0 - beta) * w_i + (beta / (n - 1)) * hinge


def generator_loss(W_pos, W_neg, alpha, beta):
    """Two-class specialization: pull toward positives, push a margin from negatives."""
    w_p = _scalar(W_pos)
    return (1.0 - beta) * w_p + beta * torch.clamp(w_p - _scalar(W_neg) + alpha, min=0)


def combined_generator_objective(L_g, L_AE_p, L_AE_n):
    """Generator loss plus half the two auto-encoding losses."""
    return _scalar(L_g) + 0.5 * (_scalar(L_AE_p) + _scalar(L_AE_n))
