"""Contrastive objectives over a bank of negatives.

All losses are evaluated in float64. The bank argument is either a
:class:`MemoryBank` or an ``M x P`` tensor of unit-norm negatives."""

from typing import Tuple

import torch
import torch.nn.functional as F

from ._errors import EmptyBankError


def _negatives(bank) -> torch.Tensor:
    negatives = bank.snapshot() if hasattr(bank, "snapshot") else torch.as_tensor(bank)
    if negatives.dim() != 2 or negatives.shape[0] == 0:
        raise EmptyBankError("contrastive losses need at least one negative in the bank")
    return negatives.detach().double()


def _rows(z) -> torch.Tensor:
    z = torch.as_tensor(z).double()
    return z.unsqueeze(0) if z.dim() == 1 else z


def contrastive_logits(z, z_pos, bank, tau: float) -> torch.Tensor:
    """``[z . z_pos, z . m_1, ..., z . m_M] / tau`` per row."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    negatives = _negatives(bank)
    z, z_pos = _rows(z), _rows(z_pos)
    positive = (z * z_pos).sum(dim=1, keepdim=True)
    return torch.cat([positive, z @ negatives.T], dim=1) / tau


def conditional_distribution(z_query, z_pos, bank, tau: float = 0.07) -> torch.Tensor:
    """Softmax over the positive and every bank entry; column 0 is the positive."""
    return torch.softmax(contrastive_logits(z_query, z_pos, bank, tau), dim=1)


def infonce_loss(z, z_pos, bank, tau: float = 0.07) -> torch.Tensor:
    """Batch mean of ``-log p(z_pos | z)``."""
    logits = contrastive_logits(z, z_pos, bank, tau)
    return -F.log_softmax(logits, dim=1)[:, 0].mean()


def entropy(p: torch.Tensor) -> torch.Tensor:
    """Batch mean entropy of row distributions."""
    p = _rows(p)
    return -(p * torch.log(p)).sum(dim=1).mean()


def _cross_entropy(target, z, z_key, bank, tau):
    log_p = F.log_softmax(contrastive_logits(z, z_key, bank, tau), dim=1)
    return -(target * log_p).sum(dim=1).mean()


def ddm_loss(
    z1, z2, z3, z3_dropped, bank, tau: float = 0.07
) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Distributional divergence terms ``(L_d1, L_d2, L_d)``.

    The general query's distribution ``p(. | z2)`` is the target for both the
    strong query ``z3`` and its feature-dropped twin; the target and the key
    ``z1`` receive no gradient."""
    key = _rows(z1).detach()
    target = conditional_distribution(z2, key, bank, tau).detach()
    l_d1 = _cross_entropy(target, z3, key, bank, tau)
    l_d2 = _cross_entropy(target, z3_dropped, key, bank, tau)
    return l_d1, l_d2, (l_d1 + l_d2) / 2
