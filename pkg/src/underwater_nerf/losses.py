"""Self-supervised loss terms. All images are channel-last (..., 3) tensors.

Every norm is a mean over elements, so the weights do not depend on how many
patches a batch holds.
"""

import math
from dataclasses import asdict, dataclass, field

import torch
import torch.nn.functional as F

from .formation import EPS_T

EPS_S = 1e-6
GLOB_WINDOW = 7
TERMS = ("rec", "con", "col", "kl", "trans", "glob")
CHANNEL_PAIRS = ((0, 1), (0, 2), (1, 2))


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass(frozen=True)
class LossWeights:
    rec: float = 1.0
    con: float = 0.1
    col: float = 1.0
    kl: float = 1.0
    trans: float = 0.1
    glob: float = 0.1

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not (math.isfinite(value) and value >= 0):
                raise ValueError(f"loss weight {name} must be finite and >= 0, got {value}")


@dataclass
class LossReport:
    rec: float
    con: float
    col: float
    kl: float
    trans: float
    glob: float
    total: float
    total_tensor: torch.Tensor = field(default=None, repr=False, compare=False)

    def as_dict(self):
        return {name: getattr(self, name) for name in TERMS + ("total",)}


def _t(x):
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(x, dtype=torch.float64)


def l_rec(pred, target):
    pred, target = _t(pred), _t(target)
    if pred.shape != target.shape:
        raise ValueError(f"prediction {tuple(pred.shape)} and target {tuple(target.shape)} differ in shape")
    return ((pred - target) ** 2).mean()


def l_con(J):
    """Mean squared gap between HSV value and saturation."""
    J = _t(J)
    value = J.max(dim=-1).values
    sat = (value - J.min(dim=-1).values) / value.clamp(min=EPS_S)
    return ((value - sat) ** 2).mean()


def l_col(J):
    """Gray-world penalty: squared deviation of each channel mean from 0.5, summed."""
    J = _t(J)
    means = J.reshape(-1, J.shape[-1]).mean(dim=0)
    return ((means - 0.5) ** 2).sum()


def l_kl(mu, log_var):
    """KL(N(mu, exp(log_var)) || N(0, I)), summed over latent dims, averaged over a batch."""
    mu, log_var = _t(mu), _t(log_var)
    kl = 0.5 * (torch.expm1(log_var) - log_var + mu**2).sum(dim=-1)  # expm1 keeps tiny log_var from going negative
    return kl.mean()


def l_trans(T_B):
    """Within-patch spread of the channel log-ratios of the backscatter transmission.

    ``T_B`` is (B, p, p, 3) or a single (H, W, 3) patch.
    """
    T = _t(T_B)
    if T.ndim == 3:
        T = T[None]
    logs = torch.log(T.clamp(EPS_T, 1.0 - EPS_T)).flatten(1, -2)  # (B, P, 3)
    total = 0.0
    for c1, c2 in CHANNEL_PAIRS:
        ratio = logs[..., c1] / logs[..., c2]
        dev = ratio - ratio.mean(dim=1, keepdim=True)
        total = total + (dev**2).mean(dim=1)
    return total.mean()


def local_variance(A, window=GLOB_WINDOW):
    """Variance of an (H, W, C) map inside the window centered at each pixel (reflect padding)."""
    A = _t(A)
    H, W, C = A.shape
    if H < window or W < window:
        raise ValueError(f"map of size {H}x{W} is smaller than the {window}x{window} window")
    r = window // 2
    x = F.pad(A.permute(2, 0, 1)[None], (r, r, r, r), mode="reflect")
    patches = F.unfold(x, window).reshape(C, window * window, H, W)
    # shift by the center pixel first: exact zero on constant windows
    d = patches - A.permute(2, 0, 1)[:, None]
    mean = d.mean(dim=1, keepdim=True)
    return ((d - mean) ** 2).mean(dim=1).permute(1, 2, 0)


def l_glob(A, window=GLOB_WINDOW):
    """Mean local variance of the background light map."""
    return local_variance(A, window).mean()


def total_loss(terms, weights=None):
    """Weighted sum of the six terms; keeps the unweighted values in the report."""
    weights = weights or LossWeights()
    values = {}
    total = 0.0
    for name in TERMS:
        term = _t(terms[name])
        if not torch.isfinite(term).all():
            raise NonFiniteLossError(f"loss term {name!r} is not finite: {term}")
        values[name] = float(term.detach())
        total = total + getattr(weights, name) * term
    total = _t(total)
    return LossReport(**values, total=float(total.detach()), total_tensor=total)
