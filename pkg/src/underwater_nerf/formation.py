"""Underwater image formation: I = J * T_D + (1 - T_B) * A.

Functions accept numpy arrays or torch tensors and return the same kind.
"""

from dataclasses import dataclass

import numpy as np
import torch

EPS_T = 1e-4  # floor on both transmission maps; keeps log T finite
LOG_VAR_MAX = 20.0


def _to_tensor(x):
    if isinstance(x, torch.Tensor):
        return x, False
    return torch.as_tensor(np.asarray(x, dtype=np.float64)), True


def _like(x, was_numpy):
    return x.detach().numpy() if was_numpy else x


def _check_range(name, x, lo, hi):
    # a few ulps of slack so float32 activations at saturation pass
    slack = 4 * torch.finfo(x.dtype).eps
    if not torch.isfinite(x).all():
        raise ValueError(f"{name} contains NaN or Inf")
    if (x < lo - slack).any() or (x > hi + slack).any():
        raise ValueError(
            f"{name} outside [{lo}, {hi}]: got [{x.min().item():.6g}, {x.max().item():.6g}]"
        )


@dataclass(eq=False)
class ComponentPatch:
    """Aligned scene radiance and transmission maps, channel-last or channel-first."""

    J: object
    T_D: object
    T_B: object

    def validate(self):
        shapes = {tuple(np.shape(m)) for m in (self.J, self.T_D, self.T_B)}
        if len(shapes) != 1:
            raise ValueError(f"component shapes disagree: {sorted(shapes)}")
        _check_range("J", _to_tensor(self.J)[0], 0.0, 1.0)
        _check_range("T_D", _to_tensor(self.T_D)[0], EPS_T, 1.0)
        _check_range("T_B", _to_tensor(self.T_B)[0], EPS_T, 1.0)
        return self


@dataclass(eq=False)
class BackgroundLight:
    A: object
    mu: object
    log_var: object
    z: object


def map_raw_to_components(raw_J, raw_TD, raw_TB):
    """Squash unconstrained head outputs into their physical ranges."""
    shapes = {tuple(np.shape(m)) for m in (raw_J, raw_TD, raw_TB)}
    if len(shapes) != 1:
        raise ValueError(f"raw output shapes disagree: {sorted(shapes)}")
    (j, numpy_in), (td, _), (tb, _) = (_to_tensor(r) for r in (raw_J, raw_TD, raw_TB))
    J = torch.sigmoid(j)
    T_D = EPS_T + (1.0 - EPS_T) * torch.sigmoid(td)
    T_B = EPS_T + (1.0 - EPS_T) * torch.sigmoid(tb)
    return ComponentPatch(_like(J, numpy_in), _like(T_D, numpy_in), _like(T_B, numpy_in))


def compose(components, A_patch, check=True):
    """Recombine components into the degraded image patch."""
    J, numpy_in = _to_tensor(components.J)
    T_D, _ = _to_tensor(components.T_D)
    T_B, _ = _to_tensor(components.T_B)
    A, _ = _to_tensor(A_patch)
    if check:
        components.validate()
        _check_range("A", A, 0.0, 1.0)
        torch.broadcast_shapes(J.shape, A.shape)
    return _like(J * T_D + (1.0 - T_B) * A, numpy_in)


def _sum_to_shape(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def compose_gradients(components, A_patch, upstream):
    """Gradients of ``<upstream, compose(...)>`` w.r.t. J, T_D, T_B and A."""
    J = np.asarray(components.J, dtype=np.float64)
    T_D = np.asarray(components.T_D, dtype=np.float64)
    T_B = np.asarray(components.T_B, dtype=np.float64)
    A = np.asarray(A_patch, dtype=np.float64)
    g = np.asarray(upstream, dtype=np.float64)
    out_shape = np.broadcast_shapes(J.shape, A.shape)
    g = np.broadcast_to(g, out_shape)
    return {
        "J": _sum_to_shape(np.broadcast_to(T_D, out_shape) * g, J.shape),
        "T_D": _sum_to_shape(np.broadcast_to(J, out_shape) * g, T_D.shape),
        "T_B": _sum_to_shape(-np.broadcast_to(A, out_shape) * g, T_B.shape),
        "A": _sum_to_shape(np.broadcast_to(1.0 - T_B, out_shape) * g, A.shape),
    }
