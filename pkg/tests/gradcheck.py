"""Central finite-difference gradient oracle.

Independent of autograd's own checker: we perturb individual coordinates of
the inputs/parameters by +-h and compare the symmetric difference quotient
against the analytic gradient from backprop.
"""

import numpy as np
import torch

STEP = 1e-5
REL_TOL = 1e-4


def _flatten_grads(tensors):
    return torch.cat([t.grad.reshape(-1) for t in tensors])


def central_difference(fn, tensors, index, h=STEP):
    """Symmetric difference quotient of fn along one flat coordinate."""
    t_idx, flat_idx = index
    flat = tensors[t_idx].detach().view(-1)
    orig = flat[flat_idx].item()
    with torch.no_grad():
        flat[flat_idx] = orig + h
        f_plus = fn().item()
        flat[flat_idx] = orig - h
        f_minus = fn().item()
        flat[flat_idx] = orig
    return (f_plus - f_minus) / (2.0 * h)


def check_gradients(fn, tensors, n_probes=20, seed=0, h=STEP, rel_tol=REL_TOL):
    """Compare analytic and finite-difference gradients at random coordinates.

    ``fn`` must be a zero-argument callable returning a scalar tensor that
    depends on ``tensors`` (all float64, requires_grad). Returns the worst
    relative error seen.
    """
    for t in tensors:
        assert t.dtype == torch.float64, "gradient checks run at 64-bit precision"
        t.grad = None
    out = fn()
    out.backward()
    analytic = _flatten_grads(tensors)

    sizes = [t.numel() for t in tensors]
    offsets = np.cumsum([0] + sizes)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_probes):
        flat_global = int(rng.integers(offsets[-1]))
        t_idx = int(np.searchsorted(offsets, flat_global, side="right") - 1)
        flat_idx = flat_global - offsets[t_idx]
        numeric = central_difference(fn, tensors, (t_idx, flat_idx), h)
        exact = analytic[flat_global].item()
        scale = max(abs(exact), abs(numeric), 1e-6)
        rel = abs(exact - numeric) / scale
        worst = max(worst, rel)
        assert rel <= rel_tol, (
            f"gradient mismatch at tensor {t_idx} index {flat_idx}: "
            f"analytic={exact:.10g} numeric={numeric:.10g} rel={rel:.3g}")
    return worst
