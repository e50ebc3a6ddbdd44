"""Central finite-difference gradient checks shared by the test modules."""

import numpy as np
import torch


def fd_gradient(loss_fn, x: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    """Central differences of the scalar loss_fn() with respect to x."""
    grad = torch.zeros_like(x)
    flat = x.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.numel()):
        orig = float(flat[i])
        with torch.no_grad():
            flat[i] = orig + eps
        f_plus = float(loss_fn().detach())
        with torch.no_grad():
            flat[i] = orig - eps
        f_minus = float(loss_fn().detach())
        with torch.no_grad():
            flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def assert_close_grads(analytic: torch.Tensor, numeric: torch.Tensor,
                       rtol: float = 1e-4, atol: float = 1e-8) -> None:
    a = analytic.detach().double().reshape(-1)
    n = numeric.detach().double().reshape(-1)
    for i in range(a.numel()):
        denom = max(abs(float(a[i])), abs(float(n[i])))
        err = abs(float(a[i]) - float(n[i]))
        assert err <= rtol * denom + atol, (
            f"coordinate {i}: analytic {float(a[i]):.10g} vs numeric {float(n[i]):.10g}"
        )


def check_param_gradients(loss_fn, module: torch.nn.Module, n_coords: int = 20,
                          eps: float = 1e-5, rtol: float = 1e-4, seed: int = 0) -> int:
    """Compare autograd parameter gradients against central differences.

    Samples up to n_coords coordinates per parameter tensor. Returns the
    number of coordinates checked. loss_fn must be deterministic.
    """
    module.zero_grad()
    loss = loss_fn()
    loss.backward()
    rng = np.random.default_rng(seed)
    checked = 0
    for param in module.parameters():
        if not param.requires_grad:
            continue
        flat = param.data.reshape(-1)
        grad_flat = (
            param.grad.reshape(-1) if param.grad is not None else torch.zeros_like(flat)
        )
        count = min(n_coords, flat.numel())
        idxs = rng.choice(flat.numel(), size=count, replace=False)
        for i in idxs:
            orig = float(flat[i])
            with torch.no_grad():
                flat[i] = orig + eps
            f_plus = float(loss_fn())
            with torch.no_grad():
                flat[i] = orig - eps
            f_minus = float(loss_fn())
            with torch.no_grad():
                flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            analytic = float(grad_flat[i])
            denom = max(abs(analytic), abs(numeric))
            assert abs(analytic - numeric) <= rtol * denom + 1e-8, (
                f"{type(module).__name__} param coord {i}: "
                f"analytic {analytic:.10g} vs numeric {numeric:.10g}"
            )
            checked += 1
    module.zero_grad()
    return checked
