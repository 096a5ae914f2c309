"""Central finite-difference gradient verification in float64."""

from __future__ import annotations

import torch


def numerical_gradient(fn, x: torch.Tensor, h: float = 1e-4) -> torch.Tensor:
    """d fn(x) / dx by central differences; ``fn`` returns a scalar tensor."""
    x = x.detach().clone()
    grad = torch.zeros_like(x)
    flat = x.view(-1)
    gflat = grad.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            old = flat[i].item()
            flat[i] = old + h
            fp = fn(x).item()
            flat[i] = old - h
            fm = fn(x).item()
            flat[i] = old
            gflat[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(analytic: torch.Tensor, numeric: torch.Tensor, floor: float = 1e-3) -> float:
    """max_i |a_i - n_i| / max(|a_i|, |n_i|, floor * max|n|).

    The floor keeps near-zero components from dominating; it is relative to
    the largest numeric component so the measure stays scale-free.
    """
    scale = max(float(numeric.abs().max()), 1e-30)
    denom = torch.maximum(torch.maximum(analytic.abs(), numeric.abs()), torch.full_like(numeric, floor * scale))
    return float(((analytic - numeric).abs() / denom).max())


def check_gradients(module_or_fn, inputs: list[torch.Tensor], h: float = 1e-4, seed: int = 0, params=True) -> dict[str, float]:
    """Compare autograd against central differences for every input and parameter.

    The output is reduced to a scalar with a fixed random projection so that
    every output component contributes. Returns name -> max relative error.
    """
    gen = torch.Generator().manual_seed(seed)
    inputs = [x.detach().to(torch.float64).requires_grad_(True) for x in inputs]
    module = module_or_fn if isinstance(module_or_fn, torch.nn.Module) else None
    if module is not None:
        module.double()
    with torch.no_grad():
        out = module_or_fn(*inputs)
    proj = torch.randn(out.shape, generator=gen, dtype=torch.float64)

    def scalar(*xs):
        return (module_or_fn(*xs) * proj).sum()

    loss = scalar(*inputs)
    named = []
    if module is not None and params:
        named = [(n, p) for n, p in module.named_parameters() if p.requires_grad]
    grads = torch.autograd.grad(loss, inputs + [p for _, p in named], allow_unused=True)

    errors = {}
    for k, (x, g) in enumerate(zip(inputs, grads[: len(inputs)])):
        g = torch.zeros_like(x) if g is None else g

        def f(xk, k=k):
            xs = list(inputs)
            xs[k] = xk
            return scalar(*[t.detach() for t in xs])

        errors[f"input{k}"] = relative_error(g, numerical_gradient(f, x, h))
    for (name, p), g in zip(named, grads[len(inputs) :]):
        g = torch.zeros_like(p) if g is None else g

        def f(pv, p=p):
            with torch.no_grad():
                saved = p.detach().clone()
                p.copy_(pv)
                val = scalar(*[t.detach() for t in inputs])
                p.copy_(saved)
            return val

        errors[name] = relative_error(g, numerical_gradient(f, p.detach(), h))
    return errors
