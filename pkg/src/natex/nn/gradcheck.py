"""Finite-difference gradient verification for trainable blocks.

Central differences with a fixed step on a subsampled set of scalar
coordinates, compared against autograd gradients in double precision.
"""

from __future__ import annotations

import torch

FD_STEP = 1e-5
REL_EPS = 1e-8


def grad_check(fn, tensors: list[torch.Tensor], n_samples: int = 200,
               step: float = FD_STEP, seed: int = 0) -> float:
    """Max relative error between autograd and central finite differences.

    `fn(*tensors)` must return a scalar. Every tensor is treated as a leaf;
    >= n_samples coordinates are drawn across all of them (all coordinates
    when fewer exist). Relative error uses max(|a|, |b|, 1e-8) as denominator.
    """
    leaves = []
    for t in tensors:
        t = t.detach().to(torch.float64).clone().requires_grad_(True)
        leaves.append(t)

    loss = fn(*leaves)
    grads = torch.autograd.grad(loss, leaves, allow_unused=True)

    sizes = [t.numel() for t in leaves]
    total = sum(sizes)
    gen = torch.Generator().manual_seed(seed)
    k = min(n_samples, total)
    flat_idx = torch.randperm(total, generator=gen)[:max(k, min(n_samples, total))]

    max_rel = 0.0
    with torch.no_grad():
        for fi in flat_idx.tolist():
            ti = 0
            while fi >= sizes[ti]:
                fi -= sizes[ti]
                ti += 1
            flat = leaves[ti].view(-1)
            orig = flat[fi].item()
            flat[fi] = orig + step
            up = fn(*leaves).item()
            flat[fi] = orig - step
            dn = fn(*leaves).item()
            flat[fi] = orig
            fd = (up - dn) / (2.0 * step)
            an = 0.0 if grads[ti] is None else grads[ti].view(-1)[fi].item()
            rel = abs(fd - an) / max(abs(fd), abs(an), REL_EPS)
            max_rel = max(max_rel, rel)
    return max_rel


def module_grad_check(module: torch.nn.Module, inputs: list[torch.Tensor],
                      n_samples: int = 200, seed: int = 0) -> float:
    """grad_check over a module's parameters and inputs jointly.

    The module output is scalarized with a fixed random projection so every
    output coordinate influences the loss.
    """
    module = module.double()
    n_params = sum(1 for _ in module.parameters())

    proj: dict = {}

    def run(*leaves):
        params = leaves[:n_params]
        ins = leaves[n_params:]
        out = torch.func.functional_call(
            module, dict(zip([n for n, _ in module.named_parameters()], params)),
            tuple(ins))
        outs = out if isinstance(out, (tuple, list)) else (out,)
        total = None
        for i, o in enumerate(outs):
            if i not in proj:
                gen = torch.Generator().manual_seed(seed + 1000 + i)
                proj[i] = torch.randn(o.shape, generator=gen, dtype=torch.float64)
            term = (o * proj[i]).sum()
            total = term if total is None else total + term
        return total

    leaves = [p.detach() for p in module.parameters()] + list(inputs)
    return grad_check(run, leaves, n_samples=n_samples, seed=seed)
