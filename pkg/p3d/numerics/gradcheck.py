"""
Finite-difference audits of autodiff gradients in float64.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import torch

logger = logging.getLogger(__name__)


@dataclass
class GradientCheck:
    """Comparison of one sampled parameter entry"""
    name: str
    index: int
    analytic: float
    numeric: float

    @property
    def rel_error(self) -> float:
        scale = max(abs(self.analytic), abs(self.numeric), 1e-8)
        return abs(self.analytic - self.numeric) / scale

    def passes(self, rtol: float = 1e-4, atol: float = 1e-9) -> bool:
        return abs(self.analytic - self.numeric) <= atol or self.rel_error <= rtol


def perturb_parameters(module: torch.nn.Module, scale: float, generator: Optional[torch.Generator] = None) -> torch.nn.Module:
    """Add scale·N(0, 1) noise to every parameter in place."""
    with torch.no_grad():
        for p in module.parameters():
            p.add_(scale * torch.randn(p.shape, generator=generator, dtype=p.dtype))
    return module


def check_function(fn: Callable, inputs, eps: float = 1e-6, atol: float = 1e-8, rtol: float = 1e-5) -> bool:
    """torch.autograd.gradcheck on f64 inputs; raises on mismatch."""
    return torch.autograd.gradcheck(fn, inputs, eps=eps, atol=atol, rtol=rtol)


def check_module_gradients(
    module: torch.nn.Module,
    loss_fn: Callable[[], torch.Tensor],
    samples_per_tensor: int = 3,
    h: float = 1e-6,
    generator: Optional[torch.Generator] = None,
    names: Optional[List[str]] = None,
) -> List[GradientCheck]:
    """Central differences on sampled entries of every (or the named) parameter.

    The module is expected to be in float64; loss_fn recomputes the scalar loss
    from the module's current parameters.
    """
    params: Dict[str, torch.nn.Parameter] = dict(module.named_parameters())
    selected = names if names is not None else list(params)
    module.zero_grad(set_to_none=True)
    loss = loss_fn()
    grads = torch.autograd.grad(loss, [params[n] for n in selected], allow_unused=True)

    results = []
    with torch.no_grad():
        for name, grad in zip(selected, grads):
            p = params[name]
            flat = p.view(-1)
            count = min(samples_per_tensor, flat.numel())
            idx = torch.randperm(flat.numel(), generator=generator)[:count]
            analytic = torch.zeros_like(p).view(-1) if grad is None else grad.reshape(-1)
            for i in idx.tolist():
                original = flat[i].item()
                flat[i] = original + h
                plus = loss_fn().item()
                flat[i] = original - h
                minus = loss_fn().item()
                flat[i] = original
                results.append(GradientCheck(name, i, analytic[i].item(), (plus - minus) / (2 * h)))
    worst = max((r.rel_error for r in results), default=0.0)
    logger.info(f"Checked {len(results)} entries over {len(selected)} tensors, worst rel. error {worst:.3e}")
    return results
