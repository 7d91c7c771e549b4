"""Shared fixtures and oracle helpers for the test suite."""

import numpy as np
import pytest
import torch

from mfn.config import Config, LossWeights, PipelineConfig, TrainConfig, toy_model_config


def finite_difference_gradient(fn, tensor: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """Central-difference gradient of a scalar function w.r.t. one
    double-precision tensor, element by element."""
    assert tensor.dtype == torch.float64, "finite differences need float64"
    grad = torch.zeros_like(tensor)
    flat = tensor.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + eps
        f_plus = float(fn())
        flat[i] = orig - eps
        f_minus = float(fn())
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def assert_gradients_close(analytic: torch.Tensor, numeric: torch.Tensor,
                           rtol: float = 1e-3, atol: float = 1e-6, label: str = ""):
    diff = (analytic - numeric).abs()
    tol = atol + rtol * numeric.abs()
    worst = (diff - tol).max().item()
    assert torch.all(diff <= tol), (
        f"gradient mismatch{' for ' + label if label else ''}: "
        f"max excess {worst:.3e}, analytic {analytic.flatten()[:4]}, "
        f"numeric {numeric.flatten()[:4]}")


def check_module_gradients(module: torch.nn.Module, inputs: list[torch.Tensor],
                           forward, rtol: float = 1e-3, label: str = ""):
    """Compare autograd gradients of a scalar-reducing forward against
    central finite differences, for every input and every parameter."""
    for t in inputs:
        t.requires_grad_(True)
    params = [p for p in module.parameters() if p.requires_grad]
    loss = forward()
    grads = torch.autograd.grad(loss, inputs + params, allow_unused=True)
    with torch.no_grad():
        for tensor, grad in zip(inputs + params, grads):
            analytic = torch.zeros_like(tensor) if grad is None else grad
            numeric = finite_difference_gradient(forward, tensor)
            assert_gradients_close(analytic, numeric, rtol=rtol, label=label)


@pytest.fixture
def toy_config() -> Config:
    return Config(
        data=PipelineConfig(train_crop=(32, 32), test_size=(32, 32), seed=3),
        model=toy_model_config(),
        loss=LossWeights(),
        train=TrainConfig(batch_size=2, max_iters=10, decay_window=4,
                          checkpoint_interval=100, seed=11),
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One PASS/FAIL line per acceptance criterion."""
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance" in nodeid and "::" in nodeid:
                name = nodeid.split("::")[-1]
                lines.append((name, "PASS" if outcome == "passed" else "FAIL"))
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for name, verdict in sorted(set(lines)):
            terminalreporter.write_line(f"{verdict}  {name}")
