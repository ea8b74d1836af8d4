"""Central finite-difference verification of recorded gradients."""

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from lessnet.autograd import ops
from lessnet.autograd.tensor import Tensor, backward, precision, record
from lessnet.settings import settings

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GradCheckResult:
    """Per-input maximum relative error between analytic and numeric gradients."""

    errors: tuple[float, ...]
    checked: tuple[int, ...]

    @property
    def max_error(self) -> float:
        return max(self.errors) if self.errors else 0.0

    def passed(self, tolerance: float | None = None) -> bool:
        tol = settings.gradcheck_tolerance if tolerance is None else tolerance
        return self.max_error < tol


def _scalarise(out: Tensor, projection: np.ndarray | None) -> Tensor:
    if projection is None:
        return out
    return ops.sum(ops.mul(out, projection))


def check_gradients(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    step: float | None = None,
    max_elements: int | None = 32,
    seed: int = 0,
) -> GradCheckResult:
    """Compare analytic gradients of ``fn`` with central finite differences in float64.

    Non-scalar outputs are reduced with a fixed random projection. The relative
    error of one input is ``max |analytic - numeric|`` over the checked elements,
    divided by the largest gradient magnitude of that input (floored at 1e-8).

    Args:
        fn: Function of tensors returning a tensor
        inputs: Arrays for each argument of ``fn``; all are differentiated
        step: Finite-difference step (default ``settings.gradcheck_step``)
        max_elements: Elements checked per input, drawn at random (None = all)
        seed: Seed for the projection and the element subset

    Returns:
        GradCheckResult with one error per input
    """
    h = settings.gradcheck_step if step is None else step
    rng = np.random.default_rng(seed)

    with precision("float64"):
        arrays = [np.array(x, dtype=np.float64) for x in inputs]
        leaves = [Tensor(x, requires_grad=True) for x in arrays]
        with record() as computation:
            out = fn(*leaves)
            projection = None if out.size == 1 else rng.standard_normal(out.shape)
            loss = _scalarise(out, projection)
            backward(loss, computation)
        analytic = [
            leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves
        ]

        def evaluate(values: list[np.ndarray]) -> float:
            result = _scalarise(fn(*[Tensor(v) for v in values]), projection)
            return result.item()

        errors: list[float] = []
        checked: list[int] = []
        for i, base in enumerate(arrays):
            flat_count = base.size
            if max_elements is None or flat_count <= max_elements:
                positions = np.arange(flat_count)
            else:
                positions = rng.choice(flat_count, size=max_elements, replace=False)
            numeric = np.zeros(len(positions))
            for j, pos in enumerate(positions):
                plus = [a.copy() for a in arrays]
                minus = [a.copy() for a in arrays]
                plus[i].reshape(-1)[pos] += h
                minus[i].reshape(-1)[pos] -= h
                numeric[j] = (evaluate(plus) - evaluate(minus)) / (2 * h)
            exact = analytic[i].reshape(-1)[positions]
            scale = max(float(np.abs(analytic[i]).max()), float(np.abs(numeric).max()), 1e-8)
            errors.append(float(np.abs(exact - numeric).max() / scale))
            checked.append(len(positions))

    result = GradCheckResult(errors=tuple(errors), checked=tuple(checked))
    logger.debug(f"Gradient check: max relative error {result.max_error:.2e} over {sum(checked)} elements")
    return result
