"""Central finite-difference oracle shared by the gradient tests."""
import numpy as np

from chainqa import autodiff as ad

EPS = 1e-5
RTOL = 1e-4


def numeric_grad(loss_fn, array: np.ndarray, eps: float = EPS) -> np.ndarray:
    """d loss / d array by central differences; ``array`` is perturbed in place and restored."""
    grad = np.zeros_like(array)
    it = np.nditer(array, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = array[i]
        array[i] = orig + eps
        up = loss_fn()
        array[i] = orig - eps
        down = loss_fn()
        array[i] = orig
        grad[i] = (up - down) / (2 * eps)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if denom < 1e-12 else float(np.linalg.norm(a - b) / denom)


def check_gradients(build_loss, params: dict, rtol: float = RTOL) -> dict[str, float]:
    """Compare tape gradients of ``build_loss()`` with finite differences for each parameter.

    ``build_loss`` returns a scalar Tensor. Returns the per-parameter relative errors and
    asserts each is within ``rtol``.
    """
    for p in params.values():
        p.grad = None
    loss = build_loss()
    loss.backward()
    errors = {}
    for name, p in params.items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)

        def value():
            with ad.no_grad():
                return build_loss().item()

        errors[name] = relative_error(analytic, numeric_grad(value, p.data))
    bad = {k: v for k, v in errors.items() if v > rtol}
    assert not bad, f"gradient mismatch: {bad}"
    return errors
