"""Finite-difference helpers shared by the gradient tests."""

import numpy as np

from deepclaim import diffkit as dk
from deepclaim.model import forward, total_loss


def projected(out: dk.Tensor, R: np.ndarray) -> dk.Tensor:
    """Scalar ``sum(out * R)`` so a non-scalar op can be checked."""
    if out.value.ndim == 0:
        return out
    return dk.total(dk.hadamard(out, dk.Tensor(R)))


def check_op(op, arrays, rng, tol):
    """Compare analytic and central-difference gradients of ``sum(op(*leaves) * R)``.

    Returns the worst relative error over all inputs.
    """
    out0 = op(*[dk.Tensor(a) for a in arrays])
    R = rng.normal(size=out0.value.shape)

    def f():
        return float(projected(op(*[dk.Tensor(a) for a in arrays]), R).value)

    leaves = [dk.Tensor(a, requires_grad=True, name=f"a{i}") for i, a in enumerate(arrays)]
    grads = dk.backward(projected(op(*leaves), R), wrt=leaves)
    worst = 0.0
    for i, a in enumerate(arrays):
        num = dk.numerical_gradient(f, a)
        worst = max(worst, dk.relative_error(grads[f"a{i}"], num))
    assert worst < tol, worst
    return worst


def randomize_biases(params, rng, scale=0.3):
    """Nonzero biases and BN shifts keep pre-activations away from relu kinks."""
    for name, arr in params.arrays.items():
        if name.endswith(".b") or name.endswith(".beta"):
            arr[:] = rng.normal(0, scale, arr.shape)
    return params


def model_gradient_error(params, config, X, y) -> dict[str, float]:
    """Relative error of every parameter gradient of the training-mode loss."""

    def f():
        fwd = forward(params, X, config, training=True)
        return float(total_loss(fwd, y, config.lambdas)[0].value)

    fwd = forward(params, X, config, training=True)
    loss, _ = total_loss(fwd, y, config.lambdas)
    grads = dk.backward(loss, wrt=fwd.params.values())
    return {
        name: dk.relative_error(grads[name], dk.numerical_gradient(f, params.arrays[name]))
        for name in params.arrays
    }
