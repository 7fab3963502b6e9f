"""Central finite-difference checks for taped functions."""

import numpy as np

from .tensor import Tensor, backward


def numerical_grad(fn, arrays, index, step=1e-5, coords=None):
    """Central differences of scalar ``fn(*arrays)`` w.r.t. ``arrays[index]``.

    ``fn`` takes and returns plain float64 arrays/floats. Only ``coords``
    (flat indices) are perturbed when given.
    """
    base = arrays[index]
    flat = base.reshape(-1)
    coords = range(flat.size) if coords is None else coords
    out = {}
    for c in coords:
        orig = flat[c]
        flat[c] = orig + step
        fp = float(fn(*arrays))
        flat[c] = orig - step
        fm = float(fn(*arrays))
        flat[c] = orig
        out[c] = (fp - fm) / (2.0 * step)
    return out


def gradcheck(fn, inputs, step=1e-5, rtol=1e-5, atol=1e-8, max_coords=None, seed=0):
    """Compare tape adjoints of ``fn`` with central finite differences.

    ``fn`` maps Tensors to a Tensor of any shape; it is reduced to a scalar by
    a fixed random projection. Each input coordinate must satisfy
    ``|analytic - numeric| <= rtol * max(|analytic|, |numeric|) + atol``.
    Returns ``(ok, worst_relative_error, report)``.
    """
    rng = np.random.default_rng(seed)
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(*tensors)
    proj = rng.standard_normal(out.shape)
    loss = (out * Tensor(proj)).sum()
    backward(loss)

    def scalar(*arrs):
        from .tensor import no_grad
        with no_grad():
            y = fn(*[Tensor(a) for a in arrs])
        return float((y.data * proj).sum())

    worst, ok, report = 0.0, True, []
    for i, t in enumerate(tensors):
        analytic = np.zeros(t.shape) if t.grad is None else t.grad
        n = analytic.size
        if max_coords is not None and n > max_coords:
            coords = sorted(rng.choice(n, size=max_coords, replace=False).tolist())
        else:
            coords = list(range(n))
        num = numerical_grad(scalar, arrays, i, step=step, coords=coords)
        flat = analytic.reshape(-1)
        for c in coords:
            a, b = flat[c], num[c]
            err = abs(a - b)
            scale = max(abs(a), abs(b))
            rel = err / scale if scale > 0 else 0.0
            if err > rtol * scale + atol:
                ok = False
                report.append((i, c, a, b))
            if scale > 1e-6:
                worst = max(worst, rel)
    return ok, worst, report
