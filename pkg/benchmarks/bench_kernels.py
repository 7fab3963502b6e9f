"""Time the hot kernels under the numba and the pure-numpy backends.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each case runs once to warm up (and JIT-compile), then reports the best of
``--repeat`` timings. Outputs of the two backends are compared so a speedup
never hides a wrong answer.
"""

import argparse
import json
import time

import numpy as np

from stereomamba._accel import HAS_NUMBA, set_backend
from stereomamba.autodiff import Tensor, backward
from stereomamba.autodiff import conv as C
from stereomamba.cost import build_gwc_volume
from stereomamba.model import ModelConfig, StereoMamba
from stereomamba.regress import multi_output_loss
from stereomamba.ssm.core import selective_scan


def _best(fn, repeat):
    out = fn()
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def _fwd_bwd(make):
    """Forward + backward of a scalar reduction; returns (output, input gradients)."""
    inputs, fn = make()
    out = fn(*inputs)
    backward(out.sum())
    return [out.data] + [t.grad for t in inputs]


def case_scan(rng):
    G, T, P, N = 8, 1024, 16, 8
    arrs = [rng.uniform(0.5, 1.0, (G, T, P)), rng.standard_normal((G, T, N)),
            rng.standard_normal((G, T, N)), rng.standard_normal((G, T, P))]
    return lambda: ([Tensor(a, requires_grad=True) for a in arrs], selective_scan)


def case_conv3d(rng):
    x = rng.standard_normal((4, 8, 16, 8, 16))
    w = rng.standard_normal((8, 8, 3, 3, 3)) * 0.1
    return lambda: ([Tensor(x, requires_grad=True), Tensor(w, requires_grad=True)],
                    lambda a, b: C.conv3d(a, b, None, 1, 1))


def case_gwc(rng):
    fl = rng.standard_normal((4, 64, 16, 32))
    fr = rng.standard_normal((4, 64, 16, 32))
    return lambda: ([Tensor(fl, requires_grad=True), Tensor(fr, requires_grad=True)],
                    lambda a, b: build_gwc_volume(a, b, 16, 8))


def train_step_case():
    rng = np.random.default_rng(0)
    left = Tensor(rng.random((4, 3, 32, 64)))
    right = Tensor(rng.random((4, 3, 32, 64)))
    gt = rng.uniform(1, 15, (4, 32, 64))
    mask = np.ones_like(gt, dtype=bool)
    model = StereoMamba(ModelConfig(hourglass_count=1, head_hidden=4), seed=0)

    def step():
        model.zero_grad()
        loss = multi_output_loss(model(left, right), gt, mask)
        backward(loss)
        return [float(loss.data)]

    return step


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write the results here")
    args = ap.parse_args(argv)
    backends = ["numba", "numpy"] if HAS_NUMBA else ["numpy"]
    rng = np.random.default_rng(0)
    cases = {"selective_scan fwd+bwd": case_scan(rng), "conv3d 8->8 fwd+bwd": case_conv3d(rng),
             "gwc volume fwd+bwd": case_gwc(rng)}
    results = []
    for name, make in cases.items():
        row = {"case": name}
        outs = {}
        for be in backends:
            set_backend(be)
            row[be], outs[be] = _best(lambda: _fwd_bwd(make), args.repeat)
        if len(outs) == 2:
            row["max_abs_diff"] = max(float(np.max(np.abs(a - b)))
                                      for a, b in zip(outs["numba"], outs["numpy"]))
        results.append(row)
    row = {"case": "train step (batch 4, 32x64)"}
    for be in backends:
        set_backend(be)
        row[be], _ = _best(train_step_case(), max(1, args.repeat // 2))
    results.append(row)
    set_backend(backends[0])

    print(f"{'case':32s} " + " ".join(f"{b + ' [ms]':>12s}" for b in backends) + "   speedup  max|diff|")
    for r in results:
        times = " ".join(f"{1e3 * r[b]:12.2f}" for b in backends)
        speed = f"{r['numpy'] / r['numba']:8.1f}x" if len(backends) == 2 else ""
        diff = f"  {r['max_abs_diff']:.1e}" if "max_abs_diff" in r else ""
        print(f"{r['case']:32s} {times}  {speed}{diff}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()
