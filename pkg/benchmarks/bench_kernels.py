"""Time the compiled kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat 5]

Each kernel runs on identical inputs under both backends; the table lists
the best-of-``repeat`` wall time, the speedup and the largest absolute
difference between the two outputs.
"""
import argparse
import time

import numpy as np

from backdoor_diffusion.diffusion import linear_schedule, temb_table
from backdoor_diffusion.kernels import BACKENDS
from backdoor_diffusion.net import DenoiserNet


def cases(rng):
    s = linear_schedule(100)
    net = DenoiserNet(1, 6, 16, (64, 64), seed=0)
    temb = temb_table(s, net)
    sizes, p0 = net.sizes, net.params.copy()
    n = 2000
    x = rng.normal(size=(n, 1))
    c = rng.normal(size=(n, 6))
    X = rng.normal(size=(256, net.sizes[0]))
    y = rng.normal(size=(256, 1))
    t_idx = rng.integers(1, 101, size=n)
    eps = rng.normal(size=(n, 1))
    order = rng.permutation(n)
    A, B = rng.normal(size=(1000, 3)), rng.normal(size=(1000, 3))

    def train(k):
        p, m, v = p0.copy(), np.zeros_like(p0), np.zeros_like(p0)
        k.train_epoch(p, sizes, m, v, 0, x, c, t_idx, eps, order, s.alpha_bar, temb, 64, 1e-3, 0.9, 0.999, 1e-8)
        return p

    return {
        "mlp_forward (256 rows)": lambda k: k.mlp_forward(p0, sizes, X),
        "mlp_loss_grad (256 rows)": lambda k: k.mlp_loss_grad(p0, sizes, X, y)[1],
        "ddim_encode (2000 x T=100)": lambda k: k.ddim_encode(p0, sizes, x, c, s.alpha_bar, temb),
        "ddim_decode (2000 x T=100)": lambda k: k.ddim_decode(p0, sizes, x, c, s.alpha_bar, temb),
        "train_epoch (2000 rows, batch 64)": train,
        "rbf_kernel_sum (1000 x 1000)": lambda k: np.array(k.rbf_kernel_sum(A, B, 0.5)),
    }


def best_time(fn, repeat):
    out, best = None, float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if "cython" not in BACKENDS:
        print("compiled extension not built; only the numpy fallback is available")
    names = list(BACKENDS)
    print(f"{'kernel':36s}" + "".join(f"{n + ' ms':>12s}" for n in names) + f"{'speedup':>10s}{'max diff':>12s}")
    for label, fn in cases(np.random.default_rng(0)).items():
        times, outs = {}, {}
        for n in names:
            times[n], outs[n] = best_time(lambda: fn(BACKENDS[n]), args.repeat)
        line = f"{label:36s}" + "".join(f"{1e3 * times[n]:12.3f}" for n in names)
        if len(names) == 2:
            diff = float(np.max(np.abs(np.asarray(outs["python"]) - np.asarray(outs["cython"]))))
            line += f"{times['python'] / times['cython']:10.2f}x{diff:12.1e}"
        print(line)


if __name__ == "__main__":
    main()
