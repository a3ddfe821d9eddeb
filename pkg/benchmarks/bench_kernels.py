"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Prints one line per kernel with the median time of each backend and the
speed-up. Inputs match the sizes the default models see in training.
"""

import argparse
import statistics
import timeit

import numpy as np

from phonograph import kernels


def cases(rng):
    T, K, S = 150, 17, 61  # frames, classes incl. blank, extended target length
    logits = rng.normal(size=(T, K))
    lp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    ext = np.full(S, K - 1, dtype=np.int64)
    ext[1::2] = rng.integers(0, K - 1, size=S // 2)

    ref = rng.integers(0, 16, size=40).astype(np.int64)
    hyp = rng.integers(0, 16, size=44).astype(np.int64)

    H, steps = 32, 40  # LSTM over pooled phonemes
    xw = rng.normal(size=(steps, 4 * H))
    w_hh = rng.normal(size=(H, 4 * H)) * 0.2

    def lstm_backward_args(mod):
        hs, cs, gates = mod.lstm_forward(xw, w_hh)
        return (rng.normal(size=hs.shape), w_hh, hs, cs, gates)

    return [
        ("ctc_alpha_beta", lambda mod: (lp, ext)),
        ("edit_distance", lambda mod: (ref, hyp)),
        ("lstm_forward", lambda mod: (xw, w_hh)),
        ("lstm_backward", lstm_backward_args),
    ]


def median_time(fn, args, repeat):
    timer = timeit.Timer(lambda: fn(*args))
    number, _ = timer.autorange()
    return statistics.median(t / number for t in timer.repeat(repeat, number))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    found = kernels.backends()
    if "cython" not in found:
        print("compiled extension not built; only the python backend is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<16} {'python (us)':>12} {'cython (us)':>12} {'speed-up':>9}")
    for name, make_args in cases(rng):
        times = {}
        for backend, mod in found.items():
            times[backend] = median_time(getattr(mod, name), make_args(mod), args.repeat) * 1e6
        py = times["python"]
        cy = times.get("cython")
        if cy is None:
            print(f"{name:<16} {py:12.1f} {'-':>12} {'-':>9}")
        else:
            print(f"{name:<16} {py:12.1f} {cy:12.1f} {py / cy:8.1f}x")


if __name__ == "__main__":
    main()
