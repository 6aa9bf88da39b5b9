"""Compare the numba and numpy paths of every hot kernel.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Both variants are called directly (``*_nb`` and ``*_np``), so the
``CROSSMASK_DISABLE_NUMBA`` flag does not matter here. The numba variant is
warmed up once so compilation is excluded.
"""
import argparse
import timeit

import numpy as np

from crossmask import HAVE_NUMBA, kernels as K


def cases(rng):
    series = rng.normal(size=(270, 1200))
    series[rng.random(series.shape) < 0.01] += 15
    raw = rng.normal(size=(96, 128, 2))
    smooth = K.gaussian3x3_np(raw[..., 0]), K.gaussian3x3_np(raw[..., 1])
    smooth = np.stack(smooth, axis=-1)
    mask = (rng.random((96, 128)) < 0.3).astype(np.uint8)
    img = rng.normal(size=(96, 128))
    return {
        "hampel (270 series x 1200)": (K.hampel_nb, K.hampel_np, (series, 2, 3.0, 1e-9)),
        "gaussian3x3 (96x128)": (K.gaussian3x3_nb, K.gaussian3x3_np, (img,)),
        "binarize (96x128)": (K.binarize_nb, K.binarize_np, (raw, smooth, 1.0, 0.5, 1e-8)),
        "median3x3 (96x128)": (K.median3x3_nb, K.median3x3_np, (mask,)),
        "dilate3x3 (96x128)": (K.dilate3x3_nb, K.dilate3x3_np, (mask,)),
        "erode3x3 (96x128)": (K.erode3x3_nb, K.erode3x3_np, (mask,)),
        "remove_small (96x128)": (K.remove_small_nb, K.remove_small_np, (mask, 12.0)),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    if not HAVE_NUMBA:
        print("numba not installed: the *_nb kernels run as plain python")
    print(f"{'kernel':32s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}  same")
    for name, (nb, npf, a) in cases(rng).items():
        same = np.array_equal(nb(*a), npf(*a))   # also triggers compilation
        t_nb = min(timeit.repeat(lambda: nb(*a), number=1, repeat=args.repeat)) * 1e3
        t_np = min(timeit.repeat(lambda: npf(*a), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:32s} {t_nb:10.3f} {t_np:10.3f} {t_np / t_nb:8.2f}  {same}")


if __name__ == "__main__":
    main()
