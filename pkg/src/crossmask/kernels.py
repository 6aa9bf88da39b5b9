"""Hot numeric kernels.

Every kernel exists twice: a numba ``*_nb`` loop version and a vectorised
numpy/scipy ``*_np`` version. The unsuffixed name dispatches according to
:data:`crossmask._accel.USE_NUMBA`. Both variants are kept importable so the
test-suite and ``benchmarks/bench_kernels.py`` can compare them.

Conventions shared by both paths:

* Hampel: truncated windows at the ends, MAD scaled by 1.4826, a point is an
  outlier iff ``dev > n_sigmas * 1.4826 * MAD`` and ``dev > eps``.
* 3x3 smoothing and the 3x3 median use half-sample symmetric borders
  (``d c b a | a b c d``), i.e. ``scipy.ndimage`` mode ``"reflect"``.
* Dilation treats pixels outside the grid as 0, erosion ignores them, so
  closing is extensive and opening anti-extensive.
* Connected components are 4-connected.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from ._accel import USE_NUMBA, njit

MAD_SCALE = 1.4826
GAUSS_1D = np.array([1.0, 2.0, 1.0])
GAUSS_3X3 = np.outer(GAUSS_1D, GAUSS_1D) / 16.0
_SQUARE = np.ones((3, 3), dtype=bool)
_CROSS = ndimage.generate_binary_structure(2, 1)


# --------------------------------------------------------------------------
# Hampel identifier
# --------------------------------------------------------------------------

@njit
def _median_inplace(a, n):
    # insertion sort of the first n entries; windows are tiny
    for i in range(1, n):
        v = a[i]
        j = i - 1
        while j >= 0 and a[j] > v:
            a[j + 1] = a[j]
            j -= 1
        a[j + 1] = v
    if n % 2:
        return a[n // 2]
    return (a[n // 2 - 1] + a[n // 2]) / 2


@njit
def hampel_nb(x, half, n_sigmas, eps):
    n_series, length = x.shape
    out = x.copy()
    buf = np.empty(2 * half + 1)
    dev = np.empty(2 * half + 1)
    for s in range(n_series):
        for i in range(length):
            lo = max(0, i - half)
            hi = min(length, i + half + 1)
            n = hi - lo
            for j in range(n):
                buf[j] = x[s, lo + j]
            med = _median_inplace(buf, n)
            for j in range(n):
                dev[j] = abs(buf[j] - med)
            mad = _median_inplace(dev, n)
            d = abs(x[s, i] - med)
            if d > n_sigmas * MAD_SCALE * mad and d > eps:
                out[s, i] = med
    return out


def hampel_np(x, half, n_sigmas, eps):
    x = np.asarray(x, dtype=np.float64)
    n_series, length = x.shape
    med = np.empty_like(x)
    mad = np.empty_like(x)
    width = 2 * half + 1
    if length >= width:
        win = sliding_window_view(x, width, axis=1)
        m = np.median(win, axis=2)
        med[:, half:length - half] = m
        mad[:, half:length - half] = np.median(np.abs(win - m[..., None]), axis=2)
        edges = list(range(half)) + list(range(length - half, length))
    else:
        edges = range(length)
    for i in edges:
        seg = x[:, max(0, i - half):min(length, i + half + 1)]
        m = np.median(seg, axis=1)
        med[:, i] = m
        mad[:, i] = np.median(np.abs(seg - m[:, None]), axis=1)
    d = np.abs(x - med)
    flag = (d > n_sigmas * MAD_SCALE * mad) & (d > eps)
    return np.where(flag, med, x)


def hampel(x, half, n_sigmas, eps):
    """Hampel-filter each row of a 2-D float array."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if USE_NUMBA:
        return hampel_nb(x, int(half), float(n_sigmas), float(eps))
    return hampel_np(x, int(half), float(n_sigmas), float(eps))


# --------------------------------------------------------------------------
# 3x3 binomial smoothing
# --------------------------------------------------------------------------

@njit
def _sym(i, n):
    if i < 0:
        return -i - 1 if n > 1 else 0
    if i >= n:
        return 2 * n - i - 1 if n > 1 else 0
    return i


@njit
def gaussian3x3_nb(img):
    h, w = img.shape
    out = np.zeros((h, w))
    wts = np.array([1.0, 2.0, 1.0])
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for di in range(3):
                ii = _sym(i + di - 1, h)
                for dj in range(3):
                    jj = _sym(j + dj - 1, w)
                    acc += wts[di] * wts[dj] * img[ii, jj]
            out[i, j] = acc / 16.0
    return out


def gaussian3x3_np(img):
    return ndimage.correlate(np.asarray(img, dtype=np.float64), GAUSS_3X3, mode="reflect")


def gaussian3x3(img):
    img = np.ascontiguousarray(img, dtype=np.float64)
    return gaussian3x3_nb(img) if USE_NUMBA else gaussian3x3_np(img)


# --------------------------------------------------------------------------
# amplitude + angle binarisation
# --------------------------------------------------------------------------

@njit
def binarize_nb(raw, smooth, lam, tau, eps):
    h, w, _ = raw.shape
    out = np.zeros((h, w), dtype=np.uint8)
    for i in range(h):
        for j in range(w):
            rx = raw[i, j, 0]
            ry = raw[i, j, 1]
            nr = np.sqrt(rx * rx + ry * ry)
            if nr == 0.0:
                continue
            sx = smooth[i, j, 0]
            sy = smooth[i, j, 1]
            ns = np.sqrt(sx * sx + sy * sy)
            cos = 0.0
            if nr >= eps and ns >= eps:
                cos = (sx * rx + sy * ry) / (ns * nr)
            if nr + lam * cos >= tau:
                out[i, j] = 1
    return out


def binarize_np(raw, smooth, lam, tau, eps):
    nr = np.sqrt(raw[..., 0] * raw[..., 0] + raw[..., 1] * raw[..., 1])
    ns = np.sqrt(smooth[..., 0] * smooth[..., 0] + smooth[..., 1] * smooth[..., 1])
    dot = smooth[..., 0] * raw[..., 0] + smooth[..., 1] * raw[..., 1]
    ok = (nr >= eps) & (ns >= eps)
    with np.errstate(divide="ignore", invalid="ignore"):
        cos = np.where(ok, dot / np.where(ok, ns * nr, 1.0), 0.0)
    return ((nr != 0.0) & (nr + lam * cos >= tau)).astype(np.uint8)


def binarize(raw, smooth, lam, tau, eps):
    raw = np.ascontiguousarray(raw, dtype=np.float64)
    smooth = np.ascontiguousarray(smooth, dtype=np.float64)
    if USE_NUMBA:
        return binarize_nb(raw, smooth, float(lam), float(tau), float(eps))
    return binarize_np(raw, smooth, lam, tau, eps)


# --------------------------------------------------------------------------
# binary morphology
# --------------------------------------------------------------------------

@njit
def median3x3_nb(mask):
    h, w = mask.shape
    out = np.zeros((h, w), dtype=np.uint8)
    for i in range(h):
        for j in range(w):
            c = 0
            for di in range(-1, 2):
                ii = _sym(i + di, h)
                for dj in range(-1, 2):
                    c += mask[ii, _sym(j + dj, w)]
            if c >= 5:
                out[i, j] = 1
    return out


@njit
def dilate3x3_nb(mask):
    h, w = mask.shape
    out = np.zeros((h, w), dtype=np.uint8)
    for i in range(h):
        for j in range(w):
            v = 0
            for ii in range(max(0, i - 1), min(h, i + 2)):
                for jj in range(max(0, j - 1), min(w, j + 2)):
                    if mask[ii, jj]:
                        v = 1
            out[i, j] = v
    return out


@njit
def erode3x3_nb(mask):
    h, w = mask.shape
    out = np.zeros((h, w), dtype=np.uint8)
    for i in range(h):
        for j in range(w):
            v = 1
            for ii in range(max(0, i - 1), min(h, i + 2)):
                for jj in range(max(0, j - 1), min(w, j + 2)):
                    if not mask[ii, jj]:
                        v = 0
            out[i, j] = v
    return out


@njit
def remove_small_nb(mask, min_area):
    h, w = mask.shape
    labels = np.full((h, w), -1, dtype=np.int64)
    out = mask.copy()
    stack = np.empty(h * w, dtype=np.int64)
    members = np.empty(h * w, dtype=np.int64)
    for si in range(h):
        for sj in range(w):
            if mask[si, sj] == 0 or labels[si, sj] >= 0:
                continue
            top = 0
            n = 0
            stack[top] = si * w + sj
            top += 1
            labels[si, sj] = 1
            while top > 0:
                top -= 1
                p = stack[top]
                members[n] = p
                n += 1
                i = p // w
                j = p % w
                for k in range(4):
                    ii = i + (k == 0) - (k == 1)
                    jj = j + (k == 2) - (k == 3)
                    if 0 <= ii < h and 0 <= jj < w and mask[ii, jj] and labels[ii, jj] < 0:
                        labels[ii, jj] = 1
                        stack[top] = ii * w + jj
                        top += 1
            if n < min_area:
                for q in range(n):
                    out[members[q] // w, members[q] % w] = 0
    return out


def median3x3_np(mask):
    return ndimage.median_filter(np.asarray(mask, dtype=np.uint8), size=3, mode="reflect")


def dilate3x3_np(mask):
    return ndimage.binary_dilation(mask, structure=_SQUARE, border_value=0).astype(np.uint8)


def erode3x3_np(mask):
    return ndimage.binary_erosion(mask, structure=_SQUARE, border_value=1).astype(np.uint8)


def remove_small_np(mask, min_area):
    lab, n = ndimage.label(mask, structure=_CROSS)
    if n == 0:
        return np.asarray(mask, dtype=np.uint8).copy()
    area = np.bincount(lab.ravel())
    keep = area >= min_area
    keep[0] = False
    return keep[lab].astype(np.uint8)


def _u8(mask):
    return np.ascontiguousarray(mask, dtype=np.uint8)


def median3x3(mask):
    return median3x3_nb(_u8(mask)) if USE_NUMBA else median3x3_np(_u8(mask))


def dilate3x3(mask):
    return dilate3x3_nb(_u8(mask)) if USE_NUMBA else dilate3x3_np(_u8(mask))


def erode3x3(mask):
    return erode3x3_nb(_u8(mask)) if USE_NUMBA else erode3x3_np(_u8(mask))


def remove_small_components(mask, min_area):
    """Drop 4-connected components with fewer than ``min_area`` pixels."""
    if USE_NUMBA:
        return remove_small_nb(_u8(mask), float(min_area))
    return remove_small_np(_u8(mask), float(min_area))
