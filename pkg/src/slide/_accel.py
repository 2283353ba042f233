"""Frame-stream kernels, compiled with numba when available.

Every kernel has two implementations that produce bit-identical results: a
numba ``@njit`` lane and a pure-numpy lane. The active lane is chosen once at
import time: numba is used when it imports cleanly and the environment
variable ``SLIDE_NUMBA`` is not set to ``0``. Both lanes stay importable
(``_np_*`` / ``_nb_*``) so the parity tests and ``benchmarks/bench_kernels.py``
can compare them directly.
"""

from __future__ import annotations

import os

import numpy as np

_ENV_FLAG = os.environ.get("SLIDE_NUMBA", "1")

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    _HAVE_NUMBA = False

USE_NUMBA = _HAVE_NUMBA and _ENV_FLAG != "0"


# ---------------------------------------------------------------------------
# numpy lane
# ---------------------------------------------------------------------------

def _np_rle_encode(frames: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Run-length encode: returns (values, lengths) with no two equal
    consecutive values."""
    frames = np.ascontiguousarray(frames, dtype=np.int32)
    n = frames.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int32), np.empty(0, dtype=np.int64)
    starts = np.concatenate(([0], np.flatnonzero(frames[1:] != frames[:-1]) + 1))
    lengths = np.diff(np.concatenate((starts, [n]))).astype(np.int64)
    return frames[starts].astype(np.int32), lengths


def _np_run_positions(frames: np.ndarray) -> np.ndarray:
    """Index of each frame within its run: [A,A,B,A] -> [0,1,0,0]."""
    frames = np.ascontiguousarray(frames, dtype=np.int32)
    n = frames.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int64)
    _, lengths = _np_rle_encode(frames)
    starts = np.repeat(np.cumsum(lengths) - lengths, lengths)
    return np.arange(n, dtype=np.int64) - starts


def _np_majority_filter(frames: np.ndarray, width: int) -> np.ndarray:
    """Sliding-window majority vote, window clipped at the boundaries.

    The frame keeps its own value whenever that value ties for the window
    maximum; otherwise the leftmost window element attaining the maximum
    count wins.
    """
    if width < 1 or width % 2 == 0:
        raise ValueError(f"width must be odd and >= 1, got {width}")
    frames = np.ascontiguousarray(frames, dtype=np.int32)
    n = frames.shape[0]
    if n == 0 or width == 1:
        return frames.copy()
    r = width // 2
    # window matrix with -1 padding outside the array
    offsets = np.arange(-r, r + 1)
    idx = np.arange(n)[:, None] + offsets[None, :]
    valid = (idx >= 0) & (idx < n)
    win = np.where(valid, frames[np.clip(idx, 0, n - 1)], -1)
    counts = ((win[:, :, None] == win[:, None, :]) & valid[:, :, None] & valid[:, None, :]).sum(axis=1)
    counts = np.where(valid, counts, 0)
    best = counts.max(axis=1)
    own = (np.where(valid, win == frames[:, None], False) * counts).max(axis=1)
    first_best = win[np.arange(n), np.argmax(counts == best[:, None], axis=1)]
    return np.where(own == best, frames, first_best).astype(np.int32)


# ---------------------------------------------------------------------------
# numba lane
# ---------------------------------------------------------------------------

if _HAVE_NUMBA:

    @njit(cache=True)
    def _nb_rle_encode_impl(frames):  # pragma: no cover - compiled
        n = frames.shape[0]
        values = np.empty(n, dtype=np.int32)
        lengths = np.empty(n, dtype=np.int64)
        if n == 0:
            return values[:0], lengths[:0]
        k = 0
        cur = frames[0]
        run = 1
        for i in range(1, n):
            if frames[i] == cur:
                run += 1
            else:
                values[k] = cur
                lengths[k] = run
                k += 1
                cur = frames[i]
                run = 1
        values[k] = cur
        lengths[k] = run
        return values[: k + 1], lengths[: k + 1]

    @njit(cache=True)
    def _nb_run_positions_impl(frames):  # pragma: no cover - compiled
        n = frames.shape[0]
        out = np.empty(n, dtype=np.int64)
        if n == 0:
            return out
        pos = 0
        out[0] = 0
        for i in range(1, n):
            if frames[i] == frames[i - 1]:
                pos += 1
            else:
                pos = 0
            out[i] = pos
        return out

    @njit(cache=True)
    def _nb_majority_filter_impl(frames, width):  # pragma: no cover - compiled
        n = frames.shape[0]
        out = np.empty(n, dtype=np.int32)
        r = width // 2
        for t in range(n):
            lo = t - r
            if lo < 0:
                lo = 0
            hi = t + r + 1
            if hi > n:
                hi = n
            best_val = frames[t]
            best_cnt = 0
            own_cnt = 0
            for j in range(lo, hi):
                v = frames[j]
                c = 0
                for k in range(lo, hi):
                    if frames[k] == v:
                        c += 1
                if v == frames[t]:
                    own_cnt = c
                if c > best_cnt:
                    best_cnt = c
                    best_val = v
            if own_cnt == best_cnt:
                out[t] = frames[t]
            else:
                out[t] = best_val
        return out

    def _nb_rle_encode(frames: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        frames = np.ascontiguousarray(frames, dtype=np.int32)
        values, lengths = _nb_rle_encode_impl(frames)
        return values.copy(), lengths.copy()

    def _nb_run_positions(frames: np.ndarray) -> np.ndarray:
        return _nb_run_positions_impl(np.ascontiguousarray(frames, dtype=np.int32))

    def _nb_majority_filter(frames: np.ndarray, width: int) -> np.ndarray:
        if width < 1 or width % 2 == 0:
            raise ValueError(f"width must be odd and >= 1, got {width}")
        frames = np.ascontiguousarray(frames, dtype=np.int32)
        if frames.shape[0] == 0 or width == 1:
            return frames.copy()
        return _nb_majority_filter_impl(frames, width)


if USE_NUMBA:
    rle_encode_core = _nb_rle_encode
    run_positions = _nb_run_positions
    majority_filter = _nb_majority_filter
else:
    rle_encode_core = _np_rle_encode
    run_positions = _np_run_positions
    majority_filter = _np_majority_filter
