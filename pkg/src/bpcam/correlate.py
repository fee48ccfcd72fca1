"""Pairwise correlation maps from stacks of thresholded frames.

For a stack of binary frames n_i(r, c) this module accumulates, over all
ordered photon pairs within a frame (self-pairs included):

  difference map  D(dr, dc) = sum_i sum_{r,c} n_i(r, c) n_i(r+dr, c+dc)
  sum map         S(sr, sc) = sum_i sum_{(r,c),(r',c')} n_i n_i' [r+r'=sr, c+c'=sc]

plus matching accidental references built from photons in *adjacent* frames
(frame i paired with frame i+1, one direction).  Genuine pair correlations
survive the per-frame-normalised subtraction signal/N - reference/(N-1);
uncorrelated structure (hot pixels, vignetting, noise counts) cancels.

Two interchangeable accumulation routes are kept deliberately:

  * sparse: enumerate pairs from the photon coordinate lists and histogram
    them with bincount - exact integer counting, fast for dilute frames;
  * spectral: zero-padded FFTs, accumulating sum |F|^2, sum F^2 and the
    adjacent-frame cross products in the frequency domain with a single
    inverse transform at the end - O(HW log HW) per frame regardless of
    occupancy.

`StackAccumulator` picks the cheaper route per frame and verifies that the
spectral outputs land on integers (they must; the inputs are counts).  The
same pass collects per-frame row/column marginals, from which exact joint
distributions over pixel pairs are built for conditional-variance work.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import fft as _fft

from .errors import ConsistencyError, ParameterError

#: spectral inverse transforms must land within this distance of an integer
RESIDUAL_TOL = 0.25

#: frames with at most this many photons take the sparse route
SPARSE_THRESHOLD = 256


class Mode(str, Enum):
    """Which pair coordinate a map is histogrammed over."""

    DIFFERENCE = "difference"  # (r' - r, c' - c), genuine peak for correlated positions
    SUM = "sum"  # (r' + r, c' + c), genuine peak for anti-correlated momenta


@dataclass
class CorrelationMap:
    """Accumulated pair-count maps for one mode.

    `signal` counts ordered same-frame pairs (self-pairs included);
    `reference` counts ordered adjacent-frame pairs (frame i photon first,
    frame i+1 photon second), an estimate of the accidental background.
    Difference maps are indexed [dr + H - 1, dc + W - 1]; sum maps are
    indexed [sr, sc] directly.
    """

    mode: Mode
    signal: np.ndarray  # (2H-1, 2W-1) int64
    reference: np.ndarray  # (2H-1, 2W-1) int64
    n_frames: int
    n_reference_pairs: int  # number of adjacent-frame pairs = n_frames - 1
    roi: tuple[int, int]

    @property
    def row_axis(self) -> np.ndarray:
        h = self.roi[0]
        if self.mode is Mode.DIFFERENCE:
            return np.arange(-(h - 1), h)
        return np.arange(0, 2 * h - 1)

    @property
    def col_axis(self) -> np.ndarray:
        w = self.roi[1]
        if self.mode is Mode.DIFFERENCE:
            return np.arange(-(w - 1), w)
        return np.arange(0, 2 * w - 1)


@dataclass
class SubtractedMap:
    """signal/N - reference/(N-1), with contaminated bins masked out."""

    mode: Mode
    values: np.ndarray  # (2H-1, 2W-1) float64, per-frame pair excess
    mask: np.ndarray  # bool, True where a bin is excluded from fits/statistics
    roi: tuple[int, int]
    row_axis: np.ndarray
    col_axis: np.ndarray


@dataclass
class JointDistribution:
    """Ordered pair counts over one transverse axis, J[a, b].

    a indexes the first photon's pixel, b the second's.  `counts` includes
    the same-photon (self) pairs, which all land on the diagonal; their
    per-pixel total is `self_counts`, so downstream users can remove the
    artifact exactly (the accidental reference never cancels it).
    """

    axis: str  # "col" or "row"
    counts: np.ndarray  # (W, W) int64 same-frame ordered pairs
    reference: np.ndarray  # (W, W) int64 adjacent-frame ordered pairs
    self_counts: np.ndarray  # (W,) photons per pixel column/row, summed over frames
    n_frames: int
    n_reference_pairs: int


@dataclass
class MarginalStack:
    """Per-frame 1-D photon marginals: counts[i, a] = photons of frame i in bin a."""

    axis: str
    counts: np.ndarray  # (N, W) int32

    @property
    def n_frames(self) -> int:
        return self.counts.shape[0]

    def joint(self, start: int = 0, stop: int | None = None) -> JointDistribution:
        """Joint pair distribution from frames [start, stop)."""
        block = self.counts[start:stop]
        if block.shape[0] < 2:
            raise ParameterError("a joint distribution needs at least 2 frames")
        v = block.astype(np.float64)
        sig = np.rint(v.T @ v).astype(np.int64)
        ref = np.rint(v[:-1].T @ v[1:]).astype(np.int64)
        return JointDistribution(
            axis=self.axis,
            counts=sig,
            reference=ref,
            self_counts=block.sum(axis=0, dtype=np.int64),
            n_frames=block.shape[0],
            n_reference_pairs=block.shape[0] - 1,
        )


@dataclass
class StackResult:
    """Everything one pass over a frame stack produces.

    Either map may be None when the accumulator was asked for a subset of
    modes (an image-plane stack only ever needs position differences, a
    far-field stack only momentum sums).
    """

    difference: CorrelationMap | None
    sum_map: CorrelationMap | None
    marginals: dict  # {"col": MarginalStack, "row": MarginalStack}
    ones_per_frame: np.ndarray  # (N,) int64
    roi: tuple[int, int]

    @property
    def n_frames(self) -> int:
        return int(self.ones_per_frame.size)

    @property
    def total_ones(self) -> int:
        return int(self.ones_per_frame.sum())


def _pair_totals(ones: np.ndarray) -> tuple[int, int]:
    """(sum N_i^2, sum N_i N_{i+1}) - expected map totals for checks."""
    ones = ones.astype(np.int64)
    return int(np.sum(ones * ones)), int(np.sum(ones[:-1] * ones[1:]))


class StackAccumulator:
    """Single-pass dual-route accumulator for both map modes plus marginals.

    Feed binary frames with `add`; call `finalize` once at the end.  Frames
    with at most `sparse_threshold` photons are pair-counted directly;
    denser frames go through zero-padded FFTs whose products are accumulated
    in the frequency domain (one inverse transform per mode at the end).
    Adjacent-frame references take the sparse route only when both frames of
    the pair are sparse enough; otherwise the transform of the previous
    frame is (re)computed on demand.  `modes` restricts the work to a subset
    of pair coordinates; a stack destined for one observable need not pay
    for the other's accumulators.
    """

    def __init__(self, roi: tuple[int, int], sparse_threshold: int = SPARSE_THRESHOLD,
                 collect_marginals: bool = True,
                 modes: tuple = (Mode.DIFFERENCE, Mode.SUM)):
        h, w = roi
        if h < 1 or w < 1:
            raise ParameterError(f"bad roi {roi!r}")
        modes = tuple(Mode(m) for m in modes)
        if not modes:
            raise ParameterError("at least one accumulation mode is required")
        self.roi = (int(h), int(w))
        self.sparse_threshold = int(sparse_threshold)
        self.collect_marginals = collect_marginals
        self.modes = modes
        self._want_d = Mode.DIFFERENCE in modes
        self._want_s = Mode.SUM in modes
        self._map_shape = (2 * h - 1, 2 * w - 1)
        self._flat_size = self._map_shape[0] * self._map_shape[1]
        # sparse integer accumulators (flat)
        self._d_sig = np.zeros(self._flat_size, dtype=np.int64) if self._want_d else None
        self._d_ref = np.zeros(self._flat_size, dtype=np.int64) if self._want_d else None
        self._s_sig = np.zeros(self._flat_size, dtype=np.int64) if self._want_s else None
        self._s_ref = np.zeros(self._flat_size, dtype=np.int64) if self._want_s else None
        # spectral accumulators
        self._pad = (_fft.next_fast_len(2 * h - 1), _fft.next_fast_len(2 * w - 1))
        spec_shape = (self._pad[0], self._pad[1] // 2 + 1)
        self._sd = np.zeros(spec_shape, dtype=np.float64) if self._want_d else None
        self._ss = np.zeros(spec_shape, dtype=np.complex128) if self._want_s else None
        self._dref = np.zeros(spec_shape, dtype=np.complex128) if self._want_d else None
        self._sref = np.zeros(spec_shape, dtype=np.complex128) if self._want_s else None
        self._any_spectral = False
        # expected totals per route, for exactness checks
        self._tot_sig_sparse = 0
        self._tot_sig_spec = 0
        self._tot_ref_sparse = 0
        self._tot_ref_spec = 0
        # previous frame (for the adjacent reference)
        self._prev: dict | None = None
        self._ones: list[int] = []
        self._vcols: list[np.ndarray] = []
        self._vrows: list[np.ndarray] = []
        self._finalized = False
        # precomputed index grids for window extraction from the padded inverse
        self._drows = np.arange(-(h - 1), h) % self._pad[0]
        self._dcols = np.arange(-(w - 1), w) % self._pad[1]

    # -- per-frame work ----------------------------------------------------

    def _positions(self, bits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        r, c = np.nonzero(bits)
        return r.astype(np.int64), c.astype(np.int64)

    def _transform(self, bits: np.ndarray) -> np.ndarray:
        # rfft2 of the zero-padded frame, skipping the all-zero pad rows in
        # the real pass: pad the columns inside the row transform, then run
        # the column transform at full padded length.
        t = _fft.rfft(bits.astype(np.float64), n=self._pad[1], axis=1)
        return _fft.fft(t, n=self._pad[0], axis=0)

    def _sparse_self(self, r: np.ndarray, c: np.ndarray):
        h, w = self.roi
        ncol = self._map_shape[1]
        if self._want_d:
            dr = r[None, :] - r[:, None]
            dc = c[None, :] - c[:, None]
            lin = ((dr + h - 1) * ncol + (dc + w - 1)).ravel()
            self._d_sig += np.bincount(lin, minlength=self._flat_size)
        if self._want_s:
            sr = r[None, :] + r[:, None]
            sc = c[None, :] + c[:, None]
            lin = (sr * ncol + sc).ravel()
            self._s_sig += np.bincount(lin, minlength=self._flat_size)

    def _sparse_cross(self, r1, c1, r2, c2):
        """Ordered pairs: previous-frame photon (r1), current-frame photon (r2)."""
        h, w = self.roi
        ncol = self._map_shape[1]
        if self._want_d:
            dr = r2[None, :] - r1[:, None]
            dc = c2[None, :] - c1[:, None]
            lin = ((dr + h - 1) * ncol + (dc + w - 1)).ravel()
            self._d_ref += np.bincount(lin, minlength=self._flat_size)
        if self._want_s:
            sr = r1[:, None] + r2[None, :]
            sc = c1[:, None] + c2[None, :]
            lin = (sr * ncol + sc).ravel()
            self._s_ref += np.bincount(lin, minlength=self._flat_size)

    def add(self, bits: np.ndarray):
        """Accumulate one binary frame (bool or 0/1 array of shape roi)."""
        if self._finalized:
            raise ConsistencyError("accumulator already finalized")
        bits = np.asarray(bits)
        if bits.shape != self.roi:
            raise ParameterError(f"frame shape {bits.shape} != roi {self.roi}")
        if bits.dtype != np.bool_:
            bits = bits.astype(bool)
        n = int(np.count_nonzero(bits))
        self._ones.append(n)
        if self.collect_marginals:
            self._vcols.append(bits.sum(axis=0, dtype=np.int32))
            self._vrows.append(bits.sum(axis=1, dtype=np.int32))

        sparse = n <= self.sparse_threshold
        cur: dict = {"n": n, "bits": bits, "pos": None, "F": None}
        if sparse:
            r, c = self._positions(bits)
            cur["pos"] = (r, c)
            self._sparse_self(r, c)
            self._tot_sig_sparse += n * n
        else:
            F = cur["F"] = self._transform(bits)
            if self._want_d:
                self._sd += F.real ** 2 + F.imag ** 2
            if self._want_s:
                self._ss += np.square(F)
            self._any_spectral = True
            self._tot_sig_spec += n * n

        prev = self._prev
        if prev is not None:
            npairs = prev["n"] * n
            both_sparse = prev["pos"] is not None and cur["pos"] is not None
            if both_sparse and npairs <= self.sparse_threshold ** 2:
                r1, c1 = prev["pos"]
                r2, c2 = cur["pos"]
                self._sparse_cross(r1, c1, r2, c2)
                self._tot_ref_sparse += npairs
            else:
                if prev["F"] is None:
                    prev["F"] = self._transform(prev["bits"])
                if cur["F"] is None:
                    cur["F"] = self._transform(bits)
                if self._want_d:
                    self._dref += np.conj(prev["F"]) * cur["F"]
                if self._want_s:
                    self._sref += prev["F"] * cur["F"]
                self._any_spectral = True
                self._tot_ref_spec += npairs
        self._prev = cur

    # -- finalisation --------------------------------------------------------

    def _invert(self, spec: np.ndarray, shift: bool, expected_total: int) -> np.ndarray:
        """One inverse transform -> integer window, with exactness checks."""
        full = _fft.irfft2(spec, s=self._pad)
        if shift:
            win = full[np.ix_(self._drows, self._dcols)]
        else:
            win = full[: self._map_shape[0], : self._map_shape[1]]
        rounded = np.rint(win)
        resid = np.max(np.abs(win - rounded)) if win.size else 0.0
        if resid > RESIDUAL_TOL:
            raise ConsistencyError(
                f"spectral route produced non-integer counts (residual {resid:.3g})"
            )
        out = rounded.astype(np.int64)
        total = int(out.sum())
        if total != expected_total:
            raise ConsistencyError(
                f"spectral route lost counts: window total {total}, expected {expected_total}"
            )
        return out

    def finalize(self) -> StackResult:
        if self._finalized:
            raise ConsistencyError("accumulator already finalized")
        self._finalized = True
        n_frames = len(self._ones)
        if n_frames < 2:
            raise ParameterError(f"need at least 2 frames, got {n_frames}")
        ones = np.asarray(self._ones, dtype=np.int64)
        exp_sig, exp_ref = _pair_totals(ones)
        diff = summ = None
        if self._want_d:
            d_sig = self._d_sig.reshape(self._map_shape)
            d_ref = self._d_ref.reshape(self._map_shape)
            if self._any_spectral:
                d_sig = d_sig + self._invert(self._sd.astype(np.complex128), True,
                                             self._tot_sig_spec)
                d_ref = d_ref + self._invert(self._dref, True, self._tot_ref_spec)
            if int(d_sig.sum()) != exp_sig or int(d_ref.sum()) != exp_ref:
                raise ConsistencyError("pair-count conservation failed on the difference maps")
            diff = CorrelationMap(Mode.DIFFERENCE, d_sig, d_ref, n_frames, n_frames - 1,
                                  self.roi)
        if self._want_s:
            s_sig = self._s_sig.reshape(self._map_shape)
            s_ref = self._s_ref.reshape(self._map_shape)
            if self._any_spectral:
                s_sig = s_sig + self._invert(self._ss, False, self._tot_sig_spec)
                s_ref = s_ref + self._invert(self._sref, False, self._tot_ref_spec)
            if int(s_sig.sum()) != exp_sig or int(s_ref.sum()) != exp_ref:
                raise ConsistencyError("pair-count conservation failed on the sum maps")
            summ = CorrelationMap(Mode.SUM, s_sig, s_ref, n_frames, n_frames - 1, self.roi)
        marginals = {}
        if self.collect_marginals:
            marginals = {
                "col": MarginalStack("col", np.vstack(self._vcols)),
                "row": MarginalStack("row", np.vstack(self._vrows)),
            }
        return StackResult(diff, summ, marginals, ones, self.roi)


def accumulate(frames, roi: tuple[int, int] | None = None, **kwargs) -> StackResult:
    """Convenience wrapper: run a StackAccumulator over an iterable of frames."""
    acc = None
    for bits in frames:
        arr = bits.bits if hasattr(bits, "bits") else np.asarray(bits)
        if acc is None:
            acc = StackAccumulator(roi if roi is not None else arr.shape, **kwargs)
        acc.add(arr)
    if acc is None:
        raise ParameterError("empty frame stack")
    return acc.finalize()


# ---------------------------------------------------------------------------
# subtraction and map statistics

def default_mask(mode: Mode, roi: tuple[int, int], mask_center: bool = True,
                 mask_smear_rows: bool = False) -> np.ndarray:
    """Bins excluded from fits: self-pair centre and charge-smear offsets.

    On the difference map all self-pairs land on (0, 0) and vertical smear
    copies land on (dr = +/-1, dc = 0); neither is cancelled by the
    adjacent-frame reference.  Sum maps spread both artifacts over broad
    ridges instead of single bins, so nothing is masked by default there.
    """
    h, w = roi
    mask = np.zeros((2 * h - 1, 2 * w - 1), dtype=bool)
    if mode is Mode.DIFFERENCE:
        if mask_center:
            mask[h - 1, w - 1] = True
        if mask_smear_rows:
            mask[h - 2, w - 1] = True
            mask[h, w - 1] = True
    return mask


def subtract(cmap: CorrelationMap, mask: np.ndarray | None = None,
             mask_center: bool = True, mask_smear_rows: bool = False) -> SubtractedMap:
    """Per-frame pair excess: signal/N - reference/(N-1)."""
    if cmap.n_frames < 2 or cmap.n_reference_pairs < 1:
        raise ParameterError("subtraction needs at least 2 frames")
    if mask is None:
        mask = default_mask(cmap.mode, cmap.roi, mask_center, mask_smear_rows)
    elif mask.shape != cmap.signal.shape:
        raise ParameterError(f"mask shape {mask.shape} != map shape {cmap.signal.shape}")
    values = cmap.signal / cmap.n_frames - cmap.reference / cmap.n_reference_pairs
    return SubtractedMap(cmap.mode, values, mask.astype(bool), cmap.roi,
                         cmap.row_axis, cmap.col_axis)


@dataclass
class PeakSnr:
    """Peak significance of a subtracted map against its own background."""

    value: float
    peak_mean: float
    background_sigma: float
    n_peak_bins: int
    n_background_bins: int


def peak_snr(sub: SubtractedMap, peak: tuple[int, int] | None = None,
             halfwidth: int = 1, annulus: tuple[int, int] = (60, 150)) -> PeakSnr:
    """Mean over a (2*halfwidth+1)^2 window at the expected peak, divided by
    the standard error of the background (a Chebyshev-distance annulus).

    The expected peak sits at zero offset (difference maps) or at twice the
    centre pixel (sum maps); masked bins are excluded from both regions.
    """
    h, w = sub.roi
    if peak is None:
        if sub.mode is Mode.DIFFERENCE:
            peak = (h - 1, w - 1)
        else:
            peak = (2 * (h // 2), 2 * (w // 2))
    r0, c0 = peak
    rows = np.arange(sub.values.shape[0])[:, None]
    cols = np.arange(sub.values.shape[1])[None, :]
    cheb = np.maximum(np.abs(rows - r0), np.abs(cols - c0))
    ok = ~sub.mask
    in_peak = (cheb <= halfwidth) & ok
    lo, hi = annulus
    in_bg = (cheb >= lo) & (cheb <= hi) & ok
    n_peak = int(np.count_nonzero(in_peak))
    n_bg = int(np.count_nonzero(in_bg))
    if n_peak == 0 or n_bg < 16:
        raise ParameterError("peak window or background annulus is empty")
    peak_mean = float(sub.values[in_peak].mean())
    bg_sigma = float(sub.values[in_bg].std())
    if bg_sigma == 0.0:
        raise ParameterError("background annulus has zero variance")
    value = peak_mean / (bg_sigma / np.sqrt(n_peak))
    return PeakSnr(value, peak_mean, bg_sigma, n_peak, n_bg)


# ---------------------------------------------------------------------------
# 1-D histograms from joint distributions

def pair_histogram(matrix: np.ndarray, mode: Mode) -> tuple[np.ndarray, np.ndarray]:
    """Collapse a (W, W) pair matrix J[a, b] onto b - a or b + a.

    Returns (axis, counts): axis is the offset grid [-(W-1), W-1] for
    DIFFERENCE or the sum grid [0, 2W-2] for SUM.
    """
    m = np.asarray(matrix)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ParameterError(f"pair matrix must be square, got {m.shape}")
    w = m.shape[0]
    if mode is Mode.DIFFERENCE:
        counts = np.array([np.trace(m, offset=d) for d in range(-(w - 1), w)])
        return np.arange(-(w - 1), w), counts
    flipped = m[:, ::-1]
    counts = np.array([np.trace(flipped, offset=(w - 1) - s) for s in range(2 * w - 1)])
    return np.arange(0, 2 * w - 1), counts


def joint_excess_histogram(joint: JointDistribution, mode: Mode,
                           remove_self_pairs: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame pair excess along one axis: signal/N - reference/(N-1).

    Self-pairs (a photon paired with itself) all sit on the diagonal of the
    signal matrix and are removed exactly via the stored per-pixel totals
    before collapsing; the accidental reference contains none, so leaving
    them in would fake a zero-offset (difference) / even-sum (sum) excess.
    """
    sig = joint.counts.astype(np.float64)
    if remove_self_pairs:
        sig = sig.copy()
        np.fill_diagonal(sig, sig.diagonal() - joint.self_counts)
    axis, hs = pair_histogram(sig / joint.n_frames, mode)
    _, hr = pair_histogram(joint.reference.astype(np.float64) / joint.n_reference_pairs, mode)
    return axis, hs - hr
