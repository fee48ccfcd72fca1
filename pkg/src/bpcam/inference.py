"""Gaussian fits, conditional variances, and entanglement figures of merit.

Everything here consumes the per-frame-normalised pair excesses produced by
`correlate` (2-D map cross-sections and joint-distribution histograms) and
turns them into physical numbers:

  * fitted transverse correlation widths (position difference, momentum sum),
    corrected for pixel binning;
  * minimum inferred conditional variances Var(x1|x2), Var(p1|p2) from the
    pair-coordinate projections of the joint pixel-pair distributions, and
    their product against the Heisenberg bound of 1/4 (hbar = 1 throughout);
  * an entangled-mode-count estimate per axis from the broad/narrow width
    ratio, derated by the fraction of the broad marginal the sensor covers;
  * block-bootstrap standard errors for all of the above.

Claiming an EPR-type violation additionally requires the correlation peaks to
be statistically significant (`snr_gate`); with no detectable peak the width
estimates measure noise, and noise must not look like entanglement.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import curve_fit

from .correlate import (
    JointDistribution,
    MarginalStack,
    Mode,
    SubtractedMap,
    pair_histogram,
)
from .errors import AnalysisError, FitFailureError, ParameterError
from .model import HEISENBERG_PRODUCT

#: variance added by one round of pixel binning, in pixel^2
PIXEL_VAR_SINGLE = 1.0 / 12.0
#: variance added to a pair coordinate (sum or difference of two binned values)
PIXEL_VAR_PAIR = 1.0 / 6.0

#: minimum peak significance on both planes before an EPR flag is credible
SNR_GATE = 5.0


def gaussian(x, amplitude, center, sigma, offset):
    return offset + amplitude * np.exp(-0.5 * ((x - center) / sigma) ** 2)


def shaded_gaussian(x, amplitude, center, sigma, shade):
    """Gaussian dome whose peak is screened by its own height.

    Binary pixels saturate: where the light is densest, a pixel is more
    often already lit, so the excess-coincidence dome loses counts in
    proportion to the local single-photon occupancy on both ends of the
    pair.  The occupancy profile of either photon has exactly half the
    pair-coordinate variance, so the screening envelope shares the dome's
    own sigma and the suppression factorises as ``(1 - shade * g)**2``
    with ``g`` the unit-height dome.  ``shade=0`` recovers a plain
    baseline-free Gaussian.
    """
    g = np.exp(-0.5 * ((x - center) / sigma) ** 2)
    return amplitude * g * (1.0 - shade * g) ** 2


@dataclass
class GaussianFit:
    amplitude: float
    center: float
    sigma: float
    offset: float
    sigma_err: float
    center_err: float
    n_points: int
    shade: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)


def _moment_start(x: np.ndarray, y: np.ndarray, fix_offset: float | None):
    """Moment-based (amplitude, centre, sigma, offset) starting point."""
    if fix_offset is None:
        edge = max(3, x.size // 10)
        offset = float(np.median(np.concatenate([y[:edge], y[-edge:]])))
    else:
        offset = float(fix_offset)
    w = np.clip(y - offset, 0.0, None)
    tot = float(w.sum())
    if tot <= 0.0:
        raise FitFailureError("no positive excess above the baseline")
    mu = float((x * w).sum() / tot)
    var = float(((x - mu) ** 2 * w).sum() / tot)
    span = float(x.max() - x.min()) or 1.0
    sigma = math.sqrt(var) if var > 0 else span / 10.0
    amplitude = float(y.max() - offset)
    if amplitude <= 0.0:
        raise FitFailureError("peak amplitude not positive")
    return amplitude, mu, sigma, offset


def fit_gaussian(
    x,
    y,
    mask=None,
    fix_offset: float | None = None,
    shaded: bool = False,
) -> GaussianFit:
    """Least-squares Gaussian fit, moment-initialised.

    `mask` marks points to exclude (contaminated bins).  `fix_offset` holds
    the baseline constant instead of fitting it; the per-frame-normalised
    excess histograms are baseline-free by construction, and fixing the
    offset keeps wide, window-filling peaks well conditioned.  `shaded`
    fits `shaded_gaussian` instead, which corrects the width of broad
    domes whose centre is suppressed by binary-pixel saturation; it
    requires a fixed offset.  Raises FitFailureError when the optimiser
    fails or returns a degenerate width.
    """
    if shaded and fix_offset is None:
        raise ParameterError("shaded fits require a fixed offset")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if mask is not None:
        keep = ~np.asarray(mask, dtype=bool)
        x, y = x[keep], y[keep]
    if x.size < (4 if fix_offset is not None and not shaded else 5):
        raise FitFailureError(f"too few points to fit ({x.size})")
    amplitude, mu, sigma, offset = _moment_start(x, y, fix_offset)
    span = float(x.max() - x.min())
    p0 = [amplitude, mu, min(max(sigma, 1e-6), 5.0 * span)]
    lower = [0.0, x.min() - span, 1e-9]
    upper = [np.inf, x.max() + span, 10.0 * span]
    if shaded:
        # peak height is amplitude*(1-shade)^2, so start the amplitude high
        p0[0] = 1.3 * amplitude
        p0.append(0.1)
        lower.append(0.0)
        upper.append(0.8)

        def model(xx, a, c, s, b):
            return offset + shaded_gaussian(xx, a, c, s, b)
    elif fix_offset is None:
        model = gaussian
        p0.append(offset)
        lower.append(-np.inf)
        upper.append(np.inf)
    else:
        def model(xx, a, c, s):
            return gaussian(xx, a, c, s, offset)
    try:
        popt, pcov = curve_fit(model, x, y, p0=p0, bounds=(lower, upper), maxfev=20000)
    except (RuntimeError, ValueError) as exc:
        raise FitFailureError(f"gaussian fit did not converge: {exc}") from exc
    perr = np.sqrt(np.diag(pcov))
    fit = GaussianFit(
        amplitude=float(popt[0]),
        center=float(popt[1]),
        sigma=float(abs(popt[2])),
        offset=float(popt[3]) if fix_offset is None and not shaded else offset,
        sigma_err=float(perr[2]),
        center_err=float(perr[1]),
        n_points=int(x.size),
        shade=float(popt[3]) if shaded else 0.0,
    )
    if not np.isfinite(fit.sigma) or fit.sigma <= 2e-9 or fit.sigma >= 9.9 * span:
        raise FitFailureError(f"fitted width degenerate: sigma={fit.sigma:g} over span {span:g}")
    return fit


# ---------------------------------------------------------------------------
# widths from map cross-sections and joint histograms

@dataclass
class WidthEstimate:
    """A fitted transverse width, pixel-binning removed."""

    sigma_um: float
    sigma_px: float  # raw fitted width, pixel units
    pixel_var_px2: float
    fit: GaussianFit


def deconvolved_width(fit: GaussianFit, pitch_um: float, pixel_var_px2: float) -> WidthEstimate:
    var = fit.sigma ** 2 - pixel_var_px2
    if var <= 0.0:
        raise AnalysisError(
            f"fitted width {fit.sigma:.3g} px is below the pixel-binning floor"
        )
    return WidthEstimate(math.sqrt(var) * pitch_um, fit.sigma, pixel_var_px2, fit)


def difference_cross_section(sub: SubtractedMap):
    """The dr = 0 row of a difference map: (offsets_px, values, mask).

    Vertical charge smear displaces rows only, so this row is smear-free;
    the self-pair bin at zero offset arrives already masked.
    """
    if sub.mode is not Mode.DIFFERENCE:
        raise ParameterError("difference_cross_section needs a DIFFERENCE map")
    h = sub.roi[0]
    return sub.col_axis.astype(float), sub.values[h - 1], sub.mask[h - 1]


def sum_cross_section(sub: SubtractedMap, row: int | None = None):
    """One row of a sum map, default the row-sum bin of the doubled centre."""
    if sub.mode is not Mode.SUM:
        raise ParameterError("sum_cross_section needs a SUM map")
    if row is None:
        row = 2 * (sub.roi[0] // 2)
    return sub.col_axis.astype(float), sub.values[row], sub.mask[row]


def fit_map_width(sub: SubtractedMap, pitch_um: float, window_px: int | None = None) -> WidthEstimate:
    """Correlation width from the central cross-section of a subtracted map."""
    if sub.mode is Mode.DIFFERENCE:
        x, y, m = difference_cross_section(sub)
    else:
        x, y, m = sum_cross_section(sub)
    if window_px is not None:
        peak = x[np.argmax(np.where(m, -np.inf, y))]
        keep = np.abs(x - peak) <= window_px
        x, y, m = x[keep], y[keep], m[keep]
    fit = fit_gaussian(x, y, mask=m)
    return deconvolved_width(fit, pitch_um, PIXEL_VAR_PAIR)


def histogram_mask(axis: np.ndarray, center: float, halfwidth: int | None) -> np.ndarray:
    if halfwidth is None:
        return np.zeros(axis.shape, dtype=bool)
    return np.abs(axis - center) <= halfwidth


def fit_joint_width(
    joint: JointDistribution,
    mode: Mode,
    pitch_um: float,
    mask_halfwidth: int | None = None,
    window_px: int | None = None,
    shaded: bool = False,
) -> WidthEstimate:
    """Width of the 1-D pair-coordinate excess derived from a joint distribution.

    Self-pairs are removed exactly; `mask_halfwidth` additionally excludes
    bins around the artifact coordinate (zero offset / doubled centre) where
    charge-smear duplicates land.  In DIFFERENCE mode the zero-offset bin is
    always excluded, whatever `mask_halfwidth` says: a binary pixel cannot
    fire twice in one frame, so the within-frame distinct-pair count at zero
    column offset falls short of the cross-frame accidental estimate by the
    summed squared pixel occupancy — a deficit comparable to (far field) or
    larger than (image plane) the genuine peak.  The baseline is held at
    zero: accidentals are already subtracted, so any residual offset is
    noise, and freeing it would make fits of peaks wider than the window
    degenerate.  `shaded` applies the binary-pixel saturation model of
    `shaded_gaussian`; use it for broad domes, whose centres sit where the
    light (and hence the chance a pixel is already lit) is densest.
    """
    from .correlate import joint_excess_histogram

    axis, hist = joint_excess_histogram(joint, mode)
    w = joint.counts.shape[0]
    artifact = 0.0 if mode is Mode.DIFFERENCE else float(2 * (w // 2))
    mask = histogram_mask(axis, artifact, mask_halfwidth)
    if mode is Mode.DIFFERENCE:
        mask = mask | (axis == 0)
    x = axis.astype(float)
    if window_px is not None:
        masked_vals = np.where(mask, -np.inf, hist)
        peak = x[np.argmax(masked_vals)]
        keep = np.abs(x - peak) <= window_px
        x, hist, mask = x[keep], hist[keep], mask[keep]
    fit = fit_gaussian(x, hist, mask=mask, fix_offset=0.0, shaded=shaded)
    return deconvolved_width(fit, pitch_um, PIXEL_VAR_PAIR)


# ---------------------------------------------------------------------------
# inferred variances and the EPR product

@dataclass
class InferredVariance:
    """Variance of one photon's coordinate inferred from its partner's.

    The estimator is the projection x1_hat = +/- x2: its residual is the
    pair difference (correlated coordinates) or pair sum (anti-correlated
    ones), whose histogram the whole stack measures with high significance.
    For a two-mode-squeezed Gaussian state this inferred variance exceeds
    the true conditional variance only by a factor 1 + (narrow/broad)^2,
    a few 1e-4 here, so it is both honest (an upper bound can only weaken
    an apparent violation) and tight.
    """

    variance: float  # physical units, set by `scale`
    variance_det_um2: float  # detector-plane um^2, binning removed
    width: WidthEstimate


def inferred_variance(
    joint: JointDistribution,
    mode: Mode,
    *,
    pitch_um: float,
    scale: float,
    mask_halfwidth: int | None = None,
    window_px: int | None = 40,
) -> InferredVariance:
    """Minimum inferred variance along one axis from the pair-coordinate fit.

    Use mode=DIFFERENCE with scale = 1/M on an image plane (source-plane
    um^2) and mode=SUM with scale = k/f on a far field (momentum variance in
    units of hbar^2/um^2).
    """
    width = fit_joint_width(joint, mode, pitch_um,
                            mask_halfwidth=mask_halfwidth, window_px=window_px)
    det_var = width.sigma_um ** 2
    return InferredVariance(
        variance=det_var * scale ** 2,
        variance_det_um2=det_var,
        width=width,
    )


def epr_product(var_x_um2: float, var_p_hbar2_per_um2: float) -> float:
    """Var(x1|x2) * Var(p1|p2); separable states cannot go below 1/4."""
    return var_x_um2 * var_p_hbar2_per_um2


# ---------------------------------------------------------------------------
# dimensionality

@dataclass
class AxisDimensionality:
    ratio: float  # broad width / narrow width, as detected
    coverage: float  # fraction of the broad marginal inside the field of view
    d_axis: float  # coverage * ratio
    sigma_narrow_um: float
    sigma_broad_um: float
    sigma_marginal_um: float
    substituted_from: str | None = None


@dataclass
class DimensionalityEstimate:
    d_total: float
    axes: dict


def axis_dimensionality(
    joint: JointDistribution,
    *,
    pitch_um: float,
    extent_px: float,
    narrow: Mode,
    mask_halfwidth: int | None = None,
    narrow_window_px: int = 40,
) -> AxisDimensionality:
    """Mode count along one axis: coverage * (broad width / narrow width).

    Both widths come from the same joint distribution, one per pair
    coordinate.  `narrow` names the coordinate expected to carry the tight
    peak (DIFFERENCE for correlated positions, SUM for anti-correlated
    momenta); it is fitted in a window around its peak, because a few-pixel
    spike on a few-hundred-bin domain leaves moment-based starting values at
    the mercy of the subtraction noise.  The broad dome is fitted with the
    saturation-corrected model (`shaded_gaussian`): its centre coincides
    with the occupancy maximum, so a plain Gaussian reads the flattened top
    as extra width.  The narrow peak needs no such correction — occupancy
    is constant across a few-pixel window and only rescales the amplitude.
    The marginal single-photon width follows from the exact decomposition
    Var(x1) = (Var(x1+x2) + Var(x1-x2)) / 4, and the coverage factor
    erf(extent / (2 sqrt(2) sigma_marginal)) is the probability that a
    photon from the broad marginal lands on the sensor at all.
    """
    broad_mode = Mode.SUM if narrow is Mode.DIFFERENCE else Mode.DIFFERENCE
    wn = fit_joint_width(joint, narrow, pitch_um, mask_halfwidth=mask_halfwidth,
                         window_px=narrow_window_px)
    wb = fit_joint_width(joint, broad_mode, pitch_um, mask_halfwidth=mask_halfwidth,
                         window_px=None, shaded=True)
    # widths as detected (no binning deconvolution): the mode count describes
    # what the camera jointly resolves, and pixelation is part of that.
    narrow_um = wn.sigma_px * pitch_um
    broad_um = wb.sigma_px * pitch_um
    if broad_um <= narrow_um:
        raise AnalysisError(
            "width ordering inverted: the coordinate expected to be narrow "
            f"fitted {narrow_um:.3g} um against {broad_um:.3g} um"
        )
    sigma_marg_um = 0.5 * math.sqrt(narrow_um ** 2 + broad_um ** 2)
    coverage = math.erf(extent_px * pitch_um / (2.0 * math.sqrt(2.0) * sigma_marg_um))
    ratio = broad_um / narrow_um
    return AxisDimensionality(
        ratio=ratio,
        coverage=coverage,
        d_axis=coverage * ratio,
        sigma_narrow_um=narrow_um,
        sigma_broad_um=broad_um,
        sigma_marginal_um=sigma_marg_um,
    )


def dimensionality(
    joints: dict,
    *,
    pitch_um: float,
    extent_px,
    narrow: Mode,
    mask_halfwidth: int | None = None,
    substitute: dict | None = None,
) -> DimensionalityEstimate:
    """Total mode count as the product of per-axis estimates.

    `extent_px` is the sensor extent along each axis (a number, or a dict
    keyed like `joints` for non-square regions).  `substitute` maps an axis
    to another whose estimate it should reuse, e.g. {"row": "col"} on an
    image plane where vertical charge smear contaminates the row statistics.
    """
    substitute = substitute or {}
    axes: dict[str, AxisDimensionality] = {}
    for axis, joint in joints.items():
        if axis in substitute:
            continue
        extent = extent_px[axis] if isinstance(extent_px, dict) else extent_px
        axes[axis] = axis_dimensionality(
            joint, pitch_um=pitch_um, extent_px=extent, narrow=narrow,
            mask_halfwidth=mask_halfwidth,
        )
    for axis, source in substitute.items():
        if source not in axes:
            raise ParameterError(f"substitute source {source!r} was not analysed")
        src = axes[source]
        axes[axis] = AxisDimensionality(
            ratio=src.ratio, coverage=src.coverage, d_axis=src.d_axis,
            sigma_narrow_um=src.sigma_narrow_um, sigma_broad_um=src.sigma_broad_um,
            sigma_marginal_um=src.sigma_marginal_um, substituted_from=source,
        )
    d_total = 1.0
    for ax in axes.values():
        d_total *= ax.d_axis
    return DimensionalityEstimate(d_total=d_total, axes=axes)


# ---------------------------------------------------------------------------
# block bootstrap

def combine_joints(parts: list[JointDistribution]) -> JointDistribution:
    """Pool block-level joints as if the blocks were one contiguous stack."""
    if not parts:
        raise ParameterError("no joint blocks to combine")
    counts = sum(p.counts for p in parts)
    reference = sum(p.reference for p in parts)
    self_counts = sum(p.self_counts for p in parts)
    return JointDistribution(
        axis=parts[0].axis,
        counts=counts,
        reference=reference,
        self_counts=self_counts,
        n_frames=sum(p.n_frames for p in parts),
        n_reference_pairs=sum(p.n_reference_pairs for p in parts),
    )


def make_blocks(marginals: dict, n_blocks: int) -> dict:
    """Cut marginal stacks into contiguous blocks of joint distributions.

    Returns {axis: [JointDistribution, ...]}.  Pooling all blocks of an axis
    with `combine_joints` reproduces the full-stack joint up to the
    n_blocks - 1 adjacent-frame reference pairs that straddle block
    boundaries (the normalisation accounts for the dropped pairs).
    """
    if n_blocks < 10:
        raise ParameterError(f"need at least 10 blocks for block bootstrap, got {n_blocks}")
    n_frames = {ax: ms.n_frames for ax, ms in marginals.items()}
    nset = set(n_frames.values())
    if len(nset) != 1:
        raise ParameterError(f"marginal stacks disagree on frame count: {n_frames}")
    n = nset.pop()
    if n < 2 * n_blocks:
        raise ParameterError(f"{n} frames is too few for {n_blocks} blocks of >= 2")
    edges = np.linspace(0, n, n_blocks + 1).astype(int)
    return {
        ax: [ms.joint(edges[i], edges[i + 1]) for i in range(n_blocks)]
        for ax, ms in marginals.items()
    }


def block_bootstrap(
    blocks: dict,
    statistic,
    *,
    n_boot: int = 100,
    seed: int = 0,
) -> dict:
    """Standard errors of joint-derived statistics by block resampling.

    `blocks` comes from `make_blocks`.  Each resample draws blocks with
    replacement, pools their joint distributions and evaluates
    `statistic(joints) -> dict[str, float]`; resamples where the statistic
    raises AnalysisError/FitFailureError are skipped.  Returns
    {key: standard error over resamples}.
    """
    n_blocks = {ax: len(b) for ax, b in blocks.items()}
    bset = set(n_blocks.values())
    if len(bset) != 1:
        raise ParameterError(f"axes disagree on block count: {n_blocks}")
    nb = bset.pop()
    rng = np.random.default_rng(seed)
    samples: dict[str, list[float]] = {}
    for _ in range(n_boot):
        pick = rng.integers(0, nb, size=nb)
        joints = {ax: combine_joints([blk[i] for i in pick]) for ax, blk in blocks.items()}
        try:
            stats = statistic(joints)
        except (AnalysisError, FitFailureError):
            continue
        for key, value in stats.items():
            samples.setdefault(key, []).append(float(value))
    out = {}
    for key, vals in samples.items():
        arr = np.asarray(vals)
        arr = arr[np.isfinite(arr)]
        out[key] = float(arr.std(ddof=1)) if arr.size >= 2 else float("nan")
    return out


# ---------------------------------------------------------------------------
# report container

@dataclass
class EprReport:
    """Complete analysis output for one simulated or measured run."""

    prediction: dict
    n_frames: dict
    occupancy: dict
    sigma_pos_um: float
    sigma_mom_um: float
    snr_pos: float
    snr_mom: float
    cond_var_x_um2: float
    cond_var_p_hbar2_per_um2: float
    epr_product_hbar2: float
    heisenberg_bound_hbar2: float
    epr_violated: bool
    snr_gate: float
    d_pos: float
    d_mom: float
    detail: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kwargs) -> str:
        kwargs.setdefault("indent", 2)
        return json.dumps(_jsonable(self.as_dict()), **kwargs)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj
