"""End-to-end calibration: poses from detections, connectivity, initialization, refinement."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .connectivity import component_listing, select_reference, split_components
from .dataset import DEFAULT_GATE_PX, Dataset, build_frs
from .errors import Disconnected, EmptyInput, NoTriangulatablePoints
from .init_solver import DIVERSITY_RAD, initialize
from .metrics import algebraic_error, rae, rrmse
from .refine import LMOptions, RefineReport, refine

log = logging.getLogger(__name__)


@dataclass
class CalibrationOptions:
    gate_px: float = DEFAULT_GATE_PX
    diversity_rad: float = DIVERSITY_RAD
    lm: LMOptions = field(default_factory=LMOptions)
    threads: int = 1

    @classmethod
    def from_dict(cls, doc: dict) -> "CalibrationOptions":
        """Overrides from a config document; unknown keys are rejected."""
        known = {"lambda0", "max_iters", "gate_px", "diversity_rad", "threads"}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        lm = LMOptions(lambda0=float(doc.get("lambda0", LMOptions.lambda0)),
                       max_iters=int(doc.get("max_iters", LMOptions.max_iters)))
        return cls(float(doc.get("gate_px", DEFAULT_GATE_PX)), float(doc.get("diversity_rad", DIVERSITY_RAD)),
                   lm, int(doc.get("threads", 1)))


@dataclass
class CalibrationResult:
    reference: tuple
    frs: list
    initial: object  # VariablePool after initialization
    final: object  # VariablePool after refinement
    schedule: list
    refinement: RefineReport
    dropped: int = 0


def quality(pool, frs) -> dict:
    """ae, rrmse and median rae of a pose set; rae is None when no corner is seen twice."""
    out = {"ae": algebraic_error(pool, frs), "rrmse": rrmse(pool, frs)}
    try:
        r = rae(pool, frs)
        out.update(rae=r.median, rae_count=len(r.points))
    except NoTriangulatablePoints:
        out.update(rae=None, rae_count=0)
    return out


def prepare(dataset: Dataset, options: CalibrationOptions | None = None):
    """Validated FRs of a dataset and the number of detections dropped by the gate."""
    opts = options or CalibrationOptions()
    dataset.validate()
    frs = build_frs(dataset, opts.gate_px, opts.threads)
    if not frs:
        raise EmptyInput("no detection survived single-view pose estimation")
    return frs, len(dataset.detections) - len(frs)


def check_connected(frs) -> None:
    groups = split_components(frs)
    if len(groups) > 1:
        raise Disconnected(f"{len(groups)} components; calibrate each separately", component_listing(frs))


def calibrate_frs(frs, options: CalibrationOptions | None = None, on_step=None) -> CalibrationResult:
    opts = options or CalibrationOptions()
    check_connected(frs)
    reference = select_reference(frs)
    log.info("reference pattern %d, time %d", *reference)
    initial, schedule = initialize(frs, reference, opts.diversity_rad, on_step)
    final, report = refine(initial, frs, opts.lm)
    return CalibrationResult(reference, frs, initial, final, schedule, report)


def calibrate(dataset: Dataset, options: CalibrationOptions | None = None, on_step=None) -> CalibrationResult:
    frs, dropped = prepare(dataset, options)
    result = calibrate_frs(frs, options, on_step)
    result.dropped = dropped
    return result
