"""
Aggregate observation data model and dataset CSV I/O.

A dataset is a sequence of discrete measures, one per observation time.
Particles are indistinguishable to the solver; particle ids and labels are
carried only so that baselines and metrics can be computed against ground
truth.
"""
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple, Union

import numpy as np

from otsep.core.exceptions import DatasetError

if TYPE_CHECKING:
    from otsep.dynamics.affine import AffineModel

logger = logging.getLogger(__name__)

MASS_BALANCE_RTOL = 1e-9

# A point is a length-d real vector
Point = np.ndarray


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Weighted point cloud: `points` is (n, d), `masses` is (n,)."""

    points: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        points = np.array(self.points, dtype=float)
        if points.ndim == 1:
            points = points.reshape(-1, 1)
        masses = np.array(self.masses, dtype=float).reshape(-1)
        object.__setattr__(self, "points", _frozen(points))
        object.__setattr__(self, "masses", _frozen(masses))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    def violations(self) -> List[str]:
        problems = []
        if self.points.ndim != 2 or self.n == 0:
            return ["no support points"]
        if self.masses.shape[0] != self.n:
            problems.append(f"{self.n} points but {self.masses.shape[0]} masses")
            return problems
        if not np.all(np.isfinite(self.points)):
            problems.append("non-finite coordinates")
        if not np.all(np.isfinite(self.masses)):
            problems.append("non-finite masses")
        elif np.any(self.masses < 0):
            problems.append(f"negative mass at point {int(np.argmin(self.masses))}")
        elif self.total_mass <= 0:
            problems.append("total mass is not positive")
        return problems

    def scaled(self, alpha: float) -> "DiscreteMeasure":
        return DiscreteMeasure(self.points.copy(), self.masses * alpha)


@dataclass(frozen=True, eq=False)
class ObservationSequence:
    """
    The T observed measures, optionally with ground truth.

    `labels[t][i]` is the 0-based ensemble of point i at time t and
    `particle_ids[t][i]` its trajectory id (-1 if unknown).
    """

    measures: Tuple[DiscreteMeasure, ...]
    labels: Optional[Tuple[np.ndarray, ...]] = None
    particle_ids: Optional[Tuple[np.ndarray, ...]] = None
    true_models: Optional[Tuple["AffineModel", ...]] = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "measures", tuple(self.measures))
        if self.labels is not None:
            object.__setattr__(
                self, "labels", tuple(_frozen(np.asarray(lab, dtype=int).reshape(-1)) for lab in self.labels)
            )
        if self.particle_ids is not None:
            object.__setattr__(
                self, "particle_ids", tuple(_frozen(np.asarray(p, dtype=int).reshape(-1)) for p in self.particle_ids)
            )
        if self.true_models is not None:
            object.__setattr__(self, "true_models", tuple(self.true_models))

    @property
    def T(self) -> int:
        return len(self.measures)

    @property
    def d(self) -> int:
        return self.measures[0].d

    @property
    def sizes(self) -> List[int]:
        return [m.n for m in self.measures]

    @property
    def total_mass(self) -> float:
        return self.measures[0].total_mass

    @property
    def has_labels(self) -> bool:
        return self.labels is not None

    def scaled(self, alpha: float) -> "ObservationSequence":
        return ObservationSequence(
            tuple(m.scaled(alpha) for m in self.measures),
            labels=self.labels,
            particle_ids=self.particle_ids,
            true_models=self.true_models,
        )


def validate(seq: ObservationSequence) -> None:
    """Raise DatasetError listing every violated invariant, with 1-based time indices."""
    problems: List[str] = []
    if seq.T < 2:
        problems.append(f"need at least 2 time points, got {seq.T}")
    if seq.T == 0:
        raise DatasetError("Invalid observation sequence", problems)

    d = seq.measures[0].d if seq.measures[0].points.ndim == 2 else None
    for t, measure in enumerate(seq.measures, start=1):
        for problem in measure.violations():
            problems.append(f"t={t}: {problem}")
        if measure.points.ndim == 2 and measure.d != d:
            problems.append(f"t={t}: dimension {measure.d} differs from dimension {d} at t=1")

    if not problems:
        reference = seq.measures[0].total_mass
        for t, measure in enumerate(seq.measures[1:], start=2):
            total = measure.total_mass
            if abs(total - reference) > MASS_BALANCE_RTOL * max(abs(total), abs(reference)):
                problems.append(f"t={t}: total mass {total!r} differs from {reference!r} at t=1 (mass balance)")

    for name, per_time in (("labels", seq.labels), ("particle_ids", seq.particle_ids)):
        if per_time is None:
            continue
        if len(per_time) != seq.T:
            problems.append(f"{name} given for {len(per_time)} times, expected {seq.T}")
            continue
        for t, (values, measure) in enumerate(zip(per_time, seq.measures), start=1):
            if values.shape[0] != measure.n:
                problems.append(f"t={t}: {values.shape[0]} {name} for {measure.n} points")
            elif name == "labels" and np.any(values < 0):
                problems.append(f"t={t}: negative ensemble label")

    if problems:
        raise DatasetError("Invalid observation sequence", problems)


def _render(value: float) -> str:
    # repr gives the shortest string that parses back to the same float
    return repr(float(value))


def save_dataset(seq: ObservationSequence, path: Union[str, Path]) -> None:
    """Write `seq` as CSV: t,particle_id,x_0..x_{d-1},mass[,label]."""
    path = Path(path)
    d = seq.d
    header = ["t", "particle_id"] + [f"x_{i}" for i in range(d)] + ["mass"]
    if seq.has_labels:
        header.append("label")

    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for t, measure in enumerate(seq.measures):
            for i in range(measure.n):
                pid = int(seq.particle_ids[t][i]) if seq.particle_ids is not None else -1
                row = [str(t + 1), str(pid)]
                row += [_render(x) for x in measure.points[i]]
                row.append(_render(measure.masses[i]))
                if seq.has_labels:
                    row.append(str(int(seq.labels[t][i])))
                writer.writerow(row)
    logger.info(f"Wrote dataset with T={seq.T}, d={d}, sizes={seq.sizes} to {path}")


def _parse_header(header: Sequence[str], path: Path) -> Tuple[int, bool]:
    header = [h.strip() for h in header]
    has_label = bool(header) and header[-1] == "label"
    body = header[:-1] if has_label else header
    if len(body) < 4 or body[0] != "t" or body[1] != "particle_id" or body[-1] != "mass":
        raise DatasetError(f"{path}: header must be t,particle_id,x_0,...,x_{{d-1}},mass[,label], got {header}")
    coords = body[2:-1]
    expected = [f"x_{i}" for i in range(len(coords))]
    if coords != expected:
        raise DatasetError(f"{path}: coordinate columns must be {expected}, got {coords}")
    return len(coords), has_label


def load_dataset(path: Union[str, Path]) -> ObservationSequence:
    """Parse and validate a dataset CSV; rows may appear in any order."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"Dataset file not found: {path}")

    rows_by_t = {}
    with open(path, "r", newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file")
        d, has_label = _parse_header(header, path)
        width = d + 3 + (1 if has_label else 0)

        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != width:
                raise DatasetError(f"{path}:{line_no}: expected {width} fields (dimension {d}), got {len(row)}")
            try:
                t = int(row[0])
                pid = int(row[1])
                coords = [float(x) for x in row[2:2 + d]]
                mass = float(row[2 + d])
                label = int(row[3 + d]) if has_label else None
            except ValueError as e:
                raise DatasetError(f"{path}:{line_no}: malformed row {row}: {e}")
            if t < 1:
                raise DatasetError(f"{path}:{line_no}: time index must be >= 1, got {t}")
            rows_by_t.setdefault(t, []).append((pid, coords, mass, label))

    if not rows_by_t:
        raise DatasetError(f"{path}: no observations")
    T = max(rows_by_t)
    missing = [t for t in range(1, T + 1) if t not in rows_by_t]
    if missing:
        raise DatasetError(f"{path}: no observations at times {missing}")

    measures, labels, pids = [], [], []
    for t in range(1, T + 1):
        rows = rows_by_t[t]
        measures.append(DiscreteMeasure(np.array([r[1] for r in rows]).reshape(len(rows), d), [r[2] for r in rows]))
        pids.append([r[0] for r in rows])
        labels.append([r[3] for r in rows])

    any_ids = any(pid != -1 for per_t in pids for pid in per_t)
    seq = ObservationSequence(
        tuple(measures),
        labels=tuple(labels) if has_label else None,
        particle_ids=tuple(pids) if any_ids else None,
    )
    validate(seq)
    logger.info(f"Loaded dataset {path}: T={seq.T}, d={seq.d}, sizes={seq.sizes}")
    return seq
