"""Allele-trajectory files.

Format: CSV with header ``locus,pos,generation,sample_size,count``, one row
per locus and timepoint, ``count`` being the minor-allele count in the
sample. Rows of a locus must have strictly increasing generations.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

from .errors import DataFormatError
from .wf.sim import LocusTrajectory, SamplingPlan

log = logging.getLogger(__name__)

COLUMNS = ("locus", "pos", "generation", "sample_size", "count")


@dataclass(frozen=True)
class LocusData:
    locus: str
    pos: int
    trajectory: LocusTrajectory
    first_generation: int = 0

    @property
    def generations(self) -> tuple[int, ...]:
        return tuple(g + self.first_generation for g in self.trajectory.plan.generations)


@dataclass
class TrajectoryDataset:
    loci: list[LocusData]
    dropped: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.loci)

    @property
    def trajectories(self) -> list[LocusTrajectory]:
        return [d.trajectory for d in self.loci]


def passes_frequency_filter(traj: LocusTrajectory, min_freq: float = 0.02, min_timepoints: int = 2) -> bool:
    """True when the sample frequency reaches ``min_freq`` at ``min_timepoints`` or more timepoints."""
    return int((traj.freqs >= min_freq).sum()) >= min_timepoints


def _read_rows(path):
    rows: dict[str, list] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != COLUMNS:
            raise DataFormatError(f"expected header {','.join(COLUMNS)}", 1)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(COLUMNS):
                raise DataFormatError(f"expected {len(COLUMNS)} fields, got {len(row)}", lineno)
            locus = row[0].strip()
            try:
                pos, gen, size, count = (int(c) for c in row[1:])
            except ValueError:
                raise DataFormatError(f"non-integer field in {row[1:]}", lineno) from None
            if not locus:
                raise DataFormatError("empty locus id", lineno)
            if size < 1 or not 0 <= count <= size or gen < 0:
                raise DataFormatError(f"invalid generation/sample size/count {gen}/{size}/{count}", lineno)
            entries = rows.setdefault(locus, [])
            if entries and entries[-1][1] != pos:
                raise DataFormatError(f"locus {locus} changes position", lineno)
            if entries and gen <= entries[-1][2]:
                raise DataFormatError(f"generations of locus {locus} are not strictly increasing", lineno)
            entries.append((lineno, pos, gen, size, count))
    return rows


def ingest_trajectories(path, min_freq: float = 0.02, min_timepoints: int = 2,
                        last_timepoints: int | None = None) -> TrajectoryDataset:
    """Read a trajectory file and keep loci passing the frequency filter.

    ``last_timepoints`` restricts every locus to its last ``k`` timepoints
    before filtering. Generations are re-based so each locus starts at 0
    (the original first generation is kept in ``first_generation``).
    """
    kept, dropped = [], []
    for locus, entries in _read_rows(path).items():
        if last_timepoints is not None:
            entries = entries[-last_timepoints:]
        if len(entries) < 2:
            dropped.append(locus)
            continue
        g0 = entries[0][2]
        plan = SamplingPlan(tuple(e[2] - g0 for e in entries), tuple(e[3] for e in entries))
        traj = LocusTrajectory(plan, tuple(e[4] for e in entries))
        if passes_frequency_filter(traj, min_freq, min_timepoints):
            kept.append(LocusData(locus, entries[0][1], traj, g0))
        else:
            dropped.append(locus)
    log.info("kept %d loci, dropped %d", len(kept), len(dropped))
    if not kept:
        raise DataFormatError(f"no locus passed the filter (frequency >= {min_freq} at >= {min_timepoints} timepoints)")
    return TrajectoryDataset(kept, dropped)


def write_trajectories(dataset: TrajectoryDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for d in dataset.loci:
            plan = d.trajectory.plan
            for g, n, c in zip(d.generations, plan.sizes, d.trajectory.counts):
                w.writerow([d.locus, d.pos, g, n, c])
