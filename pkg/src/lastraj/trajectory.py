"""Trajectories, derived variables, the trajectory semi-metric and dataset I/O.

A trajectory is a sequence of steps ``(item, intra, inter)`` plus a context
vector. ``intra`` is the dwell time at the step, ``inter`` the transit time to
the next step. The last step's ``inter`` is the exit walk: it is stored, and
whether it counts towards totals depends on the ``exit_walk`` convention.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, ParseError, ValidationError


@dataclass(frozen=True)
class Step:
    item: int
    intra: float
    inter: float


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Variable-length trajectory stored column-wise.

    ``items`` is an int array of length T, ``intra`` and ``inter`` float arrays
    of the same length, ``context`` a fixed-width float vector.
    """

    items: np.ndarray
    intra: np.ndarray
    inter: np.ndarray
    context: np.ndarray
    id: str = ""

    def __post_init__(self):
        items = np.asarray(self.items, dtype=np.int64).reshape(-1)
        intra = np.asarray(self.intra, dtype=np.float64).reshape(-1)
        inter = np.asarray(self.inter, dtype=np.float64).reshape(-1)
        context = np.asarray(self.context, dtype=np.float64).reshape(-1)
        if not (len(items) == len(intra) == len(inter)):
            raise ValidationError(f"trajectory {self.id!r}: column lengths differ")
        for arr in (items, intra, inter, context):
            arr.setflags(write=False)
        object.__setattr__(self, "items", items)
        object.__setattr__(self, "intra", intra)
        object.__setattr__(self, "inter", inter)
        object.__setattr__(self, "context", context)

    @classmethod
    def from_steps(cls, steps: Iterable, context=(), id: str = "") -> "Trajectory":
        rows = [s if isinstance(s, Step) else Step(int(s[0]), float(s[1]), float(s[2])) for s in steps]
        return cls(
            items=[s.item for s in rows],
            intra=[s.intra for s in rows],
            inter=[s.inter for s in rows],
            context=context,
            id=id,
        )

    @property
    def length(self) -> int:
        return len(self.items)

    def __len__(self):
        return len(self.items)

    @property
    def steps(self) -> tuple[Step, ...]:
        return tuple(
            Step(int(j), float(a), float(b)) for j, a, b in zip(self.items, self.intra, self.inter)
        )

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.id == other.id
            and np.array_equal(self.items, other.items)
            and np.array_equal(self.intra, other.intra)
            and np.array_equal(self.inter, other.inter)
            and np.array_equal(self.context, other.context)
        )

    def __hash__(self):
        return hash((self.id, self.items.tobytes(), self.intra.tobytes(), self.inter.tobytes()))

    def __repr__(self):
        return f"Trajectory(id={self.id!r}, T={self.length}, context_width={len(self.context)})"


@dataclass(frozen=True, eq=False)
class DatasetMeta:
    """Per-dataset constants: bounds and item metadata."""

    t_max: int
    b_bound: float
    item_count: int
    category_of: np.ndarray | None = None
    floor_of: np.ndarray | None = None

    def __post_init__(self):
        for name in ("category_of", "floor_of"):
            value = getattr(self, name)
            if value is not None:
                arr = np.asarray(value, dtype=np.int64).reshape(-1)
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)

    @property
    def n_categories(self) -> int:
        return 0 if self.category_of is None else int(self.category_of.max()) + 1

    @property
    def n_floors(self) -> int:
        return 0 if self.floor_of is None else int(self.floor_of.max()) + 1

    def __eq__(self, other):
        if not isinstance(other, DatasetMeta):
            return NotImplemented

        def same(a, b):
            return (a is None and b is None) or (
                a is not None and b is not None and np.array_equal(a, b)
            )

        return (
            self.t_max == other.t_max
            and self.b_bound == other.b_bound
            and self.item_count == other.item_count
            and same(self.category_of, other.category_of)
            and same(self.floor_of, other.floor_of)
        )


@dataclass(frozen=True, eq=False)
class TrajectoryDataset:
    trajectories: tuple[Trajectory, ...]
    meta: DatasetMeta
    extra_header: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.trajectories)

    def __getitem__(self, index):
        return self.trajectories[index]

    def __iter__(self):
        return iter(self.trajectories)

    @property
    def t_max(self) -> int:
        return self.meta.t_max

    @property
    def b_bound(self) -> float:
        return self.meta.b_bound

    @property
    def item_count(self) -> int:
        return self.meta.item_count

    @property
    def category_of(self):
        return self.meta.category_of

    @property
    def floor_of(self):
        return self.meta.floor_of

    @property
    def context_width(self) -> int:
        return len(self.trajectories[0].context)

    def lengths(self) -> np.ndarray:
        return np.array([t.length for t in self.trajectories], dtype=np.int64)

    def subset(self, indices: Sequence[int]) -> "TrajectoryDataset":
        return TrajectoryDataset(
            tuple(self.trajectories[i] for i in indices), self.meta, dict(self.extra_header)
        )

    def __eq__(self, other):
        if not isinstance(other, TrajectoryDataset):
            return NotImplemented
        return self.meta == other.meta and self.trajectories == other.trajectories


class DerivedKind(enum.Enum):
    TOTAL_TIME = "TotalTime"
    TOTAL_INTRA = "TotalIntra"
    TOTAL_INTER = "TotalInter"
    AVG_INTRA = "AvgIntra"
    AVG_INTER = "AvgInter"
    VISIT_COUNT = "VisitCount"
    ITEM_DIVERSITY = "ItemDiversity"
    CATEGORY_HISTOGRAM = "CategoryHistogram"
    FLOOR_HISTOGRAM = "FloorHistogram"
    TIME_PER_CATEGORY = "TimePerCategory"

    @property
    def is_histogram(self) -> bool:
        return self in _HISTOGRAM_KINDS

    @classmethod
    def parse(cls, name: str) -> "DerivedKind":
        for kind in cls:
            if name in (kind.value, kind.name):
                return kind
        raise ConfigError(f"unknown derived variable {name!r}")


_HISTOGRAM_KINDS = frozenset(
    {DerivedKind.CATEGORY_HISTOGRAM, DerivedKind.FLOOR_HISTOGRAM, DerivedKind.TIME_PER_CATEGORY}
)

SCALAR_KINDS = tuple(k for k in DerivedKind if not k.is_histogram)
ALL_KINDS = tuple(DerivedKind)


def _check_items(traj: Trajectory, meta) -> None:
    if meta is None or traj.length == 0:
        return
    if traj.items.min() < 0 or traj.items.max() >= meta.item_count:
        bad = [int(j) for j in traj.items if j < 0 or j >= meta.item_count]
        raise ValidationError(f"trajectory {traj.id!r}: unknown item id {bad[0]}")


def evaluate_derived(traj: Trajectory, kind: DerivedKind, meta=None, exit_walk: bool = True):
    """Evaluate one derived variable on ``traj``.

    ``exit_walk=True`` sums all T inter values (reporting convention);
    ``exit_walk=False`` drops the last one, so totals use T-1 transits.
    Histogram kinds return a float array indexed by ascending category/floor id.
    """
    if isinstance(kind, str):
        kind = DerivedKind.parse(kind)
    if traj.length == 0:
        raise ValidationError(f"trajectory {traj.id!r} is empty")
    _check_items(traj, meta)
    T = traj.length
    inter = traj.inter if exit_walk else traj.inter[:-1]

    if kind is DerivedKind.TOTAL_INTRA:
        return float(traj.intra.sum())
    if kind is DerivedKind.TOTAL_INTER:
        return float(inter.sum())
    if kind is DerivedKind.TOTAL_TIME:
        return float(traj.intra.sum()) + float(inter.sum())
    if kind is DerivedKind.AVG_INTRA:
        return float(traj.intra.sum()) / T
    if kind is DerivedKind.AVG_INTER:
        return float(inter.sum()) / max(T - 1, 1)
    if kind is DerivedKind.VISIT_COUNT:
        return float(T)
    if kind is DerivedKind.ITEM_DIVERSITY:
        return float(len(np.unique(traj.items)))

    if meta is None:
        raise ConfigError(f"{kind.value} needs dataset category/floor maps")
    if kind is DerivedKind.FLOOR_HISTOGRAM:
        if meta.floor_of is None:
            raise ConfigError(f"{kind.value} needs a floor map")
        bins = meta.floor_of[traj.items]
        return np.bincount(bins, minlength=meta.n_floors).astype(np.float64)
    if meta.category_of is None:
        raise ConfigError(f"{kind.value} needs a category map")
    bins = meta.category_of[traj.items]
    if kind is DerivedKind.CATEGORY_HISTOGRAM:
        return np.bincount(bins, minlength=meta.n_categories).astype(np.float64)
    return np.bincount(bins, weights=traj.intra, minlength=meta.n_categories)


def total_time(traj: Trajectory, exit_walk: bool = True) -> float:
    return evaluate_derived(traj, DerivedKind.TOTAL_TIME, exit_walk=exit_walk)


def avg_intra(traj: Trajectory) -> float:
    return evaluate_derived(traj, DerivedKind.AVG_INTRA)


def traj_semimetric(x: Trajectory, y: Trajectory, b: float) -> float:
    """Matched-step absolute time differences plus ``b`` per unit length gap."""
    if not b > 0:
        raise ConfigError(f"semi-metric bound must be positive, got {b}")
    n = min(x.length, y.length)
    matched = np.abs(x.intra[:n] - y.intra[:n]).sum() + np.abs(x.inter[:n] - y.inter[:n]).sum()
    return float(matched) + b * abs(x.length - y.length)


# ---------------------------------------------------------------------------
# validation and file format

def validate_trajectory(traj: Trajectory, meta: DatasetMeta) -> None:
    tid = traj.id
    if traj.length == 0:
        raise ValidationError(f"trajectory {tid!r}: zero-length trajectory")
    if traj.length > meta.t_max:
        raise ValidationError(f"trajectory {tid!r}: length {traj.length} exceeds t_max {meta.t_max}")
    for name, col in (("intra", traj.intra), ("inter", traj.inter)):
        if not np.all(np.isfinite(col)):
            raise ValidationError(f"trajectory {tid!r}: non-finite {name}")
        if np.any(col < 0):
            raise ValidationError(f"trajectory {tid!r}: negative {name}")
    if not np.all(np.isfinite(traj.context)):
        raise ValidationError(f"trajectory {tid!r}: non-finite context")
    per_step = traj.intra + traj.inter
    if np.any(per_step > meta.b_bound * (1 + 1e-12)):
        t = int(np.argmax(per_step))
        raise ValidationError(
            f"trajectory {tid!r}: step {t} intra+inter {per_step[t]} exceeds b_bound {meta.b_bound}"
        )
    if traj.items.min() < 0 or traj.items.max() >= meta.item_count:
        raise ValidationError(f"trajectory {tid!r}: item id outside [0, {meta.item_count})")
    for name, table in (("category", meta.category_of), ("floor", meta.floor_of)):
        if table is not None and traj.items.max() >= len(table):
            raise ValidationError(f"trajectory {tid!r}: item without a {name} entry")


def make_dataset(trajectories: Sequence[Trajectory], t_max=None, b_bound=None, item_count=None,
                 category_of=None, floor_of=None, extra_header=None) -> TrajectoryDataset:
    """Build and validate a dataset; undeclared bounds default to data maxima."""
    trajectories = tuple(trajectories)
    if not trajectories:
        raise ValidationError("no trajectories")
    widths = {len(t.context) for t in trajectories}
    if len(widths) > 1:
        raise ValidationError(f"context width varies across trajectories: {sorted(widths)}")
    if t_max is None:
        t_max = max(t.length for t in trajectories)
    if b_bound is None:
        b_bound = max(float((t.intra + t.inter).max()) for t in trajectories if t.length)
        if b_bound <= 0:
            b_bound = 1.0
    if item_count is None:
        item_count = max(int(t.items.max()) for t in trajectories if t.length) + 1
    if category_of is not None and len(category_of) < item_count:
        raise ValidationError("category map does not cover every item")
    if floor_of is not None and len(floor_of) < item_count:
        raise ValidationError("floor map does not cover every item")
    meta = DatasetMeta(int(t_max), float(b_bound), int(item_count), category_of, floor_of)
    if meta.t_max < 1 or meta.b_bound <= 0 or meta.item_count < 1:
        raise ValidationError("t_max, b_bound and item_count must be positive")
    for traj in trajectories:
        validate_trajectory(traj, meta)
    return TrajectoryDataset(trajectories, meta, dict(extra_header or {}))


_HEADER_KEYS = {"t_max", "b_bound", "item_count", "categories", "floors"}


def _map_to_array(value, name, line_number):
    if value is None:
        return None
    if isinstance(value, list):
        return np.asarray(value, dtype=np.int64)
    if isinstance(value, dict):
        try:
            pairs = sorted((int(k), int(v)) for k, v in value.items())
        except (TypeError, ValueError) as exc:
            raise ParseError(f"{name} map must be item->int", line_number) from exc
        n = pairs[-1][0] + 1 if pairs else 0
        arr = np.full(n, -1, dtype=np.int64)
        for k, v in pairs:
            arr[k] = v
        if np.any(arr < 0):
            missing = int(np.flatnonzero(arr < 0)[0])
            raise ValidationError(f"item {missing} has no {name} entry")
        return arr
    raise ParseError(f"{name} must be a list or an object", line_number)


def _parse_record(obj, line_number) -> Trajectory:
    if not isinstance(obj, dict):
        raise ParseError("record is not an object", line_number)
    for key in ("id", "context", "steps"):
        if key not in obj:
            raise ParseError(f"missing field {key!r}", line_number)
    steps = obj["steps"]
    if not isinstance(steps, list):
        raise ParseError("steps must be an array", line_number)
    items, intra, inter = [], [], []
    for k, step in enumerate(steps):
        if not (isinstance(step, list) and len(step) == 3):
            raise ParseError(f"step {k} is not an [item, intra, inter] triple", line_number)
        j, a, b = step
        if isinstance(j, bool) or not isinstance(j, int):
            raise ParseError(f"step {k}: item must be an integer", line_number)
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in (a, b)):
            raise ParseError(f"step {k}: times must be numbers", line_number)
        items.append(j)
        intra.append(a)
        inter.append(b)
    context = obj["context"]
    if not isinstance(context, list) or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in context
    ):
        raise ParseError("context must be an array of numbers", line_number)
    return Trajectory(items, intra, inter, context, id=str(obj["id"]))


def load_dataset(path, schema_meta: dict | None = None) -> TrajectoryDataset:
    """Read a line-delimited trajectory file.

    ``schema_meta`` may supply header values (t_max, b_bound, item_count,
    categories, floors) that the file itself does not declare.
    """
    path = Path(path)
    header = dict(schema_meta or {})
    trajectories = []
    with path.open("r", encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"malformed JSON ({exc.msg})", line_number) from exc
            if line_number == 1 and isinstance(obj, dict) and "steps" not in obj and (
                _HEADER_KEYS & obj.keys()
            ):
                header.update(obj)
                continue
            trajectories.append(_parse_record(obj, line_number))
    if not trajectories:
        raise ValidationError("no trajectories")
    ids = [t.id for t in trajectories]
    extra = {k: v for k, v in header.items() if k not in _HEADER_KEYS}
    return make_dataset(
        trajectories,
        t_max=header.get("t_max"),
        b_bound=header.get("b_bound"),
        item_count=header.get("item_count"),
        category_of=_map_to_array(header.get("categories"), "category", 1),
        floor_of=_map_to_array(header.get("floors"), "floor", 1),
        extra_header=extra | ({"duplicate_ids": True} if len(set(ids)) != len(ids) else {}),
    )


def _num(x: float):
    """JSON number that round-trips exactly (repr of a float64)."""
    f = float(x)
    return int(f) if f.is_integer() and abs(f) < 2**53 else f


def dataset_to_lines(dataset: TrajectoryDataset) -> list[str]:
    meta = dataset.meta
    header = {
        "t_max": meta.t_max,
        "b_bound": _num(meta.b_bound),
        "item_count": meta.item_count,
    }
    if meta.category_of is not None:
        header["categories"] = [int(v) for v in meta.category_of]
    if meta.floor_of is not None:
        header["floors"] = [int(v) for v in meta.floor_of]
    header.update({k: v for k, v in dataset.extra_header.items() if k not in header})
    lines = [json.dumps(header, separators=(",", ":"))]
    for traj in dataset.trajectories:
        record = {
            "id": traj.id,
            "context": [float(v) for v in traj.context],
            "steps": [[int(j), float(a), float(b)] for j, a, b in zip(traj.items, traj.intra, traj.inter)],
        }
        lines.append(json.dumps(record, separators=(",", ":")))
    return lines


def write_dataset(dataset: TrajectoryDataset, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for line in dataset_to_lines(dataset):
            fh.write(line + "\n")
    return path
