"""Synthetic population: catchment grid, schools, households, individuals.

Catchments tile a near-square grid of identical squares. Each catchment gets
a drawn number of elementary schools with drawn enrollments (capacities).
Households with children are generated one at a time per catchment until
every elementary seat is filled; the closing household is truncated so seat
totals match capacity exactly. Childless households are added in proportion
to the with/without-children household ratio. Individuals are then expanded
one row per person.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, InvalidParameterError, SimulationError
from .stochastics import DistributionSpec, RngStream, sample
from . import tableio


@dataclass(frozen=True)
class Catchment:
    id: int
    row: int
    col: int
    side: float

    @property
    def x0(self) -> float:
        return self.col * self.side

    @property
    def y0(self) -> float:
        return self.row * self.side


@dataclass(frozen=True)
class School:
    id: int
    catchment_id: int
    enrollment: int


@dataclass
class Household:
    id: int
    catchment_id: int
    num_children: int  # 0 for childless households
    num_elem: int
    size: int
    x: float
    y: float


@dataclass(frozen=True)
class PopulationConfig:
    """Parameters controlling synthetic population generation.

    ``prop_children_couple`` / ``prop_children_lone`` give probabilities of
    1, 2, 3 children for couple- and lone-parent households;
    ``prop_house_size`` gives probabilities of sizes 1..5 for childless
    households. Probability vectors must each sum to 1.
    """

    n_catchments: int = 16
    catchment_side: float = 80.0
    school_count_spec: DistributionSpec = field(
        default_factory=lambda: DistributionSpec("normal", {"mean": 3.0, "sd": 1.0})
    )
    enrollment_spec: DistributionSpec = field(
        default_factory=lambda: DistributionSpec("gamma", {"shape": 7.86, "rate": 0.032})
    )
    prop_parent_couple: float = 0.77
    prop_children_couple: tuple[float, float, float] = (0.36, 0.43, 0.21)
    prop_children_lone: tuple[float, float, float] = (0.58, 0.31, 0.11)
    prop_elem_age: float = 0.53
    prop_house_size: tuple[float, float, float, float, float] = (0.23, 0.35, 0.17, 0.16, 0.09)
    prop_house_children: float = 0.43

    def validate(self) -> None:
        if self.n_catchments < 1:
            raise InvalidParameterError(
                f"n_catchments must be >= 1 (got {self.n_catchments})"
            )
        if not self.catchment_side > 0:
            raise InvalidParameterError(
                f"catchment_side must be > 0 (got {self.catchment_side})"
            )
        if not 0.0 <= self.prop_parent_couple <= 1.0:
            raise InvalidParameterError(
                f"prop_parent_couple must be in [0, 1] (got {self.prop_parent_couple})"
            )
        # zero would leave elementary seats unfillable
        if not 0.0 < self.prop_elem_age <= 1.0:
            raise InvalidParameterError(
                f"prop_elem_age must be in (0, 1] (got {self.prop_elem_age})"
            )
        if not 0.0 < self.prop_house_children <= 1.0:
            raise InvalidParameterError(
                f"prop_house_children must be in (0, 1] (got {self.prop_house_children})"
            )
        for name, length in (
            ("prop_children_couple", 3),
            ("prop_children_lone", 3),
            ("prop_house_size", 5),
        ):
            probs = getattr(self, name)
            if len(probs) != length:
                raise InvalidParameterError(
                    f"{name} must have {length} entries (got {len(probs)})"
                )
            if any(p < 0 for p in probs):
                raise InvalidParameterError(f"{name} entries must be >= 0 (got {probs})")
            total = float(sum(probs))
            if abs(total - 1.0) > 1e-9:
                raise InvalidParameterError(f"{name} must sum to 1 (got {total!r})")
        self.school_count_spec.validate()
        self.enrollment_spec.validate()


@dataclass
class PopulationFrame:
    """The assembled population: structures plus one row per individual."""

    catchments: list[Catchment]
    schools: list[School]
    households: list[Household]
    individuals: dict[str, np.ndarray]

    INDIVIDUAL_COLUMNS = ("id", "household_id", "catchment_id", "is_elem_child", "school_id", "x", "y")

    @property
    def n_individuals(self) -> int:
        return len(self.individuals["id"])

    @property
    def n_students(self) -> int:
        return int(self.individuals["is_elem_child"].sum())

    def student_rows(self) -> np.ndarray:
        """Row indices of elementary-school children."""
        return np.flatnonzero(self.individuals["is_elem_child"] == 1)

    def write_csvs(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        tableio.write_csv(
            out / "catchments.csv",
            ("id", "row", "col", "side", "x0", "y0"),
            {
                "id": np.array([c.id for c in self.catchments]),
                "row": np.array([c.row for c in self.catchments]),
                "col": np.array([c.col for c in self.catchments]),
                "side": np.array([c.side for c in self.catchments]),
                "x0": np.array([c.x0 for c in self.catchments]),
                "y0": np.array([c.y0 for c in self.catchments]),
            },
        )
        tableio.write_csv(
            out / "schools.csv",
            ("id", "catchment_id", "enrollment"),
            {
                "id": np.array([s.id for s in self.schools]),
                "catchment_id": np.array([s.catchment_id for s in self.schools]),
                "enrollment": np.array([s.enrollment for s in self.schools]),
            },
        )
        tableio.write_csv(
            out / "households.csv",
            ("id", "catchment_id", "num_children", "num_elem", "size", "x", "y"),
            {
                "id": np.array([h.id for h in self.households]),
                "catchment_id": np.array([h.catchment_id for h in self.households]),
                "num_children": np.array([h.num_children for h in self.households]),
                "num_elem": np.array([h.num_elem for h in self.households]),
                "size": np.array([h.size for h in self.households]),
                "x": np.array([h.x for h in self.households]),
                "y": np.array([h.y for h in self.households]),
            },
        )
        ind = self.individuals
        school_col = ind["school_id"].astype(float)
        school_col[ind["school_id"] == 0] = np.nan  # blank cell = not enrolled
        tableio.write_csv(
            out / "individuals.csv",
            self.INDIVIDUAL_COLUMNS,
            {**ind, "school_id": school_col},
            int_like=("school_id",),
        )

    @classmethod
    def read_csvs(cls, in_dir: str | Path) -> "PopulationFrame":
        in_dir = Path(in_dir)
        header, rows = tableio.read_csv(in_dir / "catchments.csv")
        catchments = [
            Catchment(int(i), int(r), int(c), float(s))
            for i, r, c, s in zip(
                tableio.column_ints(header, rows, "id"),
                tableio.column_ints(header, rows, "row"),
                tableio.column_ints(header, rows, "col"),
                tableio.column_floats(header, rows, "side"),
            )
        ]
        header, rows = tableio.read_csv(in_dir / "schools.csv")
        ids = tableio.column_ints(header, rows, "id")
        cids = tableio.column_ints(header, rows, "catchment_id")
        enr = tableio.column_ints(header, rows, "enrollment")
        schools = [School(int(i), int(c), int(e)) for i, c, e in zip(ids, cids, enr)]
        header, rows = tableio.read_csv(in_dir / "households.csv")
        households = [
            Household(int(i), int(c), int(nc), int(ne), int(sz), float(x), float(y))
            for i, c, nc, ne, sz, x, y in zip(
                tableio.column_ints(header, rows, "id"),
                tableio.column_ints(header, rows, "catchment_id"),
                tableio.column_ints(header, rows, "num_children"),
                tableio.column_ints(header, rows, "num_elem"),
                tableio.column_ints(header, rows, "size"),
                tableio.column_floats(header, rows, "x"),
                tableio.column_floats(header, rows, "y"),
            )
        ]
        header, rows = tableio.read_csv(in_dir / "individuals.csv")
        school_float = tableio.column_floats(header, rows, "school_id")
        school_int = np.where(np.isnan(school_float), 0, school_float).astype(np.int64)
        individuals = {
            "id": tableio.column_ints(header, rows, "id"),
            "household_id": tableio.column_ints(header, rows, "household_id"),
            "catchment_id": tableio.column_ints(header, rows, "catchment_id"),
            "is_elem_child": tableio.column_ints(header, rows, "is_elem_child"),
            "school_id": school_int,
            "x": tableio.column_floats(header, rows, "x"),
            "y": tableio.column_floats(header, rows, "y"),
        }
        return cls(catchments, schools, households, individuals)


class _UniformBuffer:
    """Blocked scalar uniforms from one generator; order is draw order."""

    __slots__ = ("_gen", "_block", "_buf", "_pos")

    def __init__(self, gen: np.random.Generator, block: int = 4096):
        self._gen = gen
        self._block = block
        self._buf = gen.random(block)
        self._pos = 0

    def take(self) -> float:
        if self._pos == self._block:
            self._buf = self._gen.random(self._block)
            self._pos = 0
        v = self._buf[self._pos]
        self._pos += 1
        return v


def build_catchments(n_catchments: int, side: float) -> list[Catchment]:
    """Tile ``n_catchments`` squares of side ``side`` on a near-square grid."""
    if n_catchments < 1:
        raise InvalidParameterError(f"n_catchments must be >= 1 (got {n_catchments})")
    if not side > 0:
        raise InvalidParameterError(f"catchment side must be > 0 (got {side})")
    ncol = math.ceil(math.sqrt(n_catchments))
    return [
        Catchment(id=i + 1, row=i // ncol, col=i % ncol, side=float(side))
        for i in range(n_catchments)
    ]


def simulate_schools(
    catchments: list[Catchment],
    count_spec: DistributionSpec,
    enrollment_spec: DistributionSpec,
    stream: RngStream,
) -> list[School]:
    """Draw per-catchment school counts and per-school enrollments.

    Both are rounded to the nearest integer and floored at 1, so every
    catchment has at least one school and every school at least one seat.
    """
    schools: list[School] = []
    next_id = 1
    for catchment in catchments:
        count = max(1, int(np.rint(sample(count_spec, 1, stream)[0])))
        enrollments = np.maximum(1, np.rint(sample(enrollment_spec, count, stream))).astype(int)
        for e in enrollments:
            schools.append(School(id=next_id, catchment_id=catchment.id, enrollment=int(e)))
            next_id += 1
    return schools


def simulate_households_with_children(
    catchments: list[Catchment],
    schools: list[School],
    config: PopulationConfig,
    stream: RngStream,
    school_assignments: list[list[int]] | None = None,
) -> list[Household]:
    """Generate child households per catchment until every seat is filled.

    Per household the draw order is fixed: parent structure, number of
    children, one elementary-age flag per child, x, y. Elementary children
    are assigned round-robin over the catchment's schools with remaining
    capacity. The final household is truncated (excess elementary children
    dropped) so filled seats equal capacity exactly.

    When ``school_assignments`` is passed (a list to be filled with one
    school-id list per household, aligned with the returned households), the
    assignment of each household's elementary children is recorded in it.
    """
    cum_couple = np.cumsum(config.prop_children_couple)
    cum_lone = np.cumsum(config.prop_children_lone)
    households: list[Household] = []
    next_id = 1
    for catchment in catchments:
        local_schools = [s for s in schools if s.catchment_id == catchment.id]
        if not local_schools:
            raise SimulationError(
                f"catchment {catchment.id} has no schools", stage="population"
            )
        remaining = [s.enrollment for s in local_schools]
        seats_left = int(sum(remaining))
        rr = 0  # round-robin pointer over local schools
        buf = _UniformBuffer(stream.child(f"children/catchment-{catchment.id}").generator)
        while seats_left > 0:
            couple = buf.take() < config.prop_parent_couple
            cum = cum_couple if couple else cum_lone
            u = buf.take()
            num_children = 1 + int(np.searchsorted(cum, u, side="right"))
            num_children = min(num_children, len(cum))  # guard top edge
            num_elem = sum(buf.take() < config.prop_elem_age for _ in range(num_children))
            if num_elem > seats_left:
                num_children -= num_elem - seats_left  # truncate to fit capacity
                num_elem = seats_left
            x = catchment.x0 + buf.take() * catchment.side
            y = catchment.y0 + buf.take() * catchment.side
            adults = 2 if couple else 1
            households.append(
                Household(
                    id=next_id,
                    catchment_id=catchment.id,
                    num_children=num_children,
                    num_elem=num_elem,
                    size=adults + num_children,
                    x=x,
                    y=y,
                )
            )
            assigned: list[int] = []
            for _ in range(num_elem):
                while remaining[rr] == 0:
                    rr = (rr + 1) % len(local_schools)
                assigned.append(local_schools[rr].id)
                remaining[rr] -= 1
                rr = (rr + 1) % len(local_schools)
            if school_assignments is not None:
                school_assignments.append(assigned)
            seats_left -= num_elem
            next_id += 1
    return households


def simulate_households_without_children(
    catchments: list[Catchment],
    child_households: list[Household],
    config: PopulationConfig,
    stream: RngStream,
    start_id: int,
) -> list[Household]:
    """Add childless households per catchment.

    The count per catchment is ``round(n_child * (1 - p) / p)`` where ``p``
    is ``prop_house_children``, so the with-children share of households
    matches ``p`` in expectation.
    """
    ratio = (1.0 - config.prop_house_children) / config.prop_house_children
    size_spec = DistributionSpec("categorical", {"probs": list(config.prop_house_size)})
    child_counts = {c.id: 0 for c in catchments}
    for h in child_households:
        child_counts[h.catchment_id] += 1
    households: list[Household] = []
    next_id = start_id
    for catchment in catchments:
        n = int(round(child_counts[catchment.id] * ratio))
        if n == 0:
            continue
        sub = stream.child(f"childless/catchment-{catchment.id}")
        sizes = 1 + sample(size_spec, n, sub)
        xs = catchment.x0 + sub.generator.random(n) * catchment.side
        ys = catchment.y0 + sub.generator.random(n) * catchment.side
        for i in range(n):
            households.append(
                Household(
                    id=next_id,
                    catchment_id=catchment.id,
                    num_children=0,
                    num_elem=0,
                    size=int(sizes[i]),
                    x=float(xs[i]),
                    y=float(ys[i]),
                )
            )
            next_id += 1
    return households


def assemble_individuals(
    catchments: list[Catchment],
    schools: list[School],
    households: list[Household],
    school_assignments: dict[int, list[int]],
) -> PopulationFrame:
    """Expand households to one row per person.

    Within a household, adults come first, then elementary children (with
    their school ids in assignment order), then other children. Childless
    households contribute ``size`` adults.
    """
    total = sum(h.size for h in households)
    ids = np.arange(1, total + 1, dtype=np.int64)
    household_id = np.empty(total, dtype=np.int64)
    catchment_id = np.empty(total, dtype=np.int64)
    is_elem = np.zeros(total, dtype=np.int64)
    school_id = np.zeros(total, dtype=np.int64)
    xs = np.empty(total)
    ys = np.empty(total)
    pos = 0
    for h in households:
        n = h.size
        household_id[pos : pos + n] = h.id
        catchment_id[pos : pos + n] = h.catchment_id
        xs[pos : pos + n] = h.x
        ys[pos : pos + n] = h.y
        if h.num_elem > 0:
            assigned = school_assignments.get(h.id, [])
            if len(assigned) != h.num_elem:
                raise SimulationError(
                    f"household {h.id}: {len(assigned)} school assignments for "
                    f"{h.num_elem} elementary children",
                    stage="population",
                )
            adults = n - h.num_children
            start = pos + adults
            is_elem[start : start + h.num_elem] = 1
            school_id[start : start + h.num_elem] = assigned
        pos += n
    individuals = {
        "id": ids,
        "household_id": household_id,
        "catchment_id": catchment_id,
        "is_elem_child": is_elem,
        "school_id": school_id,
        "x": xs,
        "y": ys,
    }
    return PopulationFrame(catchments, schools, households, individuals)


def simulate_population(config: PopulationConfig, stream: RngStream) -> PopulationFrame:
    """Run the full generation chain under one stream."""
    config.validate()
    catchments = build_catchments(config.n_catchments, config.catchment_side)
    schools = simulate_schools(
        catchments, config.school_count_spec, config.enrollment_spec, stream.child("schools")
    )
    assignment_rows: list[list[int]] = []
    child_households = simulate_households_with_children(
        catchments, schools, config, stream, school_assignments=assignment_rows
    )
    assignments = {h.id: a for h, a in zip(child_households, assignment_rows)}
    childless = simulate_households_without_children(
        catchments, child_households, config, stream, start_id=len(child_households) + 1
    )
    frame = assemble_individuals(catchments, schools, child_households + childless, assignments)
    capacity = sum(s.enrollment for s in schools)
    if frame.n_students != capacity:
        raise SimulationError(
            f"enrolled students ({frame.n_students}) != school capacity ({capacity})",
            stage="population",
        )
    return frame
