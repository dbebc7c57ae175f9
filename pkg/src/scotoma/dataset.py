"""Data model for semisupervised matching datasets.

A dataset holds five blocks of observations: expert-paired training pairs,
unpaired training pools (control/treatment), and the object set the final
matching is produced for.  Pairings never cross blocks: training observations
pair only within the training pools and object observations only within the
object set.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

CONTROL = "c"
TREATMENT = "t"

_SCHEMA_COLUMNS = ("id", "group", "pair_id", "role")


class DatasetError(ValueError):
    """Raised on schema or invariant violations while building a dataset."""


@dataclass(frozen=True, eq=False)
class Observation:
    id: str
    group: str  # "c" or "t"
    x: np.ndarray

    def __post_init__(self):
        if self.group not in (CONTROL, TREATMENT):
            raise DatasetError(f"observation {self.id}: group must be 'c' or 't'")
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 1:
            raise DatasetError(f"observation {self.id}: covariates must be a vector")
        if not np.all(np.isfinite(x)):
            raise DatasetError(f"observation {self.id}: non-finite covariate")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)


@dataclass(frozen=True)
class SemiDataset:
    paired: tuple[tuple[Observation, Observation], ...]
    unpaired_control: tuple[Observation, ...] = ()
    unpaired_treatment: tuple[Observation, ...] = ()
    object_control: tuple[Observation, ...] = ()
    object_treatment: tuple[Observation, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "paired", tuple(tuple(pr) for pr in self.paired))
        for name in ("unpaired_control", "unpaired_treatment",
                     "object_control", "object_treatment"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        for c, t in self.paired:
            if c.group != CONTROL or t.group != TREATMENT:
                raise DatasetError(f"pair ({c.id}, {t.id}): sides must be (control, treatment)")
        for obs, grp in ((self.unpaired_control, CONTROL),
                         (self.unpaired_treatment, TREATMENT),
                         (self.object_control, CONTROL),
                         (self.object_treatment, TREATMENT)):
            for o in obs:
                if o.group != grp:
                    raise DatasetError(f"observation {o.id} in wrong group block")
        all_obs = self.all_observations()
        if not all_obs:
            raise DatasetError("no observations")
        ids = [o.id for o in all_obs]
        if len(ids) != len(set(ids)):
            seen, dup = set(), None
            for i in ids:
                if i in seen:
                    dup = i
                    break
                seen.add(i)
            raise DatasetError(f"duplicate id: {dup}")
        widths = {o.x.shape[0] for o in all_obs}
        if len(widths) != 1:
            raise DatasetError("ragged covariate width across observations")

    def all_observations(self) -> list[Observation]:
        out = []
        for c, t in self.paired:
            out.append(c)
            out.append(t)
        out.extend(self.unpaired_control)
        out.extend(self.unpaired_treatment)
        out.extend(self.object_control)
        out.extend(self.object_treatment)
        return out

    @property
    def p(self) -> int:
        return self.all_observations()[0].x.shape[0]

    @property
    def n_paired(self) -> int:
        return len(self.paired)

    def counts(self) -> dict[str, int]:
        return {
            "n_paired": len(self.paired),
            "n_unpaired_control": len(self.unpaired_control),
            "n_unpaired_treatment": len(self.unpaired_treatment),
            "n_object_control": len(self.object_control),
            "n_object_treatment": len(self.object_treatment),
            "p": self.p,
        }


@dataclass(frozen=True)
class StandardizationState:
    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        scale = np.asarray(self.scale, dtype=float)
        if np.any(scale <= 0):
            raise DatasetError("standardization scale entries must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "scale", scale)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.mean) / self.scale

    def invert(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=float) * self.scale + self.mean


def standardize(d: SemiDataset) -> tuple[SemiDataset, StandardizationState]:
    """Center and scale every covariate to pooled mean 0 and variance 1.

    Statistics are pooled over all five blocks (population standard
    deviation).  Pairing structure is untouched.
    """
    X = np.array([o.x for o in d.all_observations()])
    mean = X.mean(axis=0)
    scale = X.std(axis=0)  # population sd
    bad = np.where(scale == 0)[0]
    if bad.size:
        raise DatasetError(f"zero-variance coordinate: x{bad[0] + 1}")
    state = StandardizationState(mean=mean, scale=scale)

    def tx(o: Observation) -> Observation:
        return Observation(id=o.id, group=o.group, x=state.apply(o.x))

    out = SemiDataset(
        paired=tuple((tx(c), tx(t)) for c, t in d.paired),
        unpaired_control=tuple(tx(o) for o in d.unpaired_control),
        unpaired_treatment=tuple(tx(o) for o in d.unpaired_treatment),
        object_control=tuple(tx(o) for o in d.object_control),
        object_treatment=tuple(tx(o) for o in d.object_treatment),
    )
    return out, state


def load_dataset(path, ignore_columns: tuple[str, ...] = ()) -> SemiDataset:
    """Read a dataset from CSV.

    Expected header: id, group in {c,t}, pair_id (empty = unpaired),
    role in {train, object}, then covariate columns x1..xp.  Rows sharing a
    non-empty pair_id (exactly one control and one treatment, both train)
    become training pairs.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError("no observations") from None
        rows = list(reader)
    header = [h.strip() for h in header]
    for col in _SCHEMA_COLUMNS:
        if col not in header:
            raise DatasetError(f"missing column: {col}")
    cov_cols = []
    for h in header:
        if h in _SCHEMA_COLUMNS or h in ignore_columns:
            continue
        if h.startswith("x") and h[1:].isdigit():
            cov_cols.append(h)
        else:
            raise DatasetError(f"unexpected column: {h}")
    if not cov_cols:
        raise DatasetError("missing covariate columns x1..xp")
    cov_cols.sort(key=lambda h: int(h[1:]))
    expected = [f"x{i + 1}" for i in range(len(cov_cols))]
    if cov_cols != expected:
        raise DatasetError(f"covariate columns must be contiguous x1..xp, got {cov_cols}")
    idx = {h: header.index(h) for h in header}
    if not rows:
        raise DatasetError("no observations")

    seen_ids = set()
    by_pair: dict[str, list[tuple[str, Observation]]] = {}
    singles: dict[str, list[Observation]] = {
        "train_c": [], "train_t": [], "object_c": [], "object_t": []}
    pair_order: list[str] = []
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise DatasetError(f"line {lineno}: ragged row width")
        oid = row[idx["id"]].strip()
        group = row[idx["group"]].strip()
        pair_id = row[idx["pair_id"]].strip()
        role = row[idx["role"]].strip()
        if oid in seen_ids:
            raise DatasetError(f"duplicate id: {oid}")
        seen_ids.add(oid)
        if group not in (CONTROL, TREATMENT):
            raise DatasetError(f"line {lineno}: group must be 'c' or 't'")
        if role not in ("train", "object"):
            raise DatasetError(f"line {lineno}: role must be 'train' or 'object'")
        vals = []
        for col in cov_cols:
            cell = row[idx[col]].strip()
            try:
                vals.append(float(cell))
            except ValueError:
                raise DatasetError(
                    f"line {lineno}: non-numeric covariate {col}={cell!r}") from None
        obs = Observation(id=oid, group=group, x=np.array(vals))
        if pair_id:
            if role == "object":
                raise DatasetError(
                    f"line {lineno}: pair_id on role=object row (object observations "
                    "pair only within the object set)")
            if pair_id not in by_pair:
                pair_order.append(pair_id)
            by_pair.setdefault(pair_id, []).append((group, obs))
        else:
            singles[f"{role}_{group}"].append(obs)

    paired = []
    for pid in pair_order:
        members = by_pair[pid]
        if len(members) != 2:
            raise DatasetError(f"pair_id {pid}: expected 2 members, got {len(members)}")
        groups = sorted(g for g, _ in members)
        if groups != [CONTROL, TREATMENT]:
            raise DatasetError(f"pair_id {pid}: same-group pair")
        c = next(o for g, o in members if g == CONTROL)
        t = next(o for g, o in members if g == TREATMENT)
        paired.append((c, t))

    return SemiDataset(
        paired=tuple(paired),
        unpaired_control=tuple(singles["train_c"]),
        unpaired_treatment=tuple(singles["train_t"]),
        object_control=tuple(singles["object_c"]),
        object_treatment=tuple(singles["object_t"]),
    )


def write_dataset(d: SemiDataset, path) -> None:
    """Inverse of load_dataset, up to float formatting."""
    p = d.p
    header = list(_SCHEMA_COLUMNS) + [f"x{i + 1}" for i in range(p)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)

        def row(o: Observation, pair_id: str, role: str):
            writer.writerow([o.id, o.group, pair_id, role] + [repr(float(v)) for v in o.x])

        for k, (c, t) in enumerate(d.paired, start=1):
            row(c, f"P{k}", "train")
            row(t, f"P{k}", "train")
        for o in d.unpaired_control:
            row(o, "", "train")
        for o in d.unpaired_treatment:
            row(o, "", "train")
        for o in d.object_control:
            row(o, "", "object")
        for o in d.object_treatment:
            row(o, "", "object")
