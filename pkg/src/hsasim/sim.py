"""Two-step Markov simulation of HSA lives across replications.

Seeding contract
----------------
``replication seed = derive_seed(master_seed, replication_index)`` and
``life key = derive_seed(replication seed, life_index)`` (see :mod:`hsasim.rng`).
Within a life's stream, draw 0 picks the source person; for simulated year
``t >= 1`` draw ``2t - 1`` chooses the expense level and draw ``2t`` the
expense value. Results therefore depend only on ``(inputs, master_seed)``,
never on thread count or the order replications run in.

Two engines follow the contract: :func:`simulate_life` steps one life with
a :class:`~hsasim.rng.Stream` (the reference), and the batch engine used by
:func:`run_replication` evaluates all lives of a replication at once with
numpy. They produce identical trajectories.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import zipfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

from .core import (
    DEFAULT_BREAKS,
    N_LEVELS,
    SIMULATION_RANGES,
    AgeRange,
    ExpenseLevel,
    Stratum,
    format_money,
    parse_money,
    stratum_index,
)
from .hsa import PRESET_HSA, START_AGE, HsaParams, LifeTrajectory, simulate_account, step_accounts
from .ingest import Cohort
from .markov import TransitionModel
from .rng import Stream, derive_seed, derive_seeds, index_from_unit, uniforms
from .sampler import DistributionSet, EmptySliceError, InitialLife, InitialPool, initial_pool, sample_initial_life
from .stats import BALANCE_PERCENTILES, StatsSummary, descriptive_stats, mean_sd

logger = logging.getLogger(__name__)

DEFAULT_SNAPSHOT_AGES = (30, 35, 40, 45, 50, 55, 60, 65)
DEFAULT_SEED = 20091231


@dataclass(frozen=True)
class SimulationParams:
    n_lives: int = 10_000
    n_replications: int = 1_000
    hsa: HsaParams = field(default_factory=HsaParams)
    master_seed: int = DEFAULT_SEED
    breaks: tuple[int, int, int] = DEFAULT_BREAKS
    snapshot_ages: tuple[int, ...] = DEFAULT_SNAPSHOT_AGES

    def __post_init__(self):
        if self.n_lives < 1 or self.n_replications < 1:
            raise ValueError("n_lives and n_replications must be at least 1")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must fit in 64 bits")
        object.__setattr__(self, "breaks", tuple(int(b) for b in self.breaks))
        object.__setattr__(self, "snapshot_ages", tuple(sorted(set(int(a) for a in self.snapshot_ages))))

    @property
    def ages(self) -> range:
        return range(START_AGE, START_AGE + self.hsa.years)

    @property
    def simulated_snapshot_ages(self) -> tuple[int, ...]:
        return tuple(a for a in self.snapshot_ages if a in self.ages)

    def to_dict(self) -> dict:
        return {
            "n_lives": self.n_lives,
            "n_replications": self.n_replications,
            "master_seed": self.master_seed,
            "hsa": self.hsa.to_dict(),
            "breaks": [format_money(b) for b in self.breaks],
            "snapshot_ages": list(self.snapshot_ages),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> SimulationParams:
        base = cls()
        return cls(
            n_lives=int(d.get("n_lives", base.n_lives)),
            n_replications=int(d.get("n_replications", base.n_replications)),
            hsa=HsaParams.from_dict(d.get("hsa", {})),
            master_seed=int(d.get("master_seed", base.master_seed)),
            breaks=tuple(parse_money(str(b)) for b in d["breaks"]) if "breaks" in d else base.breaks,
            snapshot_ages=tuple(d.get("snapshot_ages", base.snapshot_ages)),
        )


PRESET_PARAMS = SimulationParams(n_lives=10_000, n_replications=1_000, hsa=PRESET_HSA)


def _range_index(age: int) -> int:
    r = AgeRange.containing(age)
    if r is None or r not in SIMULATION_RANGES:
        raise ValueError(f"age {age} has no simulation stratum")
    return SIMULATION_RANGES.index(r)


def predict_next_level(model: TransitionModel, stratum: Stratum, prev2, rng: Stream) -> ExpenseLevel:
    """Categorical draw from the ``(prev2[0], prev2[1])`` row of the stratum's matrix."""
    k, m = prev2
    cum = model.cumulative()[stratum.index, int(k) * N_LEVELS + int(m)]
    u = rng.random()
    return ExpenseLevel(int(np.count_nonzero(u >= cum[:-1])))


def simulate_life(model: TransitionModel, distributions: DistributionSet, initial: InitialLife,
                  params: SimulationParams, rng: Stream) -> LifeTrajectory:
    """Simulate one life from age 25, stepping ``rng`` sequentially.

    Year one uses the initial expense. Each later year uses the stratum of
    the age being simulated, predicts the level from the two previous levels
    and samples the expense within that level.
    """
    levels = [int(initial.history[1])]

    def path() -> Iterator[int]:
        h1, h2 = initial.history
        yield initial.first_expense
        for t in range(1, params.hsa.years):
            stratum = Stratum(initial.sex, SIMULATION_RANGES[_range_index(START_AGE + t)])
            level = predict_next_level(model, stratum, (h1, h2), rng)
            levels.append(int(level))
            yield distributions.sample(stratum, level, rng)
            h1, h2 = h2, level

    traj = simulate_account(initial, path(), params.hsa)
    return replace(traj, levels=tuple(levels))


@dataclass(frozen=True, eq=False)
class LifeSummaries:
    """Per-life results of one replication as parallel arrays."""

    sex: np.ndarray  # int8 codes
    source: np.ndarray  # int64 index into the initial pool
    expense_total: np.ndarray  # int64 cents
    hsa_total: np.ndarray
    ci_total: np.ndarray
    final_balance: np.ndarray
    ci_count: np.ndarray  # int64
    deposits_total: int
    snapshot_ages: tuple[int, ...] = ()
    snapshots: np.ndarray | None = None  # (n, len(snapshot_ages)) balances

    FIELDS = ("sex", "source", "expense_total", "hsa_total", "ci_total", "final_balance", "ci_count")

    def __len__(self) -> int:
        return int(self.sex.size)

    def snapshot(self, age: int) -> np.ndarray:
        if self.snapshots is None or age not in self.snapshot_ages:
            raise KeyError(f"no balance snapshot at age {age}")
        return self.snapshots[:, self.snapshot_ages.index(age)]

    def slim(self) -> LifeSummaries:
        return replace(self, snapshots=None, snapshot_ages=(), source=np.zeros(0, dtype=np.int64))

    def arrays(self) -> dict[str, np.ndarray]:
        out = {f: getattr(self, f) for f in self.FIELDS}
        out["deposits_total"] = np.array(self.deposits_total, dtype=np.int64)
        out["snapshot_ages"] = np.array(self.snapshot_ages, dtype=np.int64)
        if self.snapshots is not None:
            out["snapshots"] = self.snapshots
        return out

    @classmethod
    def from_arrays(cls, d: Mapping[str, np.ndarray]) -> LifeSummaries:
        return cls(
            **{f: np.asarray(d[f]) for f in cls.FIELDS},
            deposits_total=int(d["deposits_total"]),
            snapshot_ages=tuple(int(a) for a in d["snapshot_ages"]),
            snapshots=np.asarray(d["snapshots"]) if "snapshots" in d else None,
        )


@dataclass(frozen=True, eq=False)
class YearTrace:
    """Per-life, per-year arrays of shape ``(n_lives, years)`` for audits."""

    levels: np.ndarray
    strata: np.ndarray
    expense: np.ndarray
    balance_before: np.ndarray
    hsa_paid: np.ndarray
    insurance_paid: np.ndarray
    balance_after: np.ndarray


@dataclass(frozen=True, eq=False)
class ReplicationResult:
    index: int
    seed: int
    lives: LifeSummaries
    snapshot_stats: Mapping[int, StatsSummary]
    ci_counts: np.ndarray  # lives by number of insurance years, length years + 1
    ci_amounts: np.ndarray  # insurance paid by those lives, cents
    coverage: Mapping[str, StatsSummary]  # "balance", "hsa", "ci"
    totals: Mapping[str, int]
    trace: YearTrace | None = None

    @property
    def n_lives(self) -> int:
        return int(self.ci_counts.sum())

    def flat_summary(self) -> dict[str, float | None]:
        out: dict[str, float | None] = {f"total.{k}": float(v) for k, v in self.totals.items()}
        for age, s in self.snapshot_stats.items():
            out.update({f"balance.{age}.{k}": v for k, v in s.cells().items()})
        for col, s in self.coverage.items():
            out.update({f"coverage.{col}.{k}": v for k, v in s.cells().items()})
        for c, (n, amt) in enumerate(zip(self.ci_counts.tolist(), self.ci_amounts.tolist())):
            out[f"ci.{c}.n"] = float(n)
            out[f"ci.{c}.amount"] = float(amt)
        return out


def summarize(index: int, seed: int, lives: LifeSummaries, params: SimulationParams,
              trace: YearTrace | None = None) -> ReplicationResult:
    years = params.hsa.years
    counts = np.bincount(lives.ci_count, minlength=years + 1).astype(np.int64)
    amounts = np.zeros(years + 1, dtype=np.int64)
    np.add.at(amounts, lives.ci_count, lives.ci_total)
    snaps = {}
    if lives.snapshots is not None:
        snaps = {a: descriptive_stats(lives.snapshot(a), True, BALANCE_PERCENTILES) for a in lives.snapshot_ages}
    coverage = {
        "balance": descriptive_stats(lives.final_balance, True, BALANCE_PERCENTILES),
        "hsa": descriptive_stats(lives.hsa_total, True, BALANCE_PERCENTILES),
        "ci": descriptive_stats(lives.ci_total, True, BALANCE_PERCENTILES),
    }
    totals = {
        "expense": int(lives.expense_total.sum()),
        "hsa": int(lives.hsa_total.sum()),
        "ci": int(lives.ci_total.sum()),
        "deposits": int(lives.deposits_total) * len(lives),
        "final_balance": int(lives.final_balance.sum()),
    }
    return ReplicationResult(index, seed, lives, snaps, counts, amounts, coverage, totals, trace)


def lives_from_trajectories(trajs: Sequence[LifeTrajectory], params: SimulationParams,
                            sources: Sequence[int] | None = None) -> LifeSummaries:
    ages = params.simulated_snapshot_ages
    if not trajs:
        raise ValueError("no trajectories")
    deposits = {t.deposits_total for t in trajs}
    if len(deposits) != 1:
        raise ValueError("trajectories disagree on deposits")
    return LifeSummaries(
        sex=np.array([t.sex.code for t in trajs], dtype=np.int8),
        source=np.array(sources if sources is not None else [-1] * len(trajs), dtype=np.int64),
        expense_total=np.array([t.expense_total for t in trajs], dtype=np.int64),
        hsa_total=np.array([t.hsa_total for t in trajs], dtype=np.int64),
        ci_total=np.array([t.ci_total for t in trajs], dtype=np.int64),
        final_balance=np.array([t.final_balance for t in trajs], dtype=np.int64),
        ci_count=np.array([t.ci_use_count for t in trajs], dtype=np.int64),
        deposits_total=deposits.pop(),
        snapshot_ages=ages,
        snapshots=np.array([[t.balance_at_age(a) for a in ages] for t in trajs], dtype=np.int64).reshape(
            len(trajs), len(ages)
        ),
    )


def replication_from_trajectories(index: int, trajs: Sequence[LifeTrajectory], params: SimulationParams,
                                  seed: int = 0) -> ReplicationResult:
    """Summarise hand-built or scalar-engine trajectories like a simulated replication."""
    return summarize(index, seed, lives_from_trajectories(trajs, params), params)


def _check_inputs(model: TransitionModel, distributions: DistributionSet, params: SimulationParams):
    if tuple(model.breaks) != params.breaks or tuple(distributions.breaks) != params.breaks:
        raise ValueError("model, distributions and parameters use different level break points")


def _simulate_batch(cum: np.ndarray, dists: DistributionSet, pool: InitialPool, keys: np.ndarray,
                    params: SimulationParams, record_trace: bool) -> tuple[LifeSummaries, YearTrace | None]:
    n = keys.size
    years = params.hsa.years
    cap = params.hsa.annual_cap

    src = index_from_unit(uniforms(keys, 0), len(pool))
    sex = pool.sex_codes[src].astype(np.int64)
    h1 = pool.prev_level[src].astype(np.int64)
    h2 = pool.last_level[src].astype(np.int64)
    expense = pool.last_expense[src].astype(np.int64)

    balance = np.zeros(n, dtype=np.int64)
    hsa_total = np.zeros(n, dtype=np.int64)
    ci_total = np.zeros(n, dtype=np.int64)
    exp_total = np.zeros(n, dtype=np.int64)
    ci_count = np.zeros(n, dtype=np.int64)
    snap_ages = params.simulated_snapshot_ages
    snapshots = np.zeros((n, len(snap_ages)), dtype=np.int64)
    if record_trace:
        tr = {k: np.zeros((n, years), dtype=np.int64) for k in
              ("levels", "strata", "expense", "balance_before", "hsa_paid", "insurance_paid", "balance_after")}
    level = h2
    for t in range(years):
        age = START_AGE + t
        s = stratum_index(sex, age)
        if t > 0:
            row_cum = cum[s, h1 * N_LEVELS + h2]
            level = np.count_nonzero(uniforms(keys, 2 * t - 1)[:, None] >= row_cum[:, :-1], axis=1)
            size = dists.pool_size[s, level]
            if np.any(size == 0):
                bad = np.flatnonzero(size == 0)[0]
                raise EmptySliceError(
                    f"no values for level {ExpenseLevel(int(level[bad])).label} in stratum index {int(s[bad])} "
                    "or any fallback pool"
                )
            pick = index_from_unit(uniforms(keys, 2 * t), size)
            expense = dists.pool_values[dists.pool_start[s, level] + pick]
            h1, h2 = h2, level
        balance = balance + params.hsa.deposit_for(t)
        before = balance
        hsa, ci, balance = step_accounts(balance, expense, cap)
        hsa_total += hsa
        ci_total += ci
        exp_total += expense
        ci_count += ci > 0
        if age in snap_ages:
            snapshots[:, snap_ages.index(age)] = balance
        if record_trace:
            for k, v in (("levels", level), ("strata", s), ("expense", expense), ("balance_before", before),
                         ("hsa_paid", hsa), ("insurance_paid", ci), ("balance_after", balance)):
                tr[k][:, t] = v
    lives = LifeSummaries(
        sex=sex.astype(np.int8), source=src, expense_total=exp_total, hsa_total=hsa_total, ci_total=ci_total,
        final_balance=balance, ci_count=ci_count, deposits_total=params.hsa.deposits_total,
        snapshot_ages=snap_ages, snapshots=snapshots,
    )
    return lives, (YearTrace(**tr) if record_trace else None)


def _pool_of(source: Cohort | InitialPool, params: SimulationParams) -> InitialPool:
    return source if isinstance(source, InitialPool) else initial_pool(source, breaks=params.breaks)


def run_replication(model: TransitionModel, distributions: DistributionSet, cohort: Cohort | InitialPool,
                    params: SimulationParams, replication_index: int, record_trace: bool = False,
                    engine: str = "batch") -> ReplicationResult:
    """Simulate ``params.n_lives`` fresh lives for one replication.

    ``engine="scalar"`` runs the one-life-at-a-time reference path; it is
    slow and meant for cross-checking the batch engine.
    """
    _check_inputs(model, distributions, params)
    pool = _pool_of(cohort, params)
    seed = derive_seed(params.master_seed, replication_index)
    if engine == "batch":
        keys = derive_seeds(seed, params.n_lives)
        lives, trace = _simulate_batch(model.cumulative(), distributions, pool, keys, params, record_trace)
        return summarize(replication_index, seed, lives, params, trace)
    if engine != "scalar":
        raise ValueError(f"unknown engine {engine!r}")
    trajs, sources = [], []
    for i in range(params.n_lives):
        rng = Stream(derive_seed(seed, i))
        src = rng.integers(len(pool))
        trajs.append(simulate_life(model, distributions, pool.life(src), params, rng))
        sources.append(src)
    return summarize(replication_index, seed, lives_from_trajectories(trajs, params, sources), params)


@dataclass(frozen=True, eq=False)
class StudyResult:
    params: SimulationParams
    replications: tuple[ReplicationResult, ...]
    metadata: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        idx = [r.index for r in self.replications]
        if idx != list(range(len(idx))):
            raise ValueError("replications must be indexed 0..n-1 in order")

    @property
    def n_replications(self) -> int:
        return len(self.replications)

    def aggregates(self) -> dict[str, tuple[float | None, float | None, int]]:
        """Cross-replication ``(mean, sd, n)`` of every flat statistic.

        Insurance-usage rows absent from a replication count as zero lives.
        """
        flats = [r.flat_summary() for r in self.replications]
        keys = sorted(set().union(*flats))
        out = {}
        for k in keys:
            default = 0.0 if k.startswith("ci.") else None
            out[k] = mean_sd([f.get(k, default) for f in flats])
        return out

    def pooled(self, name: str) -> np.ndarray:
        """Concatenate a per-life field over all replications."""
        return np.concatenate([getattr(r.lives, name) for r in self.replications])

    def totals(self) -> dict[str, int]:
        keys = self.replications[0].totals.keys()
        return {k: sum(int(r.totals[k]) for r in self.replications) for k in keys}

    def fingerprint(self) -> str:
        """SHA-256 over all per-life arrays and summaries; equal iff results are bit-identical."""
        h = hashlib.sha256()
        h.update(json.dumps(self.params.to_dict(), sort_keys=True).encode())
        for r in self.replications:
            h.update(f"{r.index}:{r.seed}".encode())
            for name, arr in sorted(r.lives.arrays().items()):
                h.update(name.encode())
                h.update(np.ascontiguousarray(arr).tobytes())
            h.update(json.dumps(r.flat_summary(), sort_keys=True).encode())
        return h.hexdigest()


def run_study(model: TransitionModel, distributions: DistributionSet, cohort: Cohort | InitialPool,
              params: SimulationParams, threads: int = 1, record_trace: bool = False,
              on_replication: Callable[[ReplicationResult], None] | None = None,
              keep_lives: str = "full") -> StudyResult:
    """Run all replications, merged in index order whatever the thread count.

    ``keep_lives`` controls memory: ``"full"`` keeps every per-life array,
    ``"slim"`` drops balance snapshots after summarising (tables are still
    complete; the raw snapshots can be persisted via ``on_replication``).
    """
    if threads < 1:
        raise ValueError("threads must be at least 1")
    if keep_lives not in ("full", "slim"):
        raise ValueError("keep_lives must be 'full' or 'slim'")
    _check_inputs(model, distributions, params)
    pool = _pool_of(cohort, params)
    model.cumulative()  # build the shared cache before workers start

    def one(i: int) -> ReplicationResult:
        return run_replication(model, distributions, pool, params, i, record_trace)

    results = []
    with ThreadPoolExecutor(max_workers=threads) as ex:
        for rep in ex.map(one, range(params.n_replications)):
            if on_replication is not None:
                on_replication(rep)
            if keep_lives == "slim":
                rep = replace(rep, lives=rep.lives.slim(), trace=None)
            results.append(rep)
            logger.debug("replication %d done", rep.index)
    return StudyResult(params, tuple(results), {"pool_size": len(pool)})


# -- persistence -----------------------------------------------------------------------------------------------

_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def write_npz(path, arrays: Mapping[str, np.ndarray]) -> None:
    """Like ``np.savez`` but byte-reproducible (fixed member timestamps and order)."""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arrays[name]), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", _ZIP_EPOCH), buf.getvalue())


def replication_file(outdir, index: int) -> Path:
    return Path(outdir) / "replications" / f"rep_{index:05d}.npz"


def save_replication(outdir, rep: ReplicationResult) -> Path:
    path = replication_file(outdir, rep.index)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_npz(path, {**rep.lives.arrays(), "index": np.array(rep.index), "seed": np.array(rep.seed, dtype=np.uint64)})
    return path


def load_replication(path, params: SimulationParams, slim: bool = False) -> ReplicationResult:
    with np.load(path, allow_pickle=False) as d:
        lives = LifeSummaries.from_arrays(d)
        index, seed = int(d["index"]), int(d["seed"])
    rep = summarize(index, seed, lives, params)
    return replace(rep, lives=lives.slim()) if slim else rep


def study_summary(study: StudyResult) -> dict:
    """JSON-ready parameters, per-replication flat statistics and their cross-replication moments."""
    return {
        "params": study.params.to_dict(),
        "metadata": dict(study.metadata),
        "replications": [
            {"index": r.index, "seed": str(r.seed), "statistics": r.flat_summary()} for r in study.replications
        ],
        "aggregates": {k: {"mean": m, "sd": s, "n": n} for k, (m, s, n) in study.aggregates().items()},
    }


def save_study(outdir, study: StudyResult, write_replications: bool = True) -> list[Path]:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if write_replications:
        written += [save_replication(out, r) for r in study.replications]
    p = out / "study.json"
    p.write_text(json.dumps(study_summary(study), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return [p, *written]


def load_study(outdir, slim: bool = False) -> StudyResult:
    """Rebuild a study from ``study.json`` parameters and the per-replication raw arrays."""
    out = Path(outdir)
    summary = json.loads((out / "study.json").read_text(encoding="utf-8"))
    params = SimulationParams.from_dict(summary["params"])
    files = sorted((out / "replications").glob("rep_*.npz"))
    if len(files) != params.n_replications:
        raise ValueError(f"expected {params.n_replications} replication files in {out}, found {len(files)}")
    reps = tuple(load_replication(f, params, slim) for f in files)
    return StudyResult(params, reps, summary.get("metadata", {}))
