"""Seeded trial batches for the H2 and Ising studies, with plot-ready tables.

Every experiment expands its configuration into settings, runs the trials of
each setting with seeds ``base_seed .. base_seed + trials - 1`` and reduces the
records in seed order, so tables do not depend on worker scheduling.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import io
import json
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from . import __version__
from .ansatz import build_parity_ladder, build_uccgsd_h2, default_layers
from .hamiltonian import (
    build_h2,
    build_tfim,
    load_h2_reference,
    load_h2_table,
    lowest_eigenpairs,
)
from .mitigation import symmetry_verify, verification_terms
from .optim import OptimizerSpec
from .qsim import NoiseModel, QuantumState
from .solvers import (
    ALGORITHMS,
    RunRecord,
    SolverConfig,
    default_weights,
    eigenstate_amplitudes,
    eigenstate_counts,
    level_parities,
    measure_eigenstate_strings,
    run_solver,
    shot_allocation,
)

EXPERIMENTS = (
    "H2_PEC",
    "TFIM_LEVELS",
    "TFIM_K4",
    "MAGNETIZATION",
    "SCALING_QUBITS",
    "SCALING_ANCILLA",
    "OPTIMIZER_COMPARE",
    "HYPERPARAM_SCAN",
    "ALGO_COMPARE",
    "SHOT_BUDGET",
)
OPTIMIZERS = ("spsa", "bgd", "powell", "ga")
DEFAULT_SHOTS = 15 * 1024
ITERATION_CAPS = {3: 200, 5: 500, 7: 1000, 9: 2500}
HISTOGRAM_BIN = 20
# SPSA learning rate for a 6-parameter ansatz (3-spin ladder, H2 UCCGSD)
BASE_ETA = 0.2
BASE_PARAMS = 6


def default_eta(n_params: int) -> float:
    """SPSA learning rate scaled to keep ``eta * n_params`` at its 6-parameter value.

    The fixed-gain SPSA step has a noise term growing with the parameter
    count, so a rate that is stable for 6 parameters overshoots for 14.
    """
    return BASE_ETA * BASE_PARAMS / max(n_params, 1)


def default_max_iterations(n_spins: int) -> int:
    """Iteration cap per chain length; sizes between the tabulated ones take the next cap up."""
    for size, cap in sorted(ITERATION_CAPS.items()):
        if n_spins <= size:
            return cap
    return max(ITERATION_CAPS.values())


# --- configuration ------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that identifies one experiment batch.

    Attributes:
        experiment: One of ``EXPERIMENTS``.
        n_spins: Chain lengths (Ising studies).
        J: Ising coupling; energies and tolerances are in units of ``J``.
        h_values: Transverse fields, as multiples of ``J``.
        distances: H2 bond lengths in Angstrom.
        algorithms: Solvers to run.
        n_ancilla: Ancilla counts; each gives ``K = 2**n_ancilla`` levels.
        layers: Ansatz layers; ``None`` picks :func:`default_layers`.
        optimizers: Optimizers for ``OPTIMIZER_COMPARE``.
        spsa_settings: ``(eta, epsilon)`` pairs for ``HYPERPARAM_SCAN``.
        eta: SPSA or BGD learning rate; ``None`` gives BGD ``BASE_ETA`` and
            SPSA :func:`default_eta` of the ansatz size.
        epsilon: SPSA perturbation size.
        max_iterations: Iteration cap; ``None`` picks :func:`default_max_iterations`.
        stop_at_convergence: End each trial once it meets the criterion.
        convergence_tol: Allowed loss gap, in units of ``J`` (Hartree for H2).
        shots: Shots per estimate, or ``None`` for exact expectations.
        noise: Apply the depolarizing model below.
        p1: Single-qubit gate error probability.
        p2: Two-qubit gate error probability.
        readout: Symmetric readout flip probability.
        mitigate_readout: Invert the readout confusion in estimates.
        budgets: Base shot budgets ``M0`` for ``SHOT_BUDGET``.
        trials: Seeds per setting.
        base_seed: First seed.
        out: Output directory.
        workers: Trial worker processes.
    """

    experiment: str
    n_spins: tuple[int, ...] = (3,)
    J: float = 1.0
    h_values: tuple[float, ...] = (0.5,)
    distances: tuple[float, ...] = ()
    algorithms: tuple[str, ...] = ("AEVQE",)
    n_ancilla: tuple[int, ...] = (1,)
    layers: int | None = None
    optimizers: tuple[str, ...] = ("spsa",)
    spsa_settings: tuple[tuple[float, float], ...] = ((0.2, 0.1),)
    eta: float | None = None
    epsilon: float = 0.1
    max_iterations: int | None = None
    stop_at_convergence: bool = True
    convergence_tol: float = 0.05
    shots: int | None = DEFAULT_SHOTS
    noise: bool = True
    p1: float = 0.001
    p2: float = 0.01
    readout: float = 0.0
    mitigate_readout: bool = False
    budgets: tuple[int, ...] = (DEFAULT_SHOTS,)
    trials: int = 20
    base_seed: int = 0
    out: str = "results"
    workers: int = 1

    def __post_init__(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        if self.shots is not None and self.shots <= 0:
            raise ValueError("shots must be positive")
        if self.noise and self.shots is None:
            raise ValueError("noise needs a finite shot count")
        for name in ("n_spins", "h_values", "algorithms", "n_ancilla", "optimizers", "spsa_settings", "budgets"):
            if not getattr(self, name):
                raise ValueError(f"{name} must not be empty")
        if self.experiment == "H2_PEC" and not self.distances:
            raise ValueError("distances must not be empty")
        for alg in self.algorithms:
            if alg not in ALGORITHMS:
                raise ValueError(f"unknown algorithm {alg!r}")
        for opt in self.optimizers:
            if opt not in OPTIMIZERS:
                raise ValueError(f"unknown optimizer {opt!r}")
        if any(n < 2 for n in self.n_spins):
            raise ValueError("chains need at least two spins")
        if any(a < 0 for a in self.n_ancilla):
            raise ValueError("n_ancilla must be non-negative")

    def noise_model(self) -> NoiseModel | None:
        if not self.noise:
            return None
        readout = ((self.readout, self.readout),) if self.readout else ()
        return NoiseModel(self.p1, self.p2, readout)

    def seeds(self) -> list[int]:
        return list(range(self.base_seed, self.base_seed + self.trials))

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


_STUDY_DEFAULTS: dict[str, dict[str, Any]] = {
    "H2_PEC": dict(n_spins=(2,), max_iterations=200, stop_at_convergence=False),
    "TFIM_LEVELS": dict(n_spins=(5,), h_values=(0.2, 0.3, 0.4, 0.5), stop_at_convergence=False),
    "TFIM_K4": dict(n_spins=(3,), n_ancilla=(2,), stop_at_convergence=False),
    "MAGNETIZATION": dict(
        n_spins=(3, 5), h_values=(0.2, 0.3, 0.4, 0.5, 1.0, 2.0), stop_at_convergence=False
    ),
    "SCALING_QUBITS": dict(n_spins=(3, 5, 7), noise=False),
    "SCALING_ANCILLA": dict(n_spins=(5,), n_ancilla=(1, 2, 3), noise=False),
    "OPTIMIZER_COMPARE": dict(n_spins=(5,), optimizers=OPTIMIZERS, noise=False),
    "HYPERPARAM_SCAN": dict(
        n_spins=(5,),
        noise=False,
        spsa_settings=(
            (0.05, 0.1),
            (0.1, 0.1),
            (0.2, 0.1),
            (0.3, 0.1),
            (0.5, 0.1),
            (0.2, 0.01),
            (0.2, 0.05),
            (0.2, 0.2),
        ),
    ),
    "ALGO_COMPARE": dict(n_spins=(3,), algorithms=ALGORITHMS, n_ancilla=(1, 2)),
    "SHOT_BUDGET": dict(algorithms=ALGORITHMS, n_ancilla=(1, 2, 3), budgets=(1000, DEFAULT_SHOTS), trials=1),
}


def default_config(experiment: str, **overrides: Any) -> ExperimentConfig:
    """The stock configuration of ``experiment`` with ``overrides`` applied."""
    if experiment not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {experiment!r}")
    values = dict(_STUDY_DEFAULTS[experiment])
    if experiment == "H2_PEC":
        values["distances"] = tuple(row.distance for row in load_h2_table())
    values.update(overrides)
    return ExperimentConfig(experiment=experiment, **values)


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_optional_int(text: str) -> int | None:
    lowered = text.strip().lower()
    return None if lowered in ("", "none", "exact", "auto") else int(lowered)


def _parse_optional_float(text: str) -> float | None:
    lowered = text.strip().lower()
    return None if lowered in ("", "none", "auto") else float(lowered)


def _split(text: str) -> list[str]:
    return [part.strip() for part in text.replace("\n", ",").split(",") if part.strip()]


def _parse_pairs(text: str) -> tuple[tuple[float, float], ...]:
    pairs = []
    for item in _split(text):
        eta, _, eps = item.partition("/")
        if not eps:
            raise ValueError(f"expected eta/epsilon, got {item!r}")
        pairs.append((float(eta), float(eps)))
    return tuple(pairs)


_PARSERS: dict[str, Callable[[str], Any]] = {
    "n_spins": lambda s: tuple(int(x) for x in _split(s)),
    "J": float,
    "h_values": lambda s: tuple(float(x) for x in _split(s)),
    "distances": lambda s: tuple(float(x) for x in _split(s)),
    "algorithms": lambda s: tuple(x.upper() for x in _split(s)),
    "n_ancilla": lambda s: tuple(int(x) for x in _split(s)),
    "layers": _parse_optional_int,
    "optimizers": lambda s: tuple(x.lower() for x in _split(s)),
    "spsa_settings": _parse_pairs,
    "eta": _parse_optional_float,
    "epsilon": float,
    "max_iterations": _parse_optional_int,
    "stop_at_convergence": _parse_bool,
    "convergence_tol": float,
    "shots": _parse_optional_int,
    "noise": _parse_bool,
    "p1": float,
    "p2": float,
    "readout": float,
    "mitigate_readout": _parse_bool,
    "budgets": lambda s: tuple(int(x) for x in _split(s)),
    "trials": int,
    "base_seed": int,
    "out": str,
    "workers": int,
}


def parse_config(text: str) -> ExperimentConfig:
    """Reads an ``[experiment]`` INI section; unset keys keep the experiment's defaults."""
    parser = configparser.ConfigParser()
    parser.optionxform = str
    parser.read_string(text)
    if not parser.has_section("experiment"):
        raise ValueError("config needs an [experiment] section")
    section = dict(parser.items("experiment"))
    name = section.pop("experiment", None)
    if name is None:
        raise ValueError("config must name its experiment")
    overrides = {}
    for key, raw in section.items():
        if key not in _PARSERS:
            raise ValueError(f"unknown config key {key!r}")
        overrides[key] = _PARSERS[key](raw)
    return default_config(name.strip().upper(), **overrides)


def load_config(path: str | Path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def _format_value(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "on" if value else "off"
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ", ".join(f"{a!r}/{b!r}" for a, b in value)
        return ", ".join(_format_value(v) for v in value)
    return str(value)


def format_config(config: ExperimentConfig) -> str:
    """Serializes a configuration so that :func:`parse_config` restores it exactly."""
    lines = ["[experiment]"]
    for f in dataclasses.fields(config):
        lines.append(f"{f.name} = {_format_value(getattr(config, f.name))}")
    return "\n".join(lines) + "\n"


# --- statistics ------------------------------------------------------------------


@dataclass(frozen=True)
class TrialStats:
    """Iteration statistics over the successful trials of one setting.

    ``mean_iterations`` and ``std_iterations`` are ``None`` when nothing
    succeeded.
    """

    success_count: int
    failed_count: int
    mean_iterations: float | None
    std_iterations: float | None
    iterations: tuple[int, ...] = ()

    @property
    def trials(self) -> int:
        return self.success_count + self.failed_count


def _first_hit(record: RunRecord, tol: float) -> int | None:
    if record.target_loss is None:
        return None
    for k, value in enumerate(record.losses, 1):
        if abs(value - record.target_loss) < tol:
            return k
    return None


def summarize(records: Iterable[RunRecord], tol: float | None = None) -> TrialStats:
    """Success counts and iteration statistics.

    Args:
        records: Trials of one setting.
        tol: Re-judge success against this loss gap; by default each
            record's own convergence flag is used. Errored trials always fail.
    """
    iterations = []
    failed = 0
    for rec in records:
        if rec.error is not None and rec.status == "error":
            failed += 1
            continue
        hit = rec.convergence_iteration if tol is None else _first_hit(rec, tol)
        if hit is None or (tol is None and not rec.converged):
            failed += 1
        else:
            iterations.append(int(hit))
    if not iterations:
        return TrialStats(0, failed, None, None, ())
    arr = np.asarray(iterations, dtype=float)
    return TrialStats(len(iterations), failed, float(arr.mean()), float(arr.std()), tuple(iterations))


def _mean_se(values: Sequence[float]) -> tuple[float | None, float | None]:
    arr = np.asarray([v for v in values if v is not None and np.isfinite(v)], dtype=float)
    if arr.size == 0:
        return None, None
    se = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
    return float(arr.mean()), se


# --- magnetization --------------------------------------------------------------------


@dataclass(frozen=True)
class MagnetizationPoint:
    """Average absolute magnetization at one field strength."""

    h_over_J: float
    m_abs: float
    std_err: float

    def __post_init__(self) -> None:
        if not -1e-12 <= self.m_abs <= 1 + 1e-12:
            raise ValueError(f"m_abs must lie in [0, 1], got {self.m_abs}")


def _distribution(data: Any, n_spins: int) -> np.ndarray:
    dim = 1 << n_spins
    if isinstance(data, QuantumState):
        return data.probabilities()
    if isinstance(data, Mapping):
        dist = np.zeros(dim)
        for key, value in data.items():
            if isinstance(key, str):
                if len(key) != n_spins:
                    raise ValueError(f"bitstring {key!r} does not have {n_spins} bits")
                key = int(key, 2)
            dist[int(key)] += float(value)
        return dist
    arr = np.asarray(data)
    if arr.shape != (dim,):
        raise ValueError(f"expected {dim} entries for {n_spins} spins, got shape {arr.shape}")
    if np.iscomplexobj(arr):
        return np.abs(arr) ** 2
    return arr.astype(float)


def magnetization(data: Any, n_spins: int) -> float:
    """Average absolute magnetization ``sum_s |N - 2 s| P(s) / N``.

    ``s`` counts down spins (bits equal to 1).

    Args:
        data: Counts or probabilities (array of length ``2**n_spins`` or a
            mapping from bitstring or index), a ``QuantumState``, or complex
            amplitudes.
        n_spins: Chain length.
    """
    dist = _distribution(data, n_spins)
    total = dist.sum()
    if total <= 0:
        raise ValueError("empty counts")
    down = np.bitwise_count(np.arange(1 << n_spins)).astype(np.int64)
    return float(np.dot(np.abs(n_spins - 2 * down), dist) / (n_spins * total))


def exact_magnetization(n_spins: int, h: float, J: float = 1.0) -> float:
    """Magnetization of the exact Ising ground state."""
    _, vecs = lowest_eigenpairs(build_tfim(n_spins, J, h), 1, n_spins)
    return magnetization(np.abs(vecs[:, 0]) ** 2, n_spins)


# --- tables --------------------------------------------------------------------


@dataclass
class Table:
    """Column names plus rows; cells are numbers, strings or ``None``."""

    columns: tuple[str, ...]
    rows: list[tuple[Any, ...]] = field(default_factory=list)

    def column(self, name: str) -> list[Any]:
        i = self.columns.index(name)
        return [row[i] for row in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow(["" if v is None else repr(v) if isinstance(v, float) else v for v in row])
        return buf.getvalue()


@dataclass
class ExperimentResult:
    """Records grouped by setting, the reduced tables and where they were written."""

    config: ExperimentConfig
    settings: list[dict[str, Any]]
    records: list[list[RunRecord]]
    tables: dict[str, Table]
    paths: dict[str, Path] = field(default_factory=dict)


# --- trials ---------------------------------------------------------------------


def _solver_config(cfg: ExperimentConfig, setting: Mapping[str, Any], n_params: int) -> SolverConfig:
    n = setting.get("n_spins", 2)
    max_iterations = cfg.max_iterations or default_max_iterations(n)
    name = setting.get("optimizer", "spsa")
    eta = setting.get("eta", cfg.eta)
    if eta is None:
        eta = default_eta(n_params) if name == "spsa" else BASE_ETA
    optimizer = OptimizerSpec(
        name=name,
        max_iter=max_iterations,
        eta=eta,
        epsilon=setting.get("epsilon", cfg.epsilon),
    )
    scale = 1.0 if cfg.experiment == "H2_PEC" else abs(cfg.J)
    return SolverConfig(
        algorithm=setting.get("algorithm", "AEVQE"),
        K=2 ** setting.get("n_ancilla", 1),
        shots=cfg.shots,
        noise=cfg.noise_model(),
        max_iterations=max_iterations,
        convergence_tol=cfg.convergence_tol * scale,
        stop_at_convergence=cfg.stop_at_convergence,
        optimizer=optimizer,
        mitigate_readout=cfg.mitigate_readout,
    )


def _problem(cfg: ExperimentConfig, setting: Mapping[str, Any]):
    if cfg.experiment == "H2_PEC":
        table = {round(row.distance, 6): row for row in load_h2_table()}
        key = round(setting["distance"], 6)
        if key not in table:
            raise ValueError(f"no bundled coefficients at d = {setting['distance']}")
        return build_h2(table[key]), build_uccgsd_h2()
    n = setting["n_spins"]
    layers = cfg.layers or default_layers(setting.get("n_ancilla", 1))
    return build_tfim(n, cfg.J, setting.get("h", 0.5) * cfg.J), build_parity_ladder(n, layers)


def _measurement_rng(seed: int) -> np.random.Generator:
    # separate from the solver's own streams so post-processing never shifts them
    return np.random.default_rng([seed, 1])


def _levels_extras(cfg, solver_cfg, setting, H, spectrum, seed) -> dict[str, Any]:
    n = setting["n_spins"]
    hp, px = verification_terms(H, n)
    strings = sorted({t.ops for obs in (H, hp, px) for t in obs.terms if t.ops})
    sectors = level_parities(H, n, solver_cfg.K)
    rng = _measurement_rng(seed)
    est = solver_cfg.estimator()
    raw, verified, acceptance = [], [], []
    for ec, sector in zip(spectrum.eigenstate_circuits, sectors):
        values, _ = measure_eigenstate_strings(ec, strings, est, rng)
        raw.append(sum(t.coefficient.real * (values[t.ops] if t.ops else 1.0) for t in H.terms))
        try:
            v = symmetry_verify(values, H, sector, n)
            verified.append(v.energy)
            acceptance.append(v.acceptance_rate)
        except ValueError:
            verified.append(None)
            acceptance.append(0.0)
    return {"raw": raw, "verified": verified, "acceptance": acceptance, "sectors": sectors}


def _magnetization_extras(cfg, solver_cfg, setting, spectrum, seed) -> dict[str, Any]:
    n = setting["n_spins"]
    ground = spectrum.eigenstate_circuits[0]
    if cfg.shots is None:
        m = magnetization(eigenstate_amplitudes(ground), n)
    else:
        counts = eigenstate_counts(ground, cfg.shots, cfg.noise_model(), _measurement_rng(seed))
        m = magnetization(counts, n) if counts.sum() else None
    return {"m_abs": m, "m_exact": exact_magnetization(n, setting["h"] * cfg.J, cfg.J)}


def run_trial(cfg: ExperimentConfig, setting: Mapping[str, Any], seed: int) -> RunRecord:
    """One seeded trial of one setting; failures come back as records, never raise."""
    try:
        H, ansatz = _problem(cfg, setting)
        solver_cfg = _solver_config(cfg, setting, ansatz.n_params)
        record, spectrum = run_solver(solver_cfg, H, ansatz, seed)
        if spectrum is not None and cfg.experiment == "TFIM_LEVELS":
            record.extras.update(_levels_extras(cfg, solver_cfg, setting, H, spectrum, seed))
        if spectrum is not None and cfg.experiment == "MAGNETIZATION":
            record.extras.update(_magnetization_extras(cfg, solver_cfg, setting, spectrum, seed))
    except Exception as exc:  # a crashed trial counts as failed; the batch goes on
        record = RunRecord(seed=int(seed), config={}, status="error")
        record.error = f"{type(exc).__name__}: {exc}"
        record.extras["traceback"] = traceback.format_exc(limit=5)
    record.extras["setting"] = dict(setting)
    return record


def _run_job(job: tuple[ExperimentConfig, dict[str, Any], int]) -> RunRecord:
    return run_trial(*job)


def settings_for(cfg: ExperimentConfig) -> list[dict[str, Any]]:
    """Expands a configuration into the settings whose trials it runs."""
    exp = cfg.experiment
    if exp == "H2_PEC":
        return [{"distance": d, "n_ancilla": 1} for d in cfg.distances]
    if exp in ("TFIM_LEVELS", "MAGNETIZATION"):
        return [{"n_spins": n, "h": h, "n_ancilla": 1} for n in cfg.n_spins for h in cfg.h_values]
    if exp == "TFIM_K4":
        return [{"n_spins": n, "h": h, "n_ancilla": 2} for n in cfg.n_spins for h in cfg.h_values]
    if exp == "SCALING_QUBITS":
        return [{"n_spins": n, "h": cfg.h_values[0], "n_ancilla": cfg.n_ancilla[0]} for n in cfg.n_spins]
    if exp == "SCALING_ANCILLA":
        return [{"n_spins": cfg.n_spins[0], "h": cfg.h_values[0], "n_ancilla": a} for a in cfg.n_ancilla]
    if exp == "OPTIMIZER_COMPARE":
        return [
            {"n_spins": cfg.n_spins[0], "h": cfg.h_values[0], "n_ancilla": cfg.n_ancilla[0], "optimizer": o}
            for o in cfg.optimizers
        ]
    if exp == "HYPERPARAM_SCAN":
        return [
            {"n_spins": cfg.n_spins[0], "h": cfg.h_values[0], "n_ancilla": cfg.n_ancilla[0], "eta": eta, "epsilon": eps}
            for eta, eps in cfg.spsa_settings
        ]
    if exp == "ALGO_COMPARE":
        return [
            {"n_spins": cfg.n_spins[0], "h": cfg.h_values[0], "n_ancilla": a, "algorithm": alg}
            for a in cfg.n_ancilla
            for alg in cfg.algorithms
        ]
    return []


def _execute(
    jobs: list[tuple[ExperimentConfig, dict[str, Any], int]],
    workers: int,
    progress: Callable[[RunRecord], None] | None = None,
) -> list[RunRecord]:
    if workers <= 1 or len(jobs) <= 1:
        results = map(_run_job, jobs)
        pool = None
    else:
        pool = ProcessPoolExecutor(max_workers=workers)
        results = pool.map(_run_job, jobs, chunksize=1)
    out = []
    try:
        for rec in results:
            if progress is not None:
                progress(rec)
            out.append(rec)
    finally:
        if pool is not None:
            pool.shutdown()
    return out


# --- reductions ------------------------------------------------------------------


def _h2_table(cfg, settings, groups) -> dict[str, Table]:
    refs = {round(r.distance, 6): r for r in load_h2_reference()}
    table = Table(("distance", "E0_exact", "E0", "E0_se", "E0_error", "E1_exact", "E1", "E1_se", "E1_error", "trials_ok"))
    for setting, recs in zip(settings, groups):
        ref = refs.get(round(setting["distance"], 6))
        ok = [r for r in recs if len(r.energies) == 2]
        e0, se0 = _mean_se([r.energies[0] for r in ok])
        e1, se1 = _mean_se([r.energies[1] for r in ok])
        x0 = ref.e0 if ref else (ok[0].exact_energies[0] if ok else None)
        x1 = ref.e1 if ref else (ok[0].exact_energies[1] if ok else None)
        err0 = None if e0 is None or x0 is None else e0 - x0
        err1 = None if e1 is None or x1 is None else e1 - x1
        table.rows.append((setting["distance"], x0, e0, se0, err0, x1, e1, se1, err1, len(ok)))
    return {"h2_pec": table}


def _levels_table(cfg, settings, groups) -> dict[str, Table]:
    K = 2
    cols = ["n_spins", "h_over_J"]
    for j in range(K):
        cols += [f"E{j}_exact", f"E{j}_raw", f"E{j}_raw_se", f"E{j}_sym", f"E{j}_sym_se", f"acceptance{j}", f"acceptance{j}_se"]
    table = Table(tuple(cols + ["trials_ok"]))
    for setting, recs in zip(settings, groups):
        ok = [r for r in recs if "raw" in r.extras]
        row: list[Any] = [setting["n_spins"], setting["h"]]
        exact = _exact_levels(cfg, setting, K)
        for j in range(K):
            raw = _mean_se([r.extras["raw"][j] for r in ok])
            sym = _mean_se([r.extras["verified"][j] for r in ok])
            acc = _mean_se([r.extras["acceptance"][j] for r in ok])
            row += [exact[j], *raw, *sym, *acc]
        table.rows.append(tuple(row + [len(ok)]))
    return {"tfim_levels": table}


def _exact_levels(cfg, setting, K) -> list[float]:
    n = setting["n_spins"]
    vals, _ = lowest_eigenpairs(build_tfim(n, cfg.J, setting["h"] * cfg.J), K, n)
    return [float(v) for v in vals]


def _k4_table(cfg, settings, groups) -> dict[str, Table]:
    table = Table(("n_spins", "h_over_J", "level", "exact", "energy", "std_err", "bias", "trials_ok"))
    for setting, recs in zip(settings, groups):
        K = 2 ** setting["n_ancilla"]
        exact = _exact_levels(cfg, setting, K)
        ok = [r for r in recs if len(r.energies) == K]
        for j in range(K):
            mean, se = _mean_se([r.energies[j] for r in ok])
            bias = None if mean is None else mean - exact[j]
            table.rows.append((setting["n_spins"], setting["h"], j, exact[j], mean, se, bias, len(ok)))
    return {"tfim_k4": table}


def _magnetization_table(cfg, settings, groups) -> dict[str, Table]:
    table = Table(("n_spins", "h_over_J", "m_exact", "m_abs", "std_err", "trials_ok"))
    for setting, recs in zip(settings, groups):
        values = [r.extras.get("m_abs") for r in recs]
        mean, se = _mean_se(values)
        exact = exact_magnetization(setting["n_spins"], setting["h"] * cfg.J, cfg.J)
        n_ok = sum(v is not None for v in values)
        table.rows.append((setting["n_spins"], setting["h"], exact, mean, se, n_ok))
    return {"magnetization": table}


def _stats_row(stats: TrialStats) -> tuple[Any, ...]:
    return (stats.trials, stats.success_count, stats.mean_iterations, stats.std_iterations)


_STATS_COLUMNS = ("trials", "success_count", "mean_iterations", "std_iterations")


def _scaling_table(cfg, settings, groups) -> dict[str, Table]:
    if cfg.experiment == "SCALING_QUBITS":
        table = Table(("n_spins", *_STATS_COLUMNS))
        for setting, recs in zip(settings, groups):
            table.rows.append((setting["n_spins"], *_stats_row(summarize(recs))))
        return {"scaling_qubits": table}
    table = Table(("n_ancilla", "K", "layers", *_STATS_COLUMNS))
    for setting, recs in zip(settings, groups):
        a = setting["n_ancilla"]
        layers = cfg.layers or default_layers(a)
        table.rows.append((a, 2**a, layers, *_stats_row(summarize(recs))))
    return {"scaling_ancilla": table}


def _optimizer_table(cfg, settings, groups) -> dict[str, Table]:
    if cfg.experiment == "OPTIMIZER_COMPARE":
        table = Table(("optimizer", *_STATS_COLUMNS, "mean_evaluations"))
        for setting, recs in zip(settings, groups):
            stats = summarize(recs)
            evals = [r.evaluations for r in recs if r.converged]
            table.rows.append((setting["optimizer"], *_stats_row(stats), _mean_se(evals)[0]))
        return {"optimizer_compare": table}
    table = Table(("eta", "epsilon", *_STATS_COLUMNS))
    for setting, recs in zip(settings, groups):
        table.rows.append((setting["eta"], setting["epsilon"], *_stats_row(summarize(recs))))
    return {"hyperparam_scan": table}


def _algo_tables(cfg, settings, groups) -> dict[str, Table]:
    summary = Table(("n_ancilla", "algorithm", *_STATS_COLUMNS))
    hist = Table(("n_ancilla", "algorithm", "bin_start", "bin_stop", "count"))
    cap = cfg.max_iterations or default_max_iterations(cfg.n_spins[0])
    edges = np.arange(0, cap + HISTOGRAM_BIN, HISTOGRAM_BIN)
    for setting, recs in zip(settings, groups):
        stats = summarize(recs)
        summary.rows.append((setting["n_ancilla"], setting["algorithm"], *_stats_row(stats)))
        counts, _ = np.histogram(stats.iterations, bins=edges)
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            hist.rows.append((setting["n_ancilla"], setting["algorithm"], int(lo), int(hi), int(c)))
    return {"algo_compare": summary, "algo_compare_histogram": hist}


def shot_budget_table(cfg: ExperimentConfig) -> Table:
    """Per-circuit shots from :func:`shot_allocation` for every algorithm, ``K`` and ``M0``."""
    table = Table(("algorithm", "K", "M0", "circuit", "weight", "shots", "total_shots", "variance_ratio"))
    for alg in cfg.algorithms:
        for a in cfg.n_ancilla:
            K = 2**a
            if alg == "WSSVQE":
                weights = default_weights(K)
            elif alg == "MCVQE":
                weights = np.full(K, 1.0 / K)
            else:
                weights = np.ones(1)
            for m0 in cfg.budgets:
                shots = shot_allocation(alg, weights if alg == "WSSVQE" else None, K, m0)
                total = int(sum(shots))
                if alg == "AEVQE":
                    # one circuit carries all K levels at weight 1/K
                    ratio = 1.0
                else:
                    ratio = float(m0 * sum(w**2 / s for w, s in zip(weights, shots)))
                for i, s in enumerate(shots):
                    table.rows.append((alg, K, m0, i, float(weights[i]), int(s), total, ratio))
    return table


_REDUCERS = {
    "H2_PEC": _h2_table,
    "TFIM_LEVELS": _levels_table,
    "TFIM_K4": _k4_table,
    "MAGNETIZATION": _magnetization_table,
    "SCALING_QUBITS": _scaling_table,
    "SCALING_ANCILLA": _scaling_table,
    "OPTIMIZER_COMPARE": _optimizer_table,
    "HYPERPARAM_SCAN": _optimizer_table,
    "ALGO_COMPARE": _algo_tables,
}


def reduce_records(
    cfg: ExperimentConfig, settings: list[dict[str, Any]], groups: list[list[RunRecord]]
) -> dict[str, Table]:
    """Turns per-setting record lists (in seed order) into the experiment's tables."""
    if cfg.experiment == "SHOT_BUDGET":
        return {"shot_budget": shot_budget_table(cfg)}
    return _REDUCERS[cfg.experiment](cfg, settings, groups)


# --- driver ----------------------------------------------------------------------


def write_outputs(result: ExperimentResult, out: str | Path) -> dict[str, Path]:
    """Writes ``records.jsonl``, one CSV per table and ``manifest.json``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}
    records_path = out / "records.jsonl"
    with records_path.open("w") as fh:
        for group in result.records:
            for rec in group:
                fh.write(rec.to_json() + "\n")
    paths["records"] = records_path
    for name, table in result.tables.items():
        path = out / f"{name}.csv"
        path.write_text(table.to_csv())
        paths[name] = path
    manifest = {
        "experiment": result.config.experiment,
        "version": __version__,
        "config": result.config.to_dict(),
        "seeds": result.config.seeds() if result.settings else [],
        "settings": result.settings,
        "tables": {name: p.name for name, p in paths.items() if name != "records"},
        "failed_trials": sum(1 for g in result.records for r in g if r.status == "error"),
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    paths["manifest"] = manifest_path
    return paths


def run_experiment(
    config: ExperimentConfig, write: bool = True, progress: Callable[[RunRecord], None] | None = None
) -> ExperimentResult:
    """Runs every trial of every setting and reduces them into tables.

    Args:
        config: The batch to run.
        write: Write outputs under ``config.out``.
        progress: Called with each finished record, in seed order.
    """
    settings = settings_for(config)
    seeds = config.seeds()
    jobs = [(config, s, seed) for s in settings for seed in seeds]
    flat = _execute(jobs, config.workers, progress)
    groups = [flat[i * len(seeds) : (i + 1) * len(seeds)] for i in range(len(settings))]
    result = ExperimentResult(config, settings, groups, reduce_records(config, settings, groups))
    if write:
        result.paths = write_outputs(result, config.out)
    return result
