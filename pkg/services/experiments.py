"""
Experiments - Orchestrazione degli esperimenti batch
Acceptance ratio, PFJ sulle strategie a confronto, distribuzioni dei livelli
di servizio per numero di mode switch e conteggio dei context switch.
"""

import logging
from collections import Counter
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

from core.errors import (
    AdmissibilityError,
    GenerationError,
    InfeasibleLoModeError,
    InfeasibleTuningError,
    ModelError,
    ValidationError,
)
from core.model import McTaskSet, format_rational, parse_rational
from core.schedulability import AnalysisContext, classic_edfvd_test, feasibility_test, prepare_context
from core.simulator import simulate
from core.tuning import STRATEGIES, uniform_level_envelope
from services.batch_runner import BatchRunner
from services.tracegen import (
    STREAM_TASKSET,
    STREAM_TRACE,
    GeneratorParams,
    WorkloadTrace,
    derive_seed,
    generate_task_set,
    generate_trace,
)

logger = logging.getLogger('experiments')

DEFAULT_STRATEGIES = ["drop", "static", "edfvd"]

# Trap interni: il set e' accettato ma una strategia ha violato la condizione di switch
INTERNAL_ERRORS = (AdmissibilityError, InfeasibleTuningError)


@dataclass
class ExperimentConfig:
    """Configurazione di un esperimento (chiavi del file JSON)"""
    u_bounds: List[Fraction] = field(default_factory=lambda: [Fraction(3, 4), Fraction(4, 5), Fraction(17, 20), Fraction(9, 10)])
    sets_per_bound: int = 100
    horizon: int = 1000000
    overrun_prob: float = 0.1
    strategies: List[str] = field(default_factory=lambda: list(DEFAULT_STRATEGIES))
    master_seed: int = 0
    exact_hi_tasks: Optional[int] = None
    require_schedulable: bool = False
    max_attempts: int = 1000
    retry_budget: int = 100000
    p_cri: float = 0.5
    min_hi_tasks: int = 3
    jobs: int = 1

    def __post_init__(self):
        self.u_bounds = [parse_rational(value, "u_bounds") for value in self.u_bounds]

    def validate(self) -> None:
        if not self.u_bounds:
            raise ValidationError("u_bounds non puo' essere vuoto")
        if self.sets_per_bound <= 0 or self.max_attempts <= 0:
            raise ValidationError("sets_per_bound e max_attempts devono essere positivi")
        if self.horizon <= 0:
            raise ValidationError("horizon deve essere positivo")
        if not 0 <= self.overrun_prob <= 1:
            raise ValidationError("overrun_prob deve appartenere a [0,1]")
        unknown = [name for name in self.strategies if name not in STRATEGIES]
        if unknown or not self.strategies:
            raise ValidationError(f"Strategie non valide: {unknown or self.strategies}")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ExperimentConfig":
        """Costruisce la configurazione ignorando (con warning) le chiavi sconosciute"""
        if not isinstance(data, Mapping):
            raise ValidationError("La configurazione dell'esperimento deve essere un oggetto JSON")
        known = set(cls.__dataclass_fields__)
        for key in sorted(set(data) - known):
            logger.warning(f"Chiave di configurazione sconosciuta ignorata: {key}")
        config = cls(**{key: value for key, value in data.items() if key in known})
        config.validate()
        return config

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["u_bounds"] = [format_rational(value) for value in self.u_bounds]
        return data


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    summary: List[Dict[str, Any]]
    degradation: List[Dict[str, Any]]
    sets: List[Dict[str, Any]]
    failures: List[Dict[str, Any]]

    def row(self, u_bound: Fraction, strategy: str) -> Dict[str, Any]:
        for row in self.summary:
            if row["u_bound"] == float(u_bound) and row["strategy"] == strategy:
                return row
        raise KeyError((u_bound, strategy))

    @property
    def internal_failures(self) -> List[Dict[str, Any]]:
        """Set su cui una strategia ha fatto scattare un trap interno"""
        return [failure for failure in self.failures if failure.get("internal")]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "config": self.config.to_dict(),
            "summary": self.summary,
            "degradation": self.degradation,
            "sets": self.sets,
            "failures": self.failures,
        }


# =================== ACCETTAZIONE ===================

def is_accepted(task_set: McTaskSet, strategy: str) -> bool:
    """
    Test off-line della strategia: EDF-VD classico per `edfvd`, test del
    modo LO e di fattibilita' per le strategie FMC.
    """
    if strategy == "edfvd":
        return classic_edfvd_test(task_set)
    try:
        ctx = prepare_context(task_set)
    except (InfeasibleLoModeError, ModelError):
        return False
    return feasibility_test(ctx, task_set)


# =================== LAVORO PER SINGOLO SET ===================

def _histograms(report_samples: Mapping[int, Counter]) -> Dict[int, Dict[Fraction, int]]:
    return {k: dict(histogram) for k, histogram in report_samples.items()}


def _draw_set(config: ExperimentConfig, group: int, index: int) -> McTaskSet:
    attempts = config.max_attempts if config.require_schedulable else 1
    name = f"u{format_rational(config.u_bounds[group])}_{index}"
    for attempt in range(attempts):
        seed = derive_seed(config.master_seed, group, index, STREAM_TASKSET)
        if attempt:
            seed.append(attempt)
        params = GeneratorParams(
            u_bound=config.u_bounds[group],
            p_cri=config.p_cri,
            min_hi_tasks=config.min_hi_tasks,
            exact_hi_tasks=config.exact_hi_tasks,
            seed=seed,
            retry_budget=config.retry_budget,
        )
        task_set = generate_task_set(params, name=name)
        if not config.require_schedulable or all(is_accepted(task_set, s) for s in config.strategies):
            return task_set
    raise GenerationError(f"Nessun set schedulabile da tutte le strategie in {attempts} tentativi ({name})")


def evaluate_set(config: ExperimentConfig, group: int, index: int) -> Dict[str, Any]:
    """
    Genera un set, applica i test off-line e, se il set e' accettato da
    tutte le strategie, le simula sulla stessa trace.

    Returns:
        dict: Esito con accettazione e metriche per strategia
    """
    u_bound = config.u_bounds[group]
    try:
        task_set = _draw_set(config, group, index)
    except GenerationError as e:
        return {"success": False, "u_bound": float(u_bound), "index": index, "error": str(e)}

    accepted = {strategy: is_accepted(task_set, strategy) for strategy in config.strategies}
    outcome = {
        "success": True,
        "u_bound": float(u_bound),
        "index": index,
        "taskset": task_set.to_dict(),
        "fingerprint": task_set.fingerprint(),
        "accepted": accepted,
        "common": all(accepted.values()),
        "runs": {},
    }
    if not outcome["common"]:
        return outcome

    ctx = prepare_context(task_set)
    trace = generate_trace(
        task_set, config.horizon, config.overrun_prob, derive_seed(config.master_seed, group, index, STREAM_TRACE)
    )
    outcome["trace_fingerprint"] = trace.fingerprint()
    for strategy in config.strategies:
        try:
            report = simulate(task_set, ctx, trace, strategy)
        except INTERNAL_ERRORS as e:
            logger.error(f"Violazione interna su u_B={float(u_bound)}, set {index}, strategia {strategy}: {e}")
            return {
                "success": False,
                "internal": True,
                "u_bound": float(u_bound),
                "index": index,
                "strategy": strategy,
                "fingerprint": outcome["fingerprint"],
                "error": f"{type(e).__name__}: {e}",
            }
        outcome["runs"][strategy] = {
            "pfj": report.pfj,
            "context_switches": report.context_switches,
            "hi_deadline_misses": report.hi_deadline_misses,
            "lo_budget_misses": report.lo_budget_misses,
            "bound_violations": report.bound_violations,
            "mode_switches": len(report.mode_switch_events),
            "samples": _histograms(report.per_k_service_samples),
        }
    return outcome


# =================== AGGREGAZIONE ===================

def quantile_summary(histogram: Mapping[Fraction, int]) -> Dict[str, float]:
    """min, q1, mediana, q3, max di un istogramma valore -> conteggio"""
    values = sorted(histogram)
    expanded = np.repeat(np.array([float(v) for v in values]), [histogram[v] for v in values])
    q1, median, q3 = np.quantile(expanded, [0.25, 0.5, 0.75])
    return {
        "min": float(expanded[0]),
        "q1": float(q1),
        "median": float(median),
        "q3": float(q3),
        "max": float(expanded[-1]),
    }


def _mean(values: Sequence[float]) -> Optional[float]:
    return float(np.mean(values)) if values else None


def aggregate(config: ExperimentConfig, outcomes: Iterable[Dict[str, Any]]) -> ExperimentResult:
    """Riduzione degli esiti per (u_B, strategia); indipendente dall'ordine dei set"""
    outcomes = list(outcomes)
    failures = [o for o in outcomes if not o.get("success")]
    done = [o for o in outcomes if o.get("success")]

    summary = []
    degradation = []
    for u_bound in config.u_bounds:
        group = [o for o in done if o["u_bound"] == float(u_bound)]
        failed = sum(1 for o in failures if o.get("u_bound") == float(u_bound))
        common = [o for o in group if o["common"]]
        for strategy in config.strategies:
            runs = [o["runs"][strategy] for o in common]
            summary.append({
                "u_bound": float(u_bound),
                "strategy": strategy,
                "acceptance_ratio": sum(o["accepted"][strategy] for o in group) / len(group) if group else None,
                "mean_pfj": _mean([run["pfj"] for run in runs]),
                "mean_ctx_switches": _mean([run["context_switches"] for run in runs]),
                "sets": len(group),
                "common_sets": len(common),
                "failed_sets": failed,
                "hi_deadline_misses": sum(run["hi_deadline_misses"] for run in runs),
                "lo_budget_misses": sum(run["lo_budget_misses"] for run in runs),
                "bound_violations": sum(run["bound_violations"] for run in runs),
            })

            degraded: Dict[int, Counter] = {}
            for run in runs:
                for k, histogram in run["samples"].items():
                    if k == 0:
                        continue
                    for value, count in histogram.items():
                        if value < 1:
                            degraded.setdefault(k, Counter())[value] += count
            total = sum(sum(h.values()) for h in degraded.values())
            for k in sorted(degraded):
                row = {"strategy": strategy, "u_bound": float(u_bound), "k": k}
                row.update(quantile_summary(degraded[k]))
                row["job_share"] = sum(degraded[k].values()) / total
                degradation.append(row)

    sets = [
        {key: o.get(key) for key in ("u_bound", "index", "fingerprint", "accepted", "common", "trace_fingerprint")}
        for o in done
    ]
    for failure in failures:
        logger.warning(f"Set fallito (u_B={failure.get('u_bound')}, indice {failure.get('index')}): {failure.get('error')}")
    return ExperimentResult(config, summary, degradation, sets, failures)


def run_experiment(config: ExperimentConfig, runner: Optional[BatchRunner] = None) -> ExperimentResult:
    """
    Esegue l'esperimento: generazione, test off-line, simulazione sui set
    comuni con trace condivise, aggregazione.

    Args:
        config: Configurazione validata
        runner: Pool di esecuzione (default: in base a config.jobs)

    Returns:
        ExperimentResult: Righe di riepilogo e di degradazione
    """
    config.validate()
    runner = runner or BatchRunner({"jobs": config.jobs})
    logger.info(
        f"Esperimento: {len(config.u_bounds)} u_B x {config.sets_per_bound} set, "
        f"strategie {config.strategies}, seme {config.master_seed}"
    )

    tasks = [
        (evaluate_set, (config, group, index))
        for group in range(len(config.u_bounds))
        for index in range(config.sets_per_bound)
    ]
    outcomes = runner.run(tasks)
    internal_names = {error.__name__ for error in INTERNAL_ERRORS}
    for (_, (_, group, index)), outcome in zip(tasks, outcomes):
        if not outcome.get("success"):
            outcome.setdefault("u_bound", float(config.u_bounds[group]))
            outcome.setdefault("index", index)
            outcome.setdefault("internal", outcome.get("error_type") in internal_names)
    result = aggregate(config, outcomes)
    if result.internal_failures:
        logger.error(f"Esperimento con {len(result.internal_failures)} violazioni interne")

    for row in result.summary:
        logger.info(
            f"u_B={row['u_bound']} {row['strategy']}: accettazione={row['acceptance_ratio']}, "
            f"PFJ medio={row['mean_pfj']}, miss HI={row['hi_deadline_misses']}"
        )
    return result


# =================== PROFILO DI DEGRADAZIONE ===================

def _observed_lines(events_by_k: Mapping[int, List[Fraction]], ks: Iterable[int]) -> Dict[int, tuple]:
    lines = {}
    for k in ks:
        lower = min(events_by_k.get(k, [Fraction(1)]))
        upper = max(events_by_k.get(k - 1, [Fraction(1)])) if k > 0 else Fraction(1)
        lines[k] = (lower, upper)
    return lines


def degradation_profile(
    task_set: McTaskSet,
    ctx: AnalysisContext,
    traces: Iterable[WorkloadTrace],
    strategy: str = "uniform",
) -> List[Dict[str, Any]]:
    """
    Campioni executed/C^LO per numero di mode switch con le linee z^k
    (inferiore) e z^{k-1} (superiore).

    Per la strategia uniforme le linee sono analitiche: il livello minimo su
    tutti gli ordini di overrun dopo k switch e il massimo dopo k-1, con una
    riga per ogni k = 0..|HI| anche se nessuna trace lo raggiunge. Per le
    altre strategie sono i livelli osservati agli switch.

    Args:
        task_set: Task set schedulabile con FMC
        ctx: Contesto off-line
        traces: Trace da simulare
        strategy: Strategia di regolazione

    Returns:
        list: Una riga per k con quantili, linee e campioni fuori dai limiti
    """
    samples: Dict[int, Counter] = {}
    suspended: Dict[int, Counter] = {}
    observed: Dict[int, List[Fraction]] = {0: [Fraction(1)]}
    violations = 0

    for trace in traces:
        report = simulate(task_set, ctx, trace, strategy)
        violations += report.bound_violations
        for k, histogram in report.per_k_service_samples.items():
            samples.setdefault(k, Counter()).update(histogram)
        for k, histogram in report.per_k_suspended_samples.items():
            suspended.setdefault(k, Counter()).update(histogram)
        for event in report.mode_switch_events:
            observed.setdefault(event.k, []).extend((event.z_min, event.z_max))

    if strategy == "uniform" and task_set.lo_tasks:
        lower, upper = uniform_level_envelope(ctx, task_set)
        ks = sorted(set(samples) | set(range(len(lower))))
        lines = {k: (lower[min(k, len(lower) - 1)], upper[max(k - 1, 0)] if k else Fraction(1)) for k in ks}
    else:
        ks = sorted(samples)
        lines = _observed_lines(observed, ks)

    rows = []
    for k in ks:
        histogram = samples.get(k, Counter())
        z_lower, z_upper = lines[k]
        row = {
            "k": k,
            "samples": sum(histogram.values()),
            "suspended": sum(suspended.get(k, Counter()).values()),
        }
        if histogram:
            row.update(quantile_summary(histogram))
        else:
            row.update({"min": None, "q1": None, "median": None, "q3": None, "max": None})
        row["z_lower"] = float(z_lower)
        row["z_upper"] = float(z_upper)
        row["out_of_bounds"] = sum(count for value, count in histogram.items() if value < z_lower or value > 1)
        rows.append(row)

    if violations:
        logger.error(f"Profilo {strategy}: {violations} campioni fuori dai limiti")
    return rows


def profile_columns() -> List[str]:
    return ["k", "samples", "suspended", "min", "q1", "median", "q3", "max", "z_lower", "z_upper", "out_of_bounds"]

