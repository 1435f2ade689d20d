"""
Tracegen - Generazione casuale di task set e trace di carico pre-generate
Tutta la casualita' passa da numpy PCG64 con seme esplicito: stessi parametri
e stesso seme producono lo stesso task set e la stessa trace.
"""

import hashlib
import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Dict, Iterator, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from core.errors import GenerationError, TraceMismatchError, ValidationError
from core.model import Criticality, McTask, McTaskSet, compute_utilizations, format_rational, parse_rational

logger = logging.getLogger('tracegen')

RNG_ALGORITHM = "PCG64"
WINDOW = Fraction(1, 20)
SLACK_DENOMINATOR = 1000

# Stream dei semi derivati
STREAM_TASKSET = 0
STREAM_TRACE = 1

Seed = Union[int, Sequence[int]]


def make_rng(seed: Seed) -> np.random.Generator:
    """Generatore PCG64 da un seme intero o da una sequenza di interi"""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def derive_seed(master_seed: int, group: int, index: int, stream: int) -> List[int]:
    """
    Seme derivato per un sotto-esperimento.

    La lista viene passata a numpy SeedSequence, che la mescola con il suo
    hash; la stessa quadrupla rigenera lo stesso flusso anche in isolamento.
    """
    return [int(master_seed), int(group), int(index), int(stream)]


@dataclass
class GeneratorParams:
    """Parametri del generatore di task set"""
    u_bound: Fraction
    period_range: Tuple[int, int] = (20, 150)
    u_lo_range: Tuple[float, float] = (0.05, 0.15)
    ratio_range: Tuple[float, float] = (2.0, 3.0)
    p_cri: float = 0.5
    min_hi_tasks: int = 3
    exact_hi_tasks: Optional[int] = None
    seed: Seed = 0
    retry_budget: int = 100000
    restart_after: int = 1000

    def __post_init__(self):
        self.u_bound = parse_rational(self.u_bound, "u_bound")

    def validate(self) -> None:
        low, high = self.period_range
        if not 0 < low <= high:
            raise ValidationError(f"period_range non valido: {self.period_range}")
        for label, (a, b) in (("u_lo_range", self.u_lo_range), ("ratio_range", self.ratio_range)):
            if not 0 < a <= b:
                raise ValidationError(f"{label} non valido: {(a, b)}")
        if self.ratio_range[0] <= 1:
            raise ValidationError("ratio_range deve stare sopra 1 (C^HI > C^LO)")
        if not 0 <= self.p_cri <= 1:
            raise ValidationError(f"p_cri deve appartenere a [0,1], ricevuto {self.p_cri}")
        if self.exact_hi_tasks is not None and self.exact_hi_tasks < 1:
            raise ValidationError("exact_hi_tasks deve essere positivo")
        if not 0 < self.u_bound <= 1:
            raise ValidationError(f"u_bound deve appartenere a (0,1], ricevuto {self.u_bound}")
        if self.retry_budget <= 0:
            raise ValidationError("retry_budget deve essere positivo")


def _set_metric(u_lo_lo: Fraction, u_hi_lo: Fraction, u_hi_hi: Fraction) -> Fraction:
    return max(u_lo_lo + u_hi_lo, u_hi_hi)


def generate_task_set(params: GeneratorParams, name: str = "") -> McTaskSet:
    """
    Genera un task set aggiungendo un task alla volta.

    Si ferma quando u_B - 0.05 <= max(u_LO^LO + u_HI^LO, u_HI^HI) <= u_B e i
    task HI sono abbastanza. Un candidato che sfora u_B viene scartato; dopo
    `restart_after` scarti consecutivi il set ricomincia da capo.

    Args:
        params: Parametri del generatore
        name: Etichetta del task set

    Returns:
        McTaskSet: Task set con WCET interi e aggregati ricalcolati
    """
    params.validate()
    rng = make_rng(params.seed)
    required_hi = params.exact_hi_tasks or params.min_hi_tasks

    tasks: List[McTask] = []
    u_lo_lo = u_hi_lo = u_hi_hi = Fraction(0)
    hi_count = 0
    consecutive_rejects = 0

    for _ in range(params.retry_budget):
        period = int(rng.integers(params.period_range[0], params.period_range[1] + 1))
        utilization = float(rng.uniform(*params.u_lo_range))
        is_hi = bool(rng.random() < params.p_cri)
        ratio = float(rng.uniform(*params.ratio_range))

        wcet_lo = math.floor(utilization * period)
        wcet_hi = math.floor(utilization * ratio * period) if is_hi else None
        accepted = wcet_lo > 0
        if accepted and is_hi:
            accepted = wcet_lo < wcet_hi <= period
            if params.exact_hi_tasks is not None and hi_count >= params.exact_hi_tasks:
                accepted = False

        if accepted:
            u_lo = Fraction(wcet_lo, period)
            if is_hi:
                candidate = (u_lo_lo, u_hi_lo + u_lo, u_hi_hi + Fraction(wcet_hi, period))
            else:
                candidate = (u_lo_lo + u_lo, u_hi_lo, u_hi_hi)
            accepted = _set_metric(*candidate) <= params.u_bound

        if not accepted:
            consecutive_rejects += 1
            if consecutive_rejects >= params.restart_after:
                tasks, hi_count, consecutive_rejects = [], 0, 0
                u_lo_lo = u_hi_lo = u_hi_hi = Fraction(0)
            continue

        consecutive_rejects = 0
        u_lo_lo, u_hi_lo, u_hi_hi = candidate
        task_id = f"t{len(tasks) + 1}"
        if is_hi:
            hi_count += 1
            tasks.append(McTask(task_id, Fraction(period), Criticality.HI, Fraction(wcet_lo), Fraction(wcet_hi)))
        else:
            tasks.append(McTask(task_id, Fraction(period), Criticality.LO, Fraction(wcet_lo)))

        if _set_metric(u_lo_lo, u_hi_lo, u_hi_hi) >= params.u_bound - WINDOW and hi_count >= required_hi:
            return compute_utilizations(tasks, name=name)

    logger.warning(f"Generazione fallita per u_B={params.u_bound}, seme {params.seed}")
    raise GenerationError(
        f"Budget di {params.retry_budget} candidati esaurito (u_B={params.u_bound}, seme={params.seed})"
    )


# =================== TRACE ===================

class TraceJob(NamedTuple):
    task: str
    arrival: Fraction
    demand: Fraction
    overrun: bool


@dataclass
class WorkloadTrace:
    """Arrivi, domande di esecuzione e overrun generati prima della simulazione"""
    horizon: Fraction
    jobs: List[TraceJob]
    overrun_prob: float = 0.0
    seed: Optional[Seed] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def fingerprint(self) -> str:
        """Impronta sha256 di orizzonte e job (esclusi i metadati)"""
        payload = {"horizon": format_rational(self.horizon), "jobs": self.to_dict()["jobs"]}
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "horizon": format_rational(self.horizon),
            "metadata": self.metadata,
            "jobs": [
                {
                    "task": job.task,
                    "arrival": format_rational(job.arrival),
                    "demand": format_rational(job.demand),
                    "overrun": job.overrun,
                }
                for job in self.jobs
            ],
        }


def trace_from_dict(data: Mapping[str, Any]) -> WorkloadTrace:
    """Ricostruisce una trace dalla forma JSON"""
    if not isinstance(data, Mapping) or "horizon" not in data or "jobs" not in data:
        raise ValidationError("Formato trace non valido: servono 'horizon' e 'jobs'")
    metadata = dict(data.get("metadata") or {})
    jobs = []
    for index, item in enumerate(data["jobs"]):
        try:
            jobs.append(TraceJob(
                task=str(item["task"]),
                arrival=parse_rational(item["arrival"], f"jobs[{index}].arrival"),
                demand=parse_rational(item["demand"], f"jobs[{index}].demand"),
                overrun=bool(item.get("overrun", False)),
            ))
        except (KeyError, TypeError) as e:
            raise ValidationError(f"Job {index} della trace non valido: {e}")
    return WorkloadTrace(
        horizon=parse_rational(data["horizon"], "horizon"),
        jobs=jobs,
        overrun_prob=float(metadata.get("overrun_prob") or 0.0),
        seed=metadata.get("seed"),
        metadata=metadata,
    )


def _job_order(job: TraceJob) -> Tuple[Fraction, str]:
    return job.arrival, job.task


def _arrivals(task: McTask, horizon: Fraction, rng: np.random.Generator, slack: float) -> List[Fraction]:
    if slack <= 0:
        count = math.ceil(horizon / task.period)
        return [task.period * n for n in range(count)]

    arrivals = []
    current = Fraction(0)
    while current < horizon:
        arrivals.append(current)
        delay = float(rng.uniform(0.0, slack)) * float(task.period)
        current += task.period + Fraction(round(delay * SLACK_DENOMINATOR), SLACK_DENOMINATOR)
    return arrivals


def generate_trace(
    task_set: McTaskSet,
    horizon: Union[int, Fraction],
    overrun_prob: float,
    seed: Seed,
    sporadic_slack: float = 0.0,
) -> WorkloadTrace:
    """
    Genera la trace: arrivi a distanza minima (o con ritardo sporadico),
    overrun indipendenti con probabilita' `overrun_prob` sui soli job HI.

    Args:
        task_set: Task set di riferimento
        horizon: Orizzonte; gli arrivi sono strettamente precedenti
        overrun_prob: Probabilita' di overrun per job HI
        seed: Seme (intero o sequenza di interi)
        sporadic_slack: Ritardo massimo extra tra arrivi, in frazione del periodo

    Returns:
        WorkloadTrace: Job ordinati per (arrivo, id task)
    """
    horizon = parse_rational(horizon, "horizon")
    if horizon <= 0:
        raise ValidationError(f"L'orizzonte deve essere positivo, ricevuto {horizon}")
    if not 0 <= overrun_prob <= 1:
        raise ValidationError(f"overrun_prob deve appartenere a [0,1], ricevuto {overrun_prob}")
    if sporadic_slack < 0:
        raise ValidationError("sporadic_slack non puo' essere negativo")

    rng = make_rng(seed)
    jobs: List[TraceJob] = []
    for task in task_set.tasks:
        arrivals = _arrivals(task, horizon, rng, sporadic_slack)
        if task.is_hi:
            flags = rng.random(len(arrivals)) < overrun_prob
            for arrival, flag in zip(arrivals, flags):
                flag = bool(flag)
                jobs.append(TraceJob(task.id, arrival, task.wcet_hi if flag else task.wcet_lo, flag))
        else:
            jobs.extend(TraceJob(task.id, arrival, task.wcet_lo, False) for arrival in arrivals)
    jobs.sort(key=_job_order)

    metadata = {
        "rng": RNG_ALGORITHM,
        "seed": seed if isinstance(seed, int) else list(seed),
        "overrun_prob": overrun_prob,
        "taskset_fingerprint": task_set.fingerprint(),
        "sporadic_slack": sporadic_slack,
    }
    overruns = sum(1 for job in jobs if job.overrun)
    logger.debug(f"Trace generata: {len(jobs)} job, {overruns} overrun, orizzonte {horizon}")
    return WorkloadTrace(horizon, jobs, overrun_prob, metadata["seed"], metadata)


def _hi_jobs(task_set: McTaskSet, horizon: Fraction) -> List[Tuple[Fraction, str]]:
    jobs = []
    for task in task_set.hi_tasks:
        count = math.ceil(horizon / task.period)
        jobs.extend((task.period * n, task.id) for n in range(count))
    return sorted(jobs)


def enumerate_overrun_traces(task_set: McTaskSet, horizon: Union[int, Fraction], cap: int) -> Iterator[WorkloadTrace]:
    """
    Enumera in modo deterministico le trace a distanza minima con ogni
    sottoinsieme di job HI in overrun, per dimensione crescente, fino a `cap`.

    Args:
        task_set: Task set di riferimento
        horizon: Orizzonte delle trace
        cap: Numero massimo di trace prodotte

    Yields:
        WorkloadTrace: Una trace per sottoinsieme
    """
    horizon = parse_rational(horizon, "horizon")
    base = generate_trace(task_set, horizon, 0.0, 0)
    candidates = _hi_jobs(task_set, horizon)
    produced = 0

    for size in range(len(candidates) + 1):
        for subset in itertools.combinations(candidates, size):
            if produced >= cap:
                return
            flagged = set(subset)
            jobs = []
            for job in base.jobs:
                if (job.arrival, job.task) in flagged:
                    task = task_set.by_id[job.task]
                    jobs.append(TraceJob(job.task, job.arrival, task.wcet_hi, True))
                else:
                    jobs.append(job)
            metadata = dict(base.metadata, overrun_prob=None, enumerated=size, seed=None)
            produced += 1
            yield WorkloadTrace(horizon, jobs, 0.0, None, metadata)


def validate_trace(task_set: McTaskSet, trace: WorkloadTrace) -> None:
    """
    Verifica che la trace sia compatibile con il task set.

    Solleva TraceMismatchError con l'elenco delle violazioni.
    """
    problems = []
    fingerprint = trace.metadata.get("taskset_fingerprint") if trace.metadata else None
    if fingerprint and fingerprint != task_set.fingerprint():
        problems.append({"code": "fingerprint", "message": "trace generated for a different task set"})
    if trace.horizon <= 0:
        problems.append({"code": "horizon_positive", "message": "horizon > 0 required"})

    last_arrival: Dict[str, Fraction] = {}
    previous = None
    for index, job in enumerate(trace.jobs):
        task = task_set.by_id.get(job.task)
        if task is None:
            problems.append({"code": "unknown_task", "message": f"job {index}: unknown task {job.task}"})
            continue
        if previous is not None and _job_order(job) < previous:
            problems.append({"code": "unsorted", "message": f"job {index}: jobs not sorted by (arrival, task)"})
        previous = _job_order(job)

        if job.arrival < 0 or job.arrival >= trace.horizon:
            problems.append({"code": "arrival_range", "message": f"job {index}: arrival outside [0, horizon)"})
        if task.id in last_arrival and job.arrival - last_arrival[task.id] < task.period:
            problems.append({"code": "inter_arrival", "message": f"job {index}: arrivals closer than T"})
        last_arrival[task.id] = job.arrival

        if task.is_hi:
            expected = task.wcet_hi if job.overrun else task.wcet_lo
            if job.demand != expected:
                problems.append({"code": "demand", "message": f"job {index}: demand must be {expected}"})
        else:
            if job.overrun:
                problems.append({"code": "lo_overrun", "message": f"job {index}: overrun flag on LO job"})
            if job.demand != task.wcet_lo:
                problems.append({"code": "demand", "message": f"job {index}: demand must be {task.wcet_lo}"})

        if len(problems) >= 20:
            break

    if problems:
        details = "; ".join(p["message"] for p in problems[:5])
        raise TraceMismatchError(f"Trace non compatibile con il task set: {details}", problems)


def load_trace(path: str) -> WorkloadTrace:
    """Legge una trace JSON"""
    from storage.file_manager import read_json

    return trace_from_dict(read_json(path))


def dump_trace(trace: WorkloadTrace, path: str) -> None:
    """Scrive una trace JSON"""
    from storage.file_manager import write_json

    write_json(path, trace.to_dict())
