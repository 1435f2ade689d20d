"""
Simulator - Esecuzione deterministica a eventi di una trace sotto FMC-EDF-VD
Tempo continuo con istanti razionali esatti; a parita' di istante gli eventi
sono trattati nell'ordine completamento < overrun < arrivo < dispatch.
"""

import heapq
import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import TYPE_CHECKING, Any, Callable, Dict, List, Optional, Tuple, Union

from core.errors import AdmissibilityError, TraceMismatchError
from core.model import McTask, McTaskSet, format_rational
from core.schedulability import AnalysisContext, assignment_within_bound
from core.tuning import ModeState, TuningStrategy, make_strategy

if TYPE_CHECKING:
    from services.tracegen import WorkloadTrace

logger = logging.getLogger('simulator')

EventSink = Callable[[Dict[str, Any]], None]


class JobState(str, Enum):
    READY = "ready"
    RUNNING = "running"
    SUSPENDED = "suspended"
    FINISHED = "finished"
    MISSED = "missed"


@dataclass(eq=False)
class Job:
    task: McTask
    arrival: Fraction
    absolute_deadline: Fraction
    effective_deadline: Fraction
    demand: Fraction
    budget: Fraction
    executed: Fraction = Fraction(0)
    state: JobState = JobState.READY
    version: int = 0

    @property
    def key(self) -> Tuple[str, Fraction]:
        return self.task.id, self.arrival

    @property
    def target(self) -> Fraction:
        return min(self.demand, self.budget)

    @property
    def active(self) -> bool:
        return self.state in (JobState.READY, JobState.RUNNING)


@dataclass(frozen=True)
class ModeSwitchEvent:
    time: Fraction
    task: str
    k: int
    u_lo_k: Fraction
    z_min: Fraction
    z_max: Fraction

    def to_dict(self) -> Dict[str, Any]:
        return {
            "time": format_rational(self.time),
            "task": self.task,
            "k": self.k,
            "u_lo_k": format_rational(self.u_lo_k),
            "z_min": format_rational(self.z_min),
            "z_max": format_rational(self.z_max),
        }


def _histogram_to_list(histogram: Counter) -> List[List[Any]]:
    return [[format_rational(value), count] for value, count in sorted(histogram.items())]


@dataclass
class SimReport:
    """Metriche raccolte da una simulazione"""
    strategy: str
    hi_deadline_misses: int = 0
    first_hi_miss: Optional[Dict[str, Any]] = None
    lo_budget_misses: int = 0
    lo_jobs_counted: int = 0
    lo_jobs_finished: int = 0
    hi_jobs: int = 0
    context_switches: int = 0
    switch_backs: int = 0
    degraded_jobs: int = 0
    bound_violations: int = 0
    per_k_service_samples: Dict[int, Counter] = field(default_factory=dict)
    per_k_suspended_samples: Dict[int, Counter] = field(default_factory=dict)
    mode_switch_events: List[ModeSwitchEvent] = field(default_factory=list)

    @property
    def pfj(self) -> float:
        """Percentuale di job LO completati con C^LO entro la deadline"""
        if self.lo_jobs_counted == 0:
            return 100.0
        return 100.0 * self.lo_jobs_finished / self.lo_jobs_counted

    def samples(self, k: int) -> List[Fraction]:
        """Campioni espansi (executed / C^LO) al livello k"""
        histogram = self.per_k_service_samples.get(k, Counter())
        return [value for value, count in sorted(histogram.items()) for _ in range(count)]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "strategy": self.strategy,
            "hi_deadline_misses": self.hi_deadline_misses,
            "first_hi_miss": self.first_hi_miss,
            "lo_budget_misses": self.lo_budget_misses,
            "lo_jobs_counted": self.lo_jobs_counted,
            "lo_jobs_finished": self.lo_jobs_finished,
            "pfj": self.pfj,
            "hi_jobs": self.hi_jobs,
            "context_switches": self.context_switches,
            "switch_backs": self.switch_backs,
            "degraded_jobs": self.degraded_jobs,
            "bound_violations": self.bound_violations,
            "per_k_service_samples": {
                str(k): _histogram_to_list(h) for k, h in sorted(self.per_k_service_samples.items())
            },
            "per_k_suspended_samples": {
                str(k): _histogram_to_list(h) for k, h in sorted(self.per_k_suspended_samples.items())
            },
            "mode_switch_events": [event.to_dict() for event in self.mode_switch_events],
        }


class FmcSimulator:
    def __init__(
        self,
        task_set: McTaskSet,
        ctx: AnalysisContext,
        strategy: TuningStrategy,
        event_sink: Optional[EventSink] = None,
    ):
        """
        Inizializza il simulatore per una singola esecuzione

        Args:
            task_set: Task set simulato
            ctx: Contesto dell'analisi off-line (fornisce x e i discriminanti)
            strategy: Istanza della strategia di regolazione (non condivisa)
            event_sink: Funzione opzionale che riceve ogni evento come dict
        """
        self.task_set = task_set
        self.ctx = ctx
        self.strategy = strategy
        self.event_sink = event_sink

        self.state = ModeState.initial(task_set)
        self.report = SimReport(strategy=strategy.name)
        self.now = Fraction(0)
        self.horizon = Fraction(0)

        self._queue: List[Tuple] = []
        self._active: Dict[str, List[Job]] = {task.id: [] for task in task_set.tasks}
        self._switched: set = set()
        self._last_dispatched: Optional[Tuple[str, Fraction]] = None

    # =================== EVENT LOG ===================

    def _emit(self, event: str, **data) -> None:
        if self.event_sink is None:
            return
        record = {"time": format_rational(self.now), "event": event}
        for key, value in data.items():
            record[key] = format_rational(value) if isinstance(value, Fraction) else value
        self.event_sink(record)

    # =================== READY QUEUE ===================

    def _push(self, job: Job) -> None:
        job.version += 1
        heapq.heappush(self._queue, (job.effective_deadline, job.task.id, job.arrival, job.version, job))

    def _pick(self) -> Optional[Job]:
        """Job con la deadline effettiva minima; scarta voci obsolete e job scaduti"""
        while self._queue:
            _, _, _, version, job = self._queue[0]
            if version != job.version or not job.active:
                heapq.heappop(self._queue)
                continue
            if job.absolute_deadline <= self.now:
                heapq.heappop(self._queue)
                self._miss(job)
                continue
            return job
        return None

    # =================== EVENTS ===================

    def _admit(self, task_id: str, arrival: Fraction, demand: Fraction) -> None:
        task = self.task_set.by_id.get(task_id)
        if task is None:
            raise TraceMismatchError(f"La trace contiene un task sconosciuto: {task_id}")

        deadline = arrival + task.period
        if task.is_hi:
            self.report.hi_jobs += 1
            if task.id in self._switched:
                job = Job(task, arrival, deadline, deadline, demand, task.wcet_hi)
            else:
                job = Job(task, arrival, deadline, arrival + self.ctx.x * task.period, demand, task.wcet_lo)
        else:
            if deadline <= self.horizon:
                self.report.lo_jobs_counted += 1
            budget = self.state.z[task.id] * task.wcet_lo
            job = Job(task, arrival, deadline, deadline, demand, budget)
            if budget == 0:
                job.state = JobState.SUSPENDED
                self._record_sample(job, self.state.k, suspended=False)
                self._emit("drop", task=task.id, arrival=arrival)
                return

        self._active[task.id].append(job)
        self._push(job)
        self._emit("arrival", task=task.id, arrival=arrival, budget=job.budget, deadline=job.effective_deadline)

    def _release(self, job: Job, state: JobState) -> None:
        job.state = state
        self._active[job.task.id].remove(job)

    def _record_sample(self, job: Job, k: int, suspended: bool, upper: Optional[Fraction] = None) -> None:
        sample = job.executed / job.task.wcet_lo
        self.report.per_k_service_samples.setdefault(k, Counter())[sample] += 1
        if suspended:
            self.report.per_k_suspended_samples.setdefault(k, Counter())[sample] += 1
        if sample < 1:
            self.report.degraded_jobs += 1

        if not self.strategy.closed_form_check:
            return
        lower = self.state.z[job.task.id]
        if sample < lower or sample > 1 or (suspended and upper is not None and not sample < upper):
            self.report.bound_violations += 1

    def _complete(self, job: Job) -> None:
        self._release(job, JobState.FINISHED)
        if not job.task.is_hi:
            if job.executed == job.task.wcet_lo and job.absolute_deadline <= self.horizon:
                self.report.lo_jobs_finished += 1
            self._record_sample(job, self.state.k, suspended=False)
        self._emit("complete", task=job.task.id, arrival=job.arrival, executed=job.executed)

    def _miss(self, job: Job) -> None:
        self._release(job, JobState.MISSED)
        detail = {
            "task": job.task.id,
            "arrival": format_rational(job.arrival),
            "deadline": format_rational(job.absolute_deadline),
            "executed": format_rational(job.executed),
            "detected_at": format_rational(self.now),
        }
        if job.task.is_hi:
            self.report.hi_deadline_misses += 1
            if self.report.first_hi_miss is None:
                self.report.first_hi_miss = detail
                logger.warning(f"Prima deadline HI mancata: {detail}")
        elif job.executed < job.budget:
            self.report.lo_budget_misses += 1
        self._emit("miss", **{key: value for key, value in detail.items() if key != "detected_at"})

    def _switch_task(self, task_id: str, changes: Dict[str, Fraction]) -> None:
        previous = dict(self.state.z) if self.strategy.per_switch_check else None
        self.state.apply_switch(self.task_set, task_id, self.now, changes)
        self._switched.add(task_id)

        # Deadline reale e budget C^HI per i job pendenti del task
        for job in self._active[task_id]:
            if job.active:
                job.budget = job.task.wcet_hi
                job.effective_deadline = job.absolute_deadline
                self._push(job)

        if previous is not None and not self.strategy.switch_admissible(previous, self.state, task_id):
            raise AdmissibilityError(f"Switch {self.state.k} ({task_id}): condizione incrementale violata")
        if self.strategy.closed_form_check and not assignment_within_bound(
            self.ctx, self.task_set, self.state.switched_ids, self.state.z
        ):
            raise AdmissibilityError(f"Switch {self.state.k} ({task_id}): u_LO^k oltre il limite diretto")

        self._apply_budgets(changes, previous_levels=None)

        levels = list(self.state.z.values())
        event = ModeSwitchEvent(
            time=self.now,
            task=task_id,
            k=self.state.k,
            u_lo_k=self.state.u_lo_k,
            z_min=min(levels) if levels else Fraction(1),
            z_max=max(levels) if levels else Fraction(1),
        )
        self.report.mode_switch_events.append(event)
        self._emit("mode_switch", task=task_id, k=self.state.k, u_lo_k=self.state.u_lo_k)
        logger.debug(f"t={self.now}: switch {self.state.k} per {task_id}, u_LO^k={self.state.u_lo_k}")

    def _apply_budgets(self, changes: Dict[str, Fraction], previous_levels: Optional[Dict]) -> None:
        """Riduce i budget dei job LO attivi; sospende chi ha gia' consumato il nuovo budget"""
        k = self.state.k
        for task_id, level in changes.items():
            task = self.task_set.by_id[task_id]
            new_budget = level * task.wcet_lo
            for job in list(self._active[task_id]):
                if not job.active:
                    continue
                upper = job.budget / task.wcet_lo
                if job.executed >= new_budget:
                    self._release(job, JobState.SUSPENDED)
                    self._record_sample(job, k, suspended=True, upper=upper)
                    self._emit("suspend", task=task_id, arrival=job.arrival, executed=job.executed)
                else:
                    job.budget = new_budget

    def _overrun(self, job: Job) -> None:
        task_id = job.task.id
        changes = self.strategy.on_switch(self.state, task_id)
        self._switch_task(task_id, changes)

        if self.strategy.global_trigger:
            for task in self.task_set.hi_tasks:
                if task.id not in self._switched:
                    self._switch_task(task.id, {})

    def _switch_back(self) -> None:
        self.report.switch_backs += 1
        self.state.reset(self.task_set)
        self.strategy.reset()
        self._switched.clear()
        self._emit("switch_back")
        logger.debug(f"t={self.now}: ritorno in modo LO")

    # =================== MAIN LOOP ===================

    def run(self, trace: "WorkloadTrace") -> SimReport:
        """
        Esegue la trace fino all'esaurimento dei job.

        Args:
            trace: Trace pre-generata (arrivi ordinati per tempo e id)

        Returns:
            SimReport: Metriche della simulazione
        """
        self.horizon = Fraction(trace.horizon)
        arrivals = trace.jobs
        index = 0
        total = len(arrivals)

        while True:
            while index < total and arrivals[index].arrival == self.now:
                item = arrivals[index]
                self._admit(item.task, item.arrival, item.demand)
                index += 1

            job = self._pick()
            if job is None:
                if self.state.k > 0:
                    self._switch_back()
                self._last_dispatched = None
                if index >= total:
                    break
                self.now = arrivals[index].arrival
                continue

            if job.key != self._last_dispatched:
                self.report.context_switches += 1
                self._last_dispatched = job.key
                self._emit("dispatch", task=job.task.id, arrival=job.arrival)

            end = self.now + (job.target - job.executed)
            next_time = min(end, job.absolute_deadline)
            if index < total:
                next_time = min(next_time, arrivals[index].arrival)

            job.state = JobState.RUNNING
            job.executed += next_time - self.now
            self.now = next_time

            if job.executed == job.target:
                if job.task.is_hi and job.task.id not in self._switched and job.demand > job.budget:
                    self._overrun(job)
                else:
                    self._complete(job)
            if job.active:
                job.state = JobState.READY
                if job.absolute_deadline <= self.now:
                    self._miss(job)

        return self.report


def simulate(
    task_set: McTaskSet,
    ctx: AnalysisContext,
    trace: "WorkloadTrace",
    strategy: Union[str, TuningStrategy],
    event_sink: Optional[EventSink] = None,
) -> SimReport:
    """
    Simula una trace con una strategia di regolazione.

    Args:
        task_set: Task set simulato
        ctx: Contesto off-line
        trace: Trace valida per il task set
        strategy: Nome della strategia o istanza (ne viene creata una nuova)
        event_sink: Destinazione opzionale del log degli eventi

    Returns:
        SimReport: Metriche della simulazione
    """
    from services.tracegen import validate_trace

    validate_trace(task_set, trace)
    name = strategy if isinstance(strategy, str) else strategy.name
    simulator = FmcSimulator(task_set, ctx, make_strategy(name, task_set, ctx), event_sink)
    report = simulator.run(trace)
    logger.debug(
        f"Simulazione {name}: PFJ={report.pfj:.3f}, miss HI={report.hi_deadline_misses}, "
        f"switch={len(report.mode_switch_events)}"
    )
    return report


def find_divergence(expected: Dict[str, Any], actual: Dict[str, Any]) -> Optional[str]:
    """Primo campo (o primo evento di switch) in cui due report differiscono"""
    expected_events = expected.get("mode_switch_events", [])
    actual_events = actual.get("mode_switch_events", [])
    for index, (left, right) in enumerate(zip(expected_events, actual_events)):
        if left != right:
            return f"mode_switch_events[{index}]: {left} != {right}"
    if len(expected_events) != len(actual_events):
        return f"mode_switch_events: {len(expected_events)} eventi contro {len(actual_events)}"
    for key in sorted(set(expected) | set(actual)):
        if expected.get(key) != actual.get(key):
            return f"{key}: {expected.get(key)} != {actual.get(key)}"
    return None


def replay_check(
    task_set: McTaskSet,
    ctx: AnalysisContext,
    trace: "WorkloadTrace",
    strategy: Union[str, TuningStrategy],
    report: Union[SimReport, Dict[str, Any]],
) -> bool:
    """
    Riesegue la simulazione e verifica che il report sia identico.

    Returns:
        bool: True se la riesecuzione riproduce il report
    """
    expected = report.to_dict() if isinstance(report, SimReport) else report
    actual = simulate(task_set, ctx, trace, strategy).to_dict()
    divergence = find_divergence(expected, actual)
    if divergence is not None:
        logger.warning(f"Violazione di determinismo: {divergence}")
        return False
    return True
