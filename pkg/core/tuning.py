"""
Tuning - Regolazione run-time dei livelli di servizio dei task LO
Strategie invocate a ogni mode switch: uniforme, dropping-off, degradazione
statica (baseline IMC) e il classico EDF-VD a innesco globale.
"""

import logging
from bisect import bisect_left
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, List, Mapping, Optional, Set, Tuple

from core.errors import AdmissibilityError, InfeasibleTuningError, NoLoTasksError, ValidationError
from core.model import McTask, McTaskSet
from core.schedulability import (
    AnalysisContext,
    assignment_within_bound,
    direct_utilization_bound,
    lo_utilization,
    validate_service_assignment,
)

logger = logging.getLogger('tuning')

ONE = Fraction(1)
ZERO = Fraction(0)


@dataclass
class ModeState:
    """
    Stato del k-level HI mode corrente.

    Attributes:
        z: Livello di servizio corrente per ogni task LO
        u_lo_k: Utilizzo LO corrente (somma di z_i * u_i^LO)
        switched: Task HI passati in modo HI, con l'istante dello switch
    """
    z: Dict[str, Fraction]
    u_lo_k: Fraction
    switched: List[Tuple[str, Fraction]] = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.switched)

    @property
    def switched_ids(self) -> Set[str]:
        return {task_id for task_id, _ in self.switched}

    @classmethod
    def initial(cls, task_set: McTaskSet) -> "ModeState":
        return cls({task.id: ONE for task in task_set.lo_tasks}, task_set.u_lo_lo)

    def reset(self, task_set: McTaskSet) -> None:
        """Ritorno al modo LO: k = 0 e tutti i livelli a 1"""
        self.z = {task.id: ONE for task in task_set.lo_tasks}
        self.u_lo_k = task_set.u_lo_lo
        self.switched = []

    def apply_switch(
        self,
        task_set: McTaskSet,
        task_id: str,
        time: Fraction,
        changes: Mapping[str, Fraction],
    ) -> None:
        """
        Registra lo switch di un task HI e applica le variazioni di livello.

        Args:
            task_set: Task set simulato
            task_id: Task HI che e' passato in modo HI
            time: Istante dello switch
            changes: Solo i livelli LO modificati
        """
        if task_id in self.switched_ids:
            raise AdmissibilityError(f"Il task {task_id} e' gia' in modo HI")
        for lo_id, level in changes.items():
            previous = self.z[lo_id]
            if level > previous:
                raise AdmissibilityError(f"Livello di {lo_id} in crescita: {previous} -> {level}")
            self.u_lo_k -= (previous - level) * task_set.by_id[lo_id].u_lo
            self.z[lo_id] = level
        self.switched.append((task_id, time))


def _require_lo_tasks(task_set: McTaskSet) -> None:
    if task_set.u_lo_lo == 0:
        raise NoLoTasksError("Nessun task LO: la regolazione del servizio e' vuota")


def level_above_floor(task: McTask, share: Fraction) -> Fraction:
    """Livello del task quando resta la quota `share` della parte sopra z^man"""
    return task.z_mandatory + share * (1 - task.z_mandatory)


def uniform_next_level(ctx: AnalysisContext, task_set: McTaskSet, z_prev: Fraction, overrun_task: str) -> Fraction:
    """
    Livello uniforme z^k dopo l'overrun di `overrun_task`.

    Il livello e' la quota comune della parte scartabile (sopra z^man) di ogni
    task LO: il task i gira a z_i^man + z^k (1 - z_i^man), cosi' u_LO cala
    esattamente di -phi/(1-x) anche quando alcuni task hanno un pavimento.
    Con u_LO^man = 0 coincide con il livello uniforme di tutti i task.

    Args:
        ctx: Contesto dell'analisi
        task_set: Task set analizzato
        z_prev: Livello uniforme z^{k-1}
        overrun_task: Task HI in overrun

    Returns:
        Fraction: z^k = max(0, z^{k-1} + min(0, phi / ((1-x)(u_LO^LO - u_LO^man))))
    """
    _require_lo_tasks(task_set)
    if overrun_task not in ctx.phi:
        raise ValidationError(f"{overrun_task} non e' un task HI del task set")
    if ctx.phi[overrun_task] >= 0:
        return z_prev
    sheddable = task_set.u_lo_lo - task_set.u_lo_man
    if sheddable == 0:
        return ZERO
    step = ctx.phi[overrun_task] / ((1 - ctx.x) * sheddable)
    return max(ZERO, z_prev + step)


def static_degradation_level(ctx: AnalysisContext, task_set: McTaskSet) -> Fraction:
    """Livello statico garantito nel caso peggiore (tutti i task di compensazione in overrun)"""
    _require_lo_tasks(task_set)
    compensation_sum = sum((ctx.phi[task_id] for task_id in ctx.compensation_set), ZERO)
    if compensation_sum == 0:
        return ONE
    sheddable = task_set.u_lo_lo - task_set.u_lo_man
    if sheddable == 0:
        return ZERO
    level = 1 + compensation_sum / ((1 - ctx.x) * sheddable)
    return min(ONE, max(ZERO, level))


def build_drop_table(task_set: McTaskSet) -> List[str]:
    """Tabella off-line TA_LO: task LO in ordine crescente di u_i^LO, pari merito per id"""
    return [task.id for task in sorted(task_set.lo_tasks, key=lambda t: (t.u_lo, t.id))]


def required_reduction(ctx: AnalysisContext, overrun_task: str) -> Fraction:
    """Riduzione U_R^k = max(0, -phi / (1-x)) richiesta allo switch di `overrun_task`"""
    if overrun_task not in ctx.phi:
        raise ValidationError(f"{overrun_task} non e' un task HI del task set")
    return max(ZERO, -ctx.reduction(overrun_task))


def floor_state_admissible(ctx: AnalysisContext, task_set: McTaskSet, switched: Iterable[str]) -> bool:
    """Con tutti i task LO al proprio z^man, u_LO^man resta entro il limite diretto"""
    return task_set.u_lo_man <= direct_utilization_bound(ctx, task_set, switched)


def dropping_off_next(
    ctx: AnalysisContext,
    task_set: McTaskSet,
    state: ModeState,
    overrun_task: str,
    sorted_table: List[str],
) -> Dict[str, Fraction]:
    """
    Dropping-off: scarta il prefisso piu' corto di TA_LO che copre U_R^k.

    Un task scartato scende al proprio z^man, mai sotto. Se la massa ancora
    scartabile non copre U_R^k (gli switch precedenti hanno scartato piu' del
    necessario) tutti i task scendono al pavimento, purche' u_LO^man resti
    entro il limite diretto del nuovo insieme di task in modo HI.

    Args:
        ctx: Contesto dell'analisi
        task_set: Task set analizzato
        state: Stato corrente (k-1)
        overrun_task: Task HI in overrun
        sorted_table: Tabella TA_LO

    Returns:
        dict: Nuova mappa completa dei livelli z^k
    """
    needed = required_reduction(ctx, overrun_task)
    levels = dict(state.z)
    if needed == 0:
        return levels

    prefix = [ZERO]
    for task_id in sorted_table:
        task = task_set.by_id[task_id]
        prefix.append(prefix[-1] + (state.z[task_id] - task.z_mandatory) * task.u_lo)

    cut = bisect_left(prefix, needed)
    if cut >= len(prefix):
        if not floor_state_admissible(ctx, task_set, state.switched_ids | {overrun_task}):
            raise InfeasibleTuningError(
                f"Riduzione richiesta {needed} oltre la massa scartabile {prefix[-1]}"
            )
        cut = len(sorted_table)
    for task_id in sorted_table[:cut]:
        levels[task_id] = task_set.by_id[task_id].z_mandatory
    return levels


class TuningStrategy:
    """
    Contratto comune delle strategie di regolazione.

    Attributes:
        name: Nome usato da CLI ed esperimenti
        global_trigger: Il primo overrun porta tutti i task HI in modo HI
        per_switch_check: Ogni switch deve soddisfare la condizione incrementale
        closed_form_check: Ogni stato deve restare entro il limite diretto
    """
    name = "base"
    global_trigger = False
    per_switch_check = False
    closed_form_check = True

    def __init__(self, task_set: McTaskSet, ctx: Optional[AnalysisContext]):
        self.task_set = task_set
        self.ctx = ctx

    def reset(self) -> None:
        """Chiamato al ritorno in modo LO"""

    def on_switch(self, state: ModeState, overrun_task: str) -> Dict[str, Fraction]:
        """
        Calcola le variazioni di livello allo switch corrente.

        Args:
            state: Stato prima dello switch
            overrun_task: Task HI in overrun

        Returns:
            dict: Solo i livelli LO che cambiano
        """
        raise NotImplementedError

    def switch_admissible(self, previous: Mapping[str, Fraction], state: ModeState, overrun_task: str) -> bool:
        """Condizione incrementale tra i livelli prima e dopo lo switch"""
        return validate_service_assignment(self.ctx, self.task_set, previous, state.z, overrun_task)


def _share_changes(task_set: McTaskSet, state: ModeState, share: Fraction) -> Dict[str, Fraction]:
    changes = {}
    for task in task_set.lo_tasks:
        level = level_above_floor(task, share)
        if state.z[task.id] != level:
            changes[task.id] = level
    return changes


class UniformTuning(TuningStrategy):
    """Tutti i task LO condividono la stessa quota z^k della parte sopra z^man"""
    name = "uniform"
    per_switch_check = True

    def __init__(self, task_set: McTaskSet, ctx: AnalysisContext):
        super().__init__(task_set, ctx)
        self.level = ONE

    def reset(self) -> None:
        self.level = ONE

    def on_switch(self, state: ModeState, overrun_task: str) -> Dict[str, Fraction]:
        if not self.task_set.lo_tasks:
            return {}
        level = uniform_next_level(self.ctx, self.task_set, self.level, overrun_task)
        if level == self.level:
            return {}
        self.level = level
        return _share_changes(self.task_set, state, level)


class DroppingOffTuning(TuningStrategy):
    """
    Dropping-off con tabella TA_LO e somme prefisse calcolate off-line.
    Poiche' i task scartati formano sempre un prefisso della tabella, basta
    un puntatore e una ricerca binaria per switch.

    Quando la tabella e' esaurita prima di coprire U_R^k lo switch e' ammesso
    se lo stato al pavimento resta entro il limite diretto (`exhausted`).
    """
    name = "drop"
    per_switch_check = True

    def __init__(self, task_set: McTaskSet, ctx: AnalysisContext):
        super().__init__(task_set, ctx)
        self.table = build_drop_table(task_set)
        self.prefix = [ZERO]
        for task_id in self.table:
            task = task_set.by_id[task_id]
            self.prefix.append(self.prefix[-1] + (1 - task.z_mandatory) * task.u_lo)
        self.pointer = 0
        self.bound = task_set.u_lo_lo
        self.exhausted = False

    def reset(self) -> None:
        self.pointer = 0
        self.bound = self.task_set.u_lo_lo
        self.exhausted = False

    def select(self, needed: Fraction) -> Tuple[int, int]:
        """
        Intervallo [pointer, cut) della tabella da scartare: O(log n).

        Args:
            needed: Riduzione U_R^k richiesta

        Returns:
            tuple: Estremi dell'intervallo (vuoto se non serve riduzione)
        """
        if needed <= 0:
            return self.pointer, self.pointer
        target = self.prefix[self.pointer] + needed
        cut = bisect_left(self.prefix, target, lo=self.pointer)
        if cut >= len(self.prefix):
            raise InfeasibleTuningError(
                f"Riduzione richiesta {needed} oltre la massa scartabile "
                f"{self.prefix[-1] - self.prefix[self.pointer]}"
            )
        return self.pointer, cut

    def on_switch(self, state: ModeState, overrun_task: str) -> Dict[str, Fraction]:
        if overrun_task in self.ctx.compensation_set:
            self.bound += self.ctx.reduction(overrun_task)
        needed = required_reduction(self.ctx, overrun_task)
        self.exhausted = False
        try:
            start, cut = self.select(needed)
        except InfeasibleTuningError:
            if self.task_set.u_lo_man > self.bound:
                raise
            start, cut = self.pointer, len(self.table)
            self.exhausted = True
            logger.debug(f"Tabella TA_LO esaurita allo switch di {overrun_task}: tutti i task LO al pavimento")
        self.pointer = cut
        return {task_id: self.task_set.by_id[task_id].z_mandatory for task_id in self.table[start:cut]}

    def switch_admissible(self, previous: Mapping[str, Fraction], state: ModeState, overrun_task: str) -> bool:
        if self.exhausted:
            return assignment_within_bound(self.ctx, self.task_set, state.switched_ids, state.z)
        return super().switch_admissible(previous, state, overrun_task)


class StaticDegradation(TuningStrategy):
    """Baseline a degradazione statica: al primo overrun livello fisso fino al ritorno in LO"""
    name = "static"

    def __init__(self, task_set: McTaskSet, ctx: AnalysisContext):
        super().__init__(task_set, ctx)
        self.level = static_degradation_level(ctx, task_set) if task_set.lo_tasks else ONE

    def on_switch(self, state: ModeState, overrun_task: str) -> Dict[str, Fraction]:
        if state.k > 0:
            return {}
        return _share_changes(self.task_set, state, self.level)


class ClassicEdfVd(TuningStrategy):
    """EDF-VD classico: il primo overrun porta tutto il sistema in modo HI e scarta i task LO"""
    name = "edfvd"
    global_trigger = True
    closed_form_check = False

    def on_switch(self, state: ModeState, overrun_task: str) -> Dict[str, Fraction]:
        return {task_id: ZERO for task_id, level in state.z.items() if level != 0}


STRATEGIES = {
    UniformTuning.name: UniformTuning,
    DroppingOffTuning.name: DroppingOffTuning,
    StaticDegradation.name: StaticDegradation,
    ClassicEdfVd.name: ClassicEdfVd,
}


def make_strategy(name: str, task_set: McTaskSet, ctx: Optional[AnalysisContext]) -> TuningStrategy:
    """
    Istanzia una strategia per nome.

    Args:
        name: uniform | drop | static | edfvd
        task_set: Task set simulato
        ctx: Contesto dell'analisi (puo' mancare solo per edfvd)

    Returns:
        TuningStrategy: Nuova istanza, da non condividere tra simulazioni
    """
    try:
        strategy_class = STRATEGIES[name]
    except KeyError:
        raise ValidationError(f"Strategia sconosciuta: {name} (attese: {', '.join(STRATEGIES)})")
    if ctx is None and strategy_class is not ClassicEdfVd:
        raise ValidationError(f"La strategia {name} richiede il contesto dell'analisi")
    return strategy_class(task_set, ctx)


def uniform_levels_table(ctx: AnalysisContext, task_set: McTaskSet, order: Iterable[str]) -> List[Dict]:
    """
    Livelli uniformi per una sequenza di overrun (righe k = 1..len(order)).

    Returns:
        list: Righe con k, task, z^k, livelli e budget z_i^k * C^LO per task LO, u_LO^k
    """
    rows = []
    level = ONE
    for k, task_id in enumerate(order, start=1):
        level = uniform_next_level(ctx, task_set, level, task_id)
        levels = {t.id: level_above_floor(t, level) for t in task_set.lo_tasks}
        rows.append({
            "k": k,
            "task": task_id,
            "z": level,
            "levels": levels,
            "u_lo_k": lo_utilization(task_set, levels),
            "budgets": {t.id: levels[t.id] * t.wcet_lo for t in task_set.lo_tasks},
        })
    return rows


def uniform_level_envelope(ctx: AnalysisContext, task_set: McTaskSet) -> Tuple[List[Fraction], List[Fraction]]:
    """
    Linee analitiche del livello uniforme per k = 0..|HI|.

    La linea inferiore applica per primi i task con phi piu' negativo (caso
    peggiore su tutti gli ordini di overrun), la superiore per primi quelli
    con phi piu' alto.

    Returns:
        tuple: (z^k minimo, z^k massimo), liste indicizzate per k
    """
    worst_first = sorted(ctx.phi, key=lambda task_id: (ctx.phi[task_id], task_id))
    best_first = list(reversed(worst_first))
    lower = [ONE] + [row["z"] for row in uniform_levels_table(ctx, task_set, worst_first)]
    upper = [ONE] + [row["z"] for row in uniform_levels_table(ctx, task_set, best_first)]
    return lower, upper
