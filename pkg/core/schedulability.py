"""
Schedulability - Analisi off-line FMC-EDF-VD
Fattore di deadline virtuale, test del modo LO, discriminanti, partizione
margin/compensation, test di fattibilita' e limiti di utilizzo dopo k switch.
"""

import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Dict, FrozenSet, Iterable, List, Mapping

from core.errors import InfeasibleLoModeError, ModelError, ValidationError
from core.model import McTaskSet, format_rational

logger = logging.getLogger('schedulability')


@dataclass(frozen=True)
class AnalysisContext:
    """Risultato dello step off-line, condiviso da tuning e simulatore"""
    x: Fraction
    phi: Dict[str, Fraction]
    margin_set: FrozenSet[str]
    compensation_set: FrozenSet[str]
    u_lo_man: Fraction

    def reduction(self, task_id: str) -> Fraction:
        """phi(task) / (1 - x), senza controlli sull'id"""
        return self.phi[task_id] / (1 - self.x)


def compute_x(task_set: McTaskSet) -> Fraction:
    """
    Determina il fattore di deadline virtuale x = u_HI^LO / (1 - u_LO^LO).

    Con questa scelta la condizione del modo LO vale con uguaglianza.

    Args:
        task_set: Task set con almeno un task HI

    Returns:
        Fraction: Fattore x in (0, 1)
    """
    if not task_set.hi_tasks:
        raise ModelError("L'analisi FMC richiede almeno un task HI")
    if task_set.u_lo_lo >= 1:
        raise InfeasibleLoModeError(f"u_LO^LO = {task_set.u_lo_lo} >= 1: modo LO non schedulabile")

    x = task_set.u_hi_lo / (1 - task_set.u_lo_lo)
    if x >= 1:
        # u_LO^LO + u_HI^LO >= 1: nessun x < 1 soddisfa il modo LO
        raise InfeasibleLoModeError(
            f"u_LO^LO + u_HI^LO = {task_set.u_lo_lo + task_set.u_hi_lo} >= 1: x = {x} fuori da (0,1)"
        )
    return x


def lo_mode_test(task_set: McTaskSet, x: Fraction) -> bool:
    """Condizione sufficiente del modo LO: u_LO^LO + u_HI^LO / x <= 1"""
    if not 0 < x < 1:
        raise ValidationError(f"x deve appartenere a (0,1), ricevuto {x}")
    return task_set.u_lo_lo + task_set.u_hi_lo / x <= 1


def build_context(task_set: McTaskSet, x: Fraction) -> AnalysisContext:
    """
    Calcola i discriminanti phi e la partizione dei task HI.

    Args:
        task_set: Task set analizzato
        x: Fattore di deadline virtuale che supera il test del modo LO

    Returns:
        AnalysisContext: Contesto dell'analisi
    """
    if not task_set.hi_tasks:
        raise ModelError("L'analisi FMC richiede almeno un task HI")
    if not lo_mode_test(task_set, x):
        raise InfeasibleLoModeError(f"x = {x} non supera il test del modo LO")

    phi = {}
    for task in task_set.hi_tasks:
        phi[task.id] = (task.u_lo / task_set.u_hi_lo) * (1 - task_set.u_lo_lo) - task.u_hi

    margin = frozenset(task_id for task_id, value in phi.items() if value > 0)
    compensation = frozenset(task_id for task_id, value in phi.items() if value <= 0)

    logger.debug(f"Contesto: x={x}, margin={sorted(margin)}, compensation={sorted(compensation)}")
    return AnalysisContext(x, phi, margin, compensation, task_set.u_lo_man)


def prepare_context(task_set: McTaskSet) -> AnalysisContext:
    """Step off-line completo: x prescritto e contesto"""
    return build_context(task_set, compute_x(task_set))


def feasibility_margin(ctx: AnalysisContext, task_set: McTaskSet) -> Fraction:
    """Valore di (1-x)(u_LO^LO - u_LO^man) + somma dei phi di compensazione"""
    compensation_sum = sum((ctx.phi[task_id] for task_id in ctx.compensation_set), Fraction(0))
    return (1 - ctx.x) * (task_set.u_lo_lo - ctx.u_lo_man) + compensation_sum


def feasibility_test(ctx: AnalysisContext, task_set: McTaskSet) -> bool:
    """Il fattore x garantisce una soluzione ammissibile a ogni switch"""
    return feasibility_margin(ctx, task_set) >= 0


def _check_hi_ids(ctx: AnalysisContext, task_ids: Iterable[str]) -> None:
    for task_id in task_ids:
        if task_id not in ctx.phi:
            raise ValidationError(f"{task_id} non e' un task HI del task set")


def direct_utilization_bound(ctx: AnalysisContext, task_set: McTaskSet, switched: Iterable[str]) -> Fraction:
    """
    Massimo u_LO^k ammissibile quando esattamente i task in `switched`
    sono passati in modo HI, indipendentemente dall'ordine.

    Args:
        ctx: Contesto dell'analisi
        task_set: Task set analizzato
        switched: Id dei task HI che hanno fatto overrun

    Returns:
        Fraction: Limite superiore su u_LO^k
    """
    switched = set(switched)
    _check_hi_ids(ctx, switched)
    compensation_sum = sum((ctx.phi[task_id] for task_id in switched & ctx.compensation_set), Fraction(0))
    return task_set.u_lo_lo + compensation_sum / (1 - ctx.x)


def per_switch_reduction_bound(ctx: AnalysisContext, task_set: McTaskSet, overrun_task: str) -> Fraction:
    """Variazione ammessa di u_LO allo switch del task indicato (negativa = riduzione)"""
    _check_hi_ids(ctx, [overrun_task])
    return ctx.reduction(overrun_task)


def lo_utilization(task_set: McTaskSet, levels: Mapping[str, Fraction]) -> Fraction:
    """u_LO^k = somma di z_i * u_i^LO sui task LO"""
    return sum((levels[task.id] * task.u_lo for task in task_set.lo_tasks), Fraction(0))


def _check_lo_keys(task_set: McTaskSet, levels: Mapping[str, Fraction], label: str) -> None:
    expected = {task.id for task in task_set.lo_tasks}
    keys = set(levels)
    if keys != expected:
        missing = sorted(expected - keys)
        extra = sorted(keys - expected)
        raise ValidationError(f"{label}: id mancanti {missing}, id in eccesso {extra}")


def validate_service_assignment(
    ctx: AnalysisContext,
    task_set: McTaskSet,
    prev_z: Mapping[str, Fraction],
    new_z: Mapping[str, Fraction],
    overrun_task: str,
) -> bool:
    """
    Condizione di schedulabilita' allo switch k.

    Verifica che i livelli non crescano, che u_LO^k rispetti la riduzione
    ammessa per il task in overrun e che nessun livello scenda sotto z^man.

    Args:
        ctx: Contesto dell'analisi
        task_set: Task set analizzato
        prev_z: Livelli z^{k-1} per ogni task LO
        new_z: Livelli proposti z^k per ogni task LO
        overrun_task: Task HI che ha causato lo switch

    Returns:
        bool: True se l'assegnazione e' ammissibile
    """
    _check_lo_keys(task_set, prev_z, "prev_z")
    _check_lo_keys(task_set, new_z, "new_z")
    delta = per_switch_reduction_bound(ctx, task_set, overrun_task)

    for task in task_set.lo_tasks:
        if new_z[task.id] > prev_z[task.id]:
            return False
        if new_z[task.id] < task.z_mandatory:
            return False

    return lo_utilization(task_set, new_z) <= lo_utilization(task_set, prev_z) + delta


def assignment_within_bound(
    ctx: AnalysisContext,
    task_set: McTaskSet,
    switched: Iterable[str],
    levels: Mapping[str, Fraction],
) -> bool:
    """Ammissibilita' in forma chiusa: u_LO^k entro il limite diretto e z >= z^man"""
    _check_lo_keys(task_set, levels, "levels")
    for task in task_set.lo_tasks:
        if not task.z_mandatory <= levels[task.id] <= 1:
            return False
    return lo_utilization(task_set, levels) <= direct_utilization_bound(ctx, task_set, switched)


def classic_edfvd_test(task_set: McTaskSet) -> bool:
    """
    Test del classico EDF-VD (condizione della letteratura citata).

    Vale se u_LO^LO + u_HI^HI <= 1 (riserva nel caso peggiore) oppure se,
    con x = u_HI^LO / (1 - u_LO^LO), si ha x * u_LO^LO + u_HI^HI <= 1.
    """
    if task_set.u_lo_lo >= 1:
        return False
    if task_set.u_lo_lo + task_set.u_hi_hi <= 1:
        return True
    x = task_set.u_hi_lo / (1 - task_set.u_lo_lo)
    if x >= 1:
        return False
    return x * task_set.u_lo_lo + task_set.u_hi_hi <= 1


def worst_case_bounds(ctx: AnalysisContext, task_set: McTaskSet) -> List[Fraction]:
    """
    Limite diretto nel caso peggiore per k = 0..|HI|: per ogni k si sommano
    i k discriminanti di compensazione piu' negativi.
    """
    deficits = sorted(ctx.phi[task_id] for task_id in ctx.compensation_set)
    bounds = [task_set.u_lo_lo]
    running = Fraction(0)
    for k in range(1, len(task_set.hi_tasks) + 1):
        if k <= len(deficits):
            running += deficits[k - 1]
        bounds.append(task_set.u_lo_lo + running / (1 - ctx.x))
    return bounds


def analyze(task_set: McTaskSet) -> Dict[str, Any]:
    """
    Report completo dello step off-line per il comando `analyze`.

    Args:
        task_set: Task set valido

    Returns:
        dict: x, phi, partizione, esiti dei test e limiti per k
    """
    worst_case_edf = task_set.u_lo_lo + task_set.u_hi_hi <= 1
    report: Dict[str, Any] = {
        "taskset": task_set.name,
        "utilizations": {
            "u_lo_lo": format_rational(task_set.u_lo_lo),
            "u_hi_lo": format_rational(task_set.u_hi_lo),
            "u_hi_hi": format_rational(task_set.u_hi_hi),
            "u_lo_man": format_rational(task_set.u_lo_man),
        },
        "classic_edfvd_test": classic_edfvd_test(task_set),
        "worst_case_edf": worst_case_edf,
    }
    if worst_case_edf:
        report["note"] = "schedulable by plain worst-case EDF (u_LO^LO + u_HI^HI <= 1)"

    try:
        ctx = prepare_context(task_set)
    except InfeasibleLoModeError as e:
        logger.warning(f"Analisi {task_set.name or '<anonimo>'}: {e}")
        report.update({"lo_mode_test": False, "feasibility_test": False, "schedulable": False, "error": str(e)})
        return report

    report.update({
        "x": format_rational(ctx.x),
        "phi": {task_id: format_rational(value) for task_id, value in sorted(ctx.phi.items())},
        "margin_set": sorted(ctx.margin_set),
        "compensation_set": sorted(ctx.compensation_set),
        "lo_mode_test": lo_mode_test(task_set, ctx.x),
        "feasibility_margin": format_rational(feasibility_margin(ctx, task_set)),
        "feasibility_test": feasibility_test(ctx, task_set),
        "direct_bounds": [format_rational(bound) for bound in worst_case_bounds(ctx, task_set)],
    })
    report["schedulable"] = report["lo_mode_test"] and report["feasibility_test"]

    logger.info(
        f"Analisi {task_set.name or '<anonimo>'}: x={ctx.x}, "
        f"fattibile={report['feasibility_test']}, classic={report['classic_edfvd_test']}"
    )
    return report
