"""
Model - Modello dei task mixed-criticality e aggregati di utilizzo
Tutti i tempi e gli utilizzi sono razionali esatti (fractions.Fraction).
"""

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from functools import cached_property
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple, Union

from core.errors import ValidationError

logger = logging.getLogger('model')

Rational = Union[int, str, float, Fraction]


class Criticality(str, Enum):
    LO = "LO"
    HI = "HI"


def parse_rational(value: Rational, name: str = "valore") -> Fraction:
    """
    Converte un valore in Fraction.

    Accetta interi, stringhe decimali, stringhe "p/q" e float JSON
    (convertiti passando dalla loro rappresentazione decimale).

    Args:
        value: Valore da convertire
        name: Nome del campo, usato nei messaggi d'errore

    Returns:
        Fraction: Valore razionale esatto
    """
    if isinstance(value, bool):
        raise ValidationError(f"{name}: booleano non ammesso come razionale")
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ValidationError(f"{name}: valore non finito {value}")
        return Fraction(repr(value))
    if isinstance(value, str):
        text = value.strip()
        if "/" in text:
            num, _, den = text.partition("/")
            if den.strip().startswith("-"):
                raise ValidationError(f"{name}: denominatore negativo in '{value}'")
        try:
            return Fraction(text)
        except (ValueError, ZeroDivisionError) as e:
            raise ValidationError(f"{name}: razionale non valido '{value}' ({e})")
    raise ValidationError(f"{name}: tipo non supportato {type(value).__name__}")


def format_rational(value: Fraction) -> Union[int, str]:
    """Intero se possibile, altrimenti stringa "p/q" (forma canonica JSON)"""
    value = Fraction(value)
    if value.denominator == 1:
        return value.numerator
    return f"{value.numerator}/{value.denominator}"


def _violation(code: str, message: str, task_id: Optional[str] = None) -> Dict:
    entry = {"code": code, "message": message}
    if task_id is not None:
        entry["task"] = task_id
    return entry


@dataclass(frozen=True)
class McTask:
    """Task sporadico MC con deadline implicita (deadline relativa = periodo)"""
    id: str
    period: Fraction
    criticality: Criticality
    wcet_lo: Fraction
    wcet_hi: Optional[Fraction] = None
    z_mandatory: Fraction = Fraction(0)

    @property
    def is_hi(self) -> bool:
        return self.criticality == Criticality.HI

    @property
    def u_lo(self) -> Fraction:
        return self.wcet_lo / self.period

    @property
    def u_hi(self) -> Fraction:
        if self.wcet_hi is None:
            raise ValidationError(f"Il task {self.id} non ha C^HI")
        return self.wcet_hi / self.period

    def violations(self) -> List[Dict]:
        """
        Elenca gli invarianti violati dal task.

        Returns:
            list: Violazioni (vuota se il task e' valido)
        """
        found = []
        if self.period <= 0:
            found.append(_violation("period_positive", "T > 0 required", self.id))
        if self.wcet_lo <= 0:
            found.append(_violation("wcet_lo_positive", "C^LO > 0 required", self.id))
        if self.period > 0 and self.wcet_lo > self.period:
            found.append(_violation("wcet_lo_le_period", "C^LO <= T required", self.id))

        if self.is_hi:
            if self.wcet_hi is None:
                found.append(_violation("hi_wcet_missing", "C^HI required for HI task", self.id))
            else:
                if not self.wcet_lo < self.wcet_hi:
                    found.append(_violation("wcet_order", "C^LO < C^HI required", self.id))
                if self.wcet_hi > self.period:
                    found.append(_violation("wcet_hi_le_period", "C^HI <= T required", self.id))
            if self.z_mandatory != 0:
                found.append(_violation("z_mandatory_on_hi", "z^man only for LO tasks", self.id))
        else:
            if self.wcet_hi is not None:
                found.append(_violation("lo_wcet_hi_present", "C^HI must be absent for LO task", self.id))
            if not 0 <= self.z_mandatory <= 1:
                found.append(_violation("z_mandatory_range", "z^man ∈ [0,1] required", self.id))
        return found

    def to_dict(self) -> Dict[str, Any]:
        data = {
            "id": self.id,
            "period": format_rational(self.period),
            "criticality": self.criticality.value,
            "wcet_lo": format_rational(self.wcet_lo),
        }
        if self.wcet_hi is not None:
            data["wcet_hi"] = format_rational(self.wcet_hi)
        if not self.is_hi:
            data["z_mandatory"] = format_rational(self.z_mandatory)
        return data


@dataclass(frozen=True)
class McTaskSet:
    """Task set con gli aggregati di utilizzo calcolati in modo esatto"""
    tasks: Tuple[McTask, ...]
    u_lo_lo: Fraction
    u_hi_lo: Fraction
    u_hi_hi: Fraction
    u_lo_man: Fraction
    name: str = field(default="", compare=False)

    @cached_property
    def by_id(self) -> Dict[str, McTask]:
        return {task.id: task for task in self.tasks}

    @cached_property
    def hi_tasks(self) -> Tuple[McTask, ...]:
        return tuple(task for task in self.tasks if task.is_hi)

    @cached_property
    def lo_tasks(self) -> Tuple[McTask, ...]:
        return tuple(task for task in self.tasks if not task.is_hi)

    def task(self, task_id: str) -> McTask:
        try:
            return self.by_id[task_id]
        except KeyError:
            raise ValidationError(f"Task sconosciuto: {task_id}")

    def hyperperiod(self) -> Fraction:
        """Minimo comune multiplo (razionale) dei periodi"""
        numerator = 1
        denominator = 0
        for task in self.tasks:
            numerator = math.lcm(numerator, task.period.numerator)
            denominator = math.gcd(denominator, task.period.denominator)
        return Fraction(numerator, denominator or 1)

    def with_mandatory(self, levels: Mapping[str, Rational]) -> "McTaskSet":
        """
        Restituisce una copia del task set con i livelli obbligatori sovrascritti

        Args:
            levels: Mappa id task LO -> z^man

        Returns:
            McTaskSet: Nuovo task set con aggregati ricalcolati
        """
        parsed = {}
        for task_id, value in levels.items():
            task = self.task(task_id)
            if task.is_hi:
                raise ValidationError(f"z^man non ammesso per il task HI {task_id}")
            parsed[task_id] = parse_rational(value, f"z_mandatory[{task_id}]")
        tasks = [
            replace(task, z_mandatory=parsed[task.id]) if task.id in parsed else task
            for task in self.tasks
        ]
        return compute_utilizations(tasks, name=self.name)

    def to_dict(self) -> Dict[str, Any]:
        return {"tasks": [task.to_dict() for task in self.tasks]}

    def fingerprint(self) -> str:
        """Impronta sha256 della forma JSON canonica"""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def compute_utilizations(tasks: Iterable[McTask], name: str = "") -> McTaskSet:
    """
    Costruisce il task set calcolando i quattro aggregati di utilizzo.

    Args:
        tasks: Collezione di McTask
        name: Etichetta opzionale (es. nome del file)

    Returns:
        McTaskSet: Task set con u_LO^LO, u_HI^LO, u_HI^HI e u_LO^man
    """
    tasks = tuple(tasks)
    if not tasks:
        raise ValidationError("Task set vuoto", [_violation("empty_set", "at least one task required")])

    seen = set()
    duplicates = []
    for task in tasks:
        if task.id in seen:
            duplicates.append(_violation("duplicate_id", f"duplicate task id {task.id}", task.id))
        seen.add(task.id)
    if duplicates:
        raise ValidationError("Identificativi di task duplicati", duplicates)
    zero_periods = [_violation("period_positive", "T > 0 required", t.id) for t in tasks if t.period == 0]
    if zero_periods:
        raise ValidationError("Periodo nullo", zero_periods)

    u_lo_lo = sum((t.u_lo for t in tasks if not t.is_hi), Fraction(0))
    u_hi_lo = sum((t.u_lo for t in tasks if t.is_hi), Fraction(0))
    u_hi_hi = sum((t.wcet_hi / t.period for t in tasks if t.is_hi and t.wcet_hi is not None), Fraction(0))
    u_lo_man = sum((t.z_mandatory * t.u_lo for t in tasks if not t.is_hi), Fraction(0))

    return McTaskSet(tasks, u_lo_lo, u_hi_lo, u_hi_hi, u_lo_man, name=name)


def validate_task_set(task_set: McTaskSet) -> List[Dict]:
    """
    Verifica tutti gli invarianti del task set.

    Args:
        task_set: Task set da verificare

    Returns:
        list: Violazioni trovate; vuota se e solo se il task set e' valido
    """
    report = []
    if not task_set.tasks:
        report.append(_violation("empty_set", "at least one task required"))

    seen = set()
    for task in task_set.tasks:
        if task.id in seen:
            report.append(_violation("duplicate_id", f"duplicate task id {task.id}", task.id))
        seen.add(task.id)
        report.extend(task.violations())

    # Gli aggregati devono coincidere con il ricalcolo
    if task_set.tasks and not any(v["code"] == "period_positive" for v in report):
        expected = compute_utilizations(_unique(task_set.tasks))
        for attr in ("u_lo_lo", "u_hi_lo", "u_hi_hi", "u_lo_man"):
            if getattr(expected, attr) != getattr(task_set, attr):
                report.append(_violation("aggregate_mismatch", f"{attr} differs from recomputation"))

    if report:
        logger.info(f"Task set {task_set.name or '<anonimo>'}: {len(report)} violazioni")
    return report


def _unique(tasks: Iterable[McTask]) -> List[McTask]:
    seen = set()
    unique = []
    for task in tasks:
        if task.id not in seen:
            seen.add(task.id)
            unique.append(task)
    return unique


def require_valid(task_set: McTaskSet) -> McTaskSet:
    """Solleva ValidationError se il task set viola qualche invariante"""
    report = validate_task_set(task_set)
    if report:
        details = "; ".join(f"{v.get('task', '-')}: {v['message']}" for v in report)
        raise ValidationError(f"Task set non valido: {details}", report)
    return task_set


def task_from_dict(data: Mapping[str, Any]) -> McTask:
    """Costruisce un McTask dalla sua forma JSON"""
    if not isinstance(data, Mapping):
        raise ValidationError(f"Task non valido: atteso oggetto, trovato {type(data).__name__}")
    try:
        task_id = str(data["id"])
        raw_criticality = str(data["criticality"]).upper()
        period = parse_rational(data["period"], "period")
        wcet_lo = parse_rational(data["wcet_lo"], "wcet_lo")
    except KeyError as e:
        raise ValidationError(f"Campo obbligatorio mancante nel task: {e}")

    try:
        criticality = Criticality(raw_criticality)
    except ValueError:
        raise ValidationError(f"Criticita' non valida per {task_id}: {data['criticality']}")

    wcet_hi = data.get("wcet_hi")
    return McTask(
        id=task_id,
        period=period,
        criticality=criticality,
        wcet_lo=wcet_lo,
        wcet_hi=parse_rational(wcet_hi, "wcet_hi") if wcet_hi is not None else None,
        z_mandatory=parse_rational(data.get("z_mandatory", 0), "z_mandatory"),
    )


def task_set_from_dict(data: Mapping[str, Any], name: str = "") -> McTaskSet:
    """Costruisce il task set dalla forma JSON {"tasks": [...]}"""
    if not isinstance(data, Mapping) or "tasks" not in data:
        raise ValidationError("Formato task set non valido: manca la chiave 'tasks'")
    if not isinstance(data["tasks"], list):
        raise ValidationError("Formato task set non valido: 'tasks' deve essere una lista")
    return compute_utilizations([task_from_dict(item) for item in data["tasks"]], name=name)
