"""
Errors - Gerarchia delle eccezioni della libreria FMC
Le eccezioni di validazione trasportano l'elenco delle violazioni rilevate.
"""

from typing import Dict, List, Optional


class FmcError(Exception):
    """Radice di tutte le eccezioni della libreria"""


class ValidationError(FmcError):
    """Dati di ingresso non validi (task, task set, file di input)"""

    def __init__(self, message: str, violations: Optional[List[Dict]] = None):
        super().__init__(message)
        self.violations = violations or []


class TraceMismatchError(ValidationError):
    """Trace non compatibile con il task set"""


class ModelError(FmcError):
    """Il task set non ha la forma richiesta dall'analisi (es. nessun task HI)"""


class InfeasibleLoModeError(FmcError):
    """u_LO^LO >= 1: nessun fattore x rende schedulabile il modo LO"""


class NoLoTasksError(FmcError):
    """La regolazione del livello di servizio richiede almeno un task LO"""


class GenerationError(FmcError):
    """Budget di tentativi esaurito durante la generazione casuale"""


class InfeasibleTuningError(FmcError):
    """Il dropping-off non riesce a liberare la riduzione richiesta"""


class AdmissibilityError(FmcError):
    """Una strategia ha prodotto un'assegnazione che viola la condizione di switch"""


class DeterminismError(FmcError):
    """Due esecuzioni con gli stessi ingressi hanno prodotto risultati diversi"""
