"""
Settings - Configurazione da variabili d'ambiente (.env)
"""

import logging
import os
from typing import Any, Dict

from dotenv import load_dotenv

from core.errors import ValidationError

logger = logging.getLogger('settings')

DEFAULTS = {
    "FMC_LOG_LEVEL": "INFO",
    "FMC_LOG_FILE": None,
    "FMC_DEFAULT_HORIZON": "1000000",
    "FMC_DEFAULT_OVERRUN_PROB": "0.1",
    "FMC_JOBS": "1",
    "FMC_RETRY_BUDGET": "100000",
}


def _number(key: str, cast):
    raw = os.getenv(key, DEFAULTS[key])
    try:
        return cast(raw)
    except (TypeError, ValueError):
        raise ValidationError(f"Valore non valido per {key}: {raw}")


def load_settings() -> Dict[str, Any]:
    """
    Carica il file .env (se presente) e restituisce la configurazione.

    Returns:
        dict: Chiavi in minuscolo senza prefisso (log_level, horizon, ...)
    """
    load_dotenv()

    config = {
        "log_level": os.getenv("FMC_LOG_LEVEL", DEFAULTS["FMC_LOG_LEVEL"]).upper(),
        "log_file": os.getenv("FMC_LOG_FILE") or None,
        "horizon": _number("FMC_DEFAULT_HORIZON", int),
        "overrun_prob": _number("FMC_DEFAULT_OVERRUN_PROB", float),
        "jobs": _number("FMC_JOBS", int),
        "retry_budget": _number("FMC_RETRY_BUDGET", int),
    }

    if config["jobs"] < 1:
        raise ValidationError("FMC_JOBS deve essere almeno 1")
    if not 0 <= config["overrun_prob"] <= 1:
        raise ValidationError("FMC_DEFAULT_OVERRUN_PROB deve appartenere a [0,1]")

    logger.debug(f"Configurazione caricata: {config}")
    return config
