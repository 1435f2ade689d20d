"""
File Manager - Persistenza su file di task set, trace, report ed esiti
JSON per i dati annidati, NDJSON per il log degli eventi, CSV per i riepiloghi.
"""

import json
import logging
import os
from typing import Any, Dict, Iterable, List, Optional, Union

import pandas as pd

from core.errors import ValidationError
from core.model import McTaskSet, task_set_from_dict

logger = logging.getLogger('file_manager')

CSV_FLOAT_FORMAT = "%.6g"


# =================== JSON ===================

def read_json(path: str) -> Any:
    """
    Legge un file JSON.

    Args:
        path: Percorso del file

    Returns:
        Il contenuto decodificato
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ValidationError(f"JSON non valido in {path}: {e}")


def dumps_canonical(data: Any) -> str:
    """Forma JSON stabile: stesse strutture producono gli stessi byte"""
    return json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def write_json(path: str, data: Any) -> None:
    """Scrive un file JSON in forma canonica, creando la directory se serve"""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps_canonical(data))
    logger.debug(f"Scritto {path}")


# =================== TASK SET ===================

def load_task_set(source: Union[str, Dict[str, Any]]) -> McTaskSet:
    """
    Carica un task set da file o da un dict gia' decodificato.

    Args:
        source: Percorso del file JSON oppure dict {"tasks": [...]}

    Returns:
        McTaskSet: Task set (non ancora validato)
    """
    if isinstance(source, str):
        name = os.path.splitext(os.path.basename(source))[0]
        return task_set_from_dict(read_json(source), name=name)
    return task_set_from_dict(source)


def dump_task_set(task_set: McTaskSet, path: str) -> None:
    write_json(path, task_set.to_dict())


# =================== EVENT LOG ===================

class NdjsonWriter:
    """Scrive un oggetto JSON per riga; usabile come event sink del simulatore"""

    def __init__(self, path: str):
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        self.path = path
        self.count = 0
        self._file = open(path, "w", encoding="utf-8")

    def __call__(self, record: Dict[str, Any]) -> None:
        self._file.write(json.dumps(record, sort_keys=True, separators=(",", ":")))
        self._file.write("\n")
        self.count += 1

    def close(self) -> None:
        if not self._file.closed:
            self._file.close()
            logger.info(f"Log eventi: {self.count} eventi scritti in {self.path}")

    def __enter__(self) -> "NdjsonWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_ndjson(path: str) -> List[Dict[str, Any]]:
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


# =================== CSV ===================

def write_csv(path: str, rows: Iterable[Dict[str, Any]], columns: List[str]) -> pd.DataFrame:
    """
    Scrive una tabella CSV con i float a 6 cifre significative.

    Args:
        path: Percorso del file
        rows: Righe come dict
        columns: Ordine delle colonne

    Returns:
        pd.DataFrame: La tabella scritta
    """
    frame = pd.DataFrame(list(rows), columns=columns)
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)
    logger.debug(f"Scritto {path} ({len(frame)} righe)")
    return frame


# =================== ESPERIMENTI ===================

class ResultStore:
    """Directory di uscita di un esperimento: summary.csv, degradation.csv, result.json"""

    SUMMARY_COLUMNS = ["u_bound", "strategy", "acceptance_ratio", "mean_pfj", "mean_ctx_switches"]
    DEGRADATION_COLUMNS = ["strategy", "u_bound", "k", "min", "q1", "median", "q3", "max", "job_share"]

    def __init__(self, out_dir: str):
        self.out_dir = out_dir
        os.makedirs(out_dir, exist_ok=True)
        logger.info(f"ResultStore inizializzato in {out_dir}")

    def path(self, filename: str) -> str:
        return os.path.join(self.out_dir, filename)

    def save_summary(self, rows: Iterable[Dict[str, Any]]) -> pd.DataFrame:
        return write_csv(self.path("summary.csv"), rows, self.SUMMARY_COLUMNS)

    def save_degradation(self, rows: Iterable[Dict[str, Any]]) -> pd.DataFrame:
        return write_csv(self.path("degradation.csv"), rows, self.DEGRADATION_COLUMNS)

    def save_result(self, data: Dict[str, Any]) -> None:
        write_json(self.path("result.json"), data)

    def load_summary(self) -> Optional[pd.DataFrame]:
        path = self.path("summary.csv")
        if not os.path.exists(path):
            return None
        return pd.read_csv(path)
