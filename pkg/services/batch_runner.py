"""
Batch Runner - Esecuzione parallela di lavori indipendenti
Ogni lavoro e' una funzione pura a livello di modulo (serializzabile) con i
suoi argomenti; gli esiti tornano nell'ordine di sottomissione.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, Dict, Iterable, List, Tuple

logger = logging.getLogger('batch_runner')

Task = Tuple[Callable[..., Dict[str, Any]], tuple]


def _guarded(func: Callable[..., Dict[str, Any]], args: tuple) -> Dict[str, Any]:
    """Cattura l'eccezione di un singolo lavoro nel dict di esito"""
    try:
        return func(*args)
    except Exception as e:
        logger.error(f"Errore nel lavoro {func.__name__}{args[:1]}: {str(e)}")
        return {"success": False, "error_type": type(e).__name__, "error": f"{type(e).__name__}: {e}"}


class BatchRunner:
    def __init__(self, config: Dict[str, Any] = None):
        """
        Inizializza il runner

        Args:
            config: Configurazione; `jobs` e' il numero di processi (1 = in-process)
        """
        config = config or {}
        self.jobs = max(1, int(config.get("jobs", 1)))
        logger.info(f"BatchRunner inizializzato con {self.jobs} processi")

    def run(self, tasks: Iterable[Task]) -> List[Dict[str, Any]]:
        """
        Esegue i lavori e restituisce gli esiti nell'ordine di ingresso.

        Un lavoro fallito produce {"success": False, "error": ...} senza
        interrompere gli altri.

        Args:
            tasks: Coppie (funzione, argomenti)

        Returns:
            list: Esiti dei lavori
        """
        tasks = list(tasks)
        if self.jobs == 1 or len(tasks) <= 1:
            return [_guarded(func, args) for func, args in tasks]

        with ProcessPoolExecutor(max_workers=self.jobs) as pool:
            futures = [pool.submit(_guarded, func, args) for func, args in tasks]
            results = []
            for future in futures:
                try:
                    results.append(future.result())
                except Exception as e:
                    logger.error(f"Errore nel pool di processi: {str(e)}")
                    results.append({"success": False, "error": f"{type(e).__name__}: {e}"})
        return results
