"""
Main - Punto di ingresso a riga di comando
Sottocomandi: analyze, generate, trace, simulate, profile, experiment, replay.
Codici di uscita: 0 successo, 1 test negativo (solo analyze), 2 errore di
input, 3 violazione interna (trap di ammissibilita', determinismo).
"""

import argparse
import json
import logging
import os
import sys
from typing import Any, Dict, List, Optional

import numpy as np

from core import __version__
from core.errors import (
    AdmissibilityError,
    DeterminismError,
    FmcError,
    InfeasibleTuningError,
    ValidationError,
)
from core.model import parse_rational, require_valid
from core.schedulability import analyze, prepare_context
from core.simulator import find_divergence, replay_check, simulate
from core.tuning import STRATEGIES
from services.experiments import ExperimentConfig, degradation_profile, is_accepted, profile_columns, run_experiment
from services.tracegen import (
    RNG_ALGORITHM,
    STREAM_TASKSET,
    STREAM_TRACE,
    GeneratorParams,
    derive_seed,
    dump_trace,
    generate_task_set,
    generate_trace,
    load_trace,
)
from settings import load_settings
from storage.file_manager import (
    NdjsonWriter,
    ResultStore,
    dump_task_set,
    dumps_canonical,
    load_task_set,
    read_json,
    write_csv,
    write_json,
)

logger = logging.getLogger('main')

EXIT_OK = 0
EXIT_NEGATIVE = 1
EXIT_INPUT = 2
EXIT_INTERNAL = 3

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def setup_logging(config: Dict, verbose: bool, log_file: Optional[str]) -> None:
    """Configurazione unica del logging: stderr e file opzionale"""
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    log_file = log_file or config.get("log_file")
    if log_file:
        handlers.append(logging.FileHandler(log_file))
    level = logging.DEBUG if verbose else getattr(logging, config.get("log_level", "INFO"), logging.INFO)
    logging.basicConfig(level=level, format=LOG_FORMAT, handlers=handlers, force=True)


def _emit(data, out: Optional[str]) -> None:
    if out:
        write_json(out, data)
    else:
        sys.stdout.write(dumps_canonical(data))


def _parse_z_man(items: Optional[List[str]]) -> Dict[str, Any]:
    """Livelli z^man da coppie ID=Z, da un oggetto JSON in linea o da un file JSON"""
    items = items or []
    if len(items) == 1 and "=" not in items[0]:
        text = items[0].strip()
        if text.startswith("{"):
            try:
                data = json.loads(text)
            except json.JSONDecodeError as e:
                raise ValidationError(f"--z-man: JSON non valido ({e})")
        elif os.path.isfile(text):
            data = read_json(text)
        else:
            raise ValidationError(f"--z-man richiede id=valore, un oggetto JSON o un file JSON, ricevuto '{text}'")
        if not isinstance(data, dict):
            raise ValidationError("--z-man: il JSON deve essere un oggetto {id: z}")
        return {str(task_id): value for task_id, value in data.items()}

    levels = {}
    for item in items:
        task_id, sep, value = item.partition("=")
        if not sep:
            raise ValidationError(f"--z-man richiede id=valore, ricevuto '{item}'")
        levels[task_id] = value
    return levels


def _load_valid_set(args):
    task_set = load_task_set(args.taskset)
    levels = {}
    if getattr(args, "u_man", None) is not None:
        u_man = parse_rational(args.u_man, "--u-man")
        if task_set.u_lo_lo == 0:
            raise ValidationError("--u-man richiede almeno un task LO")
        # Livello obbligatorio uniforme che realizza u_LO^man richiesto
        levels = {task.id: u_man / task_set.u_lo_lo for task in task_set.lo_tasks}
    levels.update(_parse_z_man(getattr(args, "z_man", None)))
    if levels:
        task_set = task_set.with_mandatory(levels)
    return require_valid(task_set)


# =================== SOTTOCOMANDI ===================

def cmd_analyze(args, config: Dict) -> int:
    task_set = _load_valid_set(args)
    report = analyze(task_set)

    if args.format == "text":
        lines = [f"{key}: {value}" for key, value in report.items()]
        sys.stdout.write("\n".join(lines) + "\n")
    else:
        _emit(report, args.out)
    return EXIT_OK if report["schedulable"] else EXIT_NEGATIVE


def cmd_generate(args, config: Dict) -> int:
    os.makedirs(args.out, exist_ok=True)
    for index in range(args.count):
        params = GeneratorParams(
            u_bound=args.u_bound,
            p_cri=args.p_cri,
            min_hi_tasks=args.min_hi,
            exact_hi_tasks=args.exact_hi,
            seed=derive_seed(args.seed, 0, index, STREAM_TASKSET),
            retry_budget=config.get("retry_budget", 100000),
        )
        task_set = generate_task_set(params, name=f"set_{index:04d}")
        dump_task_set(task_set, os.path.join(args.out, f"set_{index:04d}.json"))
    logger.info(f"Generati {args.count} task set in {args.out}")
    return EXIT_OK


def cmd_trace(args, config: Dict) -> int:
    task_set = _load_valid_set(args)
    horizon = args.horizon or config.get("horizon", 1000000)
    overrun_prob = config.get("overrun_prob", 0.1) if args.overrun_prob is None else args.overrun_prob
    trace = generate_trace(task_set, horizon, overrun_prob, args.seed, sporadic_slack=args.sporadic_slack)
    dump_trace(trace, args.out)
    logger.info(f"Trace con {len(trace.jobs)} job scritta in {args.out}")
    return EXIT_OK


def _check_strategy(task_set, strategy: str, force: bool) -> None:
    if not is_accepted(task_set, strategy):
        if not force:
            raise ValidationError(f"Il task set non supera il test off-line della strategia {strategy}")
        logger.warning(f"Strategia {strategy} su un set non accettato (--force)")


def cmd_simulate(args, config: Dict) -> int:
    task_set = _load_valid_set(args)
    _check_strategy(task_set, args.strategy, args.force)
    ctx = prepare_context(task_set)
    trace = load_trace(args.trace)

    if args.emit_events:
        with NdjsonWriter(args.emit_events) as sink:
            report = simulate(task_set, ctx, trace, args.strategy, event_sink=sink)
    else:
        report = simulate(task_set, ctx, trace, args.strategy)

    if args.check_replay and not replay_check(task_set, ctx, trace, args.strategy, report):
        raise DeterminismError("La riesecuzione non riproduce il report")

    _emit(report.to_dict(), args.report)
    if report.hi_deadline_misses:
        logger.error(f"{report.hi_deadline_misses} deadline HI mancate")
    return EXIT_OK


def cmd_replay(args, config: Dict) -> int:
    task_set = _load_valid_set(args)
    ctx = prepare_context(task_set)
    trace = load_trace(args.trace)
    expected = read_json(args.report)
    actual = simulate(task_set, ctx, trace, args.strategy).to_dict()
    divergence = find_divergence(expected, actual)
    if divergence is not None:
        raise DeterminismError(f"Report non riprodotto: {divergence}")
    logger.info("Report riprodotto in modo identico")
    return EXIT_OK


def cmd_profile(args, config: Dict) -> int:
    task_set = _load_valid_set(args)
    _check_strategy(task_set, args.strategy, False)
    ctx = prepare_context(task_set)
    horizon = args.horizon or config.get("horizon", 1000000)
    overrun_prob = config.get("overrun_prob", 0.1) if args.overrun_prob is None else args.overrun_prob
    traces = (
        generate_trace(task_set, horizon, overrun_prob, derive_seed(args.seed, 0, index, STREAM_TRACE))
        for index in range(args.traces)
    )
    rows = degradation_profile(task_set, ctx, traces, args.strategy)
    write_csv(args.out, rows, profile_columns())
    return EXIT_OK


def cmd_experiment(args, config: Dict) -> int:
    data = read_json(args.config)
    if not isinstance(data, dict):
        raise ValidationError(f"{args.config}: la configurazione deve essere un oggetto JSON")
    if args.jobs:
        data["jobs"] = args.jobs
    else:
        data.setdefault("jobs", config.get("jobs", 1))
    data.setdefault("retry_budget", config.get("retry_budget", 100000))
    experiment = ExperimentConfig.from_dict(data)
    result = run_experiment(experiment)

    store = ResultStore(args.out)
    store.save_summary(result.summary)
    store.save_degradation(result.degradation)
    store.save_result(result.to_dict())

    misses = sum(row["hi_deadline_misses"] for row in result.summary)
    if misses:
        logger.error(f"Esperimento concluso con {misses} deadline HI mancate")
    if result.internal_failures:
        for failure in result.internal_failures:
            logger.error(
                f"Violazione interna (u_B={failure['u_bound']}, set {failure['index']}): {failure['error']}"
            )
        return EXIT_INTERNAL
    return EXIT_OK


# =================== PARSER ===================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fmc",
        description="Analisi di schedulabilita' e simulazione FMC-EDF-VD",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("--verbose", action="store_true", help="Log a livello DEBUG")
    parser.add_argument("--log-file", help="File di log aggiuntivo")
    parser.add_argument(
        "--version",
        action="version",
        version=f"%(prog)s {__version__} (rng numpy {RNG_ALGORITHM}, numpy {np.__version__})",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def with_taskset(p):
        p.add_argument("--taskset", required=True, help="File JSON del task set")
        p.add_argument(
            "--z-man", nargs="*", metavar="ID=Z",
            help="Sovrascrive z^man dei task LO: coppie ID=Z, oggetto JSON o file JSON",
        )
        p.add_argument("--u-man", help="u_LO^man distribuito uniformemente sui task LO")

    p = sub.add_parser("analyze", help="Test off-line")
    with_taskset(p)
    p.add_argument("--format", choices=["json", "text"], default="json")
    p.add_argument("--out", help="File JSON di uscita (default stdout)")
    p.set_defaults(handler=cmd_analyze)

    p = sub.add_parser("generate", help="Genera task set casuali")
    p.add_argument("--u-bound", required=True, help="Limite u_B (razionale o decimale)")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--p-cri", type=float, default=0.5)
    p.add_argument("--min-hi", type=int, default=3)
    p.add_argument("--exact-hi", type=int)
    p.add_argument("--out", required=True, help="Directory di uscita")
    p.set_defaults(handler=cmd_generate)

    p = sub.add_parser("trace", help="Genera una trace di carico")
    with_taskset(p)
    p.add_argument("--horizon", type=int)
    p.add_argument("--overrun-prob", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sporadic-slack", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_trace)

    p = sub.add_parser("simulate", help="Simula una trace")
    with_taskset(p)
    p.add_argument("--trace", required=True)
    p.add_argument("--strategy", choices=sorted(STRATEGIES), default="drop")
    p.add_argument("--report", help="File JSON del report (default stdout)")
    p.add_argument("--emit-events", help="File NDJSON del log degli eventi")
    p.add_argument("--check-replay", action="store_true", help="Verifica il determinismo rieseguendo")
    p.add_argument("--force", action="store_true", help="Simula anche se il test off-line fallisce")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("replay", help="Verifica che un report sia riproducibile")
    with_taskset(p)
    p.add_argument("--trace", required=True)
    p.add_argument("--strategy", choices=sorted(STRATEGIES), default="drop")
    p.add_argument("--report", required=True)
    p.set_defaults(handler=cmd_replay)

    p = sub.add_parser("profile", help="Profilo di degradazione per numero di switch")
    with_taskset(p)
    p.add_argument("--strategy", choices=sorted(STRATEGIES), default="uniform")
    p.add_argument("--horizon", type=int)
    p.add_argument("--overrun-prob", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--traces", type=int, default=1)
    p.add_argument("--out", required=True, help="File CSV di uscita")
    p.set_defaults(handler=cmd_profile)

    p = sub.add_parser("experiment", help="Esperimento batch")
    p.add_argument("--config", required=True, help="File JSON di configurazione")
    p.add_argument("--out", required=True, help="Directory dei risultati")
    p.add_argument("--jobs", type=int, help="Processi paralleli")
    p.set_defaults(handler=cmd_experiment)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Esegue il sottocomando richiesto.

    Returns:
        int: Codice di uscita
    """
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        config = load_settings()
    except ValidationError as e:
        sys.stderr.write(f"Configurazione non valida: {e}\n")
        return EXIT_INPUT
    setup_logging(config, args.verbose, args.log_file)

    try:
        return args.handler(args, config)
    except (AdmissibilityError, DeterminismError, InfeasibleTuningError) as e:
        logger.error(f"Violazione interna: {e}")
        return EXIT_INTERNAL
    except ValidationError as e:
        logger.error(f"Input non valido: {e}")
        for violation in e.violations:
            logger.error(f"  {violation.get('task', '-')}: {violation.get('code')} - {violation.get('message')}")
        return EXIT_INPUT
    except FmcError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_INPUT
    except OSError as e:
        logger.error(f"Errore di file: {e}")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
