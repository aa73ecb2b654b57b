from __future__ import annotations

import os
import sys
import json
import time
import logging
import argparse
import traceback

from pathlib import Path
from typing import Dict, Any, Optional, Callable, NamedTuple, Sequence

import pandas as pd

from . import db
from . import globals as g
from .clustering import cluster_routes
from .domain import instance_hash, load_instance, save_instance, with_time_step
from .errors import EvselcaError, InputError
from .evaluator import evaluate_plan, occupancy_table
from .exact import emit_lp, read_solution, replay, build_milp
from .ga import validate_config
from .harness import METHODS, gen_instance, load_sweep_spec, run_sweep, solve_method, write_sweep_csv
from .transform import build_cluster_instance, explain_sets
from .types import *

functions = ['build_parser', 'dispatch', 'main', 'solution_to_dict', 'plan_from_dict']

__all__ = functions

logger = logging.getLogger(__name__)

DB_NAME = 'evselca_runs.db'


class Context(NamedTuple):
    out_dir: Path
    get_connection: Optional[SQLite3ConnectionGenerator]
    run_id: int


class Prepared(NamedTuple):
    """Inputs loaded and checked; `run` writes the artifacts and returns the exit status."""
    instance: Optional[Instance]
    run: Callable[[Context], int]


def _env(name: str, cast: Callable[[str], Any], default: Any = None) -> Any:
    raw = os.environ.get(g.ENV_PREFIX + name)
    if raw is None or raw == '':
        return default
    try:
        return cast(raw)
    except ValueError:
        raise InputError(f'cannot read {g.ENV_PREFIX}{name}={raw!r}')

def _optional_int(raw: str) -> Optional[int]:
    return None if raw.lower() == 'none' else int(raw)

def build_parser() -> argparse.ArgumentParser:
    """
    Builds the command-line parser.

    Every shared flag falls back to an `EVSELCA_<FLAG>` environment variable
    (`EVSELCA_SEED`, `EVSELCA_THREADS`, ...); an explicit flag wins.
    """
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--out-dir', type=Path, default=_env('OUT_DIR', Path, Path('out')), help='Directory for artifacts and the run ledger.')
    common.add_argument('--seed', type=int, default=_env('SEED', int, 0))
    common.add_argument('--threads', type=int, default=_env('THREADS', int, os.cpu_count() or 1))
    common.add_argument('--time-limit-s', type=float, default=_env('TIME_LIMIT_S', float))
    common.add_argument('--t-delta', type=float, default=_env('T_DELTA', float), help='Time step in minutes; overrides the instance.')
    common.add_argument('--intra-cap-frac', type=float, default=_env('INTRA_CAP_FRAC', float, g.INTRA_CAP_FRAC))
    common.add_argument('--no-db', action='store_true', default=_env('NO_DB', lambda s: s.lower() in ('1', 'true', 'yes'), False))
    common.add_argument('-v', '--verbose', action='count', default=0)
    common.add_argument('--quiet', action='store_true')

    instance = argparse.ArgumentParser(add_help=False)
    instance.add_argument('--instance', type=Path, required=_env('INSTANCE', Path) is None, default=_env('INSTANCE', Path))

    ga = argparse.ArgumentParser(add_help=False)
    defaults = GaConfig()
    ga.add_argument('--pop-size', type=int, default=_env('POP_SIZE', int, defaults.pop_size))
    ga.add_argument('--iterations', type=int, default=_env('ITERATIONS', int, defaults.iterations))
    ga.add_argument('--parents', type=int, default=_env('PARENTS', int, defaults.parents))
    ga.add_argument('--mutate-fraction', type=float, default=_env('MUTATE_FRACTION', float, defaults.mutate_fraction))
    ga.add_argument('--no-charge-prob', type=float, default=_env('NO_CHARGE_PROB', float, defaults.no_charge_prob))
    ga.add_argument('--step-lower', type=int, default=_env('STEP_LOWER', int, defaults.step_lower))
    ga.add_argument('--step-upper', type=_optional_int, default=_env('STEP_UPPER', _optional_int, defaults.step_upper))
    ga.add_argument('--temperature', type=float, default=_env('TEMPERATURE', float, defaults.temperature))
    ga.add_argument('--charger-weights', type=float, nargs='+', default=None)

    limits = argparse.ArgumentParser(add_help=False)
    caps = Limits()
    limits.add_argument('--max-space', type=int, default=_env('MAX_SPACE', int, caps.max_space))
    limits.add_argument('--max-lp-variables', type=int, default=_env('MAX_LP_VARIABLES', int, caps.max_lp_variables))

    parser = argparse.ArgumentParser(prog='evselca', description='EV charger location and capacity allocation on fixed freight routes.')
    parser.add_argument('--version', action='version', version=f'%(prog)s {g.VERSION}')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('gen-instance', parents=[common], help='Generate a synthetic instance.')
    p.add_argument('--routes', type=int, default=3)
    p.add_argument('--stops', type=int, default=4)
    p.add_argument('--facilities', type=int, default=3)
    p.add_argument('--extent', type=float, default=5.0)

    sub.add_parser('cluster', parents=[common, instance], help='Split routes into the fewest clusters.')

    p = sub.add_parser('evaluate', parents=[common, instance], help='Evaluate a recharge plan and charger counts.')
    p.add_argument('--plan', type=Path, required=True)
    p.add_argument('--explain', action='store_true', help='Also dump the feasible facility and time sets.')
    p.add_argument('--rounded-deficit', action='store_true')
    p.add_argument('--strict-occupancy', action='store_true')

    p = sub.add_parser('solve', parents=[common, instance, ga, limits], help='Solve with the GA, the exact oracle or the hybrid.')
    p.add_argument('--method', choices=METHODS, default=_env('METHOD', str, 'ga'))

    p = sub.add_parser('export-milp', parents=[common, instance, limits], help='Write the model in LP format.')
    p.add_argument('--out', type=Path, default=None, help='Defaults to <out-dir>/model.lp.')

    p = sub.add_parser('replay', parents=[common, instance, limits], help='Check an external solver point against the model.')
    p.add_argument('--solution', type=Path, required=True)
    p.add_argument('--strict-occupancy', action='store_true')

    p = sub.add_parser('sweep', parents=[common, limits], help='Run a sensitivity sweep.')
    p.add_argument('--spec', type=Path, required=True)
    p.add_argument('--instance', type=Path, default=_env('INSTANCE', Path), help='Overrides the instance named in the sweep file.')
    p.add_argument('--out', type=Path, default=None, help='Defaults to <out-dir>/results.csv.')
    p.add_argument('--replications', type=int, default=None)

    return parser

def _configure_logging(args: argparse.Namespace) -> None:
    level = logging.ERROR if args.quiet else (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format='%(asctime)s %(levelname)s %(name)s: %(message)s', force=True)

def _write_json(path: Path, data: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=str), encoding='utf-8')
    return path

def _load(args: argparse.Namespace) -> Instance:
    instance = load_instance(args.instance)
    if args.t_delta is not None:
        instance = with_time_step(instance, args.t_delta)
    return instance

def _ga_config(args: argparse.Namespace) -> GaConfig:
    return GaConfig(
        pop_size=args.pop_size,
        iterations=args.iterations,
        parents=args.parents,
        mutate_fraction=args.mutate_fraction,
        no_charge_prob=args.no_charge_prob,
        step_lower=args.step_lower,
        step_upper=args.step_upper,
        seed=args.seed,
        time_limit_s=args.time_limit_s,
        temperature=args.temperature,
        charger_weights=tuple(args.charger_weights) if args.charger_weights else None,
        threads=max(1, args.threads))

def _limits(args: argparse.Namespace) -> Limits:
    return Limits(max_space=args.max_space, max_lp_variables=args.max_lp_variables, threads=max(1, args.threads))

def solution_to_dict(ci: ClusterInstance, evaluation: Evaluation, method: str = '') -> Dict[str, Any]:
    """JSON form of an evaluation. `plan` and `charger_counts` can be fed back to `evaluate`."""
    solution = evaluation.solution
    return {
        'method': method,
        'feasible': evaluation.feasible,
        'clusters': [list(key) for key in ci.keys],
        'plan': [None if gene is None else list(gene) for gene in solution.plan],
        'charger_counts': [list(row) for row in solution.deployment.charger_counts],
        'open_flags': list(solution.deployment.open_flags),
        'cost': {**solution.cost._asdict(), 'vot': solution.cost.vot},
        'violations': [v._asdict() for v in evaluation.violations],
        'events': [{**e._asdict(), 'steps': list(e.steps)} for e in solution.schedule.events],
        'timelines': [
            {'route': t.route, 'departures': list(t.departures), 'batteries': list(t.batteries)}
            for t in solution.schedule.timelines],}

def plan_from_dict(ci: ClusterInstance, data: Dict[str, Any]) -> Dict[str, Any]:
    """
    Reads `plan`, `charger_counts` and the optional `priority` of a plan file.

    Raises:
        InputError: If a block is missing or does not match the instance.
    """
    try:
        plan = tuple(None if gene is None else (int(gene[0]), int(gene[1])) for gene in data['plan'])
        counts = tuple(tuple(int(z) for z in row) for row in data['charger_counts'])
        priority = data.get('priority')
        priority = None if priority is None else tuple(int(r) for r in priority)
    except (KeyError, TypeError, ValueError, IndexError) as e:
        raise InputError(f'malformed plan: {e!r}') from e
    if len(plan) != len(ci.keys):
        raise InputError(f'plan has {len(plan)} gene(s) for {len(ci.keys)} cluster(s)')
    return {'plan': plan, 'charger_counts': counts, 'priority': priority}

def _read_json(path: Path, what: str) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding='utf-8'))
    except FileNotFoundError as e:
        raise InputError(f'{what} file not found: {path}') from e
    except json.JSONDecodeError as e:
        raise InputError(f'malformed {what} JSON in {path}: {e}') from e

def _prepare_gen_instance(args: argparse.Namespace) -> Prepared:
    instance = gen_instance(args.routes, args.stops, args.facilities, args.extent, args.seed)
    if args.t_delta is not None:
        instance = with_time_step(instance, args.t_delta)

    def run(ctx: Context) -> int:
        path = save_instance(instance, ctx.out_dir / 'instance.json')
        print(f'instance written to {path}')
        return 0
    return Prepared(instance, run)

def _prepare_cluster(args: argparse.Namespace) -> Prepared:
    instance = _load(args)

    def run(ctx: Context) -> int:
        clusters = cluster_routes(instance, args.intra_cap_frac * instance.battery_cap_min)
        data = {
            'intra_cap_min': args.intra_cap_frac * instance.battery_cap_min,
            'routes': [
                {'route': instance.routes[r].id, 'clusters': [c._asdict() for c in clusters[r]]}
                for r in sorted(clusters)]}
        _write_json(ctx.out_dir / 'clusters.json', data)
        print(f'{sum(len(c) for c in clusters.values())} cluster(s) over {len(clusters)} route(s)')
        return 0
    return Prepared(instance, run)

def _prepare_evaluate(args: argparse.Namespace) -> Prepared:
    instance = _load(args)
    ci = build_cluster_instance(instance, args.intra_cap_frac)
    inputs = plan_from_dict(ci, _read_json(args.plan, 'plan'))
    evaluation = evaluate_plan(
        ci, inputs['plan'], inputs['charger_counts'], inputs['priority'],
        rounded_deficit=args.rounded_deficit, strict_occupancy=args.strict_occupancy)

    def run(ctx: Context) -> int:
        _write_json(ctx.out_dir / 'evaluation.json', solution_to_dict(ci, evaluation, 'evaluate'))
        occupancy_table(ci, evaluation.solution.schedule).to_csv(ctx.out_dir / 'occupancy.csv', index=False)
        if args.explain:
            _write_json(ctx.out_dir / 'sets.json', explain_sets(ci))
        _report(evaluation)
        return 0 if evaluation.feasible else 1
    return Prepared(instance, run)

def _prepare_solve(args: argparse.Namespace) -> Prepared:
    instance = _load(args)
    ci = build_cluster_instance(instance, args.intra_cap_frac)
    config = validate_config(ci, _ga_config(args))
    limits = _limits(args)

    def run(ctx: Context) -> int:
        evaluation, trace = solve_method(ci, args.method, config, limits)
        if ctx.get_connection is not None:
            db.insert_named_tuples(ctx.get_connection, [t._replace(run_id=ctx.run_id) for t in trace])
        if trace:
            pd.DataFrame([t._asdict() for t in trace]).drop(columns='run_id').to_csv(ctx.out_dir / 'convergence.csv', index=False)
        if evaluation is None:
            _write_json(ctx.out_dir / 'diagnostics.json', {'error': 'infeasible: no feasible solution in the searched space', 'method': args.method})
            print('infeasible: no feasible solution in the searched space', file=sys.stderr)
            return 1
        _write_json(ctx.out_dir / 'solution.json', solution_to_dict(ci, evaluation, args.method))
        occupancy_table(ci, evaluation.solution.schedule).to_csv(ctx.out_dir / 'occupancy.csv', index=False)
        _report(evaluation)
        return 0 if evaluation.feasible else 1
    return Prepared(instance, run)

def _prepare_export_milp(args: argparse.Namespace) -> Prepared:
    instance = _load(args)
    ci = build_cluster_instance(instance, args.intra_cap_frac)
    limits = _limits(args)

    def run(ctx: Context) -> int:
        path = args.out or ctx.out_dir / 'model.lp'
        path.parent.mkdir(parents=True, exist_ok=True)
        emit_lp(ci, path, limits)
        print(f'model written to {path}')
        return 0
    return Prepared(instance, run)

def _prepare_replay(args: argparse.Namespace) -> Prepared:
    instance = _load(args)
    ci = build_cluster_instance(instance, args.intra_cap_frac)
    values = read_solution(args.solution)
    artifact = build_milp(ci, _limits(args))

    def run(ctx: Context) -> int:
        result = replay(ci, values, artifact, args.strict_occupancy)
        data = solution_to_dict(ci, result.evaluation, 'replay')
        data['lp_objective'] = result.lp_objective
        data['row_violations'] = list(result.row_violations)
        _write_json(ctx.out_dir / 'replay.json', data)
        print(f'objective {result.lp_objective:.6f}')
        _report(result.evaluation)
        for row in result.row_violations:
            print(f'violated row: {row}', file=sys.stderr)
        return 0 if result.evaluation.feasible and not result.row_violations else 1
    return Prepared(instance, run)

def _prepare_sweep(args: argparse.Namespace) -> Prepared:
    instance = load_instance(args.instance) if args.instance is not None else None
    spec = load_sweep_spec(args.spec, instance)
    changes = {'threads': max(1, args.threads)}
    if args.replications is not None:
        changes['replications'] = args.replications
    spec = spec._replace(**changes)
    if spec.instance is None:
        raise InputError('the sweep file names no instance and --instance is not given')

    def run(ctx: Context) -> int:
        df = run_sweep(spec, ctx.get_connection, ctx.run_id, _limits(args))
        path = write_sweep_csv(df, args.out or ctx.out_dir / 'results.csv')
        print(f'{len(df)} row(s) written to {path}')
        return 0
    return Prepared(spec.instance, run)

def _prepare_failed(args: argparse.Namespace, error: EvselcaError) -> Prepared:
    """Defers an infeasibility or refusal found while preparing to the run, which writes its diagnostics."""
    instance = None
    if getattr(args, 'instance', None) is not None:
        try:
            instance = _load(args)
        except EvselcaError:
            pass

    def run(ctx: Context) -> int:
        raise error
    return Prepared(instance, run)

PREPARE = {
    'gen-instance': _prepare_gen_instance,
    'cluster': _prepare_cluster,
    'evaluate': _prepare_evaluate,
    'solve': _prepare_solve,
    'export-milp': _prepare_export_milp,
    'replay': _prepare_replay,
    'sweep': _prepare_sweep,}

def _report(evaluation: Evaluation) -> None:
    cost = evaluation.solution.cost
    status = 'feasible' if evaluation.feasible else 'infeasible'
    print(f'{status}: C={cost.total:.4f} (VOT {cost.vot:.4f}, energy {cost.energy:.4f}, facility {cost.facility:.4f}, charger {cost.charger:.4f})')
    for v in evaluation.errors:
        print(f'  {v.code} {v.where} {v.detail}', file=sys.stderr)

def _config(args: argparse.Namespace) -> Dict[str, Any]:
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())}

def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """
    Runs one command and returns its exit status.

    Inputs are loaded and checked before anything is written, so bad input (exit 2)
    leaves no files behind. Infeasibility and refusals exit 1 with diagnostics, also
    when found while preparing; every run that is not bad input writes `manifest.json`
    and, unless `--no-db`, a row in the run ledger.
    """
    try:
        args = build_parser().parse_args(argv)
    except EvselcaError as e:
        print(str(e), file=sys.stderr)
        return e.exit_code
    except SystemExit as e:
        # argparse exits 2 on unknown flags, 0 on --help
        return e.code if isinstance(e.code, int) else 2
    _configure_logging(args)
    started = time.monotonic()

    try:
        prepared = PREPARE[args.command](args)
    except EvselcaError as e:
        if e.exit_code == 2:
            print(str(e), file=sys.stderr)
            return e.exit_code
        prepared = _prepare_failed(args, e)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    get_connection = None if args.no_db else db.initialize_database(DB_NAME, out_dir)
    run_id = db.next_run_id() if get_connection is not None else 0
    ctx = Context(out_dir, get_connection, run_id)

    try:
        status = prepared.run(ctx)
    except EvselcaError as e:
        print(str(e), file=sys.stderr)
        status = e.exit_code
        diagnostics = {'error': str(e), 'violations': [v._asdict() for v in getattr(e, 'violations', [])]}
        _write_json(out_dir / 'diagnostics.json', diagnostics)
        if get_connection is not None:
            db.log_event(get_connection, run_id=run_id, process=f'Failed at {args.command}', success=0, message=traceback.format_exc())
    except Exception:
        message = traceback.format_exc()
        logger.error('%s failed:\n%s', args.command, message)
        status = 1
        _write_json(out_dir / 'diagnostics.json', {'error': message})
        if get_connection is not None:
            db.log_event(get_connection, run_id=run_id, process=f'Failed at {args.command}', success=0, message=message)

    config = _config(args)
    digest = instance_hash(prepared.instance) if prepared.instance is not None else ''
    wall = round(time.monotonic() - started, 3)
    manifest = {
        'command': args.command,
        'config': config,
        'seed': args.seed,
        'version': g.VERSION,
        'instance_hash': digest,
        'wall_time_s': wall,
        'exit_status': status,}
    _write_json(out_dir / 'manifest.json', manifest)
    if get_connection is not None:
        db.insert_named_tuple(get_connection, Run(run_id, args.command, json.dumps(config, sort_keys=True, default=str), args.seed, g.VERSION, digest, wall, status))
        db.log_event(get_connection, run_id=run_id, process=args.command, success=int(status == 0), message=f'exit {status}')
    return status

def main(argv: Optional[Sequence[str]] = None) -> None:
    sys.exit(dispatch(argv))
