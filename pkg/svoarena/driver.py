"""The command-line parsing and entry point."""

from optparse import Option, OptionParser, OptionValueError, Values
from pathlib import Path
from typing import TYPE_CHECKING, Any, Callable, Dict, List, Optional, Sequence, Tuple
import hashlib
import json
import sys
import traceback

import appdirs
import attr

from svoarena import __version__
from svoarena.config import (
    ConfigurationError, RunConfig, SweepCell, read_config_file, read_run_config, read_sweep_spec
)
from svoarena.environment import EnvironmentSpec
from svoarena.export import (
    AGGREGATE_FIELDS, EPISODE_METRICS_NAME, SUMMARY_FIELDS, SUMMARY_NAME, TRAINING_LOG_NAME,
    aggregate_summaries, export_run, format_value, read_csv, summary_dict, write_csv,
    write_episode_metrics
)
from svoarena.metrics import EpisodeMetrics, EquilibriumWindow, MetricsError, episode_metrics
from svoarena.policy.checkpoint import CheckpointError, load_checkpoint, read_manifest
from svoarena.policy.learner import LearnerConfig
from svoarena.policy.scripted import SCRIPTED_KINDS, RandomActor, scripted_policy
from svoarena.population import (
    Population, PopulationSpec, Trainer, evaluate, latest_checkpoint, load_population,
    materialize_population, plan_evaluation
)
from svoarena.replay import IntegrityError, iter_replay, read_replay
from svoarena.reporter import Reporter

if TYPE_CHECKING:
    from typing_extensions import NoReturn
else:
    NoReturn = None

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_INTEGRITY = 4

COMMANDS = ('train', 'eval', 'sweep', 'replay', 'export')

USER_RUNS_DIR = Path(appdirs.user_data_dir('svoarena')) / 'runs'


def error(code: int, msg: str, *args: object) -> NoReturn:
    if args:
        msg = msg%args
    print(msg, file=sys.stderr)
    sys.exit(code)


def parse_path(option: Option, opt: str, value: str) -> Path:
    try:
        return Path(Path.cwd(), value).resolve()
    except Exception as ex:
        raise OptionValueError(f"{opt}: invalid path: {ex}")


class CustomOption(Option):
    TYPES = Option.TYPES + ("path",)
    TYPE_CHECKER = dict(Option.TYPE_CHECKER, path=parse_path)


def getparser() -> OptionParser:
    parser = OptionParser(
        option_class=CustomOption, version=__version__,
        usage=("usage: %prog COMMAND [options] [ARGUMENT]\n\n"
               "commands:\n"
               "  train                 train a population (--config)\n"
               "  eval                  evaluate frozen policies (--checkpoint or --policy-kind)\n"
               "  sweep SWEEPFILE       train every population of a sweep grid\n"
               "  replay REPLAYFILE     re-simulate a replay and verify its hashes\n"
               "  export RUNDIR         recompute summaries from a training log"))
    parser.add_option(
        '-c', '--config', dest='configfile', type='path',
        help=("Run config file. Environment variables SVOARENA_<KEY> and "
              "command line options override its settings."))
    parser.add_option(
        '--seed', dest='seed', type='int',
        help="Master seed.")
    parser.add_option(
        '--deterministic', dest='deterministic', action='store_true', default=False,
        help="Play arenas one at a time for bit-exact reproducibility.")
    parser.add_option(
        '--workers', dest='workers', type='int',
        help="Arena worker threads, 0 for one per CPU.")
    parser.add_option(
        '--rounds', dest='rounds', type='int',
        help="Training rounds.")
    parser.add_option(
        '-o', '--out', dest='out', type='path',
        help=(f"Run directory (default: a directory below {USER_RUNS_DIR})."))
    parser.add_option(
        '--resume', dest='resume', action='store_true', default=False,
        help="Continue training from the latest checkpoint in the run directory.")
    parser.add_option(
        '--checkpoint', dest='checkpoint', type='path',
        help=("Checkpoint directory (with a manifest) or a single checkpoint file "
              "to evaluate, or to resume training from."))
    parser.add_option(
        '--episodes', dest='episodes', type='int', default=100,
        help="Evaluation episodes (default 100).")
    parser.add_option(
        '--policy-kind', dest='policy_kind', type='choice', choices=list(SCRIPTED_KINDS),
        help=f"Evaluate a scripted policy: {', '.join(SCRIPTED_KINDS)}.")
    parser.add_option(
        '--greedy', dest='greedy', action='store_true', default=False,
        help="Evaluate learned policies by taking their most likely action.")
    parser.add_option(
        '--dry-run', dest='dry_run', action='store_true', default=False,
        help="List the sweep cells or evaluation groups without simulating.")
    parser.add_option(
        '--from-step', dest='from_step', type='int', default=0,
        help="First replay step to dump.")
    parser.add_option(
        '--to-step', dest='to_step', type='int',
        help="Last replay step to dump (default: the end).")
    parser.add_option(
        '--render', dest='render', action='store_true', default=False,
        help="Draw the map of every dumped replay step.")
    parser.add_option(
        '--equilibrium-rule', dest='equilibrium_rule', type='choice',
        choices=['trailing', 'plateau'],
        help="Equilibrium window rule for summaries.")
    parser.add_option(
        '--equilibrium-fraction', dest='equilibrium_fraction', type='float',
        help="Trailing fraction of rounds at equilibrium.")
    parser.add_option(
        '--pdb', dest='pdb', action='store_true',
        help=("Like py.test's --pdb."))
    parser.add_option(
        '-W', '--warnings-as-errors', action='store_true',
        dest='warnings_as_errors', default=False,
        help=("Return exit code 3 on warnings."))
    parser.add_option(
        '-v', '--verbose', action='count', dest='verbosity',
        default=0,
        help=("Be noisier.  Can be repeated for more noise."))
    parser.add_option(
        '-q', '--quiet', action='count', dest='quietness',
        default=0,
        help=("Be quieter."))
    def verbose_about_callback(option: Option, opt_str: str, value: str, parser: OptionParser) -> None:
        assert parser.values is not None
        d = parser.values.verbosity_details
        d[value] = d.get(value, 0) + 1
    parser.add_option(
        '--verbose-about', metavar="SECTION", action="callback",
        type=str, default={}, dest='verbosity_details',
        callback=verbose_about_callback,
        help=("Be noisier about a particular section: config, train, arena, "
              "update, checkpoint, eval, sweep, replay or export."))
    return parser


def parse_args(args: Sequence[str]) -> Tuple[Values, List[str]]:
    parser = getparser()
    options, args = parser.parse_args(args)
    options.verbosity -= options.quietness
    return options, args


def _overrides(options: Values) -> Dict[str, str]:
    overrides = {}
    if options.seed is not None:
        overrides['seed'] = str(options.seed)
    if options.deterministic:
        overrides['deterministic'] = 'true'
    if options.workers is not None:
        overrides['workers'] = str(options.workers)
    if options.rounds is not None:
        overrides['rounds'] = str(options.rounds)
    if options.out is not None:
        overrides['output'] = str(options.out)
    if options.equilibrium_rule is not None:
        overrides['equilibrium_rule'] = options.equilibrium_rule
    if options.equilibrium_fraction is not None:
        overrides['equilibrium_fraction'] = repr(options.equilibrium_fraction)
    return overrides


def resolve_config(options: Values) -> RunConfig:
    return read_run_config(options.configfile, overrides=_overrides(options))


def run_directory(config: RunConfig, command: str) -> Path:
    if config.output is not None:
        return Path(config.output)
    return USER_RUNS_DIR / f'{command}-{config.environment}-seed{config.seed}'


def learner_config(config: RunConfig) -> LearnerConfig:
    return LearnerConfig(
        gamma=config.gamma,
        learning_rate=config.learning_rate,
        entropy_coef=config.entropy_coef,
        value_coef=config.value_coef,
        batch_size=config.batch_size,
        optimizer=config.optimizer,
        max_grad_norm=config.max_grad_norm,
        )


def equilibrium_window(config: RunConfig) -> EquilibriumWindow:
    return EquilibriumWindow(config.equilibrium_rule, config.equilibrium_fraction,
                             config.plateau_tolerance, config.plateau_min_rounds)


def code_hash() -> str:
    """SHA-256 over the package's source files."""
    h = hashlib.sha256()
    root = Path(__file__).parent
    for path in sorted(root.rglob('*.py')):
        if 'test' in path.relative_to(root).parts:
            continue
        h.update(str(path.relative_to(root).as_posix()).encode('utf-8'))
        h.update(path.read_bytes())
    return h.hexdigest()


def write_run_metadata(
        out: Path,
        config: RunConfig,
        command: str,
        population: Optional[Population] = None,
        **extra: Any,
        ) -> None:
    """
    Make C{out} self-describing: the resolved config, and the seed, code
    version and SVO values.
    """
    out.mkdir(parents=True, exist_ok=True)
    (out / 'config.cfg').write_text(config.to_text(), encoding='utf-8')
    metadata: Dict[str, Any] = {
        'command': command,
        'seed': config.seed,
        'version': __version__,
        'code_hash': code_hash(),
        'environment': config.environment,
        'svo_weight': config.weight,
        }
    if population is not None:
        metadata['svo_degrees'] = [slot.svo.degrees for slot in population.slots]
        metadata['svo_radians'] = [slot.svo.theta for slot in population.slots]
    metadata.update(extra)
    (out / 'metadata.json').write_text(json.dumps(metadata, indent=2, sort_keys=True) + '\n',
                                       encoding='utf-8')


def _cell_description(config: RunConfig, name: str, mode: str) -> Dict[str, Any]:
    return {
        'name': name,
        'environment': config.environment,
        'mode': mode,
        'svo_mean_degrees': config.svo_mean,
        'svo_std_degrees': config.svo_std,
        'weight': config.weight,
        'seed': config.seed,
        }


def run_training(
        config: RunConfig,
        out: Path,
        reporter: Reporter,
        resume: bool = False,
        checkpoint: Optional[Path] = None,
        description: Optional[Dict[str, Any]] = None,
        ) -> Trainer:
    """
    Train the population a config describes into C{out}.

    @param resume: Continue from the latest checkpoint in C{out}, if any.
    @param checkpoint: Continue from this checkpoint directory.
    @param description: The sweep cell columns of the summary row.
    """
    environment = EnvironmentSpec.fromConfig(config)
    spec = PopulationSpec.fromConfig(config, environment.action_count)
    population = materialize_population(spec)
    reporter.msg('config', f'{config.environment}: {len(population)} agents, SVO '
                           + ', '.join(f'{d:.1f}' for d in population.svo_degrees), thresh=1)
    write_run_metadata(out, config, 'train', population, map_hash=environment.game_map.digest)
    trainer = Trainer(
        population, environment, learner_config(config),
        arenas=config.arenas,
        smoothing=config.smoothing,
        deterministic=config.deterministic,
        workers=config.workers,
        output=out,
        checkpoint_every=config.checkpoint_every,
        replay_every=config.replay_every,
        logger=reporter.msg,
        progress=reporter.progress,
        )
    if checkpoint is None and resume:
        checkpoint = latest_checkpoint(out)
        if checkpoint is None:
            reporter.msg('checkpoint', f'no checkpoint in {out}, starting afresh', thresh=0)
    if checkpoint is not None:
        trainer.resume(checkpoint)
    trainer.train(max(0, config.rounds - trainer.round))
    if trainer.round > 0 and (out / TRAINING_LOG_NAME).exists():
        export_run(out, equilibrium_window(config), reporter.msg,
                   **(description or _cell_description(config, out.name, 'single')))
    return trainer


def cmd_train(options: Values, args: Sequence[str], reporter: Reporter) -> int:
    if args:
        error(EXIT_CONFIG, "train takes no arguments, use --config")
    config = resolve_config(options)
    out = run_directory(config, 'train')
    run_training(config, out, reporter, resume=options.resume, checkpoint=options.checkpoint)
    reporter.msg('train', f'run directory: {out}')
    return EXIT_OK


def _single_checkpoint_population(path: Path, environment: EnvironmentSpec,
                                  spec: PopulationSpec, greedy: bool) -> Population:
    """All members play the one policy, with the SVO of the config."""
    policy, header = load_checkpoint(path, environment.name, environment.action_count)
    policy.greedy = greedy
    population = materialize_population(spec, lambda agent_id, seed: policy)
    return population


def _eval_population(options: Values, config: RunConfig, environment: EnvironmentSpec) -> Population:
    spec = PopulationSpec.fromConfig(config, environment.action_count)
    if options.policy_kind:
        kind = options.policy_kind
        # Fail on an unusable kind before materialising anything.
        scripted_policy(kind, environment.name)
        return materialize_population(
            spec, lambda agent_id, seed: scripted_policy(kind, environment.name))
    if options.checkpoint is None:
        raise ConfigurationError([('checkpoint', "eval needs --checkpoint or --policy-kind")])
    path = Path(options.checkpoint)
    if options.dry_run:
        size = len(read_manifest(path)['agents']) if path.is_dir() else spec.size
        spec = attr.evolve(spec, size=size, group_size=min(spec.group_size, size))
        return materialize_population(
            spec, lambda agent_id, seed: RandomActor(environment.action_count))
    if path.is_dir():
        return load_population(path, environment, spec, greedy=options.greedy)
    return _single_checkpoint_population(path, environment, spec, options.greedy)


def cmd_eval(options: Values, args: Sequence[str], reporter: Reporter) -> int:
    if args:
        error(EXIT_CONFIG, "eval takes no arguments")
    if options.episodes < 0:
        error(EXIT_CONFIG, "--episodes must be non-negative")
    config = resolve_config(options)
    environment = EnvironmentSpec.fromConfig(config)
    population = _eval_population(options, config, environment)

    if options.dry_run:
        plan = plan_evaluation(population, options.episodes)
        for assignment in plan:
            print(f'episode {assignment.arena_id}: seed {assignment.seed}, agents '
                  + ' '.join(str(m) for m in assignment.members))
        print(f'{len(plan)} episodes x {population.spec.group_size} agents '
              f'from a population of {len(population)}')
        return EXIT_OK

    out = run_directory(config, 'eval')
    write_run_metadata(out, config, 'eval', population,
                       episodes=options.episodes,
                       checkpoint=None if options.checkpoint is None else str(options.checkpoint),
                       policy_kind=options.policy_kind)
    rows: List[EpisodeMetrics] = []
    results = evaluate(population, environment, options.episodes, config.smoothing, reporter.msg)
    for i, (assignment, record) in enumerate(results):
        reporter.progress('eval', i + 1, len(results), 'episodes')
        svo = [population.slots[m].svo.degrees for m in assignment.members]
        for row in episode_metrics(record, assignment.arena_id, svo):
            if row.observed_reward_angle is None:
                reporter.msg('eval', f'episode {row.episode}: no reward angle for agent '
                                     f'{row.agent_id}, every return is zero', thresh=-1)
            rows.append(row)
    path = write_episode_metrics(out / EPISODE_METRICS_NAME, rows)
    reporter.msg('eval', f'wrote {path}')
    return EXIT_OK


def _dry_run_sweep(cells: Sequence[SweepCell]) -> None:
    for cell in cells:
        print(f'{cell.name}: {cell.config.environment}, SVO mean {cell.svo_mean:g} deg, '
              f'std {cell.svo_std:g} deg, w {cell.weight:g}, seed {cell.seed}')
    print(f'{len(cells)} populations')


def cmd_sweep(options: Values, args: Sequence[str], reporter: Reporter) -> int:
    if len(args) != 1:
        error(EXIT_CONFIG, "sweep takes one sweep file")
    spec = read_sweep_spec(args[0])
    overrides = _overrides(options)
    overrides.pop('output', None)
    if overrides:
        spec = attr.evolve(spec, base=RunConfig.fromMapping(overrides, spec.base))
    cells = spec.cells()
    if options.dry_run:
        _dry_run_sweep(cells)
        return EXIT_OK

    out = Path(options.out) if options.out is not None else USER_RUNS_DIR / f'sweep-{Path(args[0]).stem}'
    rows = []
    for i, cell in enumerate(cells):
        reporter.progress('sweep', i + 1, len(cells), 'populations')
        description = _cell_description(cell.config, cell.name, spec.mode)
        cell_out = out / cell.name
        try:
            run_training(attr.evolve(cell.config, output=str(cell_out)), cell_out, reporter,
                         resume=options.resume, description=description)
            rows.append(read_csv(cell_out / SUMMARY_NAME)[0])
        except Exception as e:
            reporter.msg('sweep', f'{cell.name} failed: {type(e).__name__}: {e}', thresh=-1)
            rows.append({k: format_value(v) for k, v in
                         summary_dict(None, status=f'failed: {e}', **description).items()})
    write_csv(out / SUMMARY_NAME, SUMMARY_FIELDS, rows)
    write_csv(out / 'aggregate.csv', AGGREGATE_FIELDS, aggregate_summaries(rows))
    reporter.msg('sweep', f'{len(cells)} populations, summary in {out / SUMMARY_NAME}')
    return EXIT_OK


def cmd_replay(options: Values, args: Sequence[str], reporter: Reporter) -> int:
    if len(args) != 1:
        error(EXIT_CONFIG, "replay takes one replay file")
    replay = read_replay(args[0])
    last = replay.steps if options.to_step is None else min(options.to_step, replay.steps)
    print(f'{replay.spec.name}, map {replay.spec.game_map.name}, seed {replay.seed}, '
          f'{replay.n_agents} agents, {replay.steps} steps')
    for step, world in iter_replay(replay):
        if options.from_step <= step <= last:
            positions = ' '.join(f'{a.agent_id}@{a.position[0]},{a.position[1]}' for a in world.avatars)
            print(f'step {step}: hash {world.state_hash()[:16]} returns '
                  f'{" ".join(str(int(r)) for r in world.returns)} positions {positions}')
            if options.render:
                print(world.to_text())
    print(f'final state hash verified: {replay.final_hash}')
    return EXIT_OK


def _export_dir(run_dir: Path, options: Values, reporter: Reporter) -> Dict[str, str]:
    config_path = run_dir / 'config.cfg'
    values = read_config_file(config_path, RunConfig.keys()) if config_path.exists() else {}
    values.pop('output', None)
    values.update({k: v for k, v in _overrides(options).items()
                   if k in ('equilibrium_rule', 'equilibrium_fraction')})
    config = RunConfig.fromMapping(values)
    path = export_run(run_dir, equilibrium_window(config), reporter.msg,
                      **_cell_description(config, run_dir.name, 'single'))
    return read_csv(path)[0]


def cmd_export(options: Values, args: Sequence[str], reporter: Reporter) -> int:
    """
    Recompute C{summary.csv} of a run directory, or of every run of a sweep
    directory together with the sweep's aggregate.
    """
    if len(args) != 1:
        error(EXIT_CONFIG, "export takes one run directory")
    run_dir = Path(args[0])
    if (run_dir / TRAINING_LOG_NAME).exists():
        _export_dir(run_dir, options, reporter)
        return EXIT_OK
    runs = sorted(p for p in run_dir.iterdir() if (p / TRAINING_LOG_NAME).exists()) \
        if run_dir.is_dir() else []
    if not runs:
        raise MetricsError(f"no training log in {run_dir} or its subdirectories")
    rows = [_export_dir(p, options, reporter) for p in runs]
    write_csv(run_dir / SUMMARY_NAME, SUMMARY_FIELDS, rows)
    write_csv(run_dir / 'aggregate.csv', AGGREGATE_FIELDS, aggregate_summaries(rows))
    return EXIT_OK


_HANDLERS: Dict[str, Callable[[Values, Sequence[str], Reporter], int]] = {
    'train': cmd_train,
    'eval': cmd_eval,
    'sweep': cmd_sweep,
    'replay': cmd_replay,
    'export': cmd_export,
    }


def main(args: Sequence[str] = sys.argv[1:]) -> int:
    """
    This is the console_scripts entry point for the svoarena CLI.

    @param args: Command line arguments to run the CLI.
    @return: 0 on success, 3 if there were problems and C{-W} was given.
        Configuration errors exit with code 2, runtime errors with 3 and
        replay or checkpoint integrity errors with 4.
    """
    options, args = parse_args(args)
    if not args or args[0] not in _HANDLERS:
        error(EXIT_CONFIG, "expected a command: %s", ', '.join(COMMANDS))
    command, rest = args[0], args[1:]
    reporter = Reporter(options.verbosity, options.verbosity_details)

    try:
        exitcode = _HANDLERS[command](options, rest, reporter)
    except ConfigurationError as e:
        for key, message in e.diagnostics:
            print(f'{key}: {message}', file=sys.stderr)
        sys.exit(EXIT_CONFIG)
    except (IntegrityError, CheckpointError) as e:
        error(EXIT_INTEGRITY, "integrity error: %s", e)
    except SystemExit:
        raise
    except Exception as e:
        if options.pdb:
            import pdb
            pdb.post_mortem(sys.exc_info()[2])
        if options.verbosity > 0:
            traceback.print_exc()
        error(EXIT_RUNTIME, "%s: %s", type(e).__name__, e)

    if reporter.problems and options.warnings_as_errors:
        # Update exit code if the run has produced warnings.
        exitcode = EXIT_RUNTIME
    return exitcode
