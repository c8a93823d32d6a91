import argparse
import logging
import sys

from cli_io import (
    RunConfig,
    format_evalue,
    grade_evidence,
    replay_steps,
    run_evaluate,
    run_simulate,
    write_steps,
    write_table,
)
from errors import InputError, NumericError
from settings_loader import fold_alternative, load_settings

EXIT_OK = 0
EXIT_INPUT_ERROR = 2
EXIT_NUMERIC_ERROR = 3


def _csv_list(kind):
    def parse(text):
        try:
            return [kind(v) for v in str(text).split(',') if v.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid list '{text}'")
    return parse


def build_parser():
    parser = argparse.ArgumentParser(
        prog='eforecast',
        description='Sequential e-value tests of forecast dominance for binary events.',
    )
    parser.add_argument('--config', help='Flat YAML settings file (default: eforecast.yaml if present).')
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument('-v', '--verbose', action='store_true', help='Log progress and debug messages.')
    verbosity.add_argument('-q', '--quiet', action='store_true', help='Only log errors.')
    sub = parser.add_subparsers(dest='command', required=True)

    ev = sub.add_parser('evaluate', help='Test forecast dominance on a CSV or Excel forecast table.')
    ev.add_argument('--input', help='Table with columns t, y, p, q and optional c.')
    ev.add_argument('--rule', help='brier, logarithmic, spherical or elementary:<theta>.')
    ev.add_argument('--lag', type=int, help='Forecast lag h.')
    ev.add_argument('--alt', dest='alternative', help='q, pi, xi:<w>, k:<n> or fixed:<pi1>.')
    ev.add_argument('--xi', type=float, help='Convex mixture weight; same as --alt xi:<w>.')
    ev.add_argument('--k', type=int, help='Number of equispaced mixture weights; same as --alt k:<n>.')
    ev.add_argument('--alpha', type=float, help='Test level.')
    ev.add_argument('--all-scores', dest='all_scores', action='store_true', default=None,
                    help='Test dominance with respect to all consistent scores.')
    ev.add_argument('--stop', dest='stopping', choices=['none', 'stop_at_alpha'],
                    help='Stop at the first rejection or evaluate the whole table.')
    ev.add_argument('--baselines', dest='baselines', action='store_true', default=None,
                    help='Also run the t-test, Wilcoxon and Diebold-Mariano tests.')
    ev.add_argument('--no-baselines', dest='baselines', action='store_false')
    ev.add_argument('--condition-column', dest='condition_column', help='Column with the condition flag c.')
    ev.add_argument('--condition-threshold', dest='condition_threshold', type=float,
                    help='Only test steps with max(p, q) >= threshold.')
    ev.add_argument('--bandwidth', type=int, help='HAC bandwidth of the Diebold-Mariano test (default h - 1).')
    ev.add_argument('--output', help='Per-step report (.csv or .xlsx).')

    sim = sub.add_parser('simulate', help='Monte Carlo rejection rates.')
    group = sim.add_mutually_exclusive_group()
    group.add_argument('--design', choices=['partial-info', 'ma4'])
    group.add_argument('--preset', choices=['partial-info', 'partial-info-sweep', 'ma4', 'ma4-sweep'])
    sim.add_argument('--mu', type=_csv_list(float), help='Comma-separated mu grid (partial-info).')
    sim.add_argument('--theta', type=_csv_list(float), help='Comma-separated MA coefficient grid (ma4).')
    sim.add_argument('--T', dest='T', type=_csv_list(int), help='Comma-separated horizons.')
    sim.add_argument('--lag', type=_csv_list(int), help='Comma-separated lags (ma4).')
    sim.add_argument('--alpha', type=_csv_list(float), help='Comma-separated test levels.')
    sim.add_argument('--rule')
    sim.add_argument('--alt', dest='alternative')
    sim.add_argument('--k', type=_csv_list(int), help='Comma-separated k for equispaced mixtures.')
    sim.add_argument('--all-scores', dest='all_scores', action='store_true', default=None)
    sim.add_argument('--methods', type=_csv_list(str),
                     help='e_stopped, e_unstopped, t_test, wilcoxon, dm_test, t_test_optional_stop:<n>.')
    sim.add_argument('--replications', type=int)
    sim.add_argument('--seed', type=int)
    sim.add_argument('--jobs', type=int, help='Worker processes.')
    sim.add_argument('--output', help='Rejection-rate table (.csv or .xlsx).')

    rp = sub.add_parser('replay', help='Recompute the e-value of a per-step report.')
    rp.add_argument('steps', help='Per-step report written by evaluate.')
    rp.add_argument('--lag', type=int, help='Forecast lag h (default: the h column of the report, else 1).')
    return parser


def _settings(args):
    settings = load_settings(args.config, mode=args.command)
    flags = {k: v for k, v in vars(args).items()
             if k not in ('command', 'config', 'verbose', 'quiet', 'steps') and v is not None}
    settings.update(fold_alternative(flags, args.command))
    settings['mode'] = args.command
    return RunConfig.from_settings(settings)


def _evaluate(args):
    config = _settings(args)
    report = run_evaluate(config)
    print(report.summary_table().to_string(index=False))
    if report.stop_time is not None:
        print(f"Rejected at t={report.stop_time} (alpha={config.level:g}).")
    if config.output:
        write_steps(report, config.output)
        print(f"Per-step report written to {config.output}")


def _simulate(args):
    config = _settings(args)
    table = run_simulate(config)
    if config.output:
        write_table(table, config.output)
        print(f"Rejection rates written to {config.output}")
    else:
        print(table.to_string(index=False))


def _replay(args):
    final_e, e_path = replay_steps(args.steps, args.lag)
    print(f"Replayed {len(e_path)} steps: e={format_evalue(final_e)} ({grade_evidence(final_e).value} evidence)")


COMMANDS = {'evaluate': _evaluate, 'simulate': _simulate, 'replay': _replay}


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.ERROR if args.quiet else logging.INFO
    logging.basicConfig(level=level, format='%(levelname)s %(name)s: %(message)s')
    try:
        COMMANDS[args.command](args)
    except InputError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    except NumericError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_NUMERIC_ERROR
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
