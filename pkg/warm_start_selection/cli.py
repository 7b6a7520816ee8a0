import argparse
import logging
import sys
from typing import Dict, List, Optional, Sequence, Tuple

from .errors import CapacityError
from .mssp_simulator import MsspConfig, run_mssp, write_report_csv
from .score_distribution import ScoreDistribution, parse_distribution
from .selection_policies import CcmdpPolicy, SelectionState, apply_decision
from .value_tables import (
    LITERAL,
    POPULATION,
    ValueTable,
    WsspInstance,
    build_rank_value_table,
    build_value_table,
    table_to_csv,
    write_table_csv,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2

TOLERANCE = 0.0015

# Worked instance: uniform(0,1), n=14, b=3, r=2, one retained employee scoring 0.682.
TABLE1_N, TABLE1_B, TABLE1_R = 14, 3, 2
TABLE1_PRESELECTION = (0.682,)
# (X, Y) -> printed V_j for j = 1..14
TABLE1_PRINTED: Dict[Tuple[int, int], Tuple[float, ...]] = {
    (1, 0): (0.893, 0.886, 0.879, 0.871, 0.861, 0.850, 0.836, 0.823, 0.800, 0.775, 0.741, 0.768, 0.732, 0.682),
    (2, 0): (1.719, 1.702, 1.683, 1.661, 1.636, 1.606, 1.571, 1.529, 1.476, 1.409, 1.320, 1.195, 1.000, 0.000),
    (0, 1): (0.907, 0.902, 0.897, 0.891, 0.885, 0.877, 0.869, 0.859, 0.847, 0.833, 0.816, 0.795, 0.979, 0.979),
    (1, 1): (1.756, 1.742, 1.729, 1.712, 1.694, 1.673, 1.650, 1.621, 1.588, 1.547, 1.495, 1.428, 1.333, 1.182),
    (2, 1): (2.547, 2.523, 2.496, 2.465, 2.431, 2.391, 2.345, 2.290, 2.224, 2.142, 2.036, 1.894, 1.682, 0.000),
}
# printed cells that disagree with the recurrence; checked against the single-slot oracle instead
TABLE1_ERRATA = {(8, 1, 0), (12, 1, 0), (13, 1, 0), (14, 1, 0), (13, 0, 1), (14, 0, 1)}

EXAMPLE_SCORES = (0.498, 0.858, 0.749)
# the third printed threshold reads layer j instead of j + 1
EXAMPLE_PRINTED_THRESHOLDS = (0.781, 0.767, 0.832)
EXAMPLE_EXPECTED_DECISIONS = (0, 1, 0)


def _parse_scores(text: str) -> Tuple[float, ...]:
    if text is None or text.strip() == "":
        return ()
    try:
        return tuple(float(s) for s in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"Error: --preselection - cannot parse '{text}'.")


def _distribution(text: str) -> ScoreDistribution:
    try:
        return parse_distribution(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wssp", description="Warm-starting sequential selection: value tables, simulations and checks.")
    parser.add_argument("--log", default="WARNING", choices=("DEBUG", "INFO", "WARNING", "ERROR"),
                        help="Log level for progress messages on stderr (default: WARNING)")
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="Compute a value table and write it as j,X,Y,V,T CSV.")
    solve.add_argument("--dist", type=_distribution, default=ScoreDistribution.uniform(),
                       help="uniform:<a>,<b> | exp:<rate> | discrete:<v>:<p>,... (default: uniform:0,1)")
    solve.add_argument("--n", type=int, required=True, help="Number of candidates")
    solve.add_argument("--b", type=int, required=True, help="Number of job positions")
    solve.add_argument("--r", type=int, required=True, help="Number of empty positions")
    solve.add_argument("--preselection", type=_parse_scores, default=(),
                       help="Comma-separated scores of the b - r retained employees")
    solve.add_argument("--rank", action="store_true", help="Emit the rank-based (no-information) table")
    solve.add_argument("--denominator", default=POPULATION, choices=(POPULATION, LITERAL),
                       help="Rank scale: population (n + b - r) or literal (n + b)")
    solve.add_argument("--out", default=None, help="Output CSV path (default: stdout)")

    simulate = sub.add_parser("simulate", help="Run multi-round simulations and write the regret report CSV.")
    simulate.add_argument("--rounds", type=int, default=10)
    simulate.add_argument("--population", type=int, default=10000)
    simulate.add_argument("--n", type=int, default=100)
    simulate.add_argument("--b", type=int, default=5)
    simulate.add_argument("--r", type=int, default=0)
    simulate.add_argument("--dist", type=_distribution, default=ScoreDistribution.uniform())
    simulate.add_argument("--policy", action="append", default=None,
                          help="Policy spec, repeatable (default: ccmdp)")
    simulate.add_argument("--replicates", type=int, default=500)
    simulate.add_argument("--seed", type=int, default=0)
    simulate.add_argument("--processes", type=int, default=1)
    simulate.add_argument("--pilot-replicates", type=int, default=20)
    simulate.add_argument("--denominator", default=POPULATION, choices=(POPULATION, LITERAL))
    simulate.add_argument("--out", default=None, help="Output CSV path (default: stdout)")

    repro = sub.add_parser("repro", help="Check the worked instance against its printed reference values.")
    repro.add_argument("target", choices=("table1", "example"))
    return parser


def solve_command(args: argparse.Namespace) -> int:
    if args.rank:
        table = build_rank_value_table(args.n, args.b, args.r, args.denominator)
    else:
        inst = WsspInstance(args.n, args.b, args.r, args.preselection, args.dist)
        table = build_value_table(inst)
    if args.out is None:
        sys.stdout.write(table_to_csv(table))
    else:
        logger.info(f"Writing {args.out}...")
        write_table_csv(table, args.out)
    return EXIT_OK


def simulate_command(args: argparse.Namespace) -> int:
    cfg = MsspConfig(rounds=args.rounds, population=args.population, n=args.n, b=args.b, r=args.r,
                     dist=args.dist, policies=tuple(args.policy or ("ccmdp",)), replicates=args.replicates,
                     seed=args.seed, processes=args.processes, pilot_replicates=args.pilot_replicates,
                     rank_denominator=args.denominator)
    report = run_mssp(cfg)
    if args.out is None:
        sys.stdout.write(report.to_csv())
    else:
        logger.info(f"Writing {args.out}...")
        write_report_csv(report, args.out)
    return EXIT_OK


def table1_instance() -> WsspInstance:
    return WsspInstance(TABLE1_N, TABLE1_B, TABLE1_R, TABLE1_PRESELECTION, ScoreDistribution.uniform())


def single_slot_oracle(start: float, remaining: int) -> float:
    """
    One position, uniform(0,1) scores: the value with ``remaining`` candidates to come when
    keeping ``start`` is the fallback, by iterating v <- (1 + v^2) / 2.
    """
    v = start
    for _ in range(remaining):
        v = (1.0 + v * v) / 2.0
    return v


def _oracle_value(j: int, x: int, y: int) -> float:
    remaining = TABLE1_N - j + 1
    if (x, y) == (1, 0):
        # the last candidate is forced in, so start from an empty slot
        return single_slot_oracle(0.0, remaining)
    return single_slot_oracle(TABLE1_PRESELECTION[0], remaining)


def table1_report(table: ValueTable) -> Tuple[List[str], List[str]]:
    """
    :return: Report lines and the mismatched cells, each as "j=.., X=.., Y=..".
    """
    lines = [f"{'j':>3} {'X':>2} {'Y':>2} {'computed':>10} {'printed':>8} {'oracle':>10}  status"]
    mismatches = []
    for (x, y), printed_row in sorted(TABLE1_PRINTED.items(), key=lambda item: (item[0][1], item[0][0])):
        for j, printed in enumerate(printed_row, start=1):
            computed = table.value(j, x, y)
            oracle = ""
            if (j, x, y) in TABLE1_ERRATA:
                expected = _oracle_value(j, x, y)
                oracle = f"{expected:.6f}"
                ok = abs(computed - expected) <= 1e-9
                status = "erratum" if ok else "MISMATCH"
            else:
                status = "ok" if abs(computed - printed) <= TOLERANCE else "MISMATCH"
            if status == "MISMATCH":
                mismatches.append(f"j={j}, X={x}, Y={y}")
            lines.append(f"{j:>3} {x:>2} {y:>2} {computed:>10.6f} {printed:>8.3f} {oracle:>10}  {status}")
    return lines, mismatches


def example_report(table: ValueTable) -> Tuple[List[str], List[str]]:
    lines = [f"{'j':>3} {'score':>6} {'T':>9} {'printed':>8}  decision  status"]
    mismatches = []
    policy = CcmdpPolicy()
    inst = table.instance
    policy.start_round(inst)
    state = SelectionState.initial(inst)
    for score, printed, expected in zip(EXAMPLE_SCORES, EXAMPLE_PRINTED_THRESHOLDS, EXAMPLE_EXPECTED_DECISIONS):
        j = state.j
        threshold = table.threshold(j, state.x, state.y)
        accept = policy.decide(state, score)
        if abs(threshold - printed) <= TOLERANCE:
            status = "ok"
        else:
            # printed from layer j: V[j][X][Y] - best accept continuation at j
            shifted = table.value(j, state.x, state.y) - table.accept_value(j, state.x, state.y)
            status = "erratum" if abs(shifted - printed) <= TOLERANCE else "MISMATCH"
        if int(accept) != expected:
            status = "MISMATCH"
        if status == "MISMATCH":
            mismatches.append(f"j={j}, X={state.x}, Y={state.y}")
        lines.append(f"{j:>3} {score:>6.3f} {threshold:>9.6f} {printed:>8.3f}  "
                     f"{'accept' if accept else 'reject':>8}  {status}")
        state = apply_decision(state, accept, score, policy.prefers_fill(state) if accept else True)
    return lines, mismatches


def repro_command(args: argparse.Namespace) -> int:
    table = build_value_table(table1_instance())
    if args.target == "table1":
        lines, mismatches = table1_report(table)
    else:
        lines, mismatches = example_report(table)
    sys.stdout.write("\n".join(lines) + "\n")
    if mismatches:
        print(f"Error: repro {args.target} - first mismatched cell: {mismatches[0]}.", file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


COMMANDS = {"solve": solve_command, "simulate": simulate_command, "repro": repro_command}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_OK
    logging.basicConfig(level=getattr(logging, args.log), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except CapacityError as e:
        print(str(e), file=sys.stderr)
        return EXIT_CHECK_FAILED
    except (ValueError, IndexError) as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
