# File: src/cli.py
"""
Command-line interface for sorl-desk.

Every command is a batch job: it reads its inputs, does the work in a worker
thread while a status spinner runs, writes its artifacts and prints a summary
table. Exit codes: 0 success, 1 runtime error, 2 usage error.
"""
import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import anyio
from pydantic import ValidationError
from rich.console import Console
from rich.logging import RichHandler

from src.artifacts import RunArtifacts
from src.config import InferenceConfig, RunConfig, load_run_config
from src.envworld import generate_dataset, get_env_spec, load_dataset
from src.errors import SorlError, UnknownEnvironmentError, UsageError
from src.noise import NoiseSource
from src.scale import EpisodeRecord, SweepRow, evaluate, make_eval_hook, scaling_sweep
from src.sorl import MetricsRow, TrainResult, final_average, train
from src.themes import Theme, get_theme, list_themes
from src.utils import format_decimal, is_power_of_two, parse_int_list, powers_of_two_up_to
from src.verify import SUITES, run_suite

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

DEFAULT_TUNE_GRID = "10,50,100,500"


@dataclass
class TrainOutcome:
    result: TrainResult
    final_return: Optional[float]
    final_success: Optional[float]


def configure_logging(level: str) -> None:
    """Route log records through rich on stderr so stdout and files stay clean."""
    logging.basicConfig(
        level=level.upper(),
        format="%(message)s",
        handlers=[RichHandler(console=Console(stderr=True), show_path=False)],
        force=True,
    )


class SorlCLI:
    """Runs one sorl-desk command and renders its results."""

    def __init__(self, theme: str = "desk", console: Optional[Console] = None):
        self.console = console or Console()
        self.current_theme: Theme = get_theme(theme)

    async def run(self, args: argparse.Namespace) -> int:
        """Dispatch a parsed command and map failures to exit codes."""
        try:
            return await self._dispatch(args)
        except ValidationError as e:
            keys = sorted({str(error["loc"][0]) for error in e.errors() if error["loc"]})
            self._show_error(f"invalid configuration key(s): {', '.join(keys)}\n{e}", "Usage error")
            return EXIT_USAGE
        except (UsageError, UnknownEnvironmentError) as e:
            self._show_error(str(e), "Usage error")
            return EXIT_USAGE
        except (SorlError, OSError) as e:
            logger.error(f"{args.command} failed: {e}")
            self._show_error(str(e))
            return EXIT_RUNTIME

    async def _dispatch(self, args: argparse.Namespace) -> int:
        if args.command == "gen-data":
            await self.cmd_gen_data(args.env, args.n, args.seed, Path(args.out))
        elif args.command == "train":
            await self.cmd_train(Path(args.config))
        elif args.command == "eval":
            await self.cmd_eval(Path(args.model), args.env, args.m_inf, args.n, args.episodes, args.seed, args.out)
        elif args.command == "sweep":
            await self.cmd_sweep(
                Path(args.model),
                args.env,
                _int_list(args.m_inf, "--m-inf"),
                _int_list(args.n, "--n"),
                args.episodes,
                args.seed,
                Path(args.out),
            )
        elif args.command == "verify":
            passed = await self.cmd_verify(args.suite, Path(args.out), args.seed, args.steps)
            return EXIT_OK if passed else EXIT_RUNTIME
        elif args.command == "tune":
            await self.cmd_tune(Path(args.config), _float_list(args.alpha_q, "--alpha-q"))
        elif args.command == "tune-btt":
            grid = _int_list(args.m_btt, "--m-btt") if args.m_btt else None
            await self.cmd_tune_btt(Path(args.config), grid)
        return EXIT_OK

    def _cell(self, value: object) -> str:
        if value is None:
            return ""
        if isinstance(value, bool):
            return self.current_theme.status_text(value)
        return f"{value:.6g}" if isinstance(value, float) else str(value)

    def _show_error(self, message: str, title: str = "Error") -> None:
        self.console.print(self.current_theme.error_panel(f"[bold]{title}:[/]\n{message}", title=title))

    async def cmd_gen_data(self, env: str, n: int, seed: int, out: Path) -> Path:
        spec = get_env_spec(env)
        with self.console.status(f"[bold green]Generating {n} {env} transitions...", spinner="dots"):
            dataset = await anyio.to_thread.run_sync(generate_dataset, spec, n, NoiseSource(seed))
        path = await RunArtifacts(out.parent).write_dataset(dataset, out)
        self.console.print(f"[{self.current_theme.success}]Wrote {len(dataset)} transitions to {path}[/]")
        return path

    async def _train_run(self, config: RunConfig) -> TrainOutcome:
        spec = get_env_spec(config.env)
        dataset = load_dataset(config.dataset_path, expected_env=spec)
        train_config = config.train_config()
        hook = make_eval_hook(spec, config.inference_config())
        with self.console.status(
            f"[bold green]Training {config.env} for {train_config.grad_steps} steps...", spinner="dots"
        ):
            result = await anyio.to_thread.run_sync(train, train_config, dataset, hook, config.eval_every)
        artifacts = RunArtifacts(config.output_dir)
        await artifacts.write_config(config)
        await artifacts.write_metrics(result.metrics)
        await artifacts.write_model(result.state, config.env)
        if any(row.has_eval for row in result.metrics):
            final_return, final_success = final_average(result.metrics)
        else:
            final_return = final_success = None
        return TrainOutcome(result, final_return, final_success)

    async def cmd_train(self, config_path: Path) -> TrainOutcome:
        config = load_run_config(config_path)
        outcome = await self._train_run(config)
        self._show_metrics(outcome.result.metrics, config.output_dir)
        self.console.print(
            f"Final average over the last three evaluations: return "
            f"{format_decimal(outcome.final_return)}, success {format_decimal(outcome.final_success)}"
        )
        return outcome

    async def cmd_eval(
        self,
        model_path: Path,
        env: str,
        m_inf: int,
        n: int,
        episodes: int,
        seed: int,
        out: Optional[str] = None,
    ) -> Path:
        config = InferenceConfig(m_inf=m_inf, n=n, episodes=episodes, seed=seed)
        spec = get_env_spec(env)
        artifacts = RunArtifacts(model_path.parent)
        bundle = await artifacts.load_model(model_path)
        policy, critic = bundle.state.policy, bundle.state.critic
        if (policy.obs_dim, policy.action_dim) != (spec.obs_dim, spec.action_dim):
            raise UsageError(
                f"model dimensions ({policy.obs_dim}, {policy.action_dim}) do not match {env} "
                f"({spec.obs_dim}, {spec.action_dim})"
            )
        if m_inf > policy.m_disc:
            raise UsageError(f"m_inf={m_inf} exceeds the model's m_disc={policy.m_disc}")
        with self.console.status(f"[bold green]Evaluating {episodes} episodes...", spinner="dots"):
            result = await anyio.to_thread.run_sync(evaluate, policy, critic, spec, config)
        path = Path(out) if out else model_path.parent / f"eval_m{m_inf}_n{n}.csv"
        await artifacts.write_csv(path, EpisodeRecord.COLUMNS, [record.values() for record in result.episodes])

        table = self.current_theme.table("Evaluation", ("env", "m_inf", "N", "episodes", "mean return", "success", "stderr"))
        table.add_row(
            env,
            str(m_inf),
            str(n),
            str(episodes),
            f"{result.mean_return:.4f}",
            f"{result.success_rate:.3f}",
            f"{result.stderr:.4f}",
        )
        self.console.print(table)
        return path

    async def cmd_sweep(
        self,
        model_path: Path,
        env: str,
        m_inf_list: Sequence[int],
        n_list: Sequence[int],
        episodes: int,
        seed: int,
        out: Path,
    ) -> list[SweepRow]:
        bad = [m for m in m_inf_list if not is_power_of_two(m)]
        if bad or not m_inf_list or not n_list or any(n < 1 for n in n_list):
            raise UsageError(f"m_inf values must be powers of two and N values >= 1 (got m_inf={list(m_inf_list)}, N={list(n_list)})")
        spec = get_env_spec(env)
        artifacts = RunArtifacts(out.parent)
        bundle = await artifacts.load_model(model_path)
        policy, critic = bundle.state.policy, bundle.state.critic
        if (policy.obs_dim, policy.action_dim) != (spec.obs_dim, spec.action_dim):
            raise UsageError(f"model dimensions do not match {env}")
        if max(m_inf_list) > policy.m_disc:
            raise UsageError(f"m_inf values must not exceed the model's m_disc={policy.m_disc}")
        with self.console.status(
            f"[bold green]Sweeping {len(m_inf_list)}x{len(n_list)} cells...", spinner="dots"
        ):
            rows = await anyio.to_thread.run_sync(
                scaling_sweep, policy, critic, spec, list(m_inf_list), list(n_list), episodes, seed
            )
        await artifacts.write_csv(out, SweepRow.COLUMNS, [row.values() for row in rows])

        table = self.current_theme.table("Inference scaling", SweepRow.COLUMNS)
        for row in rows:
            table.add_row(
                str(row.m_inf),
                str(row.n),
                f"{row.mean_return:.4f}",
                f"{row.success_rate:.3f}",
                f"{row.stderr:.4f}",
                str(row.episodes),
            )
        self.console.print(table)
        return rows

    async def cmd_verify(self, suite: str, out: Path, seed: int = 0, steps: Optional[int] = None) -> bool:
        options: dict[str, object] = {"seed": seed}
        if suite == "theorem1" and steps is not None:
            options["steps"] = steps
        with self.console.status(f"[bold green]Running {suite} suite...", spinner="dots"):
            result = await anyio.to_thread.run_sync(lambda: run_suite(suite, **options))
        await RunArtifacts(out.parent).write_csv(out, result.columns, result.rows)

        table = self.current_theme.table(f"Verification: {suite}", result.columns)
        for row in result.rows:
            table.add_row(*[self._cell(v) for v in row])
        self.console.print(table)
        self.console.print(f"Suite {suite}: {self.current_theme.status_text(result.passed)}")
        return result.passed

    async def cmd_tune(self, config_path: Path, grid: Sequence[float]) -> float:
        """Train once per Q-loss coefficient; returns the coefficient with the best final success."""
        if not grid or any(v < 0 for v in grid):
            raise UsageError("the alpha_q grid needs at least one non-negative value")
        base = load_run_config(config_path)
        rows = await self._sweep_runs(base, "alpha_q", grid, "tune.csv", "Q-loss coefficient tuning")
        scored = [row for row in rows if row[2] is not None]
        if not scored:
            raise UsageError("tuning needs evaluation rows; check eval_every against grad_steps")
        best = max(scored, key=lambda row: (row[2], row[1]))
        self.console.print(f"Best alpha_q: [{self.current_theme.success}]{format_decimal(best[0])}[/]")
        return float(best[0])

    async def cmd_tune_btt(self, config_path: Path, grid: Optional[Sequence[int]] = None) -> list[list[object]]:
        """Train once per backprop-through-time depth, every other setting fixed."""
        base = load_run_config(config_path)
        grid = list(grid) if grid else powers_of_two_up_to(base.m_disc)
        bad = [m for m in grid if not is_power_of_two(m) or m > base.m_disc]
        if bad:
            raise UsageError(f"m_btt values must be powers of two no larger than m_disc={base.m_disc}, got {bad}")
        return await self._sweep_runs(base, "m_btt", grid, "tune_btt.csv", "Backprop-through-time depth")

    async def _sweep_runs(
        self, base: RunConfig, key: str, grid: Sequence[object], csv_name: str, title: str
    ) -> list[list[object]]:
        """One training run per value of a single config key, each in its own subdirectory."""
        rows: list[list[object]] = []
        for value in grid:
            label = format_decimal(value) if isinstance(value, float) else str(value)
            config = base.model_copy(update={key: value, "output_dir": base.output_dir / f"{key}_{label}"})
            outcome = await self._train_run(config)
            rows.append([value, outcome.final_return, outcome.final_success])
            logger.info(f"{key}={value}: success {outcome.final_success}")
        await RunArtifacts(base.output_dir).write_csv(
            base.output_dir / csv_name, (key, "final_return", "final_success"), rows
        )

        table = self.current_theme.table(title, (key, "final return", "final success"))
        for value, final_return, final_success in rows:
            table.add_row(str(value), format_decimal(final_return), format_decimal(final_success))
        self.console.print(table)
        return rows

    def _show_metrics(self, rows: Sequence[MetricsRow], output_dir: Path) -> None:
        evals = [row for row in rows if row.has_eval]
        table = self.current_theme.table(f"Evaluations ({output_dir})", ("step", "eval return", "success"))
        for row in evals:
            table.add_row(str(row.step), f"{row.eval_return:.4f}", f"{row.success_rate:.3f}")
        self.console.print(table)


def _int_list(text: str, flag: str) -> list[int]:
    try:
        return parse_int_list(text)
    except ValueError:
        raise UsageError(f"{flag} expects comma-separated integers, got {text!r}") from None


def _float_list(text: str, flag: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise UsageError(f"{flag} expects comma-separated numbers, got {text!r}") from None


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sorl", description="Offline RL with shortcut generative policies")
    parser.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser.add_argument("--theme", default="desk", choices=list_themes())
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen-data", help="generate a behavior dataset")
    gen.add_argument("--env", required=True)
    gen.add_argument("--n", type=_positive_int, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)

    train_cmd = commands.add_parser("train", help="train from a config file")
    train_cmd.add_argument("config")

    eval_cmd = commands.add_parser("eval", help="evaluate a trained model")
    eval_cmd.add_argument("--model", required=True)
    eval_cmd.add_argument("--env", required=True)
    eval_cmd.add_argument("--m-inf", type=int, default=4)
    eval_cmd.add_argument("--n", type=int, default=1)
    eval_cmd.add_argument("--episodes", type=int, default=50)
    eval_cmd.add_argument("--seed", type=int, default=0)
    eval_cmd.add_argument("--out", default=None)

    sweep = commands.add_parser("sweep", help="sequential x parallel scaling grid")
    sweep.add_argument("--model", required=True)
    sweep.add_argument("--env", required=True)
    sweep.add_argument("--m-inf", default="1,2,4,8")
    sweep.add_argument("--n", default="1,8")
    sweep.add_argument("--episodes", type=_positive_int, default=50)
    sweep.add_argument("--seed", type=int, default=0)
    sweep.add_argument("--out", default="sweep.csv")

    verify = commands.add_parser("verify", help="run a verification suite")
    verify.add_argument("suite", choices=list(SUITES))
    verify.add_argument("--out", default="report.csv")
    verify.add_argument("--seed", type=int, default=0)
    verify.add_argument("--steps", type=_positive_int, default=None)

    tune = commands.add_parser("tune", help="pick the Q-loss coefficient")
    tune.add_argument("config")
    tune.add_argument("--alpha-q", default=DEFAULT_TUNE_GRID)

    tune_btt = commands.add_parser("tune-btt", help="compare backprop-through-time depths")
    tune_btt.add_argument("config")
    tune_btt.add_argument("--m-btt", default=None, help="comma-separated depths; all powers of two up to m_disc by default")
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments and run one command; returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    configure_logging(args.log_level)
    cli = SorlCLI(theme=args.theme)
    return anyio.run(cli.run, args)


def main():
    """Main entry point for the CLI application."""
    sys.exit(run())


if __name__ == "__main__":
    main()
