"""Command-line entry point."""
from __future__ import annotations

import argparse
import asyncio
import difflib
import json
import logging
import shutil
import sys
import tempfile
from importlib import resources
from pathlib import Path
from typing import Any, Optional, Sequence

import aiofiles  # type: ignore
import aiohttp

from .api import ChatGateway, LiveChatBackend, ReplayChatBackend, TranscriptWriter, file_digest
from .config import RunConfig, config_from_sections, load_config
from .const import (
    BACKEND_LIVE,
    BACKEND_REPLAY,
    CONF_ADAPTER,
    CONF_BACKEND,
    CONF_LIMITS,
    CONF_LOGGING,
    CONF_METRICS,
    CONF_PROJECT,
    DIR_TESTS,
    DIR_UNITS,
    EXIT_FAILURE,
    EXIT_OK,
    EXIT_USAGE,
    FILE_RUN,
    FILE_TRANSCRIPT,
    FILE_UNITS,
    MODES,
    SIGNIFICANCE_UNIT_CLASS,
    SIGNIFICANCE_UNIT_PROJECT,
    TOOLCHAIN_MAVEN,
    TOOLCHAIN_SIMULATED,
    VERSION,
)
from .coordinator import GenerationCoordinator, GenerationRun, GranularityMode, run_to_json
from .exceptions import ConfigurationError, GranutestError, InputError
from .languages import get_adapter
from .log import setup_logging
from .maven import MavenToolchain
from .metrics import SuiteMetrics
from .report import emit_report
from .simulator import simulated_toolchain
from .source_model import discover_units
from .toolchain import Toolchain

_LOGGER = logging.getLogger(__name__)

DEMO_PACKAGE = "granutest.demo"
DEMO_FILES = ("granutest.toml", "toolchain.json", "transcript.jsonl")


class VerificationError(GranutestError):
    """Raised when a replayed run diverges from its recording."""


def build_toolchain(config: RunConfig) -> Toolchain:
    """Create the configured toolchain adapter."""
    adapter = get_adapter(config.language)
    if config.adapter.toolchain == TOOLCHAIN_SIMULATED:
        return simulated_toolchain(config.adapter.script, adapter)
    return MavenToolchain(
        adapter,
        executable=config.adapter.executable,
        compile_timeout=config.adapter.compile_timeout,
        test_timeout=config.adapter.test_timeout,
        extra_args=list(config.adapter.extra_args),
    )


async def _write_text(path: Path, content: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    async with aiofiles.open(path, mode="w", encoding="utf-8") as f:
        await f.write(content)


async def run_generate(config: RunConfig) -> tuple[GenerationRun, dict[str, Any]]:
    """Execute one configured run and write its output tree.

    Returns:
        The run and the ``run.json`` document
    """
    out_dir = config.output_dir
    for stale in (out_dir / DIR_TESTS, out_dir / DIR_UNITS):
        if stale.is_dir():
            shutil.rmtree(stale)
    (out_dir / FILE_TRANSCRIPT).unlink(missing_ok=True)

    project = discover_units(config.project_root, config.language)
    _LOGGER.info(
        "Discovered %s containers and %s methods in %s",
        len(project.containers),
        project.mut_count,
        project.name,
    )
    toolchain = build_toolchain(config)
    transcript = TranscriptWriter(out_dir / FILE_TRANSCRIPT)

    async def execute(backend) -> GenerationRun:
        gateway = ChatGateway(
            backend,
            transcript=transcript,
            max_retries=config.backend.max_retries,
            retry_delay=config.backend.retry_delay,
        )
        coordinator = GenerationCoordinator(
            project,
            toolchain,
            gateway,
            templates=config.templates,
            repair_limit=config.repair_limit,
            workers=config.worker_bound,
            temperature=config.temperature,
            prune_rounds=config.prune_rounds,
            skip_abstract=config.skip_abstract,
            measure_mutation=config.measure_mutation,
            system_message=config.backend.system_message,
        )
        run = await coordinator.run(GranularityMode(config.mode))
        await coordinator.write_outputs(run, out_dir)
        return run

    if config.backend.kind == BACKEND_REPLAY:
        replay = ReplayChatBackend.from_file(config.backend.transcript, config.backend.model)
        run = await execute(replay)
        if replay.unconsumed:
            _LOGGER.warning("%s transcript records were never requested", len(replay.unconsumed))
    else:
        async with aiohttp.ClientSession() as session:
            live = LiveChatBackend(
                session,
                config.backend.endpoint,
                config.backend.model,
                config.backend.api_key(),
                timeout=config.backend.timeout,
                requests_per_minute=config.backend.requests_per_minute,
            )
            run = await execute(live)

    digest = await transcript.finalize()
    document = {
        "version": VERSION,
        "config": config.as_dict(),
        "run": run.as_dict(),
        "metrics": SuiteMetrics.from_run(run).as_dict(),
        "transcript_sha256": digest,
    }
    await _write_text(out_dir / FILE_RUN, run_to_json(document))
    if run.aborted_units:
        _LOGGER.warning("%s units aborted: %s", len(run.aborted_units), ", ".join(run.aborted_units))
    _LOGGER.info(
        "Run %s finished: %s requests, %s of %s tests passing",
        run.mode.value,
        run.ledger.total_requests,
        run.ledger.passing_tests,
        run.ledger.generated_tests,
    )
    return run, document


def load_run_document(run_dir: Path) -> dict[str, Any]:
    """Read ``run.json`` of a run directory.

    Raises:
        InputError: If it is missing or corrupt
    """
    path = Path(run_dir) / FILE_RUN
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
        for key in ("config", "run", "transcript_sha256"):
            document[key]  # pylint: disable=pointless-statement
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as err:
        raise InputError(f"Missing or corrupt {path}: {err}") from err
    return document


def _tree(root: Path) -> dict[str, bytes]:
    files = {}
    for name in (DIR_TESTS, DIR_UNITS):
        base = root / name
        if base.is_dir():
            for path in sorted(base.rglob("*")):
                if path.is_file():
                    files[path.relative_to(root).as_posix()] = path.read_bytes()
    for name in (FILE_UNITS, FILE_TRANSCRIPT):
        if (root / name).is_file():
            files[name] = (root / name).read_bytes()
    return files


def first_divergence(recorded: Path, replayed: Path, replayed_run: dict[str, Any]) -> Optional[str]:
    """Return a diff of the first differing artifact, or None."""
    expected = _tree(recorded)
    actual = _tree(replayed)
    for name in sorted(set(expected) | set(actual)):
        if expected.get(name) == actual.get(name):
            continue
        before = expected.get(name, b"").decode("utf-8", "replace").splitlines(keepends=True)
        after = actual.get(name, b"").decode("utf-8", "replace").splitlines(keepends=True)
        diff = "".join(difflib.unified_diff(before, after, f"recorded/{name}", f"replayed/{name}"))
        return diff or f"{name} differs"
    original = load_run_document(recorded)["run"]
    replayed_run = json.loads(json.dumps(replayed_run))
    if original != replayed_run:
        before = json.dumps(original, indent=2, sort_keys=True).splitlines(keepends=True)
        after = json.dumps(replayed_run, indent=2, sort_keys=True).splitlines(keepends=True)
        return "".join(difflib.unified_diff(before, after, f"recorded/{FILE_RUN}", f"replayed/{FILE_RUN}"))
    return None


async def verify_replay(run_dir: Path, scratch: Optional[Path] = None) -> None:
    """Re-run a recorded run against its transcript and compare outputs.

    Raises:
        VerificationError: On a digest mismatch or any divergence
    """
    run_dir = Path(run_dir)
    document = load_run_document(run_dir)
    transcript = run_dir / FILE_TRANSCRIPT
    if not transcript.is_file():
        raise VerificationError(f"No transcript in {run_dir}")
    if file_digest(transcript) != document["transcript_sha256"]:
        raise VerificationError(f"{transcript} does not match the digest recorded in {FILE_RUN}")

    sections = json.loads(json.dumps(document["config"]))
    with tempfile.TemporaryDirectory(prefix="granutest-verify-") as tmp:
        out_dir = Path(scratch) if scratch else Path(tmp)
        sections.setdefault(CONF_BACKEND, {}).update(kind=BACKEND_REPLAY, transcript=str(transcript.resolve()))
        sections.setdefault(CONF_PROJECT, {})["output_dir"] = str(out_dir.resolve())
        config = config_from_sections(sections)
        _, replayed = await run_generate(config)
        diff = first_divergence(run_dir, out_dir, replayed["run"])
    if diff is not None:
        raise VerificationError(f"Replay diverged from the recording:\n{diff}")


async def write_demo(target: Path) -> Path:
    """Copy the bundled demo project into ``target``."""
    target = Path(target)
    source = resources.files(DEMO_PACKAGE)
    for name in DEMO_FILES:
        await _write_text(target / name, source.joinpath(name).read_text(encoding="utf-8"))
    for relative, item in _walk(source.joinpath("project")):
        await _write_text(target / "project" / relative, item.read_text(encoding="utf-8"))
    return target


def _walk(node, prefix: str = "") -> list[tuple[str, Any]]:
    found = []
    for child in node.iterdir():
        name = f"{prefix}{child.name}"
        if child.is_dir():
            found.extend(_walk(child, f"{name}/"))
        elif child.name.endswith(".java"):
            found.append((name, child))
    return sorted(found, key=lambda item: item[0])


def build_parser() -> argparse.ArgumentParser:
    """Return the argument parser."""
    parser = argparse.ArgumentParser(
        prog="granutest", description="Generate unit tests with an LLM at several granularities."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {VERSION}")
    parser.add_argument("--config", type=Path, help="TOML configuration file")
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    commands = parser.add_subparsers(dest="command", required=True)

    generate = commands.add_parser("generate", help="Generate tests for a project")
    generate.add_argument("--mode", choices=MODES)
    generate.add_argument("--project", type=Path, help="Project root")
    generate.add_argument("--backend", choices=[BACKEND_LIVE, BACKEND_REPLAY])
    generate.add_argument("--model")
    generate.add_argument("--endpoint")
    generate.add_argument("--transcript", type=Path, help="Transcript to replay")
    generate.add_argument("--workers", type=int)
    generate.add_argument("--repair-limit", type=int)
    generate.add_argument("--temperature", type=float)
    generate.add_argument("--toolchain", choices=[TOOLCHAIN_MAVEN, TOOLCHAIN_SIMULATED])
    generate.add_argument("--script", type=Path, help="Simulator script")
    generate.add_argument("--out", type=Path, help="Output directory")

    report = commands.add_parser("report", help="Compare finished runs")
    report.add_argument("run_dirs", nargs="+", type=Path)
    report.add_argument("--out", type=Path, default=Path("granutest-report"))
    report.add_argument(
        "--significance-unit", choices=[SIGNIFICANCE_UNIT_PROJECT, SIGNIFICANCE_UNIT_CLASS]
    )

    verify = commands.add_parser("replay-verify", help="Re-run a run from its transcript")
    verify.add_argument("run_dir", type=Path)
    verify.add_argument("--scratch", type=Path, help="Keep the replayed output here")

    units = commands.add_parser("units", help="Print the unit inventory of a project")
    units.add_argument("--project", type=Path)

    demo = commands.add_parser("demo", help="Write the bundled demo project")
    demo.add_argument("target", type=Path)
    return parser


def overrides_from_args(args: argparse.Namespace) -> dict[str, dict[str, Any]]:
    """Map flags onto config sections; unset flags are None."""
    def get(name: str) -> Any:
        return getattr(args, name, None)

    return {
        CONF_PROJECT: {"root": get("project"), "mode": get("mode"), "output_dir": get("out")},
        CONF_BACKEND: {
            "kind": get("backend"),
            "model": get("model"),
            "endpoint": get("endpoint"),
            "transcript": get("transcript"),
            "temperature": get("temperature"),
        },
        CONF_LIMITS: {"workers": get("workers"), "repair_limit": get("repair_limit")},
        CONF_ADAPTER: {"toolchain": get("toolchain"), "script": get("script")},
        CONF_METRICS: {"significance_unit": get("significance_unit")},
        CONF_LOGGING: {"level": get("log_level")},
    }


def _string_paths(overrides: dict[str, dict[str, Any]]) -> dict[str, dict[str, Any]]:
    return {
        section: {k: str(v) if isinstance(v, Path) else v for k, v in values.items()}
        for section, values in overrides.items()
    }


async def _dispatch(args: argparse.Namespace, config: RunConfig) -> int:
    if args.command == "generate":
        await run_generate(config)
        print(config.output_dir / FILE_RUN)
        return EXIT_OK
    if args.command == "units":
        project = discover_units(config.project_root, config.language)
        print(project.to_json())
        return EXIT_OK
    if args.command == "report":
        metrics = [SuiteMetrics.from_run(load_run_document(d)["run"]) for d in args.run_dirs]
        paths = await emit_report(metrics, args.out, config.significance_unit)
        for path in paths.values():
            print(path)
        return EXIT_OK
    if args.command == "replay-verify":
        await verify_replay(args.run_dir, args.scratch)
        print(f"{args.run_dir}: replay identical")
        return EXIT_OK
    if args.command == "demo":
        print(await write_demo(args.target))
        return EXIT_OK
    raise InputError(f"Unknown command {args.command}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run the command line and return the exit status."""
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config, _string_paths(overrides_from_args(args)))
    except (ConfigurationError, InputError) as err:
        print(f"granutest: {err}", file=sys.stderr)
        return EXIT_USAGE
    setup_logging(config.log_level)

    try:
        return asyncio.run(_dispatch(args, config))
    except (ConfigurationError, InputError) as err:
        _LOGGER.error("%s", err)
        if args.command == "report":
            return EXIT_FAILURE
        return EXIT_USAGE
    except VerificationError as err:
        _LOGGER.error("%s", err)
        print(str(err), file=sys.stderr)
        return EXIT_FAILURE
    except GranutestError as err:
        _LOGGER.error("%s", err)
        return EXIT_FAILURE
    except OSError as err:
        _LOGGER.error("I/O failure: %s", err)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
