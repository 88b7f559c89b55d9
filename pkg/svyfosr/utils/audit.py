"""Run manifests: the audit trail written next to every CLI output."""
import json
import logging
import time
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Union

from pydantic_core import to_jsonable_python

from svyfosr import __version__
from svyfosr.schemas import RunManifest

logger = logging.getLogger(__name__)


def _jsonable(value: Any) -> Any:
    return to_jsonable_python(value, fallback=_array_fallback)


def _array_fallback(value: Any) -> Any:
    # numpy arrays and scalars
    if hasattr(value, "tolist"):
        return value.tolist()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def write_manifest(
    out_dir: Union[str, Path],
    subcommand: str,
    started: float,
    seed: Optional[int] = None,
    config: Optional[Dict[str, Any]] = None,
    inputs: Optional[Dict[str, Union[str, Path]]] = None,
    outputs: Iterable[Union[str, Path]] = (),
    replicate_failures: int = 0,
    results: Optional[Dict[str, Any]] = None,
    filename: str = "manifest.json",
) -> Path:
    """
    Record a run.

    Args:
        out_dir: Directory the run wrote to
        subcommand: CLI subcommand name
        started: ``time.perf_counter()`` at the start of the run
        seed: Base seed
        config: Fully resolved configuration
        inputs: Named input paths
        outputs: Files written by the run
        replicate_failures: Replicate fits dropped
        results: Run summary (penalties, joint quantiles, ...)
        filename: Manifest file name

    Returns:
        Path of the manifest
    """
    manifest = RunManifest(
        subcommand=subcommand,
        version=__version__,
        seed=seed,
        config=_jsonable(config or {}),
        inputs={k: str(v) for k, v in (inputs or {}).items()},
        outputs=[str(p) for p in outputs],
        wall_time_seconds=round(time.perf_counter() - started, 3),
        replicate_failures=replicate_failures,
        results=_jsonable(results or {}),
    )
    path = Path(out_dir) / filename
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest.model_dump(mode="json"), indent=2, sort_keys=True))
    logger.info("wrote manifest %s", path)
    return path
