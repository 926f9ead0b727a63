"""Provider-agnostic chat-completion client with record/replay.

One request contract (chat-completion shape) serves both the evaluated
models and the judge ensemble. Live calls retry transient failures with
exponential backoff; record mode persists every completion keyed by a
content-addressed prompt hash; replay mode answers purely from the fixture
store and never touches the network.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .errors import ConfigError, GatewayError
from .promptkit import ScenarioPrompt, build_evaluation_prompt
from .util import slugify, stable_digest

MODES = ("live", "record", "replay")

BACKOFF_BASE_SECONDS = 0.5


@dataclass(frozen=True)
class EndpointConfig:
    name: str
    model: str
    base_url: str = ""
    provider: str = "openai-chat"
    credential_env: str = ""
    timeout: float = 60.0
    max_retries: int = 3
    max_concurrent: int = 2
    temperature: float = 0.0


@dataclass(frozen=True)
class CompletionRecord:
    prompt_hash: str
    response_text: str
    latency_seconds: float
    timestamp: str
    mode: str
    endpoint_name: str = ""
    model: str = ""

    def to_jsonable(self) -> dict:
        return {
            "prompt_hash": self.prompt_hash,
            "response_text": self.response_text,
            "latency_seconds": self.latency_seconds,
            "timestamp": self.timestamp,
            "mode": self.mode,
            "endpoint_name": self.endpoint_name,
            "model": self.model,
        }

    @classmethod
    def from_jsonable(cls, data: dict) -> "CompletionRecord":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})


def prompt_hash(model: str, prompt: str) -> str:
    """Content-addressed digest of (model name, rendered prompt)."""
    return stable_digest("completion", model, prompt)


class FixtureStore:
    """One JSON file per completion record, named by prompt hash."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, digest: str) -> Path:
        return self.directory / f"{digest}.json"

    def get(self, digest: str) -> CompletionRecord | None:
        path = self._path(digest)
        if not path.exists():
            return None
        return CompletionRecord.from_jsonable(json.loads(path.read_text(encoding="utf-8")))

    def put(self, record: CompletionRecord) -> None:
        self._path(record.prompt_hash).write_text(
            json.dumps(record.to_jsonable(), indent=2), encoding="utf-8"
        )

    def __contains__(self, digest: str) -> bool:
        return self._path(digest).exists()


class TransientTransportError(GatewayError):
    """Retryable transport failure (connection errors, 429, 5xx)."""


class HttpTransport:
    """POSTs an OpenAI-style chat-completion request and extracts the text."""

    def __call__(self, config: EndpointConfig, prompt: str, credential: str) -> str:
        import requests

        try:
            response = requests.post(
                config.base_url,
                headers={"Authorization": f"Bearer {credential}"},
                json={
                    "model": config.model,
                    "messages": [{"role": "user", "content": prompt}],
                    "temperature": config.temperature,
                },
                timeout=config.timeout,
            )
        except requests.RequestException as exc:
            raise TransientTransportError(f"transport failure: {exc}") from exc
        if response.status_code == 429 or response.status_code >= 500:
            raise TransientTransportError(f"HTTP {response.status_code} from {config.name}")
        if response.status_code != 200:
            raise GatewayError(f"HTTP {response.status_code} from {config.name}")
        try:
            return response.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise GatewayError(f"malformed completion payload from {config.name}") from exc


def complete(
    config: EndpointConfig,
    prompt: str,
    mode: str,
    store: FixtureStore | None = None,
    transport=None,
    sleep=time.sleep,
) -> str:
    """One completion in live, record, or replay mode.

    Replay answers from the store only; a miss is an explicit error naming
    the prompt hash, never a silent live call. Live/record retries
    transient failures with exponential backoff, and record persists the
    result keyed by prompt hash.
    """
    if mode not in MODES:
        raise ConfigError(f"unknown mode: {mode!r}")
    digest = prompt_hash(config.model, prompt)

    if mode == "replay":
        if store is None:
            raise ConfigError("replay mode requires a fixture store")
        record = store.get(digest)
        if record is None:
            raise GatewayError(f"replay miss for prompt hash {digest} (endpoint {config.name})")
        return record.response_text

    if not config.credential_env:
        raise ConfigError(f"endpoint {config.name} has no credential_env configured")
    credential = os.environ.get(config.credential_env)
    if not credential:
        raise ConfigError(
            f"credential environment variable {config.credential_env} is not set"
        )
    if transport is None:
        transport = HttpTransport()

    attempts = config.max_retries + 1
    started = time.perf_counter()
    last_error: Exception | None = None
    for attempt in range(attempts):
        try:
            text = transport(config, prompt, credential)
            break
        except TransientTransportError as exc:
            last_error = exc
            if attempt < attempts - 1:
                sleep(BACKOFF_BASE_SECONDS * (2**attempt))
    else:
        raise GatewayError(
            f"retries exhausted for endpoint {config.name}: {last_error}"
        )

    if mode == "record":
        if store is None:
            raise ConfigError("record mode requires a fixture store")
        store.put(
            CompletionRecord(
                prompt_hash=digest,
                response_text=text,
                latency_seconds=time.perf_counter() - started,
                timestamp=datetime.now(timezone.utc).isoformat(),
                mode="live",
                endpoint_name=config.name,
                model=config.model,
            )
        )
    return text


@dataclass
class MatrixCell:
    scenario_id: str
    endpoint_name: str
    role: str  # evaluated | judge
    response_text: str
    prompt_hash: str


@dataclass
class MatrixBundle:
    """Everything one triage run produced, with holes marked explicitly."""

    cells: dict[tuple[str, str], MatrixCell] = field(default_factory=dict)
    assignments: dict[str, dict[str, str]] = field(default_factory=dict)
    evaluation_prompts: dict[str, str] = field(default_factory=dict)
    missing: list[dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.missing

    def response(self, scenario_id: str, endpoint_name: str) -> str:
        return self.cells[(scenario_id, endpoint_name)].response_text


def _cell_path(out_dir: Path, scenario_id: str, endpoint_name: str) -> Path:
    return out_dir / "completions" / slugify(scenario_id) / f"{slugify(endpoint_name)}.json"


def _load_cell(path: Path) -> MatrixCell:
    data = json.loads(path.read_text(encoding="utf-8"))
    return MatrixCell(**data)


def _save_cell(path: Path, cell: MatrixCell) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(cell.__dict__, indent=2), encoding="utf-8")


def run_matrix(
    scenarios: list[ScenarioPrompt],
    evaluated: list[EndpointConfig],
    judges: list[EndpointConfig],
    mode: str,
    out_dir: str | Path,
    seed: int,
    store: FixtureStore | None = None,
    transport=None,
    sleep=time.sleep,
) -> MatrixBundle:
    """Evaluated completions then judge completions for every scenario.

    Artifacts persist under ``out_dir`` as they complete; re-running over
    the same directory loads finished cells instead of re-issuing them, so
    partially failed runs resume. Failures mark cells missing and
    processing continues.
    """
    if len(evaluated) != 2:
        raise ConfigError(f"expected exactly 2 evaluated endpoints, got {len(evaluated)}")
    names = [e.name for e in evaluated] + [j.name for j in judges]
    if len(set(names)) != len(names):
        raise ConfigError("endpoint names must be unique across evaluated and judges")

    out_dir = Path(out_dir)
    bundle = MatrixBundle()

    for scenario in scenarios:
        responses: dict[str, str] = {}
        for endpoint in evaluated:
            cell = _run_cell(
                bundle, out_dir, scenario.scenario_id, endpoint, "evaluated",
                scenario.rendered, mode, store, transport, sleep,
            )
            if cell is not None:
                responses[endpoint.name] = cell.response_text

        if len(responses) < 2:
            for judge in judges:
                bundle.missing.append(
                    {
                        "scenario_id": scenario.scenario_id,
                        "endpoint": judge.name,
                        "error": "evaluated responses incomplete",
                    }
                )
            continue

        eval_prompt = build_evaluation_prompt(
            scenario,
            (evaluated[0].name, responses[evaluated[0].name]),
            (evaluated[1].name, responses[evaluated[1].name]),
            seed=seed,
        )
        bundle.assignments[scenario.scenario_id] = eval_prompt.assignment
        bundle.evaluation_prompts[scenario.scenario_id] = eval_prompt.rendered
        assignment_path = out_dir / "assignments" / f"{slugify(scenario.scenario_id)}.json"
        assignment_path.parent.mkdir(parents=True, exist_ok=True)
        assignment_path.write_text(
            json.dumps(
                {"scenario_id": scenario.scenario_id, "seed": seed, "assignment": eval_prompt.assignment},
                indent=2,
            ),
            encoding="utf-8",
        )

        for judge in judges:
            _run_cell(
                bundle, out_dir, scenario.scenario_id, judge, "judge",
                eval_prompt.rendered, mode, store, transport, sleep,
            )

    return bundle


def _run_cell(
    bundle: MatrixBundle,
    out_dir: Path,
    scenario_id: str,
    endpoint: EndpointConfig,
    role: str,
    prompt: str,
    mode: str,
    store: FixtureStore | None,
    transport,
    sleep,
) -> MatrixCell | None:
    path = _cell_path(out_dir, scenario_id, endpoint.name)
    if path.exists():
        cell = _load_cell(path)
        bundle.cells[(scenario_id, endpoint.name)] = cell
        return cell
    try:
        text = complete(endpoint, prompt, mode, store=store, transport=transport, sleep=sleep)
    except (GatewayError, ConfigError) as exc:
        bundle.missing.append(
            {"scenario_id": scenario_id, "endpoint": endpoint.name, "error": str(exc)}
        )
        return None
    cell = MatrixCell(
        scenario_id=scenario_id,
        endpoint_name=endpoint.name,
        role=role,
        response_text=text,
        prompt_hash=prompt_hash(endpoint.model, prompt),
    )
    _save_cell(path, cell)
    bundle.cells[(scenario_id, endpoint.name)] = cell
    return cell
