"""Prompt construction: attack scenarios and judge evaluations.

Templates are editable text resources split into named sections; rendering
is a pure function of the inputs plus the A/B seed, so prompt bytes are
stable across runs. Evaluated-model names never appear in an evaluation
render; the A/B assignment lives only in the returned record.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from importlib import resources as importlib_resources
from pathlib import Path

from .dataset import CanonicalAttack, harmonize_label, native_labels
from .errors import DataError
from .rag import DeviceSpec
from .util import render_template

SCENARIO_SECTION_ORDER = ("role", "attack_class", "traffic", "knowledge", "requirements")
EVALUATION_SECTION_ORDER = ("role", "scenario", "responses", "rubric", "instructions")

DEFAULT_ENVIRONMENT = "IoT/IIoT"

_SECTION_MARKER = re.compile(r"^\[\[(\w+)\]\]$", re.MULTILINE)


def _load_template(name: str, path: str | Path | None = None) -> dict[str, str]:
    """Parse a sectioned template file into {section: body}."""
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
    else:
        text = (
            importlib_resources.files("iotriage.resources.templates")
            .joinpath(name)
            .read_text(encoding="utf-8")
        )
    sections: dict[str, str] = {}
    matches = list(_SECTION_MARKER.finditer(text))
    if not matches:
        raise DataError(f"template {name!r} has no [[section]] markers")
    for i, match in enumerate(matches):
        start = match.end()
        end = matches[i + 1].start() if i + 1 < len(matches) else len(text)
        sections[match.group(1)] = text[start:end].strip("\n")
    return sections


@dataclass(frozen=True)
class ScenarioSpec:
    """One of the native attack classes a scenario prompt is built for."""

    source_id: str
    native_label: str
    canonical: CanonicalAttack

    @property
    def scenario_id(self) -> str:
        return f"{self.source_id}/{self.native_label}"


@dataclass
class ScenarioPrompt:
    scenario_id: str
    attack_canonical: str
    attack_native: str
    role_preamble: str
    features_json: str
    attack_description: str
    device_spec: DeviceSpec
    output_requirements: str
    rendered: str


@dataclass
class EvaluationPrompt:
    scenario: ScenarioPrompt
    response_a: str
    response_b: str
    assignment: dict[str, str] = field(repr=False)  # {"A": model_id, "B": model_id}
    rubric_text: str = ""
    rendered: str = ""


def enumerate_scenarios(sources: tuple[str, ...] = ("edge-iiotset", "ciciot2023")) -> list[ScenarioSpec]:
    """One ScenarioSpec per native attack label across the given datasets."""
    specs = []
    for source_id in sources:
        for native in native_labels(source_id, attacks_only=True):
            specs.append(
                ScenarioSpec(
                    source_id=source_id,
                    native_label=native,
                    canonical=harmonize_label(native, source_id),
                )
            )
    return specs


def build_scenario_prompt(
    attack: ScenarioSpec | str,
    features_json: str,
    attack_description: str,
    device: DeviceSpec,
    environment: str = DEFAULT_ENVIRONMENT,
    template_path: str | Path | None = None,
) -> ScenarioPrompt:
    """Render the five-section attack scenario prompt.

    Sections, in order: analyst role preamble, explicit attack class
    statement, JSON traffic block, retrieved attack knowledge plus device
    specifications, and structured output requirements.
    """
    if isinstance(attack, str):
        spec_id, attack_native, attack_canonical = "custom", attack, attack
    else:
        spec_id = attack.scenario_id
        attack_native = attack.native_label
        attack_canonical = attack.canonical.name
    if not attack_native.strip():
        raise DataError("attack label is empty")
    if not attack_description.strip():
        raise DataError("attack description is empty")
    try:
        parsed = json.loads(features_json)
    except json.JSONDecodeError as exc:
        raise DataError(f"features_json is not valid JSON: {exc}") from None
    if not isinstance(parsed, dict):
        raise DataError("features_json must be a JSON object")

    attack_label = (
        attack_canonical
        if attack_canonical == attack_native
        else f"{attack_canonical} ({attack_native})"
    )
    values = {
        "environment": environment,
        "attack_class": attack_label,
        "features_json": features_json,
        "attack_description": attack_description,
        "device_spec": device.describe(),
    }
    sections = _load_template("scenario_prompt.txt", template_path)
    missing = [name for name in SCENARIO_SECTION_ORDER if name not in sections]
    if missing:
        raise DataError(f"scenario template missing sections: {missing}")
    rendered_sections = {
        name: render_template(sections[name], values) for name in SCENARIO_SECTION_ORDER
    }
    rendered = "\n\n".join(rendered_sections[name] for name in SCENARIO_SECTION_ORDER)

    return ScenarioPrompt(
        scenario_id=spec_id,
        attack_canonical=attack_canonical,
        attack_native=attack_native,
        role_preamble=rendered_sections["role"],
        features_json=features_json,
        attack_description=attack_description,
        device_spec=device,
        output_requirements=rendered_sections["requirements"],
        rendered=rendered,
    )


def assignment_flip(seed: int, scenario_id: str) -> bool:
    """Deterministic coin flip for A/B order, stable across platforms."""
    digest = hashlib.sha256(f"{seed}|{scenario_id}".encode("utf-8")).digest()
    return digest[0] % 2 == 1


def _scrub(text: str, names: tuple[str, ...]) -> str:
    for name in names:
        if name:
            text = re.sub(re.escape(name), "[redacted model]", text, flags=re.IGNORECASE)
    return text


def build_evaluation_prompt(
    scenario: ScenarioPrompt,
    resp_x: tuple[str, str],
    resp_y: tuple[str, str],
    seed: int,
    template_path: str | Path | None = None,
) -> EvaluationPrompt:
    """Render the judge prompt with seeded anonymous A/B assignment.

    ``resp_x`` and ``resp_y`` are (model id, response text) pairs from two
    distinct evaluated models. Which lands as Response A is decided by a
    seeded coin flip per scenario and recorded only in the assignment map;
    model names are scrubbed from the rendered text.
    """
    (model_x, text_x), (model_y, text_y) = resp_x, resp_y
    if model_x == model_y:
        raise DataError(f"evaluation needs two distinct models, got {model_x!r} twice")

    if assignment_flip(seed, scenario.scenario_id):
        assignment = {"A": model_y, "B": model_x}
        text_a, text_b = text_y, text_x
    else:
        assignment = {"A": model_x, "B": model_y}
        text_a, text_b = text_x, text_y

    names = (model_x, model_y)
    text_a = _scrub(text_a, names)
    text_b = _scrub(text_b, names)

    sections = _load_template("evaluation_prompt.txt", template_path)
    missing = [name for name in EVALUATION_SECTION_ORDER if name not in sections]
    if missing:
        raise DataError(f"evaluation template missing sections: {missing}")
    values = {
        "scenario_prompt": _scrub(scenario.rendered, names),
        "response_a": text_a,
        "response_b": text_b,
    }
    rendered_sections = {
        name: render_template(sections[name], values) for name in EVALUATION_SECTION_ORDER
    }
    rendered = "\n\n".join(rendered_sections[name] for name in EVALUATION_SECTION_ORDER)

    return EvaluationPrompt(
        scenario=scenario,
        response_a=text_a,
        response_b=text_b,
        assignment=assignment,
        rubric_text=rendered_sections["rubric"],
        rendered=rendered,
    )
