"""Configurable artifact taxonomy: axes, categories, prompt templates.

The taxonomy is entirely data-driven. A taxonomy file declares the artifact
categories a deployment labels and audits; the three perceptual axes
(Appearance, Motion, Camera) are fixed, the categories under them are not.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

__all__ = [
    "Axis",
    "ArtifactCategory",
    "Taxonomy",
    "TaxonomyError",
    "ValidationResult",
    "DEFAULT_PROMPT_TEMPLATE",
    "default_taxonomy_path",
    "load_taxonomy",
    "parse_taxonomy",
    "dump_taxonomy",
    "validate_annotation",
]

DEFAULT_PROMPT_TEMPLATE = "Does this video exhibit {Artifact}?"

_ID_PATTERN = r"^[a-z][a-z0-9_]*$"


class TaxonomyError(ValueError):
    """Raised when a taxonomy document or category definition is invalid."""


class Axis(str, Enum):
    """The three perceptual axes artifact categories are grouped under."""

    APPEARANCE = "Appearance"
    MOTION = "Motion"
    CAMERA = "Camera"

    @classmethod
    def from_name(cls, name: str) -> "Axis":
        for axis in cls:
            if axis.value == name:
                return axis
        raise TaxonomyError(
            f"unknown axis {name!r}: expected one of "
            f"{[a.value for a in cls]}"
        )


@dataclass(frozen=True)
class ArtifactCategory:
    """One artifact category: a stable id, its axis, and a question template.

    ``prompt_template`` either contains the placeholder ``{Artifact}`` (which
    is replaced with ``display_name`` at question-generation time) or is a
    fully written question used verbatim.
    """

    id: str
    axis: Axis
    display_name: str
    prompt_template: str = DEFAULT_PROMPT_TEMPLATE

    def render_question(self) -> str:
        return self.prompt_template.replace("{Artifact}", self.display_name)


@dataclass(frozen=True)
class Taxonomy:
    """Ordered, validated collection of artifact categories."""

    categories: tuple[ArtifactCategory, ...]
    version: str = "unversioned"

    def __post_init__(self) -> None:
        problems = _category_problems(self.categories)
        if problems:
            raise TaxonomyError("; ".join(problems))

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(c.id for c in self.categories)

    def by_id(self, category_id: str) -> ArtifactCategory:
        for c in self.categories:
            if c.id == category_id:
                return c
        raise KeyError(category_id)

    def axis_of(self, category_id: str) -> Axis:
        return self.by_id(category_id).axis

    def __len__(self) -> int:
        return len(self.categories)

    def __iter__(self):
        return iter(self.categories)


def _category_problems(categories, indices=None) -> list[str]:
    problems = []
    if not categories:
        problems.append("empty category list")
    if indices is None:
        indices = range(len(categories))
    seen: set[str] = set()
    for i, c in zip(indices, categories):
        where = f"categories[{i}]"
        if not re.match(_ID_PATTERN, c.id or ""):
            problems.append(
                f"{where}.id: {c.id!r} is not a lowercase snake_case identifier"
            )
        if c.id in seen:
            problems.append(f"{where}.id: duplicate id {c.id!r}")
        seen.add(c.id)
        if not isinstance(c.axis, Axis):
            problems.append(f"{where}.axis: unknown axis {c.axis!r}")
        if not c.display_name:
            problems.append(f"{where}.display_name: empty")
        if not c.prompt_template:
            problems.append(f"{where}.prompt_template: empty")
    return problems


def default_taxonomy_path() -> Path:
    """Path of the taxonomy file shipped with the package."""
    return Path(resources.files("artifact").joinpath("data/default_taxonomy.json"))


def parse_taxonomy(doc: Mapping[str, Any], source: str = "<memory>") -> Taxonomy:
    """Build a Taxonomy from an already-decoded JSON document."""
    if not isinstance(doc, Mapping):
        raise TaxonomyError(f"{source}: top level must be a JSON object")
    raw_categories = doc.get("categories")
    if raw_categories is None:
        raise TaxonomyError(f"{source}: missing required key 'categories'")
    if not isinstance(raw_categories, list):
        raise TaxonomyError(f"{source}: 'categories' must be an array")

    problems: list[str] = []
    categories: list[ArtifactCategory] = []
    indices: list[int] = []
    for i, raw in enumerate(raw_categories):
        where = f"categories[{i}]"
        if not isinstance(raw, Mapping):
            problems.append(f"{where}: must be an object")
            continue
        missing = [k for k in ("id", "axis", "display_name") if k not in raw]
        if missing:
            problems.append(f"{where}: missing field(s) {missing}")
            continue
        try:
            axis = Axis.from_name(str(raw["axis"]))
        except TaxonomyError as exc:
            problems.append(f"{where}.axis: {exc}")
            continue
        categories.append(
            ArtifactCategory(
                id=str(raw["id"]),
                axis=axis,
                display_name=str(raw["display_name"]),
                prompt_template=str(
                    raw.get("prompt_template") or DEFAULT_PROMPT_TEMPLATE
                ),
            )
        )
        indices.append(i)
    # Content checks run on whatever converted, so one bad axis does not
    # mask problems in sibling entries.
    content = _category_problems(categories, indices)
    if raw_categories and not categories:
        content = [p for p in content if p != "empty category list"]
    problems.extend(content)
    if problems:
        raise TaxonomyError(f"{source}: " + "; ".join(problems))
    return Taxonomy(
        categories=tuple(categories),
        version=str(doc.get("version", "unversioned")),
    )


def load_taxonomy(path) -> Taxonomy:
    """Load and validate a taxonomy JSON file.

    Category ordering is preserved from the file. Unknown top-level keys
    (e.g. a free-form description) are ignored.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise TaxonomyError(f"{path}: cannot read taxonomy file: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TaxonomyError(f"{path}: invalid JSON: {exc}") from exc
    return parse_taxonomy(doc, source=str(path))


def dump_taxonomy(tax: Taxonomy) -> dict[str, Any]:
    """Serialize a Taxonomy back to its file schema (round-trip safe)."""
    return {
        "version": tax.version,
        "categories": [
            {
                "id": c.id,
                "axis": c.axis.value,
                "display_name": c.display_name,
                "prompt_template": c.prompt_template,
            }
            for c in tax.categories
        ],
    }


@dataclass
class ValidationResult:
    """Outcome of validating one annotation record against a taxonomy."""

    ok: bool
    problems: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.ok


def validate_annotation(record: Mapping[str, Any], tax: Taxonomy) -> ValidationResult:
    """Check an annotation record; reports every violation, not just the first.

    A record is ``{"video_id": str, "labels": {category_id: bool, ...}}``.
    Labels may cover any subset of the taxonomy's ids (partial annotation is
    legal; evaluation only scores labeled pairs).
    """
    problems: list[str] = []
    video_id = record.get("video_id")
    if not video_id or not isinstance(video_id, str):
        problems.append("missing video_id")
    labels = record.get("labels")
    if not isinstance(labels, Mapping):
        problems.append("missing or non-object 'labels'")
    else:
        known = set(tax.ids)
        for key, value in labels.items():
            if key not in known:
                problems.append(f"unknown category id {key!r}")
            if not isinstance(value, bool):
                problems.append(f"label {key!r}: value {value!r} is not boolean")
    return ValidationResult(ok=not problems, problems=problems)
