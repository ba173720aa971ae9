"""Category-level QA generation, answer parsing, and accuracy reporting.

One yes/no question is generated per (video, category). Free-text answers
are reduced to Yes / No / Failure by a bounded token scan, and accuracy is
aggregated per perceptual axis plus an overall bucket computed over the
union of scored pairs, never as a mean of axis accuracies.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .taxonomy import Axis, Taxonomy, validate_annotation

__all__ = [
    "Answer",
    "QAPair",
    "AnnotationRecord",
    "PredictionRecord",
    "EvalReport",
    "EvalError",
    "AXIS_ORDER",
    "ANSWER_WINDOW",
    "generate_qa",
    "parse_answer",
    "accuracy",
    "read_annotations",
    "read_predictions",
    "evaluate_records",
    "evaluate",
]

# Report column order. "all" is appended after the axes.
AXIS_ORDER = (Axis.APPEARANCE, Axis.CAMERA, Axis.MOTION)

# Answers are scanned for a standalone yes/no within this many characters
# of the cleaned-up text; rambling responses often contain incidental
# negations further out.
ANSWER_WINDOW = 64

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class EvalError(ValueError):
    """Raised for malformed records or empty evaluation sets."""


class Answer(str, Enum):
    """Parsed predictor verdict."""

    YES = "yes"
    NO = "no"
    FAILURE = "failure"


@dataclass(frozen=True)
class QAPair:
    """One category question for one video, optionally with ground truth."""

    video_id: str
    category_id: str
    question: str
    label: bool | None = None


@dataclass(frozen=True)
class AnnotationRecord:
    """Ground-truth labels of one video: category id -> artifact present."""

    video_id: str
    labels: dict[str, bool]


@dataclass(frozen=True)
class PredictionRecord:
    """One raw model answer with its parsed verdict."""

    video_id: str
    category_id: str
    raw_answer: str
    parsed: Answer

    @classmethod
    def from_raw(cls, video_id: str, category_id: str, raw_answer: str):
        return cls(video_id, category_id, raw_answer, parse_answer(raw_answer))


@dataclass(frozen=True)
class EvalReport:
    """Per-axis and overall accuracy over the scored prediction set."""

    acc: dict[str, float]
    counts: dict[str, int]
    failures: int
    unmatched: int = 0
    unmatched_detail: tuple[str, ...] = field(default=(), repr=False)

    def to_json_dict(self) -> dict:
        return {
            "acc": dict(self.acc),
            "counts": dict(self.counts),
            "failures": self.failures,
            "unmatched": self.unmatched,
        }

    def render_table(self) -> str:
        cols = [a.value for a in AXIS_ORDER] + ["All"]
        keys = [a.value.lower() for a in AXIS_ORDER] + ["all"]
        rows = [
            ("acc", [f"{self.acc[k]:.3f}" if k in self.acc else "-" for k in keys]),
            ("count", [str(self.counts.get(k, 0)) for k in keys]),
        ]
        label_w = max(len(r[0]) for r in rows)
        widths = [
            max(len(c), *(len(r[1][i]) for r in rows)) for i, c in enumerate(cols)
        ]
        lines = [
            " " * label_w + "  " + "  ".join(c.rjust(w) for c, w in zip(cols, widths))
        ]
        for name, cells in rows:
            lines.append(
                name.ljust(label_w)
                + "  "
                + "  ".join(c.rjust(w) for c, w in zip(cells, widths))
            )
        return "\n".join(lines)


def generate_qa(video_id: str, tax: Taxonomy) -> list[QAPair]:
    """One unlabeled QAPair per taxonomy category, in taxonomy order."""
    return [
        QAPair(video_id=video_id, category_id=c.id, question=c.render_question())
        for c in tax
    ]


def parse_answer(raw: str, window: int = ANSWER_WINDOW) -> Answer:
    """Reduce a free-text answer to Yes, No, or Failure.

    Markup and punctuation are stripped (every non-alphanumeric run becomes
    a single space, case folded), then the tokens lying entirely within the
    first ``window`` characters are scanned. Exactly one of {yes, no}
    present -> that verdict; both present or neither -> Failure.
    """
    cleaned = re.sub(r"[^a-z0-9]+", " ", raw.lower()).strip()
    found = {
        m.group(0)
        for m in _TOKEN_RE.finditer(cleaned)
        if m.end() <= window and m.group(0) in ("yes", "no")
    }
    if found == {"yes"}:
        return Answer.YES
    if found == {"no"}:
        return Answer.NO
    return Answer.FAILURE


def accuracy(pairs) -> float:
    """Fraction of (answer, label) pairs where the answer matches the label.

    A match is (Yes, True) or (No, False); Failure never matches. Raises on
    an empty pair list since the fraction is undefined.
    """
    pairs = list(pairs)
    if not pairs:
        raise EvalError("empty evaluation set")
    matches = sum(
        1
        for answer, label in pairs
        if (answer is Answer.YES and label) or (answer is Answer.NO and not label)
    )
    return matches / len(pairs)


def _jsonl_records(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise EvalError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise EvalError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, obj


def read_annotations(path, tax: Taxonomy) -> dict[str, AnnotationRecord]:
    """Load annotation JSONL, validating every record against the taxonomy."""
    path = Path(path)
    records: dict[str, AnnotationRecord] = {}
    for lineno, obj in _jsonl_records(path):
        result = validate_annotation(obj, tax)
        if not result.ok:
            raise EvalError(f"{path}:{lineno}: " + "; ".join(result.problems))
        vid = obj["video_id"]
        if vid in records:
            raise EvalError(f"{path}:{lineno}: duplicate video_id {vid!r}")
        records[vid] = AnnotationRecord(video_id=vid, labels=dict(obj["labels"]))
    return records


def read_predictions(path) -> list[PredictionRecord]:
    """Load prediction JSONL; every record needs video_id, category_id, raw_answer."""
    path = Path(path)
    out = []
    for lineno, obj in _jsonl_records(path):
        missing = [
            k
            for k in ("video_id", "category_id", "raw_answer")
            if not isinstance(obj.get(k), str)
        ]
        if missing:
            raise EvalError(
                f"{path}:{lineno}: missing or non-string fields: {', '.join(missing)}"
            )
        out.append(
            PredictionRecord.from_raw(
                obj["video_id"], obj["category_id"], obj["raw_answer"]
            )
        )
    return out


def evaluate_records(
    predictions, annotations: dict[str, AnnotationRecord], tax: Taxonomy
) -> EvalReport:
    """Score predictions against annotations, bucketing by category axis.

    Predictions without a matching annotation label (unknown video, category
    absent from the video's labels, or category not in the taxonomy) are
    counted as unmatched and skipped. Annotated pairs that were never
    predicted are not counted at all.
    """
    buckets: dict[str, list[tuple[Answer, bool]]] = {
        a.value.lower(): [] for a in AXIS_ORDER
    }
    unmatched: list[str] = []
    failures = 0
    scored: list[tuple[Answer, bool]] = []

    for pred in sorted(predictions, key=lambda p: (p.video_id, p.category_id)):
        where = f"{pred.video_id}/{pred.category_id}"
        if pred.category_id not in tax.ids:
            unmatched.append(f"{where}: category not in taxonomy")
            continue
        ann = annotations.get(pred.video_id)
        if ann is None:
            unmatched.append(f"{where}: no annotation for video")
            continue
        if pred.category_id not in ann.labels:
            unmatched.append(f"{where}: category not annotated for video")
            continue
        label = ann.labels[pred.category_id]
        axis_key = tax.axis_of(pred.category_id).value.lower()
        buckets[axis_key].append((pred.parsed, label))
        scored.append((pred.parsed, label))
        if pred.parsed is Answer.FAILURE:
            failures += 1

    if not scored:
        raise EvalError("zero scoreable pairs")

    acc = {}
    counts = {}
    for key, pairs in buckets.items():
        counts[key] = len(pairs)
        if pairs:
            acc[key] = accuracy(pairs)
    acc["all"] = accuracy(scored)
    counts["all"] = len(scored)
    return EvalReport(
        acc=acc,
        counts=counts,
        failures=failures,
        unmatched=len(unmatched),
        unmatched_detail=tuple(unmatched),
    )


def evaluate(predictions_path, annotations_path, tax: Taxonomy) -> EvalReport:
    """File-level wrapper: JSONL predictions vs JSONL annotations."""
    annotations = read_annotations(annotations_path, tax)
    predictions = read_predictions(predictions_path)
    return evaluate_records(predictions, annotations, tax)
