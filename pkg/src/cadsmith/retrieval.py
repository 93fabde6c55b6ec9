"""Keyword retrieval over the API documentation KB (KB1) and the
error-pattern KB (KB2).

Matching is deliberately keyword-based, not embedding-based: at this corpus
scale it is deterministic, dependency-free, and trivially auditable. The
functions here are the whole backend interface, so a vector store could
replace them without touching the agents.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

_TOKEN_RE = re.compile(r"[a-z0-9]+")

KB1_API_FILE = "kb1_api.json"
KB1_SELECTORS_FILE = "kb1_selectors.md"
KB1_EXAMPLES_FILE = "kb1_examples.json"
KB2_ERRORS_FILE = "kb2_errors.json"

# Query tokens that make the selectors reference worth injecting.
SELECTOR_TRIGGER_TOKENS = frozenset(
    {"faces", "edges", "select", "fillet", "chamfer", "top", "bottom", "selector"})


class RetrievalError(ValueError):
    """Raised for malformed or inconsistent KB files."""


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class ApiEntry:
    name: str
    category: str
    signature: str
    description: str
    example: str
    pitfalls: tuple[str, ...]
    keywords: tuple[str, ...]


@dataclass(frozen=True)
class WorkedExample:
    name: str
    keywords: tuple[str, ...]
    code: str


@dataclass(frozen=True)
class ErrorPattern:
    id: str
    trigger_keywords: tuple[str, ...]
    root_cause: str
    fix_instructions: str
    before_code: str
    after_code: str


@dataclass(frozen=True)
class KB1:
    api: tuple[ApiEntry, ...]
    selectors_reference: str
    examples: tuple[WorkedExample, ...]


@dataclass(frozen=True)
class KB2:
    patterns: tuple[ErrorPattern, ...]


@dataclass(frozen=True)
class RetrievalContext:
    api_entries: tuple[ApiEntry, ...]
    selectors_reference: str | None
    worked_examples: tuple[str, ...]
    error_patterns: tuple[ErrorPattern, ...]

    def render(self) -> str:
        """Flatten the context into prompt text for an agent request."""
        parts = []
        if self.api_entries:
            lines = ["## API reference"]
            for e in self.api_entries:
                lines.append(f"### {e.name}\n{e.signature}\n{e.description}")
                if e.example:
                    lines.append(f"Example:\n{e.example}")
                for p in e.pitfalls:
                    lines.append(f"Pitfall: {p}")
            parts.append("\n".join(lines))
        if self.selectors_reference:
            parts.append("## Selector reference\n" + self.selectors_reference)
        if self.worked_examples:
            parts.append("## Worked examples\n" + "\n\n".join(self.worked_examples))
        if self.error_patterns:
            lines = ["## Known error patterns"]
            for p in self.error_patterns:
                lines.append(f"### {p.id}\nRoot cause: {p.root_cause}\n"
                             f"Fix: {p.fix_instructions}\n"
                             f"Before:\n{p.before_code}\nAfter:\n{p.after_code}")
            parts.append("\n".join(lines))
        return "\n\n".join(parts)


def _require(data: dict, key: str, file: str, entry: str) -> object:
    if key not in data:
        raise RetrievalError(f"{file}: entry {entry!r} missing field {key!r}")
    return data[key]


def _lower_tuple(values, file: str, entry: str) -> tuple[str, ...]:
    out = []
    for v in values:
        if not isinstance(v, str) or not v.strip():
            raise RetrievalError(f"{file}: entry {entry!r} has a non-string keyword")
        out.append(v.strip().lower())
    return tuple(out)


def load_kb(directory) -> tuple[KB1, KB2]:
    """Load and validate the four KB files; duplicate entry names are rejected."""
    directory = Path(directory)
    for name in (KB1_API_FILE, KB1_SELECTORS_FILE, KB1_EXAMPLES_FILE, KB2_ERRORS_FILE):
        if not (directory / name).is_file():
            raise RetrievalError(f"knowledge base file missing: {directory / name}")

    api_raw = _load_json(directory / KB1_API_FILE)
    entries = []
    seen = set()
    for item in api_raw:
        name = str(_require(item, "name", KB1_API_FILE, item.get("name", "?")))
        if not name or not item.get("signature"):
            raise RetrievalError(f"{KB1_API_FILE}: entry {name!r} needs name and signature")
        if name in seen:
            raise RetrievalError(f"{KB1_API_FILE}: duplicate entry name {name!r}")
        seen.add(name)
        entries.append(ApiEntry(
            name=name,
            category=str(_require(item, "category", KB1_API_FILE, name)).lower(),
            signature=str(item["signature"]),
            description=str(_require(item, "description", KB1_API_FILE, name)),
            example=str(item.get("example", "")),
            pitfalls=tuple(str(p) for p in item.get("pitfalls", [])),
            keywords=_lower_tuple(_require(item, "keywords", KB1_API_FILE, name),
                                  KB1_API_FILE, name),
        ))

    examples_raw = _load_json(directory / KB1_EXAMPLES_FILE)
    examples = []
    seen = set()
    for item in examples_raw:
        name = str(_require(item, "name", KB1_EXAMPLES_FILE, item.get("name", "?")))
        if name in seen:
            raise RetrievalError(f"{KB1_EXAMPLES_FILE}: duplicate entry name {name!r}")
        seen.add(name)
        examples.append(WorkedExample(
            name=name,
            keywords=_lower_tuple(_require(item, "keywords", KB1_EXAMPLES_FILE, name),
                                  KB1_EXAMPLES_FILE, name),
            code=str(_require(item, "code", KB1_EXAMPLES_FILE, name)),
        ))

    patterns_raw = _load_json(directory / KB2_ERRORS_FILE)
    patterns = []
    seen = set()
    for item in patterns_raw:
        pid = str(_require(item, "id", KB2_ERRORS_FILE, item.get("id", "?")))
        if pid in seen:
            raise RetrievalError(f"{KB2_ERRORS_FILE}: duplicate entry name {pid!r}")
        seen.add(pid)
        triggers = _lower_tuple(_require(item, "trigger_keywords", KB2_ERRORS_FILE, pid),
                                KB2_ERRORS_FILE, pid)
        if not triggers:
            raise RetrievalError(f"{KB2_ERRORS_FILE}: entry {pid!r} has no trigger keywords")
        patterns.append(ErrorPattern(
            id=pid,
            trigger_keywords=triggers,
            root_cause=str(_require(item, "root_cause", KB2_ERRORS_FILE, pid)),
            fix_instructions=str(_require(item, "fix_instructions", KB2_ERRORS_FILE, pid)),
            before_code=str(item.get("before_code", "")),
            after_code=str(item.get("after_code", "")),
        ))

    selectors = (directory / KB1_SELECTORS_FILE).read_text()
    return KB1(api=tuple(entries), selectors_reference=selectors,
               examples=tuple(examples)), KB2(patterns=tuple(patterns))


def _load_json(path: Path) -> list:
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise RetrievalError(f"{path.name}: invalid JSON: {exc}") from exc
    if not isinstance(data, list):
        raise RetrievalError(f"{path.name}: expected a JSON array")
    return data


def score_api_entry(entry: ApiEntry, tokens: set[str]) -> int:
    """Keyword overlap plus a 2-point bonus when the category token appears."""
    score = len(set(entry.keywords) & tokens)
    if entry.category in tokens:
        score += 2
    return score


def match_api(query_text: str, kb1: KB1, k: int = 10) -> list[ApiEntry]:
    tokens = set(tokenize(query_text))
    scored = [(score_api_entry(e, tokens), e) for e in kb1.api]
    scored = [(s, e) for s, e in scored if s > 0]
    scored.sort(key=lambda pair: (-pair[0], pair[1].name))
    return [e for _, e in scored[:k]]


def match_errors(traceback: str, kb2: KB2, k: int = 3) -> list[ErrorPattern]:
    tokens = set(tokenize(traceback))
    scored = [(len(set(p.trigger_keywords) & tokens), p) for p in kb2.patterns]
    scored = [(s, p) for s, p in scored if s > 0]
    scored.sort(key=lambda pair: (-pair[0], pair[1].id))
    return [p for _, p in scored[:k]]


def match_examples(query_text: str, kb1: KB1, k: int = 3) -> list[WorkedExample]:
    tokens = set(tokenize(query_text))
    scored = [(len(set(e.keywords) & tokens), e) for e in kb1.examples]
    scored = [(s, e) for s, e in scored if s > 0]
    scored.sort(key=lambda pair: (-pair[0], pair[1].name))
    return [e for _, e in scored[:k]]


def plan_query_text(plan) -> str:
    """Flatten every text field of a design plan into one query string."""
    if plan is None:
        return ""
    chunks = []
    for comp in getattr(plan, "components", []) or []:
        chunks.append(str(comp.get("name", "")) if isinstance(comp, dict)
                      else str(getattr(comp, "name", "")))
        chunks.append(str(comp.get("description", "")) if isinstance(comp, dict)
                      else str(getattr(comp, "description", "")))
    constraints = getattr(plan, "constraints", None)
    if constraints is not None:
        for hole in getattr(constraints, "holes", []) or []:
            chunks.append(str(hole))
        chunks.extend(str(s) for s in getattr(constraints, "symmetry", []) or [])
        chunks.extend(str(s) for s in getattr(constraints, "other", []) or [])
    chunks.append(str(getattr(plan, "notes", "") or ""))
    return " ".join(chunks)


def build_context(plan, prompt: str, kb1: KB1, kb2: KB2,
                  traceback: str | None = None,
                  k_api: int = 10, k_examples: int = 3,
                  k_errors: int = 3) -> RetrievalContext:
    """Assemble the retrieval context for the Coder / Error Refiner.

    The selectors reference is injected only when the prompt or plan mentions
    face/edge selection; error patterns only when a traceback is provided.
    """
    query = f"{prompt} {plan_query_text(plan)}"
    tokens = set(tokenize(query))
    selectors = kb1.selectors_reference if tokens & SELECTOR_TRIGGER_TOKENS else None
    patterns = tuple(match_errors(traceback, kb2, k_errors)) if traceback else ()
    return RetrievalContext(
        api_entries=tuple(match_api(query, kb1, k_api)),
        selectors_reference=selectors,
        worked_examples=tuple(e.code for e in match_examples(query, kb1, k_examples)),
        error_patterns=patterns,
    )
