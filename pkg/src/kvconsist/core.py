"""Domain data model: profiles, labeled examples, dataset serialization.

A profile is an ordered list of (key, value) attribute pairs, e.g.
``[("gender", "female"), ("location", "Beijing"), ("constellation", "Leo")]``.
An example pairs a profile with a post/response and a three-way consistency
label. Datasets are stored as JSONL, one example per line.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

DEFAULT_KEYS = ("gender", "location", "constellation")

# Per-key sentence templates used to turn a profile into plain text, mirroring
# the "-template" style of input that flat sentence-pair models consume.
DEFAULT_PROFILE_TEMPLATES = {
    "gender": "my gender is {VALUE} .",
    "location": "my location is {VALUE} .",
    "constellation": "my constellation is {VALUE} .",
}


class DatasetError(ValueError):
    """Raised for malformed dataset files; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None, field_name: str | None = None):
        self.line = line
        self.field_name = field_name
        prefix = f"line {line}: " if line is not None else ""
        suffix = f" (field: {field_name})" if field_name else ""
        super().__init__(f"{prefix}{message}{suffix}")


class ConsistencyLabel(Enum):
    """Closed three-way relation between a response and a profile."""

    ENTAILED = "ENTAILED"
    CONTRADICTED = "CONTRADICTED"
    IRRELEVANT = "IRRELEVANT"

    @classmethod
    def from_string(cls, s: str) -> "ConsistencyLabel":
        try:
            return cls(s)
        except ValueError:
            raise DatasetError(f"unknown label {s!r}; expected one of "
                               f"{[m.value for m in cls]}", field_name="label") from None


# Fixed label order used for logits/probs and for argmax tie-breaking.
LABEL_ORDER = (ConsistencyLabel.ENTAILED, ConsistencyLabel.CONTRADICTED,
               ConsistencyLabel.IRRELEVANT)
LABEL_TO_INDEX = {lab: i for i, lab in enumerate(LABEL_ORDER)}


@dataclass(frozen=True)
class Profile:
    """Ordered key-value attribute pairs; keys unique, values non-empty.

    Values may contain multiple whitespace-separated tokens (e.g. a
    province-city pair like "Jiangsu Suzhou").
    """

    pairs: tuple[tuple[str, str], ...]

    def __post_init__(self):
        if not self.pairs:
            raise ValueError("profile must have at least one key-value pair")
        object.__setattr__(self, "pairs", tuple((str(k), str(v)) for k, v in self.pairs))
        seen = set()
        for k, v in self.pairs:
            if not k:
                raise ValueError("profile key must be non-empty")
            if not v or not v.split():
                raise ValueError(f"profile value for key {k!r} must be non-empty")
            if k in seen:
                raise ValueError(f"duplicate profile key {k!r}")
            seen.add(k)

    @property
    def keys(self) -> tuple[str, ...]:
        return tuple(k for k, _ in self.pairs)

    def value(self, key: str) -> str:
        for k, v in self.pairs:
            if k == key:
                return v
        raise KeyError(key)

    def value_tokens(self, key: str) -> list[str]:
        return self.value(key).split()

    def replace_value(self, key: str, value: str) -> "Profile":
        if key not in self.keys:
            raise KeyError(key)
        return Profile(tuple((k, value if k == key else v) for k, v in self.pairs))


@dataclass(frozen=True)
class Example:
    """One training/eval unit: profile, post, response, and annotations.

    `attribute` is the key-value pair revealed by the response (None for
    irrelevant responses). `response_parse` is an optional external dependency
    parse as (1-based token index, head index) pairs with head 0 = root.
    """

    profile: Profile
    post: tuple[str, ...]
    response: tuple[str, ...]
    domain: str
    label: ConsistencyLabel
    attribute: tuple[str, str] | None = None
    response_parse: tuple[tuple[int, int], ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "post", tuple(self.post))
        object.__setattr__(self, "response", tuple(self.response))
        if self.attribute is not None:
            object.__setattr__(self, "attribute", tuple(self.attribute))
        if self.response_parse is not None:
            object.__setattr__(self, "response_parse",
                               tuple((int(i), int(h)) for i, h in self.response_parse))
        if not self.response:
            raise ValueError("response must be non-empty")
        if self.domain not in self.profile.keys:
            raise ValueError(f"domain {self.domain!r} not among profile keys {self.profile.keys}")
        if self.attribute is not None and self.attribute[0] not in self.profile.keys:
            raise ValueError(f"attribute key {self.attribute[0]!r} not among profile keys")


@dataclass
class Dataset:
    examples: list[Example] = field(default_factory=list)
    split: str = "train"

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)


def example_to_record(ex: Example) -> dict:
    """JSON-serializable record with deterministic field order."""
    return {
        "profile": [[k, v] for k, v in ex.profile.pairs],
        "post": list(ex.post),
        "response": list(ex.response),
        "domain": ex.domain,
        "attribute": list(ex.attribute) if ex.attribute is not None else None,
        "label": ex.label.value,
        "response_parse": ([[i, h] for i, h in ex.response_parse]
                           if ex.response_parse is not None else None),
    }


def example_from_record(rec: Mapping, line: int | None = None) -> Example:
    def need(name):
        if name not in rec:
            raise DatasetError("missing field", line=line, field_name=name)
        return rec[name]

    try:
        profile = Profile(tuple((k, v) for k, v in need("profile")))
    except (ValueError, TypeError) as e:
        raise DatasetError(str(e), line=line, field_name="profile") from None
    try:
        label = ConsistencyLabel.from_string(need("label"))
    except DatasetError as e:
        raise DatasetError(str(e), line=line, field_name="label") from None
    attribute = rec.get("attribute")
    parse = rec.get("response_parse")
    try:
        return Example(
            profile=profile,
            post=tuple(need("post")),
            response=tuple(need("response")),
            domain=need("domain"),
            label=label,
            attribute=tuple(attribute) if attribute is not None else None,
            response_parse=(tuple((i, h) for i, h in parse) if parse is not None else None),
        )
    except (ValueError, TypeError) as e:
        raise DatasetError(str(e), line=line) from None


def load_dataset(path: str | Path, split: str | None = None) -> Dataset:
    """Load a JSONL dataset, validating every example.

    Malformed lines raise DatasetError with the 1-based line number.
    """
    path = Path(path)
    if split is None:
        split = path.stem
    examples = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as e:
                raise DatasetError(f"invalid JSON: {e.msg}", line=lineno) from None
            examples.append(example_from_record(rec, line=lineno))
    return Dataset(examples=examples, split=split)


def save_dataset(ds: Dataset, path: str | Path) -> None:
    """Write a dataset as JSONL with deterministic field order per line."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for ex in ds.examples:
            fh.write(json.dumps(example_to_record(ex), ensure_ascii=False) + "\n")


def template_render(p: Profile, bank=None) -> list[str]:
    """Render a profile to one sentence per pair, concatenated in profile order.

    `bank` may be a key->template mapping or any object exposing a
    `profile_sentences` mapping (e.g. a generator template bank). Templates
    use a {VALUE} slot. Missing template for a key is an error.
    """
    templates = getattr(bank, "profile_sentences", bank)
    if templates is None:
        templates = DEFAULT_PROFILE_TEMPLATES
    tokens: list[str] = []
    for key, value in p.pairs:
        if key not in templates:
            raise KeyError(f"no profile template for key {key!r}")
        tokens.extend(templates[key].replace("{VALUE}", value).split())
    return tokens


def labels_of(examples: Iterable[Example]) -> list[ConsistencyLabel]:
    return [ex.label for ex in examples]


def read_label_file(path: str | Path) -> list[ConsistencyLabel]:
    """Read one label per line; accepts full names or the E/C/I shorthand."""
    short = {"E": ConsistencyLabel.ENTAILED, "C": ConsistencyLabel.CONTRADICTED,
             "I": ConsistencyLabel.IRRELEVANT}
    labels = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        name = raw.strip()
        if not name:
            continue
        if name.upper() in short:
            labels.append(short[name.upper()])
        else:
            try:
                labels.append(ConsistencyLabel.from_string(name.upper()))
            except DatasetError:
                raise DatasetError(f"unknown label {name!r}", line=lineno,
                                   field_name="label") from None
    return labels
