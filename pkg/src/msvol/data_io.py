"""Option-chain CSV files, JSON helpers and golden-record checks."""

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .calibration import OptionQuote
from .errors import DomainError, GoldenError, SchemaError

CHAIN_COLUMNS = ("expiry_years", "strike", "spot", "rate", "kind", "iv", "price", "weight")
KIND_CODES = {"C": "call", "P": "put"}
KIND_LETTERS = {v: k for k, v in KIND_CODES.items()}


class ChainError(SchemaError):
    """One or more rows of a chain file are invalid; ``errors`` lists ``(line, message)``."""

    def __init__(self, errors):
        self.errors = list(errors)
        lines = "; ".join(f"line {n}: {msg}" for n, msg in self.errors)
        super().__init__(f"{len(self.errors)} invalid row(s): {lines}")


@dataclass
class ChainFile:
    """Quotes plus the ``#`` comment lines that preceded or surrounded them."""

    quotes: list
    metadata: list = field(default_factory=list)


def _number(text, name, required=True):
    text = text.strip()
    if text == "":
        if required:
            raise ValueError(f"{name} is empty")
        return None
    try:
        value = float(text)
    except ValueError:
        raise ValueError(f"{name} is not a number: {text!r}") from None
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {text!r}")
    return value


def _parse_row(cells):
    if len(cells) != len(CHAIN_COLUMNS):
        raise ValueError(f"expected {len(CHAIN_COLUMNS)} fields, found {len(cells)}")
    row = dict(zip(CHAIN_COLUMNS, cells))
    kind = row["kind"].strip()
    if kind not in KIND_CODES:
        raise ValueError(f"kind must be C or P, got {kind!r}")
    iv = _number(row["iv"], "iv", required=False)
    price = _number(row["price"], "price", required=False)
    if iv is None and price is None:
        raise ValueError("iv and price are both empty")
    weight = _number(row["weight"], "weight", required=False)
    try:
        return OptionQuote(
            expiry_years=_number(row["expiry_years"], "expiry_years"),
            strike=_number(row["strike"], "strike"),
            spot=_number(row["spot"], "spot"),
            rate=_number(row["rate"], "rate"),
            kind=KIND_CODES[kind],
            iv=iv,
            price=price,
            weight=1.0 if weight is None else weight,
        )
    except DomainError as exc:
        raise ValueError(str(exc)) from None


def parse_chain(data, fail_fast=False):
    """Parse chain CSV bytes or text.

    Every invalid row is collected and reported together in a
    :class:`ChainError` unless ``fail_fast`` is set.
    """
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise SchemaError(f"chain file is not valid UTF-8: {exc}") from exc
    metadata, quotes, errors = [], [], []
    header_seen = False
    for lineno, line in enumerate(data.splitlines(), start=1):
        if line.startswith("#"):
            metadata.append(line[1:])
            continue
        if not line.strip():
            continue
        cells = next(csv.reader([line]))
        if not header_seen:
            found = tuple(c.strip() for c in cells)
            if found != CHAIN_COLUMNS:
                raise SchemaError(
                    f"chain header mismatch: expected {','.join(CHAIN_COLUMNS)}; "
                    f"found {','.join(found)}"
                )
            header_seen = True
            continue
        try:
            quotes.append(_parse_row(cells))
        except ValueError as exc:
            errors.append((lineno, str(exc)))
            if fail_fast:
                break
    if not header_seen:
        raise SchemaError(f"chain file has no header; expected {','.join(CHAIN_COLUMNS)}")
    if errors:
        raise ChainError(errors)
    return ChainFile(quotes, metadata)


def _fmt(value):
    return "" if value is None else repr(float(value))


def serialize_chain(chain):
    """Chain CSV text; floats use their shortest round-trip form."""
    out = io.StringIO()
    for line in chain.metadata:
        out.write(f"#{line}\n")
    out.write(",".join(CHAIN_COLUMNS) + "\n")
    for q in chain.quotes:
        cells = [
            _fmt(q.expiry_years), _fmt(q.strike), _fmt(q.spot), _fmt(q.rate),
            KIND_LETTERS[q.kind], _fmt(q.iv), _fmt(q.price), _fmt(q.weight),
        ]
        out.write(",".join(cells) + "\n")
    return out.getvalue()


def read_chain(path):
    return parse_chain(Path(path).read_bytes())


def write_text_atomic(path, text):
    """Write through a temporary sibling so readers never see a partial file."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


# --- golden records ---


def digest(inputs):
    """SHA-256 of the canonical JSON form of ``inputs``."""
    text = json.dumps(inputs, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass
class GoldenRecord:
    """A frozen oracle value set.

    ``values`` maps component names to numbers; ``tolerance`` is absolute
    unless ``relative`` is set, in which case it scales with ``max(1, |value|)``.
    """

    name: str
    digest: str
    values: dict
    tolerance: float
    oracle: str
    inputs: dict = field(default_factory=dict)
    relative: bool = False

    @classmethod
    def create(cls, name, inputs, values, tolerance, oracle, relative=False):
        return cls(name, digest(inputs), {k: float(v) for k, v in values.items()},
                   float(tolerance), oracle, inputs, relative)

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        return cls(**data)


@dataclass
class GoldenResult:
    passed: bool
    failures: list  # (component, expected, computed, difference)

    def __bool__(self):
        return self.passed


REGENERATE_HINT = "regenerate golden files with `python tests/regen_golden.py`"


def load_golden(directory, name):
    path = Path(directory) / f"{name}.json"
    if not path.exists():
        raise GoldenError(f"golden record {name!r} not found at {path}; {REGENERATE_HINT}")
    return GoldenRecord.from_json(path.read_text(encoding="utf-8"))


def save_golden(directory, record):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_text_atomic(directory / f"{record.name}.json", record.to_json())


def golden_check(record, computed, inputs=None):
    """Compare ``computed`` (a mapping) against ``record`` component by component.

    When ``inputs`` is given its digest must match the stored one, otherwise
    the record is stale and a :class:`GoldenError` is raised.
    """
    if record is None:
        raise GoldenError(f"golden record missing; {REGENERATE_HINT}")
    if inputs is not None and digest(inputs) != record.digest:
        raise GoldenError(f"golden record {record.name!r} is stale; {REGENERATE_HINT}")
    failures = []
    for key, expected in record.values.items():
        if key not in computed:
            failures.append((key, expected, None, math.inf))
            continue
        got = float(computed[key])
        diff = abs(got - expected)
        limit = record.tolerance * (max(1.0, abs(expected)) if record.relative else 1.0)
        if not diff <= limit:
            failures.append((key, expected, got, diff))
    return GoldenResult(not failures, failures)
