"""Bibliographic ingestion: ISBN extraction, edition clustering, author-gender linking.

Catalog records from multiple sources are joined on ISBN, editions are
grouped into recommendable items via connected components of the
record/ISBN bipartite graph, and each item is assigned an author gender
by matching first-author names against authority records.
"""

from __future__ import annotations

import csv
import json
import re
import unicodedata
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

__all__ = [
    "AuthorGender",
    "AuthorityRecord",
    "CatalogRecord",
    "ItemCluster",
    "UnionFind",
    "cluster_items",
    "extract_isbns",
    "is_normalized_isbn",
    "link_item_genders",
    "normalize_name",
    "read_authorities_jsonl",
    "read_records_jsonl",
    "resolve_author_gender",
    "write_clusters_csv",
    "write_genders_csv",
]

RECORD_SOURCES = ("loc", "ol", "gr")
GENDER_ASSERTIONS = ("female", "male", "unknown")

# 13-digit runs are tried first so a 13-digit ISBN never yields a phantom
# embedded 10-digit match; digits may be separated by single spaces/hyphens.
_ISBN_RE = re.compile(
    r"""
    \d(?:[-\ ]?\d){12}          # 13 digits
    |
    \d(?:[-\ ]?\d){8}[-\ ]?[\dXx]   # 10 characters, X allowed last
    """,
    re.VERBOSE,
)

_NORMALIZED_ISBN_RE = re.compile(r"^(?:\d{13}|\d{9}[\dX])$")


class AuthorGender(Enum):
    """Resolved author gender for an item."""

    FEMALE = "female"
    MALE = "male"
    AMBIGUOUS = "ambiguous"
    UNKNOWN = "unknown"
    UNLINKED = "unlinked"


KNOWN_GENDERS = (AuthorGender.FEMALE, AuthorGender.MALE)


@dataclass
class CatalogRecord:
    """One bibliographic record (an edition, book, or bibliography entry)."""

    record_id: str
    source: str
    isbns: frozenset[str]
    work_id: str | None = None
    author_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.source not in RECORD_SOURCES:
            raise ValueError(f"unknown record source {self.source!r}")

    @property
    def effective_id(self) -> str:
        """Graph node for clustering: the work id when present, else the record id."""
        if self.work_id is not None:
            return "w:" + self.work_id
        return "r:" + self.record_id


@dataclass
class AuthorityRecord:
    """A name-authority entry carrying known name forms and gender assertions."""

    authority_id: str
    name_forms: frozenset[str]
    gender_assertions: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.name_forms:
            raise ValueError(f"authority {self.authority_id!r} has no name forms")
        bad = [g for g in self.gender_assertions if g not in GENDER_ASSERTIONS]
        if bad:
            raise ValueError(f"authority {self.authority_id!r}: bad assertions {bad}")


@dataclass
class ItemCluster:
    """A recommendable item: one connected component of ISBNs and records."""

    item_id: str
    members: frozenset[str]
    records: frozenset[str]
    gender: AuthorGender = AuthorGender.UNLINKED


def extract_isbns(raw_field: str) -> list[str]:
    """Pull ISBN-shaped digit runs out of messy free text.

    Returns normalized 10- or 13-character strings with separators removed
    and a trailing ``x`` upcased.  Matches are scanned left to right and do
    not overlap; no check-digit validation is performed.
    """
    out = []
    for m in _ISBN_RE.finditer(raw_field):
        out.append(m.group(0).replace("-", "").replace(" ", "").upper())
    return out


def is_normalized_isbn(s: str) -> bool:
    """True when ``s`` is a separator-free 10/13-char ISBN as emitted by extract_isbns."""
    return bool(_NORMALIZED_ISBN_RE.match(s))


def _squash(raw: str) -> str:
    """Case-fold, drop punctuation, collapse whitespace."""
    folded = raw.casefold()
    cleaned = "".join(
        c for c in folded if not unicodedata.category(c).startswith("P")
    )
    return " ".join(cleaned.split())


def normalize_name(raw: str) -> set[str]:
    """Normalized forms of an author name, including the name-order swap.

    A comma marks inverted order, so "Last, First" also yields "first last";
    without a comma the final token is treated as the surname and moved to
    the front.  Multi-word surnames without a comma mis-swap; that is an
    accepted limitation of name-based matching.
    """
    if "," in raw:
        head, _, tail = raw.partition(",")
        head = _squash(head)
        tail = _squash(tail)
        direct = " ".join(p for p in (head, tail) if p)
        swapped = " ".join(p for p in (tail, head) if p)
    else:
        direct = _squash(raw)
        tokens = direct.split()
        if len(tokens) > 1:
            swapped = " ".join([tokens[-1]] + tokens[:-1])
        else:
            swapped = direct
    forms = {direct, swapped}
    forms.discard("")
    return forms


class UnionFind:
    """Disjoint sets over hashable keys, with path compression and union by size."""

    def __init__(self):
        self._parent: dict = {}
        self._size: dict = {}

    def add(self, x) -> None:
        if x not in self._parent:
            self._parent[x] = x
            self._size[x] = 1

    def find(self, x):
        root = x
        while self._parent[root] != root:
            root = self._parent[root]
        while self._parent[x] != root:
            self._parent[x], x = root, self._parent[x]
        return root

    def union(self, a, b) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self._size[ra] < self._size[rb]:
            ra, rb = rb, ra
        self._parent[rb] = ra
        self._size[ra] += self._size[rb]

    def groups(self) -> dict:
        """Mapping root -> set of members."""
        out: dict = {}
        for x in self._parent:
            out.setdefault(self.find(x), set()).add(x)
        return out


def cluster_items(records: Iterable[CatalogRecord]) -> list[ItemCluster]:
    """Group ISBNs into items via connected components.

    The graph is bipartite between effective record nodes (work id when the
    record is attached to a work, otherwise the record id) and ISBN nodes.
    Components without any ISBN are dropped.  Item ids are derived from the
    lexicographically smallest member ISBN, so the partition and ids are
    independent of input order.
    """
    uf = UnionFind()
    record_ids: dict[str, set[str]] = {}  # effective node -> record ids
    seen_ids = set()
    for rec in records:
        if rec.record_id in seen_ids:
            raise ValueError(f"duplicate record_id {rec.record_id!r}")
        seen_ids.add(rec.record_id)
        node = ("n", rec.effective_id)
        uf.add(node)
        record_ids.setdefault(rec.effective_id, set()).add(rec.record_id)
        for isbn in rec.isbns:
            key = ("i", isbn)
            uf.add(key)
            uf.union(node, key)

    clusters = []
    for members in uf.groups().values():
        isbns = {m[1] for m in members if m[0] == "i"}
        if not isbns:
            continue
        recs: set[str] = set()
        for kind, val in members:
            if kind == "n":
                recs.update(record_ids[val])
        clusters.append(
            ItemCluster(
                item_id="it:" + min(isbns),
                members=frozenset(isbns),
                records=frozenset(recs),
            )
        )
    clusters.sort(key=lambda c: c.item_id)
    return clusters


def resolve_author_gender(assertions: Iterable[str]) -> AuthorGender:
    """Collapse gender assertions into a single label.

    "unknown" entries are non-assertions.  Unanimous female/male wins, any
    contradiction is ambiguous, and no usable assertion at all is unknown.
    Order and multiplicity never matter.
    """
    seen = set()
    for a in assertions:
        if a not in GENDER_ASSERTIONS:
            raise ValueError(f"bad gender assertion {a!r}")
        if a != "unknown":
            seen.add(a)
    if not seen:
        return AuthorGender.UNKNOWN
    if seen == {"female"}:
        return AuthorGender.FEMALE
    if seen == {"male"}:
        return AuthorGender.MALE
    return AuthorGender.AMBIGUOUS


def link_item_genders(
    clusters: Iterable[ItemCluster],
    records: Iterable[CatalogRecord],
    authorities: Iterable[AuthorityRecord],
) -> dict[str, AuthorGender]:
    """Resolve an author gender for every cluster.

    Only the first author of each record is consulted.  Clusters whose
    records list no authors, or whose authors match no authority name form,
    are unlinked; matched authorities pool their assertions through
    resolve_author_gender.
    """
    by_id = {r.record_id: r for r in records}

    # Index authority assertions by every normalized name form.
    assertions_by_form: dict[str, list[str]] = {}
    for auth in authorities:
        forms: set[str] = set()
        for name in auth.name_forms:
            forms |= normalize_name(name)
        for f in forms:
            assertions_by_form.setdefault(f, []).extend(auth.gender_assertions)

    out: dict[str, AuthorGender] = {}
    for cluster in clusters:
        first_authors = []
        for rid in cluster.records:
            rec = by_id.get(rid)
            if rec is None:
                raise ValueError(f"cluster {cluster.item_id} references unknown record {rid!r}")
            if rec.author_names:
                first_authors.append(rec.author_names[0])
        if not first_authors:
            out[cluster.item_id] = AuthorGender.UNLINKED
            continue
        matched: list[str] = []
        any_match = False
        for name in first_authors:
            for form in normalize_name(name):
                hits = assertions_by_form.get(form)
                if hits is not None:
                    any_match = True
                    matched.extend(hits)
        if not any_match:
            out[cluster.item_id] = AuthorGender.UNLINKED
        else:
            out[cluster.item_id] = resolve_author_gender(matched)
    return out


def apply_genders(clusters: Iterable[ItemCluster], genders: Mapping[str, AuthorGender]) -> None:
    """Attach linked genders to clusters in place (missing ids stay unlinked)."""
    for c in clusters:
        c.gender = genders.get(c.item_id, AuthorGender.UNLINKED)


# ---------------------------------------------------------------------------
# File formats


def read_records_jsonl(path) -> list[CatalogRecord]:
    """Load catalog records from JSONL, running ISBN extraction on raw fields.

    Each line holds ``{"record_id", "source", "isbn_fields", "work_id", "authors"}``
    where isbn_fields are free-text strings that may embed prices or prose.
    """
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{lineno}: bad JSON ({e})") from None
            isbns: set[str] = set()
            for raw in obj.get("isbn_fields", []):
                isbns.update(extract_isbns(raw))
            records.append(
                CatalogRecord(
                    record_id=obj["record_id"],
                    source=obj["source"],
                    isbns=frozenset(isbns),
                    work_id=obj.get("work_id"),
                    author_names=list(obj.get("authors", [])),
                )
            )
    return records


def read_authorities_jsonl(path) -> list[AuthorityRecord]:
    """Load authority records: ``{"authority_id", "names", "genders"}`` per line."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{lineno}: bad JSON ({e})") from None
            out.append(
                AuthorityRecord(
                    authority_id=obj["authority_id"],
                    name_forms=frozenset(obj["names"]),
                    gender_assertions=list(obj.get("genders", [])),
                )
            )
    return out


def write_clusters_csv(clusters: Iterable[ItemCluster], fh) -> None:
    """Write the item/ISBN membership table (one row per member ISBN)."""
    w = csv.writer(fh)
    w.writerow(["item_id", "isbn"])
    for c in sorted(clusters, key=lambda c: c.item_id):
        for isbn in sorted(c.members):
            w.writerow([c.item_id, isbn])


def write_genders_csv(genders: Mapping[str, AuthorGender], fh) -> None:
    """Write resolved item genders, sorted by item id."""
    w = csv.writer(fh)
    w.writerow(["item_id", "gender"])
    for item_id in sorted(genders):
        w.writerow([item_id, genders[item_id].value])


def read_clusters_csv(path) -> dict[str, str]:
    """Read the membership table back as an isbn -> item_id mapping."""
    mapping: dict[str, str] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            mapping[row["isbn"]] = row["item_id"]
    return mapping


def read_genders_csv(path) -> dict[str, AuthorGender]:
    """Read resolved genders back as an item_id -> AuthorGender mapping."""
    out: dict[str, AuthorGender] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            out[row["item_id"]] = AuthorGender(row["gender"])
    return out
