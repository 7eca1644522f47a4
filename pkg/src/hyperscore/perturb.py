"""Adversarial query perturbations and the relative-drop report.

Five generators, each a pure function of (query, seed) plus any static
lexicon: a single-character misspelling, removal of 20% of the tokens
(minimum one), a random non-identity reordering, a single synonym
replacement, and file-driven paraphrase substitution.  Tokenization is a
plain whitespace split; no casing or stemming is applied, since these are
surface-level edits by design.

Generators that find no eligible token return the query unchanged with
``changed=False`` so callers can count the misses instead of silently
treating them as perturbed.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class Query:
    query_id: str
    text: str

    def tokens(self) -> list[str]:
        return self.text.split()


@dataclass(frozen=True)
class PerturbResult:
    query: Query
    changed: bool


SynonymLexicon = dict[str, list[str]]


@lru_cache(maxsize=1)
def keyboard_neighbors() -> dict[str, str]:
    """Adjacency map of lowercase letters on a QWERTY layout."""
    text = resources.files("hyperscore").joinpath("data/qwerty_neighbors.tsv").read_text("utf-8")
    table = {}
    for line in text.splitlines():
        if not line:
            continue
        key, neighbors = line.split("\t")
        table[key] = neighbors
    return table


def _single_edits(token: str) -> list[str]:
    """All distinct-from-original tokens one edit away: adjacent swaps,
    deletions, keyboard-neighbor substitutions and insertions."""
    table = keyboard_neighbors()
    out = []
    for i in range(len(token) - 1):
        if token[i] != token[i + 1]:
            out.append(token[:i] + token[i + 1] + token[i] + token[i + 2:])
    for i in range(len(token)):
        out.append(token[:i] + token[i + 1:])
    for i, ch in enumerate(token):
        for sub in table.get(ch.lower(), ""):
            if sub != ch:
                out.append(token[:i] + sub + token[i + 1:])
    for i in range(len(token) + 1):
        anchor = token[min(i, len(token) - 1)]
        for ins in table.get(anchor.lower(), ""):
            out.append(token[:i] + ins + token[i:])
    return out


def misspell(q: Query, seed: int) -> PerturbResult:
    """Introduce one typographical error in one token of length >= 4."""
    tokens = q.tokens()
    eligible = [i for i, tok in enumerate(tokens) if len(tok) >= 4]
    if not eligible:
        return PerturbResult(q, changed=False)
    rng = np.random.default_rng(seed)
    position = eligible[int(rng.integers(len(eligible)))]
    edits = _single_edits(tokens[position])
    if not edits:
        return PerturbResult(q, changed=False)
    tokens[position] = edits[int(rng.integers(len(edits)))]
    return PerturbResult(Query(q.query_id, " ".join(tokens)), changed=True)


def naturality(q: Query, seed: int) -> PerturbResult:
    """Remove ceil(20%) of the tokens, at least one, keeping survivor order."""
    tokens = q.tokens()
    if len(tokens) < 2:
        raise ValueError(
            f"query {q.query_id!r} has {len(tokens)} token(s); removal would empty it"
        )
    n_remove = max(1, math.ceil(0.2 * len(tokens)))
    rng = np.random.default_rng(seed)
    drop = set(rng.choice(len(tokens), size=n_remove, replace=False).tolist())
    kept = [tok for i, tok in enumerate(tokens) if i not in drop]
    return PerturbResult(Query(q.query_id, " ".join(kept)), changed=True)


def reorder(q: Query, seed: int) -> PerturbResult:
    """Shuffle the tokens into a non-identity permutation."""
    tokens = q.tokens()
    if len(tokens) < 2:
        raise ValueError(f"query {q.query_id!r} needs at least 2 tokens to reorder")
    rng = np.random.default_rng(seed)
    while True:
        perm = rng.permutation(len(tokens))
        if (perm != np.arange(len(tokens))).any():
            break
    shuffled = [tokens[i] for i in perm]
    return PerturbResult(Query(q.query_id, " ".join(shuffled)), changed=True)


def synonymize(q: Query, lexicon: SynonymLexicon, seed: int) -> PerturbResult:
    """Replace one token that has a lexicon entry with one of its alternatives."""
    tokens = q.tokens()
    eligible = [i for i, tok in enumerate(tokens) if lexicon.get(tok)]
    if not eligible:
        return PerturbResult(q, changed=False)
    rng = np.random.default_rng(seed)
    position = eligible[int(rng.integers(len(eligible)))]
    choices = lexicon[tokens[position]]
    tokens[position] = choices[int(rng.integers(len(choices)))]
    return PerturbResult(Query(q.query_id, " ".join(tokens)), changed=True)


def relative_drop(clean: float, perturbed: float) -> float:
    """Percentage drop relative to clean performance; negative means improvement."""
    if clean <= 0:
        raise ValueError(f"relative drop undefined for clean metric {clean}")
    return 100.0 * (clean - perturbed) / clean


def load_lexicon(path: str | Path) -> SynonymLexicon:
    """Parse "token<TAB>alt1,alt2,..." lines."""
    path = Path(path)
    lexicon: SynonymLexicon = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise ValueError(
                    f"{path}:{lineno}: expected 2 tab-separated lexicon fields, got {len(fields)}"
                )
            token, alts = fields
            choices = [alt for alt in alts.split(",") if alt]
            if not choices:
                raise ValueError(f"{path}:{lineno}: no replacements for {token!r}")
            if token in choices:
                raise ValueError(f"{path}:{lineno}: {token!r} lists itself as a replacement")
            lexicon[token] = choices
    return lexicon


def load_paraphrases(path: str | Path) -> dict[str, Query]:
    """Parse "query_id<TAB>paraphrase" lines; the last entry wins on duplicates."""
    path = Path(path)
    out: dict[str, Query] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise ValueError(
                    f"{path}:{lineno}: expected 2 tab-separated paraphrase fields, got {len(fields)}"
                )
            qid, text = fields
            if qid in out:
                warnings.warn(f"{path}:{lineno}: duplicate paraphrase for {qid!r}, last wins")
            out[qid] = Query(qid, text)
    return out


def read_queries(path: str | Path) -> list[Query]:
    """Parse "query_id<TAB>text" lines."""
    path = Path(path)
    queries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise ValueError(
                    f"{path}:{lineno}: expected 2 tab-separated query fields, got {len(fields)}"
                )
            queries.append(Query(fields[0], fields[1]))
    return queries


def write_perturbed(rows: list[tuple[str, str, str]], path: str | Path) -> None:
    """Write "query_id<TAB>perturbation_type<TAB>text" rows."""
    with open(path, "w", encoding="utf-8") as fh:
        for qid, kind, text in rows:
            fh.write(f"{qid}\t{kind}\t{text}\n")
