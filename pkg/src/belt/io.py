"""Plain-text formats: triplet matrices, vocabularies, embeddings, dictionaries.

A source is a pair of UTF-8 files. The vocabulary lists one token per line
and defines the entities the source observes; the triplet file holds
``row_token<TAB>col_token<TAB>value`` lines for the upper triangle
(diagonal included). Entries absent from the triplet file are observed
zeros. Floats are written with 17 significant digits so a write/read round
trip is exact.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import SourceObservation
from .errors import ValidationError

__all__ = [
    "ParseError",
    "read_vocab",
    "read_triplets",
    "write_triplets",
    "read_embeddings",
    "write_embeddings",
    "read_dictionary",
    "read_token_list",
    "load_sources",
    "LoadedSources",
    "format_float",
]


class ParseError(ValidationError):
    """Malformed input file; carries the path and 1-based line number."""

    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


def format_float(x) -> str:
    return format(float(x), ".17g")


def _lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            yield lineno, raw.rstrip("\r\n")


def read_token_list(path):
    """Non-blank lines of `path`, stripped, with their line numbers."""
    return [(lineno, line.strip()) for lineno, line in _lines(path) if line.strip()]


def read_vocab(path):
    tokens, seen = [], {}
    for lineno, tok in read_token_list(path):
        if tok in seen:
            raise ParseError(path, lineno, f"duplicate token {tok!r} (first on line {seen[tok]})")
        seen[tok] = lineno
        tokens.append(tok)
    if not tokens:
        raise ParseError(path, 0, "vocabulary is empty")
    return tokens


def read_triplets(path, vocab):
    """Symmetric matrix over `vocab` from an upper-triangle triplet file."""
    pos = {tok: i for i, tok in enumerate(vocab)}
    n = len(vocab)
    W = np.zeros((n, n))
    seen = {}
    for lineno, line in _lines(path):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise ParseError(path, lineno, f"expected 3 tab-separated fields, got {len(fields)}")
        a, b, raw = fields
        if a not in pos or b not in pos:
            missing = a if a not in pos else b
            raise ParseError(path, lineno, f"token {missing!r} is not in the vocabulary")
        try:
            value = float(raw)
        except ValueError:
            raise ParseError(path, lineno, f"cannot parse value {raw!r}") from None
        if not np.isfinite(value):
            raise ParseError(path, lineno, f"non-finite value {raw!r}")
        i, j = pos[a], pos[b]
        key = (min(i, j), max(i, j))
        if key in seen:
            raise ParseError(path, lineno, f"entry ({a}, {b}) repeats line {seen[key]}")
        seen[key] = lineno
        W[i, j] = W[j, i] = value
    return W


def write_triplets(path, tokens, matrix, skip_zeros=True):
    """Write the upper triangle (diagonal included) of a symmetric matrix."""
    W = np.asarray(matrix, dtype=float)
    rows, cols = np.triu_indices(W.shape[0])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, j in zip(rows.tolist(), cols.tolist()):
            v = W[i, j]
            if skip_zeros and v == 0:
                continue
            fh.write(f"{tokens[i]}\t{tokens[j]}\t{format_float(v)}\n")


def write_embeddings(path, tokens, X):
    X = np.asarray(X, dtype=float)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for tok, row in zip(tokens, X):
            fh.write("\t".join([tok, *map(format_float, row)]) + "\n")


def read_embeddings(path):
    """``(tokens, X)`` from a token-plus-values TSV file."""
    tokens, rows, width = [], [], None
    for lineno, line in _lines(path):
        if not line.strip():
            continue
        fields = line.split("\t")
        try:
            vals = [float(x) for x in fields[1:]]
        except ValueError:
            raise ParseError(path, lineno, "embedding values must be numbers") from None
        if width is None:
            width = len(vals)
        if len(vals) != width or width == 0:
            raise ParseError(path, lineno, f"expected {width} values, got {len(vals)}")
        tokens.append(fields[0])
        rows.append(vals)
    if not rows:
        raise ParseError(path, 0, "no embeddings found")
    return tokens, np.array(rows)


def read_dictionary(path):
    """Token pairs ``(token_in_s, token_in_k)`` from a two-column TSV file."""
    pairs = []
    for lineno, line in _lines(path):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise ParseError(path, lineno, f"expected 2 tab-separated fields, got {len(fields)}")
        pairs.append((lineno, fields[0].strip(), fields[1].strip()))
    return pairs


@dataclass
class LoadedSources:
    sources: list
    entity_names: list

    def names_for(self, global_index):
        return [self.entity_names[int(g)] for g in global_index]


def load_sources(triplet_paths, vocab_paths, dictionaries=(), labels=None):
    """Read sources and map their tokens onto shared global entity ids.

    Tokens that are string-equal across vocabularies denote the same entity.
    ``dictionaries`` holds ``(s, k, path)`` with 0-based source positions;
    each line of the file links a token of source ``s`` to a token of source
    ``k``. Global ids follow first appearance (source order, then vocabulary
    order), and an entity is named by its first token.
    """
    if len(triplet_paths) != len(vocab_paths):
        raise ValidationError(
            f"{len(triplet_paths)} triplet files but {len(vocab_paths)} vocabulary files"
        )
    if not triplet_paths:
        raise ValidationError("no sources given")
    vocabs = [read_vocab(p) for p in vocab_paths]
    matrices = [read_triplets(t, v) for t, v in zip(triplet_paths, vocabs)]

    parent = {}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    # nodes are (source, position); order defines first appearance
    first_by_token = {}
    for s, vocab in enumerate(vocabs):
        for i, tok in enumerate(vocab):
            parent[(s, i)] = (s, i)
            if tok in first_by_token:
                union(first_by_token[tok], (s, i))
            else:
                first_by_token[tok] = (s, i)

    for s, k, path in dictionaries:
        if not (0 <= s < len(vocabs) and 0 <= k < len(vocabs)):
            raise ValidationError(f"dictionary {path} refers to a missing source")
        pos_s = {tok: i for i, tok in enumerate(vocabs[s])}
        pos_k = {tok: i for i, tok in enumerate(vocabs[k])}
        for lineno, a, b in read_dictionary(path):
            if a not in pos_s or b not in pos_k:
                raise ParseError(path, lineno, f"pair ({a!r}, {b!r}) is not in the vocabularies")
            union((s, pos_s[a]), (k, pos_k[b]))

    gid, names = {}, []
    node_gid = {}
    for s, vocab in enumerate(vocabs):
        for i, tok in enumerate(vocab):
            root = find((s, i))
            if root not in gid:
                gid[root] = len(names)
                names.append(tok)
            node_gid[(s, i)] = gid[root]

    sources = []
    for s, (vocab, W) in enumerate(zip(vocabs, matrices)):
        ids = np.array([node_gid[(s, i)] for i in range(len(vocab))], dtype=np.int64)
        if np.unique(ids).size != ids.size:
            raise ValidationError(
                f"dictionary links two tokens of {vocab_paths[s]} to the same entity"
            )
        order = np.argsort(ids, kind="stable")
        label = labels[s] if labels else f"{s + 1}:{Path(triplet_paths[s]).name}"
        sources.append(
            SourceObservation(indices=ids[order], matrix=W[np.ix_(order, order)], label=label)
        )
    return LoadedSources(sources=sources, entity_names=names)
