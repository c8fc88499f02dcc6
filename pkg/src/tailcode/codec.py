"""Interaction-label codes: one-hot, binary, Hamming and the hybrid scheme.

The hybrid scheme keeps one-hot bits for frequent classes, adds one
super-class bit shared by every rare class, and separates the rare classes
inside the super-class with a Hamming code.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

SCHEMES = ("one_hot", "binary", "hamming", "hybrid", "parity")
DEFAULT_HAMMING_K = 4
MAX_HAMMING_K = 11


def _parity_bits_for(k: int) -> int:
    r = 1
    while (1 << r) < k + r + 1:
        r += 1
    return r


def _int_to_bits(value: int, width: int) -> np.ndarray:
    return np.array([(value >> (width - 1 - i)) & 1 for i in range(width)], dtype=np.uint8)


def _bits_to_int(bits) -> int:
    out = 0
    for b in bits:
        out = (out << 1) | int(b)
    return out


@dataclass(frozen=True)
class HammingCodeSpec:
    """Single-error-correcting Hamming code with parity bits at the
    power-of-two positions (1-indexed) of the codeword."""

    k: int
    r: int
    generator: np.ndarray = field(repr=False, compare=False)
    parity_check: np.ndarray = field(repr=False, compare=False)
    parity_positions: tuple = ()
    data_positions: tuple = ()

    @property
    def n(self) -> int:
        return self.k + self.r

    def codewords(self) -> np.ndarray:
        """All ``2**k`` codewords, row ``w`` encoding data word ``w``."""
        return np.array([hamming_encode(self, _int_to_bits(w, self.k)) for w in range(1 << self.k)],
                        dtype=np.uint8)

    def to_dict(self) -> dict:
        return {"k": self.k, "r": self.r, "n": self.n,
                "parity_positions": list(self.parity_positions),
                "data_positions": list(self.data_positions)}


def build_hamming(k: int) -> HammingCodeSpec:
    if not 1 <= k <= MAX_HAMMING_K:
        raise ValueError(f"data bits k must be in [1, {MAX_HAMMING_K}], got {k}")
    r = _parity_bits_for(k)
    n = k + r
    parity_pos = tuple(1 << i for i in range(r))
    data_pos = tuple(p for p in range(1, n + 1) if p & (p - 1))
    # column j of H is the binary expansion of position j+1
    h = np.array([[(pos >> i) & 1 for pos in range(1, n + 1)] for i in range(r)], dtype=np.uint8)
    g = np.zeros((k, n), dtype=np.uint8)
    for d, pos in enumerate(data_pos):
        g[d, pos - 1] = 1
        for i, ppos in enumerate(parity_pos):
            if pos & ppos:
                g[d, ppos - 1] = 1
    return HammingCodeSpec(k=k, r=r, generator=g, parity_check=h,
                           parity_positions=parity_pos, data_positions=data_pos)


def hamming_encode(spec: HammingCodeSpec, data) -> np.ndarray:
    d = np.asarray(data, dtype=np.uint8).ravel()
    if d.size != spec.k:
        raise ValueError(f"data has {d.size} bits, code expects {spec.k}")
    return (d.astype(np.int64) @ spec.generator.astype(np.int64) % 2).astype(np.uint8)


def hamming_syndrome(spec: HammingCodeSpec, received) -> int:
    s = spec.parity_check.astype(np.int64) @ np.asarray(received, dtype=np.int64) % 2
    return int(sum(int(b) << i for i, b in enumerate(s)))


def hamming_decode(spec: HammingCodeSpec, received) -> tuple[np.ndarray, Optional[int]]:
    """Return ``(data_bits, corrected_position)``.

    ``corrected_position`` is the 1-indexed flipped bit, or ``None`` when
    the syndrome is zero. Two or more errors decode silently to a wrong
    codeword; syndromes pointing past a shortened code's length fall back to
    a nearest-codeword search.
    """
    c = np.asarray(received, dtype=np.uint8).ravel().copy()
    if c.size != spec.n:
        raise ValueError(f"received word has {c.size} bits, code expects {spec.n}")
    s = hamming_syndrome(spec, c)
    corrected = None
    if s:
        if s <= spec.n:
            c[s - 1] ^= 1
            corrected = s
        else:
            words = spec.codewords()
            dist = (words != c).sum(axis=1)
            c = words[int(np.argmin(dist))]
    return c[[p - 1 for p in spec.data_positions]].copy(), corrected


def min_pairwise_distance(codewords) -> int:
    words = np.asarray(codewords, dtype=np.uint8)
    if words.ndim != 2 or words.shape[0] < 2:
        raise ValueError("need at least two codewords")
    best = words.shape[1] + 1
    for a, b in itertools.combinations(range(words.shape[0]), 2):
        best = min(best, int(np.count_nonzero(words[a] != words[b])))
    return best


@dataclass
class HybridCodebook:
    scheme: str
    num_classes: int
    codewords: np.ndarray
    rare_threshold: int = 0
    rare_class_ids: frozenset = frozenset()
    super_bit: Optional[int] = None
    rare_bits: Optional[tuple] = None  # half-open (start, stop)
    hamming: Optional[HammingCodeSpec] = None
    rare_order: tuple = ()  # rare class ids in data-word order
    degraded: bool = False

    @property
    def codeword_length(self) -> int:
        return int(self.codewords.shape[1])

    @property
    def storage_bits(self) -> int:
        return self.num_classes * self.codeword_length

    def encode(self, class_id: int) -> np.ndarray:
        return encode_label(self, class_id)

    def bit_labels(self, class_ids) -> np.ndarray:
        """Codeword matrix for a vector of class ids, one row per sample."""
        return self.codewords[np.asarray(class_ids, dtype=np.intp)]

    def is_conditional_bit(self, bit: int) -> bool:
        """True for hybrid rare-section bits, which only see rare samples."""
        return self.rare_bits is not None and self.rare_bits[0] <= bit < self.rare_bits[1]

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "num_classes": self.num_classes,
            "rare_threshold": self.rare_threshold,
            "rare_class_ids": sorted(int(c) for c in self.rare_class_ids),
            "rare_order": [int(c) for c in self.rare_order],
            "super_bit": self.super_bit,
            "rare_bits": list(self.rare_bits) if self.rare_bits is not None else None,
            "hamming": self.hamming.to_dict() if self.hamming is not None else None,
            "degraded": self.degraded,
            "codewords": ["".join(str(int(b)) for b in row) for row in self.codewords],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "HybridCodebook":
        words = np.array([[int(ch) for ch in w] for w in d["codewords"]], dtype=np.uint8)
        ham = build_hamming(d["hamming"]["k"]) if d.get("hamming") else None
        return cls(scheme=d["scheme"], num_classes=int(d["num_classes"]), codewords=words,
                   rare_threshold=int(d["rare_threshold"]),
                   rare_class_ids=frozenset(int(c) for c in d["rare_class_ids"]),
                   super_bit=d["super_bit"],
                   rare_bits=tuple(d["rare_bits"]) if d["rare_bits"] is not None else None,
                   hamming=ham, rare_order=tuple(int(c) for c in d["rare_order"]),
                   degraded=bool(d["degraded"]))

    @classmethod
    def from_json(cls, text: str) -> "HybridCodebook":
        return cls.from_dict(json.loads(text))


def _hamming_k_for(count: int, minimum: int) -> int:
    k = max(minimum, 1)
    while (1 << k) < count:
        k += 1
    if k > MAX_HAMMING_K:
        raise ValueError(f"{count} classes exceed the largest supported Hamming code")
    return k


def build_codebook(class_counts: Sequence[int], rare_threshold: int = 10, scheme: str = "hybrid",
                   hamming_k: int = DEFAULT_HAMMING_K) -> HybridCodebook:
    """Codebook for classes ``0..len(class_counts)-1``.

    ``hamming_k`` is the preferred number of Hamming data bits; it grows
    when more classes must be coded than ``2**hamming_k``. A hybrid request
    without rare classes degrades to one-hot with ``degraded=True``.
    """
    counts = np.asarray(class_counts, dtype=np.int64)
    c = counts.size
    if c < 2:
        raise ValueError(f"need at least 2 classes, got {c}")
    if rare_threshold < 0:
        raise ValueError("rare_threshold must be >= 0")
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    rare = frozenset(int(i) for i in np.flatnonzero(counts < rare_threshold))

    if scheme == "one_hot":
        return HybridCodebook("one_hot", c, np.eye(c, dtype=np.uint8), rare_threshold, rare)
    if scheme in ("binary", "parity"):
        width = max(1, math.ceil(math.log2(c)))
        words = np.array([_int_to_bits(i, width) for i in range(c)], dtype=np.uint8)
        if scheme == "parity":
            words = np.hstack([words, words.sum(axis=1, keepdims=True) % 2]).astype(np.uint8)
        return HybridCodebook(scheme, c, words, rare_threshold, rare)
    if scheme == "hamming":
        spec = build_hamming(_hamming_k_for(c, hamming_k))
        words = np.array([hamming_encode(spec, _int_to_bits(i, spec.k)) for i in range(c)],
                         dtype=np.uint8)
        return HybridCodebook("hamming", c, words, rare_threshold, rare, hamming=spec)

    if not rare:
        cb = build_codebook(counts, rare_threshold, "one_hot")
        cb.degraded = True
        return cb
    # rare classes: descending count, then ascending id -> data words 0, 1, 2, ...
    rare_order = tuple(sorted(rare, key=lambda i: (-int(counts[i]), i)))
    frequent = [i for i in range(c) if i not in rare]
    spec = build_hamming(_hamming_k_for(len(rare_order), hamming_k))
    head = len(frequent) + 1
    words = np.zeros((c, head + spec.n), dtype=np.uint8)
    for pos, cls_id in enumerate(frequent):
        words[cls_id, pos] = 1
    for word, cls_id in enumerate(rare_order):
        words[cls_id, head - 1] = 1
        words[cls_id, head:] = hamming_encode(spec, _int_to_bits(word, spec.k))
    return HybridCodebook("hybrid", c, words, rare_threshold, rare, super_bit=head - 1,
                          rare_bits=(head, head + spec.n), hamming=spec, rare_order=rare_order)


def encode_label(codebook: HybridCodebook, class_id: int) -> np.ndarray:
    if not 0 <= int(class_id) < codebook.num_classes:
        raise KeyError(f"class {class_id} not in codebook of {codebook.num_classes} classes")
    return codebook.codewords[int(class_id)].copy()


def _likelihood(words: np.ndarray, q: np.ndarray) -> np.ndarray:
    # product over bits of q^b (1-q)^(1-b), one value per codeword row
    return np.prod(np.where(words == 1, q, 1.0 - q), axis=1)


def decode_soft(codebook: HybridCodebook, bit_probs) -> np.ndarray:
    """Per-class posterior from independent per-bit probabilities.

    Hybrid codebooks factorize rare classes as
    P(super-class pattern on the head bits) * P(rare codeword | super-class),
    where the second factor is normalized over the rare classes.
    """
    q = np.asarray(bit_probs, dtype=np.float64).ravel()
    if q.size != codebook.codeword_length:
        raise ValueError(f"expected {codebook.codeword_length} bit probabilities, got {q.size}")
    if np.any(~np.isfinite(q)) or np.any(q < 0) or np.any(q > 1):
        raise ValueError("bit probabilities must lie in [0, 1]")
    words = codebook.codewords
    if codebook.scheme == "hybrid":
        start, stop = codebook.rare_bits
        scores = _likelihood(words[:, :start], q[:start])
        rare = np.array(codebook.rare_order, dtype=np.intp)
        within = _likelihood(words[rare, start:stop], q[start:stop])
        total = within.sum()
        within = within / total if total > 0 else np.full(rare.size, 1.0 / rare.size)
        scores[rare] *= within
    else:
        scores = _likelihood(words, q)
    z = scores.sum()
    if z <= 0:
        return np.full(codebook.num_classes, 1.0 / codebook.num_classes)
    return scores / z


def hard_decode(codebook: HybridCodebook, bits) -> int:
    """Nearest codeword by Hamming distance; ties go to the lowest class id."""
    b = np.asarray(bits, dtype=np.uint8).ravel()
    return int(np.argmin((codebook.codewords != b).sum(axis=1)))
