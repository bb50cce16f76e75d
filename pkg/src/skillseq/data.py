"""Corpus ingestion, synthetic multitask generation, batching and padding.

Synthetic tasks are deterministic string-to-string transforms over a shared
symbol alphabet, rendered space-separated so overlap metrics see one token
per symbol. Families with a variant parameter (rot-cipher shifts) give the
corpus known task-relatedness structure for clustering checks.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass, field, replace

import numpy as np

from .tokenizer import SEP, TruncationPolicy, Vocabulary, encode_qa

FAMILIES = ("copy", "reverse", "sort", "rot-cipher", "case-map", "duplicate-strip")
SPLITS = ("train", "dev", "test")


@dataclass
class Example:
    dataset_id: int          # 1-based; the D+1 component is reserved for unseen data
    x: list
    y: list                  # BOS ... EOS wrapped
    split: str
    raw_input: str = ""
    raw_output: str = ""


@dataclass
class Batch:
    x: np.ndarray            # [B, Sx] int64, PAD-padded
    x_mask: np.ndarray       # [B, Sx] float, 0 exactly at PAD
    y: np.ndarray
    y_mask: np.ndarray
    dataset_ids: np.ndarray  # [B] int64

    def __len__(self):
        return self.x.shape[0]


@dataclass(frozen=True)
class SyntheticTaskSpec:
    """Pure-function description of one synthetic task."""

    name: str
    family: str
    alphabet_size: int = 12
    min_len: int = 4
    max_len: int = 10
    pair_count: int = 2200
    seed: int = 0
    shift: int = 1           # rot-cipher variant parameter
    repeat_prob: float = 0.3  # duplicate-strip input bias; other families draw iid

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; choose from {FAMILIES}")
        if self.alphabet_size < 2:
            raise ValueError("alphabet must have at least 2 symbols")
        if not (1 <= self.min_len <= self.max_len):
            raise ValueError("bad length range")


class Corpus:
    """Tokenized examples plus the vocabulary and dataset registry behind them."""

    def __init__(self, examples, dataset_names, vocab, policy):
        self.examples = list(examples)
        self.dataset_names = list(dataset_names)
        self.vocab = vocab
        self.policy = policy

    @property
    def dataset_count(self):
        return len(self.dataset_names)

    def dataset_id(self, name):
        return self.dataset_names.index(name) + 1

    def split(self, split, dataset_id=None):
        return [e for e in self.examples
                if e.split == split and (dataset_id is None or e.dataset_id == dataset_id)]

    def subset(self, names):
        """New corpus over a subset of datasets, ids re-densified in given order."""
        remap = {self.dataset_id(n): i + 1 for i, n in enumerate(names)}
        kept = [replace(e, dataset_id=remap[e.dataset_id])
                for e in self.examples if e.dataset_id in remap]
        return Corpus(kept, list(names), self.vocab, self.policy)


# -- synthetic generation ----------------------------------------------------


def _task_alphabet(size):
    lower = string.ascii_lowercase[:size]
    return lower, lower.upper()


def _apply_family(spec, symbols):
    lower, upper = _task_alphabet(spec.alphabet_size)
    if spec.family == "copy":
        return list(symbols)
    if spec.family == "reverse":
        return list(reversed(symbols))
    if spec.family == "sort":
        return sorted(symbols)
    if spec.family == "rot-cipher":
        def rot(ch):
            if ch in lower:
                return lower[(lower.index(ch) + spec.shift) % len(lower)]
            return upper[(upper.index(ch) + spec.shift) % len(upper)]
        return [rot(ch) for ch in symbols]
    if spec.family == "case-map":
        return [ch.swapcase() for ch in symbols]
    if spec.family == "duplicate-strip":
        out = [symbols[0]]
        for ch in symbols[1:]:
            if ch != out[-1]:
                out.append(ch)
        return out
    raise AssertionError(spec.family)


def _draw_symbols(spec, rng):
    lower, upper = _task_alphabet(spec.alphabet_size)
    pool = lower + upper
    n = int(rng.integers(spec.min_len, spec.max_len + 1))
    if spec.family == "duplicate-strip":
        out = [pool[rng.integers(len(pool))]]
        while len(out) < n:
            if rng.random() < spec.repeat_prob:
                out.append(out[-1])
            else:
                out.append(pool[rng.integers(len(pool))])
        return out
    return [pool[i] for i in rng.integers(0, len(pool), size=n)]


def generate_pairs(spec):
    """Deterministic (input, output) string pairs for one task spec."""
    rng = np.random.default_rng(spec.seed)
    seen = set()
    pairs = []
    attempts = 0
    while len(pairs) < spec.pair_count:
        attempts += 1
        if attempts > 100 * spec.pair_count:
            raise ValueError(f"cannot draw {spec.pair_count} unique inputs for {spec.name}; "
                             "alphabet/length range too small")
        symbols = _draw_symbols(spec, rng)
        x = " ".join(symbols)
        if x in seen:
            continue
        seen.add(x)
        pairs.append((x, " ".join(_apply_family(spec, symbols))))
    return pairs


def generate_synthetic(specs, vocab_size=512, policy=None,
                       split_fractions=(0.8, 0.1, 0.1), vocab=None):
    """Build a corpus from task specs; trains a BPE vocabulary unless given one."""
    specs = list(specs)
    if not specs:
        raise ValueError("need at least one task spec")
    if len({s.name for s in specs}) != len(specs):
        raise ValueError("task names must be unique")
    policy = policy or TruncationPolicy()
    per_task = {s.name: generate_pairs(s) for s in specs}
    if vocab is None:
        texts = [t for pairs in per_task.values() for xy in pairs for t in xy]
        vocab = Vocabulary.train(texts, target_vocab=vocab_size)
    examples = []
    for d, spec in enumerate(specs, start=1):
        pairs = per_task[spec.name]
        bounds = _split_bounds(len(pairs), split_fractions)
        for i, (x, y) in enumerate(pairs):
            split = SPLITS[np.searchsorted(bounds, i, side="right")]
            examples.append(Example(
                dataset_id=d,
                x=vocab.encode(x, policy, "context"),
                y=vocab.encode(y, policy, "output"),
                split=split, raw_input=x, raw_output=y))
    return Corpus(examples, [s.name for s in specs], vocab, policy)


def _split_bounds(n, fractions):
    if abs(sum(fractions) - 1.0) > 1e-9 or len(fractions) != 3:
        raise ValueError("split fractions must be three values summing to 1")
    train_end = int(round(n * fractions[0]))
    dev_end = train_end + int(round(n * fractions[1]))
    return np.array([train_end - 1, dev_end - 1])


# -- JSONL ingestion ---------------------------------------------------------


def _with_defaults(manifest):
    if "datasets" not in manifest or not manifest["datasets"]:
        raise ValueError("manifest must list at least one dataset name")
    manifest.setdefault("splits", {"train": 0.8, "dev": 0.1, "test": 0.1})
    manifest.setdefault("vocab_size", 512)
    manifest.setdefault("caps", {})
    manifest.setdefault("seed", 0)
    return manifest


def load_manifest(path):
    with open(path) as fh:
        return _with_defaults(json.load(fh))


def load_jsonl(path, manifest, policy=None, vocab=None):
    """Ingest `{"dataset", "input", "output"[, "question"]}` lines into a corpus."""
    if isinstance(manifest, dict):
        manifest = _with_defaults(dict(manifest))
    else:
        manifest = load_manifest(manifest)
    names = list(manifest["datasets"])
    policy = policy or TruncationPolicy()
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                dataset, inp, out = obj["dataset"], obj["input"], obj["output"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}: malformed line {lineno}: {exc}") from None
            if dataset not in names:
                raise ValueError(f"{path}: line {lineno}: unknown dataset name {dataset!r}")
            rows.append((dataset, inp, obj.get("question"), out))
    if not rows:
        raise ValueError(f"{path}: empty corpus")

    caps = manifest["caps"]
    by_dataset = {n: [] for n in names}
    for dataset, inp, question, out in rows:
        if dataset in caps and len(by_dataset[dataset]) >= caps[dataset]:
            continue
        by_dataset[dataset].append((inp, question, out))

    if vocab is None:
        texts = []
        for items in by_dataset.values():
            for inp, question, out in items:
                texts.extend([inp, out] + ([question] if question else []))
        vocab = Vocabulary.train(texts, target_vocab=manifest["vocab_size"])

    fr = manifest["splits"]
    fractions = (fr["train"], fr["dev"], fr["test"])
    rng = np.random.default_rng(manifest["seed"])
    examples = []
    for d, name in enumerate(names, start=1):
        items = by_dataset[name]
        order = rng.permutation(len(items))
        bounds = _split_bounds(len(items), fractions)
        for pos, idx in enumerate(order):
            inp, question, out = items[idx]
            if question is not None:
                x = encode_qa(vocab, inp, question, policy)
            else:
                x = vocab.encode(inp, policy, "context")
            examples.append(Example(
                dataset_id=d, x=x,
                y=vocab.encode(out, policy, "output"),
                split=SPLITS[int(np.searchsorted(bounds, pos, side="right"))],
                raw_input=inp, raw_output=out))
    return Corpus(examples, names, vocab, policy)


# -- batching ----------------------------------------------------------------


def pad_batch(examples):
    """Pad a list of examples into dense id/mask matrices."""
    from .tokenizer import PAD

    b = len(examples)
    sx = max(len(e.x) for e in examples)
    sy = max(len(e.y) for e in examples)
    x = np.full((b, sx), PAD, dtype=np.int64)
    y = np.full((b, sy), PAD, dtype=np.int64)
    xm = np.zeros((b, sx), dtype=np.float64)
    ym = np.zeros((b, sy), dtype=np.float64)
    ids = np.zeros(b, dtype=np.int64)
    for i, e in enumerate(examples):
        x[i, : len(e.x)] = e.x
        xm[i, : len(e.x)] = 1.0
        y[i, : len(e.y)] = e.y
        ym[i, : len(e.y)] = 1.0
        ids[i] = e.dataset_id
    return Batch(x, xm, y, ym, ids)


def epoch_batches(corpus, batch_size, seed, epoch=0, split="train", dataset_id=None):
    """One seeded-shuffle pass over a split; every example appears exactly once."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    pool = corpus.split(split, dataset_id)
    if not pool:
        raise ValueError(f"no examples in split {split!r}")
    rng = np.random.default_rng([seed, epoch])
    order = rng.permutation(len(pool))
    for start in range(0, len(pool), batch_size):
        yield pad_batch([pool[i] for i in order[start: start + batch_size]])


def make_batches(corpus, batch_size, seed, split="train", dataset_id=None,
                 start_epoch=0):
    """Endless epoch-shuffled batch stream (the training iterator)."""
    epoch = start_epoch
    while True:
        yield from epoch_batches(corpus, batch_size, seed, epoch, split, dataset_id)
        epoch += 1
