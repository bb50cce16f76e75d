"""Self-contained byte-level BPE tokenizer with field-aware truncation.

Base symbols are the bytes observed in the training corpus, so any string
over the training alphabet round-trips exactly. Merges are learned greedily
by descending adjacent-pair frequency; ties break toward the
lexicographically larger pair, which makes retraining deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

PAD, BOS, EOS, SEP, UNK = 0, 1, 2, 3, 4
RESERVED = ("<pad>", "<bos>", "<eos>", "<sep>", "<unk>")
N_RESERVED = len(RESERVED)


@dataclass(frozen=True)
class TruncationPolicy:
    """Per-field token limits applied at encode time."""

    max_context: int = 268
    max_output: int = 256
    max_question: int = 32

    def __post_init__(self):
        for name in ("max_context", "max_output", "max_question"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def limit(self, field):
        try:
            return {"context": self.max_context, "output": self.max_output,
                    "question": self.max_question}[field]
        except KeyError:
            raise ValueError(f"unknown field {field!r}") from None


def _merge_stream(stream, left, right, joined):
    out = []
    i = 0
    n = len(stream)
    while i < n:
        if i + 1 < n and stream[i] == left and stream[i + 1] == right:
            out.append(joined)
            i += 2
        else:
            out.append(stream[i])
            i += 1
    return out


class Vocabulary:
    """Token table plus the ordered merge rules that produced it.

    Ids are dense: 0-4 reserved, then base byte symbols, then merged
    tokens in learned order. Immutable once built.
    """

    def __init__(self, base_symbols, merges):
        self.merges = list(merges)
        self.id_to_token = [None] * N_RESERVED + list(base_symbols)
        for left, right in self.merges:
            self.id_to_token.append(left + right)
        self.token_to_id = {tok: i for i, tok in enumerate(self.id_to_token) if tok is not None}

    def __len__(self):
        return len(self.id_to_token)

    # -- training ---------------------------------------------------------

    @classmethod
    def train(cls, corpus, target_vocab):
        """Learn merges greedily by descending pair frequency over the corpus."""
        corpus = list(corpus)
        if not corpus or all(len(s) == 0 for s in corpus):
            raise ValueError("cannot train a vocabulary on an empty corpus")
        base = sorted({bytes([b]) for s in corpus for b in s.encode("utf-8")})
        if target_vocab <= len(base) + N_RESERVED:
            raise ValueError(
                f"target vocab {target_vocab} must exceed {len(base)} base symbols "
                f"plus {N_RESERVED} reserved ids")
        streams = [[bytes([b]) for b in s.encode("utf-8")] for s in corpus]
        merges = []
        while len(base) + N_RESERVED + len(merges) < target_vocab:
            counts = {}
            for stream in streams:
                for pair in zip(stream, stream[1:]):
                    counts[pair] = counts.get(pair, 0) + 1
            if not counts:
                break
            best, best_count = max(counts.items(), key=lambda kv: (kv[1], kv[0]))
            if best_count < 2:
                break
            merges.append(best)
            joined = best[0] + best[1]
            streams = [_merge_stream(s, best[0], best[1], joined) for s in streams]
        return cls(base, merges)

    # -- encode / decode ---------------------------------------------------

    def _to_symbols(self, text):
        stream = [bytes([b]) for b in text.encode("utf-8")]
        for left, right in self.merges:
            stream = _merge_stream(stream, left, right, left + right)
        return stream

    def encode(self, text, policy=None, field="context"):
        """Tokenize and truncate to the field's limit.

        The output field is wrapped BOS ... EOS before tail truncation, so
        BOS always survives. Bytes outside the training alphabet map to UNK.
        """
        ids = [self.token_to_id.get(sym, UNK) for sym in self._to_symbols(text)]
        if field == "output":
            ids = [BOS] + ids + [EOS]
        if policy is not None:
            ids = ids[: policy.limit(field)]
        return ids

    def decode(self, ids):
        """Inverse of encode modulo truncation; reserved ids are dropped."""
        chunks = []
        for i in ids:
            i = int(i)
            if not 0 <= i < len(self.id_to_token):
                raise ValueError(f"token id {i} out of range for vocabulary of size {len(self)}")
            if i >= N_RESERVED:
                chunks.append(self.id_to_token[i])
        return b"".join(chunks).decode("utf-8", errors="replace")

    # -- serialization -----------------------------------------------------

    def to_text(self):
        lines = [f"skillseq-bpe v1 merges={len(self.merges)} tokens={len(self)}"]
        for left, right in self.merges:
            lines.append(f"{_escape(left)}\t{_escape(right)}")
        for i, tok in enumerate(self.id_to_token):
            name = RESERVED[i] if i < N_RESERVED else _escape(tok)
            lines.append(f"{i}\t{name}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        lines = text.splitlines()
        header = lines[0].split()
        if header[0] != "skillseq-bpe" or header[1] != "v1":
            raise ValueError(f"unrecognized vocabulary header: {lines[0]!r}")
        n_merges = int(header[2].split("=")[1])
        n_tokens = int(header[3].split("=")[1])
        merges = []
        for line in lines[1: 1 + n_merges]:
            left, right = line.split("\t")
            merges.append((_unescape(left), _unescape(right)))
        base = []
        for line in lines[1 + n_merges: 1 + n_merges + n_tokens]:
            idx, name = line.split("\t")
            idx = int(idx)
            if idx < N_RESERVED:
                continue
            if idx < n_tokens - n_merges:
                base.append(_unescape(name))
        return cls(base, merges)

    def save(self, path):
        with open(path, "w", encoding="ascii") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path):
        with open(path, encoding="ascii") as fh:
            return cls.from_text(fh.read())


def encode_qa(vocab, context, question, policy):
    """Join a QA pair as context ++ SEP ++ question, each field truncated."""
    return (vocab.encode(context, policy, "context") + [SEP]
            + vocab.encode(question, policy, "question"))


_SAFE = set(range(0x21, 0x7F)) - {ord("\\"), ord("<")}


def _escape(token):
    out = []
    for b in token:
        out.append(chr(b) if b in _SAFE else f"\\x{b:02x}")
    return "".join(out)


def _unescape(text):
    out = bytearray()
    i = 0
    while i < len(text):
        if text[i] == "\\":
            out.append(int(text[i + 2: i + 4], 16))
            i += 4
        else:
            out.append(ord(text[i]))
            i += 1
    return bytes(out)
