"""Character-level SMILES tokenizer with a frozen 50-token vocabulary.

Ids 0-3 are pad/SOS/EOS/unknown; the remaining 46 chemistry tokens cover
atoms, aromatic atoms, digits, and structural symbols.  Two-character tokens
(Cl, Br, Si, Se, Te) take priority over their single-character prefixes.
This table is versioned with checkpoints; do not reorder.
"""

from __future__ import annotations

from dataclasses import dataclass

PAD, SOS, EOS, UNK = 0, 1, 2, 3
MAX_LEN = 256

_TWO_CHAR = ("Cl", "Br", "Si", "Se", "Te")

_CHEM_TOKENS = (
    # two-character (priority matched)
    "Cl", "Br", "Si", "Se", "Te",
    # single-letter atoms
    "B", "C", "N", "O", "F", "H", "I", "P", "S",
    # aromatic atoms
    "b", "c", "n", "o", "p", "s",
    # ring-closure digits
    "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
    # structure and decoration
    "(", ")", "[", "]", "=", "#", "-", "+", "/", "\\", "@", ".", "%", ":", "*", "~",
)

VOCAB: dict[str, int] = {"<pad>": PAD, "<sos>": SOS, "<eos>": EOS, "<unk>": UNK}
for _tok in _CHEM_TOKENS:
    VOCAB[_tok] = len(VOCAB)
VOCAB_SIZE = len(VOCAB)
assert VOCAB_SIZE == 50

_SINGLE = {t: i for t, i in VOCAB.items() if len(t) == 1}
_DOUBLE = {t: VOCAB[t] for t in _TWO_CHAR}


@dataclass(frozen=True)
class TokenSeq:
    """Fixed-length (MAX_LEN) id sequence plus the unpadded length."""

    ids: tuple[int, ...]
    length: int  # SOS + body (+ EOS when not truncated)

    def __post_init__(self):
        assert len(self.ids) == MAX_LEN


def tokenize(s: str) -> TokenSeq:
    """Tokenize any text; unknown characters map to UNK, never fails."""
    ids = [SOS]
    i = 0
    n = len(s)
    while i < n:
        pair = s[i : i + 2]
        if pair in _DOUBLE:
            ids.append(_DOUBLE[pair])
            i += 2
        else:
            ids.append(_SINGLE.get(s[i], UNK))
            i += 1
    if len(ids) >= MAX_LEN:
        ids = ids[:MAX_LEN]  # truncated: no EOS
    else:
        ids.append(EOS)
    length = len(ids)
    ids.extend([PAD] * (MAX_LEN - length))
    return TokenSeq(ids=tuple(ids), length=length)
