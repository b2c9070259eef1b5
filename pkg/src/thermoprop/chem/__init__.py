from .graph import Atom, Bond, MolGraph
from .parse import ParseError, MultiComponentError, ValenceError, parse_smiles
from .canonical import canonical_smiles, canonical_ranks, enumerate_smiles
from .tokenize import TokenSeq, tokenize, VOCAB, VOCAB_SIZE, PAD, SOS, EOS, UNK, MAX_LEN
from .scaffold import murcko_scaffold

__all__ = [
    "Atom",
    "Bond",
    "MolGraph",
    "ParseError",
    "MultiComponentError",
    "ValenceError",
    "parse_smiles",
    "canonical_smiles",
    "canonical_ranks",
    "enumerate_smiles",
    "TokenSeq",
    "tokenize",
    "VOCAB",
    "VOCAB_SIZE",
    "PAD",
    "SOS",
    "EOS",
    "UNK",
    "MAX_LEN",
    "murcko_scaffold",
]
