"""Fair multi-party exchange.

MuAC policies are compiled into MuACL theories; fairness of an exchange is
decided through an integer system and certified by a checkable proof, which
the ledger in :mod:`fairexchange.ttp` verifies before applying.
"""

from .bag import Bag
from .compile import GroundedTheory, compile_state, theory_from_policies, theory_from_rulesets
from .decide import FairnessCertificate, decide, decide_exchange
from .logic import STARCUT, STRICT, check_proof, proof_from_json, proof_to_json
from .model import ExchangeApproval, ExchangePolicy, State, Transfer, exchange
from .muac import Context, parse_ruleset
from .prove import build_proof, fair_st, synthesize_proof

__version__ = "0.1.0"

__all__ = [
    "Bag",
    "Context",
    "ExchangeApproval",
    "ExchangePolicy",
    "FairnessCertificate",
    "GroundedTheory",
    "STARCUT",
    "STRICT",
    "State",
    "Transfer",
    "build_proof",
    "check_proof",
    "compile_state",
    "decide",
    "decide_exchange",
    "exchange",
    "fair_st",
    "parse_ruleset",
    "proof_from_json",
    "proof_to_json",
    "synthesize_proof",
    "theory_from_policies",
    "theory_from_rulesets",
]
