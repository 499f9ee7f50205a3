"""dnas: a deterministic simulator for a permissioned supply-chain provenance ledger.

Layers, bottom up: canonical encoding and keys, blocks and Merkle proofs,
the product-registry contract, PoA consensus, emulated NFC tags, per-node
provenance stores, the validation pipeline, and the network simulator with
its threat scenarios.
"""

from .consensus import ValidatorSet, propose_block, seal, vote_and_finalize
from .doublespend import DoubleSpendQuery, closed_form, double_spend_success, monte_carlo
from .errors import DnasError, InvariantViolation
from .keyring import Keyring, KeyPair, address_of, sign, verify
from .ledger import Block, BlockHeader, Chain, merkle_prove, merkle_root, validate_chain, verify_proof
from .netsim import SimConfig, Simulation
from .registry import RegistryState, Role, Status
from .scenarios import ScenarioReport, measure_linkability, run_scenario
from .store import ProvenanceStore
from .tag import TagFactory, TagState
from .transaction import Transaction, make_transaction
from .validation import Outcome, Verdict, validate_product

__version__ = "0.1.0"

__all__ = [
    "Block", "BlockHeader", "Chain", "DnasError", "DoubleSpendQuery", "InvariantViolation", "KeyPair", "Keyring",
    "Outcome", "ProvenanceStore", "RegistryState", "Role", "ScenarioReport", "SimConfig", "Simulation", "Status",
    "TagFactory", "TagState", "Transaction", "ValidatorSet", "Verdict", "address_of", "closed_form",
    "double_spend_success", "make_transaction", "measure_linkability", "merkle_prove", "merkle_root",
    "monte_carlo", "propose_block", "run_scenario", "seal", "sign", "validate_product", "validate_chain",
    "verify", "verify_proof", "vote_and_finalize", "__version__",
]
