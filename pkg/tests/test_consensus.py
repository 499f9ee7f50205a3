from dataclasses import replace
from itertools import combinations

import pytest

from builders import World, product_params
from dnas.consensus import (TxPool, ValidatorSet, priority, propose_block, seal, select_transactions, sign_vote,
                            vote_and_finalize)
from dnas.errors import (BadNonce, BadSignature, GasLimitTooHigh, InvalidSignature, KeyCompromised,
                         KnownTransaction, NotYourTurn)
from dnas.ledger import Vote
from dnas.registry import GasSchedule, RegistryState


@pytest.mark.parametrize("n,q", [(1, 1), (2, 2), (3, 3), (4, 3), (5, 4), (6, 5), (7, 5), (10, 7)])
def test_quorum_arithmetic(n, q):
    w = World(validators=n)
    assert w.validators.quorum == q


def test_validator_set_checks(world):
    k = world.validator_keys[0]
    with pytest.raises(ValueError):
        ValidatorSet((), ())
    with pytest.raises(ValueError):
        ValidatorSet((k.address, k.address), (k.public_key, k.public_key))
    with pytest.raises(ValueError):
        ValidatorSet((k.address,), (world.keys["admin"].public_key,))


def _proposal(w: World, round_: int = 0):
    proposer = w.validators.proposer_for(round_)
    return propose_block([], w.chain.tip_header, proposer, round_, w.validators, w.state)


def test_every_vote_subset_of_four():
    w = World(validators=4)
    block = _proposal(w).block
    votes = {k.address: sign_vote(k, block.header) for k in w.validator_keys}
    for size in range(5):
        for subset in combinations(w.validator_keys, size):
            fin = vote_and_finalize(block, w.validators, [votes[k.address] for k in subset])
            assert fin.finalized == (size >= 3)


def test_forged_vote_does_not_count():
    w = World(validators=4)
    block = _proposal(w).block
    a, b, c, _ = w.validator_keys
    forged = Vote(c.address, sign_vote(a, block.header).signature)
    fin = vote_and_finalize(block, w.validators, [sign_vote(a, block.header), sign_vote(b, block.header), forged])
    assert not fin.finalized and fin.rejected == (c.address,)
    with pytest.raises(InvalidSignature):
        seal(block, [sign_vote(a, block.header), sign_vote(b, block.header), forged], w.validators)


def test_duplicate_votes_count_once():
    w = World(validators=4)
    block = _proposal(w).block
    a = w.validator_keys[0]
    fin = vote_and_finalize(block, w.validators, [sign_vote(a, block.header)] * 3)
    assert not fin.finalized and fin.duplicates == 2


def test_outsider_vote_rejected():
    w = World(validators=1)
    block = _proposal(w).block
    outsider = w.keys["admin"]
    fin = vote_and_finalize(block, w.validators, [sign_vote(outsider, block.header)])
    assert not fin.finalized and fin.rejected == (outsider.address,)


def test_wrong_proposer():
    w = World(validators=4)
    with pytest.raises(NotYourTurn):
        propose_block([], w.chain.tip_header, w.validators.proposer_for(1), 0, w.validators, w.state)


def test_empty_pool_gives_empty_valid_block():
    w = World(validators=4)
    proposal = _proposal(w)
    assert proposal.block.body == () and proposal.block.height == 1
    votes = [sign_vote(k, proposal.block.header) for k in w.validator_keys[:3]]
    w.chain.append(seal(proposal.block, votes, w.validators))
    assert w.chain.height == 1


def test_packing_prefers_gas_price():
    w = World(block_gas_limit=80)
    txs = [w.tx(name, "flag_product", {"pid": "X", "reason": ""}, gas_price=price)
           for name, price in (("producer", 5), ("distributor", 1), ("retailer", 9))]
    chosen, receipts, dropped, _ = select_transactions(txs, w.state, 80)
    assert [t.gas_price for t in chosen] == [9, 5]
    assert not dropped


def test_tie_break_nonce_then_digest():
    w = World()
    same_sender = [w.tx("producer", "register_product", product_params(f"T-{i}"), gas_price=4) for i in range(3)]
    others = [w.tx(n, "flag_product", {"pid": "T-0", "reason": ""}, gas_price=4) for n in ("distributor", "retailer")]
    chosen, *_ = select_transactions(list(reversed(same_sender)) + others, w.state, 1000)
    assert [t.nonce for t in chosen if t.sender == w.addr("producer")] == [0, 1, 2]
    nonce_zero = sorted((t for t in chosen if t.nonce == 0), key=lambda t: t.digest())
    assert [t for t in chosen if t.nonce == 0] == nonce_zero
    assert priority(same_sender[0]) < priority(same_sender[1])


def test_future_nonce_waits_for_predecessor():
    w = World()
    first = w.tx("producer", "register_product", product_params("A"), gas_price=1)
    second = w.tx("producer", "register_product", product_params("B"), gas_price=50)
    chosen, *_ = select_transactions([second], w.state, 1000)
    assert chosen == []
    chosen, *_ = select_transactions([second, first], w.state, 1000)
    assert chosen == [first, second]


def test_block_respects_gas_limit():
    w = World(block_gas_limit=250)
    txs = [w.tx("producer", "register_product", product_params(f"G-{i}")) for i in range(5)]
    block = w.seal_next(txs)
    assert block.gas_reserved() <= 250 and len(block.body) == 2


def test_pool_admission_order():
    w = World()
    pool = TxPool(1000)
    tx = w.tx("producer", "register_product", product_params("A"))
    pool.admit(tx, w.state)
    with pytest.raises(KnownTransaction):
        pool.admit(tx, w.state)
    with pytest.raises(GasLimitTooHigh):
        pool.admit(w.tx("producer", "register_product", product_params("B"), gas_limit=1001), w.state)
    with pytest.raises(BadSignature):
        pool.admit(replace(w.tx("distributor", "flag_product", {"pid": "A"}), sender=w.addr("producer")), w.state)
    with pytest.raises(KeyCompromised):
        pool.admit(w.tx("retailer", "flag_product", {"pid": "A"}), w.state, key_ok=False)
    w.state.execute_transaction(tx)
    fresh = TxPool(1000)
    with pytest.raises(BadNonce):
        fresh.admit(tx, w.state)


def test_failed_inclusion_is_not_readmitted():
    w = World()
    pool = TxPool(1000)
    bad = w.tx("distributor", "register_product", product_params("A"), nonce=0)
    block = w.seal_next([bad])
    assert w.state.nonce_of(w.addr("distributor")) == 0
    pool.remove_finalized(block, w.state)
    with pytest.raises(KnownTransaction):
        pool.admit(bad, w.state)


def test_remove_finalized_drops_stale():
    w = World()
    pool = TxPool(1000)
    a = w.tx("producer", "register_product", product_params("A"), nonce=0)
    b = w.tx("producer", "register_product", product_params("B"), nonce=0)
    pool.admit(a, w.state)
    pool.admit(b, w.state)
    block = w.seal_next([a])
    assert pool.remove_finalized(block, w.state) == [b.digest()]
    assert len(pool) == 0


def test_proposal_state_root_matches_execution():
    w = World()
    gas = GasSchedule(block_gas_limit=1000)
    before = RegistryState.from_alloc(w.alloc, gas)
    txs = [w.tx("producer", "register_product", product_params("A"))]
    proposal = propose_block(txs, w.chain.tip_header, w.validators.proposer_for(0), 0, w.validators, w.state)
    assert w.state.state_root() == before.state_root()  # proposing works on a copy
    assert proposal.block.header.state_root != before.state_root()
    assert [r.status for r in proposal.receipts] == ["ok"]
