import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from dppp.errors import AbortInsufficientParties, EncodingOverflow, InsufficientShares
from dppp.mechanisms import BINOMIAL, GAUSSIAN, PrivacyParams, bm_plan, dg_plan, noiseless_plan
from dppp.paillier import decode_signed, partial_decrypt, threshold_decrypt
from dppp.protocol import (
    AGGREGATOR,
    NoisyHistogram,
    RunConfig,
    VoteVector,
    aggregate_votes,
    encode_noisy_vote,
    encode_signed,
    estimate_traffic,
    finalize,
    predict,
    run_protocol,
    simulate_plaintext,
    votes_from_labels,
)

PARAMS = PrivacyParams(1.0, 1e-3)


def _decrypt_all(keys, config, cts):
    pk, shares = keys
    return [decode_signed(threshold_decrypt(pk, config, shares[: config.threshold], c), pk) for c in cts]


def test_vote_vector_validation():
    assert VoteVector.one_hot(2, 4).entries == (0, 0, 1, 0)
    assert VoteVector((0, 1)).label == 1
    for bad in [(0, 0), (1, 1), (2, 0), (0, -1, 2)]:
        with pytest.raises(ValueError):
            VoteVector(bad)
    with pytest.raises(ValueError):
        VoteVector.one_hot(3, 3)


def test_run_config_validation():
    RunConfig(6, 4, 3, compromised={1, 2})
    with pytest.raises(ValueError):
        RunConfig(6, 4, 3, compromised={1, 2, 3})
    with pytest.raises(ValueError):
        RunConfig(6, 4, 3, dropouts={7})
    with pytest.raises(ValueError):
        RunConfig(6, 4, 1)
    with pytest.raises(ValueError):
        RunConfig(6, 4, 3, mechanism="laplace")
    with pytest.raises(Exception):
        RunConfig(3, 4, 2)


def test_run_config_files(tmp_path):
    (tmp_path / "run.json").write_text(json.dumps({"n_teachers": 5, "threshold": 3, "class_count": 2, "dropouts": [4]}))
    (tmp_path / "run.toml").write_text('n_teachers = 5\nthreshold = 3\nclass_count = 2\ndropouts = [4]\n')
    a = RunConfig.from_file(tmp_path / "run.json")
    b = RunConfig.from_file(tmp_path / "run.toml")
    assert a == b and a.dropouts == frozenset({4})
    with pytest.raises(ValueError):
        RunConfig.from_dict({"n_teachers": 5, "threshold": 3, "class_count": 2, "colour": "red"})


def test_noiseless_encoding_is_the_vote(small_keys, small_config):
    pk, _ = small_keys
    vote = VoteVector.one_hot(1, 3)
    ev = encode_noisy_vote(vote, noiseless_plan(5), pk, random.Random(0))
    assert _decrypt_all(small_keys, small_config, ev.per_class) == [0, 1, 0]


def test_binomial_plaintexts_in_range(small_keys, small_config):
    pk, _ = small_keys
    plan = bm_plan(PARAMS, 20)
    assert plan.m_per_party == 8
    rng = random.Random(1)
    for label in range(3):
        ev = encode_noisy_vote(VoteVector.one_hot(label, 3), plan, pk, rng)
        assert all(0 <= v <= 9 for v in _decrypt_all(small_keys, small_config, ev.per_class))


def test_signed_wraparound(small_keys, small_config):
    pk, _ = small_keys
    plan = dg_plan(PARAMS, 5)
    ev = encode_noisy_vote(VoteVector.one_hot(1, 2), plan, pk, random.Random(2), noise=[-2, 0])
    raw = threshold_decrypt(pk, small_config, small_keys[1][:3], ev.per_class[0])
    assert raw == pk.modulus - 2
    assert decode_signed(raw, pk) == -2


def test_encoding_overflow(small_keys):
    pk, _ = small_keys
    with pytest.raises(EncodingOverflow):
        encode_signed(pk.modulus // 2 + 1, pk)
    with pytest.raises(EncodingOverflow):
        encode_signed(-(pk.modulus // 2 + 1), pk)
    assert encode_signed(-1, pk) == pk.modulus - 1


def test_aggregate_examples(small_keys, small_config):
    pk, _ = small_keys
    rng = random.Random(3)
    plan = noiseless_plan(5)
    one = encode_noisy_vote(VoteVector.one_hot(0, 2), plan, pk, rng)
    assert _decrypt_all(small_keys, small_config, aggregate_votes(pk, [one])) == [1, 0]
    two = encode_noisy_vote(VoteVector.one_hot(1, 2), plan, pk, rng)
    assert _decrypt_all(small_keys, small_config, aggregate_votes(pk, [one, two])) == [1, 1]
    many = [encode_noisy_vote(VoteVector.one_hot(2, 3), plan, pk, rng) for _ in range(5)]
    assert _decrypt_all(small_keys, small_config, aggregate_votes(pk, many)) == [0, 0, 5]
    with pytest.raises(ValueError):
        aggregate_votes(pk, [one, many[0]])


def test_finalize_threshold_enforced(small_keys, small_config):
    pk, shares = small_keys
    plan = noiseless_plan(5)
    ev = encode_noisy_vote(VoteVector.one_hot(0, 2), plan, pk, random.Random(4))
    partials = [[partial_decrypt(s, small_config, c) for s in shares[:2]] for c in ev.per_class]
    with pytest.raises(InsufficientShares):
        finalize(pk, small_config, partials, plan, 1)


def test_predict_rules():
    assert predict([3, 9, 1]) == 1
    assert predict([5, 5, 2]) == 0
    assert predict(NoisyHistogram((4, 7), offset=3, participants=2)) == 1


@settings(max_examples=200)
@given(st.lists(st.integers(-1000, 1000), min_size=2, max_size=10), st.integers(-10**6, 10**6))
def test_predict_offset_invariant(counts, shift):
    assert predict(counts) == predict([x + shift for x in counts])


def test_noiseless_run_exact(small_keys):
    config = RunConfig(5, 3, 3, seed=1, key_bits=512)
    hist, label, _ = run_protocol(config, votes_from_labels([2] * 5, 3), noiseless_plan(5), keys=small_keys)
    assert hist.raw_counts == (0, 0, 5) and hist.offset == 0 and label == 2


def test_noiseless_mixed_votes(small_keys):
    config = RunConfig(5, 3, 3, seed=2, key_bits=512)
    hist, _, _ = run_protocol(config, votes_from_labels([0, 1, 1, 2, 1], 3), noiseless_plan(5), keys=small_keys)
    assert hist.raw_counts == (1, 3, 1)


def test_binomial_offset(small_keys):
    plan = bm_plan(PARAMS, 5)
    config = RunConfig(5, 3, 2, seed=3, key_bits=512)
    hist, label, _ = run_protocol(config, votes_from_labels([0, 0, 1, 0, 1], 2), plan, keys=small_keys)
    assert hist.offset == 5 * plan.m_per_party // 2
    assert hist.centered == tuple(x - hist.offset for x in hist.raw_counts)
    assert label == predict(hist.centered)


@pytest.mark.parametrize("mechanism", [BINOMIAL, GAUSSIAN])
@pytest.mark.parametrize("seed", range(8))
def test_shadow_equivalence(ensemble_keys, mechanism, seed):
    plan = bm_plan(PARAMS, 20) if mechanism == BINOMIAL else dg_plan(PARAMS, 20)
    rng = random.Random(seed)
    votes = votes_from_labels([rng.randrange(3) for _ in range(20)], 3)
    config = RunConfig(20, 13, 3, mechanism=mechanism, seed=seed, key_bits=512)
    hist, _, _ = run_protocol(config, votes, plan, keys=ensemble_keys)
    assert hist == simulate_plaintext(config, votes, plan)


def test_dropouts_up_to_the_limit(small_keys):
    plan = bm_plan(PARAMS, 5)
    votes = votes_from_labels([0, 1, 1, 0, 1], 2)
    config = RunConfig(5, 3, 2, dropouts={4}, seed=5, key_bits=512)
    hist, _, stats = run_protocol(config, votes, plan, keys=small_keys)
    assert stats.participants == (1, 2, 3, 5)
    assert hist.participants == 4 and hist.offset == 4 * plan.m_per_party // 2
    assert hist == simulate_plaintext(config, votes, plan)


def test_too_many_dropouts_abort(small_keys):
    config = RunConfig(5, 3, 2, dropouts={4, 5}, seed=6, key_bits=512)
    with pytest.raises(AbortInsufficientParties):
        run_protocol(config, votes_from_labels([0] * 5, 2), noiseless_plan(5), keys=small_keys)


def test_late_dropout_reselects(ensemble_keys):
    plan = bm_plan(PARAMS, 20)
    votes = votes_from_labels([i % 3 for i in range(20)], 3)
    base = RunConfig(20, 13, 3, seed=7, key_bits=512)
    _, _, clean = run_protocol(base, votes, plan, keys=ensemble_keys)
    late = frozenset(clean.selected[:2])
    config = RunConfig(20, 13, 3, seed=7, late_dropouts=late, key_bits=512)
    hist, _, stats = run_protocol(config, votes, plan, keys=ensemble_keys)
    assert len(stats.selected) == 13 and not late & set(stats.selected)
    # late dropouts delivered their vote, so the histogram is unchanged
    assert hist == simulate_plaintext(base, votes, plan)


def test_aggregator_sees_only_ciphertexts(small_keys):
    pk, _ = small_keys
    plan = bm_plan(PARAMS, 5)
    votes = votes_from_labels([0, 1, 1, 0, 1], 2)
    config = RunConfig(5, 3, 2, compromised={2}, seed=8, key_bits=512)
    _, _, stats = run_protocol(config, votes, plan, keys=small_keys)
    view = stats.aggregator_view()
    kinds = {m.kind for m in view}
    assert kinds == {"encrypted_vote", "partial_decryption", "noise_reveal"}
    assert {m.sender for m in view if m.kind == "noise_reveal"} == {2}
    for m in view:
        if m.kind == "noise_reveal":
            continue
        assert m.size % pk.ciphertext_bytes == 0
        values = [int.from_bytes(m.payload[k : k + 128], "big") for k in range(0, m.size, 128)]
        # group elements of Z*_{n^2}, never a small plaintext count
        assert all(v > 2 * plan.m_per_party + 1 for v in values)
    assert all(m.receiver != AGGREGATOR for m in stats.messages if m.kind == "aggregate")


def test_honest_noise_sufficient_under_collusion(ensemble_keys):
    for mech, plan in ((BINOMIAL, bm_plan(PrivacyParams(1.0, 1e-3, 2 / 3), 20)), (GAUSSIAN, dg_plan(PrivacyParams(1.0, 1e-3, 2 / 3), 20))):
        config = RunConfig(20, 13, 2, mechanism=mech, compromised=set(range(1, 7)), seed=9, key_bits=512)
        _, _, stats = run_protocol(config, votes_from_labels([0] * 20, 2), plan, keys=ensemble_keys)
        if mech == BINOMIAL:
            assert stats.honest_noise >= plan.n_total
        else:
            assert stats.honest_noise >= plan.sigma_total**2


def test_traffic_formula():
    assert estimate_traffic(10, 1024) == 7680
    assert estimate_traffic(2, 1024) == 1536
    assert estimate_traffic(10, 512) == 3840


def test_full_threshold_has_no_dropout_margin():
    # the rule f < N - t leaves no room at all when t = N
    import dppp.paillier as pl

    config = RunConfig(5, 5, 3, seed=10, key_bits=512)
    keys = pl.deal_keys(512, pl.ThresholdConfig(5, 5), random.Random("tests/t5"))
    with pytest.raises(AbortInsufficientParties):
        run_protocol(config, votes_from_labels([0, 1, 2, 0, 1], 3), noiseless_plan(5), keys=keys)


def test_traffic_accounting_selected(ensemble_keys):
    config = RunConfig(20, 13, 3, seed=11, key_bits=512)
    _, _, stats = run_protocol(config, votes_from_labels([0] * 20, 3), noiseless_plan(20), keys=ensemble_keys)
    for i, b in stats.per_teacher_bytes.items():
        assert b == (estimate_traffic(3, 512) if i in stats.selected else 128 * 3)


def test_transcript_jsonl(small_keys):
    config = RunConfig(5, 3, 2, seed=12, key_bits=512)
    _, _, stats = run_protocol(config, votes_from_labels([0] * 5, 2), noiseless_plan(5), keys=small_keys)
    records = [json.loads(line) for line in stats.to_jsonl().splitlines()]
    assert len(records) == stats.message_count == 5 + 3 + 3
    assert set(records[0]) == {"type", "sender", "receiver", "bytes", "round"}


def test_seeded_runs_repeat(small_keys):
    plan = dg_plan(PARAMS, 5)
    config = RunConfig(5, 3, 2, mechanism=GAUSSIAN, seed=13, key_bits=512)
    votes = votes_from_labels([0, 1, 0, 1, 1], 2)
    a = run_protocol(config, votes, plan, keys=small_keys)
    b = run_protocol(config, votes, plan, keys=small_keys)
    assert a[0] == b[0] and a[2].to_jsonl() == b[2].to_jsonl()
    assert [m.payload for m in a[2].messages] == [m.payload for m in b[2].messages]


def test_mismatched_inputs(small_keys):
    config = RunConfig(5, 3, 2, seed=14, key_bits=512)
    with pytest.raises(ValueError):
        run_protocol(config, votes_from_labels([0] * 4, 2), noiseless_plan(5), keys=small_keys)
    with pytest.raises(ValueError):
        run_protocol(config, votes_from_labels([0] * 5, 2), noiseless_plan(6), keys=small_keys)
    with pytest.raises(ValueError):
        run_protocol(config, votes_from_labels([0] * 5, 2), dg_plan(PARAMS, 5), keys=small_keys)
