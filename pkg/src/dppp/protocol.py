"""Secure aggregation of noisy one-hot votes.

One prediction query runs in five steps:

1. every teacher adds its noise share to its one-hot vote, encrypts each
   class coordinate and sends the ciphertexts to the aggregator;
2. the aggregator multiplies the ciphertexts coordinate-wise;
3. the aggregator sends the aggregate to t randomly chosen surviving teachers;
4. each chosen teacher returns a partial decryption per class;
5. the aggregator combines the partials into the noisy vote histogram.

Teachers are numbered 1..N, matching their key-share index.  The simulator
is deterministic for a fixed ``RunConfig.seed``: noise, encryption and
selection each draw from their own derived stream, so the plaintext shadow
:func:`simulate_plaintext` reproduces the exact noise of :func:`run_protocol`.
"""

from __future__ import annotations

import json
import random
import secrets
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .errors import AbortInsufficientParties, EncodingOverflow
from .mechanisms import BINOMIAL, GAUSSIAN, BinomialPlan, GaussianPlan, Plan, sample_share
from .paillier import (
    Ciphertext,
    DEFAULT_KEY_BITS,
    PartialDecryption,
    PublicKey,
    SecretKeyShare,
    ThresholdConfig,
    add_all,
    combine,
    deal_keys,
    decode_signed,
    encrypt,
    partial_decrypt,
)

AGGREGATOR = 0


@dataclass(frozen=True)
class VoteVector:
    entries: tuple[int, ...]

    def __post_init__(self) -> None:
        entries = tuple(int(e) for e in self.entries)
        if any(e not in (0, 1) for e in entries) or sum(entries) != 1:
            raise ValueError(f"vote must be one-hot, got {entries}")
        object.__setattr__(self, "entries", entries)

    @classmethod
    def one_hot(cls, label: int, class_count: int) -> VoteVector:
        if not 0 <= label < class_count:
            raise ValueError(f"label {label} out of range for {class_count} classes")
        return cls(tuple(int(j == label) for j in range(class_count)))

    @property
    def label(self) -> int:
        return self.entries.index(1)

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class EncryptedVote:
    teacher_index: int
    per_class: tuple[Ciphertext, ...]


@dataclass(frozen=True)
class NoisyHistogram:
    """Decrypted per-class sums plus the deterministic Binomial offset."""

    raw_counts: tuple[int, ...]
    offset: int
    participants: int

    @property
    def centered(self) -> tuple[int, ...]:
        return tuple(x - self.offset for x in self.raw_counts)


@dataclass(frozen=True)
class RunConfig:
    """Parameters of one simulated protocol run.

    ``dropouts`` fail after encrypting locally and before delivering
    anything.  ``late_dropouts`` deliver their vote but vanish after being
    selected for decryption; the aggregator then selects replacements.
    ``compromised`` teachers reveal their vote and noise to the aggregator.
    ``seed=None`` switches every stream to the OS CSPRNG.
    """

    n_teachers: int
    threshold: int
    class_count: int
    mechanism: str = BINOMIAL
    dropouts: frozenset[int] = frozenset()
    compromised: frozenset[int] = frozenset()
    late_dropouts: frozenset[int] = frozenset()
    seed: Optional[int] = 0
    key_bits: int = DEFAULT_KEY_BITS

    def __post_init__(self) -> None:
        for name in ("dropouts", "compromised", "late_dropouts"):
            value = frozenset(int(i) for i in getattr(self, name))
            object.__setattr__(self, name, value)
            bad = [i for i in value if not 1 <= i <= self.n_teachers]
            if bad:
                raise ValueError(f"{name} contains unknown teacher indices {sorted(bad)}")
        if self.mechanism not in (BINOMIAL, GAUSSIAN):
            raise ValueError(f"mechanism must be {BINOMIAL!r} or {GAUSSIAN!r}, got {self.mechanism!r}")
        if self.class_count < 2:
            raise ValueError(f"class_count must be >= 2, got {self.class_count}")
        if len(self.compromised) > self.n_teachers // 3:
            raise ValueError(
                f"at most floor(N/3) = {self.n_teachers // 3} teachers may be compromised, got {len(self.compromised)}"
            )
        # validates 2 <= t <= N
        self.threshold_config

    @property
    def threshold_config(self) -> ThresholdConfig:
        return ThresholdConfig(self.n_teachers, self.threshold)

    @classmethod
    def from_dict(cls, obj: dict) -> RunConfig:
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown RunConfig keys: {sorted(unknown)}")
        kwargs = dict(obj)
        for name in ("dropouts", "compromised", "late_dropouts"):
            if name in kwargs:
                kwargs[name] = frozenset(kwargs[name])
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str | Path) -> RunConfig:
        path = Path(path)
        if path.suffix == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:  # python < 3.11
                import tomli as tomllib
            with path.open("rb") as fh:
                return cls.from_dict(tomllib.load(fh))
        return cls.from_dict(json.loads(path.read_text()))


@dataclass(frozen=True)
class Message:
    kind: str
    sender: int
    receiver: int
    round: int
    payload: bytes = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.payload)

    def to_record(self) -> dict:
        return {"type": self.kind, "sender": self.sender, "receiver": self.receiver, "bytes": self.size, "round": self.round}


@dataclass
class TranscriptStats:
    messages: list[Message]
    participants: tuple[int, ...]
    selected: tuple[int, ...]
    honest_noise: float

    @property
    def message_count(self) -> int:
        return len(self.messages)

    @property
    def total_bytes(self) -> int:
        return sum(m.size for m in self.messages if m.kind != "noise_reveal")

    @property
    def per_teacher_bytes(self) -> dict[int, int]:
        """Ciphertext bytes sent plus received, per teacher."""
        out: dict[int, int] = {}
        for m in self.messages:
            if m.kind == "noise_reveal":
                continue
            teacher = m.receiver if m.sender == AGGREGATOR else m.sender
            out[teacher] = out.get(teacher, 0) + m.size
        return out

    def aggregator_view(self) -> list[Message]:
        return [m for m in self.messages if m.receiver == AGGREGATOR]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(m.to_record()) + "\n" for m in self.messages)


def estimate_traffic(class_count: int, key_bits: int = DEFAULT_KEY_BITS) -> int:
    """Bytes between the aggregator and one decrypting teacher: three rounds of c ciphertexts."""
    return (2 * key_bits // 8) * class_count * 3


def encode_signed(value: int, pk: PublicKey) -> int:
    if 2 * abs(value) >= pk.modulus:
        raise EncodingOverflow(f"|{value}| does not fit the centered plaintext range")
    return value % pk.modulus


def draw_noise(plan: Plan, class_count: int, rng: random.Random) -> list[int]:
    return [sample_share(plan, rng) for _ in range(class_count)]


def encode_noisy_vote(
    vote: VoteVector,
    plan: Plan,
    pk: PublicKey,
    rng: Optional[random.Random] = None,
    noise: Optional[Sequence[int]] = None,
    teacher_index: int = 0,
) -> EncryptedVote:
    """Add a noise share to ``vote`` and encrypt each coordinate.

    ``noise`` may be supplied pre-drawn (the simulator does so to keep the
    noise stream separate from the encryption stream); otherwise it is drawn
    from ``rng``.
    """
    rng = rng if rng is not None else secrets.SystemRandom()
    if noise is None:
        noise = draw_noise(plan, len(vote), rng)
    if len(noise) != len(vote):
        raise ValueError("noise length differs from class count")
    if isinstance(plan, GaussianPlan):
        bound = plan.truncation_bound
        if any(abs(z) > bound for z in noise):
            raise ValueError(f"discrete Gaussian noise exceeds truncation bound {bound}")
    per_class = tuple(encrypt(pk, encode_signed(y + z, pk), rng) for y, z in zip(vote.entries, noise))
    return EncryptedVote(teacher_index=teacher_index, per_class=per_class)


def aggregate_votes(pk: PublicKey, votes: Sequence[EncryptedVote]) -> list[Ciphertext]:
    if not votes:
        raise ValueError("no votes to aggregate")
    width = len(votes[0].per_class)
    if any(len(v.per_class) != width for v in votes):
        raise ValueError("encrypted votes have mismatched class counts")
    return [add_all(pk, (v.per_class[j] for v in votes)) for j in range(width)]


def _offset(plan: Plan, participants: int) -> int:
    if isinstance(plan, BinomialPlan):
        return participants * plan.m_per_party // 2
    return 0


def finalize(
    pk: PublicKey,
    config: RunConfig | ThresholdConfig,
    partials: Sequence[Sequence[PartialDecryption]],
    plan: Plan,
    participants: int,
) -> NoisyHistogram:
    tconfig = config.threshold_config if isinstance(config, RunConfig) else config
    raw = tuple(decode_signed(combine(pk, tconfig, per_class), pk) for per_class in partials)
    return NoisyHistogram(raw_counts=raw, offset=_offset(plan, participants), participants=participants)


def predict(hist: NoisyHistogram | Sequence[int]) -> int:
    """Noisy argmax; ties go to the lowest class index."""
    counts = hist.raw_counts if isinstance(hist, NoisyHistogram) else tuple(hist)
    if not counts:
        raise ValueError("empty histogram")
    best = 0
    for j, v in enumerate(counts):
        if v > counts[best]:
            best = j
    return best


def _stream(seed: Optional[int], label: str, index: int = 0) -> random.Random:
    if seed is None:
        return secrets.SystemRandom()
    return random.Random(f"dppp/{label}/{seed}/{index}")


def noise_stream(seed: Optional[int], teacher: int) -> random.Random:
    return _stream(seed, "noise", teacher)


def _honest_noise(plan: Plan, honest: int) -> float:
    if isinstance(plan, BinomialPlan):
        return float(honest * plan.m_per_party)
    return honest * plan.sigma_per_party**2


class Teacher:
    """Teacher-side protocol state for a single query."""

    def __init__(
        self,
        index: int,
        vote: VoteVector,
        plan: Plan,
        pk: PublicKey,
        share: SecretKeyShare,
        tconfig: ThresholdConfig,
        seed: Optional[int],
    ):
        self.index = index
        self.vote = vote
        self.plan = plan
        self.pk = pk
        self._share = share
        self._tconfig = tconfig
        self._enc_rng = _stream(seed, "encrypt", index)
        self.noise = draw_noise(plan, len(vote), noise_stream(seed, index))

    def submit(self) -> EncryptedVote:
        return encode_noisy_vote(self.vote, self.plan, self.pk, self._enc_rng, noise=self.noise, teacher_index=self.index)

    def reveal(self) -> bytes:
        return json.dumps({"vote": list(self.vote.entries), "noise": self.noise}).encode()

    def decrypt_share(self, aggregate: Sequence[Ciphertext]) -> list[PartialDecryption]:
        return [partial_decrypt(self._share, self._tconfig, c) for c in aggregate]


class Aggregator:
    """Untrusted aggregator: sees ciphertexts, partials and whatever compromised teachers reveal."""

    def __init__(self, pk: PublicKey, config: RunConfig, plan: Plan):
        self.pk = pk
        self.config = config
        self.plan = plan
        self.received: dict[int, EncryptedVote] = {}
        self.revealed: dict[int, bytes] = {}
        self.aggregate: list[Ciphertext] = []
        self.partials: dict[int, list[PartialDecryption]] = {}
        self._select_rng = _stream(config.seed, "select")

    def receive_vote(self, vote: EncryptedVote) -> None:
        self.received[vote.teacher_index] = vote

    def combine_votes(self) -> list[Ciphertext]:
        ordered = [self.received[i] for i in sorted(self.received)]
        self.aggregate = aggregate_votes(self.pk, ordered)
        return self.aggregate

    def select(self, candidates: Sequence[int], k: int) -> list[int]:
        if len(candidates) < k:
            raise AbortInsufficientParties(f"only {len(candidates)} teachers available, {k} needed")
        return sorted(self._select_rng.sample(sorted(candidates), k))

    def receive_partials(self, index: int, partials: list[PartialDecryption]) -> None:
        self.partials[index] = partials

    def finish(self) -> NoisyHistogram:
        c = self.config.class_count
        per_class = [[self.partials[i][j] for i in sorted(self.partials)] for j in range(c)]
        return finalize(self.pk, self.config, per_class, self.plan, participants=len(self.received))


def _check_inputs(config: RunConfig, votes: Sequence[VoteVector], plan: Plan) -> None:
    if len(votes) != config.n_teachers:
        raise ValueError(f"expected {config.n_teachers} votes, got {len(votes)}")
    if any(len(v) != config.class_count for v in votes):
        raise ValueError("vote length differs from class_count")
    if plan.n_parties != config.n_teachers:
        raise ValueError(f"plan was calibrated for {plan.n_parties} parties, config has {config.n_teachers}")
    if plan.mechanism != config.mechanism:
        raise ValueError(f"config mechanism {config.mechanism!r} does not match plan {plan.mechanism!r}")


def run_protocol(
    config: RunConfig,
    votes: Sequence[VoteVector],
    plan: Plan,
    keys: Optional[tuple[PublicKey, Sequence[SecretKeyShare]]] = None,
) -> tuple[NoisyHistogram, int, TranscriptStats]:
    """Run all five steps for one query and return histogram, label and transcript.

    ``keys`` should be dealt once and reused across queries; when omitted a
    fresh key of ``config.key_bits`` is dealt from the run seed.

    Raises:
        AbortInsufficientParties: ``len(dropouts) >= N - t``, or too few
            teachers remain after late dropouts.
    """
    _check_inputs(config, votes, plan)
    n, t = config.n_teachers, config.threshold
    if len(config.dropouts) >= n - t:
        raise AbortInsufficientParties(f"{len(config.dropouts)} dropouts with N={n}, t={t}; need f < N - t")
    tconfig = config.threshold_config
    if keys is None:
        keys = deal_keys(config.key_bits, tconfig, _stream(config.seed, "keygen"))
    pk, shares = keys
    by_index = {s.index: s for s in shares}

    teachers = [Teacher(i, votes[i - 1], plan, pk, by_index[i], tconfig, config.seed) for i in range(1, n + 1)]
    agg = Aggregator(pk, config, plan)
    messages: list[Message] = []

    # step 1: local encryption; dropouts fail before delivery
    for teacher in teachers:
        ev = teacher.submit()
        if teacher.index in config.dropouts:
            continue
        messages.append(Message("encrypted_vote", teacher.index, AGGREGATOR, 1, b"".join(c.to_bytes(pk) for c in ev.per_class)))
        agg.receive_vote(ev)
        if teacher.index in config.compromised:
            revealed = teacher.reveal()
            messages.append(Message("noise_reveal", teacher.index, AGGREGATOR, 1, revealed))
            agg.revealed[teacher.index] = revealed

    # step 2
    aggregate = agg.combine_votes()
    agg_bytes = b"".join(c.to_bytes(pk) for c in aggregate)

    # steps 3-4, re-selecting from untouched survivors when a selected teacher vanishes
    untouched = [i for i in range(1, n + 1) if i not in config.dropouts]
    selected: list[int] = []
    need = t
    while need:
        batch = agg.select(untouched, need)
        untouched = [i for i in untouched if i not in batch]
        for i in batch:
            messages.append(Message("aggregate", AGGREGATOR, i, 2, agg_bytes))
            if i in config.late_dropouts:
                continue
            partials = teachers[i - 1].decrypt_share(aggregate)
            messages.append(Message("partial_decryption", i, AGGREGATOR, 3, b"".join(p.to_bytes(pk) for p in partials)))
            agg.receive_partials(i, partials)
            selected.append(i)
        need = t - len(selected)

    # step 5
    hist = agg.finish()
    participants = tuple(sorted(agg.received))
    honest = sum(1 for i in participants if i not in config.compromised)
    stats = TranscriptStats(
        messages=messages,
        participants=participants,
        selected=tuple(sorted(selected)),
        honest_noise=_honest_noise(plan, honest),
    )
    return hist, predict(hist), stats


def simulate_plaintext(config: RunConfig, votes: Sequence[VoteVector], plan: Plan) -> NoisyHistogram:
    """Plaintext shadow of :func:`run_protocol`: the same noise draws, summed in the clear."""
    _check_inputs(config, votes, plan)
    participants = [i for i in range(1, config.n_teachers + 1) if i not in config.dropouts]
    raw = [0] * config.class_count
    for i in participants:
        noise = draw_noise(plan, config.class_count, noise_stream(config.seed, i))
        for j in range(config.class_count):
            raw[j] += votes[i - 1].entries[j] + noise[j]
    return NoisyHistogram(raw_counts=tuple(raw), offset=_offset(plan, len(participants)), participants=len(participants))


def default_threshold(n_teachers: int) -> int:
    """floor(2N/3), clipped into [2, N]."""
    return min(n_teachers, max(2, (2 * n_teachers) // 3))


def votes_from_labels(labels: Iterable[int], class_count: int) -> list[VoteVector]:
    return [VoteVector.one_hot(int(y), class_count) for y in labels]

