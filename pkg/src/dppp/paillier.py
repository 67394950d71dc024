"""(N, t)-threshold Paillier cryptosystem with a trusted dealer.

Keys are built from two safe primes p = 2p' + 1, q = 2q' + 1 with n = pq and
g = n + 1.  The decryption exponent d (d = 0 mod p'q', d = 1 mod n) is Shamir
shared over Z_{n p'q'}; party i publishes c^(2 N! s_i) and any t of those
recombine, via Lagrange coefficients scaled by N!, to c^(4 (N!)^2 d).

Integers on the wire are fixed-width big-endian: a ciphertext or partial
decryption is always 2 * key_bits / 8 bytes.
"""

from __future__ import annotations

import math
import random
import secrets
from dataclasses import dataclass, field
from functools import reduce
from typing import Iterable, Optional, Sequence

import gmpy2

from .errors import (
    DuplicateShare,
    InsufficientShares,
    KeyGenerationError,
    PlaintextRangeError,
)

MIN_KEY_BITS = 512
DEFAULT_KEY_BITS = 1024

_SIEVE_LIMIT = 2000
_SMALL_PRIMES = [p for p in range(3, _SIEVE_LIMIT) if all(p % d for d in range(2, math.isqrt(p) + 1))]


def _default_rng(rng: Optional[random.Random]) -> random.Random:
    return rng if rng is not None else secrets.SystemRandom()


def int_to_bytes(value: int, width: int) -> bytes:
    return int(value).to_bytes(width, "big")


def int_from_bytes(data: bytes) -> int:
    return int.from_bytes(data, "big")


@dataclass(frozen=True)
class ThresholdConfig:
    """t-of-N decryption structure; ``delta_factorial`` is N! exactly."""

    n_parties: int
    threshold: int
    delta_factorial: int = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.n_parties < 2:
            raise KeyGenerationError(f"need at least 2 parties, got N={self.n_parties}")
        if not 2 <= self.threshold <= self.n_parties:
            raise KeyGenerationError(
                f"threshold must satisfy 2 <= t <= N, got t={self.threshold}, N={self.n_parties}"
            )
        object.__setattr__(self, "delta_factorial", math.factorial(self.n_parties))


@dataclass(frozen=True)
class PublicKey:
    modulus: int
    bit_length: int
    modulus_squared: int = field(init=False, repr=False)
    generator: int = field(init=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "modulus_squared", self.modulus * self.modulus)
        object.__setattr__(self, "generator", self.modulus + 1)

    @property
    def ciphertext_bytes(self) -> int:
        """Serialized width of one ciphertext (or partial decryption)."""
        return 2 * self.bit_length // 8

    def to_bytes(self) -> bytes:
        return self.bit_length.to_bytes(2, "big") + int_to_bytes(self.modulus, self.bit_length // 8)

    @classmethod
    def from_bytes(cls, data: bytes) -> PublicKey:
        bits = int.from_bytes(data[:2], "big")
        if len(data) != 2 + bits // 8:
            raise ValueError(f"public key blob has {len(data)} bytes, expected {2 + bits // 8}")
        return cls(modulus=int_from_bytes(data[2:]), bit_length=bits)

    def to_dict(self) -> dict:
        return {"bit_length": self.bit_length, "modulus": hex(self.modulus)}

    @classmethod
    def from_dict(cls, obj: dict) -> PublicKey:
        return cls(modulus=int(obj["modulus"], 16), bit_length=int(obj["bit_length"]))


@dataclass(frozen=True)
class SecretKeyShare:
    """One party's share of the decryption exponent.

    ``modulus`` is the public n, kept here so a party can compute its partial
    decryption without a separate key handle.  The share itself never leaves
    the party; only :class:`PartialDecryption` values are sent.
    """

    index: int
    share: int = field(repr=False)
    modulus: int = field(repr=False)

    def to_dict(self) -> dict:
        return {"index": self.index, "share": hex(self.share), "modulus": hex(self.modulus)}

    @classmethod
    def from_dict(cls, obj: dict) -> SecretKeyShare:
        return cls(index=int(obj["index"]), share=int(obj["share"], 16), modulus=int(obj["modulus"], 16))


@dataclass(frozen=True)
class Ciphertext:
    value: int

    def to_bytes(self, pk: PublicKey) -> bytes:
        return int_to_bytes(self.value, pk.ciphertext_bytes)

    @classmethod
    def from_bytes(cls, data: bytes) -> Ciphertext:
        return cls(int_from_bytes(data))


@dataclass(frozen=True)
class PartialDecryption:
    """A party's decryption share c^(2 N! s_i) mod n^2.

    The byte encoding carries only the group element; the index travels as
    the sender identity of the message.
    """

    index: int
    value: int

    def to_bytes(self, pk: PublicKey) -> bytes:
        return int_to_bytes(self.value, pk.ciphertext_bytes)

    @classmethod
    def from_bytes(cls, data: bytes, index: int) -> PartialDecryption:
        return cls(index=index, value=int_from_bytes(data))


def _passes_sieve(q: int) -> bool:
    for s in _SMALL_PRIMES:
        r = q % s
        if r == 0 or (2 * r + 1) % s == 0:
            return False
    return True


def generate_safe_prime(bits: int, rng: random.Random) -> tuple[int, int]:
    """Return ``(p, p')`` with ``p = 2p' + 1`` both prime and p exactly ``bits`` wide.

    The top two bits of p are forced on, so the product of two such primes is
    exactly ``2 * bits`` wide.
    """
    if bits < 16:
        raise KeyGenerationError(f"safe prime of {bits} bits is too small")
    while True:
        q = rng.getrandbits(bits - 1) | (3 << (bits - 3)) | 1
        for _ in range(20000):
            if q.bit_length() != bits - 1:
                break
            if (
                _passes_sieve(q)
                and gmpy2.is_prime(q, 1)
                and gmpy2.is_prime(2 * q + 1, 1)
                and gmpy2.is_prime(q, 40)
                and gmpy2.is_prime(2 * q + 1, 40)
            ):
                return 2 * q + 1, q
            q += 2


def _eval_poly(coeffs: Sequence[int], x: int, mod: int) -> int:
    acc = 0
    for a in reversed(coeffs):
        acc = (acc * x + a) % mod
    return acc


def deal_keys(
    key_bits: int, config: ThresholdConfig, rng: Optional[random.Random] = None
) -> tuple[PublicKey, list[SecretKeyShare]]:
    """Generate a public key and N secret shares as a trusted dealer.

    Args:
        key_bits: bit length of the modulus n; at least 512 and a multiple of 16.
        config: the (N, t) threshold structure.
        rng: random source. Pass a seeded ``random.Random`` for reproducible
            test keys; the default is the OS CSPRNG.

    Returns:
        ``(pk, shares)`` with ``shares[i].index == i + 1``.
    """
    if key_bits < MIN_KEY_BITS:
        raise KeyGenerationError(f"key_bits must be >= {MIN_KEY_BITS}, got {key_bits}")
    if key_bits % 16:
        raise KeyGenerationError(f"key_bits must be a multiple of 16, got {key_bits}")
    rng = _default_rng(rng)
    half = key_bits // 2
    p, p1 = generate_safe_prime(half, rng)
    while True:
        q, q1 = generate_safe_prime(half, rng)
        if q != p:
            break
    n = p * q
    assert n.bit_length() == key_bits
    m = p1 * q1
    if math.gcd(config.delta_factorial, n) != 1:
        raise KeyGenerationError("N! shares a factor with n; use a larger key")

    # d = 0 mod m, d = 1 mod n
    d = m * pow(m, -1, n)
    nm = n * m
    coeffs = [d] + [rng.randrange(nm) for _ in range(config.threshold - 1)]
    shares = [
        SecretKeyShare(index=i, share=_eval_poly(coeffs, i, nm), modulus=n)
        for i in range(1, config.n_parties + 1)
    ]
    return PublicKey(modulus=n, bit_length=key_bits), shares


def _sample_unit(n: int, rng: random.Random) -> int:
    while True:
        r = rng.randrange(1, n)
        if math.gcd(r, n) == 1:
            return r


def encrypt(pk: PublicKey, m: int, rng: Optional[random.Random] = None) -> Ciphertext:
    """Encrypt ``0 <= m < n`` as g^m r^n mod n^2 with fresh r in Z*_n."""
    if not 0 <= m < pk.modulus:
        raise PlaintextRangeError(f"plaintext must lie in [0, n), got {m}")
    rng = _default_rng(rng)
    r = _sample_unit(pk.modulus, rng)
    n2 = pk.modulus_squared
    # g = n + 1, so g^m = 1 + m n (mod n^2)
    gm = (1 + m * pk.modulus) % n2
    return Ciphertext(int(gm * gmpy2.powmod(r, pk.modulus, n2) % n2))


def add(pk: PublicKey, c1: Ciphertext, c2: Ciphertext) -> Ciphertext:
    """Homomorphic addition: the product decrypts to (m1 + m2) mod n."""
    return Ciphertext(c1.value * c2.value % pk.modulus_squared)


def add_all(pk: PublicKey, ciphertexts: Iterable[Ciphertext]) -> Ciphertext:
    return reduce(lambda a, b: add(pk, a, b), ciphertexts)


def partial_decrypt(share: SecretKeyShare, config: ThresholdConfig, c: Ciphertext) -> PartialDecryption:
    n2 = share.modulus * share.modulus
    exponent = 2 * config.delta_factorial * share.share
    return PartialDecryption(index=share.index, value=int(gmpy2.powmod(c.value, exponent, n2)))


def lagrange_coefficient(index: int, indices: Sequence[int], delta: int) -> int:
    """Integer coefficient N! * prod_{j != i} j / (j - i), evaluated at zero."""
    num = delta
    den = 1
    for j in indices:
        if j != index:
            num *= j
            den *= j - index
    coeff, rem = divmod(num, den)
    assert rem == 0
    return coeff


def combine(pk: PublicKey, config: ThresholdConfig, partials: Sequence[PartialDecryption]) -> int:
    """Recover the plaintext from at least t partial decryptions.

    Raises:
        InsufficientShares: fewer than ``config.threshold`` partials.
        DuplicateShare: two partials with the same index.
    """
    indices = [p.index for p in partials]
    if len(set(indices)) != len(indices):
        raise DuplicateShare(f"duplicate partial decryption indices in {sorted(indices)}")
    if len(partials) < config.threshold:
        raise InsufficientShares(f"need {config.threshold} partial decryptions, got {len(partials)}")
    n = pk.modulus
    n2 = pk.modulus_squared
    delta = config.delta_factorial
    acc = gmpy2.mpz(1)
    for part in partials:
        lam = lagrange_coefficient(part.index, indices, delta)
        acc = acc * gmpy2.powmod(part.value, 2 * lam, n2) % n2
    # acc = (1 + n)^(4 delta^2 m) = 1 + 4 delta^2 m n  (mod n^2)
    u = int(acc)
    if (u - 1) % n:
        raise ValueError("partial decryptions do not combine to a valid plaintext")
    ell = (u - 1) // n
    return ell * pow(4 * delta * delta, -1, n) % n


def threshold_decrypt(
    pk: PublicKey,
    config: ThresholdConfig,
    shares: Sequence[SecretKeyShare],
    c: Ciphertext,
) -> int:
    """Convenience: partial-decrypt with each share and combine."""
    return combine(pk, config, [partial_decrypt(s, config, c) for s in shares])


def decode_signed(value: int, pk: PublicKey) -> int:
    """Map a residue mod n into the centered range (-n/2, n/2]."""
    return value - pk.modulus if value > pk.modulus // 2 else value
