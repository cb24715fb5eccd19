"""Prime-tuple hash keys: generation, validation, cyclic level assignment, key files.

A hash key is an ordered tuple of d large primes, one prime per input
coordinate. The default key is the classic spatial-hash prime tuple
(1, 2654435761, 805459861); secret keys are drawn uniformly from the primes
in [10^7, 10^10]. A key set holds m keys that are mapped onto the resolution
levels of the hash grid in a cyclic fashion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError

DEFAULT_PRIMES = (1, 2654435761, 805459861)

PRIME_MIN = 10**7
PRIME_MAX = 10**10

# Deterministic Miller-Rabin witnesses, sufficient for every n < 3.317e24
# (covers the full unsigned 64-bit range).
_MR_WITNESSES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)

_GENERATION_RETRY_CAP = 10**6


def is_probable_prime(n: int) -> bool:
    """Deterministic primality test, correct for all 64-bit integers."""
    if n < 2:
        return False
    for p in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37):
        if n % p == 0:
            return n == p
    d = n - 1
    r = 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for a in _MR_WITNESSES:
        x = pow(a, d, n)
        if x == 1 or x == n - 1:
            continue
        for _ in range(r - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


@dataclass(frozen=True)
class PrimeKey:
    """An ordered tuple of d primes used to drive the spatial hash.

    The literal 1 is allowed as an element (the default key starts with it);
    every other element must be prime. Elements are pairwise distinct.
    """

    primes: tuple[int, ...]

    def __post_init__(self):
        if len(self.primes) not in (2, 3):
            raise ValueError(f"key must have 2 or 3 primes, got {len(self.primes)}")
        if len(set(self.primes)) != len(self.primes):
            raise ValueError(f"key elements must be distinct: {self.primes}")
        for p in self.primes:
            if not (0 < p < 2**64):
                raise ValueError(f"key element {p} out of 64-bit range")
            if p != 1 and not is_probable_prime(p):
                raise ValueError(f"key element {p} is not prime")

    @property
    def dim(self) -> int:
        return len(self.primes)

    def as_array(self) -> np.ndarray:
        return np.array(self.primes, dtype=np.uint64)


@dataclass(frozen=True)
class KeySet:
    """m prime keys plus the cyclic rule assigning them to grid levels."""

    keys: tuple[PrimeKey, ...]

    def __post_init__(self):
        if len(self.keys) < 1:
            raise ValueError("key set must contain at least one key")
        dims = {k.dim for k in self.keys}
        if len(dims) != 1:
            raise ValueError(f"all keys in a set must share dimensionality, got {dims}")

    @property
    def m(self) -> int:
        return len(self.keys)

    @property
    def dim(self) -> int:
        return self.keys[0].dim

    def all_primes(self) -> set[int]:
        return {p for k in self.keys for p in k.primes}


def default_key(d: int) -> PrimeKey:
    """The fixed default-key tuple; d=2 takes the first two elements."""
    if d not in (2, 3):
        raise ValueError(f"unsupported dimensionality {d}")
    return PrimeKey(DEFAULT_PRIMES[:d])


def default_key_set(d: int) -> KeySet:
    """Single-key set holding the default key (applies to every level)."""
    return KeySet((default_key(d),))


def generate_key(d: int, seed=None, *, rng: np.random.Generator | None = None,
                 exclude: set[int] | None = None) -> PrimeKey:
    """Draw d distinct primes uniformly from [10^7, 10^10].

    Deterministic for a given seed. `exclude` removes specific primes from
    the pool (used when building multi-key sets with globally distinct primes).
    """
    if d not in (2, 3):
        raise ValueError(f"unsupported dimensionality {d}")
    if rng is None:
        rng = np.random.default_rng(seed)
    taken: set[int] = set() if exclude is None else set(exclude)
    primes: list[int] = []
    for _ in range(_GENERATION_RETRY_CAP):
        candidate = int(rng.integers(PRIME_MIN, PRIME_MAX, endpoint=True))
        if candidate in taken or not is_probable_prime(candidate):
            continue
        primes.append(candidate)
        taken.add(candidate)
        if len(primes) == d:
            return PrimeKey(tuple(primes))
    raise RuntimeError("prime sampling did not terminate within the retry cap")


def generate_key_set(m: int, d: int, seed=None, levels: int = 16) -> KeySet:
    """Generate m keys (m*d globally distinct primes). Requires 1 <= m <= levels."""
    if not 1 <= m <= levels:
        raise ValueError(f"key count m={m} must be in [1, {levels}]")
    rng = np.random.default_rng(seed)
    taken: set[int] = set()
    keys = []
    for _ in range(m):
        key = generate_key(d, rng=rng, exclude=taken)
        taken.update(key.primes)
        keys.append(key)
    return KeySet(tuple(keys))


def assigned_key(key_set: KeySet, level: int) -> PrimeKey:
    """Key for a 1-based grid level: keys cycle with period m."""
    if level < 1:
        raise ValueError(f"level must be >= 1, got {level}")
    return key_set.keys[(level - 1) % key_set.m]


def level_prime_matrix(key_set: KeySet, levels: int) -> np.ndarray:
    """(levels, d) uint64 matrix of the prime assigned to each level and axis."""
    if key_set.m > levels:
        raise ValueError(f"key set has m={key_set.m} keys but only {levels} levels")
    return np.stack([assigned_key(key_set, l + 1).as_array() for l in range(levels)])


def save_key_set(key_set: KeySet, path, levels: int = 16) -> None:
    """Write the line-oriented ASCII key file.

    Line 1 is the header `d=<2|3> m=<int> L=<int>`; each following line holds
    the d decimal primes of one key. `#` starts a comment.
    """
    if key_set.m > levels:
        raise ValueError(f"cannot save m={key_set.m} keys with L={levels}")
    lines = [f"d={key_set.dim} m={key_set.m} L={levels}"]
    for key in key_set.keys:
        lines.append(" ".join(str(p) for p in key.primes))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def _strip_comment(line: str) -> str:
    return line.split("#", 1)[0].strip()


def load_key_set(path) -> KeySet:
    """Parse and validate a key file written by `save_key_set`.

    Rejects malformed headers, wrong entry counts, composite or out-of-range
    entries, and trailing garbage.
    """
    try:
        with open(path, "r", encoding="ascii") as fh:
            raw = fh.read()
    except UnicodeDecodeError as exc:
        raise DataError(f"key file {path} is not ASCII: {exc}") from None
    except OSError as exc:
        raise DataError(f"cannot read key file {path}: {exc}") from None

    lines = [_strip_comment(l) for l in raw.splitlines()]
    lines = [l for l in lines if l]
    if not lines:
        raise DataError(f"key file {path} is empty")

    header = lines[0].split()
    if len(header) != 3:
        raise DataError(f"bad key-file header: {lines[0]!r}")
    fields = {}
    for part in header:
        name, _, value = part.partition("=")
        if name not in ("d", "m", "L") or not value.lstrip("-").isdigit():
            raise DataError(f"bad key-file header field: {part!r}")
        fields[name] = int(value)
    if set(fields) != {"d", "m", "L"}:
        raise DataError(f"key-file header must define d, m and L: {lines[0]!r}")
    d, m, levels = fields["d"], fields["m"], fields["L"]
    if d not in (2, 3):
        raise DataError(f"key file declares unsupported d={d}")
    if not 1 <= m <= levels:
        raise DataError(f"key file declares m={m} outside [1, L={levels}]")
    if len(lines) - 1 != m:
        raise DataError(f"key file declares m={m} but holds {len(lines) - 1} key lines")

    keys = []
    for line in lines[1:]:
        parts = line.split()
        if len(parts) != d:
            raise DataError(f"key line {line!r} must hold {d} entries")
        entries = []
        for part in parts:
            if not part.isdigit():
                raise DataError(f"non-numeric key entry {part!r}")
            entries.append(int(part))
        for e in entries:
            if e == 1:
                continue
            if not is_probable_prime(e):
                raise DataError(f"key entry {e} is not prime")
            if not PRIME_MIN <= e <= PRIME_MAX:
                raise DataError(f"key entry {e} outside [{PRIME_MIN}, {PRIME_MAX}]")
        try:
            keys.append(PrimeKey(tuple(entries)))
        except ValueError as exc:
            raise DataError(str(exc)) from None
    try:
        return KeySet(tuple(keys))
    except ValueError as exc:
        raise DataError(str(exc)) from None
