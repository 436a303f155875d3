"""The static rights order and runtime evaluation of labels to key sets.

A label is either `bot` (public, the top of the order: everything is more
confidential than public) or a syntactic set of key references.  The static
comparison is purely syntactic: two different names are different rights
even if they denote the same key at runtime.  Runtime checks (channel
establishment, decryption) instead compare evaluated key sets.

A runtime key set (`KeySet`) is a sorted tuple of key seed ids; each seed
identifies one public/secret key pair.
"""

from __future__ import annotations

from .ast import Bot, BOT, KeyRef, KName, KPub, Rights, RightsSet

KeySet = tuple[int, ...]

EMPTY_KEYSET: KeySet = ()


def keyset(seeds) -> KeySet:
    return tuple(sorted(set(seeds)))


class EvalFault(Exception):
    """A configuration fault: a name is unbound or bound to the wrong kind
    of entry.  Distinct from the runtime error value ERR."""


def rights_leq(r1: Rights, r2: Rights) -> bool:
    """r1 is at least as confidential as r2.

    Holds when r2 is bot, or when both are sets and r1's references are a
    syntactic subset of r2's.  bot is below any proper set.
    """
    if isinstance(r2, Bot):
        return True
    if isinstance(r1, Bot):
        return False
    return set(r1.refs) <= set(r2.refs)


def rights_intersect(r1: Rights, r2: Rights) -> Rights:
    """Syntactic intersection; bot is the identity element."""
    if isinstance(r1, Bot):
        return r2
    if isinstance(r2, Bot):
        return r1
    keep = set(r2.refs)
    return RightsSet(tuple(k for k in r1.refs if k in keep))


def eval_rights(memory, r: Rights) -> KeySet | None:
    """Evaluate a label against a memory: bot maps to None, a reference set
    to the set of public keys it names.

    `pub(p)` needs a principal location p; a bare name may be either a key
    location or a principal location (shorthand for its public key).
    Unbound names raise EvalFault.
    """
    if isinstance(r, Bot):
        return None
    seeds = []
    for ref in r.refs:
        if isinstance(ref, KPub):
            prin = memory.lookup_prin(ref.name)
            if prin is None:
                raise EvalFault(f"pub({ref.name}): no principal {ref.name!r} in memory")
            seeds.append(prin.seed)
        else:
            seed = memory.lookup_key_seed(ref.name)
            if seed is not None:
                seeds.append(seed)
                continue
            prin = memory.lookup_prin(ref.name)
            if prin is None:
                raise EvalFault(f"right {ref.name!r} names no key or principal in memory")
            seeds.append(prin.seed)
    return keyset(seeds)


def keyset_high(ks: KeySet | None, rho: frozenset[int]) -> bool:
    """A runtime right is high when it is a key set entirely inside the
    reference rights.  bot is always low."""
    return ks is not None and set(ks) <= rho
