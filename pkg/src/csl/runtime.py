"""Runtime values, device memories, freshness, and expression evaluation.

Evaluation is total on bound names: every runtime fault (type confusion,
bad index, arithmetic on non-integers, releasing an unshareable principal)
yields the error value ERR instead of getting stuck.  Only an unbound name
is a configuration fault (EvalFault) — it cannot happen in a checked
system.

Values carry a confidentiality tag (`hi`).  Untagged runs simply leave
every tag False; semantic equality (`value_eq`) ignores tags.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Optional, Union

from .ast import (
    ArrayLit, BinOp, EncE, Expr, Index, IntLit, PubOf, Release, RightsSet,
    SecType, Var,
)
from .rights import EvalFault, KeySet, eval_rights, keyset


# ---------------------------------------------------------------------------
# Values


@dataclass(frozen=True)
class VInt:
    value: int
    hi: bool = False


@dataclass(frozen=True)
class VPub:
    seed: int
    hi: bool = False


@dataclass(frozen=True)
class VSec:
    # produced only by attacker projections; honest code never stores one
    seed: int
    hi: bool = False


@dataclass(frozen=True)
class VPrin:
    """A principal: a key pair (identified by its seed) plus the public keys
    allowed to import it onto other devices."""

    seed: int
    lr: KeySet
    hi: bool = False

    @property
    def pub_seed(self) -> int:
        return self.seed


@dataclass(frozen=True)
class VCipher:
    inner: "Value"
    nonce: int
    lr: KeySet
    hi: bool = False


@dataclass(frozen=True)
class VArr:
    elems: tuple["Value", ...]
    hi: bool = False


@dataclass(frozen=True)
class VErr:
    hi: bool = False


Value = Union[VInt, VPub, VSec, VPrin, VCipher, VArr, VErr]

ERR = VErr()


def tag(v: Value, hi: bool) -> Value:
    if v.hi == hi:
        return v
    return replace(v, hi=hi)


@lru_cache(maxsize=65536)
def strip(v: Value) -> Value:
    """Tag-free copy, for semantic comparison and canonical output."""
    if isinstance(v, VCipher):
        return VCipher(strip(v.inner), v.nonce, v.lr)
    if isinstance(v, VArr):
        return VArr(tuple(strip(e) for e in v.elems))
    return replace(v, hi=False) if v.hi else v


def value_eq(a: Value, b: Value) -> bool:
    """Structural equality, including nonces and key sets; ERR equals ERR.
    Confidentiality tags are metadata and do not take part."""
    return strip(a) == strip(b)


def canon(v: Value) -> str:
    """Canonical text form used in traces and dumps."""
    if isinstance(v, VInt):
        return f"int:{v.value}"
    if isinstance(v, VPub):
        return f"pub:#{v.seed}"
    if isinstance(v, VSec):
        return f"sec:#{v.seed}"
    if isinstance(v, VPrin):
        return f"prin(#{v.seed},{canon_keyset(v.lr)})"
    if isinstance(v, VCipher):
        return f"enc({canon(v.inner)},n={v.nonce},{canon_keyset(v.lr)})"
    if isinstance(v, VArr):
        return "arr[" + ",".join(canon(e) for e in v.elems) + "]"
    return "ERR"


def canon_keyset(ks: KeySet | None) -> str:
    if ks is None:
        return "bot"
    return "{" + ",".join(f"#{s}" for s in ks) + "}"


# ---------------------------------------------------------------------------
# Freshness

ATTACKER_SEED_BASE = 1_000_000


def share_seed(share_id: int) -> int:
    """Seed of a preloaded key pair; a shared id names the same pair on
    every device."""
    return -(share_id + 1)


def attacker_seed(i: int) -> int:
    """Seed of the attacker's i-th generated key pair; disjoint from both
    honest fresh seeds (positive) and preloaded seeds (small negative)."""
    return -(ATTACKER_SEED_BASE + i)


@dataclass
class FreshSource:
    """Deterministic fresh-name supply.

    Nonces, memory locations and channel tokens come in two independent
    streams (low/high) so that runs mirrored on low steps allocate
    identical low names even when their high threads diverge.
    """

    key: int = 1
    nonce_lo: int = 0
    nonce_hi: int = 1
    att_nonce: int = 0
    loc_lo: int = 0
    loc_hi: int = 1
    chan_lo: int = 0
    chan_hi: int = 1

    def clone(self) -> "FreshSource":
        return FreshSource(self.key, self.nonce_lo, self.nonce_hi, self.att_nonce,
                           self.loc_lo, self.loc_hi, self.chan_lo, self.chan_hi)

    def fresh_key(self) -> int:
        s = self.key
        self.key += 1
        return s

    def fresh_nonce(self, hi: bool = False) -> int:
        if hi:
            n = self.nonce_hi
            self.nonce_hi += 2
        else:
            n = self.nonce_lo
            self.nonce_lo += 2
        return n

    def fresh_att_nonce(self) -> int:
        self.att_nonce -= 1
        return self.att_nonce

    def fresh_loc(self, base: str, hi: bool = False) -> str:
        if hi:
            n = self.loc_hi
            self.loc_hi += 2
        else:
            n = self.loc_lo
            self.loc_lo += 2
        return f"{base}~{n}"

    def fresh_chan(self, hi: bool = False) -> str:
        if hi:
            n = self.chan_hi
            self.chan_hi += 2
        else:
            n = self.chan_lo
            self.chan_lo += 2
        return f"#ch{n}"


# ---------------------------------------------------------------------------
# Memory

KIND_VAR = "var"
KIND_PRIN = "prin"
KIND_KEY = "key"


@dataclass
class Loc:
    kind: str
    value: Value
    hi: bool = False  # location annotation; prin/key locations stay low
    ty: Optional[SecType] = None  # declared type of var locations


@dataclass
class Memory:
    """One device's store: variables, principals and key names live in one
    ordered mapping with disjoint kinds."""

    locs: dict[str, Loc] = field(default_factory=dict)

    def clone(self) -> "Memory":
        return Memory({k: Loc(l.kind, l.value, l.hi, l.ty) for k, l in self.locs.items()})

    # kind-checked accessors -------------------------------------------------

    def lookup_var(self, name: str) -> Optional[Loc]:
        loc = self.locs.get(name)
        return loc if loc is not None and loc.kind == KIND_VAR else None

    def lookup_prin(self, name: str) -> Optional[VPrin]:
        loc = self.locs.get(name)
        if loc is not None and loc.kind == KIND_PRIN:
            return loc.value  # type: ignore[return-value]
        return None

    def lookup_key_seed(self, name: str) -> Optional[int]:
        loc = self.locs.get(name)
        if loc is not None and loc.kind == KIND_KEY:
            return loc.value.seed  # type: ignore[union-attr]
        return None

    def bind(self, name: str, loc: Loc) -> None:
        if name in self.locs:
            raise EvalFault(f"location {name!r} already bound")
        self.locs[name] = loc

    def var_names(self):
        return [n for n, l in self.locs.items() if l.kind == KIND_VAR]

    def dump(self) -> str:
        lines = []
        for name in sorted(self.locs):
            loc = self.locs[name]
            tagc = "H" if loc.hi else "L"
            lines.append(f"  {name} [{loc.kind}/{tagc}] = {canon(strip(loc.value))}")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# Expression evaluation (big step, total via ERR)


def eval_expr(mem: Memory, e: Expr, fresh: FreshSource, ns_hi: bool = False) -> Value:
    """Evaluate e in mem.  `ns_hi` selects the nonce namespace used for
    encryption (the tag of the evaluating thread)."""
    if isinstance(e, IntLit):
        return VInt(e.value)
    if isinstance(e, Var):
        loc = mem.lookup_var(e.name)
        if loc is None:
            raise EvalFault(f"unbound variable {e.name!r}")
        return tag(loc.value, loc.value.hi or loc.hi)
    if isinstance(e, PubOf):
        prin = mem.lookup_prin(e.prin)
        if prin is None:
            raise EvalFault(f"pub({e.prin}): no such principal")
        return VPub(prin.seed)
    if isinstance(e, Release):
        prin = mem.lookup_prin(e.prin)
        if prin is None:
            raise EvalFault(f"release({e.prin}): no such principal")
        if not prin.lr:
            return ERR
        return VCipher(strip(prin), fresh.fresh_nonce(ns_hi), prin.lr)
    if isinstance(e, EncE):
        v = eval_expr(mem, e.body, fresh, ns_hi)
        lr = eval_rights(mem, e.rights)
        assert lr is not None
        return VCipher(v, fresh.fresh_nonce(ns_hi), lr)
    if isinstance(e, BinOp):
        v1 = eval_expr(mem, e.left, fresh, ns_hi)
        v2 = eval_expr(mem, e.right, fresh, ns_hi)
        hi = v1.hi or v2.hi
        if not isinstance(v1, VInt) or not isinstance(v2, VInt):
            return VErr(hi)
        if e.op == "+":
            return VInt(v1.value + v2.value, hi)
        if e.op == "-":
            return VInt(v1.value - v2.value, hi)
        return VInt(v1.value * v2.value, hi)
    if isinstance(e, ArrayLit):
        vs = [eval_expr(mem, x, fresh, ns_hi) for x in e.elems]
        return VArr(tuple(vs), any(v.hi for v in vs))
    if isinstance(e, Index):
        loc = mem.lookup_var(e.array)
        if loc is None:
            raise EvalFault(f"unbound variable {e.array!r}")
        arr = tag(loc.value, loc.value.hi or loc.hi)
        idx = eval_expr(mem, e.index, fresh, ns_hi)
        hi = arr.hi or idx.hi
        if not isinstance(arr, VArr) or not isinstance(idx, VInt):
            return VErr(hi)
        if not (0 <= idx.value < len(arr.elems)):
            return VErr(hi)
        el = arr.elems[idx.value]
        return tag(el, el.hi or hi)
    raise TypeError(f"unknown expression {e!r}")  # pragma: no cover
