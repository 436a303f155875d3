"""The per-device security type checker.

The checker is syntax-directed: one rule per construct, premises checked
in the order the rules state them, first failing premise reported.  Rule
tags (`new_T`, `output_T`, ...) name the rule that failed.

Labels are compared after resolving references against the context: a bare
name appearing in a rights set denotes a key name if it is one, and the
public key of a principal otherwise.  The comparison itself stays purely
name-based — no aliasing through memory.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Union

from .ast import (
    ArrayLit, ArrayT, AcceptPub, AcceptSec, Assign, AssignArr, Bang, BinOp,
    Bot, BOT, ChanType, CipherT, Command, ConnectPub, ConnectSec, Decrypt,
    DeviceProgram, EncE, Expr, If, Index, Input, IntLit, IntT, KName, KPub,
    LetDeref, LoadPrincipal, LoadPubKey, NewPrin, NewVar, Output, Par, Pos,
    PrivKeyT, PubKeyT, PubOf, PureType, Register, Release, Rights, RightsSet,
    SecType, Skip, Sync, Var, NOPOS, print_puretype,
)

# Canonical label: None is bot; otherwise a set of ('P'|'K', name) pairs.
CanonRef = tuple[str, str]
Canon = Optional[frozenset]


@dataclass(frozen=True)
class Diagnostic:
    rule: str
    pos: Pos
    message: str
    source: str = ""

    def __str__(self) -> str:
        return f"{self.source or '<input>'}:{self.pos[0]}:{self.pos[1]}: [{self.rule}] {self.message}"


class TypeError_(Exception):
    def __init__(self, diag: Diagnostic):
        self.diag = diag
        super().__init__(str(diag))


@dataclass
class TypeCtx:
    pc: Canon = None  # None is bot
    prins: frozenset[str] = frozenset()
    keys: frozenset[str] = frozenset()
    chans: dict[str, ChanType] = field(default_factory=dict)
    vars: dict[str, SecType] = field(default_factory=dict)
    source: str = ""

    def with_pc(self, pc: Canon) -> "TypeCtx":
        return TypeCtx(pc, self.prins, self.keys, dict(self.chans), dict(self.vars), self.source)

    def plus_prin(self, p: str) -> "TypeCtx":
        return TypeCtx(self.pc, self.prins | {p}, self.keys, dict(self.chans),
                       dict(self.vars), self.source)

    def plus_key(self, k: str) -> "TypeCtx":
        return TypeCtx(self.pc, self.prins, self.keys | {k}, dict(self.chans),
                       dict(self.vars), self.source)

    def plus_chan(self, c: str, ty: ChanType) -> "TypeCtx":
        nc = dict(self.chans)
        nc[c] = ty
        return TypeCtx(self.pc, self.prins, self.keys, nc, dict(self.vars), self.source)

    def plus_var(self, x: str, ty: SecType) -> "TypeCtx":
        nv = dict(self.vars)
        nv[x] = ty
        return TypeCtx(self.pc, self.prins, self.keys, dict(self.chans), nv, self.source)


def canon_print(c: Canon) -> str:
    if c is None:
        return "bot"
    items = sorted(f"pub({n})" if k == "P" else n for k, n in c)
    return "{" + ", ".join(items) + "}"


def canon_rights(ctx: TypeCtx, r: Rights, rule: str, pos: Pos) -> Canon:
    """Resolve a label against the context (rights_T / public_T).  A pub(p)
    needs p among the principals; a key name must be a key; a bare name may
    be either."""
    if isinstance(r, Bot):
        return None
    out = set()
    for ref in r.refs:
        if isinstance(ref, KPub):
            if ref.name not in ctx.prins:
                raise TypeError_(Diagnostic(
                    rule, pos, f"pub({ref.name}) does not name a known principal", ctx.source))
            out.add(("P", ref.name))
        elif ref.name in ctx.keys:
            out.add(("K", ref.name))
        elif ref.name in ctx.prins:
            out.add(("P", ref.name))
        else:
            raise TypeError_(Diagnostic(
                rule, pos, f"right {ref.name!r} names no key or principal in scope", ctx.source))
    return frozenset(out)


def leq(c1: Canon, c2: Canon) -> bool:
    """c1 at least as confidential as c2 on canonical labels."""
    if c2 is None:
        return True
    if c1 is None:
        return False
    return c1 <= c2


def inter(c1: Canon, c2: Canon) -> Canon:
    if c1 is None:
        return c2
    if c2 is None:
        return c1
    return c1 & c2


def pure_eq(a: PureType, b: PureType) -> bool:
    return a == b


# ---------------------------------------------------------------------------
# Expressions: Gamma_P; Gamma_K; Gamma |- e : S_R


def typecheck_expr(ctx: TypeCtx, e: Expr) -> tuple[PureType, Canon]:
    if isinstance(e, IntLit):  # int_T
        return IntT(), None
    if isinstance(e, Var):  # var_T
        ty = ctx.vars.get(e.name)
        if ty is None:
            raise TypeError_(Diagnostic("var_T", e.pos, f"unbound variable {e.name!r}", ctx.source))
        return ty.base, canon_rights(ctx, ty.label, "var_T", e.pos)
    if isinstance(e, PubOf):  # pubKey_T
        if e.prin not in ctx.prins:
            raise TypeError_(Diagnostic("pubKey_T", e.pos,
                                        f"{e.prin!r} is not a principal in scope", ctx.source))
        return PubKeyT(), None
    if isinstance(e, Release):  # release_T
        if e.prin not in ctx.prins:
            raise TypeError_(Diagnostic("release_T", e.pos,
                                        f"{e.prin!r} is not a principal in scope", ctx.source))
        return PrivKeyT(), None
    if isinstance(e, EncE):  # enc_T
        rs = canon_rights(ctx, e.rights, "enc_T", e.pos)
        base, r = typecheck_expr(ctx, e.body)
        if not leq(rs, r):
            raise TypeError_(Diagnostic(
                "enc_T", e.pos,
                f"encryption keys {canon_print(rs)} are not at least as confidential "
                f"as the payload label {canon_print(r)}", ctx.source))
        return CipherT(base), None
    if isinstance(e, BinOp):  # Sum_T
        b1, r1 = typecheck_expr(ctx, e.left)
        b2, r2 = typecheck_expr(ctx, e.right)
        if not isinstance(b1, IntT) or not isinstance(b2, IntT):
            raise TypeError_(Diagnostic(
                "Sum_T", e.pos, f"arithmetic needs Int operands, found "
                f"{print_puretype(b1)} and {print_puretype(b2)}", ctx.source))
        return IntT(), inter(r1, r2)
    if isinstance(e, ArrayLit):  # array_T
        first_b, first_r = typecheck_expr(ctx, e.elems[0])
        for el in e.elems[1:]:
            b, r = typecheck_expr(ctx, el)
            if not pure_eq(b, first_b) or r != first_r:
                raise TypeError_(Diagnostic(
                    "array_T", e.pos, "array elements must share one type and label",
                    ctx.source))
        return ArrayT(first_b), first_r
    if isinstance(e, Index):  # element_T
        ty = ctx.vars.get(e.array)
        if ty is None or not isinstance(ty.base, ArrayT):
            raise TypeError_(Diagnostic(
                "element_T", e.pos, f"{e.array!r} is not an array variable", ctx.source))
        r1 = canon_rights(ctx, ty.label, "element_T", e.pos)
        bi, r2 = typecheck_expr(ctx, e.index)
        if not isinstance(bi, IntT):
            raise TypeError_(Diagnostic("element_T", e.pos, "array index must be Int", ctx.source))
        return ty.base.elem, inter(r1, r2)
    raise TypeError(f"unknown expression {e!r}")  # pragma: no cover


# ---------------------------------------------------------------------------
# Commands: pc; Gamma_P; Gamma_K; Gamma_C; Gamma |- C


def typecheck_command(ctx: TypeCtx, c: Command) -> list[Diagnostic]:
    """All diagnostics for C (empty list means the command typechecks).
    Within one construct, the first failing premise stops that construct;
    parallel branches are checked independently."""
    try:
        _check(ctx, c)
        return []
    except TypeError_ as err:
        return [err.diag]


def _fail(rule: str, pos: Pos, msg: str, ctx: TypeCtx) -> None:
    raise TypeError_(Diagnostic(rule, pos, msg, ctx.source))


def _expr(ctx: TypeCtx, e: Expr) -> tuple[PureType, Canon]:
    return typecheck_expr(ctx, e)


def _check(ctx: TypeCtx, c: Command) -> None:
    if isinstance(c, Skip):  # skip_T
        return
    if isinstance(c, Par):  # para_T
        _check(ctx, c.left)
        _check(ctx, c.right)
        return
    if isinstance(c, Bang):  # bang_T
        _check(ctx, c.body)
        return
    if isinstance(c, NewPrin):  # newPrin_T
        canon_rights(ctx, c.rights, "newPrin_T", c.pos)
        if ctx.pc is not None:
            _fail("newPrin_T", c.pos,
                  f"new principals need a public context, pc = {canon_print(ctx.pc)}", ctx)
        _check(ctx.plus_prin(c.name), c.cont)
        return
    if isinstance(c, NewVar):  # new_T
        r1 = canon_rights(ctx, c.ty.label, "new_T", c.pos)
        base2, r2 = _expr(ctx, c.init)
        if not pure_eq(c.ty.base, base2):
            _fail("new_T", c.pos,
                  f"declared {print_puretype(c.ty.base)} but initialiser has "
                  f"{print_puretype(base2)}", ctx)
        bound = inter(ctx.pc, r2)
        if not leq(r1, bound):
            _fail("new_T", c.pos,
                  f"label {canon_print(r1)} is not at least as confidential as "
                  f"pc n label = {canon_print(bound)}", ctx)
        if r1 is not None and not any(k == "P" for k, _ in r1):
            _fail("new_T", c.pos,
                  "a restricted variable needs one of this device's principals "
                  "among its rights", ctx)
        _check(ctx.plus_var(c.name, c.ty), c.cont)
        return
    if isinstance(c, Assign):  # assign_T
        ty = ctx.vars.get(c.name)
        if ty is None:
            _fail("assign_T", c.pos, f"unbound variable {c.name!r}", ctx)
        r1 = canon_rights(ctx, ty.label, "assign_T", c.pos)
        base2, r2 = _expr(ctx, c.value)
        if not pure_eq(ty.base, base2):
            _fail("assign_T", c.pos,
                  f"{c.name} holds {print_puretype(ty.base)} but the value has "
                  f"{print_puretype(base2)}", ctx)
        bound = inter(ctx.pc, r2)
        if not leq(r1, bound):
            _fail("assign_T", c.pos,
                  f"label {canon_print(r1)} is not at least as confidential as "
                  f"pc n label = {canon_print(bound)}", ctx)
        _check(ctx, c.cont)
        return
    if isinstance(c, AssignArr):  # assign_array_T
        bi, r1 = _expr(ctx, c.index)
        if not isinstance(bi, IntT):
            _fail("assign_array_T", c.pos, "array index must be Int", ctx)
        base2, r2 = _expr(ctx, c.value)
        ty = ctx.vars.get(c.name)
        if ty is None or not isinstance(ty.base, ArrayT):
            _fail("assign_array_T", c.pos, f"{c.name!r} is not an array variable", ctx)
        if not pure_eq(ty.base.elem, base2):
            _fail("assign_array_T", c.pos,
                  f"element type {print_puretype(ty.base.elem)} does not match "
                  f"{print_puretype(base2)}", ctx)
        r3 = canon_rights(ctx, ty.label, "assign_array_T", c.pos)
        bound = inter(ctx.pc, inter(r1, r2))
        if not leq(r3, bound):
            _fail("assign_array_T", c.pos,
                  f"label {canon_print(r3)} is not at least as confidential as "
                  f"pc n labels = {canon_print(bound)}", ctx)
        _check(ctx, c.cont)
        return
    if isinstance(c, LetDeref):  # deref_T
        if ctx.pc is not None:
            _fail("deref_T", c.pos,
                  f"key binding needs a public context, pc = {canon_print(ctx.pc)}", ctx)
        base, r = _expr(ctx, c.source)
        if not isinstance(base, PubKeyT) or r is not None:
            _fail("deref_T", c.pos, "deref needs an unrestricted public key", ctx)
        _check(ctx.plus_key(c.key), c.cont)
        return
    if isinstance(c, If):  # if_T
        b1, r1 = _expr(ctx, c.left)
        b2, r2 = _expr(ctx, c.right)
        if not pure_eq(b1, b2):
            _fail("if_T", c.pos,
                  f"comparison between {print_puretype(b1)} and {print_puretype(b2)}", ctx)
        inner = ctx.with_pc(inter(ctx.pc, inter(r1, r2)))
        _check(inner, c.then_branch)
        _check(inner, c.else_branch)
        return
    if isinstance(c, Decrypt):  # dec_T
        rs1 = canon_rights(ctx, c.ty.label, "dec_T", c.pos)
        prin_ref = ("P", c.prin)
        if rs1 is None or prin_ref not in rs1:
            _fail("dec_T", c.pos,
                  f"pub({c.prin}) must occur in the annotation {canon_print(rs1)}", ctx)
        if c.prin not in ctx.prins:
            _fail("dec_T", c.pos, f"{c.prin!r} is not a principal in scope", ctx)
        base, r2 = _expr(ctx, c.value)
        if not isinstance(base, CipherT) or not pure_eq(base.inner, c.ty.base):
            _fail("dec_T", c.pos,
                  f"decrypt needs Cipher({print_puretype(c.ty.base)}), found "
                  f"{print_puretype(base)}", ctx)
        if not leq(rs1, inter(r2, ctx.pc)):
            _fail("dec_T", c.pos,
                  f"annotation {canon_print(rs1)} is not at least as confidential as "
                  f"cipher label n pc = {canon_print(inter(r2, ctx.pc))}", ctx)
        inner = ctx.with_pc(inter(ctx.pc, r2))
        _check(inner.plus_var(c.name, c.ty), c.then_branch)
        _check(inner, c.else_branch)
        return
    if isinstance(c, (ConnectPub, AcceptPub)):  # connect_1_T / accept_1_T
        rule = "connect_1_T" if isinstance(c, ConnectPub) else "accept_1_T"
        if ctx.pc is not None:
            _fail(rule, c.pos,
                  f"public channels need a public context, pc = {canon_print(ctx.pc)}", ctx)
        if not isinstance(c.ty.carried.label, Bot) or not isinstance(c.ty.exist, Bot):
            _fail(rule, c.pos, "public channels carry only public data", ctx)
        _check(ctx.plus_chan(c.chan, c.ty), c.cont)
        return
    if isinstance(c, (ConnectSec, AcceptSec)):  # connect_2_T / accept_2_T
        rule = "connect_2_T" if isinstance(c, ConnectSec) else "accept_2_T"
        r1 = canon_rights(ctx, c.ty.carried.label, rule, c.pos)
        r2 = canon_rights(ctx, c.ty.exist, rule, c.pos)
        if c.prin not in ctx.prins:
            _fail(rule, c.pos, f"{c.prin!r} is not a principal in scope", ctx)
        if c.key not in ctx.keys:
            _fail(rule, c.pos, f"{c.key!r} is not a key name in scope", ctx)
        ends = frozenset({("P", c.prin), ("K", c.key)})
        if not leq(ends, r1):
            _fail(rule, c.pos,
                  f"both endpoints {canon_print(ends)} must be allowed by the "
                  f"carried label {canon_print(r1)}", ctx)
        if not leq(r1, r2):
            _fail(rule, c.pos,
                  f"carried label {canon_print(r1)} must be at least as confidential "
                  f"as the existence label {canon_print(r2)}", ctx)
        if not leq(r2, ctx.pc):
            _fail(rule, c.pos,
                  f"existence label {canon_print(r2)} must be at least as confidential "
                  f"as pc = {canon_print(ctx.pc)}", ctx)
        _check(ctx.with_pc(r2).plus_chan(c.chan, c.ty), c.cont)
        return
    if isinstance(c, Output):  # output_T
        base3, r3 = _expr(ctx, c.value)
        chan = ctx.chans.get(c.chan)
        if chan is None:
            _fail("output_T", c.pos, f"channel {c.chan!r} is not established", ctx)
        if not pure_eq(chan.carried.base, base3):
            _fail("output_T", c.pos,
                  f"channel carries {print_puretype(chan.carried.base)}, value has "
                  f"{print_puretype(base3)}", ctx)
        r1 = canon_rights(ctx, chan.carried.label, "output_T", c.pos)
        r2 = canon_rights(ctx, chan.exist, "output_T", c.pos)
        if ctx.pc != r2:
            _fail("output_T", c.pos,
                  f"pc = {canon_print(ctx.pc)} must equal the channel existence label "
                  f"{canon_print(r2)}", ctx)
        if not leq(r1, r3):
            _fail("output_T", c.pos,
                  f"channel label {canon_print(r1)} is not at least as confidential as "
                  f"the value label {canon_print(r3)}", ctx)
        _check(ctx, c.cont)
        return
    if isinstance(c, Input):  # input_T
        chan = ctx.chans.get(c.chan)
        if chan is None:
            _fail("input_T", c.pos, f"channel {c.chan!r} is not established", ctx)
        r2 = canon_rights(ctx, chan.exist, "input_T", c.pos)
        if r2 != ctx.pc:
            _fail("input_T", c.pos,
                  f"pc = {canon_print(ctx.pc)} must equal the channel existence label "
                  f"{canon_print(r2)}", ctx)
        _check(ctx.plus_var(c.name, chan.carried), c.cont)
        return
    if isinstance(c, Register):  # register_T
        if c.prin not in ctx.prins:
            _fail("register_T", c.pos, f"{c.prin!r} is not a principal in scope", ctx)
        base, r = _expr(ctx, c.value)
        if not isinstance(base, PrivKeyT) or r is not None:
            _fail("register_T", c.pos, "register needs an unrestricted encapsulated "
                  "principal", ctx)
        if ctx.pc is not None:
            _fail("register_T", c.pos,
                  f"register needs a public context, pc = {canon_print(ctx.pc)}", ctx)
        _check(ctx.plus_prin(c.name), c.then_branch)
        _check(ctx, c.else_branch)
        return
    if isinstance(c, Sync):  # sync_T
        _check(ctx, subst_trailing_skip(c.body, c.cont))
        return
    raise TypeError(f"unknown command {c!r}")  # pragma: no cover


def subst_trailing_skip(g: Command, cont: Command) -> Command:
    """G{C/skip}: the continuation replaces every trailing skip leaf of the
    guarded body, on every branch."""
    if isinstance(g, Skip):
        return cont
    if isinstance(g, (NewVar, Assign, AssignArr)):
        return replace(g, cont=subst_trailing_skip(g.cont, cont))
    if isinstance(g, Par):
        return Par(subst_trailing_skip(g.left, cont), subst_trailing_skip(g.right, cont), g.pos)
    if isinstance(g, (If, Decrypt, Register)):
        return replace(g,
                       then_branch=subst_trailing_skip(g.then_branch, cont),
                       else_branch=subst_trailing_skip(g.else_branch, cont))
    # other forms are excluded from sync bodies by the parser
    return g


# ---------------------------------------------------------------------------
# Whole devices


def initial_ctx(prog: DeviceProgram) -> TypeCtx:
    prins = frozenset(d.name for d in prog.preamble if isinstance(d, LoadPrincipal))
    keys = frozenset(d.name for d in prog.preamble if isinstance(d, LoadPubKey))
    return TypeCtx(None, prins, keys, {}, {}, prog.source)


def typecheck_device(prog: DeviceProgram) -> list[Diagnostic]:
    """Typecheck a whole device: preamble loads feed the principal and key
    contexts, the body is checked with a public pc."""
    return typecheck_command(initial_ctx(prog), prog.body)
