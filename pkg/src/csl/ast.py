"""AST for device programs: rights, types, expressions, commands.

All nodes are frozen dataclasses, so they hash and compare structurally and
can be shared freely between threads.  `pos` fields are (line, col) pairs
pointing into the source file; nodes built at runtime carry pos (0, 0).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Union

Pos = tuple[int, int]
NOPOS: Pos = (0, 0)


# ---------------------------------------------------------------------------
# Rights


@dataclass(frozen=True)
class KName:
    """A key reference by name (a public-key name, or a bare principal name)."""

    name: str


@dataclass(frozen=True)
class KPub:
    """A key reference written pub(p) for a principal name p."""

    name: str


KeyRef = Union[KName, KPub]


@dataclass(frozen=True)
class Bot:
    """The public label (no restriction)."""


@dataclass(frozen=True)
class RightsSet:
    """A syntactic set of key references.  May be empty; never contains
    duplicates (checked by the parser)."""

    refs: tuple[KeyRef, ...]


Rights = Union[Bot, RightsSet]

BOT = Bot()


def rights_refs(r: Rights) -> tuple[KeyRef, ...]:
    return r.refs if isinstance(r, RightsSet) else ()


# ---------------------------------------------------------------------------
# Types


@dataclass(frozen=True)
class IntT:
    pass


@dataclass(frozen=True)
class PubKeyT:
    pass


@dataclass(frozen=True)
class PrivKeyT:
    pass


@dataclass(frozen=True)
class CipherT:
    inner: "PureType"


@dataclass(frozen=True)
class ArrayT:
    elem: "PureType"


PureType = Union[IntT, PubKeyT, PrivKeyT, CipherT, ArrayT]


@dataclass(frozen=True)
class SecType:
    base: PureType
    label: Rights


@dataclass(frozen=True)
class ChanType:
    carried: SecType
    exist: Rights


# ---------------------------------------------------------------------------
# Expressions


@dataclass(frozen=True)
class Var:
    name: str
    pos: Pos = NOPOS


@dataclass(frozen=True)
class IntLit:
    value: int
    pos: Pos = NOPOS


@dataclass(frozen=True)
class PubOf:
    prin: str
    pos: Pos = NOPOS


@dataclass(frozen=True)
class Release:
    prin: str
    pos: Pos = NOPOS


@dataclass(frozen=True)
class EncE:
    body: "Expr"
    rights: RightsSet  # never Bot
    pos: Pos = NOPOS


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - *
    left: "Expr"
    right: "Expr"
    pos: Pos = NOPOS


@dataclass(frozen=True)
class ArrayLit:
    elems: tuple["Expr", ...]  # non-empty
    pos: Pos = NOPOS


@dataclass(frozen=True)
class Index:
    array: str
    index: "Expr"
    pos: Pos = NOPOS


Expr = Union[Var, IntLit, PubOf, Release, EncE, BinOp, ArrayLit, Index]


# ---------------------------------------------------------------------------
# Commands


@dataclass(frozen=True)
class Skip:
    pos: Pos = NOPOS


@dataclass(frozen=True)
class NewVar:
    name: str
    ty: SecType
    init: Expr
    cont: "Command"
    pos: Pos = NOPOS


@dataclass(frozen=True)
class Assign:
    name: str
    value: Expr
    cont: "Command"
    pos: Pos = NOPOS


@dataclass(frozen=True)
class AssignArr:
    name: str
    index: Expr
    value: Expr
    cont: "Command"
    pos: Pos = NOPOS


@dataclass(frozen=True)
class LetDeref:
    # binds a key name from an expression of public-key type
    key: str
    source: Expr
    cont: "Command"
    pos: Pos = NOPOS


@dataclass(frozen=True)
class Par:
    left: "Command"
    right: "Command"
    pos: Pos = NOPOS


@dataclass(frozen=True)
class Bang:
    body: "Command"
    pos: Pos = NOPOS


@dataclass(frozen=True)
class ConnectPub:
    chan: str
    ty: ChanType
    cont: "Command"
    pos: Pos = NOPOS


@dataclass(frozen=True)
class AcceptPub:
    chan: str
    ty: ChanType
    cont: "Command"
    pos: Pos = NOPOS


@dataclass(frozen=True)
class ConnectSec:
    chan: str
    ty: ChanType
    key: str  # expected peer public-key name
    prin: str  # own principal name
    cont: "Command"
    pos: Pos = NOPOS


@dataclass(frozen=True)
class AcceptSec:
    chan: str
    ty: ChanType
    key: str
    prin: str
    cont: "Command"
    pos: Pos = NOPOS


@dataclass(frozen=True)
class Output:
    value: Expr
    chan: str
    cont: "Command"
    pos: Pos = NOPOS


@dataclass(frozen=True)
class Input:
    chan: str
    name: str
    cont: "Command"
    pos: Pos = NOPOS


@dataclass(frozen=True)
class Sync:
    body: "Command"  # restricted to the guarded sub-grammar
    cont: "Command"
    pos: Pos = NOPOS


@dataclass(frozen=True)
class NewPrin:
    name: str
    rights: RightsSet  # never Bot
    cont: "Command"
    pos: Pos = NOPOS


@dataclass(frozen=True)
class Decrypt:
    value: Expr
    prin: str
    name: str
    ty: SecType  # label is always a RightsSet
    then_branch: "Command"
    else_branch: "Command"
    pos: Pos = NOPOS


@dataclass(frozen=True)
class Register:
    name: str  # new principal name bound in then-branch
    value: Expr
    prin: str  # own principal used to unwrap
    then_branch: "Command"
    else_branch: "Command"
    pos: Pos = NOPOS


@dataclass(frozen=True)
class If:
    left: Expr
    right: Expr
    then_branch: "Command"
    else_branch: "Command"
    pos: Pos = NOPOS


Command = Union[
    Skip, NewVar, Assign, AssignArr, LetDeref, Par, Bang,
    ConnectPub, AcceptPub, ConnectSec, AcceptSec, Output, Input,
    Sync, NewPrin, Decrypt, Register, If,
]


@dataclass(frozen=True)
class LoadPrincipal:
    name: str
    share_id: int
    pos: Pos = NOPOS


@dataclass(frozen=True)
class LoadPubKey:
    name: str
    share_id: int
    pos: Pos = NOPOS


Load = Union[LoadPrincipal, LoadPubKey]


@dataclass(frozen=True)
class DeviceProgram:
    preamble: tuple[Load, ...]
    body: Command
    source: str = ""  # file name, for diagnostics


# ---------------------------------------------------------------------------
# Pretty printer.  parse(print(ast)) == ast for parser-produced ASTs.


def print_keyref(r: KeyRef) -> str:
    return r.name if isinstance(r, KName) else f"pub({r.name})"


def print_rights(r: Rights) -> str:
    if isinstance(r, Bot):
        return "bot"
    return "{" + ", ".join(print_keyref(k) for k in r.refs) + "}"


def print_puretype(t: PureType) -> str:
    if isinstance(t, IntT):
        return "Int"
    if isinstance(t, PubKeyT):
        return "PubKey"
    if isinstance(t, PrivKeyT):
        return "PrivKey"
    if isinstance(t, CipherT):
        return f"Cipher({print_puretype(t.inner)})"
    return f"Array({print_puretype(t.elem)})"


def print_sectype(t: SecType) -> str:
    lab = print_rights(t.label)
    sep = " " if lab == "bot" else ""
    return f"{print_puretype(t.base)}{sep}{lab}"


def print_chantype(t: ChanType) -> str:
    ex = print_rights(t.exist)
    sep = " " if ex == "bot" else ""
    return f"Chan({print_sectype(t.carried)}){sep}{ex}"


def print_expr(e: Expr) -> str:
    if isinstance(e, Var):
        return e.name
    if isinstance(e, IntLit):
        return str(e.value)
    if isinstance(e, PubOf):
        return f"pub({e.prin})"
    if isinstance(e, Release):
        return f"release({e.prin})"
    if isinstance(e, EncE):
        return f"enc({print_expr(e.body)}, {print_rights(e.rights)})"
    if isinstance(e, BinOp):
        lhs = print_expr(e.left)
        rhs = print_expr(e.right)
        if isinstance(e.left, BinOp):
            lhs = f"({lhs})"
        if isinstance(e.right, BinOp):
            rhs = f"({rhs})"
        return f"{lhs} {e.op} {rhs}"
    if isinstance(e, ArrayLit):
        return "{" + ", ".join(print_expr(x) for x in e.elems) + "}"
    return f"{e.array}[{print_expr(e.index)}]"


def _print_block(c: Command, indent: str) -> str:
    inner = _print_cmd(c, indent + "  ")
    if not inner:
        return "{}"
    return "{\n" + inner + "\n" + indent + "}"


def _print_cmd(c: Command, indent: str) -> str:
    """Body text of a command at the given indent, without trailing newline."""
    lines: list[str] = []
    while True:
        if isinstance(c, Skip):
            break
        if isinstance(c, NewVar):
            lines.append(f"{indent}new {c.name} : {print_sectype(c.ty)} = {print_expr(c.init)};")
            c = c.cont
        elif isinstance(c, Assign):
            lines.append(f"{indent}{c.name} = {print_expr(c.value)};")
            c = c.cont
        elif isinstance(c, AssignArr):
            lines.append(f"{indent}{c.name}[{print_expr(c.index)}] = {print_expr(c.value)};")
            c = c.cont
        elif isinstance(c, LetDeref):
            lines.append(f"{indent}let {c.key} = deref {print_expr(c.source)};")
            c = c.cont
        elif isinstance(c, ConnectPub):
            lines.append(f"{indent}connect {c.chan} : {print_chantype(c.ty)};")
            c = c.cont
        elif isinstance(c, AcceptPub):
            lines.append(f"{indent}accept {c.chan} : {print_chantype(c.ty)};")
            c = c.cont
        elif isinstance(c, ConnectSec):
            lines.append(f"{indent}connect {c.chan} : {print_chantype(c.ty)} to {c.key} as {c.prin};")
            c = c.cont
        elif isinstance(c, AcceptSec):
            lines.append(f"{indent}accept {c.chan} : {print_chantype(c.ty)} to {c.key} as {c.prin};")
            c = c.cont
        elif isinstance(c, Output):
            lines.append(f"{indent}output {print_expr(c.value)} at {c.chan};")
            c = c.cont
        elif isinstance(c, Input):
            lines.append(f"{indent}input {c.chan} {c.name};")
            c = c.cont
        elif isinstance(c, Sync):
            lines.append(f"{indent}sync {_print_block(c.body, indent)};")
            c = c.cont
        elif isinstance(c, NewPrin):
            lines.append(f"{indent}newprin {c.name} {print_rights(c.rights)};")
            c = c.cont
        elif isinstance(c, If):
            s = (f"{indent}if ({print_expr(c.left)} = {print_expr(c.right)}) "
                 f"{_print_block(c.then_branch, indent)}")
            if not isinstance(c.else_branch, Skip):
                s += f" else {_print_block(c.else_branch, indent)}"
            lines.append(s)
            break
        elif isinstance(c, Decrypt):
            s = (f"{indent}decrypt {print_expr(c.value)} using {c.prin} as "
                 f"{c.name} : {print_sectype(c.ty)} {_print_block(c.then_branch, indent)}")
            if not isinstance(c.else_branch, Skip):
                s += f" else {_print_block(c.else_branch, indent)}"
            lines.append(s)
            break
        elif isinstance(c, Register):
            s = (f"{indent}register {c.name} = {print_expr(c.value)} using {c.prin} "
                 f"{_print_block(c.then_branch, indent)}")
            if not isinstance(c.else_branch, Skip):
                s += f" else {_print_block(c.else_branch, indent)}"
            lines.append(s)
            break
        elif isinstance(c, Bang):
            lines.append(f"{indent}! {_print_block(c.body, indent)}")
            break
        elif isinstance(c, Par):
            parts = []
            for side in flatten_par(c):
                parts.append(f"{indent}{_print_block(side, indent)}")
            lines.append(("\n" + indent + "|\n").join(parts))
            break
        else:  # pragma: no cover
            raise TypeError(f"unknown command {c!r}")
    return "\n".join(lines)


def print_command(c: Command) -> str:
    body = _print_cmd(c, "")
    return body if body else "skip;"


def print_program(p: DeviceProgram) -> str:
    lines = []
    for d in p.preamble:
        if isinstance(d, LoadPrincipal):
            lines.append(f"load principal {d.name} from {d.share_id};")
        else:
            lines.append(f"load {d.name} : PubKey from {d.share_id};")
    if lines:
        lines.append("")
    lines.append(print_command(p.body))
    return "\n".join(lines) + "\n"


def flatten_par(c: Command) -> list[Command]:
    """Flatten nested parallel composition into a list, dropping skips."""
    out: list[Command] = []
    stack = [c]
    while stack:
        x = stack.pop()
        if isinstance(x, Par):
            stack.append(x.right)
            stack.append(x.left)
        elif not isinstance(x, Skip):
            out.append(x)
    # stack pops reversed the order of appends above; restore program order
    return out


@lru_cache(maxsize=65536)
def command_text(c: Command) -> str:
    """Canonical single representation of a command, cached."""
    return print_command(c)


# ---------------------------------------------------------------------------
# Substitution of names (no binder tracking needed: programs never declare
# the same name twice, and runtime-generated names are globally fresh).


def subst_rights(r: Rights, old: str, new: str) -> Rights:
    if isinstance(r, Bot):
        return r
    changed = False
    refs = []
    for k in r.refs:
        if k.name == old:
            refs.append(type(k)(new))
            changed = True
        else:
            refs.append(k)
    return RightsSet(tuple(refs)) if changed else r


def subst_sectype(t: SecType, old: str, new: str) -> SecType:
    lab = subst_rights(t.label, old, new)
    return t if lab is t.label else SecType(t.base, lab)


def subst_chantype(t: ChanType, old: str, new: str) -> ChanType:
    car = subst_sectype(t.carried, old, new)
    ex = subst_rights(t.exist, old, new)
    if car is t.carried and ex is t.exist:
        return t
    return ChanType(car, ex)


def subst_expr(e: Expr, old: str, new: str) -> Expr:
    if isinstance(e, Var):
        return Var(new, e.pos) if e.name == old else e
    if isinstance(e, IntLit):
        return e
    if isinstance(e, PubOf):
        return PubOf(new, e.pos) if e.prin == old else e
    if isinstance(e, Release):
        return Release(new, e.pos) if e.prin == old else e
    if isinstance(e, EncE):
        return EncE(subst_expr(e.body, old, new), subst_rights(e.rights, old, new), e.pos)
    if isinstance(e, BinOp):
        return BinOp(e.op, subst_expr(e.left, old, new), subst_expr(e.right, old, new), e.pos)
    if isinstance(e, ArrayLit):
        return ArrayLit(tuple(subst_expr(x, old, new) for x in e.elems), e.pos)
    return Index(new if e.array == old else e.array, subst_expr(e.index, old, new), e.pos)


def subst_cmd(c: Command, old: str, new: str) -> Command:
    se = lambda e: subst_expr(e, old, new)
    sc = lambda k: subst_cmd(k, old, new)
    sr = lambda r: subst_rights(r, old, new)
    sn = lambda n: new if n == old else n
    if isinstance(c, Skip):
        return c
    if isinstance(c, NewVar):
        return NewVar(c.name, subst_sectype(c.ty, old, new), se(c.init), sc(c.cont), c.pos)
    if isinstance(c, Assign):
        return Assign(sn(c.name), se(c.value), sc(c.cont), c.pos)
    if isinstance(c, AssignArr):
        return AssignArr(sn(c.name), se(c.index), se(c.value), sc(c.cont), c.pos)
    if isinstance(c, LetDeref):
        return LetDeref(c.key, se(c.source), sc(c.cont), c.pos)
    if isinstance(c, Par):
        return Par(sc(c.left), sc(c.right), c.pos)
    if isinstance(c, Bang):
        return Bang(sc(c.body), c.pos)
    if isinstance(c, ConnectPub):
        return ConnectPub(sn(c.chan), subst_chantype(c.ty, old, new), sc(c.cont), c.pos)
    if isinstance(c, AcceptPub):
        return AcceptPub(sn(c.chan), subst_chantype(c.ty, old, new), sc(c.cont), c.pos)
    if isinstance(c, ConnectSec):
        return ConnectSec(sn(c.chan), subst_chantype(c.ty, old, new), sn(c.key), sn(c.prin),
                          sc(c.cont), c.pos)
    if isinstance(c, AcceptSec):
        return AcceptSec(sn(c.chan), subst_chantype(c.ty, old, new), sn(c.key), sn(c.prin),
                         sc(c.cont), c.pos)
    if isinstance(c, Output):
        return Output(se(c.value), sn(c.chan), sc(c.cont), c.pos)
    if isinstance(c, Input):
        return Input(sn(c.chan), c.name, sc(c.cont), c.pos)
    if isinstance(c, Sync):
        return Sync(sc(c.body), sc(c.cont), c.pos)
    if isinstance(c, NewPrin):
        return NewPrin(c.name, sr(c.rights), sc(c.cont), c.pos)
    if isinstance(c, Decrypt):
        return Decrypt(se(c.value), sn(c.prin), c.name, subst_sectype(c.ty, old, new),
                       sc(c.then_branch), sc(c.else_branch), c.pos)
    if isinstance(c, Register):
        return Register(c.name, se(c.value), sn(c.prin),
                        sc(c.then_branch), sc(c.else_branch), c.pos)
    if isinstance(c, If):
        return If(se(c.left), se(c.right), sc(c.then_branch), sc(c.else_branch), c.pos)
    raise TypeError(f"unknown command {c!r}")  # pragma: no cover
