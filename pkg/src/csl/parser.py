"""Surface syntax for device programs and system manifests.

Device files (`.csl`) hold an optional preamble of `load` directives
followed by one command.  The command layer separates sequencing (`;`)
from parallel composition (`|`); branching commands (`if`, `decrypt`,
`register`, `!`) terminate a sequence, so accidental `if {..}; C` code
cannot be written.

A manifest is a line-oriented file: `device <path>` lines, at most one
`attacker <path>` line, `#` comments.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

from .ast import (
    NOPOS, ArrayLit, ArrayT, AcceptPub, AcceptSec, Assign, AssignArr, Bang,
    BinOp, Bot, BOT, ChanType, CipherT, Command, ConnectPub, ConnectSec,
    Decrypt, DeviceProgram, EncE, Expr, If, Index, Input, IntLit, IntT, KName,
    KPub, LetDeref, LoadPrincipal, LoadPubKey, NewPrin, NewVar, Output, Par,
    Pos, PrivKeyT, PubKeyT, PubOf, PureType, Register, Release, Rights,
    RightsSet, SecType, Skip, Sync, Var,
)


class ParseError(Exception):
    def __init__(self, msg: str, pos: Pos, source: str = ""):
        self.msg = msg
        self.pos = pos
        self.source = source
        where = f"{source}:{pos[0]}:{pos[1]}" if source else f"{pos[0]}:{pos[1]}"
        super().__init__(f"{where}: {msg}")


KEYWORDS = {
    "load", "principal", "from", "new", "let", "deref", "connect", "accept",
    "to", "as", "output", "at", "input", "sync", "newprin", "decrypt",
    "using", "register", "if", "else", "skip", "enc", "pub", "release",
    "bot", "Chan", "Int", "PubKey", "PrivKey", "Cipher", "Array",
}

SYMBOLS = ("{", "}", "(", ")", "[", "]", ";", ":", ",", "=", "|", "!", "+", "-", "*")


@dataclass
class Token:
    kind: str  # 'ident', 'int', 'kw', symbol text, 'eof'
    text: str
    pos: Pos


def tokenize(text: str, source: str = "") -> list[Token]:
    toks: list[Token] = []
    line, col = 1, 1
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == "#" or text.startswith("//", i):
            while i < n and text[i] != "\n":
                i += 1
            continue
        pos = (line, col)
        if ch.isdigit():
            j = i
            while j < n and text[j].isdigit():
                j += 1
            toks.append(Token("int", text[i:j], pos))
            col += j - i
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            word = text[i:j]
            toks.append(Token("kw" if word in KEYWORDS else "ident", word, pos))
            col += j - i
            i = j
            continue
        if ch in "".join(SYMBOLS):
            toks.append(Token(ch, ch, pos))
            i += 1
            col += 1
            continue
        raise ParseError(f"unexpected character {ch!r}", pos, source)
    toks.append(Token("eof", "", (line, col)))
    return toks


class _Parser:
    def __init__(self, toks: list[Token], source: str):
        self.toks = toks
        self.i = 0
        self.source = source

    # -- token helpers

    def peek(self) -> Token:
        return self.toks[self.i]

    def next(self) -> Token:
        t = self.toks[self.i]
        self.i += 1
        return t

    def at(self, kind: str, text: str | None = None) -> bool:
        t = self.peek()
        return t.kind == kind and (text is None or t.text == text)

    def at_kw(self, word: str) -> bool:
        return self.at("kw", word)

    def expect(self, kind: str, text: str | None = None) -> Token:
        t = self.peek()
        if not self.at(kind, text):
            want = text or kind
            raise ParseError(f"expected {want!r}, found {t.text or t.kind!r}", t.pos, self.source)
        return self.next()

    def expect_kw(self, word: str) -> Token:
        t = self.peek()
        if not self.at_kw(word):
            raise ParseError(f"expected {word!r}, found {t.text or t.kind!r}", t.pos, self.source)
        return self.next()

    def ident(self) -> Token:
        t = self.peek()
        if t.kind != "ident":
            raise ParseError(f"expected identifier, found {t.text or t.kind!r}", t.pos, self.source)
        return self.next()

    def err(self, msg: str, pos: Pos | None = None) -> ParseError:
        return ParseError(msg, pos or self.peek().pos, self.source)

    # -- program

    def program(self) -> DeviceProgram:
        preamble = []
        while self.at_kw("load"):
            preamble.append(self.load())
        body = self.parcmd()
        self.expect("eof")
        return DeviceProgram(tuple(preamble), body, self.source)

    def load(self):
        pos = self.expect_kw("load").pos
        if self.at_kw("principal"):
            self.next()
            name = self.ident().text
            self.expect_kw("from")
            sid = int(self.expect("int").text)
            self.expect(";")
            return LoadPrincipal(name, sid, pos)
        name = self.ident().text
        self.expect(":")
        self.expect_kw("PubKey")
        self.expect_kw("from")
        sid = int(self.expect("int").text)
        self.expect(";")
        return LoadPubKey(name, sid, pos)

    # -- commands

    def parcmd(self) -> Command:
        left = self.seqcmd()
        while self.at("|"):
            pos = self.next().pos
            right = self.seqcmd()
            left = Par(left, right, pos)
        return left

    def block(self) -> Command:
        self.expect("{")
        c = self.parcmd()
        self.expect("}")
        return c

    def seqcmd(self) -> Command:
        prefixes: list = []  # (builder taking cont)
        while True:
            t = self.peek()
            if t.kind in ("eof", "}", "|"):
                return self._assemble(prefixes, Skip(t.pos))
            tail = self._item(prefixes)
            if tail is not None:
                return self._assemble(prefixes, tail)

    @staticmethod
    def _assemble(prefixes: list, tail: Command) -> Command:
        for build in reversed(prefixes):
            tail = build(tail)
        return tail

    def _item(self, prefixes: list) -> Command | None:
        """Parse one item.  Prefix items append a builder and return None;
        terminating items return the finished command."""
        t = self.peek()
        pos = t.pos
        if self.at_kw("skip"):
            self.next()
            self.expect(";")
            return None  # contributes nothing; sequence goes on
        if self.at_kw("new"):
            self.next()
            name = self.ident().text
            self.expect(":")
            ty = self.sectype()
            self.expect("=")
            e = self.expr()
            self.expect(";")
            prefixes.append(lambda cont: NewVar(name, ty, e, cont, pos))
            return None
        if self.at_kw("let"):
            self.next()
            key = self.ident().text
            self.expect("=")
            self.expect_kw("deref")
            src = self.expr()
            self.expect(";")
            prefixes.append(lambda cont: LetDeref(key, src, cont, pos))
            return None
        if self.at_kw("connect") or self.at_kw("accept"):
            is_conn = t.text == "connect"
            self.next()
            chan = self.ident().text
            self.expect(":")
            ty = self.chantype()
            if self.at_kw("to"):
                self.next()
                key = self.ident().text
                self.expect_kw("as")
                prin = self.ident().text
                self.expect(";")
                cls = ConnectSec if is_conn else AcceptSec
                prefixes.append(lambda cont: cls(chan, ty, key, prin, cont, pos))
            else:
                self.expect(";")
                cls = ConnectPub if is_conn else AcceptPub
                prefixes.append(lambda cont: cls(chan, ty, cont, pos))
            return None
        if self.at_kw("output"):
            self.next()
            e = self.expr()
            self.expect_kw("at")
            chan = self.ident().text
            self.expect(";")
            prefixes.append(lambda cont: Output(e, chan, cont, pos))
            return None
        if self.at_kw("input"):
            self.next()
            chan = self.ident().text
            name = self.ident().text
            self.expect(";")
            prefixes.append(lambda cont: Input(chan, name, cont, pos))
            return None
        if self.at_kw("sync"):
            self.next()
            body = self.block()
            self.expect(";")
            self._check_guarded(body, pos)
            prefixes.append(lambda cont: Sync(body, cont, pos))
            return None
        if self.at_kw("newprin"):
            self.next()
            name = self.ident().text
            rights = self.rights()
            if isinstance(rights, Bot):
                raise self.err("newprin rights must be a set, not bot", pos)
            self.expect(";")
            prefixes.append(lambda cont: NewPrin(name, rights, cont, pos))
            return None
        if self.at_kw("if"):
            self.next()
            self.expect("(")
            left = self.expr()
            self.expect("=")
            right = self.expr()
            self.expect(")")
            then_b = self.block()
            else_b = self._opt_else(pos)
            self._no_trailing(pos)
            return If(left, right, then_b, else_b, pos)
        if self.at_kw("decrypt"):
            self.next()
            e = self.expr()
            self.expect_kw("using")
            prin = self.ident().text
            self.expect_kw("as")
            name = self.ident().text
            self.expect(":")
            ty = self.sectype()
            if isinstance(ty.label, Bot):
                raise self.err("decrypt annotation needs a rights set, not bot", pos)
            then_b = self.block()
            else_b = self._opt_else(pos)
            self._no_trailing(pos)
            return Decrypt(e, prin, name, ty, then_b, else_b, pos)
        if self.at_kw("register"):
            self.next()
            name = self.ident().text
            self.expect("=")
            e = self.expr()
            self.expect_kw("using")
            prin = self.ident().text
            then_b = self.block()
            else_b = self._opt_else(pos)
            self._no_trailing(pos)
            return Register(name, e, prin, then_b, else_b, pos)
        if self.at("!"):
            self.next()
            body = self.block()
            self._no_trailing(pos)
            return Bang(body, pos)
        if self.at("{"):
            c = self.block()
            self._no_trailing(pos)
            return c
        if t.kind == "ident":
            # assignment forms
            name = self.next().text
            if self.at("["):
                self.next()
                idx = self.expr()
                self.expect("]")
                self.expect("=")
                e = self.expr()
                self.expect(";")
                prefixes.append(lambda cont: AssignArr(name, idx, e, cont, pos))
                return None
            self.expect("=")
            e = self.expr()
            self.expect(";")
            prefixes.append(lambda cont: Assign(name, e, cont, pos))
            return None
        raise self.err(f"expected a command, found {t.text or t.kind!r}")

    def _opt_else(self, pos: Pos) -> Command:
        if self.at_kw("else"):
            self.next()
            return self.block()
        return Skip(pos)

    def _no_trailing(self, pos: Pos) -> None:
        t = self.peek()
        if t.kind not in ("eof", "}", "|"):
            raise self.err("unreachable code after a branching command "
                           "(branches are the continuation)", t.pos)

    def _check_guarded(self, c: Command, pos: Pos) -> None:
        """sync bodies come from the guarded sub-grammar: conditionals,
        declarations, assignments, decrypt/register, parallel, skip."""
        stack = [c]
        while stack:
            x = stack.pop()
            if isinstance(x, (Skip,)):
                continue
            if isinstance(x, (NewVar, Assign, AssignArr)):
                stack.append(x.cont)
            elif isinstance(x, Par):
                stack.append(x.left)
                stack.append(x.right)
            elif isinstance(x, (If, Decrypt, Register)):
                stack.append(x.then_branch)
                stack.append(x.else_branch)
            else:
                raise ParseError(
                    f"command not allowed inside sync", getattr(x, "pos", pos), self.source)

    # -- types and rights

    def rights(self) -> Rights:
        if self.at_kw("bot"):
            self.next()
            return BOT
        self.expect("{")
        refs = []
        if not self.at("}"):
            while True:
                if self.at_kw("pub"):
                    self.next()
                    self.expect("(")
                    refs.append(KPub(self.ident().text))
                    self.expect(")")
                else:
                    refs.append(KName(self.ident().text))
                if self.at(","):
                    self.next()
                    continue
                break
        self.expect("}")
        if len(set(refs)) != len(refs):
            raise self.err("duplicate reference in rights set")
        return RightsSet(tuple(refs))

    def puretype(self) -> PureType:
        t = self.peek()
        if self.at_kw("Int"):
            self.next()
            return IntT()
        if self.at_kw("PubKey"):
            self.next()
            return PubKeyT()
        if self.at_kw("PrivKey"):
            self.next()
            return PrivKeyT()
        if self.at_kw("Cipher"):
            self.next()
            self.expect("(")
            inner = self.puretype()
            self.expect(")")
            return CipherT(inner)
        if self.at_kw("Array"):
            self.next()
            self.expect("(")
            elem = self.puretype()
            self.expect(")")
            return ArrayT(elem)
        raise self.err(f"expected a type, found {t.text or t.kind!r}")

    def sectype(self) -> SecType:
        base = self.puretype()
        return SecType(base, self.rights())

    def chantype(self) -> ChanType:
        self.expect_kw("Chan")
        self.expect("(")
        carried = self.sectype()
        self.expect(")")
        return ChanType(carried, self.rights())

    # -- expressions

    def expr(self) -> Expr:
        left = self.term()
        while self.at("+") or self.at("-"):
            op = self.next()
            right = self.term()
            left = BinOp(op.text, left, right, op.pos)
        return left

    def term(self) -> Expr:
        left = self.factor()
        while self.at("*"):
            op = self.next()
            right = self.factor()
            left = BinOp("*", left, right, op.pos)
        return left

    def factor(self) -> Expr:
        t = self.peek()
        pos = t.pos
        if t.kind == "int":
            self.next()
            return IntLit(int(t.text), pos)
        if self.at("-"):
            self.next()
            lit = self.expect("int")
            return IntLit(-int(lit.text), pos)
        if self.at("("):
            self.next()
            e = self.expr()
            self.expect(")")
            return e
        if self.at("{"):
            self.next()
            elems = [self.expr()]
            while self.at(","):
                self.next()
                elems.append(self.expr())
            self.expect("}")
            return ArrayLit(tuple(elems), pos)
        if self.at_kw("pub"):
            self.next()
            self.expect("(")
            name = self.ident().text
            self.expect(")")
            return PubOf(name, pos)
        if self.at_kw("release"):
            self.next()
            self.expect("(")
            name = self.ident().text
            self.expect(")")
            return Release(name, pos)
        if self.at_kw("enc"):
            self.next()
            self.expect("(")
            body = self.expr()
            self.expect(",")
            rights = self.rights()
            if isinstance(rights, Bot):
                raise self.err("enc needs a rights set, not bot", pos)
            self.expect(")")
            return EncE(body, rights, pos)
        if t.kind == "ident":
            self.next()
            if self.at("["):
                self.next()
                idx = self.expr()
                self.expect("]")
                return Index(t.text, idx, pos)
            return Var(t.text, pos)
        raise self.err(f"expected an expression, found {t.text or t.kind!r}")


# ---------------------------------------------------------------------------
# Declared-name collection and the no-duplicate-declaration check.


def declared_names(p: DeviceProgram) -> list[tuple[str, Pos]]:
    out: list[tuple[str, Pos]] = []
    for d in p.preamble:
        out.append((d.name, d.pos))
    stack: list[Command] = [p.body]
    while stack:
        c = stack.pop()
        if isinstance(c, Skip):
            continue
        if isinstance(c, (NewVar, Input)):
            out.append((c.name, c.pos))
            stack.append(c.cont)
        elif isinstance(c, LetDeref):
            out.append((c.key, c.pos))
            stack.append(c.cont)
        elif isinstance(c, (ConnectPub, AcceptPub, ConnectSec, AcceptSec)):
            out.append((c.chan, c.pos))
            stack.append(c.cont)
        elif isinstance(c, NewPrin):
            out.append((c.name, c.pos))
            stack.append(c.cont)
        elif isinstance(c, (Assign, AssignArr, Output)):
            stack.append(c.cont)
        elif isinstance(c, Par):
            stack.extend((c.left, c.right))
        elif isinstance(c, Bang):
            stack.append(c.body)
        elif isinstance(c, Sync):
            stack.extend((c.body, c.cont))
        elif isinstance(c, (Decrypt, Register)):
            out.append((c.name, c.pos))
            stack.extend((c.then_branch, c.else_branch))
        elif isinstance(c, If):
            stack.extend((c.then_branch, c.else_branch))
    return out


def parse_device(text: str, source: str = "") -> DeviceProgram:
    """Parse one device program and enforce AST invariants."""
    prog = _Parser(tokenize(text, source), source).program()
    seen: dict[str, Pos] = {}
    for name, pos in declared_names(prog):
        if name in seen:
            first = seen[name]
            raise ParseError(
                f"name {name!r} declared twice (first at {first[0]}:{first[1]})", pos, source)
        seen[name] = pos
    for d in prog.preamble:
        if d.share_id < 0 or d.share_id >= 100_000:
            raise ParseError("share id out of range", d.pos, source)
    return prog


def parse_device_file(path: str) -> DeviceProgram:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_device(fh.read(), source=os.path.basename(path))


# ---------------------------------------------------------------------------
# Manifests


@dataclass
class Manifest:
    devices: list[tuple[int, DeviceProgram]]  # ids 1..n in file order
    attacker_script: str | None  # path, or None


def parse_system(text: str, base_dir: str = ".", source: str = "manifest") -> Manifest:
    devices: list[tuple[int, DeviceProgram]] = []
    attacker: str | None = None
    next_id = 1
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(None, 1)
        if len(parts) != 2:
            raise ParseError(f"bad manifest line: {raw!r}", (lineno, 1), source)
        kind, path = parts[0], parts[1].strip()
        full = path if os.path.isabs(path) else os.path.join(base_dir, path)
        if kind == "device":
            if not os.path.exists(full):
                raise ParseError(f"missing device file {path!r}", (lineno, 1), source)
            devices.append((next_id, parse_device_file(full)))
            next_id += 1
        elif kind == "attacker":
            if attacker is not None:
                raise ParseError("duplicate attacker line", (lineno, 1), source)
            if not os.path.exists(full):
                raise ParseError(f"missing attacker script {path!r}", (lineno, 1), source)
            attacker = full
        else:
            raise ParseError(f"unknown manifest entry {kind!r}", (lineno, 1), source)
    if not devices:
        raise ParseError("no devices", (1, 1), source)
    return Manifest(devices, attacker)


def parse_system_file(path: str) -> Manifest:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_system(fh.read(), base_dir=os.path.dirname(os.path.abspath(path)),
                            source=os.path.basename(path))
