"""Reader for the discrete, table-CPT subset of the BIF network format."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .model import ModelFormatError, Network, Parameterization, Variable

_TOKEN = re.compile(r"""\s*(?:
    (?P<comment>//[^\n]*|/\*.*?\*/)
  | (?P<number>[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?(?![\w.]))
  | (?P<word>[A-Za-z_][\w.\-]*|"[^"]*")
  | (?P<punct>[{}()\[\];,|])
)""", re.VERBOSE | re.DOTALL)


def _tokenize(text: str, path):
    pos, line = 0, 1
    out = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            rest = text[pos:]
            if not rest.strip():
                break
            line += text.count("\n", pos, len(text) - len(rest.lstrip()))
            raise ModelFormatError(f"unexpected character {rest.lstrip()[0]!r}", path, line)
        start = m.start(m.lastgroup)
        line += text.count("\n", pos, start)
        if m.lastgroup != "comment":
            tok = m.group(m.lastgroup)
            if tok.startswith('"'):
                tok = tok[1:-1]
            out.append((tok, line))
        line += text.count("\n", start, m.end())
        pos = m.end()
    return out


class _Parser:
    def __init__(self, tokens, path):
        self.toks = tokens
        self.i = 0
        self.path = path

    def peek(self):
        return self.toks[self.i][0] if self.i < len(self.toks) else None

    def line(self):
        if self.i < len(self.toks):
            return self.toks[self.i][1]
        return self.toks[-1][1] if self.toks else 1

    def next(self):
        if self.i >= len(self.toks):
            raise ModelFormatError("unexpected end of file", self.path, self.line())
        tok = self.toks[self.i][0]
        self.i += 1
        return tok

    def expect(self, tok):
        line = self.line()
        got = self.next()
        if got != tok:
            raise ModelFormatError(f"expected {tok!r}, found {got!r}", self.path, line)

    def skip_block(self):
        depth = 0
        while True:
            tok = self.next()
            if tok == "{":
                depth += 1
            elif tok == "}":
                depth -= 1
                if depth == 0:
                    return

    def error(self, msg, line=None):
        return ModelFormatError(msg, self.path, line or self.line())


def read_bif(path) -> tuple[Network, Parameterization]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ModelFormatError(str(exc), path) from exc
    p = _Parser(_tokenize(text, path), path)
    name = "network"
    variables: dict[str, Variable] = {}
    parents: dict[str, list[str]] = {}
    raw_tables: dict[str, tuple[list, list, int]] = {}

    while p.peek() is not None:
        line = p.line()
        kw = p.next()
        if kw == "network":
            name = p.next()
            p.skip_block()
        elif kw == "variable":
            var = p.next()
            p.expect("{")
            states = None
            while p.peek() != "}":
                if p.peek() == "type":
                    p.next()
                    kind = p.next()
                    if kind != "discrete":
                        raise p.error(f"variable {var!r}: only discrete variables are supported")
                    p.expect("[")
                    n = int(float(p.next()))
                    p.expect("]")
                    p.expect("{")
                    states = []
                    while p.peek() != "}":
                        tok = p.next()
                        if tok != ",":
                            states.append(tok)
                    p.expect("}")
                    p.expect(";")
                    if len(states) != n:
                        raise p.error(f"variable {var!r}: declared {n} states, listed {len(states)}")
                else:
                    while p.next() != ";":
                        pass
            p.expect("}")
            if states is None:
                raise p.error(f"variable {var!r} has no type declaration", line)
            try:
                variables[var] = Variable(var, tuple(states))
            except ValueError as exc:
                raise p.error(str(exc), line) from exc
        elif kw == "probability":
            p.expect("(")
            child = p.next()
            ps = []
            if p.peek() == "|":
                p.next()
                while p.peek() != ")":
                    tok = p.next()
                    if tok != ",":
                        ps.append(tok)
            p.expect(")")
            parents[child] = ps
            raw_tables[child] = _read_probability_block(p), ps, line
        else:
            raise p.error(f"unexpected keyword {kw!r}", line)

    for child, (_, ps, line) in raw_tables.items():
        for v in [child, *ps]:
            if v not in variables:
                raise ModelFormatError(f"undeclared variable {v!r}", path, line)
    order = list(variables)
    net = Network.from_edges([variables[v] for v in order], parents, name)
    tables = []
    for i, var in enumerate(net.ids):
        if var not in raw_tables:
            raise ModelFormatError(f"no probability block for {var!r}", path)
        entries, ps, line = raw_tables[var]
        tables.append(_assemble(net, i, entries, path, line))
    return net, Parameterization(net, tables)


def _read_probability_block(p: _Parser):
    """Return a list of (parent state labels or None, numbers) entries."""
    p.expect("{")
    entries = []
    while p.peek() != "}":
        tok = p.peek()
        if tok == "(":
            p.next()
            labels = []
            while p.peek() != ")":
                t = p.next()
                if t != ",":
                    labels.append(t)
            p.next()
            entries.append((tuple(labels), _numbers(p)))
        elif tok == "table":
            p.next()
            entries.append((None, _numbers(p)))
        elif tok == "default":
            raise p.error("'default' entries are not supported")
        else:
            while p.next() != ";":
                pass
    p.expect("}")
    return entries


def _numbers(p: _Parser) -> list[float]:
    vals = []
    while True:
        tok = p.next()
        if tok == ";":
            return vals
        if tok == ",":
            continue
        try:
            vals.append(float(tok))
        except ValueError:
            raise p.error(f"expected a probability, found {tok!r}") from None


def _assemble(net: Network, i: int, entries, path, line) -> np.ndarray:
    shape = net.family_shape(i)
    k = net.cards[i]
    table = np.full(shape, np.nan)
    pvars = [net.variables[j] for j in net.parent_indices[i]]
    for labels, nums in entries:
        if labels is None:
            flat = np.asarray(nums)
            if flat.size != table.size:
                raise ModelFormatError(f"{net.ids[i]}: table has {flat.size} entries, "
                                       f"expected {table.size}", path, line)
            # BIF tables list the child as the slowest-varying index
            table = flat.reshape((k,) + shape[:-1]).transpose(list(range(1, len(shape))) + [0])
            continue
        if len(labels) != len(pvars) or len(nums) != k:
            raise ModelFormatError(f"{net.ids[i]}: malformed row {labels}", path, line)
        try:
            u = tuple(v.states.index(s) for v, s in zip(pvars, labels))
        except ValueError:
            raise ModelFormatError(f"{net.ids[i]}: unknown parent state in {labels}", path, line) from None
        table[u] = nums
    if np.isnan(table).any():
        raise ModelFormatError(f"{net.ids[i]}: incomplete conditional table", path, line)
    return table
