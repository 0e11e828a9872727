"""The program mini-language: forests of nested text-operation calls.

A program is a bullet list; each bullet is one call tree over sentence
references. Grammar:

    bullet := "-" call
    call   := kind "(" arg ("," arg)* ("," "instruction" "=" STRING)? ")"
    arg    := SREF | call
    SREF   := "S" [1-9][0-9]*
    kind   := "paraphrase" | "compression" | "fusion" | "extract"

The parser never raises: every input line becomes either a tree or a
rejected entry with a positioned error. Nothing here evaluates host-language
code; calls are data.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Union

from .corpus import IndexedCorpus

__all__ = [
    "Call",
    "ErrorKind",
    "Leaf",
    "ModuleKind",
    "ProgramForest",
    "ProgramNode",
    "ProgramTree",
    "RejectedLine",
    "ValidationIssue",
    "ValidationReport",
    "leaves",
    "parse_program",
    "same_structure",
    "serialize",
    "validate",
]

DEFAULT_MAX_DEPTH = 8


class ModuleKind(Enum):
    PARAPHRASE = "paraphrase"
    COMPRESSION = "compression"
    FUSION = "fusion"
    EXTRACT = "extract"


class ErrorKind(Enum):
    UNKNOWN_MODULE = "UnknownModule"
    ARITY_ERROR = "ArityError"
    UNCLOSED_PARENTHESIS = "UnclosedParenthesis"
    BAD_SENTENCE_REF = "BadSentenceRef"
    BAD_INSTRUCTION_SYNTAX = "BadInstructionSyntax"
    DEPTH_EXCEEDED = "DepthExceeded"
    MALFORMED_CALL = "MalformedCall"
    TRAILING_CONTENT = "TrailingContent"
    EMPTY_PROGRAM = "EmptyProgram"


@dataclass(frozen=True)
class Leaf:
    sentence_id: int


@dataclass(frozen=True)
class Call:
    kind: ModuleKind
    args: tuple["ProgramNode", ...]
    instruction: str | None = None


ProgramNode = Union[Leaf, Call]


@dataclass(frozen=True)
class ProgramTree:
    root: Call
    source_text: str


@dataclass(frozen=True)
class RejectedLine:
    text: str
    kind: ErrorKind
    message: str
    column: int  # 0-based offset into the line


@dataclass(frozen=True)
class ProgramForest:
    trees: tuple[ProgramTree, ...]
    rejected: tuple[RejectedLine, ...] = ()


@dataclass(frozen=True)
class ValidationIssue:
    tree_index: int  # 1-based, matching bullet order; 0 for forest-level issues
    kind: ErrorKind
    message: str


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple[ValidationIssue, ...]

    @property
    def ok(self) -> bool:
        return not self.issues


_KINDS = {k.value: k for k in ModuleKind}
_MIN_ARGS = {
    ModuleKind.PARAPHRASE: 1,
    ModuleKind.COMPRESSION: 1,
    ModuleKind.EXTRACT: 1,
    ModuleKind.FUSION: 2,
}
_MAX_ARGS = {
    ModuleKind.PARAPHRASE: 1,
    ModuleKind.COMPRESSION: 1,
    ModuleKind.EXTRACT: 1,
    ModuleKind.FUSION: None,
}

_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_SREF_RE = re.compile(r"S([0-9]+)\b")
_ESCAPES = {'"': '"', "\\": "\\", "n": "\n", "t": "\t", "r": "\r"}


class _LineError(Exception):
    def __init__(self, kind: ErrorKind, message: str, column: int):
        super().__init__(message)
        self.kind = kind
        self.message = message
        self.column = column


class _Cursor:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos] in " \t":
            self.pos += 1

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def at_end(self) -> bool:
        return self.pos >= len(self.text)

    def take(self) -> str:
        ch = self.text[self.pos]
        self.pos += 1
        return ch


def _parse_string(cur: _Cursor) -> str:
    start = cur.pos
    cur.take()  # opening quote, guaranteed by caller
    out: list[str] = []
    while not cur.at_end():
        ch = cur.take()
        if ch == '"':
            return "".join(out)
        if ch == "\\":
            if cur.at_end():
                break
            esc = cur.take()
            out.append(_ESCAPES.get(esc, esc))
        else:
            out.append(ch)
    raise _LineError(ErrorKind.BAD_INSTRUCTION_SYNTAX, "unterminated string literal", start)


def _parse_call(cur: _Cursor, depth: int, max_depth: int) -> Call:
    if depth > max_depth:
        raise _LineError(
            ErrorKind.DEPTH_EXCEEDED, f"nesting deeper than {max_depth}", cur.pos
        )
    name_start = cur.pos
    match = _NAME_RE.match(cur.text, cur.pos)
    if match is None:
        raise _LineError(ErrorKind.MALFORMED_CALL, "expected a module call", cur.pos)
    name = match.group(0)
    cur.pos = match.end()
    kind = _KINDS.get(name)
    if kind is None:
        raise _LineError(ErrorKind.UNKNOWN_MODULE, f"unknown module '{name}'", name_start)
    cur.skip_ws()
    if cur.peek() != "(":
        raise _LineError(ErrorKind.MALFORMED_CALL, f"expected '(' after '{name}'", cur.pos)
    cur.take()

    args: list[ProgramNode] = []
    instruction: str | None = None
    cur.skip_ws()
    if cur.peek() == ")":
        cur.take()
        return _finish_call(kind, args, instruction, name_start)
    while True:
        cur.skip_ws()
        if cur.at_end():
            raise _LineError(ErrorKind.UNCLOSED_PARENTHESIS, "missing ')'", cur.pos)
        args_done = False
        if cur.peek() == '"':
            raise _LineError(
                ErrorKind.BAD_INSTRUCTION_SYNTAX,
                'string argument must be written as instruction="..."',
                cur.pos,
            )
        name_match = _NAME_RE.match(cur.text, cur.pos)
        if name_match and name_match.group(0) == "instruction":
            if instruction is not None:
                raise _LineError(
                    ErrorKind.BAD_INSTRUCTION_SYNTAX, "duplicate instruction", cur.pos
                )
            cur.pos = name_match.end()
            cur.skip_ws()
            if cur.peek() != "=":
                raise _LineError(
                    ErrorKind.BAD_INSTRUCTION_SYNTAX, "expected '=' after instruction", cur.pos
                )
            cur.take()
            cur.skip_ws()
            if cur.peek() != '"':
                raise _LineError(
                    ErrorKind.BAD_INSTRUCTION_SYNTAX,
                    "instruction value must be a double-quoted string",
                    cur.pos,
                )
            value = _parse_string(cur)
            instruction = value if value else None
            args_done = True  # keyword must be last
        else:
            args.append(_parse_arg(cur, depth, max_depth))
        cur.skip_ws()
        if cur.peek() == ")":
            cur.take()
            return _finish_call(kind, args, instruction, name_start)
        if cur.peek() == ",":
            cur.take()
            if args_done:
                raise _LineError(
                    ErrorKind.BAD_INSTRUCTION_SYNTAX,
                    "instruction must be the final argument",
                    cur.pos,
                )
            continue
        if cur.at_end():
            raise _LineError(ErrorKind.UNCLOSED_PARENTHESIS, "missing ')'", cur.pos)
        raise _LineError(
            ErrorKind.MALFORMED_CALL, f"unexpected character {cur.peek()!r}", cur.pos
        )


def _parse_arg(cur: _Cursor, depth: int, max_depth: int) -> ProgramNode:
    start = cur.pos
    name_match = _NAME_RE.match(cur.text, cur.pos)
    if name_match is None:
        raise _LineError(
            ErrorKind.MALFORMED_CALL, "expected a sentence reference or call", cur.pos
        )
    name = name_match.group(0)
    after = cur.text[name_match.end() : name_match.end() + 1]
    sref = _SREF_RE.fullmatch(name)
    if sref is not None and after != "(":
        sid = int(sref.group(1))
        if name[1] == "0":
            raise _LineError(
                ErrorKind.BAD_SENTENCE_REF, f"sentence ids start at 1, got '{name}'", start
            )
        cur.pos = name_match.end()
        return Leaf(sid)
    lookahead = cur.text[name_match.end() :].lstrip(" \t")
    if lookahead.startswith("("):
        return _parse_call(cur, depth + 1, max_depth)
    if name in _KINDS:
        raise _LineError(ErrorKind.MALFORMED_CALL, f"expected '(' after '{name}'", start)
    raise _LineError(
        ErrorKind.BAD_SENTENCE_REF, f"expected a sentence reference like 'S3', got '{name}'", start
    )


def _finish_call(
    kind: ModuleKind, args: list[ProgramNode], instruction: str | None, column: int
) -> Call:
    min_args = _MIN_ARGS[kind]
    max_args = _MAX_ARGS[kind]
    if len(args) < min_args:
        raise _LineError(
            ErrorKind.ARITY_ERROR,
            f"{kind.value} requires at least {min_args} argument(s), got {len(args)}",
            column,
        )
    if max_args is not None and len(args) > max_args:
        raise _LineError(
            ErrorKind.ARITY_ERROR,
            f"{kind.value} takes exactly {max_args} argument(s), got {len(args)}",
            column,
        )
    if kind is ModuleKind.EXTRACT and not isinstance(args[0], Leaf):
        raise _LineError(
            ErrorKind.ARITY_ERROR, "extract takes a sentence reference, not a call", column
        )
    return Call(kind=kind, args=tuple(args), instruction=instruction)


def parse_program(text: str, max_depth: int = DEFAULT_MAX_DEPTH) -> ProgramForest:
    """Parse a bullet-list completion into a forest.

    Lines not starting with "-" are ignored; a line that fails to parse is
    recorded in `rejected` and never aborts its siblings.
    """
    trees: list[ProgramTree] = []
    rejected: list[RejectedLine] = []
    for raw_line in text.splitlines():
        line = raw_line.strip()
        if not line.startswith("-"):
            continue
        body = line[1:].strip()
        cur = _Cursor(body)
        try:
            if not body:
                raise _LineError(ErrorKind.MALFORMED_CALL, "empty bullet", 0)
            root = _parse_call(cur, depth=1, max_depth=max_depth)
            cur.skip_ws()
            if not cur.at_end():
                raise _LineError(
                    ErrorKind.TRAILING_CONTENT,
                    f"unexpected content after call: {cur.text[cur.pos:]!r}",
                    cur.pos,
                )
            trees.append(ProgramTree(root=root, source_text=line))
        except _LineError as err:
            rejected.append(
                RejectedLine(text=line, kind=err.kind, message=err.message, column=err.column)
            )
    return ProgramForest(trees=tuple(trees), rejected=tuple(rejected))


def _node_depth(node: ProgramNode) -> int:
    if isinstance(node, Leaf):
        return 0
    return 1 + max(_node_depth(a) for a in node.args)


def _check_node(
    node: ProgramNode, tree_index: int, corpus: IndexedCorpus, issues: list[ValidationIssue]
) -> None:
    if isinstance(node, Leaf):
        if not 1 <= node.sentence_id <= corpus.size:
            issues.append(
                ValidationIssue(
                    tree_index,
                    ErrorKind.BAD_SENTENCE_REF,
                    f"S{node.sentence_id} outside corpus range 1..{corpus.size}",
                )
            )
        return
    min_args = _MIN_ARGS[node.kind]
    max_args = _MAX_ARGS[node.kind]
    if len(node.args) < min_args or (max_args is not None and len(node.args) > max_args):
        issues.append(
            ValidationIssue(
                tree_index,
                ErrorKind.ARITY_ERROR,
                f"{node.kind.value} got {len(node.args)} argument(s)",
            )
        )
    if node.kind is ModuleKind.EXTRACT and node.args and not isinstance(node.args[0], Leaf):
        issues.append(
            ValidationIssue(
                tree_index, ErrorKind.ARITY_ERROR, "extract argument must be a sentence reference"
            )
        )
    for arg in node.args:
        _check_node(arg, tree_index, corpus, issues)


def validate(
    forest: ProgramForest, corpus: IndexedCorpus, max_depth: int = DEFAULT_MAX_DEPTH
) -> ValidationReport:
    """Check a forest against a corpus: ref ranges, arities, depth, emptiness."""
    issues: list[ValidationIssue] = []
    if not forest.trees:
        issues.append(ValidationIssue(0, ErrorKind.EMPTY_PROGRAM, "program has no trees"))
    for index, tree in enumerate(forest.trees, start=1):
        if _node_depth(tree.root) > max_depth:
            issues.append(
                ValidationIssue(
                    index, ErrorKind.DEPTH_EXCEEDED, f"tree nests deeper than {max_depth}"
                )
            )
        _check_node(tree.root, index, corpus, issues)
    return ValidationReport(issues=tuple(issues))


def _escape(text: str) -> str:
    out = []
    for ch in text:
        if ch == "\\":
            out.append("\\\\")
        elif ch == '"':
            out.append('\\"')
        elif ch == "\n":
            out.append("\\n")
        elif ch == "\t":
            out.append("\\t")
        elif ch == "\r":
            out.append("\\r")
        else:
            out.append(ch)
    return "".join(out)


def _serialize_node(node: ProgramNode) -> str:
    if isinstance(node, Leaf):
        return f"S{node.sentence_id}"
    parts = [_serialize_node(a) for a in node.args]
    if node.instruction is not None:
        parts.append(f'instruction="{_escape(node.instruction)}"')
    return f"{node.kind.value}({', '.join(parts)})"


def serialize(forest: ProgramForest) -> str:
    """Emit a forest as a bullet list; parse_program(serialize(f)) ≅ f."""
    return "\n".join(f"- {_serialize_node(t.root)}" for t in forest.trees)


def leaves(tree: ProgramTree | ProgramNode) -> tuple[int, ...]:
    """All leaf sentence ids of a tree, deduplicated and ascending."""
    node = tree.root if isinstance(tree, ProgramTree) else tree
    found: set[int] = set()

    def walk(n: ProgramNode) -> None:
        if isinstance(n, Leaf):
            found.add(n.sentence_id)
        else:
            for arg in n.args:
                walk(arg)

    walk(node)
    return tuple(sorted(found))


def same_structure(a: ProgramForest, b: ProgramForest) -> bool:
    """Structural forest equality, ignoring source text and rejected lines."""
    return [t.root for t in a.trees] == [t.root for t in b.trees]
