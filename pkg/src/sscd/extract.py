"""Method-level fragment extraction from C-like source trees and manifests.

The extractor is deliberately grammar-free: a lexical scanner plus a
brace-balance heuristic finds function definitions in C, C++, and Java
well enough for clone detection, and pre-extracted fragments can always be
supplied through a JSON-lines manifest instead.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

from .errors import ConfigError, ManifestError

logger = logging.getLogger(__name__)

LANGUAGES = ("c", "cpp", "java", "manifest")
TOKENIZER_MODES = ("raw", "normalized")

_SOURCE_EXTENSIONS = {
    "c": (".c", ".h"),
    "cpp": (".cpp", ".cc", ".cxx", ".hpp", ".hh", ".hxx", ".h"),
    "java": (".java",),
}

# Union of C, C++, and Java keywords. Normalized tokenization keeps these
# verbatim; only non-keyword identifiers collapse to ID.
KEYWORDS = frozenset(
    """
    auto break case char const continue default do double else enum extern
    float for goto if inline int long register restrict return short signed
    sizeof static struct switch typedef union unsigned void volatile while
    alignas alignof asm bool catch class constexpr const_cast decltype delete
    dynamic_cast explicit export false friend mutable namespace new noexcept
    nullptr operator private protected public reinterpret_cast static_assert
    static_cast template this thread_local throw true try typeid typename
    using virtual wchar_t override final
    abstract assert boolean byte extends finally implements import instanceof
    interface native package strictfp super synchronized throws transient var
    """.split()
)

# Keywords that can precede "(...) {" without being a function definition.
_CONTROL_KEYWORDS = frozenset(
    "if for while switch catch return sizeof synchronized do else new throw "
    "assert delete typeid decltype alignof case".split()
)

_OPERATORS_4 = (">>>=",)
_OPERATORS_3 = ("<<=", ">>=", "...", "->*", ">>>")
_OPERATORS_2 = (
    "::", "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||",
    "+=", "-=", "*=", "/=", "%=", "&=", "^=", "|=", "##",
)

_IDENT_START = frozenset("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ_$")
_IDENT_CONT = _IDENT_START | frozenset("0123456789")
_DIGITS = frozenset("0123456789")


@dataclass
class ExtractionConfig:
    """Knobs for turning a source tree into fragments."""

    min_loc: int = 0
    strip_comments: bool = True
    language: str = "c"
    tokenizer_mode: str = "normalized"

    def __post_init__(self) -> None:
        if self.min_loc < 0:
            raise ConfigError(f"min_loc must be >= 0, got {self.min_loc}")
        if self.language not in LANGUAGES:
            raise ConfigError(
                f"unsupported language {self.language!r}; expected one of {LANGUAGES}"
            )
        if self.tokenizer_mode not in TOKENIZER_MODES:
            raise ConfigError(
                f"unsupported tokenizer_mode {self.tokenizer_mode!r}; "
                f"expected one of {TOKENIZER_MODES}"
            )


@dataclass
class CodeFragment:
    """One extracted method: location, text, and token sequence."""

    id: int
    file: str
    start_line: int
    end_line: int
    name: str
    text: str
    loc: int
    tokens: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.start_line > self.end_line:
            raise ValueError(
                f"fragment {self.id}: start_line {self.start_line} > end_line {self.end_line}"
            )
        if self.loc > self.end_line - self.start_line + 1:
            raise ValueError(
                f"fragment {self.id}: loc {self.loc} exceeds line span "
                f"{self.end_line - self.start_line + 1}"
            )
        if not self.text:
            raise ValueError(f"fragment {self.id}: empty text")


class _Tok(NamedTuple):
    kind: str  # ident | num | str | char | op
    value: str
    line: int  # 1-based


def strip_comments(text: str, language: str = "c") -> str:
    """Remove // and /* */ comments, preserving literals and line structure."""
    out: list[str] = []
    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if c == "/" and i + 1 < n and text[i + 1] == "/":
            i += 2
            while i < n and text[i] != "\n":
                i += 1
        elif c == "/" and i + 1 < n and text[i + 1] == "*":
            end = text.find("*/", i + 2)
            if end == -1:
                logger.warning("unterminated block comment; stripping to end of text")
                out.extend(ch for ch in text[i + 2 :] if ch == "\n")
                break
            out.extend(ch for ch in text[i + 2 : end] if ch == "\n")
            i = end + 2
        elif c == '"' or c == "'":
            j = _scan_literal(text, i)
            out.append(text[i:j])
            i = j
        else:
            out.append(c)
            i += 1
    return "".join(out)


def _scan_literal(text: str, start: int) -> int:
    """Return the index just past a string/char literal starting at ``start``."""
    quote = text[start]
    i = start + 1
    n = len(text)
    while i < n:
        c = text[i]
        if c == "\\" and i + 1 < n:
            i += 2
            continue
        if c == quote:
            return i + 1
        if c == "\n":  # unterminated on this line; don't swallow the file
            return i
        i += 1
    return n


def count_loc(text: str, language: str = "c") -> int:
    """Count lines with at least one non-whitespace, non-comment character."""
    stripped = strip_comments(text, language)
    return sum(1 for line in stripped.splitlines() if line.strip())


def _scan_tokens(text: str) -> Iterator[_Tok]:
    """Lex C-like source into tokens, skipping whitespace and comments."""
    i = 0
    n = len(text)
    line = 1
    while i < n:
        c = text[i]
        if c == "\n":
            line += 1
            i += 1
        elif c in " \t\r\f\v":
            i += 1
        elif c == "/" and i + 1 < n and text[i + 1] == "/":
            while i < n and text[i] != "\n":
                i += 1
        elif c == "/" and i + 1 < n and text[i + 1] == "*":
            end = text.find("*/", i + 2)
            if end == -1:
                line += text.count("\n", i + 2)
                i = n
            else:
                line += text.count("\n", i + 2, end)
                i = end + 2
        elif c == '"' or c == "'":
            j = _scan_literal(text, i)
            yield _Tok("str" if c == '"' else "char", text[i:j], line)
            i = j
        elif c in _IDENT_START:
            j = i + 1
            while j < n and text[j] in _IDENT_CONT:
                j += 1
            yield _Tok("ident", text[i:j], line)
            i = j
        elif c in _DIGITS or (c == "." and i + 1 < n and text[i + 1] in _DIGITS):
            j = i + 1
            while j < n:
                ch = text[j]
                if ch in _IDENT_CONT or ch == "." or ch == "'":
                    if ch in "eEpP" and j + 1 < n and text[j + 1] in "+-":
                        j += 2
                    else:
                        j += 1
                else:
                    break
            yield _Tok("num", text[i:j], line)
            i = j
        else:
            op = None
            for group in (_OPERATORS_4, _OPERATORS_3, _OPERATORS_2):
                for cand in group:
                    if text.startswith(cand, i):
                        op = cand
                        break
                if op:
                    break
            if op is None:
                op = c
            yield _Tok("op", op, line)
            i += len(op)


def tokenize(text: str, mode: str = "raw") -> list[str]:
    """Lex method text into tokens.

    ``raw`` keeps identifiers and literals verbatim; ``normalized``
    additionally maps non-keyword identifiers to ``ID``, numeric literals
    to ``NUM``, and string/char literals to ``STR``, so that rename-only
    variants of a method produce equal token sequences.
    """
    if mode not in TOKENIZER_MODES:
        raise ConfigError(f"unsupported tokenizer mode {mode!r}")
    out: list[str] = []
    for tok in _scan_tokens(text):
        if mode == "normalized":
            if tok.kind == "ident" and tok.value not in KEYWORDS:
                out.append("ID")
            elif tok.kind == "num":
                out.append("NUM")
            elif tok.kind in ("str", "char"):
                out.append("STR")
            else:
                out.append(tok.value)
        else:
            out.append(tok.value)
    return out


class _Method(NamedTuple):
    start_line: int
    end_line: int
    name: str


def _preprocessor_lines(text: str) -> set[int]:
    """1-based line numbers belonging to preprocessor directives."""
    pp: set[int] = set()
    continued = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.lstrip()
        if continued or stripped.startswith("#"):
            pp.add(lineno)
            continued = raw.rstrip().endswith("\\")
        else:
            continued = False
    return pp


# Punctuation allowed between the parameter list's ")" and the body "{":
# qualifiers, throws lists, constructor initializers, attributes, trailing
# return types.
_QUALIFIER_PUNCT = frozenset(
    [",", ".", "::", ":", "&", "&&", "*", "(", ")", "[", "]", "<", ">", "->"]
)
_MAX_QUALIFIER_TOKENS = 96


def find_methods(text: str) -> list[_Method]:
    """Locate method definitions with a signature + brace-balance heuristic."""
    toks = list(_scan_tokens(text))
    pp_lines = _preprocessor_lines(text)
    methods: list[_Method] = []
    i = 0
    n = len(toks)
    while i < n:
        tok = toks[i]
        if tok.kind != "op" or tok.value != "(":
            i += 1
            continue
        name_idx = i - 1
        if name_idx < 0:
            i += 1
            continue
        name_tok = toks[name_idx]
        if (
            name_tok.kind != "ident"
            or name_tok.value in KEYWORDS
            or name_tok.line in pp_lines
        ):
            i += 1
            continue
        prev = toks[name_idx - 1] if name_idx > 0 else None
        if prev is not None and prev.kind == "op" and prev.value in ("=", ".", "->"):
            i += 1
            continue
        if prev is not None and prev.kind == "ident" and prev.value in _CONTROL_KEYWORDS:
            i += 1
            continue

        close = _match_paren(toks, i)
        if close is None:
            i += 1
            continue
        body_open = _scan_qualifiers(toks, close + 1)
        if body_open is None or toks[body_open].line in pp_lines:
            i += 1
            continue
        body_close = _match_brace(toks, body_open)
        if body_close is None:
            logger.warning(
                "unbalanced braces after line %d; candidate %r skipped",
                toks[body_open].line,
                name_tok.value,
            )
            i += 1
            continue

        start_idx = _signature_start(toks, name_idx, pp_lines)
        name = name_tok.value
        if prev is not None and prev.kind == "op" and prev.value == "~":
            name = "~" + name
        methods.append(
            _Method(toks[start_idx].line, toks[body_close].line, name)
        )
        i = body_close + 1
    return methods


def _match_paren(toks: list[_Tok], open_idx: int) -> int | None:
    depth = 0
    for j in range(open_idx, len(toks)):
        v = toks[j].value
        if toks[j].kind != "op":
            continue
        if v == "(":
            depth += 1
        elif v == ")":
            depth -= 1
            if depth == 0:
                return j
        elif v in ("{", "}", ";") and depth > 0:
            return None  # statement punctuation inside an argument list
    return None


# Idents that may legitimately be followed by "(" between ")" and "{".
_PAREN_QUALIFIERS = frozenset(["noexcept", "throw", "requires", "alignas", "__attribute__"])


def _scan_qualifiers(toks: list[_Tok], start: int) -> int | None:
    """Scan from just past ")" to the body "{"; None if this is no definition."""
    depth = 0
    saw_colon = False
    for j in range(start, min(start + _MAX_QUALIFIER_TOKENS, len(toks))):
        tok = toks[j]
        if tok.kind == "op":
            if tok.value == "{" and depth == 0:
                return j
            if tok.value == "(":
                # parens here belong to constructor initializers or to the
                # few qualifiers that take arguments; anything else (such as
                # a second parameter list) means the ")" we came from was not
                # the end of a definition's parameter list
                prev = toks[j - 1]
                if depth == 0 and not saw_colon and not (
                    prev.kind == "ident" and prev.value in _PAREN_QUALIFIERS
                ):
                    return None
                depth += 1
            elif tok.value == ")":
                depth -= 1
                if depth < 0:
                    return None
            elif tok.value == ":":
                saw_colon = True
            elif tok.value not in _QUALIFIER_PUNCT:
                return None
        elif tok.kind not in ("ident", "num", "str"):
            return None
    return None


def _match_brace(toks: list[_Tok], open_idx: int) -> int | None:
    depth = 0
    for j in range(open_idx, len(toks)):
        if toks[j].kind != "op":
            continue
        if toks[j].value == "{":
            depth += 1
        elif toks[j].value == "}":
            depth -= 1
            if depth == 0:
                return j
    return None


def _signature_start(toks: list[_Tok], name_idx: int, pp_lines: set[int]) -> int:
    """Walk back from the method name to the start of its declaration."""
    j = name_idx
    while j > 0:
        prev = toks[j - 1]
        if prev.kind == "op" and prev.value in (";", "}", "{"):
            break
        if prev.line in pp_lines:
            break
        # class access specifiers sit directly before methods
        if prev.kind == "op" and prev.value == ":" and j >= 2 and toks[j - 2].value in (
            "public",
            "private",
            "protected",
        ):
            break
        j -= 1
    return j


def _build_fragment(
    frag_id: int,
    file: str,
    start_line: int,
    end_line: int,
    name: str,
    text: str,
    cfg: ExtractionConfig,
) -> CodeFragment:
    loc = count_loc(text)
    return CodeFragment(
        id=frag_id,
        file=file,
        start_line=start_line,
        end_line=end_line,
        name=name,
        text=text,
        loc=loc,
        tokens=tokenize(text, cfg.tokenizer_mode),
    )


def _extract_file(path: Path, rel: str, cfg: ExtractionConfig) -> list[dict]:
    """Parse one file into fragment prototypes (no ids assigned yet)."""
    try:
        raw = path.read_bytes().decode("utf-8", errors="replace")
    except OSError as exc:
        logger.warning("skipping unreadable file %s: %s", path, exc)
        return []
    source = strip_comments(raw) if cfg.strip_comments else raw
    lines = source.splitlines()
    protos = []
    for m in find_methods(raw):
        body = "\n".join(lines[m.start_line - 1 : m.end_line])
        if not body.strip():
            continue
        protos.append(
            {
                "file": rel,
                "start_line": m.start_line,
                "end_line": m.end_line,
                "name": m.name,
                "text": body,
            }
        )
    return protos


def extract_fragments(
    root: str | Path, cfg: ExtractionConfig, workers: int = 1
) -> list[CodeFragment]:
    """Extract method-level fragments from a source tree (or manifest file).

    Fragments are ordered by (path, start_line) and carry dense ids; only
    those with ``loc >= cfg.min_loc`` are returned.
    """
    root = Path(root)
    if cfg.language == "manifest":
        return load_manifest(root, cfg)
    if not root.exists():
        raise ConfigError(f"source root does not exist: {root}")
    exts = _SOURCE_EXTENSIONS[cfg.language]
    files = sorted(
        (p for p in root.rglob("*") if p.is_file() and p.suffix.lower() in exts),
        key=lambda p: p.relative_to(root).as_posix(),
    )
    jobs = [(p, p.relative_to(root).as_posix()) for p in files]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda j: _extract_file(j[0], j[1], cfg), jobs))
    else:
        results = [_extract_file(p, rel, cfg) for p, rel in jobs]

    protos = [proto for file_protos in results for proto in file_protos]
    protos.sort(key=lambda d: (d["file"], d["start_line"]))

    fragments: list[CodeFragment] = []
    for proto in protos:
        frag = _build_fragment(len(fragments), cfg=cfg, **proto)
        if frag.loc >= cfg.min_loc:
            fragments.append(frag)
    return fragments


_MANIFEST_REQUIRED = ("file", "start_line", "end_line", "text")


def load_manifest(path: str | Path, cfg: ExtractionConfig) -> list[CodeFragment]:
    """Load pre-extracted fragments from a JSON-lines manifest."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"manifest does not exist: {path}")
    fragments: list[CodeFragment] = []
    seen: set[tuple[str, int]] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                record = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"invalid JSON: {exc.msg}", line=lineno) from exc
            if not isinstance(record, dict):
                raise ManifestError("record is not an object", line=lineno)
            for key in _MANIFEST_REQUIRED:
                if key not in record:
                    raise ManifestError(f"missing required field {key!r}", line=lineno)
            file = record["file"]
            start_line = record["start_line"]
            end_line = record["end_line"]
            text = record["text"]
            name = record.get("name") or ""
            if not isinstance(file, str) or not file:
                raise ManifestError("field 'file' must be a non-empty string", line=lineno)
            if not isinstance(start_line, int) or not isinstance(end_line, int):
                raise ManifestError("line numbers must be integers", line=lineno)
            if start_line < 1 or end_line < start_line:
                raise ManifestError(
                    f"bad line range {start_line}..{end_line}", line=lineno
                )
            if not isinstance(text, str) or not text:
                raise ManifestError("field 'text' must be a non-empty string", line=lineno)
            key = (file, start_line)
            if key in seen:
                raise ManifestError(
                    f"duplicate fragment at {file}:{start_line}", line=lineno
                )
            seen.add(key)
            body = strip_comments(text) if cfg.strip_comments else text
            if not body.strip():
                logger.warning("%s:%d: fragment is all comments; skipped", file, start_line)
                continue
            frag = _build_fragment(
                len(fragments), file, start_line, end_line, name, body, cfg
            )
            if frag.loc >= cfg.min_loc:
                fragments.append(frag)
    return fragments


def dump_fragments(fragments: list[CodeFragment], path: str | Path) -> None:
    """Write fragments as a manifest superset (adds id and loc) for caching."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for frag in fragments:
            fh.write(
                json.dumps(
                    {
                        "file": frag.file,
                        "start_line": frag.start_line,
                        "end_line": frag.end_line,
                        "name": frag.name or None,
                        "text": frag.text,
                        "id": frag.id,
                        "loc": frag.loc,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
